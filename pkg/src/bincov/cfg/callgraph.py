"""Module call graph and non-return analysis.

A defined function is non-return when no path from its entry can reach a
returning exit (ret, or a transfer to a target not known to be non-return)
once calls to known non-return functions stop falling through. Computed as a
fixed point seeded by well-known library names.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from ..elf.funcdefs import FunctionDefinition
from ..elf.image import ElfModuleView
from ..x86.decode import Instruction
from .build import EN, EX, ControlFlowGraph

log = logging.getLogger(__name__)

NONRETURN_SEEDS = frozenset({
    "abort", "exit", "_exit", "_Exit", "__stack_chk_fail", "__assert_fail",
    "longjmp", "siglongjmp", "__longjmp_chk", "__cxa_throw", "_Unwind_Resume",
    "pthread_exit", "__libc_start_main",
})

SETJMP_NAMES = frozenset({"setjmp", "_setjmp", "sigsetjmp", "__sigsetjmp"})


@dataclass
class CallGraph:
    view: ElfModuleView
    functions: dict[int, FunctionDefinition]
    nonreturn_names: set[str] = field(default_factory=set)
    nonreturn_starts: set[int] = field(default_factory=set)
    setjmp_names: frozenset = SETJMP_NAMES

    def __post_init__(self):
        if not self.nonreturn_names:
            self.nonreturn_names = set(NONRETURN_SEEDS)
        for start, f in self.functions.items():
            if f.name in self.nonreturn_names:
                self.nonreturn_starts.add(start)

    def resolve_call_name(self, inst: Instruction) -> str | None:
        """Symbol name a direct call refers to (defined function or PLT stub)."""
        if inst.kind != "call-direct" or inst.branch_target is None:
            return None
        tgt = inst.branch_target
        f = self.functions.get(tgt)
        if f is not None:
            return f.name
        return self.view.plt_symbol_map.get(tgt)

    def target_is_nonreturn(self, target: int) -> bool:
        if target in self.nonreturn_starts:
            return True
        name = self.view.plt_symbol_map.get(target)
        return name in self.nonreturn_names if name else False

    def call_is_noreturn(self, inst: Instruction) -> bool:
        if inst.kind != "call-direct" or inst.branch_target is None:
            return False
        return self.target_is_nonreturn(inst.branch_target)

    def mark_nonreturn(self, start: int) -> None:
        self.nonreturn_starts.add(start)
        f = self.functions.get(start)
        if f is not None and f.name:
            self.nonreturn_names.add(f.name)

    @property
    def nonreturn(self) -> set:
        return set(self.nonreturn_starts)


def build_callgraph(view: ElfModuleView, functions: list[FunctionDefinition]) -> CallGraph:
    return CallGraph(view=view, functions={f.start: f for f in functions})


def _function_can_return(cfg: ControlFlowGraph, cg: CallGraph) -> bool:
    """Reachability over the draft CFG with current non-return knowledge.

    Fallthrough edges of calls to (currently) non-return callees are cut on
    the fly; a function can return iff some returning exit stays reachable.
    """
    f = cfg.function
    work = [EN]
    seen = {EN}
    while work:
        n = work.pop()
        bb = cfg.blocks.get(n)
        succs = cfg.succs.get(n, ())
        if bb is not None:
            term = bb.terminator
            kind = bb.terminator_kind
            if kind == "ret":
                return True
            if kind in ("call-direct", "noreturn-call"):
                if term.branch_target is not None and cg.target_is_nonreturn(term.branch_target):
                    continue        # swallowed; no fallthrough
            elif kind == "jmp-direct" and term.branch_target is not None \
                    and not f.contains(term.branch_target):
                # tail call: returns unless the target is non-return
                if not cg.target_is_nonreturn(term.branch_target):
                    return True
                continue
            elif kind == "jmp-indirect" and EX in succs:
                return True         # unknown tail-call target may return
            elif kind == "cond-jmp" and term.branch_target is not None \
                    and not f.contains(term.branch_target):
                if not cg.target_is_nonreturn(term.branch_target):
                    return True
        for s in succs:
            if s is not EX and s not in seen:
                seen.add(s)
                work.append(s)
    return False


def analyze_nonreturn(cg: CallGraph, cfgs: dict[int, ControlFlowGraph]) -> set[int]:
    """Fixed-point propagation over all draft CFGs; returns non-return starts."""
    changed = True
    while changed:
        changed = False
        for start, cfg in cfgs.items():
            if start in cg.nonreturn_starts:
                continue
            if not cfg.blocks:
                continue
            if not _function_can_return(cfg, cg):
                cg.mark_nonreturn(start)
                log.debug("non-return: %s", cfg.function.name or hex(start))
                changed = True
    return set(cg.nonreturn_starts)
