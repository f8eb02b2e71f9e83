"""Function disassembly and CFG construction.

Linear sweep per function, block splitting at branch targets, auxiliary
entries for landing pads and setjmp successors, and the nine-type block
classification used for probe selection.
"""
from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field

from ..elf.funcdefs import FunctionDefinition
from ..elf.image import ElfModuleView
from ..errors import UndecodableByte
from ..x86.decode import Instruction, decode, is_padding_byte_run

log = logging.getLogger(__name__)

EN = "EN"
EX = "EX"

DETOUR_SIZE = 5

# probe types in ascending expected relocation overhead; selection prefers
# the lowest rank present in a superblock
PROBE_ORDER = ["return", "long-jump", "long-call", "jump-tab", "short-call",
               "short-jump", "internal", "long-cond", "short-cond", "guest"]
PROBE_RANK = {t: i for i, t in enumerate(PROBE_ORDER)}

# terminators after which a gap before the next block can only be padding
_NO_FALLTHROUGH = {"ret", "jmp-direct", "jmp-indirect", "trap", "noreturn-call"}


@dataclass
class BasicBlock:
    addr: int
    insts: list[Instruction]
    padding: int = 0
    terminator_kind: str = "fallthrough"
    probe_type: str = ""
    aux_entry: bool = False

    @property
    def byte_size(self) -> int:
        if not self.insts:
            return 0
        return self.insts[-1].end() - self.addr

    @property
    def end(self) -> int:
        return self.addr + self.byte_size

    @property
    def terminator(self) -> Instruction | None:
        return self.insts[-1] if self.insts else None

    def __repr__(self) -> str:
        return f"<bb {self.addr:#x}+{self.byte_size} {self.terminator_kind}>"


class ControlFlowGraph:
    """Blocks plus virtual EN/EX nodes. Node ids are block addresses or EN/EX."""

    def __init__(self, function: FunctionDefinition):
        self.function = function
        self.blocks: dict[int, BasicBlock] = {}
        self.succs: dict[object, list] = {EN: [], EX: []}
        self.preds: dict[object, list] = {EN: [], EX: []}
        self.table_entry_blocks: set[int] = set()   # blocks entered only via patchable tables

    def add_block(self, bb: BasicBlock) -> None:
        self.blocks[bb.addr] = bb
        self.succs.setdefault(bb.addr, [])
        self.preds.setdefault(bb.addr, [])

    def add_edge(self, a, b) -> None:
        if b not in self.succs.get(a, []):
            self.succs[a].append(b)
            self.preds[b].append(a)

    def remove_node(self, n) -> None:
        for s in self.succs.pop(n, []):
            self.preds[s].remove(n)
        for p in self.preds.pop(n, []):
            self.succs[p].remove(n)
        self.blocks.pop(n, None)

    @property
    def nodes(self) -> list:
        return [EN, EX] + sorted(self.blocks)

    def sorted_blocks(self) -> list[BasicBlock]:
        return [self.blocks[a] for a in sorted(self.blocks)]

    def block_at(self, addr: int) -> BasicBlock | None:
        return self.blocks.get(addr)

    def block_containing(self, addr: int) -> BasicBlock | None:
        starts = sorted(self.blocks)
        i = bisect.bisect_right(starts, addr) - 1
        if i < 0:
            return None
        bb = self.blocks[starts[i]]
        return bb if bb.addr <= addr < bb.end else None


def decode_function(view: ElfModuleView, f: FunctionDefinition) -> list[Instruction]:
    """Linear sweep of [start, start+size); trailing nop/int3 bytes become
    function padding rather than instructions."""
    seg = view.segment_for_vaddr(f.start)
    if seg is None or not seg.executable:
        raise UndecodableByte(f.start, "function not inside an executable segment")
    data = view.read_vaddr(f.start, f.size)
    insts = []
    pos = 0
    while pos < f.size:
        inst = decode(data[pos : pos + 15], f.start + pos)
        insts.append(inst)
        pos += inst.size
    # peel trailing padding back off the instruction list; safe only after an
    # instruction that cannot fall through into it
    last_real = None
    for i in range(len(insts) - 1, -1, -1):
        if insts[i].op not in ("nop", "int3"):
            last_real = i
            break
    if last_real is not None and last_real + 1 < len(insts):
        prev = insts[last_real]
        if prev.kind in ("ret", "jmp-direct", "jmp-indirect",
                         "call-direct", "call-indirect") or prev.is_trap:
            del insts[last_real + 1:]
    return insts


def _collect_leaders(insts: list[Instruction], f: FunctionDefinition,
                     tables, aux_entries: set[int]) -> set[int]:
    leaders = {f.start} | set(aux_entries)
    table_targets: set[int] = set()
    for t in tables:
        table_targets |= {a for a in t.targets if f.contains(a)}
    leaders |= table_targets
    for inst in insts:
        if inst.kind in ("jmp-direct", "cond-jmp") and inst.branch_target is not None:
            if f.contains(inst.branch_target):
                leaders.add(inst.branch_target)
        if inst.kind in ("cond-jmp", "call-direct", "call-indirect",
                         "jmp-direct", "jmp-indirect", "ret") or inst.is_trap:
            if f.contains(inst.end()):
                leaders.add(inst.end())
    return leaders


def build_cfg(insts: list[Instruction], f: FunctionDefinition, tables,
              callgraph=None) -> ControlFlowGraph:
    """Split blocks and wire edges.

    ``tables`` are the recovered jump tables for this function.
    ``callgraph`` (optional) supplies non-return call knowledge and
    setjmp-site detection through resolve_call_name().
    """
    cfg = ControlFlowGraph(f)
    if not insts:
        return cfg
    tables_by_jmp = {t.jmp_addr: t for t in tables}

    aux = set(f.aux_entries)
    # setjmp successors are auxiliary entries
    if callgraph is not None:
        for inst in insts:
            if inst.kind in ("call-direct", "call-indirect"):
                name = callgraph.resolve_call_name(inst)
                if name in callgraph.setjmp_names and f.contains(inst.end()):
                    aux.add(inst.end())
    f.aux_entries = aux

    leaders = _collect_leaders(insts, f, tables, aux)

    # partition instructions into blocks
    blocks: list[BasicBlock] = []
    cur: BasicBlock | None = None
    for inst in insts:
        if cur is None or inst.addr in leaders:
            if cur is not None:
                blocks.append(cur)
            cur = BasicBlock(addr=inst.addr, insts=[], aux_entry=inst.addr in aux)
        cur.insts.append(inst)
        term = _terminator_kind(inst, callgraph)
        if term is not None:
            blocks.append(cur)
            cur = None
    if cur is not None:
        blocks.append(cur)

    # fold pure-padding blocks after no-fallthrough terminators into padding
    kept: list[BasicBlock] = []
    for bb in blocks:
        bb.terminator_kind = _block_terminator(bb, callgraph)
        body = b"".join(i.bytes for i in bb.insts)
        if (kept and kept[-1].terminator_kind in _NO_FALLTHROUGH
                and bb.addr not in leaders and is_padding_byte_run(body)):
            kept[-1].padding += len(body)
            continue
        kept.append(bb)

    for bb in kept:
        cfg.add_block(bb)

    # function-tail padding peeled by decode_function belongs to the last block
    addrs = sorted(cfg.blocks)
    if addrs:
        last = cfg.blocks[addrs[-1]]
        tail = f.end - last.end - last.padding
        if tail > 0 and last.terminator_kind in _NO_FALLTHROUGH:
            last.padding += tail

    # edges
    cfg.add_edge(EN, f.start)
    for a in sorted(aux):
        if a in cfg.blocks:
            cfg.add_edge(EN, a)
    addr_list = sorted(cfg.blocks)
    next_block = {addr_list[i]: addr_list[i + 1] for i in range(len(addr_list) - 1)}
    for a in addr_list:
        bb = cfg.blocks[a]
        term = bb.terminator
        kind = bb.terminator_kind
        if kind == "ret" or kind == "trap":
            cfg.add_edge(a, EX)
            f.exits.add(term.addr)
        elif kind == "jmp-direct":
            tgt = term.branch_target
            if tgt is not None and f.contains(tgt) and tgt in cfg.blocks:
                cfg.add_edge(a, tgt)
            else:
                cfg.add_edge(a, EX)        # tail call
                f.exits.add(term.addr)
        elif kind == "jmp-indirect":
            table = tables_by_jmp.get(term.addr)
            if table is not None and table.targets:
                for tgt in sorted(table.targets):
                    if tgt in cfg.blocks:
                        cfg.add_edge(a, tgt)
            else:
                cfg.add_edge(a, EX)        # assumed tail call
                f.exits.add(term.addr)
        elif kind == "cond-jmp":
            tgt = term.branch_target
            if tgt is not None and f.contains(tgt) and tgt in cfg.blocks:
                cfg.add_edge(a, tgt)
            else:
                cfg.add_edge(a, EX)
                f.exits.add(term.addr)
            ft = next_block.get(a)
            if ft is not None and ft == bb.end:
                cfg.add_edge(a, ft)
        elif kind == "noreturn-call":
            cfg.add_edge(a, EX)
            f.exits.add(term.addr)
        elif kind in ("call-direct", "call-indirect"):
            ft = next_block.get(a)
            if ft == bb.end:
                cfg.add_edge(a, ft)
            else:
                cfg.add_edge(a, EX)        # call at function end; treat as exit
                f.exits.add(term.addr)
        else:  # fallthrough
            ft = next_block.get(a)
            if ft is not None and ft == bb.end:
                cfg.add_edge(a, ft)

    # drop blocks unreachable from EN
    from ..graphs import reachable

    live = reachable(cfg.succs, EN)
    for a in list(cfg.blocks):
        if a not in live:
            log.debug("%s: removing unreachable block %#x", f.name, a)
            cfg.remove_node(a)

    _mark_table_entry_blocks(cfg, tables)
    for bb in cfg.blocks.values():
        bb.probe_type = classify_block(bb, tables, cfg.table_entry_blocks)
    return cfg


def _terminator_kind(inst: Instruction, callgraph) -> str | None:
    """The block-ending class of an instruction, or None if it doesn't end one."""
    if inst.kind == "ret":
        return "ret"
    if inst.is_trap:
        return "trap"
    if inst.kind in ("jmp-direct", "jmp-indirect", "cond-jmp"):
        return inst.kind
    if inst.kind in ("call-direct", "call-indirect"):
        if callgraph is not None and callgraph.call_is_noreturn(inst):
            return "noreturn-call"
        return inst.kind
    return None


def _block_terminator(bb: BasicBlock, callgraph) -> str:
    term = bb.terminator
    if term is None:
        return "fallthrough"
    kind = _terminator_kind(term, callgraph)
    return kind if kind is not None else "fallthrough"


def _mark_table_entry_blocks(cfg: ControlFlowGraph, tables) -> None:
    """Blocks probeable through jump-table data: every predecessor edge must
    come from a patchable table dispatch (otherwise a detour-free probe would
    miss the other paths)."""
    patchable_targets: set[int] = set()
    dispatch_blocks: dict[int, set[int]] = {}
    for t in tables:
        if not t.patchable:
            continue
        for tgt in t.targets:
            patchable_targets.add(tgt)
            bb = cfg.block_containing(t.jmp_addr)
            if bb is not None:
                dispatch_blocks.setdefault(tgt, set()).add(bb.addr)
    for addr in patchable_targets:
        if addr not in cfg.blocks:
            continue
        preds = set(cfg.preds.get(addr, ()))
        if preds and preds <= dispatch_blocks.get(addr, set()):
            cfg.table_entry_blocks.add(addr)


def classify_block(bb: BasicBlock, tables, table_entry_blocks=None) -> str:
    """Table-3 probe typing. ``table_entry_blocks`` carries the soundness
    refinement: a block counts as jump-tab only when it is entered exclusively
    through patchable table dispatch."""
    s = bb.byte_size
    p = bb.padding
    if s + p < DETOUR_SIZE:
        return "guest"
    if table_entry_blocks is not None:
        is_table = bb.addr in table_entry_blocks
    else:
        is_table = any(t.patchable and bb.addr in t.targets for t in tables)
    if is_table:
        return "jump-tab"
    term = bb.terminator
    kind = bb.terminator_kind
    if kind == "ret":
        return "return"
    if kind in ("jmp-direct", "jmp-indirect"):
        return "long-jump" if term.size >= DETOUR_SIZE else "short-jump"
    if kind in ("call-direct", "call-indirect", "noreturn-call"):
        return "long-call" if term.size >= DETOUR_SIZE else "short-call"
    if kind == "cond-jmp":
        return "long-cond" if term.size >= DETOUR_SIZE else "short-cond"
    return "internal"
