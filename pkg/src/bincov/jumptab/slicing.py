"""Backward slicing for indirect-jmp dispatch analysis.

Walks from the indirect jmp up the immediate-dominator chain collecting the
instructions its target depends on. Spill slots are matched syntactically;
dependencies that cannot be modeled are frozen into slice inputs. A slice is
viable when exactly one input variable (the index) remains.

Two modes: "full" links through single-base memory loads hoping to find the
matching store (spill/reload pattern); "freeze" stops at such loads and makes
the loaded register the input. full is tried first, freeze on retry.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from ..cfg.build import EN, ControlFlowGraph
from ..errors import SliceAbort
from ..graphs import semi_nca_idom
from ..x86.decode import Instruction, Mem, Reg
from .microexec import SUPPORTED_OPS

log = logging.getLogger(__name__)

MAX_SLICE_INSTS = 128
MAX_WALK_INSTS = 4096

RSP = 4
RBP = 5
ENV_REGS = {RSP}
VOLATILE_REGS = {0, 1, 2, 6, 7, 8, 9, 10, 11}   # caller-saved: rax,rcx,rdx,rsi,rdi,r8-r11

BOUND_CONDS = {2: "b", 3: "ae", 6: "be", 7: "a"}


@dataclass
class SliceInput:
    kind: str                  # "reg" | "mem"
    reg: int | None = None
    slot: tuple | None = None  # (base, index, scale, disp)
    width: int = 8             # bytes
    signed: bool = False

    def __repr__(self):
        if self.kind == "reg":
            from ..x86.decode import REG_NAMES
            return f"<input {REG_NAMES[self.reg]}:{self.width}>"
        return f"<input mem{self.slot}:{self.width}>"


@dataclass
class Slice:
    insts: list[Instruction]                 # forward program order, jmp last
    jmp: Instruction
    index: SliceInput
    cond_candidates: list[tuple[Instruction, Instruction]] = field(default_factory=list)
    touched_regs: set[int] = field(default_factory=set)
    touched_slots: set[tuple] = field(default_factory=set)
    _seq: dict[int, int] = field(default_factory=dict)   # inst id -> walk seq

    @property
    def addrs(self) -> set[int]:
        return {i.addr for i in self.insts}

    def insert_ordered(self, inst: Instruction, seq: int) -> None:
        if inst in self.insts:
            return
        self._seq[id(inst)] = seq
        self.insts.append(inst)
        # walk seq counts backwards from the jmp: larger seq = earlier in program
        self.insts.sort(key=lambda i: -self._seq[id(i)])


def _slot_key(mem: Mem) -> tuple:
    return (mem.base, mem.index, mem.scale, mem.disp)


def _reg_uses(inst: Instruction) -> list[Reg]:
    uses = []
    for o in inst.srcs:
        if isinstance(o, Reg):
            uses.append(o)
        elif isinstance(o, Mem):
            for r in o.regs():
                uses.append(Reg(r, 8))
    if isinstance(inst.dst, Mem):
        for r in inst.dst.regs():
            uses.append(Reg(r, 8))
    # read-modify-write ops read their destination too
    if isinstance(inst.dst, Reg) and inst.op in (
            "add", "sub", "and", "or", "xor", "adc", "sbb", "shl", "shr",
            "sar", "rol", "ror", "inc", "dec", "neg", "not", "imul", "bswap"):
        uses.append(inst.dst)
    return uses


def _reg_defs(inst: Instruction) -> set[int]:
    defs = set()
    if isinstance(inst.dst, Reg):
        defs.add(inst.dst.idx)
    if inst.op == "xchg":
        for o in inst.srcs:
            if isinstance(o, Reg):
                defs.add(o.idx)
    elif inst.op == "cwde":
        defs.add(0)
    elif inst.op == "cdq":
        defs.add(2)
    elif inst.op in ("mul", "imul") and len(inst.srcs) == 3:
        defs.update({0, 2})
    elif inst.op == "leave":
        defs.update({4, 5})
    return defs


def _is_self_zero(inst: Instruction) -> bool:
    return (inst.op == "xor" and isinstance(inst.dst, Reg)
            and len(inst.srcs) == 2 and isinstance(inst.srcs[1], Reg)
            and inst.srcs[1].idx == inst.dst.idx)


def _mem_src(inst: Instruction) -> Mem | None:
    for o in inst.srcs:
        if isinstance(o, Mem):
            return o
    return None


def _establishes_const_base(inst: Instruction) -> bool:
    mem = _mem_src(inst)
    if inst.op == "lea" and mem is not None and mem.rip:
        return True
    if mem is not None and (mem.rip or (mem.base is None and abs(mem.disp) >= 0x1000)):
        return True
    if inst.op == "mov" and inst.srcs and isinstance(inst.srcs[0], int) \
            and inst.srcs[0] >= 0x1000:
        return True
    return False


def _walk_blocks(cfg: ControlFlowGraph, jmp_addr: int):
    """Blocks from the jmp's block up the immediate-dominator chain."""
    idom = semi_nca_idom(cfg.succs, EN)
    bb = cfg.block_containing(jmp_addr)
    if bb is None:
        raise SliceAbort(f"{jmp_addr:#x} is not inside a block")
    node = bb.addr
    chain = []
    seen = set()
    while node != EN and node not in seen:
        seen.add(node)
        chain.append(cfg.blocks[node])
        node = idom.get(node, EN)
    return chain


def backward_slice(cfg: ControlFlowGraph, jmp_addr: int) -> Slice:
    """Slice the indirect jmp at jmp_addr; raises SliceAbort when no viable
    single-variable slice exists."""
    first_err = None
    for mode in ("full", "freeze"):
        try:
            return _slice_once(cfg, jmp_addr, mode)
        except SliceAbort as exc:
            if first_err is None:
                first_err = exc
    raise first_err


class _Walk:
    def __init__(self, mode: str):
        self.mode = mode
        self.live_regs: dict[int, tuple[int, bool]] = {}   # idx -> (width, signed)
        self.live_slots: dict[tuple, int] = {}
        self.frozen: list[SliceInput] = []
        self.included: list[tuple[int, Instruction]] = []  # (seq, inst)
        self.candidates: list[tuple[int, Instruction, Instruction]] = []
        self.pending_jccs: list[tuple[int, Instruction]] = []
        self.touched_regs: set[int] = set()
        self.touched_slots: set[tuple] = set()
        self.has_const_base = False

    def need_reg(self, r: Reg) -> None:
        if r.idx in ENV_REGS:
            return
        if r.idx not in self.live_regs:
            self.live_regs[r.idx] = (r.size, False)
        self.touched_regs.add(r.idx)

    def freeze_reg(self, idx: int, width: int | None = None, signed: bool = False) -> None:
        w, s = self.live_regs.pop(idx)
        self.frozen.append(SliceInput("reg", reg=idx,
                                      width=width if width is not None else w,
                                      signed=signed or s))

    def freeze_slot(self, key: tuple) -> None:
        width = self.live_slots.pop(key)
        self.frozen.append(SliceInput("mem", slot=key, width=width))

    def freeze_slots_using(self, idx: int) -> None:
        for key in [k for k in self.live_slots if idx in (k[0], k[1])]:
            self.freeze_slot(key)

    def include(self, seq: int, inst: Instruction) -> None:
        self.included.append((seq, inst))
        if len(self.included) > MAX_SLICE_INSTS:
            raise SliceAbort("slice instruction cap exceeded")
        self.has_const_base |= _establishes_const_base(inst)


def _slice_once(cfg: ControlFlowGraph, jmp_addr: int, mode: str) -> Slice:
    chain = _walk_blocks(cfg, jmp_addr)
    jmp_block = chain[0]
    jmp = jmp_block.terminator
    if jmp is None or jmp.kind != "jmp-indirect":
        raise SliceAbort(f"{jmp_addr:#x} is not an indirect jmp")

    w = _Walk(mode)
    target_op = jmp.srcs[0] if jmp.srcs else None
    if isinstance(target_op, Reg):
        w.need_reg(Reg(target_op.idx, 8))
    elif isinstance(target_op, Mem):
        for r in target_op.regs():
            w.need_reg(Reg(r, 8))
        if target_op.rip or (target_op.base is None and abs(target_op.disp) >= 0x1000):
            w.has_const_base = True
    else:
        raise SliceAbort("indirect jmp without a decodable operand")

    w.include(0, jmp)
    seq = 0
    scanned = 0
    for bi, block in enumerate(chain):
        insts = block.insts
        start = len(insts) - (2 if bi == 0 else 1)
        for ii in range(start, -1, -1):
            inst = insts[ii]
            seq += 1
            scanned += 1
            if scanned > MAX_WALK_INSTS:
                raise SliceAbort("walk budget exhausted")
            _visit(w, seq, inst)

    if not w.has_const_base:
        raise SliceAbort("no constant base address in slice")

    variables: list[SliceInput] = list(w.frozen)
    for idx, (width, signed) in w.live_regs.items():
        variables.append(SliceInput("reg", reg=idx, width=width, signed=signed))
    for key, width in w.live_slots.items():
        if key[0] in (RSP, RBP):
            continue   # environment-backed stack slot, not a free variable
        variables.append(SliceInput("mem", slot=key, width=width))

    if len(variables) != 1:
        raise SliceAbort(f"{len(variables)} input variables, need exactly 1")

    w.included.sort(key=lambda t: -t[0])
    slc = Slice(insts=[i for _, i in w.included], jmp=jmp, index=variables[0],
                cond_candidates=[(j, s) for _, _, j, s in w.candidates],
                touched_regs=w.touched_regs | {v.reg for v in variables if v.kind == "reg"},
                touched_slots=w.touched_slots)
    slc._seq = {id(i): s for s, i in w.included}
    slc._cand_seq = {id(j): (js, ss) for js, ss, j, _ in w.candidates}
    return slc


def _visit(w: _Walk, seq: int, inst: Instruction) -> None:
    if inst.op == "jcc":
        w.pending_jccs.append((seq, inst))
        return
    if inst.writes_flags and w.pending_jccs:
        for jseq, jcc in w.pending_jccs:
            w.candidates.append((jseq, seq, jcc, inst))
        w.pending_jccs.clear()

    defs = _reg_defs(inst)
    slot_def = _slot_key(inst.dst) if isinstance(inst.dst, Mem) else None

    # calls clobber volatile registers and any tracked stack slot
    if inst.op == "call":
        for idx in [i for i in list(w.live_regs) if i in VOLATILE_REGS]:
            w.freeze_reg(idx)
        for key in list(w.live_slots):
            w.freeze_slot(key)
        return

    # matching store for a pending spill slot
    if slot_def is not None and slot_def in w.live_slots:
        if inst.op not in SUPPORTED_OPS:
            w.freeze_slot(slot_def)
            return
        w.live_slots.pop(slot_def)
        w.touched_slots.add(slot_def)
        w.include(seq, inst)
        for u in _reg_uses(inst):
            w.need_reg(u)
        return

    live_def_regs = defs & set(w.live_regs)
    if not live_def_regs:
        for d in defs:
            if d not in ENV_REGS:
                w.freeze_slots_using(d)
        return

    if inst.op not in SUPPORTED_OPS:
        for idx in live_def_regs:
            w.freeze_reg(idx)
        for d in defs:
            w.freeze_slots_using(d)
        return

    if _is_self_zero(inst):
        w.include(seq, inst)
        for idx in live_def_regs:
            w.live_regs.pop(idx)
        return

    mem = _mem_src(inst)
    if mem is not None and not mem.rip and (mem.base is not None or mem.index is not None):
        spill_shape = mem.index is None and mem.scale == 1
        if w.mode == "freeze" and spill_shape:
            width = mem.size or inst.opsize
            signed = inst.op in ("movsx", "movsxd")
            for idx in live_def_regs:
                w.freeze_reg(idx, width=width, signed=signed)
            for d in defs:
                w.freeze_slots_using(d)
            return
        w.include(seq, inst)
        for idx in live_def_regs:
            w.live_regs.pop(idx)
        for d in defs:
            w.freeze_slots_using(d)
        for u in _reg_uses(inst):
            w.need_reg(u)
        if spill_shape:
            key = _slot_key(mem)
            w.live_slots.setdefault(key, mem.size or inst.opsize)
            w.touched_slots.add(key)
        return

    # plain register/immediate computation
    w.include(seq, inst)
    for idx in live_def_regs:
        w.live_regs.pop(idx)
    for d in defs:
        w.freeze_slots_using(d)
    for u in _reg_uses(inst):
        w.need_reg(u)


def find_bound_condition(slc: Slice, cfg: ControlFlowGraph):
    """Nearest dominating comparison-with-immediate on the index's dataflow.

    Returns (b, cond_addr, cond_code, setter) or None. Comparisons with zero
    are discarded; only unsigned range checks qualify. Dominance holds by
    construction: candidates were collected along the idom chain.
    """
    for jcc, setter in slc.cond_candidates:
        if jcc.cond not in BOUND_CONDS:
            continue
        if setter.op != "cmp":
            continue
        if not setter.srcs or not isinstance(setter.srcs[1], int):
            continue
        b = setter.srcs[1]
        if b <= 0:
            continue   # comparison-with-zero heuristic
        lhs = setter.srcs[0]
        if isinstance(lhs, Reg):
            if lhs.idx not in slc.touched_regs:
                continue
        elif isinstance(lhs, Mem):
            if _slot_key(lhs) not in slc.touched_slots:
                continue
        else:
            continue
        jseq, sseq = getattr(slc, "_cand_seq", {}).get(id(jcc), (0, 1))
        slc.insert_ordered(setter, sseq)
        slc.insert_ordered(jcc, jseq)
        return b, jcc.addr, jcc.cond, setter
    return None
