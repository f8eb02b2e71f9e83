"""Jump table hypothesis testing and recovery via trial microexecution.

Control-bounded tables: 24 trials, 8 sampled inside [0,b] (always 0, b-1, b)
and 16 growing as b+2^k. Data-bounded tables: 24 trials of all-ones and
alternating bit patterns, then the effective index mask is inferred and
verified. Trial indices are masked to the index variable's width so they
stay meaningful for narrow (byte/word) dispatch operands.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from ..elf.image import ElfModuleView
from ..errors import CapExceeded, EmulationFault, SliceAbort
from ..x86.decode import Mem, Reg
from .microexec import MASK64, MicroExecEnv, SliceRunner, _sx
from .slicing import Slice, _slot_key, backward_slice, find_bound_condition

log = logging.getLogger(__name__)

TABLE_CAP = 4096
CONTROL_CONFORMANCE = 0.75   # "most inputs" threshold for in-bound trials

_ALT_A = 0x5555555555555555
_ALT_B = 0xAAAAAAAAAAAAAAAA


@dataclass
class TrialOutcome:
    index: int
    reached: bool
    target: int | None = None
    load: tuple | None = None       # (inst, ea, width) of last memory read
    fault: bool = False


@dataclass
class TrialReport:
    verdict: str                    # "control" | "data" | "abort"
    trials: list[TrialOutcome] = field(default_factory=list)
    bound: int = 0
    cond_addr: int | None = None
    cond_code: int | None = None
    reason: str = ""


@dataclass
class JumpTable:
    jmp_addr: int
    base: int
    entry_kind: str                 # offset32 | abs64 | offset8 | offset16 | unknown
    bound_kind: str                 # control | data
    bound: int
    entry_count: int
    targets: set[int]
    patchable: bool
    entries: list[tuple[int, int, int]] = field(default_factory=list)  # (entry_vaddr, raw, target)
    add_base: int | None = None     # base added to offset entries
    entry_size: int = 0

    def as_json_dict(self) -> dict:
        return {
            "jmp_addr": f"{self.jmp_addr:#x}",
            "base": f"{self.base:#x}",
            "kind": self.entry_kind,
            "bound_kind": self.bound_kind,
            "bound": self.bound,
            "entry_count": self.entry_count,
            "targets": sorted(f"{t:#x}" for t in self.targets),
            "patchable": self.patchable,
        }


class _TrialEngine:
    """Runs the slice for chosen index values, memoized per index."""

    def __init__(self, slc: Slice, env: MicroExecEnv, func):
        self.slc = slc
        self.env = env
        self.func = func
        self.order = slc.insts
        self.pos_of = {id(i): k for k, i in enumerate(self.order)}
        self.addr_pos = {i.addr: k for k, i in enumerate(self.order)}
        self.memo: dict[int, TrialOutcome] = {}
        idx = slc.index
        self.width_mask = (1 << (8 * idx.width)) - 1

    def clamp(self, value: int) -> int:
        return min(value, self.width_mask)

    def run(self, index_value: int) -> TrialOutcome:
        index_value &= MASK64
        hit = self.memo.get(index_value)
        if hit is not None:
            return hit
        out = self._run(index_value)
        self.memo[index_value] = out
        return out

    def _inject(self, runner: SliceRunner, value: int) -> None:
        idx = self.slc.index
        v = value & self.width_mask
        if idx.signed:
            v = _sx(v, idx.width) & MASK64
        if idx.kind == "reg":
            self.env.set_reg(Reg(idx.reg, 8), v)
        else:
            runner.slot_overrides[idx.slot] = (v, idx.width)

    def _run(self, index_value: int) -> TrialOutcome:
        env = self.env
        env.reset()
        runner = SliceRunner(env)
        self._inject(runner, index_value)
        pos = 0
        steps = 0
        try:
            while pos < len(self.order):
                inst = self.order[pos]
                steps += 1
                if steps > 512:
                    raise EmulationFault(inst.addr, "slice step budget exceeded")
                if inst is self.slc.jmp:
                    op = inst.srcs[0]
                    if isinstance(op, Reg):
                        target = env.get_reg(Reg(op.idx, 8))
                    else:
                        ea = env.effective_addr(op, inst)
                        runner.last_load = (inst, ea, 8)
                        target = env.mem_read(ea, 8)
                    return TrialOutcome(index_value, True, target, runner.last_load)
                if inst.op == "jcc":
                    if inst.cond < 0:
                        raise EmulationFault(inst.addr, "loop-family condition")
                    if env.cond(inst.cond):
                        t = inst.branch_target
                        npos = self.addr_pos.get(t)
                        if npos is not None and npos > pos:
                            pos = npos
                            continue
                        return TrialOutcome(index_value, False)   # left slice: default case
                    pos += 1
                    continue
                runner.exec_inst(inst)
                pos += 1
        except EmulationFault as exc:
            log.debug("trial fault idx=%#x: %s", index_value, exc)
            return TrialOutcome(index_value, False, fault=True)
        return TrialOutcome(index_value, False)

    def target_ok(self, t: TrialOutcome, valid_starts: set[int]) -> bool:
        return (t.target is not None and self.func.contains(t.target)
                and t.target in valid_starts)


def run_control_trials(engine: _TrialEngine, b: int, valid_starts: set[int]) -> TrialReport:
    rep = TrialReport(verdict="abort")
    wm = engine.width_mask
    if b > wm:
        rep.reason = "bound exceeds index width"
        return rep
    in_vals = [0, max(0, b - 1), b]
    for k in range(1, 6):
        in_vals.append((b * k) // 6)
    in_vals = sorted(set(min(v, wm) for v in in_vals))
    out_vals = [min(b + (1 << k), wm) for k in range(16)]

    conform = 0
    considered = 0
    for v in in_vals:
        t = engine.run(v)
        rep.trials.append(t)
        if t.reached and t.target is not None and not engine.func.contains(t.target):
            rep.reason = "in-bound trial left the function"
            return rep
        if v == b:
            continue   # behavior at exactly b is unconstrained
        considered += 1
        if t.reached and engine.target_ok(t, valid_starts):
            conform += 1
    out_reached = 0
    for v in out_vals:
        if v <= b:
            continue
        t = engine.run(v)
        rep.trials.append(t)
        if t.reached:
            out_reached += 1

    if considered and conform / considered >= CONTROL_CONFORMANCE and out_reached == 0:
        rep.verdict = "control"
        rep.bound = b
    else:
        rep.reason = (f"conformance {conform}/{considered}, "
                      f"{out_reached} out-of-bound trials reached the jmp")
    return rep


def run_data_trials(engine: _TrialEngine, valid_starts: set[int]) -> TrialReport:
    rep = TrialReport(verdict="abort")
    wm = engine.width_mask
    vals = [min((1 << k) - 1, wm) for k in range(1, 13)]
    for k in (2, 4, 6, 8, 10, 12):
        m = (1 << k) - 1
        vals.append(_ALT_A & m & wm)
        vals.append(_ALT_B & m & wm)

    for v in vals:
        t = engine.run(v)
        rep.trials.append(t)
        if not t.reached:
            rep.reason = f"trial {v:#x} did not reach the jmp"
            return rep
        if not engine.target_ok(t, valid_starts):
            rep.reason = f"trial {v:#x} target {t.target and hex(t.target)} invalid"
            return rep

    # infer the effective index mask: smallest M with target(v) == target(v & M)
    for k in range(1, 13):
        m = (1 << k) - 1
        if m > wm:
            break
        ok = True
        for v in vals:
            tv = engine.run(v)
            tm = engine.run(v & m)
            if not tm.reached or tv.target != tm.target:
                ok = False
                break
        if ok:
            rep.verdict = "data"
            rep.bound = min(m, wm)
            return rep
    if wm <= (1 << 12) - 1:
        # index width itself constrains the table (byte/word dispatch)
        rep.verdict = "data"
        rep.bound = wm
        return rep
    rep.reason = "jump target not constrained by any small mask"
    return rep


def recover_table(engine: _TrialEngine, report: TrialReport,
                  valid_starts: set[int]) -> JumpTable:
    slc = engine.slc
    if report.verdict == "control":
        b = report.bound
        entry_count = b + 1 if report.cond_code in (7, 6) else b   # ja/jbe vs jae/jb
    else:
        entry_count = report.bound + 1
    if entry_count <= 0:
        raise CapExceeded("empty table")

    probe_idx = [i for i in (0, 1, 2) if i < entry_count]
    loads = {}
    for i in probe_idx:
        t = engine.run(i)
        if not t.reached or t.load is None:
            raise CapExceeded("reference trials do not reach the table read")
        loads[i] = t

    _, ea0, width = loads[0].load
    base = ea0
    stride = (loads[1].load[1] - ea0) if 1 in loads else width
    kind = "unknown"
    add_base = None
    env = engine.env

    def raw_at(ea: int) -> int:
        return env.mem_read(ea, width)

    t0 = loads[0]
    raw0 = raw_at(ea0)
    if width == 8 and t0.target == raw0 & MASK64:
        kind = "abs64"
    elif width in (1, 2, 4):
        add_base = (t0.target - _sx(raw0, width)) & MASK64
        consistent = True
        for i, t in loads.items():
            _, ea, w = t.load
            if (add_base + _sx(raw_at(ea), w)) & MASK64 != t.target:
                consistent = False
                break
        if consistent:
            kind = {1: "offset8", 2: "offset16", 4: "offset32"}[width]
        else:
            add_base = None

    targets: set[int] = set()
    entries: list[tuple[int, int, int]] = []
    if entry_count <= TABLE_CAP:
        for i in range(entry_count):
            t = engine.run(i)
            if t.reached and t.target is not None and engine.target_ok(t, valid_starts):
                targets.add(t.target)
                if t.load is not None:
                    entries.append((t.load[1], raw_at(t.load[1]), t.target))
            elif report.verdict == "control":
                # behavior at the exact bound may be unconstrained; others must hit
                if i != report.bound:
                    raise CapExceeded(f"index {i} does not produce a valid target")
            else:
                raise CapExceeded(f"index {i} does not produce a valid target")
    else:
        if kind == "unknown":
            raise CapExceeded("table too large and entry kind undetected")
        for i in range(entry_count):
            ea = base + i * stride
            raw = raw_at(ea)
            tgt = raw & MASK64 if kind == "abs64" else (add_base + _sx(raw, width)) & MASK64
            if tgt in valid_starts:
                targets.add(tgt)
                entries.append((ea, raw, tgt))

    if not targets:
        raise CapExceeded("no valid targets recovered")

    return JumpTable(
        jmp_addr=slc.jmp.addr,
        base=base,
        entry_kind=kind,
        bound_kind=report.verdict,
        bound=report.bound,
        entry_count=entry_count,
        targets=targets,
        patchable=kind in ("offset32", "abs64"),
        entries=entries,
        add_base=add_base,
        entry_size=width,
    )


def analyze_function_tables(view: ElfModuleView, cfg, insts) -> list:
    """Recover jump tables for every indirect jmp in a function's draft CFG."""
    valid_starts = {i.addr for i in insts}
    tables = []
    for addr in sorted(cfg.blocks):
        bb = cfg.blocks[addr]
        term = bb.terminator
        if term is None or term.kind != "jmp-indirect":
            continue
        try:
            slc = backward_slice(cfg, term.addr)
        except SliceAbort as exc:
            log.debug("%#x: slice abort: %s", term.addr, exc)
            continue
        env = MicroExecEnv(view)
        engine = _TrialEngine(slc, env, cfg.function)
        bound = find_bound_condition(slc, cfg)
        report = None
        if bound is not None:
            b, cond_addr, cond_code, _setter = bound
            report = run_control_trials(engine, b, valid_starts)
            report.cond_addr = cond_addr
            report.cond_code = cond_code
            if report.verdict == "abort" and "left the function" in report.reason:
                log.debug("%#x: %s", term.addr, report.reason)
                continue
        if report is None or report.verdict == "abort":
            report = run_data_trials(engine, valid_starts)
        if report.verdict == "abort":
            log.debug("%#x: trials abort: %s", term.addr, report.reason)
            continue
        try:
            table = recover_table(engine, report, valid_starts)
        except (CapExceeded, EmulationFault) as exc:
            log.debug("%#x: recovery failed: %s", term.addr, exc)
            continue
        tables.append(table)
    return tables
