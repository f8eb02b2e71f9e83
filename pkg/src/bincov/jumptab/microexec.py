"""Concrete microexecution of program slices.

The environment maps the module's load segments read-only at their link-time
addresses, provides a scratch stack, and hands out zero-filled pages for any
other address touched. Writes land in a private overlay; the module image is
never modified. Each trial runs on a reset environment.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

from ..elf.image import ElfModuleView
from ..errors import EmulationFault
from ..x86.decode import Instruction, Mem, Reg

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
STACK_TOP = 0x7FFF_DEAD_0000
STACK_SPAN = 0x10000
MAX_ONDEMAND_PAGES = 512
MAX_STEPS = 4096


def _mask(size: int) -> int:
    return (1 << (8 * size)) - 1


def _sx(value: int, size: int) -> int:
    bits = 8 * size
    value &= (1 << bits) - 1
    if value & (1 << (bits - 1)):
        value -= 1 << bits
    return value


@dataclass
class Flags:
    op: str = "none"
    size: int = 4
    a: int = 0
    b: int = 0
    res: int = 0
    prev_cf: int = 0


class MicroExecEnv:
    def __init__(self, view: ElfModuleView):
        self.view = view
        self.segments = [(s.vaddr, s.vaddr + s.memsz, s) for s in view.load_segments]
        self.reset()

    def reset(self) -> None:
        self.regs = [0] * 16
        self.regs[4] = STACK_TOP - STACK_SPAN // 2   # rsp
        self.regs[5] = STACK_TOP - STACK_SPAN // 4   # rbp, plausible frame
        self.overlay: dict[int, int] = {}
        self.pages: set[int] = set()
        self.flags = Flags()

    # --- memory ---

    def _byte_at(self, addr: int) -> int:
        v = self.overlay.get(addr)
        if v is not None:
            return v
        for lo, hi, seg in self.segments:
            if lo <= addr < hi:
                within = addr - seg.vaddr
                if within < seg.filesz:
                    return self.view.file_bytes[seg.offset + within]
                return 0
        self._demand_page(addr)
        return 0

    def _demand_page(self, addr: int) -> None:
        if addr > (1 << 48) or addr < 0:
            raise EmulationFault(addr, "non-canonical address")
        page = addr >> 12
        if page not in self.pages:
            if len(self.pages) >= MAX_ONDEMAND_PAGES:
                raise EmulationFault(addr, "on-demand page budget exceeded")
            self.pages.add(page)

    def mem_read(self, addr: int, size: int) -> int:
        return int.from_bytes(bytes(self._byte_at(addr + i) for i in range(size)), "little")

    def mem_write(self, addr: int, size: int, value: int) -> None:
        if addr > (1 << 48) or addr < 0:
            raise EmulationFault(addr, "non-canonical address")
        in_module = any(lo <= addr < hi for lo, hi, _ in self.segments)
        if not in_module:
            self._demand_page(addr)
            self._demand_page(addr + size - 1)
        for i in range(size):
            self.overlay[(addr + i)] = (value >> (8 * i)) & 0xFF

    # --- registers ---

    def get_reg(self, r: Reg) -> int:
        v = self.regs[r.idx]
        if r.size == 8:
            return v
        if r.size == 1 and r.high:
            return (v >> 8) & 0xFF
        return v & _mask(r.size)

    def set_reg(self, r: Reg, value: int) -> None:
        if r.size == 8:
            self.regs[r.idx] = value & MASK64
        elif r.size == 4:
            self.regs[r.idx] = value & 0xFFFFFFFF
        elif r.size == 1 and r.high:
            self.regs[r.idx] = (self.regs[r.idx] & ~0xFF00) | ((value & 0xFF) << 8)
        else:
            m = _mask(r.size)
            self.regs[r.idx] = (self.regs[r.idx] & ~m) | (value & m)

    def effective_addr(self, mem: Mem, inst: Instruction) -> int:
        if mem.rip:
            return (inst.addr + inst.size + mem.disp) & MASK64
        ea = mem.disp
        if mem.base is not None:
            ea += self.regs[mem.base]
        if mem.index is not None:
            ea += self.regs[mem.index] * mem.scale
        return ea & MASK64

    # --- flags ---

    def set_flags(self, op: str, size: int, a: int, b: int, res: int) -> None:
        self.flags = Flags(op, size, a & _mask(size), b & _mask(size),
                           res & _mask(size), prev_cf=self.cf())

    def cf(self) -> int:
        f = self.flags
        if f.op in ("sub", "cmp", "sbb"):
            return 1 if f.a < f.b else 0
        if f.op in ("add", "adc"):
            return 1 if f.res < f.a else 0
        if f.op in ("and", "or", "xor", "test"):
            return 0
        if f.op == "shl":
            return (f.a >> (8 * f.size - f.b)) & 1 if 0 < f.b <= 8 * f.size else 0
        if f.op in ("shr", "sar"):
            return (f.a >> (f.b - 1)) & 1 if 0 < f.b <= 8 * f.size else 0
        if f.op in ("inc", "dec"):
            return f.prev_cf
        return 0

    def zf(self) -> int:
        return 1 if self.flags.res == 0 else 0

    def sf(self) -> int:
        f = self.flags
        return (f.res >> (8 * f.size - 1)) & 1

    def of(self) -> int:
        f = self.flags
        sa = (f.a >> (8 * f.size - 1)) & 1
        sb = (f.b >> (8 * f.size - 1)) & 1
        sr = (f.res >> (8 * f.size - 1)) & 1
        if f.op in ("sub", "cmp", "sbb"):
            return 1 if (sa != sb and sa != sr) else 0
        if f.op in ("add", "adc"):
            return 1 if (sa == sb and sa != sr) else 0
        if f.op == "inc":
            return 1 if f.res == (1 << (8 * f.size - 1)) else 0
        if f.op == "dec":
            return 1 if f.res == (1 << (8 * f.size - 1)) - 1 else 0
        return 0

    def pf(self) -> int:
        return 1 if bin(self.flags.res & 0xFF).count("1") % 2 == 0 else 0

    def cond(self, cc: int) -> bool:
        if cc == 0x0:
            return self.of() == 1
        if cc == 0x1:
            return self.of() == 0
        if cc == 0x2:
            return self.cf() == 1
        if cc == 0x3:
            return self.cf() == 0
        if cc == 0x4:
            return self.zf() == 1
        if cc == 0x5:
            return self.zf() == 0
        if cc == 0x6:
            return self.cf() == 1 or self.zf() == 1
        if cc == 0x7:
            return self.cf() == 0 and self.zf() == 0
        if cc == 0x8:
            return self.sf() == 1
        if cc == 0x9:
            return self.sf() == 0
        if cc == 0xA:
            return self.pf() == 1
        if cc == 0xB:
            return self.pf() == 0
        if cc == 0xC:
            return self.sf() != self.of()
        if cc == 0xD:
            return self.sf() == self.of()
        if cc == 0xE:
            return self.zf() == 1 or self.sf() != self.of()
        if cc == 0xF:
            return self.zf() == 0 and self.sf() == self.of()
        raise EmulationFault(0, f"unsupported condition {cc}")


SUPPORTED_OPS = frozenset({
    "mov", "movzx", "movsx", "movsxd", "lea", "add", "sub", "and", "or",
    "xor", "adc", "sbb", "cmp", "test", "shl", "shr", "sar", "rol", "ror",
    "inc", "dec", "neg", "not", "imul", "mul", "setcc", "cmov", "push",
    "pop", "cwde", "cdq", "bswap", "xchg", "nop", "jcc", "jmp", "bsf",
    "bsr", "popcnt", "leave",
})


class SliceRunner:
    """Executes slice instructions in program order on a MicroExecEnv."""

    def __init__(self, env: MicroExecEnv):
        self.env = env
        self.last_load: tuple[Instruction, int, int] | None = None   # inst, ea, width
        self.slot_overrides: dict[tuple, tuple[int, int]] = {}       # slot key -> (value, width)

    def read_operand(self, inst: Instruction, o) -> int:
        env = self.env
        if isinstance(o, Reg):
            return env.get_reg(o)
        if isinstance(o, Mem):
            if self.slot_overrides:
                key = (o.base, o.index, o.scale, o.disp)
                hit = self.slot_overrides.get(key)
                if hit is not None:
                    return hit[0] & _mask(o.size or inst.opsize)
            ea = env.effective_addr(o, inst)
            size = o.size or inst.opsize
            self.last_load = (inst, ea, size)
            return env.mem_read(ea, size)
        if isinstance(o, int):
            return o & MASK64
        raise EmulationFault(inst.addr, f"unreadable operand {o!r}")

    def write_operand(self, inst: Instruction, o, value: int) -> None:
        env = self.env
        if isinstance(o, Reg):
            env.set_reg(o, value)
        elif isinstance(o, Mem):
            ea = env.effective_addr(o, inst)
            env.mem_write(ea, o.size or inst.opsize, value)
        else:
            raise EmulationFault(inst.addr, f"unwritable operand {o!r}")

    def op_size(self, o, inst: Instruction) -> int:
        if isinstance(o, Reg):
            return o.size
        if isinstance(o, Mem):
            return o.size or inst.opsize
        return inst.opsize

    def exec_inst(self, inst: Instruction) -> None:
        """Execute one non-control-flow instruction."""
        env = self.env
        op = inst.op
        if op == "nop":
            return
        if op == "lea":
            env.set_reg(inst.dst, env.effective_addr(inst.srcs[0], inst))
            return
        if op == "mov":
            self.write_operand(inst, inst.dst, self.read_operand(inst, inst.srcs[0]))
            return
        if op == "movzx":
            env.set_reg(inst.dst, self.read_operand(inst, inst.srcs[0]))
            return
        if op in ("movsx", "movsxd"):
            src = inst.srcs[0]
            v = _sx(self.read_operand(inst, src), self.op_size(src, inst))
            env.set_reg(inst.dst, v & MASK64)
            return
        if op in ("add", "sub", "and", "or", "xor", "adc", "sbb"):
            size = self.op_size(inst.dst or inst.srcs[0], inst)
            a = self.read_operand(inst, inst.srcs[0]) & _mask(size)
            b = self.read_operand(inst, inst.srcs[1]) & _mask(size)
            carry = env.cf() if op in ("adc", "sbb") else 0
            if op in ("add", "adc"):
                res = a + b + carry
            elif op in ("sub", "sbb"):
                res = a - b - carry
            elif op == "and":
                res = a & b
            elif op == "or":
                res = a | b
            else:
                res = a ^ b
            env.set_flags(op, size, a, b, res)
            self.write_operand(inst, inst.dst, res & _mask(size))
            return
        if op in ("cmp", "test"):
            size = self.op_size(inst.srcs[0], inst)
            a = self.read_operand(inst, inst.srcs[0]) & _mask(size)
            b = self.read_operand(inst, inst.srcs[1]) & _mask(size)
            res = (a - b) if op == "cmp" else (a & b)
            env.set_flags(op, size, a, b, res)
            return
        if op in ("shl", "shr", "sar", "rol", "ror"):
            size = self.op_size(inst.dst, inst)
            bits = 8 * size
            a = self.read_operand(inst, inst.srcs[0]) & _mask(size)
            cnt = self.read_operand(inst, inst.srcs[1]) & (63 if size == 8 else 31)
            if op == "shl":
                res = a << cnt
            elif op == "shr":
                res = a >> cnt
            elif op == "sar":
                res = (_sx(a, size) >> cnt) & _mask(size)
            elif op == "rol":
                cnt %= bits
                res = ((a << cnt) | (a >> (bits - cnt))) & _mask(size) if cnt else a
            else:
                cnt %= bits
                res = ((a >> cnt) | (a << (bits - cnt))) & _mask(size) if cnt else a
            if op in ("shl", "shr", "sar") and cnt:
                env.set_flags(op, size, a, cnt, res)
            self.write_operand(inst, inst.dst, res & _mask(size))
            return
        if op in ("inc", "dec"):
            size = self.op_size(inst.dst, inst)
            a = self.read_operand(inst, inst.srcs[0]) & _mask(size)
            res = a + 1 if op == "inc" else a - 1
            env.set_flags(op, size, a, 1, res)
            self.write_operand(inst, inst.dst, res & _mask(size))
            return
        if op == "neg":
            size = self.op_size(inst.dst, inst)
            a = self.read_operand(inst, inst.srcs[0]) & _mask(size)
            res = -a
            env.set_flags("sub", size, 0, a, res)
            self.write_operand(inst, inst.dst, res & _mask(size))
            return
        if op == "not":
            size = self.op_size(inst.dst, inst)
            a = self.read_operand(inst, inst.srcs[0])
            self.write_operand(inst, inst.dst, ~a & _mask(size))
            return
        if op == "imul":
            size = self.op_size(inst.dst, inst)
            if len(inst.srcs) == 3 and isinstance(inst.srcs[2], Reg):
                # one-operand form writes rdx:rax; model rax only
                a = _sx(self.read_operand(inst, inst.srcs[0]), size)
                b = _sx(self.read_operand(inst, inst.srcs[1]), size)
                env.set_reg(Reg(0, size), (a * b) & _mask(size))
                return
            a = _sx(self.read_operand(inst, inst.srcs[0]), size)
            b = _sx(self.read_operand(inst, inst.srcs[1]), size)
            res = a * b
            env.set_flags("imul", size, a & _mask(size), b & _mask(size), res)
            self.write_operand(inst, inst.dst, res & _mask(size))
            return
        if op == "mul":
            size = self.op_size(inst.srcs[0], inst)
            a = self.read_operand(inst, inst.srcs[0])
            b = self.read_operand(inst, inst.srcs[1])
            env.set_reg(Reg(0, size), (a * b) & _mask(size))
            return
        if op == "setcc":
            self.write_operand(inst, inst.dst, 1 if env.cond(inst.cond) else 0)
            return
        if op == "cmov":
            if env.cond(inst.cond):
                env.set_reg(inst.dst, self.read_operand(inst, inst.srcs[1]))
            return
        if op == "push":
            v = self.read_operand(inst, inst.srcs[0])
            env.regs[4] = (env.regs[4] - 8) & MASK64
            env.mem_write(env.regs[4], 8, v)
            return
        if op == "pop":
            v = env.mem_read(env.regs[4], 8)
            env.regs[4] = (env.regs[4] + 8) & MASK64
            self.write_operand(inst, inst.dst, v)
            return
        if op == "leave":
            env.regs[4] = env.regs[5]
            env.regs[5] = env.mem_read(env.regs[4], 8)
            env.regs[4] = (env.regs[4] + 8) & MASK64
            return
        if op == "cwde":
            size = inst.opsize
            half = size // 2
            env.set_reg(Reg(0, size), _sx(env.get_reg(Reg(0, half)), half) & _mask(size))
            return
        if op == "cdq":
            size = inst.opsize
            v = env.get_reg(Reg(0, size))
            sign = (v >> (8 * size - 1)) & 1
            env.set_reg(Reg(2, size), _mask(size) if sign else 0)
            return
        if op == "bswap":
            size = inst.opsize
            v = self.read_operand(inst, inst.srcs[0]) & _mask(size)
            env.set_reg(inst.dst, int.from_bytes(v.to_bytes(size, "little"), "big"))
            return
        if op == "xchg":
            a, b = inst.dst, inst.srcs[0]
            va = self.read_operand(inst, a)
            vb = self.read_operand(inst, b)
            self.write_operand(inst, a, vb)
            self.write_operand(inst, b, va)
            return
        if op in ("bsf", "bsr", "popcnt"):
            v = self.read_operand(inst, inst.srcs[0])
            if op == "popcnt":
                res = bin(v).count("1")
            elif op == "bsf":
                res = (v & -v).bit_length() - 1 if v else 0
            else:
                res = v.bit_length() - 1 if v else 0
            env.set_reg(inst.dst, res)
            return
        raise EmulationFault(inst.addr, f"unsupported op {op}")
