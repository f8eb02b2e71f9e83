"""x86-64 instruction decoder.

Linear-sweep oriented: decodes lengths for the full instruction set that
compilers emit (integer, SSE, x87, VEX/EVEX) and extracts full operand
semantics for the integer subset that slicing and microexecution care about.

Only 64-bit mode is supported. Invalid encodings raise UndecodableByte.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import UndecodableByte

MAX_INSN = 15

REG_NAMES = ["rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi",
             "r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15"]

RSP = 4
RBP = 5

COND_NAMES = ["o", "no", "b", "ae", "e", "ne", "be", "a",
              "s", "ns", "p", "np", "l", "ge", "le", "g"]

LEGACY_PREFIXES = frozenset({0x66, 0x67, 0xF0, 0xF2, 0xF3, 0x2E, 0x36, 0x3E, 0x26, 0x64, 0x65})


@dataclass(frozen=True)
class Reg:
    """A register access: index into REG_NAMES, access size, high-byte flag."""
    idx: int
    size: int
    high: bool = False

    @property
    def name(self) -> str:
        if self.size == 1 and self.high:
            return ["ah", "ch", "dh", "bh"][self.idx]
        base = REG_NAMES[self.idx]
        if self.size == 8:
            return base
        if self.size == 4:
            return "e" + base[1:] if self.idx < 8 else base + "d"
        if self.size == 2:
            return base[1:] if self.idx < 8 else base + "w"
        if self.idx < 4:
            return base[1:].replace("x", "l")
        if self.idx < 8:
            return base[1:] + "l"
        return base + "b"


@dataclass
class Mem:
    """Memory operand: [base + index*scale + disp], or rip-relative."""
    base: int | None = None
    index: int | None = None
    scale: int = 1
    disp: int = 0
    rip: bool = False
    size: int = 0  # access width in bytes, filled by semantics

    def regs(self) -> list[int]:
        out = []
        if self.base is not None:
            out.append(self.base)
        if self.index is not None:
            out.append(self.index)
        return out


@dataclass
class Instruction:
    addr: int
    size: int
    bytes: bytes
    kind: str = "other"           # call-direct/call-indirect/jmp-direct/jmp-indirect/cond-jmp/ret/other
    op: str = "unknown"           # semantic family for slicing/emulation
    cond: int = -1                # condition code for jcc/setcc/cmov
    rip_relative: bool = False
    branch_target: int | None = None
    opsize: int = 4
    dst: object = None            # Reg | Mem | None
    srcs: list = field(default_factory=list)   # list of Reg | Mem | int (imm)
    mem: Mem | None = None        # the memory operand, if any
    disp_offset: int = -1         # byte offset of displacement field within bytes
    disp_size: int = 0
    imm_offset: int = -1
    imm_size: int = 0
    imm: int | None = None
    writes_flags: bool = False
    is_trap: bool = False         # ud2 / int3 / hlt: never falls through
    prefixes: tuple = ()
    rex: int = 0
    _rel: tuple | None = None     # (displacement, bits) before target resolution

    @property
    def is_nop(self) -> bool:
        return self.op == "nop"

    def end(self) -> int:
        return self.addr + self.size

    def __repr__(self) -> str:
        return f"<{self.addr:#x}: {self.op} {self.bytes.hex()}>"


# one-byte opcodes that carry a ModRM byte
_MODRM_1B = set()
for _top in (0x00, 0x08, 0x10, 0x18, 0x20, 0x28, 0x30, 0x38):
    _MODRM_1B.update({_top, _top + 1, _top + 2, _top + 3})
_MODRM_1B.update({0x63, 0x69, 0x6B, 0x80, 0x81, 0x83, 0x84, 0x85, 0x86, 0x87,
                  0x88, 0x89, 0x8A, 0x8B, 0x8C, 0x8D, 0x8E, 0x8F,
                  0xC0, 0xC1, 0xC6, 0xC7, 0xD0, 0xD1, 0xD2, 0xD3,
                  0xD8, 0xD9, 0xDA, 0xDB, 0xDC, 0xDD, 0xDE, 0xDF,
                  0xF6, 0xF7, 0xFE, 0xFF})

# one-byte opcode -> immediate spec
_IMM_1B: dict[int, str] = {}
for _top in (0x00, 0x08, 0x10, 0x18, 0x20, 0x28, 0x30, 0x38):
    _IMM_1B[_top + 4] = "ib"
    _IMM_1B[_top + 5] = "iz"
_IMM_1B.update({
    0x68: "iz", 0x69: "iz", 0x6A: "ib", 0x6B: "ib",
    0x80: "ib", 0x81: "iz", 0x83: "ib",
    0xA8: "ib", 0xA9: "iz",
    0xC0: "ib", 0xC1: "ib", 0xC2: "iw", 0xC6: "ib", 0xC7: "iz",
    0xC8: "iw_ib", 0xCA: "iw", 0xCD: "ib",
    0xE4: "ib", 0xE5: "ib", 0xE6: "ib", 0xE7: "ib",
    0xA0: "moffs", 0xA1: "moffs", 0xA2: "moffs", 0xA3: "moffs",
})
for _b in range(0xB0, 0xB8):
    _IMM_1B[_b] = "ib"
for _b in range(0xB8, 0xC0):
    _IMM_1B[_b] = "iv"
for _b in list(range(0x70, 0x80)) + [0xE0, 0xE1, 0xE2, 0xE3, 0xEB]:
    _IMM_1B[_b] = "rel8"
for _b in (0xE8, 0xE9):
    _IMM_1B[_b] = "rel32"

_INVALID_1B = {0x06, 0x07, 0x0E, 0x16, 0x17, 0x1E, 0x1F, 0x27, 0x2F,
               0x37, 0x3F, 0x60, 0x61, 0x82, 0x9A, 0xD4, 0xD5, 0xD6,
               0xCE, 0xEA}

# two-byte (0F xx) opcodes WITHOUT ModRM
_NO_MODRM_2B = {0x05, 0x06, 0x07, 0x08, 0x09, 0x0B, 0x0E,
                0x30, 0x31, 0x32, 0x33, 0x34, 0x35, 0x37,
                0x77, 0xA0, 0xA1, 0xA2, 0xA8, 0xA9, 0xAA}
_NO_MODRM_2B.update(range(0x80, 0x90))   # jcc rel32
_NO_MODRM_2B.update(range(0xC8, 0xD0))   # bswap

# two-byte opcodes with a trailing imm8 (in addition to ModRM)
_IMM8_2B = {0x70, 0x71, 0x72, 0x73, 0xA4, 0xAC, 0xBA, 0xC2, 0xC4, 0xC5, 0xC6, 0x0F}

_GRP1_OPS = ["add", "or", "adc", "sbb", "and", "sub", "xor", "cmp"]
_GRP2_OPS = ["rol", "ror", "rcl", "rcr", "shl", "shr", "shl", "sar"]
_GRP3_OPS = ["test", "test", "not", "neg", "mul", "imul", "div", "idiv"]


def _sx(value: int, bits: int) -> int:
    mask = (1 << bits) - 1
    value &= mask
    if value & (1 << (bits - 1)):
        value -= 1 << bits
    return value


class _Cursor:
    def __init__(self, code, addr: int):
        self.code = code
        self.pos = 0
        self.addr = addr

    def peek(self) -> int:
        if self.pos >= len(self.code) or self.pos >= MAX_INSN:
            raise UndecodableByte(self.addr, "ran out of bytes")
        return self.code[self.pos]

    def u8(self) -> int:
        v = self.peek()
        self.pos += 1
        return v

    def bytes_n(self, n: int) -> bytes:
        if self.pos + n > len(self.code):
            raise UndecodableByte(self.addr, "ran out of bytes")
        b = bytes(self.code[self.pos : self.pos + n])
        self.pos += n
        return b

    def int_n(self, n: int, signed: bool = True) -> int:
        return int.from_bytes(self.bytes_n(n), "little", signed=signed)


def _reg(idx: int, size: int, rex: int) -> Reg:
    if size == 1 and rex == 0 and 4 <= idx <= 7:
        return Reg(idx - 4, 1, high=True)
    return Reg(idx, size)


def _parse_modrm(cur: _Cursor, rex: int, addr_override: bool):
    """Returns (reg_field, rm_operand, disp_offset, disp_size).

    rm_operand is a register index (int, mod=11) or a Mem.
    """
    modrm = cur.u8()
    mod = modrm >> 6
    reg = ((rex >> 2) & 1) << 3 | ((modrm >> 3) & 7)
    rm = (rex & 1) << 3 | (modrm & 7)
    if mod == 3:
        return reg, rm, -1, 0
    mem = Mem()
    disp_size = 0
    if (modrm & 7) == 4:
        sib = cur.u8()
        scale = 1 << (sib >> 6)
        index = ((rex >> 1) & 1) << 3 | ((sib >> 3) & 7)
        base = (rex & 1) << 3 | (sib & 7)
        if index != 4:
            mem.index = index
            mem.scale = scale
        if (sib & 7) == 5 and mod == 0:
            disp_size = 4
        else:
            mem.base = base
    elif (modrm & 7) == 5 and mod == 0:
        mem.rip = True
        disp_size = 4
    else:
        mem.base = rm
    if mod == 1:
        disp_size = 1
    elif mod == 2:
        disp_size = 4
    disp_offset = cur.pos if disp_size else -1
    if disp_size:
        mem.disp = cur.int_n(disp_size)
    return reg, mem, disp_offset, disp_size


def _imm_bytes(spec: str, opsize: int, addr_override: bool) -> int:
    if spec == "ib":
        return 1
    if spec == "iw":
        return 2
    if spec == "iz":
        return 2 if opsize == 2 else 4
    if spec == "iv":
        return opsize
    if spec == "rel8":
        return 1
    if spec == "rel32":
        return 4
    if spec == "iw_ib":
        return 3
    if spec == "moffs":
        return 4 if addr_override else 8
    raise AssertionError(spec)


def decode(code, addr: int) -> Instruction:
    """Decode one instruction from ``code`` (bytes at virtual address ``addr``)."""
    cur = _Cursor(code, addr)
    prefixes = []
    rex = 0
    while True:
        b = cur.peek()
        if b in LEGACY_PREFIXES:
            prefixes.append(b)
            cur.pos += 1
            if cur.pos >= MAX_INSN:
                raise UndecodableByte(addr, "prefix run too long")
            continue
        if 0x40 <= b <= 0x4F:
            rex = b
            cur.pos += 1
            b2 = cur.peek()
            if b2 in LEGACY_PREFIXES:
                # REX must immediately precede the opcode; restart prefix scan
                rex = 0
                continue
        break

    opsize_override = 0x66 in prefixes
    addr_override = 0x67 in prefixes
    rexw = bool(rex & 8)
    opsize = 8 if rexw else (2 if opsize_override else 4)

    inst = Instruction(addr=addr, size=0, bytes=b"", prefixes=tuple(prefixes), rex=rex)
    inst.opsize = opsize

    opcode = cur.u8()

    if opcode in (0xC4, 0xC5, 0x62):
        _decode_vex(cur, opcode, inst)
    elif opcode == 0x0F:
        _decode_0f(cur, inst, rex, opsize, prefixes)
    else:
        _decode_1b(cur, opcode, inst, rex, opsize, addr_override, prefixes)

    inst.size = cur.pos
    inst.bytes = bytes(cur.code[:cur.pos])
    if inst.size > MAX_INSN:
        raise UndecodableByte(addr, "instruction longer than 15 bytes")
    if inst.mem is not None and inst.mem.rip:
        inst.rip_relative = True
    rel = inst._rel
    if rel is not None and rel[0] is not None:
        inst.branch_target = (inst.addr + inst.size + rel[0]) & 0xFFFFFFFFFFFFFFFF
    return inst


def _set_mem(inst: Instruction, rm, disp_offset: int, disp_size: int):
    if isinstance(rm, Mem):
        inst.mem = rm
        inst.disp_offset = disp_offset
        inst.disp_size = disp_size


def _read_imm(cur: _Cursor, inst: Instruction, spec: str, opsize: int, addr_override: bool):
    n = _imm_bytes(spec, opsize, addr_override)
    inst.imm_offset = cur.pos
    inst.imm_size = n
    if spec == "iw_ib":
        cur.bytes_n(3)
        inst.imm = None
        return
    signed = spec not in ("moffs",)
    inst.imm = cur.int_n(n, signed=signed)


def _decode_1b(cur: _Cursor, opcode: int, inst: Instruction, rex: int,
               opsize: int, addr_override: bool, prefixes: list):
    addr = inst.addr
    if opcode in _INVALID_1B:
        raise UndecodableByte(addr, f"invalid opcode {opcode:#x}")

    reg = rm = None
    disp_offset, disp_size = -1, 0
    if opcode in _MODRM_1B:
        reg, rm, disp_offset, disp_size = _parse_modrm(cur, rex, addr_override)
        _set_mem(inst, rm, disp_offset, disp_size)

    spec = _IMM_1B.get(opcode)
    if opcode == 0xF6 and reg is not None and reg & 7 in (0, 1):
        spec = "ib"
    elif opcode == 0xF7 and reg is not None and reg & 7 in (0, 1):
        spec = "iz"
    elif opcode in (0xF6, 0xF7):
        spec = None
    if spec:
        _read_imm(cur, inst, spec, opsize, addr_override)

    _semantics_1b(opcode, inst, reg, rm, rex, opsize, prefixes)


def _rm_operand(rm, size: int, rex: int):
    if isinstance(rm, Mem):
        rm.size = size
        return rm
    return _reg(rm, size, rex)


def _semantics_1b(opcode: int, inst: Instruction, reg, rm, rex: int,
                  opsize: int, prefixes: list):
    addr = inst.addr

    def R(idx, size=None):
        return _reg(idx, size or opsize, rex)

    # ALU family 00-3D
    if opcode <= 0x3D and (opcode & 7) <= 5:
        op = _GRP1_OPS[opcode >> 3]
        form = opcode & 7
        inst.op = op
        inst.writes_flags = True
        if form in (0, 1):      # Eb,Gb / Ev,Gv
            size = 1 if form == 0 else opsize
            src = _reg(reg, size, rex)
            dst = _rm_operand(rm, size, rex)
            inst.dst, inst.srcs = dst, [dst, src]
        elif form in (2, 3):    # Gb,Eb / Gv,Ev
            size = 1 if form == 2 else opsize
            dst = _reg(reg, size, rex)
            src = _rm_operand(rm, size, rex)
            inst.dst, inst.srcs = dst, [dst, src]
        else:                    # AL,ib / rAX,iz
            size = 1 if form == 4 else opsize
            dst = _reg(0, size, rex)
            inst.dst, inst.srcs = dst, [dst, inst.imm]
        if op == "cmp":
            inst.dst = None
        return

    if opcode in (0x80, 0x81, 0x83):
        op = _GRP1_OPS[reg & 7]
        inst.op = op
        inst.writes_flags = True
        size = 1 if opcode == 0x80 else opsize
        dst = _rm_operand(rm, size, rex)
        inst.dst = None if op == "cmp" else dst
        inst.srcs = [dst, inst.imm]
        return

    if 0x50 <= opcode <= 0x57:
        inst.op = "push"
        inst.srcs = [_reg((rex & 1) << 3 | (opcode - 0x50), 8, rex)]
        return
    if 0x58 <= opcode <= 0x5F:
        inst.op = "pop"
        inst.dst = _reg((rex & 1) << 3 | (opcode - 0x58), 8, rex)
        return
    if opcode == 0x63:
        inst.op = "movsxd"
        inst.dst = _reg(reg, opsize, rex)
        inst.srcs = [_rm_operand(rm, 4, rex)]
        return
    if opcode == 0x68 or opcode == 0x6A:
        inst.op = "push"
        inst.srcs = [inst.imm]
        return
    if opcode in (0x69, 0x6B):
        inst.op = "imul"
        inst.writes_flags = True
        inst.dst = _reg(reg, opsize, rex)
        inst.srcs = [_rm_operand(rm, opsize, rex), inst.imm]
        return
    if 0x70 <= opcode <= 0x7F:
        inst.op = "jcc"
        inst.kind = "cond-jmp"
        inst.cond = opcode & 0xF
        inst._rel = (inst.imm, 8)
        return
    if 0xE0 <= opcode <= 0xE3:
        inst.op = "jcc"         # loop/jrcxz treated as conditional branches
        inst.kind = "cond-jmp"
        inst.cond = -2 - (opcode - 0xE0)
        inst._rel = (inst.imm, 8)
        return
    if opcode in (0x84, 0x85):
        inst.op = "test"
        inst.writes_flags = True
        size = 1 if opcode == 0x84 else opsize
        inst.srcs = [_rm_operand(rm, size, rex), _reg(reg, size, rex)]
        return
    if opcode in (0x86, 0x87):
        inst.op = "xchg"
        size = 1 if opcode == 0x86 else opsize
        inst.dst = _rm_operand(rm, size, rex)
        inst.srcs = [_reg(reg, size, rex)]
        return
    if opcode in (0x88, 0x89):
        inst.op = "mov"
        size = 1 if opcode == 0x88 else opsize
        inst.dst = _rm_operand(rm, size, rex)
        inst.srcs = [_reg(reg, size, rex)]
        return
    if opcode in (0x8A, 0x8B):
        inst.op = "mov"
        size = 1 if opcode == 0x8A else opsize
        inst.dst = _reg(reg, size, rex)
        inst.srcs = [_rm_operand(rm, size, rex)]
        return
    if opcode in (0x8C, 0x8E):
        inst.op = "movseg"
        _rm_operand(rm, 2, rex)
        return
    if opcode == 0x8D:
        inst.op = "lea"
        inst.dst = _reg(reg, opsize, rex)
        if not isinstance(rm, Mem):
            raise UndecodableByte(addr, "lea with register operand")
        inst.srcs = [rm]
        return
    if opcode == 0x8F:
        inst.op = "pop"
        inst.dst = _rm_operand(rm, 8, rex)
        return
    if opcode == 0x90 and not (rex & 1):
        inst.op = "pause" if 0xF3 in prefixes else "nop"
        return
    if 0x90 <= opcode <= 0x97:
        inst.op = "xchg"
        inst.dst = R(0)
        inst.srcs = [_reg((rex & 1) << 3 | (opcode - 0x90), opsize, rex)]
        return
    if opcode == 0x98:
        inst.op = "cwde"
        inst.dst = R(0)
        inst.srcs = [R(0)]
        return
    if opcode == 0x99:
        inst.op = "cdq"
        inst.dst = R(2)
        inst.srcs = [R(0)]
        return
    if opcode in (0x9B, 0x9C, 0x9D, 0x9E, 0x9F):
        inst.op = {0x9B: "fwait", 0x9C: "pushf", 0x9D: "popf",
                   0x9E: "sahf", 0x9F: "lahf"}[opcode]
        return
    if 0xA0 <= opcode <= 0xA3:
        inst.op = "mov"   # moffs form; not emulated
        return
    if 0xA4 <= opcode <= 0xAF and opcode not in (0xA8, 0xA9):
        inst.op = "string"
        return
    if opcode in (0xA8, 0xA9):
        inst.op = "test"
        inst.writes_flags = True
        size = 1 if opcode == 0xA8 else opsize
        inst.srcs = [_reg(0, size, rex), inst.imm]
        return
    if 0xB0 <= opcode <= 0xB7:
        inst.op = "mov"
        inst.dst = _reg((rex & 1) << 3 | (opcode - 0xB0), 1, rex)
        inst.srcs = [inst.imm]
        return
    if 0xB8 <= opcode <= 0xBF:
        inst.op = "mov"
        inst.dst = _reg((rex & 1) << 3 | (opcode - 0xB8), opsize, rex)
        inst.srcs = [inst.imm]
        return
    if opcode in (0xC0, 0xC1, 0xD0, 0xD1, 0xD2, 0xD3):
        inst.op = _GRP2_OPS[reg & 7]
        inst.writes_flags = True
        size = 1 if opcode in (0xC0, 0xD0, 0xD2) else opsize
        dst = _rm_operand(rm, size, rex)
        inst.dst = dst
        if opcode in (0xC0, 0xC1):
            inst.srcs = [dst, inst.imm]
        elif opcode in (0xD0, 0xD1):
            inst.srcs = [dst, 1]
        else:
            inst.srcs = [dst, _reg(1, 1, rex)]   # cl
        return
    if opcode in (0xC2, 0xC3, 0xCA, 0xCB):
        inst.op = "ret"
        inst.kind = "ret"
        return
    if opcode in (0xC6, 0xC7):
        if reg & 7 != 0:
            raise UndecodableByte(addr, "bad group 11")
        inst.op = "mov"
        size = 1 if opcode == 0xC6 else opsize
        inst.dst = _rm_operand(rm, size, rex)
        inst.srcs = [inst.imm]
        return
    if opcode == 0xC8:
        inst.op = "enter"
        return
    if opcode == 0xC9:
        inst.op = "leave"
        return
    if opcode == 0xCC:
        inst.op = "int3"
        inst.is_trap = True
        return
    if opcode == 0xCD:
        inst.op = "int"
        return
    if opcode == 0xCF:
        inst.op = "iret"
        inst.kind = "ret"
        return
    if 0xD8 <= opcode <= 0xDF:
        inst.op = "x87"
        return
    if opcode == 0xD7:
        inst.op = "xlat"
        return
    if opcode == 0xE8:
        inst.op = "call"
        inst.kind = "call-direct"
        inst._rel = (inst.imm, 32)
        return
    if opcode == 0xE9:
        inst.op = "jmp"
        inst.kind = "jmp-direct"
        inst._rel = (inst.imm, 32)
        return
    if opcode == 0xEB:
        inst.op = "jmp"
        inst.kind = "jmp-direct"
        inst._rel = (inst.imm, 8)
        return
    if opcode in (0xE4, 0xE5, 0xE6, 0xE7, 0xEC, 0xED, 0xEE, 0xEF):
        inst.op = "io"
        return
    if opcode == 0xF1:
        inst.op = "int1"
        inst.is_trap = True
        return
    if opcode == 0xF4:
        inst.op = "hlt"
        inst.is_trap = True
        return
    if opcode in (0xF5, 0xF8, 0xF9, 0xFA, 0xFB, 0xFC, 0xFD):
        inst.op = "flagop"
        inst.writes_flags = True
        return
    if opcode in (0xF6, 0xF7):
        inst.op = _GRP3_OPS[reg & 7]
        inst.writes_flags = inst.op != "not"
        size = 1 if opcode == 0xF6 else opsize
        o = _rm_operand(rm, size, rex)
        if inst.op == "test":
            inst.srcs = [o, inst.imm]
        elif inst.op in ("not", "neg"):
            inst.dst = o
            inst.srcs = [o]
        else:   # mul/imul/div/idiv single-operand forms
            inst.dst = _reg(0, size, rex)
            inst.srcs = [_reg(0, size, rex), o, _reg(2, size, rex)]
        return
    if opcode == 0xFE:
        if reg & 7 not in (0, 1):
            raise UndecodableByte(addr, "bad group 4")
        inst.op = "inc" if reg & 7 == 0 else "dec"
        inst.writes_flags = True
        o = _rm_operand(rm, 1, rex)
        inst.dst, inst.srcs = o, [o]
        return
    if opcode == 0xFF:
        sel = reg & 7
        if sel in (0, 1):
            inst.op = "inc" if sel == 0 else "dec"
            inst.writes_flags = True
            o = _rm_operand(rm, opsize, rex)
            inst.dst, inst.srcs = o, [o]
        elif sel == 2:
            inst.op = "call"
            inst.kind = "call-indirect"
            inst.srcs = [_rm_operand(rm, 8, rex)]
        elif sel == 3:
            inst.op = "call"
            inst.kind = "call-indirect"   # far call through memory
        elif sel == 4:
            inst.op = "jmp"
            inst.kind = "jmp-indirect"
            inst.srcs = [_rm_operand(rm, 8, rex)]
        elif sel == 5:
            inst.op = "jmp"
            inst.kind = "jmp-indirect"    # far jmp
        elif sel == 6:
            inst.op = "push"
            inst.srcs = [_rm_operand(rm, 8, rex)]
        else:
            raise UndecodableByte(addr, "bad group 5")
        return
    # remaining opcodes decode but carry no semantics we model
    inst.op = "unknown"


def _decode_0f(cur: _Cursor, inst: Instruction, rex: int, opsize: int, prefixes: list):
    addr = inst.addr
    opcode = cur.u8()

    if opcode == 0x38:
        op3 = cur.u8()
        reg, rm, do, ds = _parse_modrm(cur, rex, False)
        _set_mem(inst, rm, do, ds)
        inst.op = "unknown"
        return
    if opcode == 0x3A:
        op3 = cur.u8()
        reg, rm, do, ds = _parse_modrm(cur, rex, False)
        _set_mem(inst, rm, do, ds)
        _read_imm(cur, inst, "ib", opsize, False)
        inst.op = "unknown"
        return

    if 0x80 <= opcode <= 0x8F:
        _read_imm(cur, inst, "rel32", opsize, False)
        inst.op = "jcc"
        inst.kind = "cond-jmp"
        inst.cond = opcode & 0xF
        inst._rel = (inst.imm, 32)
        return

    if opcode in _NO_MODRM_2B:
        if opcode == 0x0B:
            inst.op = "ud2"
            inst.is_trap = True
        elif opcode == 0x05:
            inst.op = "syscall"
        elif 0xC8 <= opcode <= 0xCF:
            inst.op = "bswap"
            inst.dst = _reg((rex & 1) << 3 | (opcode - 0xC8), opsize, rex)
            inst.srcs = [inst.dst]
        else:
            inst.op = "unknown"
        return

    reg, rm, do, ds = _parse_modrm(cur, rex, False)
    _set_mem(inst, rm, do, ds)
    if opcode in _IMM8_2B:
        _read_imm(cur, inst, "ib", opsize, False)

    if opcode in (0xB6, 0xB7, 0xBE, 0xBF):
        inst.op = "movzx" if opcode in (0xB6, 0xB7) else "movsx"
        src_size = 1 if opcode in (0xB6, 0xBE) else 2
        inst.dst = _reg(reg, opsize, rex)
        inst.srcs = [_rm_operand(rm, src_size, rex)]
        return
    if 0x40 <= opcode <= 0x4F:
        inst.op = "cmov"
        inst.cond = opcode & 0xF
        dst = _reg(reg, opsize, rex)
        inst.dst = dst
        inst.srcs = [dst, _rm_operand(rm, opsize, rex)]
        return
    if 0x90 <= opcode <= 0x9F:
        inst.op = "setcc"
        inst.cond = opcode & 0xF
        inst.dst = _rm_operand(rm, 1, rex)
        return
    if opcode == 0xAF:
        inst.op = "imul"
        inst.writes_flags = True
        dst = _reg(reg, opsize, rex)
        inst.dst = dst
        inst.srcs = [dst, _rm_operand(rm, opsize, rex)]
        return
    if opcode == 0x1F:
        inst.op = "nop"
        return
    if opcode in (0xB0, 0xB1):
        inst.op = "cmpxchg"
        inst.writes_flags = True
        size = 1 if opcode == 0xB0 else opsize
        inst.dst = _rm_operand(rm, size, rex)
        return
    if opcode in (0xC0, 0xC1):
        inst.op = "xadd"
        inst.writes_flags = True
        size = 1 if opcode == 0xC0 else opsize
        inst.dst = _rm_operand(rm, size, rex)
        return
    if opcode in (0xA3, 0xAB, 0xB3, 0xBB):
        inst.op = "bt"
        inst.writes_flags = True
        _rm_operand(rm, opsize, rex)
        return
    if opcode == 0xBA:
        inst.op = "bt"
        inst.writes_flags = True
        _rm_operand(rm, opsize, rex)
        return
    if opcode in (0xBC, 0xBD):
        inst.op = "bsf" if opcode == 0xBC else "bsr"
        inst.writes_flags = True
        inst.dst = _reg(reg, opsize, rex)
        inst.srcs = [_rm_operand(rm, opsize, rex)]
        return
    if opcode == 0xB8 and 0xF3 in prefixes:
        inst.op = "popcnt"
        inst.writes_flags = True
        inst.dst = _reg(reg, opsize, rex)
        inst.srcs = [_rm_operand(rm, opsize, rex)]
        return
    if opcode == 0xB9:
        inst.op = "ud1"
        inst.is_trap = True
        return
    if opcode in (0xA4, 0xA5, 0xAC, 0xAD):
        inst.op = "shld" if opcode in (0xA4, 0xA5) else "shrd"
        inst.writes_flags = True
        inst.dst = _rm_operand(rm, opsize, rex)
        return
    # everything else (SSE/MMX data movement and arithmetic, prefetch,
    # fences, system instructions): length is right, semantics unmodeled
    inst.op = "sse" if 0x10 <= opcode <= 0xFF else "unknown"
    if isinstance(rm, Mem) and rm.size == 0:
        rm.size = 16


def _decode_vex(cur: _Cursor, first: int, inst: Instruction):
    """VEX/EVEX-prefixed instructions: compute length only."""
    addr = inst.addr
    if first == 0xC5:
        cur.u8()
        map_sel = 1
    elif first == 0xC4:
        b1 = cur.u8()
        cur.u8()
        map_sel = b1 & 0x1F
    else:  # EVEX
        b1 = cur.u8()
        cur.u8()
        cur.u8()
        map_sel = b1 & 0x07
    cur.u8()  # opcode
    reg, rm, do, ds = _parse_modrm(cur, 0, False)
    _set_mem(inst, rm, do, ds)
    if map_sel == 3:
        _read_imm(cur, inst, "ib", 4, False)
    inst.op = "sse"


def is_padding_byte_run(data: bytes) -> bool:
    """True when the whole byte run decodes as no-op family or int3 padding."""
    pos = 0
    n = len(data)
    if n == 0:
        return False
    while pos < n:
        b = data[pos]
        if b == 0xCC:
            pos += 1
            continue
        try:
            inst = decode(data[pos : pos + MAX_INSN], 0)
        except UndecodableByte:
            return False
        if inst.op not in ("nop",):
            return False
        pos += inst.size
    return True
