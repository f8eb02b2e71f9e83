"""Tiny fixed-shape instruction emitters used by the patcher."""
from __future__ import annotations

import struct

from ..errors import Unencodable

INT3 = 0xCC


def _rel32(src_end: int, dst: int) -> bytes:
    disp = dst - src_end
    if not -(1 << 31) <= disp < (1 << 31):
        raise Unencodable(f"rel32 displacement {disp:#x} out of range")
    return struct.pack("<i", disp)


def jmp_rel32(addr: int, target: int) -> bytes:
    return b"\xe9" + _rel32(addr + 5, target)


def call_rel32(addr: int, target: int) -> bytes:
    return b"\xe8" + _rel32(addr + 5, target)


def jmp_rel8(addr: int, target: int) -> bytes:
    disp = target - (addr + 2)
    if not -128 <= disp < 128:
        raise Unencodable(f"rel8 displacement {disp} out of range")
    return b"\xeb" + struct.pack("<b", disp)


def jcc_rel32(cond: int, addr: int, target: int) -> bytes:
    if not 0 <= cond <= 0xF:
        raise Unencodable(f"bad condition code {cond}")
    return bytes([0x0F, 0x80 | cond]) + _rel32(addr + 6, target)


def coverage_store(addr: int, slot_vaddr: int) -> bytes:
    """mov byte [rip+disp32], 1 -- the 7-byte coverage update."""
    disp = slot_vaddr - (addr + 7)
    if not -(1 << 31) <= disp < (1 << 31):
        raise Unencodable(f"coverage slot displacement {disp:#x} out of range")
    return b"\xc6\x05" + struct.pack("<i", disp) + b"\x01"


COVERAGE_STORE_LEN = 7
DETOUR_LEN = 5
SHORT_DETOUR_LEN = 2


def add_qword_rsp(imm: int) -> bytes:
    """add qword [rsp], imm -- return-address adjustment."""
    if -128 <= imm < 128:
        return b"\x48\x83\x04\x24" + struct.pack("<b", imm)
    if -(1 << 31) <= imm < (1 << 31):
        return b"\x48\x81\x04\x24" + struct.pack("<i", imm)
    raise Unencodable(f"rsp adjustment {imm:#x} out of range")


def sub_qword_rsp(imm: int) -> bytes:
    """sub qword [rsp], imm -- Fig-5 style return-address adjustment."""
    if -128 <= imm < 128:
        return b"\x48\x83\x2c\x24" + struct.pack("<b", imm)
    if -(1 << 31) <= imm < (1 << 31):
        return b"\x48\x81\x2c\x24" + struct.pack("<i", imm)
    raise Unencodable(f"rsp adjustment {imm:#x} out of range")


def call_next() -> bytes:
    """call +0: pushes the address of the following instruction."""
    return b"\xe8\x00\x00\x00\x00"
