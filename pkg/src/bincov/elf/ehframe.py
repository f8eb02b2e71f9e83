"""Call-frame information: .eh_frame FDE walk and LSDA landing-pad extraction.

Follows the Itanium ABI / DWARF EH encodings as emitted by gcc and clang on
x86-64. Unknown pointer encodings abort only the record they appear in.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

from ..errors import MalformedLsda
from .image import ElfModuleView

log = logging.getLogger(__name__)

DW_EH_PE_omit = 0xFF
DW_EH_PE_absptr = 0x00
DW_EH_PE_uleb128 = 0x01
DW_EH_PE_udata2 = 0x02
DW_EH_PE_udata4 = 0x03
DW_EH_PE_udata8 = 0x04
DW_EH_PE_sleb128 = 0x09
DW_EH_PE_sdata2 = 0x0A
DW_EH_PE_sdata4 = 0x0B
DW_EH_PE_sdata8 = 0x0C

DW_EH_PE_pcrel = 0x10
DW_EH_PE_textrel = 0x20
DW_EH_PE_datarel = 0x30
DW_EH_PE_funcrel = 0x40
DW_EH_PE_indirect = 0x80


@dataclass
class CfiFunctionRecord:
    fde_start: int
    fde_range: int
    lsda_ptr: int | None = None
    landing_pads: set[int] = field(default_factory=set)


class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def eof(self) -> bool:
        return self.pos >= len(self.data)

    def u8(self) -> int:
        v = self.data[self.pos]
        self.pos += 1
        return v

    def u16(self) -> int:
        v = struct.unpack_from("<H", self.data, self.pos)[0]
        self.pos += 2
        return v

    def u32(self) -> int:
        v = struct.unpack_from("<I", self.data, self.pos)[0]
        self.pos += 4
        return v

    def u64(self) -> int:
        v = struct.unpack_from("<Q", self.data, self.pos)[0]
        self.pos += 8
        return v

    def s16(self) -> int:
        v = struct.unpack_from("<h", self.data, self.pos)[0]
        self.pos += 2
        return v

    def s32(self) -> int:
        v = struct.unpack_from("<i", self.data, self.pos)[0]
        self.pos += 4
        return v

    def s64(self) -> int:
        v = struct.unpack_from("<q", self.data, self.pos)[0]
        self.pos += 8
        return v

    def uleb(self) -> int:
        result = 0
        shift = 0
        while True:
            b = self.u8()
            result |= (b & 0x7F) << shift
            if not (b & 0x80):
                return result
            shift += 7

    def sleb(self) -> int:
        result = 0
        shift = 0
        while True:
            b = self.u8()
            result |= (b & 0x7F) << shift
            shift += 7
            if not (b & 0x80):
                if b & 0x40:
                    result -= 1 << shift
                return result

    def cstr(self) -> bytes:
        end = self.data.index(b"\x00", self.pos)
        s = self.data[self.pos:end]
        self.pos = end + 1
        return s

    def encoded(self, enc: int, cur_vaddr: int) -> int | None:
        """Read a DWARF EH encoded pointer. cur_vaddr is the virtual address
        of the field being read (for pc-relative application)."""
        if enc == DW_EH_PE_omit:
            return None
        fmt = enc & 0x0F
        app = enc & 0x70
        base = cur_vaddr if app == DW_EH_PE_pcrel else 0
        if fmt == DW_EH_PE_absptr:
            v = self.u64()
        elif fmt == DW_EH_PE_uleb128:
            v = self.uleb()
        elif fmt == DW_EH_PE_udata2:
            v = self.u16()
        elif fmt == DW_EH_PE_udata4:
            v = self.u32()
        elif fmt == DW_EH_PE_udata8:
            v = self.u64()
        elif fmt == DW_EH_PE_sleb128:
            v = self.sleb()
        elif fmt == DW_EH_PE_sdata2:
            v = self.s16()
        elif fmt == DW_EH_PE_sdata4:
            v = self.s32()
        elif fmt == DW_EH_PE_sdata8:
            v = self.s64()
        else:
            raise MalformedLsda(f"unsupported pointer encoding {enc:#x}")
        if app in (DW_EH_PE_textrel, DW_EH_PE_datarel, DW_EH_PE_funcrel):
            raise MalformedLsda(f"unsupported pointer application {enc:#x}")
        return (base + v) & 0xFFFFFFFFFFFFFFFF


def _encoded_size(enc: int, rd: _Reader) -> None:
    """Skip over an encoded pointer without interpreting it."""
    fmt = enc & 0x0F
    if fmt == DW_EH_PE_absptr or fmt == DW_EH_PE_udata8 or fmt == DW_EH_PE_sdata8:
        rd.pos += 8
    elif fmt in (DW_EH_PE_udata2, DW_EH_PE_sdata2):
        rd.pos += 2
    elif fmt in (DW_EH_PE_udata4, DW_EH_PE_sdata4):
        rd.pos += 4
    elif fmt in (DW_EH_PE_uleb128, DW_EH_PE_sleb128):
        rd.uleb()
    else:
        raise MalformedLsda(f"unsupported pointer encoding {enc:#x}")


@dataclass
class _Cie:
    fde_enc: int = DW_EH_PE_absptr
    lsda_enc: int = DW_EH_PE_omit
    has_aug_data: bool = False


def _parse_cie(rd: _Reader, sec_vaddr: int) -> _Cie:
    cie = _Cie()
    version = rd.u8()
    aug = rd.cstr()
    rd.uleb()            # code alignment
    rd.sleb()            # data alignment
    if version == 1:
        rd.u8()          # return address register
    else:
        rd.uleb()
    if aug.startswith(b"z"):
        cie.has_aug_data = True
        aug_len = rd.uleb()
        end = rd.pos + aug_len
        for ch in aug[1:]:
            c = chr(ch)
            if c == "P":
                penc = rd.u8()
                _encoded_size(penc & 0x7F, rd)
            elif c == "L":
                cie.lsda_enc = rd.u8()
            elif c == "R":
                cie.fde_enc = rd.u8()
            elif c in ("S", "B"):
                pass
            else:
                break
        rd.pos = end
    return cie


def read_cfi_records(view: ElfModuleView) -> list[CfiFunctionRecord]:
    """Walk every FDE in .eh_frame; returns one record per FDE."""
    sec = view.sections.get(".eh_frame")
    if sec is None or sec.size == 0:
        return []
    data = view.file_bytes[sec.offset : sec.offset + sec.size]
    rd = _Reader(data)
    cies: dict[int, _Cie] = {}
    records: list[CfiFunctionRecord] = []
    while not rd.eof():
        rec_off = rd.pos
        if rd.pos + 4 > len(data):
            break
        length = rd.u32()
        if length == 0:
            break
        if length == 0xFFFFFFFF:
            length = rd.u64()
        body_end = rd.pos + length
        if body_end > len(data):
            log.warning("truncated CFI record at %#x", sec.vaddr + rec_off)
            break
        id_off = rd.pos
        cie_ptr = rd.u32()
        try:
            if cie_ptr == 0:
                cies[rec_off] = _parse_cie(rd, sec.vaddr)
            else:
                cie = cies.get(id_off - cie_ptr)
                if cie is None:
                    raise MalformedLsda("FDE references unknown CIE")
                pc_field_vaddr = sec.vaddr + rd.pos
                pc_begin = rd.encoded(cie.fde_enc, pc_field_vaddr)
                pc_range = rd.encoded(cie.fde_enc & 0x0F, 0)
                lsda = None
                if cie.has_aug_data:
                    aug_len = rd.uleb()
                    aug_end = rd.pos + aug_len
                    if cie.lsda_enc != DW_EH_PE_omit and aug_len:
                        lsda = rd.encoded(cie.lsda_enc, sec.vaddr + rd.pos)
                    rd.pos = aug_end
                if pc_begin is not None and pc_range is not None:
                    records.append(CfiFunctionRecord(
                        fde_start=pc_begin, fde_range=pc_range, lsda_ptr=lsda))
        except (MalformedLsda, struct.error, IndexError, ValueError) as exc:
            log.warning("skipping malformed CFI record at %#x: %s", sec.vaddr + rec_off, exc)
        rd.pos = body_end
    return records


def _decode_lsda(view: ElfModuleView, lsda_vaddr: int, func_start: int) -> set[int]:
    """Decode one gcc_except_table region; returns landing pad addresses."""
    # LSDA size is implicit; read a generous window and stop at the call-site
    # table length.
    window = view.read_vaddr(lsda_vaddr, min(0x10000, 4096))
    rd = _Reader(window)
    lpstart_enc = rd.u8()
    lpstart = func_start
    if lpstart_enc != DW_EH_PE_omit:
        v = rd.encoded(lpstart_enc, lsda_vaddr + rd.pos)
        if v is not None:
            lpstart = v
    ttype_enc = rd.u8()
    if ttype_enc != DW_EH_PE_omit:
        rd.uleb()  # offset to types table, unused here
    cs_enc = rd.u8()
    cs_len = rd.uleb()
    cs_end = rd.pos + cs_len
    if cs_end > len(window):
        raise MalformedLsda(f"call-site table extends past window at {lsda_vaddr:#x}")
    pads: set[int] = set()
    while rd.pos < cs_end:
        rd.encoded(cs_enc, 0)           # region start (function-relative)
        rd.encoded(cs_enc, 0)           # region length
        lp = rd.encoded(cs_enc, 0)      # landing pad offset
        rd.uleb()                       # action
        if lp:
            pads.add(lpstart + lp)
    return pads


def collect_landing_pads(view: ElfModuleView) -> dict[int, set[int]]:
    """Map function start -> landing pad addresses, from FDEs with LSDA pointers.

    Absence of .eh_frame yields an empty map. A malformed LSDA skips only
    that record.
    """
    out: dict[int, set[int]] = {}
    for rec in read_cfi_records(view):
        if rec.lsda_ptr is None:
            continue
        try:
            pads = _decode_lsda(view, rec.lsda_ptr, rec.fde_start)
        except (MalformedLsda, struct.error, IndexError, ValueError) as exc:
            log.warning("bad LSDA for function %#x: %s", rec.fde_start, exc)
            continue
        in_range = {p for p in pads if rec.fde_start <= p < rec.fde_start + rec.fde_range}
        dropped = pads - in_range
        if dropped:
            log.warning("LSDA pads outside FDE range for %#x: %s",
                        rec.fde_start, [hex(p) for p in dropped])
        rec.landing_pads = in_range
        if in_range:
            out.setdefault(rec.fde_start, set()).update(in_range)
    return out
