"""Extended ELF layout: two new loadable segments for trampolines and coverage data.

The program-header table either grows into a reserved gap left by the linker
(112 bytes right after the original table) or is relocated into the start of
the new code segment. Relocated tables keep the invariant
``vaddr - offset == first-PT_LOAD delta`` so the kernel's AT_PHDR stays valid
for dynamically linked executables on every kernel generation.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

from ..errors import MalformedHeaders, NoHeaderSpace
from .image import (PAGE, PF_R, PF_W, PF_X, PHDR, PT_LOAD, PT_PHDR,
                    ElfModuleView, SHT_NOBITS)

log = logging.getLogger(__name__)

PHDR_SIZE = PHDR.size  # 56
GAP_BYTES = 2 * PHDR_SIZE  # 112: room for the two extra headers

STRATEGY_GAP = "use-reserved-gap"
STRATEGY_RELOCATE = "relocate-program-headers"

REACH = 2**31 - 2**20  # pc-relative reach with safety margin


def _align_up(v: int, a: int) -> int:
    return (v + a - 1) & ~(a - 1)


@dataclass
class PatchLayout:
    header_strategy: str
    code_vaddr: int
    code_offset: int
    code_size: int          # full segment size incl. relocated phdr table
    data_vaddr: int
    data_offset: int
    data_size: int
    tramp_base: int         # vaddr where trampoline bytes begin
    phtab_offset: int       # file offset of the live phdr table in the output
    phnum: int

    @property
    def code_seg(self) -> tuple[int, int, int]:
        return (self.code_vaddr, self.code_size, PF_R | PF_X)

    @property
    def data_seg(self) -> tuple[int, int, int]:
        return (self.data_vaddr, self.data_size, PF_R | PF_W)


def _has_reserved_gap(view: ElfModuleView) -> bool:
    """A usable gap is GAP_BYTES of zeros right after the phdr table, inside
    the first load segment's file image and not claimed by any section."""
    eh = view.ehdr
    gap_start = eh["e_phoff"] + eh["e_phnum"] * PHDR_SIZE
    gap_end = gap_start + GAP_BYTES
    if gap_end > len(view.file_bytes):
        return False
    first_load = next((p for p in view.phdrs if p["p_type"] == PT_LOAD), None)
    if first_load is None:
        return False
    if not (first_load["p_offset"] <= gap_start and gap_end <= first_load["p_offset"] + first_load["p_filesz"]):
        return False
    for sec in view.section_list:
        if sec.sh_type == SHT_NOBITS or sec.size == 0:
            continue
        if sec.offset < gap_end and gap_start < sec.offset + sec.size:
            return False
    return view.file_bytes[gap_start:gap_end] == b"\x00" * GAP_BYTES


def extend_layout(view: ElfModuleView, code_size: int, data_size: int) -> PatchLayout:
    """Place the new code and data segments above every existing segment."""
    if code_size <= 0 or data_size <= 0:
        raise ValueError("code_size and data_size must be positive")
    loads = view.load_segments
    if not loads:
        raise MalformedHeaders("module has no load segments")
    first = next(p for p in view.phdrs if p["p_type"] == PT_LOAD)
    delta0 = first["p_vaddr"] - first["p_offset"]
    if delta0 % PAGE != 0:
        log.warning("first load segment delta %#x not page aligned", delta0)

    use_gap = _has_reserved_gap(view)
    strategy = STRATEGY_GAP if use_gap else STRATEGY_RELOCATE
    phnum = view.ehdr["e_phnum"] + 2
    phtab_size = 0 if use_gap else phnum * PHDR_SIZE

    max_vend = max(s.vaddr + s.memsz for s in loads)
    file_end = len(view.file_bytes)
    code_vaddr = _align_up(max_vend, PAGE)
    while code_vaddr - delta0 < file_end:
        code_vaddr += PAGE
    code_offset = code_vaddr - delta0

    tramp_off_in_seg = _align_up(phtab_size, 16)
    full_code_size = tramp_off_in_seg + code_size

    data_vaddr = _align_up(code_vaddr + full_code_size, PAGE)
    data_offset = data_vaddr - delta0

    min_code = min(s.vaddr for s in loads if s.executable)
    if data_vaddr + data_size - min_code > REACH:
        raise NoHeaderSpace("new segments exceed pc-relative reach of original code")

    phtab_offset = view.ehdr["e_phoff"] if use_gap else code_offset
    return PatchLayout(
        header_strategy=strategy,
        code_vaddr=code_vaddr,
        code_offset=code_offset,
        code_size=full_code_size,
        data_vaddr=data_vaddr,
        data_offset=data_offset,
        data_size=data_size,
        tramp_base=code_vaddr + tramp_off_in_seg,
        phtab_offset=phtab_offset,
        phnum=phnum,
    )


def _pack_phdr(p: dict) -> bytes:
    return PHDR.pack(p["p_type"], p["p_flags"], p["p_offset"], p["p_vaddr"],
                     p["p_paddr"], p["p_filesz"], p["p_memsz"], p["p_align"])


def write_extended(view: ElfModuleView, layout: PatchLayout,
                   tramp_bytes: bytes, data_bytes: bytes,
                   file_edits: list[tuple[int, bytes]]) -> bytes:
    """Produce the patched file image.

    ``file_edits`` are in-place overwrites of original bytes (detours, table
    entries) as (file_offset, bytes) pairs. ``tramp_bytes`` land at
    ``layout.tramp_base``; ``data_bytes`` fill the new data segment.
    """
    if len(tramp_bytes) > layout.code_size - (layout.tramp_base - layout.code_vaddr):
        raise MalformedHeaders("trampoline bytes exceed reserved code segment")
    if len(data_bytes) > layout.data_size:
        raise MalformedHeaders("data bytes exceed reserved data segment")

    out = bytearray(view.file_bytes)
    for off, blob in file_edits:
        if off + len(blob) > len(out):
            raise MalformedHeaders(f"edit at {off:#x} beyond end of file")
        out[off : off + len(blob)] = blob

    new_loads = [
        {"p_type": PT_LOAD, "p_flags": PF_R | PF_X, "p_offset": layout.code_offset,
         "p_vaddr": layout.code_vaddr, "p_paddr": layout.code_vaddr,
         "p_filesz": layout.code_size, "p_memsz": layout.code_size, "p_align": PAGE},
        {"p_type": PT_LOAD, "p_flags": PF_R | PF_W, "p_offset": layout.data_offset,
         "p_vaddr": layout.data_vaddr, "p_paddr": layout.data_vaddr,
         "p_filesz": layout.data_size, "p_memsz": layout.data_size, "p_align": PAGE},
    ]

    eh = dict(view.ehdr)
    phdrs = [dict(p) for p in view.phdrs]

    if layout.header_strategy == STRATEGY_GAP:
        table = phdrs + new_loads
        for p in table:
            if p["p_type"] == PT_PHDR:
                p["p_filesz"] = p["p_memsz"] = len(table) * PHDR_SIZE
        blob = b"".join(_pack_phdr(p) for p in table)
        off = eh["e_phoff"]
        out[off : off + len(blob)] = blob
        e_phoff = eh["e_phoff"]
    else:
        e_phoff = layout.code_offset
        table = phdrs + new_loads
        for p in table:
            if p["p_type"] == PT_PHDR:
                p["p_offset"] = e_phoff
                p["p_vaddr"] = p["p_paddr"] = layout.code_vaddr
                p["p_filesz"] = p["p_memsz"] = len(table) * PHDR_SIZE

    # patch only e_phoff (offset 0x20) and e_phnum (offset 0x38)
    struct.pack_into("<Q", out, 0x20, e_phoff)
    struct.pack_into("<H", out, 0x38, len(table))

    # grow the file out to the new code segment, then the segments themselves
    if layout.code_offset < len(out):
        raise MalformedHeaders("new code segment offset overlaps existing file content")
    out += b"\x00" * (layout.code_offset - len(out))
    code_img = bytearray(layout.code_size)
    if layout.header_strategy == STRATEGY_RELOCATE:
        blob = b"".join(_pack_phdr(p) for p in table)
        code_img[:len(blob)] = blob
    toff = layout.tramp_base - layout.code_vaddr
    code_img[toff : toff + len(tramp_bytes)] = tramp_bytes
    out += bytes(code_img)

    out += b"\x00" * (layout.data_offset - len(out))
    data_img = bytearray(layout.data_size)
    data_img[:len(data_bytes)] = data_bytes
    out += bytes(data_img)
    return bytes(out)
