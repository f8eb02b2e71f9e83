"""ELF64 image parsing.

Parses just enough of the ELF format for static coverage instrumentation:
program headers, sections, symbol tables, dynamic relocations and the PLT.
The view is immutable after load; patching produces a new file.
"""
from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field

from ..errors import MalformedHeaders, NotElf, UnsupportedArch

log = logging.getLogger(__name__)

EI_NIDENT = 16
ELFCLASS64 = 2
ELFDATA2LSB = 1
EM_X86_64 = 62

ET_EXEC = 2
ET_DYN = 3

PT_LOAD = 1
PT_DYNAMIC = 2
PT_INTERP = 3
PT_PHDR = 6
PT_GNU_EH_FRAME = 0x6474E550

PF_X = 1
PF_W = 2
PF_R = 4

SHT_SYMTAB = 2
SHT_STRTAB = 3
SHT_RELA = 4
SHT_NOBITS = 8
SHT_DYNSYM = 11

STT_FUNC = 2

R_X86_64_JUMP_SLOT = 7
R_X86_64_RELATIVE = 8

PAGE = 0x1000

EHDR = struct.Struct("<16sHHIQQQIHHHHHH")
PHDR = struct.Struct("<IIQQQQQQ")
SHDR = struct.Struct("<IIQQQQIIQQ")
SYM = struct.Struct("<IBBHQQ")
RELA = struct.Struct("<QQq")


def fnv1a_64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class LoadSegment:
    vaddr: int
    offset: int
    filesz: int
    memsz: int
    flags: int
    align: int

    @property
    def executable(self) -> bool:
        return bool(self.flags & PF_X)

    @property
    def writable(self) -> bool:
        return bool(self.flags & PF_W)

    def contains_vaddr(self, addr: int, size: int = 1) -> bool:
        return self.vaddr <= addr and addr + size <= self.vaddr + self.memsz


@dataclass(frozen=True)
class Section:
    name: str
    sh_type: int
    flags: int
    vaddr: int
    offset: int
    size: int
    link: int
    entsize: int


@dataclass(frozen=True)
class Symbol:
    name: str
    value: int
    size: int
    info: int
    shndx: int

    @property
    def is_func(self) -> bool:
        return (self.info & 0xF) == STT_FUNC


@dataclass
class ElfModuleView:
    path: str
    file_bytes: bytes
    ehdr: dict
    phdrs: list[dict]
    load_segments: list[LoadSegment]
    sections: dict[str, Section]
    section_list: list[Section]
    symbols: list[Symbol]
    dynamic_symbols: list[Symbol]
    build_hash: int
    plt_symbol_map: dict[int, str] = field(default_factory=dict)
    relative_reloc_offsets: set[int] = field(default_factory=set)

    @property
    def is_pic(self) -> bool:
        return self.ehdr["e_type"] == ET_DYN

    def segment_for_vaddr(self, addr: int) -> LoadSegment | None:
        for seg in self.load_segments:
            if seg.contains_vaddr(addr):
                return seg
        return None

    def vaddr_to_offset(self, addr: int) -> int | None:
        for seg in self.load_segments:
            if seg.vaddr <= addr < seg.vaddr + seg.filesz:
                return seg.offset + (addr - seg.vaddr)
        return None

    def read_vaddr(self, addr: int, size: int) -> bytes:
        """Read bytes at a virtual address from the file image.

        Ranges in a segment's zero-initialized tail (memsz > filesz) read
        as zeros, matching the loader's view.
        """
        out = bytearray()
        pos = addr
        remaining = size
        while remaining > 0:
            seg = self.segment_for_vaddr(pos)
            if seg is None:
                raise MalformedHeaders(f"vaddr {pos:#x} not in any load segment")
            within = pos - seg.vaddr
            file_avail = max(0, seg.filesz - within)
            take = min(remaining, seg.memsz - within)
            if take <= 0:
                raise MalformedHeaders(f"vaddr {pos:#x} beyond segment")
            n_file = min(take, file_avail)
            if n_file:
                off = seg.offset + within
                out += self.file_bytes[off : off + n_file]
            out += b"\x00" * (take - n_file)
            pos += take
            remaining -= take
        return bytes(out)

    def text_section(self) -> Section | None:
        return self.sections.get(".text")

    def function_symbols(self) -> list[Symbol]:
        return [s for s in self.symbols if s.is_func and s.shndx != 0]


def _parse_ehdr(data: bytes) -> dict:
    if len(data) < EHDR.size:
        raise NotElf("file too small for an ELF header")
    (ident, e_type, e_machine, e_version, e_entry, e_phoff, e_shoff, e_flags,
     e_ehsize, e_phentsize, e_phnum, e_shentsize, e_shnum, e_shstrndx) = EHDR.unpack_from(data)
    if ident[:4] != b"\x7fELF":
        raise NotElf("bad ELF magic")
    if ident[4] != ELFCLASS64:
        raise UnsupportedArch("only ELF64 is supported")
    if ident[5] != ELFDATA2LSB:
        raise UnsupportedArch("only little-endian ELF is supported")
    if e_machine != EM_X86_64:
        raise UnsupportedArch(f"unsupported machine {e_machine}, need x86-64")
    return {
        "e_type": e_type,
        "e_machine": e_machine,
        "e_entry": e_entry,
        "e_phoff": e_phoff,
        "e_shoff": e_shoff,
        "e_phentsize": e_phentsize,
        "e_phnum": e_phnum,
        "e_shentsize": e_shentsize,
        "e_shnum": e_shnum,
        "e_shstrndx": e_shstrndx,
    }


def _parse_phdrs(data: bytes, ehdr: dict) -> list[dict]:
    phdrs = []
    off = ehdr["e_phoff"]
    if ehdr["e_phnum"] and (off + ehdr["e_phnum"] * PHDR.size) > len(data):
        raise MalformedHeaders("program header table out of bounds")
    for i in range(ehdr["e_phnum"]):
        p_type, p_flags, p_offset, p_vaddr, p_paddr, p_filesz, p_memsz, p_align = \
            PHDR.unpack_from(data, off + i * PHDR.size)
        phdrs.append({
            "p_type": p_type, "p_flags": p_flags, "p_offset": p_offset,
            "p_vaddr": p_vaddr, "p_paddr": p_paddr, "p_filesz": p_filesz,
            "p_memsz": p_memsz, "p_align": p_align,
        })
    return phdrs


def _read_strtab(data: bytes, off: int, size: int) -> bytes:
    if off + size > len(data):
        raise MalformedHeaders("string table out of bounds")
    return data[off : off + size]


def _str_at(strtab: bytes, off: int) -> str:
    end = strtab.find(b"\x00", off)
    if end < 0:
        end = len(strtab)
    return strtab[off:end].decode("utf-8", "replace")


def _parse_sections(data: bytes, ehdr: dict) -> list[Section]:
    raw = []
    off = ehdr["e_shoff"]
    if off == 0 or ehdr["e_shnum"] == 0:
        return []
    if off + ehdr["e_shnum"] * SHDR.size > len(data):
        raise MalformedHeaders("section header table out of bounds")
    for i in range(ehdr["e_shnum"]):
        (sh_name, sh_type, sh_flags, sh_addr, sh_offset, sh_size,
         sh_link, sh_info, sh_addralign, sh_entsize) = SHDR.unpack_from(data, off + i * SHDR.size)
        raw.append((sh_name, sh_type, sh_flags, sh_addr, sh_offset, sh_size, sh_link, sh_entsize))
    shstrndx = ehdr["e_shstrndx"]
    if shstrndx >= len(raw):
        raise MalformedHeaders("bad e_shstrndx")
    strtab = _read_strtab(data, raw[shstrndx][4], raw[shstrndx][5])
    sections = []
    for (sh_name, sh_type, sh_flags, sh_addr, sh_offset, sh_size, sh_link, sh_entsize) in raw:
        sections.append(Section(
            name=_str_at(strtab, sh_name), sh_type=sh_type, flags=sh_flags,
            vaddr=sh_addr, offset=sh_offset, size=sh_size, link=sh_link, entsize=sh_entsize,
        ))
    return sections


def _parse_symtab(data: bytes, sections: list[Section], symtab: Section) -> list[Symbol]:
    if symtab.link >= len(sections):
        raise MalformedHeaders("symbol table string link out of range")
    strtab = _read_strtab(data, sections[symtab.link].offset, sections[symtab.link].size)
    syms = []
    count = symtab.size // SYM.size
    for i in range(count):
        st_name, st_info, st_other, st_shndx, st_value, st_size = \
            SYM.unpack_from(data, symtab.offset + i * SYM.size)
        syms.append(Symbol(
            name=_str_at(strtab, st_name), value=st_value, size=st_size,
            info=st_info, shndx=st_shndx,
        ))
    return syms


def _decode_plt_stubs(view: ElfModuleView) -> None:
    """Map PLT stub addresses to imported symbol names.

    Each stub's first indirect jmp goes through a GOT slot; .rela.plt tells
    us which symbol owns that slot. Works for .plt, .plt.got and .plt.sec
    layouts without assuming a fixed stub size.
    """
    got_to_name: dict[int, str] = {}
    for sec in view.section_list:
        if sec.sh_type != SHT_RELA or not sec.name.startswith(".rela"):
            continue
        count = sec.size // RELA.size
        for i in range(count):
            r_offset, r_info, _addend = RELA.unpack_from(view.file_bytes, sec.offset + i * RELA.size)
            r_type = r_info & 0xFFFFFFFF
            r_sym = r_info >> 32
            if r_type == R_X86_64_RELATIVE:
                view.relative_reloc_offsets.add(r_offset)
                continue
            if r_sym and r_sym < len(view.dynamic_symbols):
                name = view.dynamic_symbols[r_sym].name
                if name:
                    got_to_name[r_offset] = name

    for sec in view.section_list:
        if sec.name not in (".plt", ".plt.got", ".plt.sec"):
            continue
        body = view.file_bytes[sec.offset : sec.offset + sec.size]
        i = 0
        while i + 6 <= len(body):
            # ff 25 disp32: jmp [rip+disp32]; optional f2/endbr prefix before it
            if body[i] == 0xFF and body[i + 1] == 0x25:
                slot = sec.vaddr + i + 6 + int.from_bytes(body[i + 2 : i + 6], "little", signed=True)
                name = got_to_name.get(slot)
                if name:
                    # attribute the whole 16-byte stub this jmp belongs to
                    stub = sec.vaddr + (i // 16) * 16
                    view.plt_symbol_map.setdefault(stub, name)
                    view.plt_symbol_map.setdefault(sec.vaddr + i, name)
                i += 6
            else:
                i += 1


def load_module(path: str) -> ElfModuleView:
    """Load and parse an ELF64 x86-64 module from disk."""
    with io.open(path, "rb") as f:
        data = f.read()
    ehdr = _parse_ehdr(data)
    phdrs = _parse_phdrs(data, ehdr)
    loads = []
    for ph in phdrs:
        if ph["p_type"] != PT_LOAD:
            continue
        if ph["p_offset"] + ph["p_filesz"] > len(data):
            raise MalformedHeaders("load segment extends past end of file")
        loads.append(LoadSegment(
            vaddr=ph["p_vaddr"], offset=ph["p_offset"], filesz=ph["p_filesz"],
            memsz=ph["p_memsz"], flags=ph["p_flags"], align=ph["p_align"],
        ))
    for i, a in enumerate(loads):
        for b in loads[i + 1:]:
            a_end = a.vaddr + a.memsz
            b_end = b.vaddr + b.memsz
            if a.vaddr < b_end and b.vaddr < a_end:
                raise MalformedHeaders("overlapping load segments")

    section_list = _parse_sections(data, ehdr)
    sections = {s.name: s for s in section_list if s.name}

    symbols: list[Symbol] = []
    dynamic_symbols: list[Symbol] = []
    for sec in section_list:
        if sec.sh_type == SHT_SYMTAB:
            symbols = _parse_symtab(data, section_list, sec)
        elif sec.sh_type == SHT_DYNSYM:
            dynamic_symbols = _parse_symtab(data, section_list, sec)

    view = ElfModuleView(
        path=path,
        file_bytes=data,
        ehdr=ehdr,
        phdrs=phdrs,
        load_segments=loads,
        sections=sections,
        section_list=section_list,
        symbols=symbols,
        dynamic_symbols=dynamic_symbols,
        build_hash=fnv1a_64(data),
    )
    _decode_plt_stubs(view)
    return view
