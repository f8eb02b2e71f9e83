"""Function definitions from linker symbols, with CFI fallback for stripped modules."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from ..errors import NoDefinitionSource
from .image import ElfModuleView

log = logging.getLogger(__name__)


@dataclass
class FunctionDefinition:
    start: int
    size: int
    name: str = ""
    aux_entries: set[int] = field(default_factory=set)
    exits: set[int] = field(default_factory=set)

    @property
    def main_entry(self) -> int:
        return self.start

    @property
    def end(self) -> int:
        return self.start + self.size

    def contains(self, addr: int) -> bool:
        return self.start <= addr < self.end

    def __repr__(self) -> str:
        return f"<fn {self.name or '?'} {self.start:#x}+{self.size:#x}>"


def _dedup_definitions(defs: list[FunctionDefinition]) -> list[FunctionDefinition]:
    """Drop zero-size and overlapping definitions, keeping the first by address."""
    defs.sort(key=lambda d: (d.start, -d.size))
    out: list[FunctionDefinition] = []
    for d in defs:
        if d.size == 0:
            log.warning("dropping zero-size function %s at %#x", d.name, d.start)
            continue
        if out and d.start < out[-1].end:
            log.warning("dropping %s at %#x: overlaps %s", d.name, d.start, out[-1].name)
            continue
        out.append(d)
    return out


def read_function_definitions(view: ElfModuleView) -> list[FunctionDefinition]:
    """One definition per function symbol inside .text, sorted by start.

    When the symbol table is stripped, definitions come from the FDE records
    in .eh_frame instead (start = pc_begin, size = pc_range).
    """
    text = view.text_section()
    defs: list[FunctionDefinition] = []
    if view.symbols:
        for sym in view.function_symbols():
            if text is not None and not (text.vaddr <= sym.value < text.vaddr + text.size):
                continue
            defs.append(FunctionDefinition(start=sym.value, size=sym.size, name=sym.name))
        if defs:
            return _dedup_definitions(defs)

    # stripped: fall back to CFI records
    from .ehframe import read_cfi_records

    records = read_cfi_records(view)
    for rec in records:
        if text is not None and not (text.vaddr <= rec.fde_start < text.vaddr + text.size):
            continue
        defs.append(FunctionDefinition(start=rec.fde_start, size=rec.fde_range,
                                       name=f"fde_{rec.fde_start:x}"))
    if not defs:
        raise NoDefinitionSource("module has neither function symbols nor CFI records")
    return _dedup_definitions(defs)
