from .image import ElfModuleView, LoadSegment, Section, Symbol, load_module
from .funcdefs import FunctionDefinition, read_function_definitions
from .ehframe import CfiFunctionRecord, collect_landing_pads, read_cfi_records
from .layout import PatchLayout, extend_layout, write_extended

__all__ = [
    "ElfModuleView",
    "LoadSegment",
    "Section",
    "Symbol",
    "load_module",
    "FunctionDefinition",
    "read_function_definitions",
    "CfiFunctionRecord",
    "collect_landing_pads",
    "read_cfi_records",
    "PatchLayout",
    "extend_layout",
    "write_extended",
]
