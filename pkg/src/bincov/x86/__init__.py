from .decode import Instruction, Mem, Reg, decode, is_padding_byte_run
from . import encode

__all__ = ["Instruction", "Mem", "Reg", "decode", "is_padding_byte_run", "encode"]
