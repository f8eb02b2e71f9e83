from .build import (EN, EX, BasicBlock, ControlFlowGraph, build_cfg,
                    classify_block, decode_function)
from .callgraph import CallGraph, NONRETURN_SEEDS, SETJMP_NAMES, analyze_nonreturn, build_callgraph

__all__ = [
    "EN", "EX", "BasicBlock", "ControlFlowGraph", "build_cfg",
    "classify_block", "decode_function",
    "CallGraph", "NONRETURN_SEEDS", "SETJMP_NAMES",
    "analyze_nonreturn", "build_callgraph",
]
