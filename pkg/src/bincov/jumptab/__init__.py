from .analyze import (JumpTable, TrialReport, analyze_function_tables,
                      recover_table, run_control_trials, run_data_trials)
from .microexec import MicroExecEnv
from .slicing import Slice, backward_slice, find_bound_condition

__all__ = [
    "JumpTable", "TrialReport", "MicroExecEnv", "Slice",
    "analyze_function_tables", "backward_slice", "find_bound_condition",
    "recover_table", "run_control_trials", "run_data_trials",
]
