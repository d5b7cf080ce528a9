from .check import TapeFunction, finite_diff_check
from .tape import Tape, Var, bind_params, collect_grad

__all__ = ["Tape", "TapeFunction", "Var", "bind_params", "collect_grad", "finite_diff_check"]
