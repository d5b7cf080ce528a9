from typing import Callable, Dict, Optional, Tuple

import numpy as np

from src.params.store import ParamVector
from src.utils.errors import ContractViolation, NumericError

from .tape import Tape, Var, bind_params, collect_grad

Traced = Callable[[Tape, Dict[str, Var]], Var]


class TapeFunction:
    """A scalar map written with tape ops.

    Calling it returns the value at a ParamVector; ``grad`` runs the backward
    pass, so ``finite_diff_check`` needs no separate gradient for it.
    """

    def __init__(self, fn: Traced):
        self.fn = fn

    def _trace(self, x: ParamVector) -> Tuple[Tape, Dict[str, Var], Var]:
        tape = Tape()
        bound = bind_params(tape, x)
        out = self.fn(tape, bound)
        if out.value.size != 1:
            raise ContractViolation(f"Traced function must be scalar, got shape {out.shape}.")
        return tape, bound, out

    def __call__(self, x: ParamVector) -> float:
        return float(self._trace(x)[2].value)

    def grad(self, x: ParamVector) -> np.ndarray:
        tape, bound, out = self._trace(x)
        return collect_grad(tape.backward(out), bound, x.layout)


def _evaluate(f: Callable[[ParamVector], float], x: ParamVector) -> float:
    value = float(f(x))
    if not np.isfinite(value):
        raise NumericError("Function value is not finite during the gradient check.")
    return value


def finite_diff_check(
    f: Callable[[ParamVector], float],
    x: ParamVector,
    h: float,
    grad: Optional[Callable[[ParamVector], np.ndarray]] = None,
) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    The analytic gradient is ``grad`` when given, otherwise the tape gradient
    of a :class:`TapeFunction` ``f``.
    """
    if h <= 0:
        raise ContractViolation("Finite-difference step h must be positive.")
    if grad is None:
        if not isinstance(f, TapeFunction):
            raise ContractViolation("Pass grad, or give f as a TapeFunction.")
        grad = f.grad
    analytic = np.asarray(grad(x), dtype=np.float64).reshape(-1)
    if analytic.shape[0] != len(x):
        raise ContractViolation("Analytic gradient length does not match parameters.")
    if not np.all(np.isfinite(analytic)):
        raise NumericError("Analytic gradient is not finite.")

    worst = 0.0
    base = x.values
    for index in range(len(x)):
        shifted = base.copy()
        shifted[index] = base[index] + h
        upper = _evaluate(f, x.replace(shifted))
        shifted[index] = base[index] - h
        lower = _evaluate(f, x.replace(shifted))
        numeric = (upper - lower) / (2.0 * h)
        error = abs(analytic[index] - numeric) / max(1.0, abs(analytic[index]))
        worst = max(worst, error)
    return worst
