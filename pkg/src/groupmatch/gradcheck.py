"""Central finite-difference checks of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import Tape, Var, value_of


class NonFiniteError(ArithmeticError):
    """The checked function produced NaN or Inf."""


@dataclass
class GradCheckReport:
    tol: float
    errors: dict[str, float] = field(default_factory=dict)
    reprobed: int = 0

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.errors.values())

    def lines(self) -> list[str]:
        out = [f"{name:<28s} {err:.3e} {'ok' if err < self.tol else 'FAIL'}"
               for name, err in self.errors.items()]
        out.append(f"max relative error {self.max_error:.3e} (tol {self.tol:g}, "
                   f"reprobed {self.reprobed}) -> {'PASS' if self.passed else 'FAIL'}")
        return out


def analytic_grads(f: Callable[[dict[str, Var]], Var],
                   params: Mapping[str, np.ndarray]) -> tuple[float, dict[str, np.ndarray]]:
    with Tape() as tape:
        handles = {k: tape.watch(k, v) for k, v in params.items()}
        loss = f(handles)
        if not isinstance(loss, Var) or loss.tape is not tape:
            return float(value_of(loss)), {k: np.zeros_like(np.asarray(v, float)) for k, v in params.items()}
        return float(loss.value), tape.backward(loss)


def _evaluate(f, params) -> float:
    val = float(value_of(f({k: Var(v) for k, v in params.items()})))
    if not np.isfinite(val):
        raise NonFiniteError("checked function is not finite at a probe point")
    return val


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.0) -> float:
    """max|a - n| over max(max|a|, max|n|, floor); 0 when both vanish."""
    diff = np.max(np.abs(analytic - numeric), initial=0.0)
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), floor)
    if scale == 0.0:
        return 0.0
    return float(diff / scale)


def grad_check(f: Callable[[dict[str, Var]], Var],
               params: Mapping[str, np.ndarray],
               tol: float = 1e-4,
               step: float = 1e-4,
               min_step: float = 1e-7,
               floor: float | None = None) -> GradCheckReport:
    """Compare tape gradients of scalar ``f`` against central differences.

    ``f`` receives a dict of handles keyed like ``params``.  Each entry is
    probed at ``step``.  Where the probe disagrees with the analytic value
    by more than ``tol`` (relative to the parameter's largest gradient), it
    is re-probed at steps shrunk tenfold down to ``min_step``, which separates
    a genuine mismatch from a probe straddling a hinge or rectifier kink.

    Gradients whose entries all lie below ``floor`` (default ``1e-6 * max(1, |f|)``,
    well above central-difference round-off) are compared on that absolute scale.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    f0, grads = analytic_grads(f, params)
    if not np.isfinite(f0):
        raise NonFiniteError("checked function is not finite at the base point")
    report = GradCheckReport(tol=tol)
    if floor is None:
        floor = 1e-6 * max(1.0, abs(f0))

    def central(name, flat_idx, h):
        arr = params[name]
        flat = arr.reshape(-1)
        orig = flat[flat_idx]
        flat[flat_idx] = orig + h
        fp = _evaluate(f, params)
        flat[flat_idx] = orig - h
        fm = _evaluate(f, params)
        flat[flat_idx] = orig
        return (fp - fm) / (2.0 * h)

    for name, arr in params.items():
        a = grads[name].reshape(-1)
        n = np.array([central(name, k, step) for k in range(arr.size)])
        scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0), floor)
        if scale > 0.0:
            bad = np.nonzero(np.abs(a - n) >= tol * scale)[0]
            for k in bad:
                h = step / 10.0
                while h >= min_step and abs(a[k] - n[k]) >= tol * scale:
                    n[k] = central(name, k, h)
                    h /= 10.0
                report.reprobed += 1
        report.errors[name] = relative_error(a, n, floor)
    return report
