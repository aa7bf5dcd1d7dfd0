"""Central finite-difference gradient checks and the registered check suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .tensor import Tensor

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
DEFAULT_STEP = 1e-4


@dataclass(frozen=True)
class GradCheckReport:
    name: str
    max_relative_error: float
    worst_index: int
    passed: bool
    tolerance: float
    refined: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "max_relative_error": self.max_relative_error,
            "worst_index": self.worst_index,
            "passed": self.passed,
            "tolerance": self.tolerance,
            "refined": self.refined,
        }


def _central_difference(f: Callable[[Tensor], Tensor], x: Tensor, index: int, h: float) -> float:
    flat = x.data.reshape(-1)
    original = flat[index]
    flat[index] = original + h
    plus = f(x).item()
    flat[index] = original - h
    minus = f(x).item()
    flat[index] = original
    return (plus - minus) / (2.0 * h)


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    tol: float = DEFAULT_TOLERANCE,
    h: float = DEFAULT_STEP,
    corrupt: bool = False,
    name: str = "",
    refinements: int = 2,
) -> GradCheckReport:
    """Compare the autograd gradient of scalar ``f`` at ``x`` with central differences.

    ``f`` must rebuild its graph on every call; ``x.data`` is perturbed in place and
    restored. The error is max|a - n| / max(max|a|, max|n|, 1e-8).

    A coordinate whose difference disagrees with the analytic value is re-sampled
    with steps h/10, h/100, ... (up to ``refinements`` times): a ReLU kink inside
    the step window disappears as the window shrinks, a wrong gradient does not.
    With ``corrupt`` the analytic gradient is deliberately perturbed (negative control).
    """
    x.grad = None
    f(x).backward()
    analytic = np.zeros(x.shape) if x.grad is None else np.array(x.grad, dtype=np.float64)
    if corrupt:
        analytic = analytic * 1.5 + 1e-3

    numeric = np.zeros(x.shape)
    for i in range(x.size):
        numeric.flat[i] = _central_difference(f, x, i, h)

    def scale() -> float:
        return max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)

    refined = 0
    for level in range(1, refinements + 1):
        suspects = np.flatnonzero(np.abs(analytic - numeric).reshape(-1) > tol * scale())
        if suspects.size == 0:
            break
        for i in suspects:
            numeric.flat[i] = _central_difference(f, x, int(i), h / 10**level)
        refined += int(suspects.size)

    diff = np.abs(analytic - numeric)
    error = float(diff.max(initial=0.0) / scale())
    worst = int(diff.argmax()) if diff.size else 0
    report = GradCheckReport(name, error, worst, error <= tol, tol, refined)
    logger.debug("gradcheck %s: error=%.3e worst=%d refined=%d passed=%s", name, error, worst, refined, report.passed)
    return report


def worst_of(name: str, reports: List[GradCheckReport]) -> GradCheckReport:
    """Collapse per-input reports into one carrying the largest error."""
    worst = max(reports, key=lambda r: r.max_relative_error)
    return GradCheckReport(
        name=f"{name}[{worst.name}]" if worst.name else name,
        max_relative_error=worst.max_relative_error,
        worst_index=worst.worst_index,
        passed=all(r.passed for r in reports),
        tolerance=worst.tolerance,
        refined=sum(r.refined for r in reports),
    )


# Check registry, keyed by scope ("op", "block", "model").
CHECKS: Dict[str, Dict[str, Callable[..., GradCheckReport]]] = {}


def register_check(scope: str, name: str):
    def wrapper(func):
        CHECKS.setdefault(scope, {})[name] = func
        return func
    return wrapper


def run_checks(scope: str, tol: float = DEFAULT_TOLERANCE, corrupt: bool = False) -> List[GradCheckReport]:
    # Importing the suite registers its checks.
    from . import checks  # noqa: F401

    if scope not in CHECKS:
        raise ValueError(f"No gradient checks registered for scope {scope}")
    reports = []
    for name, check in CHECKS[scope].items():
        report = check(tol=tol, corrupt=corrupt)
        logger.info("gradcheck %s/%s error=%.3e passed=%s", scope, name, report.max_relative_error, report.passed)
        reports.append(report)
    return reports
