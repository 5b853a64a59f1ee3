########################
# Periodic Correction g #
########################

from dataclasses import dataclass
import math
from typing import Any, Dict, Tuple

import numpy as np
import pandas as pd

from app.exceptions import ConvergenceError, ValidationError
from app.input_validators import InputValidator
from app.logger import Logger
from app.protocols import ProtocolSpec
from app.update_function import (
    MajorityTypeFunction,
    advance_phases,
    build_function,
    inverse_delta,
)

A_START = 8
A_INCREMENT = 4
A_CAP = 200
# Applications of f allowed beyond a before an entry must reach the pure-power regime
B_SLACK = 5000

KOENIGS_MAX_TERMS = 200
KOENIGS_RESIDUAL_TOL = 1e-6
KOENIGS_STEP_TOL = 1e-12


@dataclass
class GEvaluation:
    values: np.ndarray
    a_used: int
    b_used: int
    change: float


def _truncated_g(fn: MajorityTypeFunction, x: np.ndarray, a: int) -> Tuple[np.ndarray, int]:
    """
    Evaluate the inner b-limit of g exactly for a fixed a.

    Once x_b < 1e-30 the recursion is L -> m L + ln beta, whose orbit satisfies
    L_{b+j} + c = m^j (L_b + c) with c = ln(beta)/(m-1), so
    b - log_m|L_b + c| is already the limit in b.
    """
    start = np.power(fn.gamma, -(a + x))
    state = advance_phases(fn, start, a + B_SLACK, stop_at_pure_power=True)
    unfinished = ~state.finished()
    b_used = int(state.steps.max())
    if unfinished.any():
        raise ConvergenceError(
            f"Iterates of {fn.protocol.shorthand()} did not reach the pure-power regime",
            a_used=a,
            b_used=b_used,
        )
    c = math.log(fn.beta) / (fn.m - 1)
    log_m = math.log(fn.m)
    inner = state.steps - a - np.log(np.abs(state.ln_x + c)) / log_m
    return 2.0 - math.log(2.0) / log_m - x + inner, b_used


def compute_g_with_diagnostics(spec: ProtocolSpec, x: Any, tol: float = 1e-6) -> GEvaluation:
    """
    Evaluate g on an array of points, refining a until two successive values agree.

    a starts at 8 and grows by 4 per refinement; b is taken adaptively as the
    first iterate in the pure-power regime.

    Raises:
        ConvergenceError: If the refinements still differ by tol once a reaches 200.
    """
    fn = build_function(spec)
    tolerance = InputValidator.validate_positive_real(tol, "tol")
    points = np.atleast_1d(np.asarray(x, dtype=float))
    a = A_START
    previous, b_used = _truncated_g(fn, points, a)
    while True:
        if a + A_INCREMENT > A_CAP:
            raise ConvergenceError(
                f"g for {spec.shorthand()} did not converge to tol={tolerance!r}",
                a_used=a,
                b_used=b_used,
            )
        current, b_used = _truncated_g(fn, points, a + A_INCREMENT)
        change = float(np.max(np.abs(current - previous)))
        a += A_INCREMENT
        if change < tolerance:
            Logger.debugLog(f"g for {spec.shorthand()} converged: a={a}, b={b_used}, change={change!r}")
            return GEvaluation(current, a, b_used, change)
        previous = current


def compute_g(spec: ProtocolSpec, x: Any, tol: float = 1e-6) -> Any:
    result = compute_g_with_diagnostics(spec, x, tol)
    return float(result.values[0]) if np.ndim(x) == 0 else result.values


def compute_h(spec: ProtocolSpec, x: Any, tol: float = 1e-6) -> Any:
    """h(x) = g(x) + x."""
    return compute_g(spec, x, tol) + (float(x) if np.ndim(x) == 0 else np.asarray(x, dtype=float))


@dataclass
class GFunctionApprox:
    """
    Tabulation of g on [0, 1) with periodic piecewise-linear interpolation.

    tol is the change seen on the last refinement of a plus an estimate of the
    interpolation error, max |second difference| / 8.
    """
    protocol: ProtocolSpec
    grid: np.ndarray
    values: np.ndarray
    a_used: int
    b_used: int
    tol: float

    def evaluate(self, x: Any) -> Any:
        points = np.mod(np.asarray(x, dtype=float), 1.0)
        result = np.interp(points, self.grid, self.values, period=1.0)
        return float(result) if np.ndim(x) == 0 else result

    def h(self, x: Any) -> Any:
        return self.evaluate(x) + (float(x) if np.ndim(x) == 0 else np.asarray(x, dtype=float))

    def _h_table(self) -> Tuple[np.ndarray, np.ndarray]:
        knots = np.append(self.grid, 1.0)
        heights = np.append(self.values + self.grid, self.values[0] + 1.0)
        return knots, heights

    def is_h_monotone(self) -> bool:
        _, heights = self._h_table()
        return bool(np.all(np.diff(heights) > 0.0))

    def h_inverse(self, v: Any) -> Any:
        """
        Invert the interpolated h using h(y + 1) = h(y) + 1.

        Raises:
            ValidationError: If the tabulated h is not strictly increasing.
        """
        if not self.is_h_monotone():
            raise ValidationError(f"h for {self.protocol.shorthand()} is not strictly increasing")
        knots, heights = self._h_table()
        values = np.asarray(v, dtype=float)
        shift = np.floor(values - heights[0])
        result = np.interp(values - shift, heights, knots) + shift
        return float(result) if np.ndim(v) == 0 else result

    @property
    def g0(self) -> float:
        return float(self.values[0])

    def value_range(self) -> float:
        return float(self.values.max() - self.values.min())

    def mean(self) -> float:
        return float(self.values.mean())

    def to_frame(self) -> pd.DataFrame:
        """Plot data: x and the offset g(x) - g(0)."""
        return pd.DataFrame({"x": self.grid, "g": self.values - self.values[0]})

    def metadata(self) -> Dict[str, Any]:
        return {
            "protocol": self.protocol.to_dict(),
            "g0": self.g0,
            "a_used": self.a_used,
            "b_used": self.b_used,
            "tol": self.tol,
            "grid_size": int(self.grid.size),
        }


def build_g_approx(spec: ProtocolSpec, grid_size: int = 1024, tol: float = 1e-6) -> GFunctionApprox:
    """Tabulate g for a protocol on grid_size equispaced points of [0, 1)."""
    size = InputValidator.validate_positive_int(grid_size, "grid_size", minimum=4)
    grid = np.arange(size) / size
    result = compute_g_with_diagnostics(spec, grid, tol)
    closed = np.append(result.values, result.values[0])
    interpolation = float(np.max(np.abs(np.diff(closed, n=2)))) / 8.0
    approx = GFunctionApprox(
        protocol=spec,
        grid=grid,
        values=result.values,
        a_used=result.a_used,
        b_used=result.b_used,
        tol=result.change + interpolation,
    )
    Logger.infoLog(
        f"Tabulated g for {spec.shorthand()}: g(0)={approx.g0!r}, range={approx.value_range()!r}, "
        f"a={approx.a_used}, b={approx.b_used}, tol={approx.tol!r}"
    )
    return approx


@dataclass
class KoenigsResult:
    value: float
    residual: float
    terms: int


def _koenigs_product(fn: MajorityTypeFunction, x: float, truncation: int) -> Tuple[float, int, bool]:
    # The product (1/2 - x) prod eta(f^(-j)(x)) telescopes to gamma^J (1/2 - f^(-J)(x))
    delta = 0.5 - x
    log_value = math.log(delta)
    for term in range(1, truncation + 1):
        previous = delta
        delta = inverse_delta(fn, previous)
        step = math.log(fn.gamma) + math.log(delta) - math.log(previous)
        log_value += step
        if abs(step) < KOENIGS_STEP_TOL:
            return math.exp(log_value), term, True
    return math.exp(log_value), truncation, False


def koenigs_m0(spec: ProtocolSpec, x: float, truncation: int = KOENIGS_MAX_TERMS) -> KoenigsResult:
    """
    Positive solution M_0 of M(f(x)) = gamma M(x) on (0, 1/2).

    The residual |M_0(f(x)) - gamma M_0(x)| / M_0(x) is computed from two
    independent products.

    Raises:
        ValidationError: If x is outside (0, 1/2).
        ConvergenceError: If the residual stays above 1e-6 within the truncation.
    """
    fn = build_function(spec)
    point = InputValidator._to_float(x, "x")
    if not 0.0 < point < 0.5:
        raise ValidationError(f"x must lie in (0, 1/2), got {x}")
    terms = InputValidator.validate_positive_int(truncation, "truncation")
    terms = min(terms, KOENIGS_MAX_TERMS)

    value, used, _ = _koenigs_product(fn, point, terms)
    image, image_used, _ = _koenigs_product(fn, float(fn(point)), terms)
    residual = abs(image - fn.gamma * value) / value
    if residual >= KOENIGS_RESIDUAL_TOL:
        raise ConvergenceError(
            f"Koenigs product for {spec.shorthand()} at x={point!r} has residual {residual!r}",
            terms=max(used, image_used),
        )
    return KoenigsResult(value, residual, max(used, image_used))
