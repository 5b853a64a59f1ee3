########################
# Update Functions     #
########################

from dataclasses import dataclass, field
from functools import lru_cache
import math
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import optimize, stats

from app.exceptions import ValidationError
from app.input_validators import InputValidator
from app.logger import Logger
from app.protocols import (
    PURE_POWER_THRESHOLD,
    CustomPolynomial,
    KMaj,
    ProtocolSpec,
)

# Regime switches for iterating towards 0 from just below 1/2
DELTA_SWITCH = 0.1
LOG_SWITCH = 1e-4

SYMMETRY_TOL = 1e-12
MONOTONE_TOL = 1e-12
CONVEXITY_TOL = 1e-9
FIXED_POINT_TOL = 1e-12
LIMIT_POINTS = (1e-3, 1e-4, 1e-5)
LIMIT_RTOL = 1e-2

_REGIME_DELTA, _REGIME_LINEAR, _REGIME_LOG, _REGIME_PURE = range(4)


@lru_cache(maxsize=64)
def _gauss_legendre(nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(nodes)


@dataclass(frozen=True)
class MajorityTypeFunction:
    """
    An update rule f together with its certified parameters.

    f(x) = x^m (beta + p(x)) near 0 and f'(1/2) = gamma > 1. Instances are
    immutable; every method is vectorised and pure.
    """
    protocol: ProtocolSpec
    m: int
    beta: float
    gamma: float
    smoothness_order: int = field(default=2)

    def __call__(self, x: Any) -> Any:
        return self.protocol.evaluate(x)

    @property
    def evaluator(self):
        return self.protocol.evaluate

    def derivative(self, x: Any) -> Any:
        return self.protocol.derivative(x)

    def leading_ratio(self, x: Any) -> Any:
        return self.protocol.leading_ratio(x)

    def delta_map(self, delta: Any) -> np.ndarray:
        """
        Map delta to 1/2 - f(1/2 - delta) without cancellation.

        The difference is the integral of f' over [1/2 - delta, 1/2], taken with a
        Gauss-Legendre rule that is exact for polynomials of the degree of f.
        """
        delta = np.asarray(delta, dtype=float)
        nodes, weights = _gauss_legendre(self.protocol.degree // 2 + 1)
        u = 0.5 - 0.5 * delta[..., None] * (1.0 - nodes)
        return 0.5 * delta * (self.derivative(u) * weights).sum(axis=-1)

    def log_step(self, ln_x: Any) -> np.ndarray:
        """One step of ln f(x) = m ln x + ln(beta + p(x)); p is dropped below 1e-30."""
        ln_x = np.asarray(ln_x, dtype=float)
        x = np.exp(ln_x)
        pure = x < PURE_POWER_THRESHOLD
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(pure, self.beta, self.leading_ratio(np.where(pure, 0.0, x)))
            return self.m * ln_x + np.log(ratio)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "protocol": self.protocol.to_dict(),
            "m": self.m,
            "beta": self.beta,
            "gamma": self.gamma,
            "smoothness_order": self.smoothness_order,
        }


@dataclass
class AxiomCheck:
    name: str
    passed: bool
    worst_x: float
    worst_value: float
    detail: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "worst_x": self.worst_x,
            "worst_value": self.worst_value,
            "detail": self.detail,
        }


@dataclass
class ValidationReport:
    """Outcome of checking a rule against the majority-type axioms."""
    protocol: str
    checks: List[AxiomCheck]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failures(self) -> List[str]:
        return [check.name for check in self.checks if not check.passed]

    def check(self, name: str) -> AxiomCheck:
        for item in self.checks:
            if item.name == name:
                return item
        raise KeyError(name)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "protocol": self.protocol,
            "passed": self.passed,
            "checks": [check.to_dict() for check in self.checks],
        }


def _make_function(spec: ProtocolSpec) -> MajorityTypeFunction:
    m, beta, gamma = spec.params()
    return MajorityTypeFunction(spec, m, beta, gamma, smoothness_order=max(m, 2))


@lru_cache(maxsize=128)
def build_function(spec: ProtocolSpec) -> MajorityTypeFunction:
    """
    Build the certified update function of a protocol.

    Custom polynomials are checked against every axiom first.

    Raises:
        ValidationError: If the spec is outside the majority-type class.
    """
    if isinstance(spec, CustomPolynomial):
        report = validate(spec)
        if not report.passed:
            raise ValidationError(
                f"{spec.shorthand()} is not majority-type; failed: {', '.join(report.failures())}"
            )
    fn = _make_function(spec)
    Logger.infoLog(f"Built {spec.shorthand()}: m={fn.m}, beta={fn.beta!r}, gamma={fn.gamma!r}")
    return fn


def _as_function(f: Union[ProtocolSpec, MajorityTypeFunction]) -> MajorityTypeFunction:
    return f if isinstance(f, MajorityTypeFunction) else build_function(f)


def _check_fractions(x: Any, name: str = "x") -> np.ndarray:
    values = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(values)) or np.any(values < 0.0) or np.any(values > 1.0):
        raise ValidationError(f"{name} must lie in [0, 1], got {x}")
    return values


def _scalar_or_array(template: Any, values: np.ndarray) -> Any:
    return float(values) if np.ndim(template) == 0 else values


def eval_kmaj(k: int, x: Any) -> Any:
    """
    Evaluate f_k, the k-majority rule.

    Even k use the reduced (k-1)-majority sum; evaluation runs on min(x, 1-x).

    Raises:
        ValidationError: If k < 3 or x is outside [0, 1].
    """
    spec = KMaj(k)
    return _scalar_or_array(x, spec.evaluate(_check_fractions(x)))


def eval_kmaj_tie_split(k: int, x: Any) -> Any:
    """f_k written with ties split evenly: P(Bin(k,x) > k/2) + P(Bin(k,x) = k/2)/2."""
    k = InputValidator.validate_positive_int(k, "k", minimum=3)
    values = _check_fractions(x)
    result = stats.binom.sf(k // 2, k, values)
    if k % 2 == 0:
        result = result + 0.5 * stats.binom.pmf(k // 2, k, values)
    return _scalar_or_array(x, result)


def evaluate(spec: ProtocolSpec, x: Any) -> Any:
    """Evaluate any protocol spec at x."""
    return _scalar_or_array(x, spec.evaluate(_check_fractions(x)))


def derivative(spec: ProtocolSpec, x: Any) -> Any:
    return _scalar_or_array(x, spec.derivative(_check_fractions(x)))


def leading_ratio(spec: ProtocolSpec, x: Any) -> Any:
    return _scalar_or_array(x, spec.leading_ratio(_check_fractions(x)))


def params(spec: ProtocolSpec) -> Tuple[int, float, float]:
    """
    Return (m, beta, gamma).

    Raises:
        ValidationError: For a rule vanishing only to first order at 0.
    """
    return spec.params()


def iterate(f: Union[ProtocolSpec, MajorityTypeFunction], x: float, t: int) -> float:
    """Return f^(t)(x); f^(0) is the identity."""
    fn = _as_function(f)
    value = InputValidator.validate_fraction(x)
    steps = InputValidator.validate_positive_int(t, "t", minimum=0)
    for _ in range(steps):
        value = float(fn(value))
    return value


@dataclass
class PhaseState:
    """Vectorised state of an iteration that walks from 1/2 - delta towards 0."""
    regime: np.ndarray
    delta: np.ndarray
    x: np.ndarray
    ln_x: np.ndarray
    steps: np.ndarray

    def finished(self) -> np.ndarray:
        return self.regime == _REGIME_PURE

    def distance_from_half(self) -> np.ndarray:
        result = self.delta.copy()
        linear = self.regime == _REGIME_LINEAR
        result[linear] = 0.5 - self.x[linear]
        deep = self.regime >= _REGIME_LOG
        result[deep] = 0.5 - np.exp(self.ln_x[deep])
        return result


def advance_phases(
    fn: MajorityTypeFunction,
    delta: Any,
    max_steps: int,
    stop_at_pure_power: bool = False,
) -> PhaseState:
    """
    Iterate x_{t+1} = f(x_t) from x_0 = 1/2 - delta for every entry of delta.

    Each entry moves through three representations: the distance delta from 1/2
    while delta < 0.1, the fraction x itself, and ln x once x < 1e-4. With
    stop_at_pure_power an entry freezes as soon as x < 1e-30, where
    f(x) = beta x^m holds to double precision; steps then counts the applications
    of f performed.
    """
    delta = np.atleast_1d(np.asarray(delta, dtype=float)).copy()
    size = delta.shape[0]
    state = PhaseState(
        regime=np.full(size, _REGIME_DELTA),
        delta=delta,
        x=np.full(size, np.nan),
        ln_x=np.full(size, np.nan),
        steps=np.zeros(size, dtype=int),
    )
    ln_pure = math.log(PURE_POWER_THRESHOLD)
    for _ in range(max_steps):
        to_linear = (state.regime == _REGIME_DELTA) & (state.delta >= DELTA_SWITCH)
        state.x[to_linear] = 0.5 - state.delta[to_linear]
        state.regime[to_linear] = _REGIME_LINEAR

        to_log = (state.regime == _REGIME_LINEAR) & (state.x < LOG_SWITCH)
        with np.errstate(divide="ignore"):
            state.ln_x[to_log] = np.log(state.x[to_log])
        state.regime[to_log] = _REGIME_LOG

        if stop_at_pure_power:
            done = (state.regime == _REGIME_LOG) & (state.ln_x < ln_pure)
            state.regime[done] = _REGIME_PURE

        active = state.regime != _REGIME_PURE
        if not active.any():
            break
        state.steps[active] += 1

        mask = state.regime == _REGIME_DELTA
        if mask.any():
            state.delta[mask] = fn.delta_map(state.delta[mask])
        mask = state.regime == _REGIME_LINEAR
        if mask.any():
            state.x[mask] = fn(state.x[mask])
        mask = state.regime == _REGIME_LOG
        if mask.any():
            state.ln_x[mask] = fn.log_step(state.ln_x[mask])
    return state


def delta_iterate(f: Union[ProtocolSpec, MajorityTypeFunction], delta: float, t: int) -> float:
    """
    Return 1/2 - f^(t)(1/2 - delta) without catastrophic cancellation.

    Raises:
        ValidationError: If delta is outside (0, 1/2].
    """
    fn = _as_function(f)
    value = InputValidator._to_float(delta, "delta")
    if not 0.0 < value <= 0.5:
        raise ValidationError(f"delta must lie in (0, 1/2], got {delta}")
    steps = InputValidator.validate_positive_int(t, "t", minimum=0)
    state = advance_phases(fn, value, steps)
    return float(state.distance_from_half()[0])


def log_iterate(f: Union[ProtocolSpec, MajorityTypeFunction], ln_x: float, t: int) -> float:
    """
    Return ln f^(t)(x) given ln x.

    Raises:
        ValidationError: If ln_x > 0.
    """
    fn = _as_function(f)
    value = float(ln_x)
    if math.isnan(value) or value > 0.0:
        raise ValidationError(f"ln_x must be <= 0, got {ln_x}")
    steps = InputValidator.validate_positive_int(t, "t", minimum=0)
    for _ in range(steps):
        value = float(fn.log_step(value))
    return value


def inverse(f: Union[ProtocolSpec, MajorityTypeFunction], y: float, tol: float = 1e-12) -> float:
    """
    Return x with |f(x) - y| <= tol by bisection on the monotone f.

    Raises:
        ValidationError: If y is outside [0, 1] or tol <= 0.
    """
    fn = _as_function(f)
    target = InputValidator.validate_fraction(y, "y")
    tolerance = InputValidator.validate_positive_real(tol, "tol")
    lo, hi = 0.0, 1.0
    best, best_error = 0.0, abs(float(fn(0.0)) - target)
    while True:
        mid = 0.5 * (lo + hi)
        value = float(fn(mid))
        error = abs(value - target)
        if error < best_error:
            best, best_error = mid, error
        if error <= tolerance or mid in (lo, hi):
            break
        if value < target:
            lo = mid
        else:
            hi = mid
    for end in (0.0, 1.0):
        error = abs(float(fn(end)) - target)
        if error < best_error:
            best, best_error = end, error
    return best


def inverse_delta(f: Union[ProtocolSpec, MajorityTypeFunction], delta: float, rtol: float = 1e-13) -> float:
    """
    Return delta' with 1/2 - f(1/2 - delta') = delta, to relative accuracy rtol.

    This is f^(-1) written in distance-from-1/2 coordinates. The root lies in
    [delta/gamma, delta] because f' <= gamma and f(x) <= x on [0, 1/2].
    """
    fn = _as_function(f)
    target = InputValidator._to_float(delta, "delta")
    if not 0.0 < target <= 0.5:
        raise ValidationError(f"delta must lie in (0, 1/2], got {delta}")
    if target == 0.5:
        return 0.5
    lo, hi = target / fn.gamma, min(target, 0.5)

    def residual(value: float) -> float:
        return float(fn.delta_map(value)) - target

    if residual(hi) <= 0.0:
        return hi
    if residual(lo) >= 0.0:
        return lo
    return optimize.brentq(residual, lo, hi, xtol=1e-300, rtol=max(rtol, 4 * np.finfo(float).eps))


def _validation_grid() -> np.ndarray:
    tail = np.logspace(-8, -2, 20)
    grid = np.concatenate([np.linspace(0.0, 1.0, 10001), [0.0, 0.5, 1.0], tail, 1.0 - tail])
    return np.unique(grid)


def _limit_check(name: str, points: Sequence[float], ratios: np.ndarray, target: float, positive: bool) -> AxiomCheck:
    drifts = np.abs(ratios - target) / abs(target) if target != 0 else np.full(len(points), np.inf)
    shrinking = bool(drifts[-1] <= drifts[0] + 1e-9)
    passed = positive and shrinking and bool(drifts[-1] < LIMIT_RTOL)
    worst = int(np.argmax(drifts))
    return AxiomCheck(
        name,
        passed,
        float(points[worst]),
        float(ratios[worst]),
        f"target {target!r}, relative drifts {[float(d) for d in drifts]}",
    )


def validate(f: Union[ProtocolSpec, MajorityTypeFunction]) -> ValidationReport:
    """
    Check a rule against the majority-type axioms on a dense grid.

    Failures are reported, never raised.
    """
    spec = f.protocol if isinstance(f, MajorityTypeFunction) else f
    grid = _validation_grid()
    values = spec.evaluate(grid)
    checks: List[AxiomCheck] = []

    for name, point, expected in (("f(0)=0", 0.0, 0.0), ("f(1)=1", 1.0, 1.0), ("f(1/2)=1/2", 0.5, 0.5)):
        value = float(spec.evaluate(np.array([point]))[0])
        checks.append(AxiomCheck(name, abs(value - expected) <= FIXED_POINT_TOL, point, value))

    asymmetry = np.abs(1.0 - spec.evaluate(1.0 - grid) - values)
    worst = int(np.argmax(asymmetry))
    checks.append(AxiomCheck("symmetry", bool(asymmetry[worst] <= SYMMETRY_TOL), float(grid[worst]), float(asymmetry[worst])))

    steps = np.diff(values)
    worst = int(np.argmin(steps))
    checks.append(AxiomCheck("monotone", bool(steps[worst] >= -MONOTONE_TOL), float(grid[worst]), float(steps[worst])))

    half = np.linspace(0.0, 0.5, 5001)
    second = np.diff(spec.evaluate(half), n=2)
    worst = int(np.argmin(second))
    checks.append(AxiomCheck("convex on [0,1/2]", bool(second[worst] >= -CONVEXITY_TOL), float(half[worst + 1]), float(second[worst])))

    m, beta = spec.leading_order()
    checks.append(AxiomCheck("m >= 2", m >= 2, 0.0, float(m)))

    points = np.array(LIMIT_POINTS)
    with np.errstate(divide="ignore", invalid="ignore", under="ignore"):
        powers = points ** m
        ratios = np.where(powers > 0, spec.evaluate(points) / powers, spec.leading_ratio(points))
    checks.append(_limit_check("beta", points, ratios, beta, beta > 0))

    gamma = spec.slope_at_half()
    slopes = (spec.evaluate(0.5 + points) - 0.5) / points
    checks.append(_limit_check("gamma", points, slopes, gamma, gamma > 1))

    report = ValidationReport(spec.shorthand(), checks)
    if not report.passed:
        Logger.warnLog(f"Validation of {spec.shorthand()} failed: {report.failures()}")
    return report


def f_grid(specs: Union[ProtocolSpec, Sequence[ProtocolSpec]], points: int = 101) -> pd.DataFrame:
    """Tabulate f on [0, 1]: one x column and one column per protocol."""
    if isinstance(specs, ProtocolSpec):
        specs = [specs]
    count = InputValidator.validate_positive_int(points, "points", minimum=2)
    x = np.linspace(0.0, 1.0, count)
    table = {"x": x}
    for spec in specs:
        table[spec.shorthand()] = spec.evaluate(x)
    return pd.DataFrame(table)
