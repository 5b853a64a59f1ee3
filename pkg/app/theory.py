########################
# Limit Laws           #
########################

from dataclasses import dataclass, field
import math
from typing import Any, Dict, FrozenSet, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import integrate, stats

from app.exceptions import OperationError, ValidationError
from app.g_function import GFunctionApprox, build_g_approx
from app.input_validators import InputValidator
from app.logger import Logger
from app.protocols import ProtocolSpec
from app.update_function import build_function

TAIL_EPS = 1e-12
SUPPORT_SEARCH_CAP = 100000
QUADRATURE_SIGMAS = 8.0
ZERO_EXCLUSION = 1e-12


def _check_gamma(gamma: float) -> float:
    value = InputValidator._to_float(gamma, "gamma")
    if value <= 1.0:
        raise ValidationError(f"gamma must exceed 1, got {gamma}")
    return value


@dataclass(frozen=True)
class GaussianZ:
    """Z ~ N(d, 1 / (4 (gamma^2 - 1))), the limit of the rescaled early bias."""
    mean: float
    variance: float

    @classmethod
    def from_bias(cls, d: float, gamma: float) -> "GaussianZ":
        gamma = _check_gamma(gamma)
        return cls(float(d), 1.0 / (4.0 * (gamma * gamma - 1.0)))

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def pdf(self, z: Any) -> Any:
        return stats.norm.pdf(z, loc=self.mean, scale=self.std)

    def abs_cdf(self, r: Any) -> Any:
        """P(|Z| <= r) for r >= 0."""
        r = np.asarray(r, dtype=float)
        upper = stats.norm.cdf((r - self.mean) / self.std)
        lower = stats.norm.cdf((-r - self.mean) / self.std)
        return np.clip(upper - lower, 0.0, 1.0)


def win_probability(d: float, gamma: float) -> float:
    """
    P(Z >= 0) = Phi(2 d sqrt(gamma^2 - 1)), the limiting chance that X wins.

    Negative d is answered as 1 - win_probability(-d), so the two values sum to
    exactly 1.
    """
    gamma = _check_gamma(gamma)
    bias = InputValidator._to_float(d, "d")
    if bias < 0:
        return 1.0 - win_probability(-bias, gamma)
    return float(stats.norm.cdf(2.0 * bias * math.sqrt(gamma * gamma - 1.0)))


def win_probability_integral(d: float, gamma: float) -> float:
    """The same probability as sqrt(2(g^2-1)/pi) * integral_0^inf exp(-2(g^2-1)(t-d)^2) dt."""
    gamma = _check_gamma(gamma)
    bias = InputValidator._to_float(d, "d")
    rate = 2.0 * (gamma * gamma - 1.0)
    width = 12.0 / math.sqrt(2.0 * rate)
    lo, hi = max(0.0, bias - width), bias + width
    if hi <= 0.0:
        return 0.0
    value, _ = integrate.quad(
        lambda t: math.exp(-rate * (t - bias) ** 2),
        lo,
        hi,
        points=[bias] if lo < bias < hi else None,
        epsabs=1e-14,
        epsrel=1e-13,
        limit=200,
    )
    return math.sqrt(rate / math.pi) * value


def clt_moments(t: int, d: float, gamma: float) -> Tuple[float, float]:
    """Mean gamma^t d and variance (gamma^(2t) - 1) / (4 (gamma^2 - 1)) of the bias after t rounds."""
    gamma = _check_gamma(gamma)
    steps = InputValidator.validate_positive_int(t, "t", minimum=0)
    growth = gamma ** steps
    return growth * float(d), (growth * growth - 1.0) / (4.0 * (gamma * gamma - 1.0))


def centering(spec: ProtocolSpec, n: int, d: float = 0.0) -> float:
    """
    The leading-order runtime mu_n(d).

    1/2 log_gamma n + log_m ln n for |d| <= 1, with n replaced by n / d^2 in the
    first term for larger biases.
    """
    fn = build_function(spec)
    size = InputValidator.validate_positive_int(n, "n", minimum=2)
    bias = abs(float(d))
    scale = size / (bias * bias) if bias > 1.0 else size
    return 0.5 * math.log(scale, fn.gamma) + math.log(math.log(size), fn.m)


@dataclass
class PredictedRuntimeLaw:
    """
    P(R_n >= s) = P(Z_n + log_m ln n + g(Z_n) >= s) with Z_n = 1/2 log_gamma(n / Z^2).

    Since h = g + id is increasing, the event is |Z| <= r(s) with
    r(s) = gamma^(1/2 log_gamma n - h^-1(s - log_m ln n)), a single Gaussian mass.
    """
    protocol: ProtocolSpec
    n: int
    d: float
    g_approx: GFunctionApprox
    gamma: float = field(init=False)
    m: int = field(init=False)
    z: GaussianZ = field(init=False)

    def __post_init__(self):
        fn = build_function(self.protocol)
        self.gamma = fn.gamma
        self.m = fn.m
        self.z = GaussianZ.from_bias(self.d, fn.gamma)
        self._half_log_n = 0.5 * math.log(self.n, self.gamma)
        self._log_log_n = math.log(math.log(self.n), self.m)

    @property
    def label(self) -> str:
        return self.protocol.shorthand()

    def win_probability(self) -> float:
        return win_probability(self.d, self.gamma)

    def radius(self, s: Any) -> Any:
        exponent = self._half_log_n - self.g_approx.h_inverse(np.asarray(s, dtype=float) - self._log_log_n)
        with np.errstate(over="ignore"):
            return np.power(self.gamma, exponent)

    def survival(self, s: Any) -> Any:
        """P(R_n >= s) for integer s (vectorised)."""
        result = self.z.abs_cdf(self.radius(s))
        return float(result) if np.ndim(s) == 0 else result

    def pmf(self, s: Any) -> Any:
        s = np.asarray(s, dtype=float)
        result = self.survival(s) - self.survival(s + 1)
        return float(result) if np.ndim(s) == 0 else result

    def runtime_value(self, z: Any) -> Any:
        """Z_n + log_m ln n + g(Z_n) for a realisation z of Z."""
        z_n = self._half_log_n - np.log(np.abs(z)) / math.log(self.gamma)
        return z_n + self._log_log_n + self.g_approx.evaluate(z_n)

    def survival_by_quadrature(self, s: int) -> float:
        """
        P(R_n >= s) by adaptive integration of the Gaussian density against the
        indicator of runtime_value(Z) >= s, excluding |z| < 1e-12.

        Raises:
            OperationError: If the integration does not reach 1e-6.
        """
        lo = self.z.mean - QUADRATURE_SIGMAS * self.z.std
        hi = self.z.mean + QUADRATURE_SIGMAS * self.z.std

        def integrand(z: float) -> float:
            if abs(z) < ZERO_EXCLUSION:
                return float(self.z.pdf(z))
            return float(self.z.pdf(z)) if self.runtime_value(z) >= s else 0.0

        cuts = sorted({lo, hi, *(c for c in (-ZERO_EXCLUSION, ZERO_EXCLUSION) if lo < c < hi)})
        total, error = 0.0, 0.0
        for left, right in zip(cuts[:-1], cuts[1:]):
            value, err = integrate.quad(integrand, left, right, epsabs=1e-9, limit=500)
            total += value
            error += err
        if error > 1e-6:
            raise OperationError(f"Runtime quadrature at s={s} did not converge (error {error!r})")
        # Gaussian mass beyond the integration window, counted where the indicator holds
        for edge, tail in ((lo, stats.norm.cdf(-QUADRATURE_SIGMAS)), (hi, stats.norm.sf(QUADRATURE_SIGMAS))):
            if self.runtime_value(edge) >= s:
                total += float(tail)
        return min(max(total, 0.0), 1.0)

    def support(self) -> Tuple[int, int]:
        """
        (lo, hi): survival is >= 1 - 1e-12 at and below lo and <= 1e-12 at and above hi.
        """
        center = int(round(self._half_log_n + self._log_log_n + self.g_approx.mean()))
        lo = center
        for _ in range(SUPPORT_SEARCH_CAP):
            if self.survival(lo) >= 1.0 - TAIL_EPS:
                break
            lo -= 1
        hi = center
        for _ in range(SUPPORT_SEARCH_CAP):
            if self.survival(hi) <= TAIL_EPS:
                break
            hi += 1
        return lo, hi

    def mean_runtime(self) -> float:
        """E[R] = sum_{s>=1} P(R >= s) - sum_{s<=0} P(R < s)."""
        lo, hi = self.support()
        positive = np.arange(1, max(hi, 1) + 1)
        total = float(np.sum(self.survival(positive))) if positive.size else 0.0
        if lo <= 0:
            non_positive = np.arange(lo, 1)
            total -= float(np.sum(1.0 - self.survival(non_positive)))
        return total

    def to_frame(self, s_min: Optional[int] = None, s_max: Optional[int] = None) -> pd.DataFrame:
        lo, hi = self.support()
        s = np.arange(max(0, lo) if s_min is None else s_min, (hi if s_max is None else s_max) + 1)
        return pd.DataFrame({"s": s, "P_R_geq_s": self.survival(s)})

    def metadata(self) -> Dict[str, Any]:
        return {
            "protocol": self.protocol.to_dict(),
            "n": self.n,
            "d": self.d,
            "gamma": self.gamma,
            "m": self.m,
            "win_probability": self.win_probability(),
            "mean_runtime": self.mean_runtime(),
        }


def _matching_g(spec: ProtocolSpec, g_approx: Optional[GFunctionApprox]) -> GFunctionApprox:
    if g_approx is None:
        return build_g_approx(spec)
    if g_approx.protocol != spec:
        raise ValidationError(
            f"g tabulation is for {g_approx.protocol.shorthand()}, not {spec.shorthand()}"
        )
    if not g_approx.is_h_monotone():
        raise OperationError(f"h for {spec.shorthand()} is not strictly increasing")
    return g_approx


def runtime_cdf_prediction(
    spec: ProtocolSpec,
    n: int,
    d: float,
    g_approx: Optional[GFunctionApprox] = None,
) -> PredictedRuntimeLaw:
    """Build the predicted law of R_n for a start at n/2 + d sqrt(n)."""
    size = InputValidator.validate_positive_int(n, "n", minimum=2)
    bias = InputValidator._to_float(d, "d")
    law = PredictedRuntimeLaw(spec, size, bias, _matching_g(spec, g_approx))
    Logger.infoLog(f"Predicted runtime law for {spec.shorthand()}, n={size}, d={bias!r}")
    return law


def subsequence_limit_pmf(
    spec: ProtocolSpec,
    x: float,
    y: float,
    d: float,
    g_approx: Optional[GFunctionApprox] = None,
) -> Dict[int, float]:
    """
    Law of H = floor(h(x - log_gamma|Z|) + y).

    H >= j exactly when |Z| <= gamma^(x - h^-1(j - y)), so each cell is the
    Gaussian mass of an annulus in |Z|.

    Raises:
        OperationError: If the tabulated h is not strictly increasing.
    """
    approx = _matching_g(spec, g_approx)
    for value, name in ((x, "x"), (y, "y")):
        if not 0.0 <= float(value) < 1.0:
            raise ValidationError(f"{name} must lie in [0, 1), got {value}")
    fn = build_function(spec)
    z = GaussianZ.from_bias(d, fn.gamma)

    def at_least(j: int) -> float:
        with np.errstate(over="ignore"):
            radius = np.power(fn.gamma, float(x) - approx.h_inverse(j - float(y)))
        return float(z.abs_cdf(radius))

    lo = 0
    while at_least(lo) < 1.0 - TAIL_EPS and lo > -SUPPORT_SEARCH_CAP:
        lo -= 1
    hi = 0
    while at_least(hi) > TAIL_EPS and hi < SUPPORT_SEARCH_CAP:
        hi += 1
    pmf: Dict[int, float] = {}
    upper = 1.0
    for j in range(lo, hi + 1):
        nxt = at_least(j + 1)
        pmf[j] = (1.0 if j == lo else upper) - nxt
        upper = nxt
    return pmf


def concentration_value(spec: ProtocolSpec, n: int, d: float, g_approx: Optional[GFunctionApprox] = None) -> float:
    """1/2 log_gamma(n/d^2) + log_m ln n + g(1/2 log_gamma(n/d^2)), before rounding up."""
    approx = _matching_g(spec, g_approx)
    size = InputValidator.validate_positive_int(n, "n", minimum=2)
    bias = InputValidator._to_float(d, "d")
    if bias <= 0:
        raise ValidationError(f"d must be positive, got {d}")
    fn = build_function(spec)
    base = 0.5 * math.log(size / (bias * bias), fn.gamma)
    return base + math.log(math.log(size), fn.m) + approx.evaluate(base)


def concentration_set(
    spec: ProtocolSpec,
    n: int,
    d: float,
    g_approx: Optional[GFunctionApprox] = None,
) -> Tuple[int, FrozenSet[int]]:
    """Return s_{n,d} and the two-point set {s_{n,d} - 1, s_{n,d}} that carries R_n for large d."""
    s_star = int(math.ceil(concentration_value(spec, n, d, g_approx)))
    return s_star, frozenset({s_star - 1, s_star})


def z_density(spec: ProtocolSpec, d: float, grid: Optional[np.ndarray] = None) -> pd.DataFrame:
    """
    Density of W = -log_gamma|Z| on a grid.

    The default grid starts just left of the bulk of W and spans 60 units.
    """
    fn = build_function(spec)
    z = GaussianZ.from_bias(d, fn.gamma)
    log_gamma = math.log(fn.gamma)
    if grid is None:
        start = -math.log(abs(z.mean) + 12.0 * z.std) / log_gamma - 1.0
        grid = np.linspace(start, start + 60.0, 6001)
    w = np.asarray(grid, dtype=float)
    r = np.exp(-w * log_gamma)
    density = (z.pdf(r) + z.pdf(-r)) * r * log_gamma
    return pd.DataFrame({"w": w, "density": density})


def endgame_runtime(spec: ProtocolSpec, n: int, x: float) -> int:
    """Rounds to consensus from a start at fraction 1/2 < x < 1: the final doubly-exponential phase."""
    fn = build_function(spec)
    size = InputValidator.validate_positive_int(n, "n", minimum=2)
    start = InputValidator._to_float(x, "x")
    if not 0.5 < start < 1.0:
        raise ValidationError(f"x must lie in (1/2, 1), got {x}")
    log_m = math.log(fn.m)
    value = (
        math.log(math.log(size)) / log_m
        - math.log(abs(math.log(1.0 - start))) / log_m
        - math.log(2.0) / log_m
        + 1.0
    )
    return int(math.ceil(value))
