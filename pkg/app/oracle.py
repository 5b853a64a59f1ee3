########################
# Exact Chain Oracle   #
########################

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, stats

from app.exceptions import OperationError, ValidationError
from app.input_validators import InputValidator
from app.lab_config import EXACT_HARD_CAP
from app.logger import Logger
from app.protocols import ProtocolSpec
from app.simulation import fraction_to_count
from app.update_function import build_function

ABSORPTION_THRESHOLD = 1e-12
MAX_PROPAGATION_STEPS = 10 ** 6
DOMINANCE_SLACK = 1e-10


@dataclass
class ExactChain:
    """
    The (n+1)-state count chain with row i equal to the Bin(n, f(i/n)) pmf.

    States 0 and n are absorbing. Rows are built for i <= n/2 and mirrored,
    so kernel[i, j] == kernel[n-i, n-j] holds exactly.
    """
    n: int
    protocol: ProtocolSpec
    kernel: np.ndarray

    @property
    def transient(self) -> np.ndarray:
        return self.kernel[1:self.n, 1:self.n]

    def absorption_columns(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per transient state, the one-step probabilities of hitting 0 and n."""
        return self.kernel[1:self.n, 0], self.kernel[1:self.n, self.n]

    def start_vectors(self, starts: Sequence[int]) -> np.ndarray:
        vectors = np.zeros((len(starts), max(self.n - 1, 0)))
        for row, start in enumerate(starts):
            if 0 < start < self.n:
                vectors[row, start - 1] = 1.0
        return vectors


def build(n: int, spec: ProtocolSpec, max_n: int = EXACT_HARD_CAP) -> ExactChain:
    """
    Build the exact transition kernel.

    Raises:
        ValidationError: If n is outside [2, max_n] or the protocol is invalid.
    """
    size = InputValidator._to_int(n, "n")
    cap = min(int(max_n), EXACT_HARD_CAP)
    if not 2 <= size <= cap:
        raise ValidationError(f"n must lie in [2, {cap}] for the exact oracle, got {n}")
    fn = build_function(spec)
    kernel = np.zeros((size + 1, size + 1))
    lower = np.arange(0, size // 2 + 1)
    outcomes = np.arange(size + 1)
    probabilities = fn(lower / size)
    with np.errstate(under="ignore"):
        rows = stats.binom.pmf(outcomes[None, :], size, probabilities[:, None])
        rows /= rows.sum(axis=1, keepdims=True)
        kernel[lower] = rows
        kernel[size - lower] = rows[:, ::-1]
        if size % 2 == 0:
            middle = size // 2
            kernel[middle] = 0.5 * (kernel[middle] + kernel[middle, ::-1])
    kernel[0] = 0.0
    kernel[0, 0] = 1.0
    kernel[size] = 0.0
    kernel[size, size] = 1.0
    Logger.infoLog(f"Built exact chain for {spec.shorthand()}, n={size}")
    return ExactChain(size, spec, kernel)


@dataclass
class ExactRuntime:
    """P(R >= s) for s = 0..t_max and the mass still transient after t_max rounds."""
    x0: int
    survival_values: np.ndarray
    residual: float

    @property
    def t_max(self) -> int:
        return int(self.survival_values.size - 1)

    def survival(self, s: int) -> float:
        """
        Exact for s <= t_max + 1; beyond that the value 0 is off by at most the residual.
        """
        if s <= 0:
            return 1.0
        if s <= self.t_max:
            return float(self.survival_values[s])
        if s == self.t_max + 1:
            return self.residual
        return 0.0

    def support(self) -> Tuple[int, int]:
        return 0, self.t_max + 1

    def mean(self) -> float:
        return float(self.survival_values[1:].sum() + self.residual)

    def to_frame(self) -> pd.DataFrame:
        s = np.arange(self.t_max + 1)
        return pd.DataFrame({"s": s, "P_R_geq_s": self.survival_values})


def runtime_distribution(chain: ExactChain, x0: int, t_max: Optional[int] = None) -> ExactRuntime:
    """
    Forward propagation of the start distribution over the transient states.

    P(R >= s) is the mass that is still transient after s - 1 rounds. Without
    t_max the table stops at the first s where that mass is below 1e-12.

    Raises:
        OperationError: If t_max is None and the mass never drops below 1e-12.
    """
    start = InputValidator.validate_count(x0, chain.n, "x0")
    vector = chain.start_vectors([start])[0]
    transient = chain.transient
    if t_max is not None:
        steps = InputValidator.validate_positive_int(t_max, "t_max", minimum=0)
        survival = np.empty(steps + 1)
        survival[0] = 1.0
        with np.errstate(under="ignore"):
            for s in range(1, steps + 1):
                survival[s] = vector.sum()
                vector = vector @ transient
            residual = float(vector.sum())
        return ExactRuntime(start, survival, residual)

    values = [1.0]
    with np.errstate(under="ignore"):
        for _ in range(MAX_PROPAGATION_STEPS):
            mass = float(vector.sum())
            values.append(mass)
            if mass < ABSORPTION_THRESHOLD:
                return ExactRuntime(start, np.array(values), 0.0)
            vector = vector @ transient
    raise OperationError(f"Runtime of x0={start} still has mass {mass!r} after {MAX_PROPAGATION_STEPS} rounds")


def winner_probability_exact(chain: ExactChain, x0: int) -> Tuple[float, float]:
    """
    Absorption probabilities (P(win X), P(win Y)) by propagation.

    Raises:
        OperationError: If the transient mass is not below 1e-12 after 10^6 rounds.
    """
    start = InputValidator.validate_count(x0, chain.n, "x0")
    if start == chain.n:
        return 1.0, 0.0
    if start == 0:
        return 0.0, 1.0
    to_y, to_x = chain.absorption_columns()
    vector = chain.start_vectors([start])[0]
    transient = chain.transient
    win_x = win_y = 0.0
    with np.errstate(under="ignore"):
        for _ in range(MAX_PROPAGATION_STEPS):
            win_x += float(vector @ to_x)
            win_y += float(vector @ to_y)
            vector = vector @ transient
            if vector.sum() < ABSORPTION_THRESHOLD:
                return win_x, win_y
    raise OperationError(
        f"Transient mass {vector.sum()!r} still above {ABSORPTION_THRESHOLD} after {MAX_PROPAGATION_STEPS} rounds"
    )


def winner_probability_linear(chain: ExactChain) -> np.ndarray:
    """P(win X) from every state, solving (I - Q) h = P(one step to n)."""
    _, to_x = chain.absorption_columns()
    system = np.eye(chain.n - 1) - chain.transient
    hitting = linalg.solve(system, to_x)
    return np.concatenate([[0.0], hitting, [1.0]])


@dataclass
class DominanceResult:
    holds: bool
    worst_s: Optional[int]
    worst_gap: float
    counts: Tuple[int, int]

    def verdict(self) -> str:
        return "PASS" if self.holds else f"FAIL s={self.worst_s}"


def dominance_check(chain: ExactChain, x: float, x_prime: float) -> DominanceResult:
    """
    Check that a start nearer to consensus absorbs stochastically no later.

    For 1/2 <= x <= x' the check is P(R(x'n) >= s) <= P(R(xn) >= s) + 1e-10 for
    every s until both chains have absorbed all but 1e-12 of their mass.
    Fractions become counts by rounding half to even; equal counts hold trivially.
    """
    lo = InputValidator.validate_fraction(x, "x")
    hi = InputValidator.validate_fraction(x_prime, "x_prime")
    if not 0.5 <= lo <= hi:
        raise ValidationError(f"Need 1/2 <= x <= x_prime, got x={x}, x_prime={x_prime}")
    counts = (fraction_to_count(lo, chain.n), fraction_to_count(hi, chain.n))
    if counts[0] == counts[1]:
        return DominanceResult(True, None, 0.0, counts)

    vectors = chain.start_vectors(counts)
    transient = chain.transient
    worst_s, worst_gap = None, -np.inf
    with np.errstate(under="ignore"):
        for s in range(1, MAX_PROPAGATION_STEPS + 1):
            near, far = vectors[1].sum(), vectors[0].sum()
            gap = near - far
            if gap > worst_gap:
                worst_s, worst_gap = s, gap
            if near < ABSORPTION_THRESHOLD and far < ABSORPTION_THRESHOLD:
                break
            vectors = vectors @ transient
    holds = worst_gap <= DOMINANCE_SLACK
    if not holds:
        Logger.warnLog(f"Dominance fails for counts {counts} at s={worst_s}, gap={worst_gap!r}")
    return DominanceResult(bool(holds), None if holds else worst_s, float(worst_gap), counts)
