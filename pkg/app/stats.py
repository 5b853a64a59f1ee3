########################
# Empirical Statistics #
########################

from dataclasses import dataclass, field
import json
import math
from typing import Any, Dict, Iterable, List, Optional, Protocol, Tuple

import numpy as np
import pandas as pd
from scipy import stats as scipy_stats

from app.exceptions import SchemaError, ValidationError
from app.input_validators import InputValidator
from app.logger import Logger
from app.run_outcome import RunOutcome, Winner

SUP_CDF_TOL = 0.05
WINNER_TOL = 0.02
MEAN_RUNTIME_TOL = 3.0
ORACLE_SUP_CDF_TOL = 0.02
WINNER_BAND_CONFIDENCE = 0.95
ORACLE_BAND_CONFIDENCE = 0.99


class SurvivalFunction(Protocol):
    """Anything with P(R >= s) on the integers and a finite window outside of which it is 0 or 1."""

    def survival(self, s: int) -> float: ...

    def support(self) -> Tuple[int, int]: ...


@dataclass
class EmpiricalDist:
    """Sorted runtimes and winner counts of a Monte Carlo batch."""
    runtimes: np.ndarray
    winners: Dict[Winner, int]
    n: Optional[int] = None
    protocol_label: str = ""

    def __post_init__(self):
        self.runtimes = np.sort(np.asarray(self.runtimes, dtype=int))
        if sum(self.winners.values()) != self.runtimes.size:
            raise ValidationError("winner counts must sum to the number of runs")

    @classmethod
    def from_outcomes(cls, outcomes: Iterable[RunOutcome], protocol_label: str = "") -> "EmpiricalDist":
        """
        Raises:
            SchemaError: If the outcomes mix population sizes.
        """
        outcomes = list(outcomes)
        sizes = {outcome.n for outcome in outcomes}
        if len(sizes) > 1:
            raise SchemaError(f"Outcomes mix population sizes: {sorted(sizes)}")
        winners = {member: 0 for member in Winner}
        for outcome in outcomes:
            winners[outcome.winner] += 1
        return cls(
            np.array([outcome.runtime for outcome in outcomes], dtype=int),
            winners,
            sizes.pop() if sizes else None,
            protocol_label,
        )

    @property
    def n_runs(self) -> int:
        return int(self.runtimes.size)

    def survival(self, s: int) -> float:
        """Fraction of runs with runtime >= s."""
        if self.n_runs == 0:
            raise ValidationError("Empirical distribution is empty")
        below = np.searchsorted(self.runtimes, s, side="left")
        return float(self.n_runs - below) / self.n_runs

    def support(self) -> Tuple[int, int]:
        if self.n_runs == 0:
            raise ValidationError("Empirical distribution is empty")
        return int(self.runtimes[0]), int(self.runtimes[-1]) + 1

    def mean(self) -> float:
        if self.n_runs == 0:
            raise ValidationError("Empirical distribution is empty")
        return float(self.runtimes.mean())

    def winner_frequency(self, winner: Winner = Winner.X) -> float:
        if self.n_runs == 0:
            raise ValidationError("Empirical distribution is empty")
        return self.winners.get(winner, 0) / self.n_runs

    def to_frame(self) -> pd.DataFrame:
        """The sample survival function as an (s, P_R_geq_s) table over its support."""
        lo, hi = self.support()
        s = np.arange(lo, hi + 1)
        below = np.searchsorted(self.runtimes, s, side="left")
        return pd.DataFrame({"s": s, "P_R_geq_s": (self.n_runs - below) / self.n_runs})


@dataclass
class TabulatedRuntimeLaw:
    """
    A survival function read back from a CDF table.

    Below the first tabulated s the survival is 1, above the last it is 0.
    """
    s_values: np.ndarray
    survival_values: np.ndarray
    n: Optional[int] = None
    protocol_label: str = ""
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        order = np.argsort(self.s_values)
        self.s_values = np.asarray(self.s_values, dtype=int)[order]
        self.survival_values = np.asarray(self.survival_values, dtype=float)[order]
        if self.s_values.size == 0:
            raise SchemaError("Runtime table is empty")

    def survival(self, s: int) -> float:
        if s < self.s_values[0]:
            return 1.0
        if s > self.s_values[-1]:
            return 0.0
        index = int(np.searchsorted(self.s_values, s, side="right")) - 1
        return float(self.survival_values[index])

    def support(self) -> Tuple[int, int]:
        return int(self.s_values[0]), int(self.s_values[-1]) + 1

    def mean_runtime(self) -> float:
        if "mean_runtime" in self.metadata:
            return float(self.metadata["mean_runtime"])
        lo, hi = self.support()
        total = sum(self.survival(s) for s in range(1, hi + 1))
        total -= sum(1.0 - self.survival(s) for s in range(min(lo, 1), 1))
        return total

    def win_probability(self) -> Optional[float]:
        value = self.metadata.get("win_probability")
        return None if value is None else float(value)

    @property
    def label(self) -> str:
        return self.protocol_label


def sup_cdf_distance(first: SurvivalFunction, second: SurvivalFunction) -> float:
    """
    max over integer s of |P_1(R >= s) - P_2(R >= s)|.

    Raises:
        ValidationError: If either side is an empty sample.
    """
    lo_a, hi_a = first.support()
    lo_b, hi_b = second.support()
    distance = 0.0
    for s in range(min(lo_a, lo_b), max(hi_a, hi_b) + 1):
        distance = max(distance, abs(first.survival(s) - second.survival(s)))
    return distance


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> Tuple[float, float]:
    """
    Wilson score interval for a binomial proportion.

    Raises:
        ValidationError: If trials is 0 or successes is outside [0, trials].
    """
    trials = InputValidator.validate_positive_int(trials, "trials")
    successes = InputValidator.validate_count(successes, trials, "successes")
    level = InputValidator.validate_probability(confidence, "confidence")
    z = float(scipy_stats.norm.ppf(0.5 + level / 2.0))
    p = successes / trials
    scale = 1.0 + z * z / trials
    centre = (p + z * z / (2.0 * trials)) / scale
    half = z / scale * math.sqrt(p * (1.0 - p) / trials + z * z / (4.0 * trials * trials))
    lo = 0.0 if successes == 0 else min(max(centre - half, 0.0), p)
    hi = 1.0 if successes == trials else max(min(centre + half, 1.0), p)
    return lo, hi


@dataclass
class Criterion:
    name: str
    observed: float
    expected: float
    tolerance: float
    passed: bool
    band: Optional[Tuple[float, float]] = None

    def to_dict(self) -> Dict[str, Any]:
        row: Dict[str, Any] = {
            "name": self.name,
            "observed": self.observed,
            "expected": self.expected,
            "tolerance": self.tolerance,
            "pass": self.passed,
        }
        if self.band is not None:
            row["band"] = list(self.band)
        return row


@dataclass
class ComparisonReport:
    criteria: List[Criterion]

    @property
    def passed(self) -> bool:
        return all(criterion.passed for criterion in self.criteria)

    def criterion(self, name: str) -> Criterion:
        for item in self.criteria:
            if item.name == name:
                return item
        raise KeyError(name)

    def to_dict(self) -> Dict[str, Any]:
        return {"pass": self.passed, "criteria": [criterion.to_dict() for criterion in self.criteria]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _check_matching(emp: EmpiricalDist, other: Any, what: str) -> None:
    other_n = getattr(other, "n", None)
    if emp.n is not None and other_n is not None and int(other_n) != emp.n:
        raise SchemaError(f"Sample has n={emp.n} but the {what} has n={other_n}")
    label = getattr(other, "label", "")
    if emp.protocol_label and label and label != emp.protocol_label:
        raise SchemaError(f"Sample is for {emp.protocol_label} but the {what} is for {label}")


def compare_report(
    emp: EmpiricalDist,
    prediction: Any,
    oracle: Optional[SurvivalFunction] = None,
    oracle_win_probability: Optional[float] = None,
    sup_tol: float = SUP_CDF_TOL,
    winner_tol: float = WINNER_TOL,
    mean_tol: float = MEAN_RUNTIME_TOL,
    oracle_tol: float = ORACLE_SUP_CDF_TOL,
) -> ComparisonReport:
    """
    Compare a Monte Carlo sample with a predicted law and, optionally, the exact oracle.

    The prediction must provide survival, support, mean_runtime and
    win_probability (which may return None to skip the winner criterion).

    Raises:
        SchemaError: If the inputs disagree on n or on the protocol.
    """
    _check_matching(emp, prediction, "prediction")
    if oracle is not None:
        _check_matching(emp, oracle, "oracle")
    criteria: List[Criterion] = []

    distance = sup_cdf_distance(emp, prediction)
    criteria.append(Criterion("sup_cdf_distance", distance, 0.0, sup_tol, distance < sup_tol))

    expected_win = prediction.win_probability()
    if expected_win is not None:
        observed = emp.winner_frequency()
        band = wilson_interval(emp.winners.get(Winner.X, 0), emp.n_runs, WINNER_BAND_CONFIDENCE)
        criteria.append(
            Criterion("winner_deviation", observed, expected_win, winner_tol,
                      abs(observed - expected_win) <= winner_tol, band)
        )

    observed_mean, expected_mean = emp.mean(), prediction.mean_runtime()
    criteria.append(
        Criterion("mean_runtime", observed_mean, expected_mean, mean_tol,
                  abs(observed_mean - expected_mean) <= mean_tol)
    )

    if oracle is not None:
        exact_distance = sup_cdf_distance(emp, oracle)
        criteria.append(
            Criterion("oracle_sup_cdf_distance", exact_distance, 0.0, oracle_tol, exact_distance < oracle_tol)
        )
    if oracle_win_probability is not None:
        band = wilson_interval(emp.winners.get(Winner.X, 0), emp.n_runs, ORACLE_BAND_CONFIDENCE)
        criteria.append(
            Criterion("oracle_winner", emp.winner_frequency(), oracle_win_probability,
                      (band[1] - band[0]) / 2.0, band[0] <= oracle_win_probability <= band[1], band)
        )

    report = ComparisonReport(criteria)
    Logger.infoLog(f"Comparison report: pass={report.passed}, failed={[c.name for c in criteria if not c.passed]}")
    return report
