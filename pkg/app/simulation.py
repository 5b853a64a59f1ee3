########################
# Monte Carlo Engine   #
########################

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
import math
import re
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from app.exceptions import ValidationError
from app.input_validators import InputValidator
from app.lab_config import DEFAULT_SEED, LabConfig
from app.logger import Logger
from app.observers import BatchObserver
from app.protocols import ProtocolFactory, ProtocolSpec
from app.run_outcome import RunOutcome, Winner
from app.update_function import MajorityTypeFunction, build_function

MAX_ALPHA = 0.49
# Batches smaller than this run in-process
PARALLEL_MIN_RUNS = 64


class AdversaryDirection(str, Enum):
    NONE = "none"
    TOWARD_MINORITY = "toward_minority"
    TOWARD_MAJORITY = "toward_majority"
    RANDOM = "random"


@dataclass(frozen=True)
class AdversaryPolicy:
    """
    Per-round perturbation of at most budget(n) opinions.

    budget is one of the presets "none", "sqrt_over_log" (floor(sqrt(n)/ln n))
    or "pow<alpha>" (floor(n^alpha)) with alpha <= 0.49. The shift is applied
    after the binomial redraw and only when the redrawn count is strictly
    inside (0, n), so consensus states stay absorbing.
    """
    direction: AdversaryDirection = AdversaryDirection.NONE
    budget_rule: str = "none"

    def __post_init__(self):
        try:
            object.__setattr__(self, "direction", AdversaryDirection(self.direction))
        except ValueError as e:
            raise ValidationError(f"Unknown adversary direction: {self.direction}") from e
        rule = self.budget_rule.strip().lower()
        if rule not in ("none", "sqrt_over_log"):
            match = re.fullmatch(r"pow([0-9]*\.?[0-9]+)", rule)
            if match is None:
                raise ValidationError(f"Unknown adversary budget: {self.budget_rule}")
            if float(match.group(1)) > MAX_ALPHA:
                raise ValidationError(f"Adversary exponent must be at most {MAX_ALPHA}, got {match.group(1)}")
        object.__setattr__(self, "budget_rule", rule)

    @classmethod
    def none(cls) -> "AdversaryPolicy":
        return cls()

    @classmethod
    def parse(cls, text: str) -> "AdversaryPolicy":
        """Parse "direction:budget", e.g. "toward_minority:pow0.3"; "none" disables."""
        text = text.strip().lower()
        if text == "none":
            return cls()
        if ":" not in text:
            raise ValidationError(f"Adversary needs 'direction:budget', got '{text}'")
        direction, rule = text.split(":", 1)
        return cls(direction.strip(), rule)

    @property
    def active(self) -> bool:
        return self.direction is not AdversaryDirection.NONE and self.budget_rule != "none"

    def budget(self, n: int) -> int:
        if self.budget_rule == "none":
            return 0
        if self.budget_rule == "sqrt_over_log":
            return int(math.floor(math.sqrt(n) / math.log(n)))
        alpha = float(self.budget_rule[3:])
        return int(math.floor(n ** alpha))

    def apply(self, count: int, n: int, rng: np.random.Generator) -> int:
        if not self.active or not 0 < count < n:
            return count
        flips = self.budget(n)
        distance = count - n / 2
        sign = 1 if distance > 0 else -1 if distance < 0 else 0
        if self.direction is AdversaryDirection.TOWARD_MINORITY:
            shifted = count - sign * min(flips, int(abs(distance)))
        elif self.direction is AdversaryDirection.TOWARD_MAJORITY:
            shifted = count + sign * flips
        else:
            shifted = count + (flips if rng.integers(2) else -flips)
        return min(max(shifted, 0), n)

    def to_dict(self) -> Dict[str, Any]:
        return {"direction": self.direction.value, "budget": self.budget_rule}


def fraction_to_count(x: float, n: int) -> int:
    """Round x n half to even, clamped to [0, n]."""
    return min(max(int(round(float(x) * n)), 0), n)


def x0_from_d(n: int, d: float) -> int:
    """Initial X count n/2 + d sqrt(n), rounded half to even and clamped to [0, n]."""
    size = InputValidator.validate_positive_int(n, "n", minimum=1)
    value = size / 2 + InputValidator._to_float(d, "d") * math.sqrt(size)
    return min(max(int(round(value)), 0), size)


def default_max_rounds(spec: ProtocolSpec, n: int) -> int:
    """10 (1/2 log_gamma n + log_m ln n) + 100."""
    fn = build_function(spec)
    size = max(int(n), 2)
    centre = 0.5 * math.log(size, fn.gamma) + math.log(math.log(size), fn.m)
    return max(int(math.ceil(10.0 * centre + 100.0)), 1)


def run_index_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Independent stream for run index of a batch."""
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))


@dataclass
class SimConfig:
    """Inputs of one Monte Carlo experiment."""
    n: int
    x0: int
    protocol: ProtocolSpec
    adversary: AdversaryPolicy = field(default_factory=AdversaryPolicy.none)
    max_rounds: Optional[int] = None
    master_seed: int = DEFAULT_SEED
    record_trajectory: bool = False

    def __post_init__(self):
        self.n = InputValidator.validate_positive_int(self.n, "n", minimum=1)
        self.x0 = InputValidator.validate_count(self.x0, self.n, "x0")
        if self.max_rounds is None:
            self.max_rounds = default_max_rounds(self.protocol, self.n)
        self.max_rounds = InputValidator.validate_positive_int(self.max_rounds, "max_rounds")
        self.master_seed = InputValidator._to_int(self.master_seed, "seed")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValidationError(f"seed must fit in 64 unsigned bits, got {self.master_seed}")

    @classmethod
    def with_bias(cls, n: int, d: float, protocol: ProtocolSpec, **kwargs: Any) -> "SimConfig":
        return cls(n=n, x0=x0_from_d(n, d), protocol=protocol, **kwargs)

    @property
    def function(self) -> MajorityTypeFunction:
        return build_function(self.protocol)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "x0": self.x0,
            "protocol": self.protocol.to_dict(),
            "adversary": self.adversary.to_dict(),
            "max_rounds": self.max_rounds,
            "master_seed": self.master_seed,
            "record_trajectory": self.record_trajectory,
        }

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> "SimConfig":
        """
        Build a config from its JSON form. Either x0 or d must be given.

        Raises:
            ValidationError: On missing, conflicting or malformed fields.
        """
        if "n" not in data or "protocol" not in data:
            raise ValidationError("Simulation config needs 'n' and 'protocol'")
        if "x0" in data and "d" in data:
            raise ValidationError("Give either x0 or d, not both")
        protocol = data["protocol"]
        spec = ProtocolFactory.parse(protocol) if isinstance(protocol, str) else ProtocolFactory.from_dict(protocol)
        n = InputValidator.validate_positive_int(data["n"], "n")
        x0 = data["x0"] if "x0" in data else x0_from_d(n, data.get("d", 0.0))
        adversary = data.get("adversary", "none")
        if isinstance(adversary, dict):
            adversary = AdversaryPolicy(adversary.get("direction", "none"), adversary.get("budget", "none"))
        elif isinstance(adversary, str):
            adversary = AdversaryPolicy.parse(adversary)
        return SimConfig(
            n=n,
            x0=x0,
            protocol=spec,
            adversary=adversary,
            max_rounds=data.get("max_rounds"),
            master_seed=data.get("master_seed", DEFAULT_SEED),
            record_trajectory=bool(data.get("record_trajectory", False)),
        )


def step(x_t: int, config: SimConfig, rng: np.random.Generator) -> int:
    """
    One synchronous round: X_{t+1} ~ Bin(n, f(X_t / n)), then the adversary shift.
    """
    n = config.n
    if x_t <= 0 or x_t >= n:
        return int(x_t)
    p = float(config.function(x_t / n))
    redrawn = int(rng.binomial(n, p))
    return config.adversary.apply(redrawn, n, rng)


def agent_level_step_kmaj(x_t: int, k: int, n: int, rng: np.random.Generator) -> int:
    """
    One k-majority round simulated vertex by vertex.

    Every vertex samples k vertices with replacement (itself included) and adopts
    the majority, breaking ties uniformly.
    """
    k = InputValidator.validate_positive_int(k, "k", minimum=3)
    x_t = InputValidator.validate_count(x_t, n, "x_t")
    if x_t in (0, n):
        return x_t
    seen = (rng.integers(0, n, size=(n, k)) < x_t).sum(axis=1)
    adopts = seen * 2 > k
    if k % 2 == 0:
        ties = seen * 2 == k
        adopts = adopts | (ties & (rng.random(n) < 0.5))
    return int(adopts.sum())


def run(config: SimConfig, run_index: int = 0, rng: Optional[np.random.Generator] = None) -> RunOutcome:
    """Iterate step until consensus or max_rounds; the cap yields an Unresolved outcome."""
    if rng is None:
        rng = np.random.default_rng(run_index_seed(config.master_seed, run_index))
    n = config.n
    x = config.x0
    trajectory: Optional[List[int]] = [x] if config.record_trajectory else None
    t = 0
    while 0 < x < n and t < config.max_rounds:
        x = step(x, config, rng)
        t += 1
        if trajectory is not None:
            trajectory.append(x)
    if x == n:
        winner = Winner.X
    elif x == 0:
        winner = Winner.Y
    else:
        winner = Winner.UNRESOLVED
    return RunOutcome(run_index, t, winner, config.x0, n, config.master_seed, trajectory)


def _run_chunk(config: SimConfig, indices: Sequence[int]) -> List[RunOutcome]:
    return [run(config, index) for index in indices]


def _chunks(num_runs: int, workers: int) -> List[range]:
    size = math.ceil(num_runs / workers)
    return [range(start, min(start + size, num_runs)) for start in range(0, num_runs, size)]


def batch(
    config: SimConfig,
    num_runs: int,
    master_seed: Optional[int] = None,
    observers: Iterable[BatchObserver] = (),
    threads: Optional[int] = None,
) -> List[RunOutcome]:
    """
    Run num_runs independent copies of the experiment.

    Run i draws from run_index_seed(master_seed, i), so the output is identical
    whatever the worker count. Workers are capped by CONSENSUS_LAB_THREADS.
    """
    count = InputValidator.validate_positive_int(num_runs, "num_runs")
    if master_seed is not None:
        config = replace(config, master_seed=master_seed)
    workers = threads if threads is not None else LabConfig().threads
    workers = max(1, min(int(workers), count))
    Logger.infoLog(
        f"Batch of {count} runs: {config.protocol.shorthand()}, n={config.n}, x0={config.x0}, "
        f"seed={config.master_seed}, workers={workers}"
    )
    if workers == 1 or count < PARALLEL_MIN_RUNS:
        outcomes = _run_chunk(config, range(count))
    else:
        outcomes = []
        with ProcessPoolExecutor(max_workers=workers) as executor:
            for part in executor.map(_run_chunk, [config] * workers, _chunks(count, workers)):
                outcomes.extend(part)
    for outcome in outcomes:
        for observer in observers:
            observer.update(outcome)
    return outcomes
