########################
# Batch Observers      #
########################

from abc import ABC, abstractmethod
from collections import Counter

from app.logger import Logger
from app.run_outcome import RunOutcome, Winner


class BatchObserver(ABC):
    """
    Abstract base class for batch observers.

    Observers are notified once per run, in run-index order, after a batch has
    collected its results.
    """

    @abstractmethod
    def update(self, outcome: RunOutcome) -> None:
        """
        Handle a finished run.

        Args:
            outcome (RunOutcome): The outcome of the run.
        """
        pass  # pragma: no cover


class LoggingObserver(BatchObserver):
    """Observer that writes every run outcome to the log file."""

    def update(self, outcome: RunOutcome) -> None:
        if outcome is None:
            raise AttributeError("Outcome cannot be None")
        Logger.debugLog(f"Run finished: {outcome}")


class SummaryObserver(BatchObserver):
    """
    Observer that tallies winners and runtimes.

    Unresolved runs point at a cap that is too small or at a bug, so every one
    of them is logged as a warning.
    """

    def __init__(self):
        self.winners: Counter = Counter()
        self.total_runtime = 0
        self.runs = 0

    def update(self, outcome: RunOutcome) -> None:
        if outcome is None:
            raise AttributeError("Outcome cannot be None")
        self.winners[outcome.winner] += 1
        self.total_runtime += outcome.runtime
        self.runs += 1
        if outcome.winner is Winner.UNRESOLVED:
            Logger.warnLog(f"Run {outcome.run_index} hit the round cap at {outcome.runtime}")

    @property
    def unresolved(self) -> int:
        return self.winners[Winner.UNRESOLVED]

    def mean_runtime(self) -> float:
        return self.total_runtime / self.runs if self.runs else 0.0

    def summary(self) -> str:
        return (
            f"{self.runs} runs: X={self.winners[Winner.X]}, Y={self.winners[Winner.Y]}, "
            f"unresolved={self.unresolved}, mean runtime={self.mean_runtime():.3f}"
        )
