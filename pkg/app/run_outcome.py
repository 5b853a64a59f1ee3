from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

from app.exceptions import SchemaError
from app.logger import Logger


class Winner(str, Enum):
    """The opinion everyone holds at consensus, or Unresolved when the cap was hit."""
    X = "X"
    Y = "Y"
    UNRESOLVED = "Unresolved"

    @classmethod
    def parse(cls, text: str) -> "Winner":
        for member in cls:
            if member.value.lower() == str(text).strip().lower():
                return member
        raise SchemaError(f"Unknown winner label: {text}")


@dataclass
class RunOutcome:
    # Required fields
    run_index: int          # Position of the run inside its batch
    runtime: int            # Rounds to absorption, or max_rounds when unresolved
    winner: Winner          # Dominating opinion
    x0: int                 # Initial count of opinion X
    n: int                  # Population size
    seed: int               # Master seed of the batch

    # Optional per-round counts X_0, X_1, ...
    trajectory: Optional[List[int]] = field(default=None, compare=False)

    @property
    def resolved(self) -> bool:
        return self.winner is not Winner.UNRESOLVED

    def to_dict(self) -> Dict[str, Any]:
        """
        Convert the outcome to a row of the batch CSV.

        Returns:
            Dict[str, Any]: Columns run_index, runtime, winner, x0, n, seed.
        """
        return {
            'run_index': self.run_index,
            'runtime': self.runtime,
            'winner': self.winner.value,
            'x0': self.x0,
            'n': self.n,
            'seed': self.seed,
        }

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> 'RunOutcome':
        """
        Create an outcome from a batch CSV row.

        Raises:
            SchemaError: If a column is missing or malformed.
        """
        try:
            outcome = RunOutcome(
                run_index=int(data['run_index']),
                runtime=int(data['runtime']),
                winner=Winner.parse(data['winner']),
                x0=int(data['x0']),
                n=int(data['n']),
                seed=int(data['seed']),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"Invalid run outcome data: {e}") from e
        if outcome.runtime < 0 or not 0 <= outcome.x0 <= outcome.n:
            Logger.warnLog(f"Loaded run outcome out of range: {outcome}")
            raise SchemaError(f"Run outcome out of range: {outcome}")
        return outcome

    def trajectory_rows(self) -> List[Dict[str, int]]:
        """Rows of the trajectory CSV: run_index, t, x_t."""
        if self.trajectory is None:
            return []
        return [
            {'run_index': self.run_index, 't': t, 'x_t': x_t}
            for t, x_t in enumerate(self.trajectory)
        ]

    def __str__(self) -> str:
        return f"run {self.run_index}: {self.winner.value} after {self.runtime} rounds (x0={self.x0}, n={self.n})"
