########################
# Input Validation     #
########################

from dataclasses import dataclass
import math
from typing import Any, Dict, Mapping

from app.exceptions import ValidationError

PMF_TOLERANCE = 1e-12


@dataclass
class InputValidator:
    """Validates and converts raw inputs for protocols, simulations and queries."""

    @staticmethod
    def validate_fraction(value: Any, name: str = "x") -> float:
        """
        Validate and convert input to a fraction in [0, 1].

        Args:
            value: Input value to validate
            name: Name used in the error message

        Returns:
            float: Validated fraction

        Raises:
            ValidationError: If input is not a finite number in [0, 1]
        """
        number = InputValidator._to_float(value, name)
        if not 0.0 <= number <= 1.0:
            raise ValidationError(f"{name} must lie in [0, 1], got {value}")
        return number

    @staticmethod
    def validate_probability(value: Any, name: str = "p") -> float:
        """Open-interval variant used for confidence levels."""
        number = InputValidator._to_float(value, name)
        if not 0.0 < number < 1.0:
            raise ValidationError(f"{name} must lie in (0, 1), got {value}")
        return number

    @staticmethod
    def validate_count(value: Any, n: int, name: str = "x0") -> int:
        """
        Validate an opinion count against the population size.

        Raises:
            ValidationError: If value is not an integer in [0, n]
        """
        count = InputValidator._to_int(value, name)
        if not 0 <= count <= n:
            raise ValidationError(f"{name} must lie in [0, {n}], got {value}")
        return count

    @staticmethod
    def validate_positive_int(value: Any, name: str, minimum: int = 1) -> int:
        count = InputValidator._to_int(value, name)
        if count < minimum:
            raise ValidationError(f"{name} must be at least {minimum}, got {value}")
        return count

    @staticmethod
    def validate_positive_real(value: Any, name: str) -> float:
        number = InputValidator._to_float(value, name)
        if number <= 0:
            raise ValidationError(f"{name} must be positive, got {value}")
        return number

    @staticmethod
    def validate_pmf(pmf: Mapping[Any, Any], name: str = "pmf") -> Dict[int, float]:
        """
        Validate a finite probability mass function over integers.

        Keys may be strings (as read from JSON); zero-mass entries are dropped.

        Returns:
            Dict[int, float]: Sorted pmf with integer keys

        Raises:
            ValidationError: If a key is not an integer, a mass is negative, or the
                masses do not sum to 1 within 1e-12
        """
        if not pmf:
            raise ValidationError(f"{name} must not be empty")
        cleaned: Dict[int, float] = {}
        for key, mass in pmf.items():
            outcome = InputValidator._to_int(key, f"{name} key")
            probability = InputValidator._to_float(mass, f"{name}[{key}]")
            if probability < 0:
                raise ValidationError(f"{name}[{key}] must be non-negative, got {mass}")
            if probability > 0:
                cleaned[outcome] = cleaned.get(outcome, 0.0) + probability
        total = math.fsum(cleaned.values())
        if abs(total - 1.0) > PMF_TOLERANCE:
            raise ValidationError(f"{name} must sum to 1, got {total!r}")
        return dict(sorted(cleaned.items()))

    @staticmethod
    def _to_float(value: Any, name: str) -> float:
        try:
            if isinstance(value, str):
                value = value.strip()
            number = float(value)
        except (TypeError, ValueError) as e:
            raise ValidationError(f"Invalid number format for {name}: {value}") from e
        if not math.isfinite(number):
            raise ValidationError(f"{name} must be finite, got {value}")
        return number

    @staticmethod
    def _to_int(value: Any, name: str) -> int:
        if isinstance(value, bool):
            raise ValidationError(f"{name} must be an integer, got {value}")
        if isinstance(value, int):
            return value
        number = InputValidator._to_float(value, name)
        if not number.is_integer():
            raise ValidationError(f"{name} must be an integer, got {value}")
        return int(number)
