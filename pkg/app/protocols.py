########################
# Protocol Specs       #
########################

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from fractions import Fraction
import json
import math
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial
from scipy import special, stats

from app.exceptions import ValidationError
from app.input_validators import InputValidator

# Coefficients below this magnitude count as zero when reading off the order at 0
COEFFICIENT_EPS = 1e-14

# Below this fraction the correction p(x) in f(x) = x^m (beta + p(x)) is dropped
PURE_POWER_THRESHOLD = 1e-30


class ProtocolSpec(ABC):
    """
    Abstract base class for two-opinion update rules.

    A protocol maps the current fraction x of vertices holding opinion X to the
    probability f(x) that a vertex holds X after one synchronous round. Every
    method is vectorised over numpy arrays and pure.
    """

    kind: str = ""

    @abstractmethod
    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Return f(x) for an array of fractions."""

    @abstractmethod
    def derivative(self, x: np.ndarray) -> np.ndarray:
        """Return f'(x) for an array of fractions."""

    @abstractmethod
    def leading_ratio(self, x: np.ndarray) -> np.ndarray:
        """
        Return f(x) / x^m for x in [0, 1/2] without forming x^m.

        This is the factor beta + p(x) of f(x) = x^m (beta + p(x)).
        """

    @abstractmethod
    def leading_order(self) -> Tuple[int, float]:
        """Return (m, beta) read off at 0, without checking m >= 2."""

    @abstractmethod
    def slope_at_half(self) -> float:
        """Return f'(1/2)."""

    @property
    @abstractmethod
    def degree(self) -> int:
        """Polynomial degree of f, used to size quadrature rules."""

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready representation, the inverse of ProtocolFactory.from_dict."""

    @abstractmethod
    def shorthand(self) -> str:
        """Command-line shorthand, the inverse of ProtocolFactory.from_shorthand."""

    def params(self) -> Tuple[int, float, float]:
        """
        Return the certified parameters (m, beta, gamma).

        Raises:
            ValidationError: If the order of vanishing at 0 is below 2, which puts
                f outside the majority-type class (voter-model-like rules).
        """
        m, beta = self.leading_order()
        if m < 2:
            raise ValidationError(
                f"{self.shorthand()} vanishes to order m={m} at 0; majority-type rules need m >= 2"
            )
        return m, beta, self.slope_at_half()

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def __str__(self) -> str:
        return self.shorthand()


def _threshold_sf(k: int, q: int, x: np.ndarray) -> np.ndarray:
    # P(Bin(k, x) >= q)
    return special.bdtrc(q - 1, k, x)


def _threshold_density(k: int, q: int, x: np.ndarray) -> np.ndarray:
    # d/dx P(Bin(k, x) >= q) = k P(Bin(k-1, x) = q-1)
    return k * stats.binom.pmf(q - 1, k - 1, x)


class ThresholdMixture(ProtocolSpec):
    """
    Rules of the form f(x) = sum_j w_j P(Bin(k_j, x) >= q_j).

    All three built-in families are threshold mixtures. Subclasses provide the
    components; evaluation works on min(x, 1-x) and reflects through the
    symmetry 1 - f(1-x) = f(x), which keeps the tails accurate near 0 and 1.
    """

    @abstractmethod
    def components(self) -> List[Tuple[float, int, int]]:
        """Return the (weight, k, q) triples of the mixture."""

    def _lower_half(self, x: np.ndarray) -> np.ndarray:
        total = np.zeros_like(x, dtype=float)
        for weight, k, q in self.components():
            total = total + weight * _threshold_sf(k, q, x)
        return total

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lower = np.minimum(x, 1.0 - x)
        value = self._lower_half(lower)
        return np.where(x <= 0.5, value, 1.0 - value)

    def derivative(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x, dtype=float)
        for weight, k, q in self.components():
            total = total + weight * _threshold_density(k, q, x)
        return total

    def leading_ratio(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m, _ = self.leading_order()
        total = np.zeros_like(x, dtype=float)
        for weight, k, q in self.components():
            i = np.arange(q, k + 1)
            coefficients = special.comb(k, i)
            terms = (
                coefficients
                * np.power.outer(x, i - m)
                * np.power.outer(1.0 - x, k - i)
            )
            total = total + weight * terms.sum(axis=-1)
        return total

    def leading_order(self) -> Tuple[int, float]:
        parts = self.components()
        m = min(q for _, _, q in parts)
        beta = sum(Fraction(w) * math.comb(k, q) for w, k, q in parts if q == m)
        return m, float(beta)

    def slope_at_half(self) -> float:
        gamma = sum(
            Fraction(w) * Fraction(k * math.comb(k - 1, q - 1), 2 ** (k - 1))
            for w, k, q in self.components()
        )
        return float(gamma)

    @property
    def degree(self) -> int:
        return max(k for _, k, _ in self.components())


@dataclass(frozen=True)
class KMaj(ThresholdMixture):
    """
    k-majority: adopt the majority of k neighbours sampled with replacement,
    breaking ties uniformly.
    """
    k: int
    kind: str = field(default="kmaj", init=False, repr=False)

    def __post_init__(self):
        k = InputValidator.validate_positive_int(self.k, "k", minimum=3)
        object.__setattr__(self, "k", k)

    def components(self) -> List[Tuple[float, int, int]]:
        # f_k = f_{k-1} for even k, so every KMaj reduces to an odd majority
        odd = self.k if self.k % 2 == 1 else self.k - 1
        return [(1.0, odd, (odd + 1) // 2)]

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "k": self.k}

    def shorthand(self) -> str:
        return f"kmaj:{self.k}"


@dataclass(frozen=True)
class RandKMaj(ThresholdMixture):
    """
    rand-k-maj: every vertex draws its own k from a bounded pmf on integers >= 3
    and then applies the k-maj rule.
    """
    pmf: Tuple[Tuple[int, float], ...]
    kind: str = field(default="rand_kmaj", init=False, repr=False)

    def __post_init__(self):
        raw = dict(self.pmf) if not isinstance(self.pmf, Mapping) else self.pmf
        cleaned = InputValidator.validate_pmf(raw, "rand_kmaj pmf")
        for k in cleaned:
            if k < 3:
                raise ValidationError(f"rand_kmaj support must be >= 3, got {k}")
        object.__setattr__(self, "pmf", tuple(cleaned.items()))

    def components(self) -> List[Tuple[float, int, int]]:
        parts = []
        for k, weight in self.pmf:
            parts.extend((weight * w, kk, q) for w, kk, q in KMaj(k).components())
        return parts

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "pmf": {str(k): w for k, w in self.pmf}}

    def shorthand(self) -> str:
        return "randkmaj:" + ",".join(f"{k}={w!r}" for k, w in self.pmf)


@dataclass(frozen=True)
class KNeighbRand(ThresholdMixture):
    """
    k-neighb-rand: sample k neighbours, draw a threshold q from a pmf on
    {2, ..., k-1} symmetric under q -> k+1-q, adopt X if at least q of the
    samples hold X.
    """
    k: int
    q_pmf: Tuple[Tuple[int, float], ...]
    kind: str = field(default="k_neighb_rand", init=False, repr=False)

    def __post_init__(self):
        k = InputValidator.validate_positive_int(self.k, "k", minimum=4)
        raw = dict(self.q_pmf) if not isinstance(self.q_pmf, Mapping) else self.q_pmf
        cleaned = InputValidator.validate_pmf(raw, "k_neighb_rand q_pmf")
        for q, mass in cleaned.items():
            if not 2 <= q <= k - 1:
                raise ValidationError(f"k_neighb_rand thresholds must lie in [2, {k - 1}], got {q}")
            if abs(cleaned.get(k + 1 - q, 0.0) - mass) > 1e-12:
                raise ValidationError(
                    f"k_neighb_rand q_pmf must satisfy pmf(q) = pmf(k+1-q); q={q} breaks it"
                )
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "q_pmf", tuple(cleaned.items()))

    def components(self) -> List[Tuple[float, int, int]]:
        return [(weight, self.k, q) for q, weight in self.q_pmf]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "k": self.k,
            "q_pmf": {str(q): w for q, w in self.q_pmf},
        }

    def shorthand(self) -> str:
        return f"kneighb:{self.k};" + ",".join(f"{q}={w!r}" for q, w in self.q_pmf)


@dataclass(frozen=True)
class CustomPolynomial(ProtocolSpec):
    """
    A user rule given by monomial coefficients c_0, c_1, ... of f.

    Custom rules are not trusted: build_function runs the full axiom validation
    before one can be used by the simulator or the limit-law engine.
    """
    coeffs: Tuple[float, ...]
    kind: str = field(default="poly", init=False, repr=False)

    def __post_init__(self):
        values = tuple(InputValidator._to_float(c, "coefficient") for c in self.coeffs)
        while len(values) > 1 and values[-1] == 0.0:
            values = values[:-1]
        if not values:
            raise ValidationError("poly needs at least one coefficient")
        object.__setattr__(self, "coeffs", values)

    @property
    def polynomial(self) -> Polynomial:
        return Polynomial(self.coeffs)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.polynomial(np.asarray(x, dtype=float))

    def derivative(self, x: np.ndarray) -> np.ndarray:
        return self.polynomial.deriv()(np.asarray(x, dtype=float))

    def _order_at_zero(self) -> int:
        for index, coefficient in enumerate(self.coeffs):
            if abs(coefficient) > COEFFICIENT_EPS:
                return index
        return len(self.coeffs)

    def leading_ratio(self, x: np.ndarray) -> np.ndarray:
        m = self._order_at_zero()
        return Polynomial(self.coeffs[m:] or (0.0,))(np.asarray(x, dtype=float))

    def leading_order(self) -> Tuple[int, float]:
        m = self._order_at_zero()
        beta = self.coeffs[m] if m < len(self.coeffs) else 0.0
        return m, float(beta)

    def slope_at_half(self) -> float:
        return float(self.polynomial.deriv()(0.5))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "coeffs": list(self.coeffs)}

    def shorthand(self) -> str:
        return "poly:" + ",".join(repr(c) for c in self.coeffs)


def _parse_pairs(text: str, name: str) -> Dict[str, str]:
    pairs: Dict[str, str] = {}
    for item in text.split(","):
        if "=" not in item:
            raise ValidationError(f"Malformed {name} entry '{item}', expected key=value")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


class ProtocolFactory:
    """
    Factory class for creating protocol specs.

    Builds specs from the JSON form ({"kind": "kmaj", "k": 3}, ...) and from the
    command-line shorthand ("kmaj:3", "randkmaj:3=0.5,5=0.5",
    "kneighb:5;2=0.25,3=0.5,4=0.25", "poly:0,0,3,-2"). New kinds can be
    registered at runtime.
    """
    _Protocol: Dict[str, type] = {
        'kmaj': KMaj,
        'rand_kmaj': RandKMaj,
        'k_neighb_rand': KNeighbRand,
        'poly': CustomPolynomial,
    }
    _Shorthand: Dict[str, str] = {
        'kmaj': 'kmaj',
        'randkmaj': 'rand_kmaj',
        'kneighb': 'k_neighb_rand',
        'poly': 'poly',
    }

    @classmethod
    def register_protocol(cls, name: str, protocol_class: type) -> None:
        """
        Register a new protocol kind.

        Raises:
            TypeError: If the protocol_class does not inherit from ProtocolSpec.
        """
        if not issubclass(protocol_class, ProtocolSpec):
            raise TypeError("Protocol class must inherit from ProtocolSpec")
        cls._Protocol[name.lower()] = protocol_class

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ProtocolSpec:
        """
        Create a spec from its JSON form.

        Raises:
            ValidationError: If the kind is unknown or fields are missing.
        """
        if not isinstance(data, Mapping) or "kind" not in data:
            raise ValidationError(f"Protocol JSON needs a 'kind' field: {data}")
        kind = str(data["kind"]).lower()
        protocol_class = cls._Protocol.get(kind)
        if protocol_class is None:
            raise ValidationError(f"Unknown protocol kind: {data['kind']}")
        try:
            if protocol_class is KMaj:
                return KMaj(data["k"])
            if protocol_class is RandKMaj:
                return RandKMaj(tuple(data["pmf"].items()))
            if protocol_class is KNeighbRand:
                return KNeighbRand(data["k"], tuple(data["q_pmf"].items()))
            if protocol_class is CustomPolynomial:
                return CustomPolynomial(tuple(data["coeffs"]))
            return protocol_class(**{k: v for k, v in data.items() if k != "kind"})
        except (KeyError, AttributeError, TypeError) as e:
            raise ValidationError(f"Invalid {kind} protocol JSON {dict(data)}: {e}") from e

    @classmethod
    def from_shorthand(cls, text: str) -> ProtocolSpec:
        """
        Create a spec from the command-line shorthand.

        Raises:
            ValidationError: If the shorthand cannot be parsed.
        """
        if ":" not in text:
            raise ValidationError(f"Protocol shorthand needs 'name:args', got '{text}'")
        name, body = text.split(":", 1)
        kind = cls._Shorthand.get(name.strip().lower())
        if kind is None:
            raise ValidationError(f"Unknown protocol kind: {name}")
        body = body.strip()
        if kind == 'kmaj':
            return KMaj(InputValidator._to_int(body, "k"))
        if kind == 'rand_kmaj':
            return RandKMaj(tuple(_parse_pairs(body, "randkmaj").items()))
        if kind == 'k_neighb_rand':
            if ";" not in body:
                raise ValidationError(f"kneighb shorthand needs 'k;q=p,...', got '{body}'")
            k_text, pairs = body.split(";", 1)
            return KNeighbRand(
                InputValidator._to_int(k_text, "k"),
                tuple(_parse_pairs(pairs, "kneighb").items()),
            )
        return CustomPolynomial(tuple(c for c in body.split(",") if c.strip()))

    @classmethod
    def parse(cls, text: str) -> ProtocolSpec:
        """Accept either the JSON form or the shorthand."""
        stripped = text.strip()
        if stripped.startswith("{"):
            try:
                return cls.from_dict(json.loads(stripped))
            except json.JSONDecodeError as e:
                raise ValidationError(f"Invalid protocol JSON: {e}") from e
        return cls.from_shorthand(stripped)


def builtin_examples() -> Sequence[ProtocolSpec]:
    """One representative of each built-in family."""
    return (
        KMaj(3),
        RandKMaj(((3, 0.5), (5, 0.5))),
        KNeighbRand(5, ((2, 0.25), (3, 0.5), (4, 0.25))),
    )
