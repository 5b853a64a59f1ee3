########################
# Exception Hierarchy  #
########################

from typing import Optional


class ConsensusLabError(Exception):
    """
    Base exception class for consensus-lab errors.

    All custom exceptions of the simulator and the limit-law engine inherit from
    this class, allowing for unified error handling in the command-line surface.
    """
    pass


class ValidationError(ConsensusLabError):
    """
    Raised when input validation fails.

    Triggered by invalid protocol specifications (unnormalised pmfs, asymmetric
    threshold distributions, k below the minimum), fractions outside [0, 1],
    counts outside [0, n] and conflicting command-line flags.
    """
    pass


class SchemaError(ValidationError):
    """
    Raised when a CSV or JSON input does not have the expected shape.

    Used by the readers in the exports module when columns or metadata keys are
    missing, or when two inputs describe different protocols or sizes.
    """
    pass


class OperationError(ConsensusLabError):
    """
    Raised when a numerical operation cannot be carried out.

    Examples are a propagation residual that cannot be driven below its
    threshold, a failed Gaussian integration, or a non-monotone h table.
    """
    pass


class ConvergenceError(OperationError):
    """
    Raised when a truncated limit does not converge before its hard cap.

    Carries the truncation parameters that were in use when the computation
    gave up, so the caller can report them as diagnostics.
    """

    def __init__(
        self,
        message: str,
        a_used: Optional[int] = None,
        b_used: Optional[int] = None,
        terms: Optional[int] = None,
    ):
        super().__init__(message)
        self.a_used = a_used
        self.b_used = b_used
        self.terms = terms

    def diagnostics(self) -> str:
        parts = []
        if self.a_used is not None:
            parts.append(f"a_used={self.a_used}")
        if self.b_used is not None:
            parts.append(f"b_used={self.b_used}")
        if self.terms is not None:
            parts.append(f"terms={self.terms}")
        return " ".join(parts)


class ConfigurationError(ConsensusLabError):
    """
    Raised when the lab configuration is invalid.

    Triggered when configuration values from the environment or the constructor
    are out of range, such as a non-positive thread count or tolerance.
    """
    pass
