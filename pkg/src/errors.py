# src/errors.py

from __future__ import annotations


class FragstatError(Exception):
    """Base error. `code` is the stable identifier printed by the CLI."""

    code = "fragstat-error"

    def __str__(self) -> str:
        msg = super().__str__()
        return f"{self.code}: {msg}" if msg else self.code


# -------------------------------------------------------
# INPUT VALIDATION
# -------------------------------------------------------

class InvalidParameterError(FragstatError, ValueError):
    code = "invalid-parameter"


class InvalidDensityError(InvalidParameterError):
    code = "invalid-density"


class DomainError(InvalidParameterError):
    code = "domain-error"


class InvalidThresholdError(InvalidParameterError):
    code = "invalid-threshold"


class NoiseTooLargeError(InvalidParameterError):
    code = "noise-too-large"


class SupportOverflowError(InvalidParameterError):
    code = "support-overflow"


class IllConditionedError(InvalidParameterError):
    code = "ill-conditioned"


class AssumptionViolatedError(InvalidParameterError):
    code = "assumption-D-violated"


# -------------------------------------------------------
# NUMERICAL / RUNTIME
# -------------------------------------------------------

class DivergentMomentError(FragstatError, ArithmeticError):
    code = "divergent-moment"


class ZeroMeanError(FragstatError, ArithmeticError):
    code = "zero-mean"


class DegenerateDenominatorError(FragstatError, ArithmeticError):
    code = "degenerate-denominator"


class DegenerateFitError(FragstatError, ArithmeticError):
    code = "degenerate-fit"


class SamplerError(FragstatError, RuntimeError):
    code = "sampler-failure"


class BudgetExceededError(FragstatError, RuntimeError):
    code = "budget-exceeded"
