"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numbers

from .exceptions import ValidationError


def check_positive_int(value, name: str) -> int:
    if not isinstance(value, numbers.Integral) or isinstance(value, bool) or value < 1:
        raise ValidationError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_non_negative(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or value < 0:
        raise ValidationError(f"{name} must be a non-negative real, got {value!r}")
    return float(value)


def check_open_unit(value, name: str) -> float:
    """Require 0 < value < 1."""
    if not isinstance(value, numbers.Real) or not 0.0 < float(value) < 1.0:
        raise ValidationError(f"{name} must lie strictly between 0 and 1, got {value!r}")
    return float(value)


def check_unit_interval(value, name: str, *, open_low: bool = False) -> float:
    low_ok = value > 0.0 if open_low else value >= 0.0
    if not isinstance(value, numbers.Real) or not (low_ok and float(value) <= 1.0):
        bracket = "(0, 1]" if open_low else "[0, 1]"
        raise ValidationError(f"{name} must lie in {bracket}, got {value!r}")
    return float(value)


def check_seed(value, name: str = "seed") -> int:
    if not isinstance(value, numbers.Integral) or isinstance(value, bool) or value < 0:
        raise ValidationError(f"{name} must be an unsigned integer, got {value!r}")
    return int(value)


def check_fitted(estimator, attribute: str = "train_") -> None:
    if not hasattr(estimator, attribute):
        raise ValidationError(
            f"{type(estimator).__name__} is not fitted; call fit() before predict()"
        )
