"""Holds a collection of validators that are shared across the configuration records"""
import math
from typing import Sequence, Tuple, Union

Number = Union[int, float]


def validate_positive(name: str, value: Number) -> Number:
    """Validates that a value is a finite, strictly positive number

    Parameters
    ----------
    name: str
        The name of the field, used in the error message.
    value: Union[int, float]
        The value to validate.

    Raises
    ------
    ValueError
        When the value is not finite or not strictly positive.
    """
    if not math.isfinite(value) or value <= 0:
        raise ValueError(f"`{name}` must be a finite positive number, found: {value}")
    return value


def validate_positive_int(name: str, value: int) -> int:
    """Validates that a value is an integer of at least one"""
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ValueError(f"`{name}` must be a positive integer, found: {value!r}")
    return value


def validate_range(name: str, bounds: Sequence[Number]) -> Tuple[float, float]:
    """Validates a closed `[lo, hi]` interval given as a pair.

    Parameters
    ----------
    name: str
        The name of the field, used in the error message.
    bounds: Sequence[Union[int, float]]
        A two-element sequence.

    Returns
    -------
    Tuple[float, float]
        The bounds as floats.

    Raises
    ------
    ValueError
        When the pair is malformed, not finite, or `lo > hi`.
    """
    if len(bounds) != 2:
        raise ValueError(f"`{name}` must be a pair `[lo, hi]`, found: {list(bounds)}")
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError(f"`{name}` bounds must be finite, found: [{lo}, {hi}]")
    if lo > hi:
        raise ValueError(f"`{name}` lower bound exceeds upper bound: [{lo}, {hi}]")
    return lo, hi
