"""Composition primitives.

Compositions here are never closed: parts keep whatever common unit they
were measured in, so both their ratios and their absolute magnitude
(through the multiplicative total) are available to the models.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Final
from typing import Self
from typing import final

import numpy as np
import numpy.typing as npt

from logcontrast.exceptions import InvalidLogBaseError
from logcontrast.exceptions import NonPositivePartError
from logcontrast.exceptions import RefIndexOutOfRangeError
from logcontrast.exceptions import TooFewPartsError

type FloatArray = npt.NDArray[np.float64]

MIN_PARTS: Final = 2


@final
@dataclass(frozen=True, slots=True)
class LogBase:
    """Base of the logarithm applied to parts, totals and log responses."""

    base: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.base) and self.base > 1):
            raise InvalidLogBaseError(
                f"Logarithm base must be a finite real > 1, got {self.base!r}."
            )

    @property
    def ln(self) -> float:
        """Natural logarithm of the base."""
        return math.log(self.base)

    def log(self, values: npt.ArrayLike) -> FloatArray:
        """Elementwise logarithm in this base.

        The common bases use their dedicated numpy routines so that exact
        powers map to exact integers.
        """
        array = np.asarray(values, dtype=np.float64)
        if self.base == 2:  # noqa: PLR2004
            return np.log2(array)
        if self.base == 10:  # noqa: PLR2004
            return np.log10(array)
        if self.base == math.e:
            return np.log(array)
        return np.log(array) / self.ln


BASE_2: Final = LogBase(2.0)
BASE_E: Final = LogBase(math.e)
BASE_10: Final = LogBase(10.0)


@final
@dataclass(frozen=True, slots=True)
class Composition:
    """A vector of strictly positive parts in an arbitrary common unit."""

    parts: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.parts) < MIN_PARTS:
            raise TooFewPartsError(
                f"A composition needs at least {MIN_PARTS} parts, "
                f"got {len(self.parts)}."
            )
        for index, value in enumerate(self.parts):
            if not (math.isfinite(value) and value > 0):
                raise NonPositivePartError(index, value)

    @property
    def D(self) -> int:  # noqa: N802
        return len(self.parts)

    def as_array(self) -> FloatArray:
        return np.asarray(self.parts, dtype=np.float64)

    def scaled(self, factor: float) -> Self:
        """Multiply every part by a positive factor."""
        return type(self)(tuple(part * factor for part in self.parts))


def validate_composition(raw: Sequence[float] | npt.ArrayLike) -> Composition:
    """Validate raw values as a composition.

    Args:
        raw: Candidate part values.

    Returns:
        The validated composition.

    Raises:
        TooFewPartsError: If fewer than two values are given.
        NonPositivePartError: If any value is zero, negative or not
            finite; the offending index is reported.
    """
    values = np.atleast_1d(np.asarray(raw, dtype=np.float64))
    return Composition(tuple(float(value) for value in values))


def log_parts(c: Composition, b: LogBase = BASE_2) -> FloatArray:
    """Return the log of every part, the regressors of a log-contrast model."""
    return b.log(c.parts)


def multiplicative_total(c: Composition, b: LogBase = BASE_2) -> float:
    """Return the multiplicative total, the sum of the log parts.

    This is the unscaled total used for estimation, without the
    square-root-of-D factor of the T-space definition.
    """
    return math.fsum(log_parts(c, b).tolist())


def _check_ref_index(ref_index: int, n_parts: int) -> None:
    if not 0 <= ref_index < n_parts:
        raise RefIndexOutOfRangeError(
            f"Reference index {ref_index} is outside [0, {n_parts})."
        )


def alr_coords(c: Composition, ref_index: int, b: LogBase = BASE_2) -> FloatArray:
    """Additive log-ratio coordinates of a composition.

    Args:
        c: The composition.
        ref_index: Position of the reference (denominator) part.
        b: Logarithm base.

    Returns:
        `log_b(x_j / x_ref)` for every `j != ref_index`, in part order.

    Raises:
        RefIndexOutOfRangeError: If `ref_index` is not a valid position.
    """
    return alr_matrix(c.as_array()[np.newaxis, :], ref_index, b)[0]


def alr_matrix(parts: FloatArray, ref_index: int, b: LogBase = BASE_2) -> FloatArray:
    """Row-wise additive log-ratio coordinates of an n x D matrix of parts."""
    _check_ref_index(ref_index, parts.shape[1])
    logs = b.log(parts)
    ratios = logs - logs[:, [ref_index]]
    return np.delete(ratios, ref_index, axis=1)
