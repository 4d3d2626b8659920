"""Design matrices for log-contrast models with total and moderation terms.

Columns are always laid out in the same order, which is part of the public
contract so coefficient indices agree across every fitting backend:

    intercept, comp(1..D), moderator, interaction(1..D), total,
    total_interaction, log_offset

with each group present only when the `ModelSpec` enables it.
"""

import dataclasses
import logging
import math
from collections.abc import Iterable
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Self
from typing import final

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field
from pydantic import field_validator

from logcontrast.compute.compositions import MIN_PARTS
from logcontrast.compute.compositions import Composition
from logcontrast.compute.compositions import FloatArray
from logcontrast.compute.compositions import LogBase
from logcontrast.compute.compositions import alr_matrix
from logcontrast.compute.compositions import multiplicative_total
from logcontrast.compute.enums import ModeratorKind
from logcontrast.compute.enums import OffsetMode
from logcontrast.compute.enums import ResponseTransform
from logcontrast.compute.enums import RoleKind
from logcontrast.config.settings import settings
from logcontrast.exceptions import DimensionMismatchError
from logcontrast.exceptions import InconsistentDError
from logcontrast.exceptions import LogContrastDesignError
from logcontrast.exceptions import MissingModeratorError
from logcontrast.exceptions import MissingOffsetError
from logcontrast.exceptions import MissingTimeKeysError
from logcontrast.exceptions import NonPositivePartError
from logcontrast.exceptions import NonPositiveResponseError
from logcontrast.exceptions import NotZeroSumError
from logcontrast.exceptions import RefIndexOutOfRangeError
from logcontrast.exceptions import UnknownColumnError

logger = logging.getLogger(__name__)

type IntArray = npt.NDArray[np.int64]


class ModelSpec(BaseModel):
    """Declarative description of the model family to build."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    part_names: tuple[str, ...] = Field(
        min_length=MIN_PARTS,
        description="Labels of the composition parts, in column order.",
        examples=[("PM10", "NO2", "O3", "CO", "SO2")],
    )
    log_base: float = Field(
        default=2.0,
        gt=1,
        description="Base of the logarithm applied to parts, total and response.",
        examples=[2.0, math.e],
    )
    include_total: bool = Field(
        default=False,
        description="Whether to add the multiplicative total as a covariate.",
    )
    moderator: ModeratorKind = Field(
        default=ModeratorKind.NONE,
        description="Kind of moderating variable, if any.",
    )
    center_covariates: bool = Field(
        default=True,
        description=(
            "Mean-centre log-part, total, numeric moderator and log-offset "
            "columns before interaction products are formed."
        ),
    )
    response_transform: ResponseTransform = Field(
        default=ResponseTransform.IDENTITY,
        description="Transformation applied to the response before fitting.",
    )
    offset_column: str | None = Field(
        default=None,
        description="Name of the offset column (e.g. population), if any.",
        examples=["population"],
    )
    offset_mode: OffsetMode = Field(
        default=OffsetMode.FIXED,
        description=(
            "'fixed' adds the natural log of the offset with coefficient 1; "
            "'covariate' estimates a coefficient for its log instead."
        ),
    )

    @field_validator("part_names")
    @classmethod
    def _distinct_part_names(cls, part_names: tuple[str, ...]) -> tuple[str, ...]:
        if len(set(part_names)) != len(part_names):
            msg = "Part names must be distinct"
            raise ValueError(msg)
        return part_names

    @property
    def D(self) -> int:  # noqa: N802
        return len(self.part_names)

    @property
    def base(self) -> LogBase:
        return LogBase(self.log_base)

    @property
    def has_moderator(self) -> bool:
        return self.moderator is not ModeratorKind.NONE

    @property
    def response_log_base(self) -> float | None:
        """Log base of the modelled response, None on the identity scale."""
        if self.response_transform is ResponseTransform.LOG:
            return self.log_base
        return None


@final
@dataclass(frozen=True, slots=True)
class ColumnRole:
    kind: RoleKind
    part: int | None = None

    def __str__(self) -> str:
        if self.part is None:
            return str(self.kind)
        return f"{self.kind}({self.part + 1})"

    def label(self, part_names: Sequence[str]) -> str:
        if self.part is None:
            return str(self.kind)
        return f"{self.kind}:{part_names[self.part]}"


def column_layout(spec: ModelSpec) -> tuple[ColumnRole, ...]:
    """Column roles of the design for `spec`, in contract order."""
    parts = range(spec.D)
    roles = [ColumnRole(RoleKind.INTERCEPT)]
    roles.extend(ColumnRole(RoleKind.COMP, j) for j in parts)
    if spec.has_moderator:
        roles.append(ColumnRole(RoleKind.MODERATOR))
        roles.extend(ColumnRole(RoleKind.INTERACTION, j) for j in parts)
    if spec.include_total:
        roles.append(ColumnRole(RoleKind.TOTAL))
        if spec.has_moderator:
            roles.append(ColumnRole(RoleKind.TOTAL_INTERACTION))
    if spec.offset_column is not None and spec.offset_mode is OffsetMode.COVARIATE:
        roles.append(ColumnRole(RoleKind.LOG_OFFSET))
    return tuple(roles)


def _blocks_for(roles: Sequence[ColumnRole]) -> tuple[tuple[int, ...], ...]:
    blocks = []
    for kind in (RoleKind.COMP, RoleKind.INTERACTION):
        members = tuple(i for i, role in enumerate(roles) if role.kind is kind)
        if members:
            blocks.append(members)
    return tuple(blocks)


@final
@dataclass(frozen=True, slots=True, eq=False)
class DesignMeta:
    """Column metadata of a design matrix.

    Attributes:
        spec: The specification the design was built from.
        column_roles: Role of every column.
        constraint_blocks: Index sets whose coefficients must sum to zero.
        centers: Per-column subtracted means (0 when uncentred).
        response_log_base: Log base of the modelled response; None when
            the response is modelled on its original scale.
    """

    spec: ModelSpec
    column_roles: tuple[ColumnRole, ...]
    constraint_blocks: tuple[tuple[int, ...], ...]
    centers: FloatArray
    response_log_base: float | None

    @classmethod
    def for_spec(
        cls,
        spec: ModelSpec,
        *,
        response_log_base: float | None = None,
        centers: FloatArray | None = None,
    ) -> Self:
        """Metadata for a `ModelSpec` without data (all centres zero by default).

        Args:
            spec: The model specification.
            response_log_base: Overrides the response scale implied by
                `spec`, e.g. `math.e` for a log-link count model.
            centers: Column centres, if known.
        """
        roles = column_layout(spec)
        if centers is None:
            centers = np.zeros(len(roles))
        if response_log_base is None:
            response_log_base = spec.response_log_base
        return cls(
            spec=spec,
            column_roles=roles,
            constraint_blocks=_blocks_for(roles),
            centers=_frozen(centers),
            response_log_base=response_log_base,
        )

    @property
    def p(self) -> int:
        return len(self.column_roles)

    @property
    def part_names(self) -> tuple[str, ...]:
        return self.spec.part_names

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(role.label(self.part_names) for role in self.column_roles)

    def has(self, kind: RoleKind) -> bool:
        return any(role.kind is kind for role in self.column_roles)

    def indices(self, kind: RoleKind) -> tuple[int, ...]:
        """Column indices with the given role kind, in part order."""
        return tuple(i for i, role in enumerate(self.column_roles) if role.kind is kind)

    def index_of(self, role: ColumnRole | RoleKind) -> int:
        """Column index of a single role.

        Raises:
            UnknownColumnError: If the design has no such column.
        """
        if isinstance(role, RoleKind):
            role = ColumnRole(role)
        try:
            return self.column_roles.index(role)
        except ValueError:
            raise UnknownColumnError(f"The design has no '{role}' column.") from None

    def constraint_matrix(self) -> FloatArray:
        """One row per zero-sum block with ones on the block's columns."""
        matrix = np.zeros((len(self.constraint_blocks), self.p))
        for row, block in enumerate(self.constraint_blocks):
            matrix[row, list(block)] = 1.0
        return matrix

    def without(self, drop: Iterable[int]) -> Self:
        """Metadata with the given columns removed.

        Constraint blocks must be dropped whole; the remaining block
        indices are renumbered.
        """
        dropped = set(drop)
        keep = [i for i in range(self.p) if i not in dropped]
        renumber = {old: new for new, old in enumerate(keep)}
        blocks = []
        for block in self.constraint_blocks:
            members = [renumber[i] for i in block if i in renumber]
            if members and len(members) != len(block):
                raise LogContrastDesignError("Constraint blocks must be removed whole.")
            if members:
                blocks.append(tuple(members))
        return dataclasses.replace(
            self,
            column_roles=tuple(self.column_roles[i] for i in keep),
            constraint_blocks=tuple(blocks),
            centers=_frozen(self.centers[keep]),
        )


@final
@dataclass(frozen=True, slots=True, eq=False)
class DesignMatrix:
    """Numeric design with column roles, zero-sum blocks and offset.

    Attributes:
        values: The n x p matrix.
        meta: Column metadata.
        offset: Natural-log offsets, one per row, or None.
    """

    values: FloatArray
    meta: DesignMeta
    offset: FloatArray | None = None

    def __post_init__(self) -> None:
        shape = self.values.shape
        if len(shape) != 2 or shape[1] != self.meta.p:  # noqa: PLR2004
            raise InconsistentDError(
                f"Design has shape {self.values.shape} but {self.meta.p} roles."
            )
        object.__setattr__(self, "values", _frozen(self.values))
        if self.offset is not None:
            object.__setattr__(self, "offset", _frozen(self.offset))

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def p(self) -> int:
        return self.meta.p

    @property
    def column_roles(self) -> tuple[ColumnRole, ...]:
        return self.meta.column_roles

    @property
    def constraint_blocks(self) -> tuple[tuple[int, ...], ...]:
        return self.meta.constraint_blocks

    @property
    def centers(self) -> FloatArray:
        return self.meta.centers

    def drop_columns(self, drop: Iterable[int]) -> Self:
        drop = sorted(set(drop))
        return type(self)(
            values=np.delete(self.values, drop, axis=1),
            meta=self.meta.without(drop),
            offset=self.offset,
        )


@final
@dataclass(frozen=True, slots=True, eq=False)
class Dataset:
    """Columnar observations sharing one composition layout.

    Attributes:
        parts: n x D matrix of strictly positive parts.
        response: Response values.
        part_names: Labels of the D parts.
        moderator: Moderator values, if any.
        offset: Strictly positive offset values (e.g. population), if any.
        group: Group key per row (e.g. area), if any.
        time: Integer time key per row (e.g. day ordinal), if any.
        dropped_rows: Rows removed so far by missing-data handling or
            lagging.
    """

    parts: FloatArray
    response: FloatArray
    part_names: tuple[str, ...]
    moderator: FloatArray | None = None
    offset: FloatArray | None = None
    group: tuple[str, ...] | None = None
    time: IntArray | None = None
    dropped_rows: int = 0

    def __post_init__(self) -> None:
        parts = np.asarray(self.parts, dtype=np.float64)
        if parts.ndim != 2 or parts.shape[1] != len(self.part_names):  # noqa: PLR2004
            raise InconsistentDError(
                f"Parts matrix of shape {parts.shape} does not match "
                f"{len(self.part_names)} part names."
            )
        if parts.shape[1] < MIN_PARTS:
            raise InconsistentDError("A composition needs at least two parts.")
        bad = np.argwhere(~(np.isfinite(parts) & (parts > 0)))
        if bad.size:
            row, index = (int(i) for i in bad[0])
            raise NonPositivePartError(
                index,
                float(parts[row, index]),
                row=row,
                column=self.part_names[index],
            )
        n = parts.shape[0]
        object.__setattr__(self, "parts", _frozen(parts))
        object.__setattr__(self, "response", _frozen(self._column(self.response, n)))
        if self.moderator is not None:
            object.__setattr__(
                self, "moderator", _frozen(self._column(self.moderator, n))
            )
        if self.offset is not None:
            offset = self._column(self.offset, n)
            if not np.all(np.isfinite(offset) & (offset > 0)):
                raise LogContrastDesignError("Offset values must be strictly positive.")
            object.__setattr__(self, "offset", _frozen(offset))
        if self.group is not None and len(self.group) != n:
            raise LogContrastDesignError("Group keys must have one entry per row.")
        if self.time is not None:
            time = np.asarray(self.time, dtype=np.int64)
            if time.shape != (n,):
                raise LogContrastDesignError("Time keys must have one entry per row.")
            object.__setattr__(self, "time", _frozen(time))

    @staticmethod
    def _column(values: npt.ArrayLike, n: int) -> FloatArray:
        column = np.asarray(values, dtype=np.float64)
        if column.shape != (n,):
            raise LogContrastDesignError(
                f"Expected a column of {n} values, got shape {column.shape}."
            )
        return column

    @classmethod
    def from_compositions(
        cls,
        compositions: Sequence[Composition],
        response: npt.ArrayLike,
        *,
        part_names: Sequence[str] | None = None,
        moderator: npt.ArrayLike | None = None,
        offset: npt.ArrayLike | None = None,
        group: Sequence[str] | None = None,
        time: npt.ArrayLike | None = None,
    ) -> Self:
        """Build a dataset from validated compositions, one per row.

        Raises:
            InconsistentDError: If the compositions differ in part count.
        """
        counts = {c.D for c in compositions}
        if len(counts) > 1:
            raise InconsistentDError(
                f"Compositions have differing D: {sorted(counts)}."
            )
        D = counts.pop() if counts else len(part_names or ())
        if part_names is None:
            part_names = tuple(f"x{j + 1}" for j in range(D))
        return cls(
            parts=np.array([c.parts for c in compositions], dtype=np.float64).reshape(
                len(compositions), D
            ),
            response=np.asarray(response, dtype=np.float64),
            part_names=tuple(part_names),
            moderator=None if moderator is None else np.asarray(moderator),
            offset=None if offset is None else np.asarray(offset),
            group=None if group is None else tuple(group),
            time=None if time is None else np.asarray(time, dtype=np.int64),
        )

    @property
    def n(self) -> int:
        return int(self.parts.shape[0])

    @property
    def D(self) -> int:  # noqa: N802
        return int(self.parts.shape[1])

    @property
    def compositions(self) -> tuple[Composition, ...]:
        return tuple(Composition(tuple(row)) for row in self.parts.tolist())

    def take(self, rows: Sequence[int] | IntArray) -> Self:
        """Subset of rows, in the given order."""
        index = np.asarray(rows, dtype=np.int64)
        return dataclasses.replace(
            self,
            parts=self.parts[index],
            response=self.response[index],
            moderator=None if self.moderator is None else self.moderator[index],
            offset=None if self.offset is None else self.offset[index],
            group=None if self.group is None else tuple(self.group[i] for i in index),
            time=None if self.time is None else self.time[index],
        )


def _frozen[T: np.generic](array: npt.NDArray[T]) -> npt.NDArray[T]:
    frozen = np.array(array, copy=True)
    frozen.setflags(write=False)
    return frozen


def apply_lag(data: Dataset, lag: int) -> Dataset:
    """Pair each row's response with covariates from `lag` steps earlier.

    The source of a row at time `t` is the row of the same group at time
    `t - lag`. Composition and moderator come from the source; response,
    offset and keys stay with the target row. Rows without a source are
    dropped and counted in `dropped_rows`. Output rows are ordered by
    group (first appearance) and then time.

    Args:
        data: The dataset.
        lag: Non-negative lag in time-key units.

    Returns:
        The lagged dataset; `data` itself when `lag` is 0.

    Raises:
        MissingTimeKeysError: If `lag > 0` and group or time keys are
            missing.
    """
    if lag < 0:
        raise LogContrastDesignError(f"Lag must be non-negative, got {lag}.")
    if lag == 0:
        return data
    if data.group is None or data.time is None:
        raise MissingTimeKeysError("Lagging needs group and time keys.")

    groups = data.group
    times = data.time.tolist()
    position: dict[tuple[str, int], int] = {}
    for i, key in enumerate(zip(groups, times, strict=True)):
        if key in position:
            raise LogContrastDesignError(f"Duplicate group/time key {key}.")
        position[key] = i
    group_rank = {g: rank for rank, g in enumerate(dict.fromkeys(groups))}
    order = sorted(range(data.n), key=lambda i: (group_rank[groups[i]], times[i]))

    targets: list[int] = []
    sources: list[int] = []
    for i in order:
        source = position.get((groups[i], times[i] - lag))
        if source is not None:
            targets.append(i)
            sources.append(source)

    lagged = data.take(targets)
    covariates = data.take(sources)
    dropped = data.n - len(targets)
    logger.info(
        "Applied covariate lag.",
        extra={"lag": lag, "rows": len(targets), "dropped_rows": dropped},
    )
    return dataclasses.replace(
        lagged,
        parts=covariates.parts,
        moderator=covariates.moderator,
        dropped_rows=data.dropped_rows + dropped,
    )


def _row_totals(data: Dataset, base: LogBase) -> FloatArray:
    return np.fromiter(
        (multiplicative_total(c, base) for c in data.compositions),
        dtype=np.float64,
        count=data.n,
    )


def _assemble(
    data: Dataset,
    spec: ModelSpec,
    centers: FloatArray | None,
) -> DesignMatrix:
    if data.D != spec.D:
        raise InconsistentDError(
            f"Dataset has D={data.D} but the specification has D={spec.D}."
        )
    if spec.has_moderator and data.moderator is None:
        raise MissingModeratorError("The model needs a moderator column.")
    if spec.offset_column is not None and data.offset is None:
        raise MissingOffsetError(f"Missing offset column '{spec.offset_column}'.")
    if data.n == 0:
        raise LogContrastDesignError("Cannot build a design from an empty dataset.")

    roles = column_layout(spec)
    logs = spec.base.log(data.parts)
    base: dict[ColumnRole, FloatArray] = {
        ColumnRole(RoleKind.COMP, j): logs[:, j] for j in range(spec.D)
    }
    if spec.has_moderator and data.moderator is not None:
        base[ColumnRole(RoleKind.MODERATOR)] = data.moderator
    if spec.include_total:
        base[ColumnRole(RoleKind.TOTAL)] = _row_totals(data, spec.base)
    if spec.offset_column is not None and data.offset is not None:
        if spec.offset_mode is OffsetMode.COVARIATE:
            base[ColumnRole(RoleKind.LOG_OFFSET)] = spec.base.log(data.offset)
        offset = np.log(data.offset) if spec.offset_mode is OffsetMode.FIXED else None
    else:
        offset = None

    if centers is None:
        centers = np.zeros(len(roles))
        if spec.center_covariates:
            for i, role in enumerate(roles):
                if role in base and not (
                    role.kind is RoleKind.MODERATOR
                    and spec.moderator is ModeratorKind.BINARY
                ):
                    centers[i] = np.mean(base[role])
    centered = {
        role: base[role] - centers[i] for i, role in enumerate(roles) if role in base
    }

    columns = []
    for role in roles:
        match role.kind:
            case RoleKind.INTERCEPT:
                columns.append(np.ones(data.n))
            case RoleKind.INTERACTION:
                columns.append(
                    centered[ColumnRole(RoleKind.MODERATOR)]
                    * centered[ColumnRole(RoleKind.COMP, role.part)]
                )
            case RoleKind.TOTAL_INTERACTION:
                columns.append(
                    centered[ColumnRole(RoleKind.MODERATOR)]
                    * centered[ColumnRole(RoleKind.TOTAL)]
                )
            case _:
                columns.append(centered[role])

    meta = DesignMeta(
        spec=spec,
        column_roles=roles,
        constraint_blocks=_blocks_for(roles),
        centers=_frozen(centers),
        response_log_base=spec.response_log_base,
    )
    return DesignMatrix(values=np.column_stack(columns), meta=meta, offset=offset)


def build_design(data: Dataset, spec: ModelSpec) -> DesignMatrix:
    """Build the design matrix of `spec` for `data`.

    When `spec.center_covariates` is set, every non-intercept base column
    (log parts, total, numeric moderator, log offset) is mean-centred
    before interaction products are formed. Binary moderators stay 0/1.

    Raises:
        MissingModeratorError: If `spec` needs a moderator the data
            lacks.
        MissingOffsetError: If `spec` names an offset the data lacks.
        InconsistentDError: If the part counts disagree.
    """
    return _assemble(data, spec, centers=None)


def transform_design(data: Dataset, meta: DesignMeta) -> DesignMatrix:
    """Build the design for new data re-using a fitted design's centres."""
    design = _assemble(data, meta.spec, centers=np.array(meta.centers))
    return dataclasses.replace(
        design,
        meta=dataclasses.replace(design.meta, response_log_base=meta.response_log_base),
    )


def response_vector(data: Dataset, spec: ModelSpec) -> FloatArray:
    """The response on the modelled scale.

    Raises:
        NonPositiveResponseError: If a log transform meets a response
            that is not strictly positive.
    """
    if spec.response_transform is ResponseTransform.IDENTITY:
        return np.array(data.response)
    if not np.all(data.response > 0):
        row = int(np.argmin(data.response > 0))
        raise NonPositiveResponseError(
            f"A log response needs strictly positive values (row {row}: "
            f"{data.response[row]!r})."
        )
    return spec.base.log(data.response)


def working_offset(X: DesignMatrix, response_log_base: float | None) -> FloatArray:
    """Offset on the scale of the linear predictor, zeros without one.

    The stored offset is a natural log; models whose response is on a
    log-b scale divide it by `ln(b)`.
    """
    if X.offset is None:
        return np.zeros(X.n)
    if response_log_base is None:
        raise LogContrastDesignError("An offset needs a log-scale response.")
    return np.asarray(X.offset / math.log(response_log_base))


def linear_predictor(X: DesignMatrix, coefficients: FloatArray) -> FloatArray:
    """`X @ coefficients` plus the offset on the design's response scale."""
    eta = X.values @ coefficients
    if X.offset is not None:
        eta = eta + working_offset(X, X.meta.response_log_base)
    return np.asarray(eta)


def decompose_total(gamma: npt.ArrayLike) -> tuple[FloatArray, float]:
    """Split per-part coefficients into zero-sum and constant components.

    Returns:
        `(beta, beta_t)` with `beta_t` the mean of `gamma` and
        `beta = gamma - beta_t`.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.ndim != 1 or gamma.size < MIN_PARTS:
        raise InconsistentDError("Need a vector of at least two coefficients.")
    beta_t = math.fsum(gamma.tolist()) / gamma.size
    return gamma - beta_t, beta_t


def recompose_total(beta: npt.ArrayLike, beta_t: float) -> FloatArray:
    """Per-part coefficients `beta_j + beta_t` of the elasticity form.

    Raises:
        NotZeroSumError: If `beta` does not sum to zero.
    """
    beta = np.asarray(beta, dtype=np.float64)
    total = math.fsum(beta.tolist())
    if abs(total) > settings.zero_sum_tolerance:
        raise NotZeroSumError(f"Coefficients sum to {total!r}, not zero.")
    return beta + beta_t


def _helmert(size: int) -> FloatArray:
    """Orthonormal basis (size x size-1) of the complement of the ones vector."""
    basis = np.zeros((size, size - 1))
    for k in range(1, size):
        basis[:k, k - 1] = 1.0
        basis[k, k - 1] = -k
        basis[:, k - 1] /= math.sqrt(k * (k + 1))
    return basis


def _alr_basis(size: int, ref_index: int) -> FloatArray:
    if not 0 <= ref_index < size:
        raise RefIndexOutOfRangeError(
            f"Reference index {ref_index} is outside [0, {size})."
        )
    basis = np.delete(np.eye(size), ref_index, axis=1)
    basis[ref_index, :] = -1.0
    return basis


def constraint_basis(meta: DesignMeta, ref_index: int | None = None) -> FloatArray:
    """Map free coordinates onto coefficients satisfying every zero-sum block.

    Returns a p x (p - #blocks) matrix `T` whose columns span the
    coefficient vectors with zero block sums. Unconstrained columns map
    one-to-one. With `ref_index`, each block uses the additive log-ratio
    basis with that reference part, so `X @ T` holds alr coordinates
    (and moderator-times-alr products); otherwise an orthonormal
    Helmert basis is used.
    """
    blocks = {block[0]: block for block in meta.constraint_blocks}
    members = {i for block in meta.constraint_blocks for i in block}
    columns: list[FloatArray] = []
    for i in range(meta.p):
        if i in blocks:
            block = blocks[i]
            local = (
                _helmert(len(block))
                if ref_index is None
                else _alr_basis(len(block), ref_index)
            )
            embedded = np.zeros((meta.p, local.shape[1]))
            embedded[list(block), :] = local
            columns.extend(embedded.T)
        elif i not in members:
            unit = np.zeros(meta.p)
            unit[i] = 1.0
            columns.append(unit)
    return np.column_stack(columns)


def alr_design(data: Dataset, X: DesignMatrix, ref_index: int) -> FloatArray:
    """Free-coordinate design with every zero-sum block in alr coordinates.

    The composition block holds the centred `alr_matrix` columns of the
    parts and an interaction block the centred moderator times them; the
    other columns of `X` are kept. Columns are in `constraint_basis`
    order, so this equals `X.values @ constraint_basis(X.meta, ref_index)`.

    Raises:
        RefIndexOutOfRangeError: If `ref_index` is not a part position.
    """
    meta = X.meta
    centers = np.asarray(meta.centers)[list(meta.indices(RoleKind.COMP))]
    alr = alr_matrix(data.parts, ref_index, meta.spec.base)
    alr = alr - np.delete(centers - centers[ref_index], ref_index)
    blocks = {block[0]: block for block in meta.constraint_blocks}
    members = {i for block in meta.constraint_blocks for i in block}
    columns: list[FloatArray] = []
    for i, role in enumerate(meta.column_roles):
        if i in blocks and role.kind is RoleKind.COMP:
            columns.extend(alr.T)
        elif i in blocks:
            moderator = X.values[:, meta.index_of(RoleKind.MODERATOR)]
            columns.extend((moderator[:, np.newaxis] * alr).T)
        elif i not in members:
            columns.append(X.values[:, i])
    return np.column_stack(columns)


def working_response(X: DesignMatrix, y: npt.ArrayLike) -> FloatArray:
    """Response minus the offset, ready for a linear-model solve.

    Raises:
        DimensionMismatchError: If `y` does not have one value per row.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.n,):
        raise DimensionMismatchError(
            f"Response has shape {y.shape}, design has {X.n} rows."
        )
    return y - working_offset(X, X.meta.response_log_base)
