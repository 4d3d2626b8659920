"""Least-squares estimation under zero-sum coefficient blocks.

Two routes give the same estimates: the direct constrained solve through
the KKT system, and ordinary least squares on additive log-ratio columns
mapped back to the constrained scale.
"""

import logging
import math
from dataclasses import dataclass
from typing import final

import numpy as np
import numpy.typing as npt
import scipy.linalg
import scipy.stats

from logcontrast.compute.compositions import FloatArray
from logcontrast.compute.design import ColumnRole
from logcontrast.compute.design import Dataset
from logcontrast.compute.design import DesignMatrix
from logcontrast.compute.design import DesignMeta
from logcontrast.compute.design import ModelSpec
from logcontrast.compute.design import alr_design
from logcontrast.compute.design import build_design
from logcontrast.compute.design import constraint_basis
from logcontrast.compute.design import response_vector
from logcontrast.compute.design import working_response
from logcontrast.compute.enums import BlockName
from logcontrast.compute.enums import RoleKind
from logcontrast.config.settings import settings
from logcontrast.exceptions import DimensionMismatchError
from logcontrast.exceptions import RankDeficientError
from logcontrast.exceptions import UnknownBlockError

logger = logging.getLogger(__name__)


@final
@dataclass(frozen=True, slots=True, eq=False)
class CoefficientEstimates:
    """Point estimates with optional uncertainty, common to every backend.

    Attributes:
        design_meta: Metadata of the fitted design.
        coefficients: Point estimates, one per column.
        sd: Standard errors or posterior standard deviations.
        sign_prob: Sign probabilities; None for frequentist fits.
        covariance: Joint covariance of the estimates, if known.
        dof: Degrees of freedom of the Student-t approximation used for
            linear combinations; infinite for a Gaussian one.
        samples: Posterior draws (draws x p) of sampled fits; sign
            probabilities of linear combinations are counted on them.
    """

    design_meta: DesignMeta
    coefficients: FloatArray
    sd: FloatArray | None = None
    sign_prob: FloatArray | None = None
    covariance: FloatArray | None = None
    dof: float = math.inf
    samples: FloatArray | None = None


@final
@dataclass(frozen=True, slots=True, eq=False)
class FreqFit:
    """A constrained least-squares fit.

    Attributes:
        coefficients: Estimates on the constrained scale, one per column.
        covariance: Covariance of the constrained estimator; the rows and
            columns of each zero-sum block sum to zero.
        sigma2_hat: Residual variance estimate, `rss / df_resid`.
        df_resid: `n - (p - number of constraint blocks)`.
        rss: Residual sum of squares.
        design_meta: Metadata of the design that was fitted.
    """

    coefficients: FloatArray
    covariance: FloatArray
    sigma2_hat: float
    df_resid: int
    rss: float
    design_meta: DesignMeta

    @property
    def se(self) -> FloatArray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def estimates(self) -> CoefficientEstimates:
        return CoefficientEstimates(
            design_meta=self.design_meta,
            coefficients=self.coefficients,
            sd=self.se,
            covariance=self.covariance,
            dof=float(self.df_resid),
        )


@final
@dataclass(frozen=True, slots=True)
class TestResult:
    __test__ = False

    statistic: float
    df: tuple[float, float] | float
    p_value: float
    hypothesis: str


def _free_parameters(X: DesignMatrix) -> int:
    return X.p - len(X.constraint_blocks)


def check_rank(reduced: FloatArray, what: str) -> None:
    n, k = reduced.shape
    if n < k:
        raise RankDeficientError(f"{what}: {n} rows for {k} free parameters.")
    singular = scipy.linalg.svdvals(reduced)
    if singular.size == 0:
        return
    if singular[-1] <= settings.rank_tolerance * singular[0]:
        raise RankDeficientError(
            f"{what}: design is rank deficient after the zero-sum reduction "
            f"(singular value ratio {singular[-1] / singular[0]:.3g})."
        )


def _check_df(X: DesignMatrix) -> int:
    df_resid = X.n - _free_parameters(X)
    if df_resid <= 0:
        raise DimensionMismatchError(
            f"Need more than {_free_parameters(X)} rows, got {X.n}."
        )
    return df_resid


def fit_constrained_ols(X: DesignMatrix, y: npt.ArrayLike) -> FreqFit:
    """Least squares subject to every constraint block summing to zero.

    Solves the KKT system `[[X'X, C'], [C, 0]] [b; l] = [X'y; 0]` with a
    symmetric indefinite factorisation. The covariance is the primal block
    of the inverse KKT matrix scaled by the residual variance.

    Args:
        X: The design.
        y: Response on the modelled scale.

    Returns:
        The fit.

    Raises:
        DimensionMismatchError: If `y` does not match the design or there
            are too few rows.
        RankDeficientError: If the columns are collinear beyond the
            compositional collinearity the constraints resolve.
    """
    y_work = working_response(X, y)
    df_resid = _check_df(X)
    check_rank(X.values @ constraint_basis(X.meta), "Constrained least squares")

    C = X.meta.constraint_matrix()
    m = C.shape[0]
    K = np.block([[X.values.T @ X.values, C.T], [C, np.zeros((m, m))]])
    rhs = np.concatenate([X.values.T @ y_work, np.zeros(m)])
    solution = scipy.linalg.solve(K, rhs, assume_a="sym")
    coefficients = solution[: X.p]

    residuals = y_work - X.values @ coefficients
    rss = float(residuals @ residuals)
    sigma2_hat = rss / df_resid
    K_inv = scipy.linalg.inv(K)
    primal = K_inv[: X.p, : X.p]
    covariance = sigma2_hat * (primal + primal.T) / 2
    return FreqFit(
        coefficients=coefficients,
        covariance=covariance,
        sigma2_hat=sigma2_hat,
        df_resid=df_resid,
        rss=rss,
        design_meta=X.meta,
    )


def fit_reduced_ols(
    X: DesignMatrix,
    y: npt.ArrayLike,
    ref_index: int | None = None,
) -> FreqFit:
    """Ordinary least squares in free coordinates, mapped back.

    With `ref_index`, the free coordinates of every zero-sum block are the
    additive log-ratio columns with that reference part (see
    `constraint_basis`); the reference coefficient is recovered as minus
    the sum of the others.
    """
    T = constraint_basis(X.meta, ref_index)
    return _fit_free(X, y, X.values @ T, T)


def _fit_free(
    X: DesignMatrix, y: npt.ArrayLike, reduced: FloatArray, T: FloatArray
) -> FreqFit:
    """OLS on the free-coordinate design `reduced`, mapped back by `T`."""
    y_work = working_response(X, y)
    df_resid = _check_df(X)
    check_rank(reduced, "Log-ratio least squares")

    Q, R = scipy.linalg.qr(reduced, mode="economic")
    gamma = scipy.linalg.solve_triangular(R, Q.T @ y_work)
    coefficients = T @ gamma
    residuals = y_work - reduced @ gamma
    rss = float(residuals @ residuals)
    sigma2_hat = rss / df_resid
    R_inv = scipy.linalg.solve_triangular(R, np.eye(R.shape[0]))
    covariance = sigma2_hat * (T @ R_inv @ R_inv.T @ T.T)
    return FreqFit(
        coefficients=coefficients,
        covariance=covariance,
        sigma2_hat=sigma2_hat,
        df_resid=df_resid,
        rss=rss,
        design_meta=X.meta,
    )


def fit_alr_ols(data: Dataset, spec: ModelSpec, ref_index: int) -> FreqFit:
    """Fit by OLS after the additive log-ratio transformation.

    Only the compositional parts are transformed: the moderator, total and
    total interaction enter unchanged, and interaction columns become the
    moderator times the alr coordinates. The estimates are reported on the
    constrained scale, identical to `fit_constrained_ols`.

    Raises:
        RefIndexOutOfRangeError: If `ref_index` is not a part position.
        RankDeficientError: If the alr design is collinear.
    """
    X = build_design(data, spec)
    reduced = alr_design(data, X, ref_index)
    T = constraint_basis(X.meta, ref_index)
    fit = _fit_free(X, response_vector(data, spec), reduced, T)
    logger.debug("Fitted alr least squares.", extra={"ref_index": ref_index})
    return fit


def _block_columns(meta: DesignMeta, block: BlockName) -> tuple[tuple[int, ...], int]:
    """Columns removed for a block test and the free parameters they carry."""
    blocks = {b[0]: b for b in meta.constraint_blocks}
    match block:
        case BlockName.COMP:
            kinds = {RoleKind.COMP}
        case BlockName.INTERACTION:
            kinds = {RoleKind.INTERACTION}
        case BlockName.ALL_INTERACTIONS:
            kinds = {RoleKind.INTERACTION, RoleKind.TOTAL_INTERACTION}
    columns = tuple(
        i for i, role in enumerate(meta.column_roles) if role.kind in kinds
    )
    constrained = sum(1 for first in blocks if first in columns)
    return columns, len(columns) - constrained


def f_test_block(
    fit: FreqFit,
    y: npt.ArrayLike,
    X: DesignMatrix,
    block: BlockName,
) -> TestResult:
    """Joint F test that a block of coefficients is zero.

    The restricted model drops the block's columns and keeps the zero-sum
    constraints of the remaining blocks. A zero-sum block of size D
    carries D - 1 free parameters.

    Raises:
        UnknownBlockError: If the design has no columns for `block`.
    """
    columns, q = _block_columns(X.meta, block)
    if not columns or q == 0:
        raise UnknownBlockError(f"The design has no '{block}' columns to test.")
    restricted = fit_constrained_ols(X.drop_columns(columns), y)
    numerator = max(restricted.rss - fit.rss, 0.0) / q
    denominator = fit.rss / fit.df_resid
    if denominator == 0:
        statistic = math.inf if numerator > 0 else 0.0
    else:
        statistic = numerator / denominator
    p_value = float(scipy.stats.f.sf(statistic, q, fit.df_resid))
    return TestResult(
        statistic=statistic,
        df=(float(q), float(fit.df_resid)),
        p_value=min(max(p_value, 0.0), 1.0),
        hypothesis=f"all {block} coefficients are zero",
    )


def t_test_coef(fit: FreqFit, column: ColumnRole | RoleKind) -> TestResult:
    """Two-sided t test that one coefficient is zero.

    Members of zero-sum blocks are tested with the diagonal of the
    constrained covariance.

    Raises:
        UnknownColumnError: If the design has no such column.
    """
    index = fit.design_meta.index_of(column)
    estimate = float(fit.coefficients[index])
    se = float(fit.se[index])
    if se > 0:
        statistic = estimate / se
    elif estimate == 0:
        statistic = 0.0
    else:
        statistic = math.copysign(math.inf, estimate)
    p_value = float(2 * scipy.stats.t.sf(abs(statistic), fit.df_resid))
    return TestResult(
        statistic=statistic,
        df=float(fit.df_resid),
        p_value=min(max(p_value, 0.0), 1.0),
        hypothesis=f"{column} coefficient is zero",
    )
