"""Bayesian Gaussian linear models under zero-sum coefficient blocks.

The soft mode places a narrow Gaussian distribution on every block sum,
written as one pseudo-observation per block with a fixed variance that is
not scaled by the residual variance. The hard mode works in the
orthonormal complement of the ones vector, where the conjugate
Normal-Inverse-Gamma model has a closed form.
"""

import logging
import math
from dataclasses import dataclass
from typing import final

import numpy as np
import numpy.typing as npt
import scipy.linalg
import scipy.stats
from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field

from logcontrast.compute.compositions import FloatArray
from logcontrast.compute.concurrency import ordered_map
from logcontrast.compute.design import ColumnRole
from logcontrast.compute.design import DesignMatrix
from logcontrast.compute.design import DesignMeta
from logcontrast.compute.design import constraint_basis
from logcontrast.compute.design import working_response
from logcontrast.compute.enums import ConstraintMode
from logcontrast.compute.enums import HardSampling
from logcontrast.compute.enums import PosteriorMode
from logcontrast.compute.enums import RoleKind
from logcontrast.compute.freq_fit import CoefficientEstimates
from logcontrast.exceptions import NotHardModeError
from logcontrast.exceptions import NotSoftModeError
from logcontrast.exceptions import SamplerDivergenceError

logger = logging.getLogger(__name__)

SOFT_VARIANCE_PER_PART = 0.001
RHAT_WARNING = 1.01
MIN_RHAT_DRAWS = 4


class PriorSpec(BaseModel):
    """Priors and sampler settings for the Bayesian linear model."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    coef_prior_precision: float = Field(
        default=1e-4,
        ge=0,
        description=(
            "Precision of the zero-mean Gaussian prior on slopes. Soft mode uses "
            "it as an absolute precision; in hard mode it is relative to the "
            "residual variance and the prior is N(0, sigma2 / precision). Any "
            "positive value counts as a proper prior in both modes."
        ),
    )
    intercept_prior_precision: float = Field(
        default=0.0,
        ge=0,
        description="Precision of the zero-mean Gaussian prior on the intercept.",
    )
    constraint_mode: ConstraintMode = Field(
        default=ConstraintMode.SOFT,
        description="How zero-sum blocks are imposed.",
    )
    soft_variance: float | None = Field(
        default=None,
        gt=0,
        description=(
            "Variance of each block sum; defaults to 0.001 times the block size."
        ),
    )
    noise_shape: float = Field(
        default=1e-3,
        ge=0,
        description="Shape of the inverse-gamma prior on the residual variance.",
    )
    noise_rate: float = Field(
        default=1e-3,
        ge=0,
        description="Rate of the inverse-gamma prior on the residual variance.",
    )
    chains: int = Field(default=4, ge=1)
    draws: int = Field(default=5000, ge=1, description="Kept draws per chain.")
    burn_in: int = Field(default=1000, ge=0)
    seed: int = Field(default=0, ge=0)
    hard_sampling: HardSampling = Field(
        default=HardSampling.NONE,
        description="Draws attached to hard-mode summaries, if any.",
    )

    def block_variance(self, size: int) -> float:
        if self.soft_variance is not None:
            return self.soft_variance
        return SOFT_VARIANCE_PER_PART * size


@final
@dataclass(frozen=True, slots=True, eq=False)
class PosteriorSummary:
    """Marginal posterior summaries, one entry per design column.

    Attributes:
        mean: Posterior means.
        sd: Posterior standard deviations.
        sign_prob: `max(P(b > 0), P(b < 0))` per coefficient.
        samples: Pooled draws (draws x p), if any were produced.
        mode: Whether the summaries are analytic or computed from draws.
        design_meta: Metadata of the fitted design.
        rhat: Split R-hat per coefficient for multi-chain sampled fits.
        covariance: Joint posterior covariance, exact or from draws.
        dof: Degrees of freedom of Student-t marginals; infinite when
            they are Gaussian.
    """

    mean: FloatArray
    sd: FloatArray
    sign_prob: FloatArray
    samples: FloatArray | None
    mode: PosteriorMode
    design_meta: DesignMeta
    rhat: FloatArray | None = None
    covariance: FloatArray | None = None
    dof: float = math.inf

    def estimates(self) -> CoefficientEstimates:
        return CoefficientEstimates(
            design_meta=self.design_meta,
            coefficients=self.mean,
            sd=self.sd,
            sign_prob=self.sign_prob,
            covariance=self.covariance,
            dof=self.dof,
            samples=self.samples if self.mode is PosteriorMode.SAMPLED else None,
        )


def _prior_precision(meta: DesignMeta, prior: PriorSpec) -> FloatArray:
    return np.array(
        [
            prior.intercept_prior_precision
            if role.kind is RoleKind.INTERCEPT
            else prior.coef_prior_precision
            for role in meta.column_roles
        ]
    )


def _proper(precision: FloatArray) -> npt.NDArray[np.bool_]:
    # Any positive precision is a proper prior, however small.
    return np.asarray(precision != 0)


def draw_sign_prob(samples: FloatArray) -> FloatArray:
    """Draw fraction of the more likely sign; draws at zero count half."""
    positive = np.mean(samples > 0, axis=0) + 0.5 * np.mean(samples == 0, axis=0)
    return np.asarray(np.maximum(positive, 1.0 - positive))


def split_rhat(chains: FloatArray) -> FloatArray:
    """Split R-hat per coefficient from draws shaped (chains, draws, p)."""
    half = chains.shape[1] // 2
    split = np.concatenate([chains[:, :half], chains[:, half : 2 * half]], axis=0)
    n = split.shape[1]
    chain_means = split.mean(axis=1)
    within = split.var(axis=1, ddof=1).mean(axis=0)
    between = n * chain_means.var(axis=0, ddof=1)
    pooled = (n - 1) / n * within + between / n
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(pooled / within)
    return np.asarray(np.where(within > 0, rhat, 1.0))


def _invgamma(rng: np.random.Generator, shape: float, rate: float) -> float:
    return float(1.0 / rng.gamma(shape, 1.0 / rate))


@final
@dataclass(frozen=True, slots=True, eq=False)
class _SoftProblem:
    """Quantities of the soft-constraint Gibbs sampler fixed across draws."""

    R1: FloatArray
    z: FloatArray
    rss_floor: float
    n: int
    constraint_rows: FloatArray
    prior_rows: FloatArray
    prior: PriorSpec

    def conditional(self, sigma2: float) -> tuple[FloatArray, FloatArray]:
        """Mean and upper Cholesky factor of the precision given sigma2."""
        sigma = math.sqrt(sigma2)
        stacked = np.vstack([self.R1 / sigma, self.constraint_rows, self.prior_rows])
        rhs = np.concatenate(
            [self.z / sigma, np.zeros(stacked.shape[0] - self.z.shape[0])]
        )
        Q, R = np.linalg.qr(stacked)
        mean = scipy.linalg.solve_triangular(R, Q.T @ rhs, check_finite=False)
        return mean, R

    def rss(self, beta: FloatArray) -> float:
        residual = self.z - self.R1 @ beta
        return float(residual @ residual) + self.rss_floor

    def run_chain(self, chain: int) -> tuple[FloatArray, FloatArray]:
        """Draws and Rao-Blackwellised conditional means of one chain."""
        prior = self.prior
        rng = np.random.default_rng([prior.seed, chain])
        p = self.R1.shape[1]
        sigma2 = max(self.rss_floor / self.n, 1e-8)
        draws = np.empty((prior.draws, p))
        means = np.empty((prior.draws, p))
        shape = prior.noise_shape + self.n / 2
        for step in range(prior.burn_in + prior.draws):
            mean, R = self.conditional(sigma2)
            beta = mean + scipy.linalg.solve_triangular(
                R, rng.standard_normal(p), check_finite=False
            )
            sigma2 = _invgamma(rng, shape, prior.noise_rate + self.rss(beta) / 2)
            if not (np.all(np.isfinite(beta)) and math.isfinite(sigma2)):
                raise SamplerDivergenceError(
                    f"Non-finite draw in chain {chain} at step {step}."
                )
            kept = step - prior.burn_in
            if kept >= 0:
                draws[kept] = beta
                means[kept] = mean
        return draws, means


def fit_bayes_soft(
    X: DesignMatrix,
    y: npt.ArrayLike,
    prior: PriorSpec,
) -> PosteriorSummary:
    """Gibbs sampler for the soft zero-sum constraint.

    Each block sum gets a pseudo-observation with response 0 and fixed
    variance `prior.block_variance(size)`. Given the residual variance,
    the coefficients are Gaussian; the residual variance given the
    coefficients is inverse-gamma. Chains use independent streams seeded
    by `(seed, chain)`. Posterior means are averages of the conditional
    means over the kept draws; standard deviations and sign
    probabilities come from the pooled draws.

    Raises:
        NotSoftModeError: If the prior is not in soft mode.
        SamplerDivergenceError: If a draw is not finite.
    """
    if prior.constraint_mode is not ConstraintMode.SOFT:
        raise NotSoftModeError(
            f"Soft fit needs constraint_mode=soft, got {prior.constraint_mode}."
        )
    y_work = working_response(X, y)
    Q1, R1 = np.linalg.qr(X.values)
    z = Q1.T @ y_work
    rss_floor = max(float(y_work @ y_work - z @ z), 0.0)

    C = X.meta.constraint_matrix()
    scales = np.array(
        [1 / math.sqrt(prior.block_variance(len(b))) for b in X.constraint_blocks]
    )
    precision = _prior_precision(X.meta, prior)
    prior_rows = np.diag(np.sqrt(precision))[_proper(precision)]
    problem = _SoftProblem(
        R1=R1,
        z=z,
        rss_floor=rss_floor,
        n=X.n,
        constraint_rows=C * scales[:, np.newaxis] if C.size else C,
        prior_rows=prior_rows,
        prior=prior,
    )
    results = ordered_map(problem.run_chain, range(prior.chains))
    chain_draws = np.stack([draws for draws, _ in results])
    samples = chain_draws.reshape(-1, X.p)
    mean = np.mean(np.concatenate([means for _, means in results]), axis=0)

    rhat = None
    if prior.chains > 1 and prior.draws >= MIN_RHAT_DRAWS:
        rhat = split_rhat(chain_draws)
    if rhat is not None and float(np.max(rhat)) > RHAT_WARNING:
        logger.warning(
            "Soft-constraint sampler may not have converged.",
            extra={"max_rhat": float(np.max(rhat)), "labels": X.meta.labels},
        )
    logger.info(
        "Fitted soft-constraint Gibbs sampler.",
        extra={"chains": prior.chains, "draws": prior.draws, "seed": prior.seed},
    )
    covariance = None
    sd = np.zeros(X.p)
    if samples.shape[0] > 1:
        covariance = np.atleast_2d(np.cov(samples, rowvar=False))
        sd = samples.std(axis=0, ddof=1)
    return PosteriorSummary(
        mean=mean,
        sd=sd,
        sign_prob=draw_sign_prob(samples),
        samples=samples,
        mode=PosteriorMode.SAMPLED,
        design_meta=X.meta,
        rhat=rhat,
        covariance=covariance,
    )


@final
@dataclass(frozen=True, slots=True, eq=False)
class _HardPosterior:
    """Normal-Inverse-Gamma posterior in the reduced coordinates."""

    T: FloatArray
    W: FloatArray
    y: FloatArray
    prior_precision: FloatArray
    cholesky: FloatArray
    mean: FloatArray
    shape: float
    rate: float
    prior: PriorSpec

    def draw_given(self, rng: np.random.Generator, sigma2: float) -> FloatArray:
        noise = scipy.linalg.solve_triangular(
            self.cholesky,
            rng.standard_normal(self.mean.shape[0]),
            lower=True,
            trans="T",
        )
        return self.mean + math.sqrt(sigma2) * noise

    def exact_chain(self, chain: int) -> FloatArray:
        rng = np.random.default_rng([self.prior.seed, chain])
        reduced = np.empty((self.prior.draws, self.mean.shape[0]))
        for i in range(self.prior.draws):
            reduced[i] = self.draw_given(rng, _invgamma(rng, self.shape, self.rate))
        return reduced @ self.T.T

    def gibbs_chain(self, chain: int) -> FloatArray:
        prior = self.prior
        rng = np.random.default_rng([prior.seed, chain])
        k = self.mean.shape[0]
        proper = int(np.count_nonzero(_proper(np.diag(self.prior_precision))))
        shape = prior.noise_shape + (self.y.shape[0] + proper) / 2
        sigma2 = self.rate / self.shape
        reduced = np.empty((prior.draws, k))
        for step in range(prior.burn_in + prior.draws):
            gamma = self.draw_given(rng, sigma2)
            residual = self.y - self.W @ gamma
            penalty = float(gamma @ self.prior_precision @ gamma)
            rate = prior.noise_rate + (float(residual @ residual) + penalty) / 2
            sigma2 = _invgamma(rng, shape, rate)
            if not (np.all(np.isfinite(gamma)) and math.isfinite(sigma2)):
                raise SamplerDivergenceError(
                    f"Non-finite draw in chain {chain} at step {step}."
                )
            if step >= prior.burn_in:
                reduced[step - prior.burn_in] = gamma
        return reduced @ self.T.T


def fit_bayes_hard(
    X: DesignMatrix,
    y: npt.ArrayLike,
    prior: PriorSpec,
) -> PosteriorSummary:
    """Conjugate fit with block sums fixed at exactly zero.

    Each block is reparameterised onto an orthonormal basis of the
    complement of the ones vector. With prior `b | s2 ~ N(0, s2 / tau)`
    on the reduced coordinates and an inverse-gamma prior on `s2`, the
    coefficient marginals are Student-t; summaries are analytic. Draws
    are attached when `prior.hard_sampling` asks for them, either exact
    or from a two-block Gibbs sampler.

    Raises:
        NotHardModeError: If the prior is not in hard mode.
    """
    if prior.constraint_mode is not ConstraintMode.HARD:
        raise NotHardModeError(
            f"Hard fit needs constraint_mode=hard, got {prior.constraint_mode}."
        )
    y_work = working_response(X, y)
    T = constraint_basis(X.meta)
    W = X.values @ T
    reduced_precision = T.T @ np.diag(_prior_precision(X.meta, prior)) @ T
    flat = int(np.count_nonzero(~_proper(np.diag(reduced_precision))))

    L = scipy.linalg.cholesky(W.T @ W + reduced_precision, lower=True)
    mean_reduced = scipy.linalg.cho_solve((L, True), W.T @ y_work)
    shape = prior.noise_shape + (X.n - flat) / 2
    rate = prior.noise_rate + max(
        float(y_work @ y_work - mean_reduced @ (W.T @ y_work)), 0.0
    ) / 2

    L_inv = scipy.linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    scale_matrix = (rate / shape) * (T @ L_inv.T @ L_inv @ T.T)
    dof = 2 * shape
    mean = T @ mean_reduced
    scale = np.sqrt(np.clip(np.diag(scale_matrix), 0.0, None))
    covariance = None
    sd = np.full(X.p, math.inf)
    if dof > 2:  # noqa: PLR2004
        covariance = scale_matrix * dof / (dof - 2)
        sd = scale * math.sqrt(dof / (dof - 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        standardized = np.where(scale > 0, np.abs(mean) / scale, np.inf)
    sign_prob = np.where(
        (scale == 0) & (mean == 0), 0.5, scipy.stats.t.cdf(standardized, dof)
    )

    posterior = _HardPosterior(
        T=T,
        W=W,
        y=y_work,
        prior_precision=reduced_precision,
        cholesky=L,
        mean=mean_reduced,
        shape=shape,
        rate=rate,
        prior=prior,
    )
    samples = None
    chains = range(prior.chains)
    if prior.hard_sampling is HardSampling.EXACT:
        samples = np.concatenate(ordered_map(posterior.exact_chain, chains))
    elif prior.hard_sampling is HardSampling.GIBBS:
        samples = np.concatenate(ordered_map(posterior.gibbs_chain, chains))
    logger.info(
        "Fitted hard-constraint conjugate model.",
        extra={"dof": dof, "sampling": str(prior.hard_sampling)},
    )
    return PosteriorSummary(
        mean=mean,
        sd=sd,
        sign_prob=np.asarray(sign_prob, dtype=np.float64),
        samples=samples,
        mode=PosteriorMode.ANALYTIC,
        design_meta=X.meta,
        covariance=covariance,
        dof=dof,
    )


def sign_probability(post: PosteriorSummary, column: ColumnRole | RoleKind) -> float:
    """Posterior probability of the more likely sign of one coefficient.

    Sampled summaries count draws; analytic summaries use the marginal
    computed at fit time.

    Raises:
        UnknownColumnError: If the design has no such column.
    """
    index = post.design_meta.index_of(column)
    if post.mode is PosteriorMode.SAMPLED and post.samples is not None:
        return float(draw_sign_prob(post.samples[:, [index]])[0])
    return float(post.sign_prob[index])
