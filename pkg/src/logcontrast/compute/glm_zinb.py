"""Zero-inflated negative binomial regression with a log link.

The count model mixes a point mass at zero (probability `pi`, constant
across rows) with a negative binomial of mean `mu` and dispersion `theta`,
`Var = mu + mu**2 / theta`. Poisson and non-inflated variants are the
limits `log_theta = +inf` and `logit_pi = -inf`, which the likelihood and
its gradient handle exactly.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Final
from typing import final

import numpy as np
import numpy.typing as npt
import scipy.linalg
import scipy.optimize
import scipy.special
import scipy.stats

from logcontrast.compute.bayes_fit import PosteriorSummary
from logcontrast.compute.compositions import FloatArray
from logcontrast.compute.concurrency import ordered_map
from logcontrast.compute.design import Dataset
from logcontrast.compute.design import DesignMatrix
from logcontrast.compute.design import DesignMeta
from logcontrast.compute.design import ModelSpec
from logcontrast.compute.design import build_design
from logcontrast.compute.design import constraint_basis
from logcontrast.compute.enums import ConstraintMode
from logcontrast.compute.enums import CountFamily
from logcontrast.compute.enums import PosteriorMode
from logcontrast.compute.enums import ResponseTransform
from logcontrast.compute.enums import RoleKind
from logcontrast.compute.freq_fit import CoefficientEstimates
from logcontrast.compute.freq_fit import check_rank
from logcontrast.exceptions import DimensionMismatchError
from logcontrast.exceptions import LogContrastDesignError
from logcontrast.exceptions import NegativeCountError
from logcontrast.exceptions import NonConvergenceError
from logcontrast.exceptions import NonIntegerCountError

logger = logging.getLogger(__name__)

SOFT_VARIANCE_PER_PART: Final = 0.001
GRADIENT_TOLERANCE: Final = 1e-6
MAX_ITERATIONS: Final = 500
QUASI_NEWTON_GTOL: Final = 1e-9
QUASI_NEWTON_FTOL: Final = 1e-15
NEWTON_STEPS: Final = 25
RESTART_JITTER: Final = 0.25
LOG_THETA_BOUNDS: Final = (-8.0, 20.0)
LOGIT_PI_BOUNDS: Final = (-25.0, 25.0)
_LOG_OVERFLOW: Final = 700.0
_HUGE: Final = 1e100


@final
@dataclass(frozen=True, slots=True, eq=False)
class ZinbParams:
    """Parameters of the zero-inflated count model.

    Attributes:
        beta: Coefficients of the log-mean linear predictor.
        log_theta: Log dispersion; `+inf` gives the Poisson limit.
        logit_pi: Logit of the structural-zero probability; `-inf` turns
            zero inflation off.
    """

    beta: FloatArray
    log_theta: float = math.inf
    logit_pi: float = -math.inf

    @property
    def theta(self) -> float:
        if self.log_theta > _LOG_OVERFLOW:
            return math.inf
        return math.exp(self.log_theta)

    @property
    def pi(self) -> float:
        return float(scipy.special.expit(self.logit_pi))

    def as_vector(self) -> FloatArray:
        return np.concatenate([self.beta, [self.log_theta, self.logit_pi]])


def check_counts(y: npt.ArrayLike) -> FloatArray:
    """Validate a count response.

    Raises:
        NegativeCountError: If any value is negative.
        NonIntegerCountError: If any value is not a finite integer.
    """
    counts = np.asarray(y, dtype=np.float64)
    if np.any(counts < 0):
        row = int(np.argmax(counts < 0))
        raise NegativeCountError(f"Row {row} has negative count {counts[row]!r}.")
    whole = np.isfinite(counts) & (counts == np.floor(counts))
    if not np.all(whole):
        row = int(np.argmin(whole))
        raise NonIntegerCountError(f"Row {row} has non-integer count {counts[row]!r}.")
    return counts


@final
@dataclass(frozen=True, slots=True)
class _Terms:
    """Per-row log-likelihood and its derivatives."""

    loglik: FloatArray
    d_eta: FloatArray
    d_log_theta: FloatArray
    d_logit_pi: FloatArray


def _terms(eta: FloatArray, y: FloatArray, log_theta: float, logit_pi: float) -> _Terms:
    zeros = np.zeros_like(eta)
    if log_theta > _LOG_OVERFLOW:
        mu = np.exp(eta)
        log_f = y * eta - mu - scipy.special.gammaln(y + 1)
        log_f0 = -mu
        d_eta = y - mu
        d_eta0 = -mu
        d_lt = d_lt0 = zeros
    else:
        theta = math.exp(log_theta)
        log_sum = np.logaddexp(log_theta, eta)
        log_q = log_theta - log_sum
        share = np.exp(eta - log_sum)
        log_f = (
            scipy.special.gammaln(y + theta)
            - scipy.special.gammaln(theta)
            - scipy.special.gammaln(y + 1)
            + theta * log_q
            + y * (eta - log_sum)
        )
        log_f0 = theta * log_q
        d_eta = y * (1 - share) - theta * share
        d_eta0 = -theta * share
        d_lt = (
            theta
            * (
                scipy.special.digamma(y + theta)
                - scipy.special.digamma(theta)
                + log_q
                + share
            )
            - y * (1 - share)
        )
        d_lt0 = theta * (log_q + share)

    if math.isinf(logit_pi) and logit_pi < 0:
        return _Terms(loglik=log_f, d_eta=d_eta, d_log_theta=d_lt, d_logit_pi=zeros)

    zero = y == 0
    log_pi = float(scipy.special.log_expit(logit_pi))
    log_keep = float(scipy.special.log_expit(-logit_pi))
    pi = float(scipy.special.expit(logit_pi))
    log_zero = np.logaddexp(log_pi, log_keep + log_f0)
    weight = np.exp(log_keep + log_f0 - log_zero)
    return _Terms(
        loglik=np.where(zero, log_zero, log_keep + log_f),
        d_eta=np.where(zero, weight * d_eta0, d_eta),
        d_log_theta=np.where(zero, weight * d_lt0, d_lt),
        d_logit_pi=np.where(zero, 1 - weight - pi, -pi),
    )


def _glm_eta(params: ZinbParams, X: DesignMatrix) -> FloatArray:
    beta = np.asarray(params.beta, dtype=np.float64)
    if beta.shape != (X.p,):
        raise DimensionMismatchError(
            f"Expected {X.p} coefficients, got shape {beta.shape}."
        )
    eta = X.values @ beta
    if X.offset is not None:
        eta = eta + X.offset
    return np.asarray(eta)


def _checked_response(X: DesignMatrix, y: npt.ArrayLike) -> FloatArray:
    counts = check_counts(y)
    if counts.shape != (X.n,):
        raise DimensionMismatchError(
            f"Response has shape {counts.shape}, design has {X.n} rows."
        )
    return counts


def zinb_loglik(params: ZinbParams, X: DesignMatrix, y: npt.ArrayLike) -> float:
    """Log-likelihood of the zero-inflated count model.

    The linear predictor is `X @ beta` plus the design's natural-log
    offset. Zero rows contribute `log(pi + (1 - pi) f(0))`, evaluated by
    log-sum-exp; positive rows contribute `log(1 - pi) + log f(y)` with
    the untruncated negative binomial pmf.

    Raises:
        NonIntegerCountError: If a count is not a whole number.
        NegativeCountError: If a count is negative.
    """
    counts = _checked_response(X, y)
    terms = _terms(_glm_eta(params, X), counts, params.log_theta, params.logit_pi)
    return math.fsum(terms.loglik.tolist())


def zinb_loglik_grad(
    params: ZinbParams, X: DesignMatrix, y: npt.ArrayLike
) -> FloatArray:
    """Gradient of `zinb_loglik` in `(beta, log_theta, logit_pi)`.

    Components for parameters fixed at an infinite limit are zero.
    """
    counts = _checked_response(X, y)
    terms = _terms(_glm_eta(params, X), counts, params.log_theta, params.logit_pi)
    return np.concatenate(
        [
            X.values.T @ terms.d_eta,
            [
                math.fsum(terms.d_log_theta.tolist()),
                math.fsum(terms.d_logit_pi.tolist()),
            ],
        ]
    )


@final
@dataclass(frozen=True, slots=True, eq=False)
class GlmFit:
    """A fitted count model.

    Attributes:
        params: Estimates at the optimum.
        loglik: Log-likelihood at the optimum, without penalties.
        hessian: Hessian of the penalised log-likelihood in the free
            coordinates, not in `(beta, log_theta, logit_pi)`. The free
            coordinates are the reduced block coefficients in hard mode
            (all coefficients otherwise), then `log_theta` and `logit_pi`
            when the family has them, less any held at a bound.
        jacobian: Map from the free coordinates to `(beta, log_theta,
            logit_pi)`, shape `(p + 2) x free`, so that `approx_cov` is
            `jacobian @ inv(-hessian) @ jacobian.T`.
        approx_cov: Laplace covariance of `(beta, log_theta, logit_pi)`;
            rows of fixed or bound-active parameters are zero.
        converged: Whether the gradient test passed.
        gradient_norm: Largest absolute gradient entry over the free
            coordinates at the optimum.
        iterations: Optimiser iterations of the winning restart.
        aic: `-2 loglik + 2 n_free`.
        n_free: Number of free parameters.
        family: Count family.
        constraint: How the zero-sum blocks were imposed.
        restart: Index of the winning restart.
        design_meta: Metadata of the fitted design.
    """

    params: ZinbParams
    loglik: float
    hessian: FloatArray
    jacobian: FloatArray
    approx_cov: FloatArray
    converged: bool
    gradient_norm: float
    iterations: int
    aic: float
    n_free: int
    family: CountFamily
    constraint: ConstraintMode
    restart: int
    design_meta: DesignMeta

    @property
    def se(self) -> FloatArray:
        p = self.design_meta.p
        return np.sqrt(np.clip(np.diag(self.approx_cov)[:p], 0.0, None))

    def posterior_summary(self) -> PosteriorSummary:
        """Gaussian approximation of the coefficient posterior."""
        mean = np.asarray(self.params.beta, dtype=np.float64)
        sd = self.se
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(sd > 0, np.abs(mean) / sd, np.inf)
        sign_prob = np.where((sd == 0) & (mean == 0), 0.5, scipy.stats.norm.cdf(z))
        return PosteriorSummary(
            mean=mean,
            sd=sd,
            sign_prob=np.asarray(sign_prob, dtype=np.float64),
            samples=None,
            mode=PosteriorMode.ANALYTIC,
            design_meta=self.design_meta,
            covariance=self.approx_cov[: mean.size, : mean.size],
        )

    def estimates(self) -> CoefficientEstimates:
        return self.posterior_summary().estimates()


@final
@dataclass(frozen=True, slots=True, eq=False)
class _Problem:
    """Penalised log-likelihood over the free parameter vector.

    The free vector is the reduced coefficients, then `log_theta` when the
    family has a dispersion, then `logit_pi` when it is zero-inflated.
    """

    X: DesignMatrix
    y: FloatArray
    family: CountFamily
    basis: FloatArray
    start_basis: FloatArray
    penalty_rows: FloatArray
    prior: FloatArray

    @property
    def k(self) -> int:
        return int(self.basis.shape[1])

    @property
    def size(self) -> int:
        return (
            self.k + int(self.family.has_dispersion) + int(self.family.is_zero_inflated)
        )

    def unpack(self, phi: FloatArray) -> ZinbParams:
        position = self.k
        log_theta = math.inf
        logit_pi = -math.inf
        if self.family.has_dispersion:
            log_theta = float(phi[position])
            position += 1
        if self.family.is_zero_inflated:
            logit_pi = float(phi[position])
        return ZinbParams(
            beta=self.basis @ phi[: self.k], log_theta=log_theta, logit_pi=logit_pi
        )

    def jacobian(self) -> FloatArray:
        """Derivative of `(beta, log_theta, logit_pi)` in the free vector."""
        p = self.X.p
        J = np.zeros((p + 2, self.size))
        J[:p, : self.k] = self.basis
        position = self.k
        if self.family.has_dispersion:
            J[p, position] = 1.0
            position += 1
        if self.family.is_zero_inflated:
            J[p + 1, position] = 1.0
        return J

    def bounds(self) -> list[tuple[float | None, float | None]]:
        bounds: list[tuple[float | None, float | None]] = [(None, None)] * self.k
        if self.family.has_dispersion:
            bounds.append(LOG_THETA_BOUNDS)
        if self.family.is_zero_inflated:
            bounds.append(LOGIT_PI_BOUNDS)
        return bounds

    def clip(self, phi: FloatArray) -> FloatArray:
        lower = np.array([-np.inf if lo is None else lo for lo, _ in self.bounds()])
        upper = np.array([np.inf if hi is None else hi for _, hi in self.bounds()])
        return np.clip(phi, lower, upper)

    def value_and_grad(self, phi: FloatArray) -> tuple[float, FloatArray]:
        """Penalised log-likelihood and its gradient in the free vector."""
        params = self.unpack(phi)
        beta = params.beta
        terms = _terms(
            _glm_eta(params, self.X), self.y, params.log_theta, params.logit_pi
        )
        constrained = self.penalty_rows @ beta
        value = (
            math.fsum(terms.loglik.tolist())
            - 0.5 * float(constrained @ constrained)
            - 0.5 * float(beta @ (self.prior * beta))
        )
        grad_beta = (
            self.X.values.T @ terms.d_eta
            - self.penalty_rows.T @ constrained
            - self.prior * beta
        )
        grad = [self.basis.T @ grad_beta]
        if self.family.has_dispersion:
            grad.append(np.array([math.fsum(terms.d_log_theta.tolist())]))
        if self.family.is_zero_inflated:
            grad.append(np.array([math.fsum(terms.d_logit_pi.tolist())]))
        return value, np.concatenate(grad)

    def negative_mean(self, phi: FloatArray) -> tuple[float, FloatArray]:
        """Objective handed to the optimiser: `-value / n`."""
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            value, grad = self.value_and_grad(phi)
        if not (math.isfinite(value) and np.all(np.isfinite(grad))):
            return _HUGE, np.zeros_like(phi)
        return -value / self.X.n, -grad / self.X.n

    def free_mask(self, phi: FloatArray, grad: FloatArray) -> npt.NDArray[np.bool_]:
        """Coordinates not held at a bound by an outward-pointing gradient."""
        mask = np.ones(phi.shape, dtype=bool)
        for i, (lower, upper) in enumerate(self.bounds()):
            if lower is not None and phi[i] <= lower and grad[i] < 0:
                mask[i] = False
            if upper is not None and phi[i] >= upper and grad[i] > 0:
                mask[i] = False
        return mask

    def hessian(self, phi: FloatArray, mask: npt.NDArray[np.bool_]) -> FloatArray:
        """Central-difference Hessian of the analytic gradient on `mask`."""
        free = np.flatnonzero(mask)
        H = np.empty((free.size, free.size))
        for column, i in enumerate(free):
            step = 1e-5 * max(1.0, abs(float(phi[i])))
            forward = phi.copy()
            backward = phi.copy()
            forward[i] += step
            backward[i] -= step
            difference = (
                self.value_and_grad(forward)[1] - self.value_and_grad(backward)[1]
            )
            H[:, column] = difference[free] / (2 * step)
        return (H + H.T) / 2

    def polish(self, phi: FloatArray) -> FloatArray:
        """Newton steps on the free coordinates, kept only when they help."""
        value, grad = self.value_and_grad(phi)
        for _ in range(NEWTON_STEPS):
            mask = self.free_mask(phi, grad)
            if not mask.any() or np.max(np.abs(grad[mask])) < 1e-10:
                break
            H = self.hessian(phi, mask)
            if np.max(np.linalg.eigvalsh(H)) >= 0:
                break
            direction = np.zeros_like(phi)
            direction[mask] = scipy.linalg.solve(-H, grad[mask], assume_a="pos")
            scale = 1.0
            while scale > 1e-6:
                candidate = self.clip(phi + scale * direction)
                with np.errstate(over="ignore", invalid="ignore"):
                    new_value, new_grad = self.value_and_grad(candidate)
                tolerance = 1e-12 * (1 + abs(value))
                if math.isfinite(new_value) and new_value >= value - tolerance:
                    break
                scale /= 2
            else:
                break
            phi, value, grad = candidate, new_value, new_grad
        return phi

    def starting_point(self) -> FloatArray:
        """Moment-based start.

        Coefficients come from least squares of `log(y + 0.5)` minus the
        offset, the dispersion from the method of moments and the
        inflation from the excess of observed over expected zeros.
        """
        target = np.log(self.y + 0.5)
        if self.X.offset is not None:
            target = target - self.X.offset
        reduced_design = self.X.values @ self.start_basis
        reduced = np.linalg.lstsq(reduced_design, target, rcond=None)[0]
        gamma = np.linalg.lstsq(self.basis, self.start_basis @ reduced, rcond=None)[0]
        start = [gamma]
        mean = float(np.mean(self.y))
        variance = float(np.var(self.y))
        theta = mean**2 / (variance - mean) if variance > mean > 0 else 1e3
        log_theta = float(np.clip(math.log(theta), -4.0, 10.0))
        if self.family.has_dispersion:
            start.append(np.array([log_theta]))
        if self.family.is_zero_inflated:
            mu = np.exp(np.clip(self.X.values @ (self.basis @ gamma), -30, 30))
            if self.X.offset is not None:
                mu = mu * np.exp(np.clip(self.X.offset, -30, 30))
            if self.family.has_dispersion:
                theta = math.exp(log_theta)
                expected = np.mean(np.exp(-theta * np.log1p(mu / theta)))
            else:
                expected = np.mean(np.exp(-mu))
            excess = float(np.clip(np.mean(self.y == 0) - expected, 0.01, 0.9))
            start.append(np.array([float(scipy.special.logit(excess))]))
        return self.clip(np.concatenate(start))


@final
@dataclass(frozen=True, slots=True, eq=False)
class _Candidate:
    restart: int
    phi: FloatArray
    value: float
    grad: FloatArray
    iterations: int
    gradient_norm: float
    converged: bool


def _run_restart(problem: _Problem, seed: int, restart: int) -> _Candidate:
    start = problem.starting_point()
    if restart > 0:
        rng = np.random.default_rng([seed, restart])
        jitter = rng.normal(0.0, RESTART_JITTER, size=start.shape)
        start = problem.clip(start + jitter)
    result = scipy.optimize.minimize(
        problem.negative_mean,
        start,
        jac=True,
        method="L-BFGS-B",
        bounds=problem.bounds(),
        options={
            "maxiter": MAX_ITERATIONS,
            "gtol": QUASI_NEWTON_GTOL,
            "ftol": QUASI_NEWTON_FTOL,
        },
    )
    phi = problem.polish(np.asarray(result.x, dtype=np.float64))
    with np.errstate(over="ignore", invalid="ignore"):
        value, grad = problem.value_and_grad(phi)
    mask = problem.free_mask(phi, grad)
    gradient_norm = float(np.max(np.abs(grad[mask]))) if mask.any() else 0.0
    converged = math.isfinite(value) and gradient_norm <= GRADIENT_TOLERANCE
    logger.debug(
        "Finished count-model restart.",
        extra={
            "restart": restart,
            "loglik": value,
            "gradient_norm": gradient_norm,
            "iterations": int(result.nit),
        },
    )
    return _Candidate(
        restart=restart,
        phi=phi,
        value=value,
        grad=grad,
        iterations=int(result.nit),
        gradient_norm=gradient_norm,
        converged=converged,
    )


def fit_zinb(
    data: Dataset,
    spec: ModelSpec,
    constraint: ConstraintMode,
    seed: int,
    *,
    family: CountFamily = CountFamily.ZINB,
    reference: int | None = None,
    prior_precision: float = 0.0,
    restarts: int = 5,
) -> GlmFit:
    """Fit the count model by penalised maximum likelihood.

    Hard mode optimises in reduced block coordinates, an orthonormal basis
    by default or the additive log-ratio basis when `reference` names a
    part. Soft mode adds `-(sum of block)**2 / (2 * 0.001 * size)` for
    every zero-sum block. A Gaussian prior of precision `prior_precision`
    on the non-intercept coefficients turns the fit into a MAP estimate.
    The optimiser is a bounded quasi-Newton method followed by Newton
    polishing, started from the moment-based start and `restarts - 1`
    perturbations of it; the winner has the highest objective, ties going
    to the lowest restart index.

    Args:
        data: Counts in `data.response`, offsets in `data.offset`.
        spec: Model specification; the response must be untransformed.
        constraint: How zero-sum blocks are imposed.
        seed: Seeds the restart perturbations.
        family: Count family.
        reference: alr reference part for hard-mode coordinates.
        prior_precision: Gaussian prior precision on slopes.
        restarts: Number of optimiser starts.

    Returns:
        The fit, with a Laplace covariance.

    Raises:
        NonIntegerCountError: If a count is not a whole number.
        NegativeCountError: If a count is negative.
        NonConvergenceError: If no restart reaches a gradient norm of
            1e-6, or the Hessian at the optimum is not negative definite.
    """
    if spec.response_transform is not ResponseTransform.IDENTITY:
        raise LogContrastDesignError("Count models take the untransformed response.")
    design = build_design(data, spec)
    X = dataclasses.replace(
        design, meta=dataclasses.replace(design.meta, response_log_base=math.e)
    )
    y = _checked_response(X, data.response)

    C = X.meta.constraint_matrix()
    match constraint:
        case ConstraintMode.HARD:
            basis = constraint_basis(X.meta, reference)
            penalty_rows = np.zeros((0, X.p))
        case ConstraintMode.SOFT:
            basis = np.eye(X.p)
            variances = np.array(
                [SOFT_VARIANCE_PER_PART * len(b) for b in X.constraint_blocks]
            )
            penalty_rows = C / np.sqrt(variances)[:, np.newaxis]
        case ConstraintMode.NONE:
            basis = np.eye(X.p)
            penalty_rows = np.zeros((0, X.p))
    start_basis = (
        basis if constraint is ConstraintMode.HARD else constraint_basis(X.meta)
    )
    check_rank(X.values @ start_basis, "Count model")
    prior = np.array(
        [
            0.0 if role.kind is RoleKind.INTERCEPT else prior_precision
            for role in X.column_roles
        ]
    )
    problem = _Problem(
        X=X,
        y=y,
        family=family,
        basis=basis,
        start_basis=start_basis,
        penalty_rows=penalty_rows,
        prior=prior,
    )
    candidates = ordered_map(
        lambda restart: _run_restart(problem, seed, restart), range(max(restarts, 1))
    )
    converged = [c for c in candidates if c.converged]
    if not converged:
        raise NonConvergenceError(
            f"No restart of the {family} fit reached a gradient norm of "
            f"{GRADIENT_TOLERANCE:g}."
        )
    winner = min(converged, key=lambda c: (-c.value, c.restart))

    mask = problem.free_mask(winner.phi, winner.grad)
    H = problem.hessian(winner.phi, mask)
    eigenvalues = np.linalg.eigvalsh(H) if H.size else np.zeros(0)
    scale = float(np.max(np.abs(eigenvalues))) if eigenvalues.size else 0.0
    if eigenvalues.size and float(np.max(eigenvalues)) >= -1e-8 * scale:
        msg = "The Hessian at the optimum is not negative definite."
        raise NonConvergenceError(msg)
    cov_free = np.zeros((problem.size, problem.size))
    if H.size:
        cov_free[np.ix_(mask, mask)] = scipy.linalg.inv(-H)
    J = problem.jacobian()
    approx_cov = J @ cov_free @ J.T

    params = problem.unpack(winner.phi)
    loglik = zinb_loglik(params, X, y)
    n_free = (
        X.p
        - len(X.constraint_blocks) * (constraint is not ConstraintMode.NONE)
        + int(family.has_dispersion)
        + int(family.is_zero_inflated)
    )
    logger.info(
        "Fitted count model.",
        extra={
            "family": str(family),
            "constraint": str(constraint),
            "restart": winner.restart,
            "loglik": loglik,
        },
    )
    return GlmFit(
        params=params,
        loglik=loglik,
        hessian=H,
        jacobian=J[:, mask],
        approx_cov=(approx_cov + approx_cov.T) / 2,
        converged=True,
        gradient_norm=winner.gradient_norm,
        iterations=winner.iterations,
        aic=-2 * loglik + 2 * n_free,
        n_free=n_free,
        family=family,
        constraint=constraint,
        restart=winner.restart,
        design_meta=X.meta,
    )
