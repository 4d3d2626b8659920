import dataclasses
import math
from typing import Final

import numpy as np
import pytest
import scipy.stats

from logcontrast.compute.compositions import FloatArray
from logcontrast.compute.design import Dataset
from logcontrast.compute.design import DesignMatrix
from logcontrast.compute.design import build_design
from logcontrast.compute.enums import ConstraintMode
from logcontrast.compute.enums import CountFamily
from logcontrast.compute.enums import ModeratorKind
from logcontrast.compute.enums import ResponseLaw
from logcontrast.compute.enums import ResponseTransform
from logcontrast.compute.enums import RoleKind
from logcontrast.compute.glm_zinb import GRADIENT_TOLERANCE
from logcontrast.compute.glm_zinb import ZinbParams
from logcontrast.compute.glm_zinb import check_counts
from logcontrast.compute.glm_zinb import fit_zinb
from logcontrast.compute.glm_zinb import zinb_loglik
from logcontrast.compute.glm_zinb import zinb_loglik_grad
from logcontrast.exceptions import LogContrastDesignError
from logcontrast.exceptions import NegativeCountError
from logcontrast.exceptions import NonIntegerCountError
from logcontrast.io.synth import SynthTruth
from logcontrast.io.synth import synth_generate
from tests.conftest import moderated_spec

STEP: Final = 1e-5
GRADIENT_POINTS: Final = 50
RECOVERY_SEEDS: Final = 100

type Synth = tuple[Dataset, SynthTruth]


def count_spec(**overrides: object) -> dict[str, object]:
    return {
        "law": ResponseLaw.ZINB,
        "moderator": ModeratorKind.NONE,
        "beta_interaction": None,
        "intercept": 1.5,
        "theta": 2.0,
        "pi": 0.2,
        "n": 600,
    } | overrides


@pytest.fixture(name="counts")
def _counts() -> Synth:
    return synth_generate(moderated_spec(**count_spec()))


@pytest.fixture(name="small_design")
def _small_design() -> tuple[DesignMatrix, FloatArray]:
    data, truth = synth_generate(moderated_spec(**count_spec(n=80)))
    return build_design(data, truth.spec.model_spec()), np.array(data.response)


@pytest.mark.parametrize(
    ("counts", "error"),
    [
        ((0.0, -1.0, 2.0), NegativeCountError),
        ((0.0, 1.5), NonIntegerCountError),
        ((math.nan, 1.0), NonIntegerCountError),
        ((math.inf,), NonIntegerCountError),
    ],
)
def test_check_counts_rejects(
    counts: tuple[float, ...],
    error: type[Exception],
) -> None:
    with pytest.raises(error):
        check_counts(counts)


def test_check_counts_accepts_whole_numbers() -> None:
    assert check_counts([0, 3, 7.0]).tolist() == [0.0, 3.0, 7.0]


def _numeric_gradient(
    params: ZinbParams, X: DesignMatrix, y: FloatArray, free: int
) -> FloatArray:
    vector = params.as_vector()
    gradient = np.zeros(vector.size)
    for i in range(free):
        forward = vector.copy()
        backward = vector.copy()
        forward[i] += STEP
        backward[i] -= STEP
        gradient[i] = (
            zinb_loglik(_params(forward), X, y) - zinb_loglik(_params(backward), X, y)
        ) / (2 * STEP)
    return gradient


def _params(vector: FloatArray) -> ZinbParams:
    return ZinbParams(
        beta=vector[:-2], log_theta=float(vector[-2]), logit_pi=float(vector[-1])
    )


def test_gradient_matches_finite_differences(
    small_design: tuple[DesignMatrix, FloatArray],
) -> None:
    X, y = small_design
    rng = np.random.default_rng(5)
    for _ in range(GRADIENT_POINTS):
        params = ZinbParams(
            beta=rng.normal(0.0, 0.3, size=X.p),
            log_theta=float(rng.uniform(-1.0, 3.0)),
            logit_pi=float(rng.uniform(-4.0, 1.0)),
        )
        np.testing.assert_allclose(
            zinb_loglik_grad(params, X, y),
            _numeric_gradient(params, X, y, X.p + 2),
            rtol=1e-5,
            atol=1e-4,
        )


@pytest.mark.parametrize(
    ("log_theta", "logit_pi"),
    [
        (math.inf, -math.inf),
        (math.inf, -1.0),
        (0.5, -math.inf),
    ],
)
def test_gradient_at_limits(
    small_design: tuple[DesignMatrix, FloatArray],
    log_theta: float,
    logit_pi: float,
) -> None:
    X, y = small_design
    params = ZinbParams(
        beta=np.full(X.p, 0.05), log_theta=log_theta, logit_pi=logit_pi
    )
    gradient = zinb_loglik_grad(params, X, y)
    expected = _numeric_gradient(params, X, y, X.p)
    np.testing.assert_allclose(gradient[: X.p], expected[: X.p], rtol=1e-5, atol=1e-4)
    if math.isinf(log_theta):
        assert gradient[X.p] == 0.0
    if math.isinf(logit_pi):
        assert gradient[X.p + 1] == 0.0


def test_poisson_limit_matches_pmf(
    small_design: tuple[DesignMatrix, FloatArray],
) -> None:
    X, y = small_design
    beta = np.full(X.p, 0.05)
    mu = np.exp(X.values @ beta)
    assert zinb_loglik(ZinbParams(beta=beta), X, y) == pytest.approx(
        float(np.sum(scipy.stats.poisson.logpmf(y, mu)))
    )
    # A huge dispersion approaches the Poisson likelihood.
    assert zinb_loglik(ZinbParams(beta=beta, log_theta=18.0), X, y) == pytest.approx(
        float(np.sum(scipy.stats.poisson.logpmf(y, mu))), rel=1e-6
    )


def test_negative_binomial_matches_pmf(
    small_design: tuple[DesignMatrix, FloatArray],
) -> None:
    X, y = small_design
    beta = np.full(X.p, 0.05)
    mu = np.exp(X.values @ beta)
    theta = 1.7
    params = ZinbParams(beta=beta, log_theta=math.log(theta))
    expected = np.sum(scipy.stats.nbinom.logpmf(y, theta, theta / (theta + mu)))
    assert zinb_loglik(params, X, y) == pytest.approx(float(expected))


def test_zero_inflation_mixes_point_mass(
    small_design: tuple[DesignMatrix, FloatArray],
) -> None:
    X, y = small_design
    beta = np.full(X.p, 0.05)
    mu = np.exp(X.values @ beta)
    theta, pi = 1.7, 0.3
    params = ZinbParams(
        beta=beta, log_theta=math.log(theta), logit_pi=math.log(pi / (1 - pi))
    )
    pmf = scipy.stats.nbinom.pmf(y, theta, theta / (theta + mu))
    expected = np.where(y == 0, np.log(pi + (1 - pi) * pmf), np.log((1 - pi) * pmf))
    assert zinb_loglik(params, X, y) == pytest.approx(float(np.sum(expected)))


def test_hard_fit_meets_constraints(counts: Synth) -> None:
    data, truth = counts
    fit = fit_zinb(data, truth.spec.model_spec(), ConstraintMode.HARD, seed=1)
    assert fit.converged
    assert fit.family is CountFamily.ZINB
    for block in fit.design_meta.constraint_blocks:
        assert abs(math.fsum(fit.params.beta[list(block)].tolist())) < 1e-10
    assert fit.design_meta.response_log_base == math.e
    assert fit.n_free == fit.design_meta.p - 1 + 2
    assert fit.aic == pytest.approx(-2 * fit.loglik + 2 * fit.n_free)


def test_soft_fit_close_to_hard(counts: Synth) -> None:
    data, truth = counts
    spec = truth.spec.model_spec()
    hard = fit_zinb(data, spec, ConstraintMode.HARD, seed=1)
    soft = fit_zinb(data, spec, ConstraintMode.SOFT, seed=1)
    np.testing.assert_allclose(soft.params.beta, hard.params.beta, rtol=0, atol=1e-3)


@pytest.mark.parametrize("reference", [0, 2, 4])
def test_hard_fit_independent_of_reference(counts: Synth, reference: int) -> None:
    data, truth = counts
    spec = truth.spec.model_spec()
    helmert = fit_zinb(data, spec, ConstraintMode.HARD, seed=1)
    alr = fit_zinb(data, spec, ConstraintMode.HARD, seed=1, reference=reference)
    np.testing.assert_allclose(alr.params.beta, helmert.params.beta, rtol=0, atol=1e-4)
    assert alr.loglik == pytest.approx(helmert.loglik, abs=1e-6)


def test_offset_scale_moves_intercept_only() -> None:
    data, truth = synth_generate(
        moderated_spec(**count_spec(intercept=-9.0, offset_log_mean=11.5))
    )
    spec = truth.spec.model_spec()
    assert data.offset is not None
    rescaled = dataclasses.replace(data, offset=data.offset * 10.0)
    base = fit_zinb(data, spec, ConstraintMode.HARD, seed=1)
    moved = fit_zinb(rescaled, spec, ConstraintMode.HARD, seed=1)
    intercept = base.design_meta.index_of(RoleKind.INTERCEPT)
    shift = moved.params.beta - base.params.beta
    assert shift[intercept] == pytest.approx(-math.log(10.0), abs=1e-4)
    np.testing.assert_allclose(np.delete(shift, intercept), 0.0, atol=1e-4)


def test_poisson_family() -> None:
    data, truth = synth_generate(moderated_spec(**count_spec(theta=math.inf, pi=0.0)))
    fit = fit_zinb(
        data,
        truth.spec.model_spec(),
        ConstraintMode.HARD,
        seed=0,
        family=CountFamily.POISSON,
        restarts=2,
    )
    assert math.isinf(fit.params.theta)
    assert fit.params.pi == 0.0
    assert fit.n_free == fit.design_meta.p - 1
    estimates = fit.estimates()
    assert estimates.sd is not None
    assert np.all(estimates.sd > 0)
    assert estimates.sign_prob is not None


def test_rejects_non_integer_counts(counts: Synth) -> None:
    data, truth = counts
    response = np.array(data.response)
    response[3] = 2.5
    with pytest.raises(NonIntegerCountError):
        fit_zinb(
            dataclasses.replace(data, response=response),
            truth.spec.model_spec(),
            ConstraintMode.HARD,
            seed=0,
        )


def test_rejects_transformed_response(counts: Synth) -> None:
    data, truth = counts
    spec = truth.spec.model_spec().model_copy(
        update={"response_transform": ResponseTransform.LOG}
    )
    with pytest.raises(LogContrastDesignError):
        fit_zinb(data, spec, ConstraintMode.HARD, seed=0)



def test_optimum_meets_gradient_tolerance(counts: Synth) -> None:
    data, truth = counts
    spec = truth.spec.model_spec()
    for constraint in (ConstraintMode.HARD, ConstraintMode.SOFT):
        fit = fit_zinb(data, spec, constraint, seed=1)
        assert fit.gradient_norm <= GRADIENT_TOLERANCE


def test_hessian_lives_in_free_coordinates(counts: Synth) -> None:
    data, truth = counts
    fit = fit_zinb(data, truth.spec.model_spec(), ConstraintMode.HARD, seed=1)
    p = fit.design_meta.p
    assert fit.hessian.shape == (fit.n_free, fit.n_free)
    assert fit.jacobian.shape == (p + 2, fit.n_free)
    np.testing.assert_allclose(
        fit.jacobian @ np.linalg.inv(-fit.hessian) @ fit.jacobian.T,
        fit.approx_cov,
        rtol=1e-8,
        atol=1e-12,
    )


def test_no_structural_zeros_gives_small_pi() -> None:
    data, truth = synth_generate(moderated_spec(**count_spec(pi=0.0, n=2000)))
    fit = fit_zinb(data, truth.spec.model_spec(), ConstraintMode.HARD, seed=1)
    assert fit.params.pi < 0.02


@pytest.mark.parametrize("centred", [True, False])
def test_part_scale_moves_intercept_only(counts: Synth, *, centred: bool) -> None:
    data, truth = counts
    spec = truth.spec.model_spec().model_copy(update={"center_covariates": centred})
    assert spec.include_total
    scale = 4.0
    rescaled = dataclasses.replace(data, parts=data.parts * scale)
    base = fit_zinb(data, spec, ConstraintMode.HARD, seed=1)
    moved = fit_zinb(rescaled, spec, ConstraintMode.HARD, seed=1)
    intercept = base.design_meta.index_of(RoleKind.INTERCEPT)
    total = base.design_meta.index_of(RoleKind.TOTAL)
    # The total is the sum of the log parts, so it moves by D log(scale)
    # unless the column is centred.
    shift = 0.0 if centred else spec.D * math.log(scale, spec.log_base)
    difference = moved.params.beta - base.params.beta
    assert difference[intercept] == pytest.approx(
        -base.params.beta[total] * shift, abs=1e-4
    )
    np.testing.assert_allclose(np.delete(difference, intercept), 0.0, atol=1e-4)
    assert moved.loglik == pytest.approx(base.loglik, abs=1e-6)


@pytest.mark.slow
def test_recovers_generating_parameters() -> None:
    recovered = 0
    for seed in range(RECOVERY_SEEDS):
        data, truth = synth_generate(
            moderated_spec(**count_spec(n=2000, theta=1.5, seed=seed))
        )
        fit = fit_zinb(data, truth.spec.model_spec(), ConstraintMode.HARD, seed=3)
        error = np.abs(fit.params.beta - truth.as_array())
        recovered += int(np.all(error <= 3 * fit.se))
    assert recovered >= 0.9 * RECOVERY_SEEDS
