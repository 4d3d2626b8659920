import math
from typing import Final

import numpy as np
import pytest
import scipy.stats

from logcontrast.compute.design import Dataset
from logcontrast.compute.design import ModelSpec
from logcontrast.compute.design import build_design
from logcontrast.compute.design import response_vector
from logcontrast.compute.enums import BlockName
from logcontrast.compute.enums import ModeratorKind
from logcontrast.compute.enums import RoleKind
from logcontrast.compute.freq_fit import FreqFit
from logcontrast.compute.freq_fit import f_test_block
from logcontrast.compute.freq_fit import fit_alr_ols
from logcontrast.compute.freq_fit import fit_constrained_ols
from logcontrast.compute.freq_fit import fit_reduced_ols
from logcontrast.compute.freq_fit import t_test_coef
from logcontrast.exceptions import DimensionMismatchError
from logcontrast.exceptions import RankDeficientError
from logcontrast.exceptions import UnknownBlockError
from logcontrast.exceptions import UnknownColumnError
from logcontrast.io.synth import SynthTruth
from logcontrast.io.synth import synth_generate
from tests.conftest import moderated_spec

NULL_SEEDS: Final = 500
ALPHA: Final = 0.05

type Synth = tuple[Dataset, SynthTruth]


def _fit(data: Dataset, spec: ModelSpec) -> FreqFit:
    return fit_constrained_ols(build_design(data, spec), response_vector(data, spec))


def test_recovers_noise_free_truth(exact_synth: Synth) -> None:
    data, truth = exact_synth
    fit = _fit(data, truth.spec.model_spec())
    np.testing.assert_allclose(fit.coefficients, truth.as_array(), rtol=0, atol=1e-8)
    assert fit.rss == pytest.approx(0.0, abs=1e-12)


def test_blocks_sum_to_zero(log_synth: Synth) -> None:
    data, truth = log_synth
    fit = _fit(data, truth.spec.model_spec())
    assert len(fit.design_meta.constraint_blocks) == 2
    for block in fit.design_meta.constraint_blocks:
        assert math.fsum(fit.coefficients[list(block)].tolist()) == pytest.approx(
            0.0, abs=1e-10
        )


def test_covariance_respects_blocks(log_synth: Synth) -> None:
    data, truth = log_synth
    fit = _fit(data, truth.spec.model_spec())
    np.testing.assert_allclose(fit.covariance, fit.covariance.T, atol=1e-15)
    for block in fit.design_meta.constraint_blocks:
        np.testing.assert_allclose(
            fit.covariance[list(block)].sum(axis=0), 0.0, atol=1e-10
        )


def test_degrees_of_freedom(log_synth: Synth) -> None:
    data, truth = log_synth
    fit = _fit(data, truth.spec.model_spec())
    # 14 columns, two zero-sum blocks.
    assert fit.df_resid == data.n - 12
    assert fit.sigma2_hat == pytest.approx(fit.rss / fit.df_resid)
    estimates = fit.estimates()
    assert estimates.dof == fit.df_resid
    assert estimates.sign_prob is None
    np.testing.assert_array_equal(estimates.sd, fit.se)


@pytest.mark.parametrize("ref_index", [0, 1, 2, 3, 4])
def test_alr_matches_kkt(log_synth: Synth, ref_index: int) -> None:
    data, truth = log_synth
    spec = truth.spec.model_spec()
    kkt = _fit(data, spec)
    alr = fit_alr_ols(data, spec, ref_index)
    np.testing.assert_allclose(alr.coefficients, kkt.coefficients, rtol=0, atol=1e-9)
    np.testing.assert_allclose(alr.covariance, kkt.covariance, rtol=0, atol=1e-10)
    assert alr.rss == pytest.approx(kkt.rss, rel=1e-9)


def test_helmert_coordinates_match_kkt(log_synth: Synth) -> None:
    data, truth = log_synth
    spec = truth.spec.model_spec()
    X = build_design(data, spec)
    y = response_vector(data, spec)
    np.testing.assert_allclose(
        fit_reduced_ols(X, y).coefficients,
        fit_constrained_ols(X, y).coefficients,
        rtol=0,
        atol=1e-9,
    )


def test_common_scale_leaves_fit_unchanged(log_synth: Synth) -> None:
    data, truth = log_synth
    spec = truth.spec.model_spec()
    scaled = Dataset(
        parts=data.parts * 1000.0,
        response=data.response,
        part_names=data.part_names,
        moderator=data.moderator,
    )
    np.testing.assert_allclose(
        _fit(scaled, spec).coefficients,
        _fit(data, spec).coefficients,
        rtol=0,
        atol=1e-9,
    )


def test_permuting_parts_permutes_coefficients(log_synth: Synth) -> None:
    data, truth = log_synth
    spec = truth.spec.model_spec()
    order = [3, 0, 4, 2, 1]
    names = tuple(data.part_names[j] for j in order)
    permuted = Dataset(
        parts=data.parts[:, order],
        response=data.response,
        part_names=names,
        moderator=data.moderator,
    )
    base = _fit(data, spec)
    moved = _fit(permuted, spec.model_copy(update={"part_names": names}))
    for kind in (RoleKind.COMP, RoleKind.INTERACTION):
        columns = np.array(base.design_meta.indices(kind))
        np.testing.assert_allclose(
            moved.coefficients[columns],
            base.coefficients[columns[order]],
            rtol=0,
            atol=1e-9,
        )
    for kind in (RoleKind.INTERCEPT, RoleKind.MODERATOR, RoleKind.TOTAL):
        index = base.design_meta.index_of(kind)
        assert moved.coefficients[index] == pytest.approx(
            base.coefficients[index], abs=1e-9
        )


def test_duplicated_part_is_rank_deficient(log_synth: Synth) -> None:
    data, _ = log_synth
    parts = np.array(data.parts)
    parts[:, 1] = parts[:, 0]
    duplicated = Dataset(
        parts=parts, response=data.response, part_names=data.part_names
    )
    spec = ModelSpec(part_names=data.part_names)
    with pytest.raises(RankDeficientError):
        _fit(duplicated, spec)
    with pytest.raises(RankDeficientError):
        fit_alr_ols(duplicated, spec, 2)


def test_response_length_mismatch(log_synth: Synth) -> None:
    data, truth = log_synth
    X = build_design(data, truth.spec.model_spec())
    with pytest.raises(DimensionMismatchError):
        fit_constrained_ols(X, np.zeros(X.n - 1))


def test_too_few_rows(log_synth: Synth) -> None:
    data, truth = log_synth
    spec = truth.spec.model_spec()
    with pytest.raises(DimensionMismatchError):
        _fit(data.take(range(12)), spec)


@pytest.mark.parametrize(
    ("block", "q"),
    [
        (BlockName.COMP, 4),
        (BlockName.INTERACTION, 4),
        (BlockName.ALL_INTERACTIONS, 5),
    ],
)
def test_f_test_block(log_synth: Synth, block: BlockName, q: int) -> None:
    data, truth = log_synth
    spec = truth.spec.model_spec()
    X = build_design(data, spec)
    y = response_vector(data, spec)
    fit = fit_constrained_ols(X, y)
    result = f_test_block(fit, y, X, block)
    assert result.df == (q, fit.df_resid)
    assert result.statistic > 0
    assert 0.0 <= result.p_value <= 1.0
    assert result.p_value == pytest.approx(
        scipy.stats.f.sf(result.statistic, q, fit.df_resid)
    )


def test_f_test_detects_composition(log_synth: Synth) -> None:
    data, truth = log_synth
    spec = truth.spec.model_spec()
    X = build_design(data, spec)
    y = response_vector(data, spec)
    result = f_test_block(fit_constrained_ols(X, y), y, X, BlockName.COMP)
    assert result.p_value < 1e-6


def test_f_test_without_moderator() -> None:
    data, truth = synth_generate(
        moderated_spec(moderator=ModeratorKind.NONE, beta_interaction=None)
    )
    spec = truth.spec.model_spec()
    X = build_design(data, spec)
    y = response_vector(data, spec)
    fit = fit_constrained_ols(X, y)
    with pytest.raises(UnknownBlockError):
        f_test_block(fit, y, X, BlockName.INTERACTION)


def test_t_test_coef(log_synth: Synth) -> None:
    data, truth = log_synth
    fit = _fit(data, truth.spec.model_spec())
    result = t_test_coef(fit, RoleKind.TOTAL)
    index = fit.design_meta.index_of(RoleKind.TOTAL)
    assert result.statistic == pytest.approx(
        fit.coefficients[index] / fit.se[index]
    )
    assert result.df == fit.df_resid
    assert result.p_value == pytest.approx(
        2 * scipy.stats.t.sf(abs(result.statistic), fit.df_resid)
    )


def test_t_test_unknown_column() -> None:
    data, truth = synth_generate(
        moderated_spec(moderator=ModeratorKind.NONE, beta_interaction=None)
    )
    fit = _fit(data, truth.spec.model_spec())
    with pytest.raises(UnknownColumnError):
        t_test_coef(fit, RoleKind.MODERATOR)


@pytest.mark.slow
def test_interval_coverage() -> None:
    covered = 0
    total = 0
    for seed in range(100):
        data, truth = synth_generate(moderated_spec(n=500, seed=seed))
        fit = _fit(data, truth.spec.model_spec())
        half_width = scipy.stats.t.ppf(0.975, fit.df_resid) * fit.se
        inside = np.abs(fit.coefficients - truth.as_array()) <= half_width
        covered += int(np.count_nonzero(inside))
        total += inside.size
    assert 0.93 * total <= covered <= 0.99 * total


@pytest.mark.slow
def test_f_test_is_uniform_under_the_null() -> None:
    p_values = []
    for seed in range(NULL_SEEDS):
        data, truth = synth_generate(
            moderated_spec(n=100, seed=seed, beta_interaction=(0.0,) * 5)
        )
        spec = truth.spec.model_spec()
        X = build_design(data, spec)
        y = response_vector(data, spec)
        fit = fit_constrained_ols(X, y)
        p_values.append(f_test_block(fit, y, X, BlockName.INTERACTION).p_value)
    assert scipy.stats.kstest(p_values, "uniform").statistic < 0.1


@pytest.mark.slow
def test_t_test_rejection_rate_under_the_null() -> None:
    rejected = 0
    for seed in range(2 * NULL_SEEDS):
        data, truth = synth_generate(moderated_spec(n=100, seed=seed, beta_total=0.0))
        fit = _fit(data, truth.spec.model_spec())
        rejected += int(t_test_coef(fit, RoleKind.TOTAL).p_value < ALPHA)
    assert abs(rejected / (2 * NULL_SEEDS) - ALPHA) <= 0.02
