import logging

import numpy as np
import pytest
from pydantic import ValidationError

from logcontrast.compute.design import apply_lag
from logcontrast.compute.design import build_design
from logcontrast.compute.design import response_vector
from logcontrast.compute.enums import ModeratorKind
from logcontrast.compute.enums import ResponseLaw
from logcontrast.compute.enums import RoleKind
from logcontrast.compute.freq_fit import fit_constrained_ols
from logcontrast.io.schemas import SynthSpec
from logcontrast.io.synth import synth_generate
from tests.conftest import BETA
from tests.conftest import moderated_spec


def test_fixed_seed_is_reproducible() -> None:
    first, first_truth = synth_generate(moderated_spec())
    second, second_truth = synth_generate(moderated_spec())
    np.testing.assert_array_equal(first.parts, second.parts)
    np.testing.assert_array_equal(first.response, second.response)
    np.testing.assert_array_equal(first.moderator, second.moderator)
    assert first_truth == second_truth


def test_seeds_differ() -> None:
    first, _ = synth_generate(moderated_spec(seed=1))
    second, _ = synth_generate(moderated_spec(seed=2))
    assert not np.array_equal(first.parts, second.parts)


def test_binary_moderator_rate() -> None:
    data, _ = synth_generate(moderated_spec(n=10_000))
    assert data.moderator is not None
    assert set(np.unique(data.moderator).tolist()) == {0.0, 1.0}
    assert float(np.mean(data.moderator)) == pytest.approx(0.16, abs=0.02)


def test_truth_follows_design_layout() -> None:
    data, truth = synth_generate(moderated_spec())
    X = build_design(data, truth.spec.model_spec())
    assert truth.labels == X.meta.labels
    coefficients = truth.as_array()
    np.testing.assert_allclose(
        coefficients[list(X.meta.indices(RoleKind.COMP))], BETA, atol=1e-15
    )
    assert coefficients[X.meta.index_of(RoleKind.TOTAL)] == 0.3
    assert not truth.recentred


def test_non_zero_sum_block_is_recentred(caplog: pytest.LogCaptureFixture) -> None:
    with caplog.at_level(logging.WARNING):
        _, truth = synth_generate(moderated_spec(beta=(1.0, 0.0, 0.0, 0.0, 0.0)))
    assert truth.recentred
    np.testing.assert_allclose(truth.as_array()[1:6], [0.8, -0.2, -0.2, -0.2, -0.2])
    assert "Recentred a coefficient block to sum to zero." in caplog.messages


@pytest.mark.parametrize(
    "overrides",
    [
        {"beta": (0.1, -0.1)},
        {"beta_interaction": (0.1, -0.1)},
        {"law": ResponseLaw.IDENTITY, "offset_log_mean": 10.0},
        {"n": 0},
        {"sigma2": -1.0},
        {"moderator_rate": 1.0},
        {"unknown": 1},
    ],
)
def test_invalid_spec(overrides: dict[str, object]) -> None:
    with pytest.raises(ValidationError):
        moderated_spec(**overrides)


def test_zinb_counts_are_integers() -> None:
    data, _ = synth_generate(moderated_spec(law=ResponseLaw.ZINB, pi=0.3, theta=1.5))
    assert np.all(data.response >= 0)
    np.testing.assert_array_equal(data.response, np.floor(data.response))
    assert float(np.mean(data.response == 0)) > 0.3


def test_offset_is_positive() -> None:
    data, truth = synth_generate(
        moderated_spec(law=ResponseLaw.ZINB, offset_log_mean=10.0, intercept=-8.0)
    )
    assert data.offset is not None
    assert np.all(data.offset > 0)
    assert truth.spec.model_spec().offset_column == "offset"


def test_numeric_moderator() -> None:
    data, _ = synth_generate(moderated_spec(moderator=ModeratorKind.NUMERIC, n=2000))
    assert data.moderator is not None
    assert abs(float(np.mean(data.moderator))) < 0.1
    assert float(np.std(data.moderator)) == pytest.approx(1.0, abs=0.1)


def test_lagged_responses_recover_slopes() -> None:
    spec = SynthSpec(
        n=600,
        beta=BETA,
        beta_total=0.3,
        moderator=ModeratorKind.NONE,
        intercept=1.0,
        sigma2=1e-4,
        n_groups=3,
        lag=2,
        seed=4,
    )
    data, truth = synth_generate(spec)
    lagged = apply_lag(data, 2)
    assert lagged.dropped_rows == 6
    model = spec.model_spec()
    X = build_design(lagged, model)
    fit = fit_constrained_ols(X, response_vector(lagged, model))
    slopes = list(X.meta.indices(RoleKind.COMP)) + [X.meta.index_of(RoleKind.TOTAL)]
    np.testing.assert_allclose(
        fit.coefficients[slopes], truth.as_array()[slopes], rtol=0, atol=0.01
    )
