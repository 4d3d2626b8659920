from pathlib import Path

import pytest
from pydantic import ValidationError

from logcontrast.compute.enums import Backend
from logcontrast.compute.enums import ConstraintMode
from logcontrast.compute.enums import ModeratorKind
from logcontrast.compute.enums import OffsetMode
from logcontrast.compute.enums import ResponseTransform
from logcontrast.io.schemas import ColumnMapping
from logcontrast.io.schemas import RunConfig


def _config(**overrides: object) -> RunConfig:
    fields: dict[str, object] = {
        "input": "data.csv",
        "columns": {
            "parts": ["PM10", "NO2", "O3"],
            "response": "deaths",
            "moderator": "extreme_temperature",
            "offset": "population",
            "group": "area",
            "time": "date",
        },
        "model": {"response_transform": "log", "moderator": "binary"},
    }
    return RunConfig.model_validate(fields | overrides)


def test_defaults() -> None:
    config = _config()
    assert config.input == Path("data.csv")
    assert config.backend is Backend.FREQ
    assert config.lag == 0
    assert config.seed == 0
    assert config.output.out_dir == Path("out")
    assert config.glm.restarts == 5


def test_model_spec() -> None:
    spec = _config().model_spec()
    assert spec.part_names == ("PM10", "NO2", "O3")
    assert spec.moderator is ModeratorKind.BINARY
    assert spec.response_transform is ResponseTransform.LOG
    assert spec.offset_column == "population"
    assert spec.offset_mode is OffsetMode.FIXED
    assert spec.log_base == 2.0


@pytest.mark.parametrize(
    ("backend", "mode"),
    [
        (Backend.BAYES_SOFT, ConstraintMode.SOFT),
        (Backend.BAYES_HARD, ConstraintMode.HARD),
    ],
)
def test_prior_for_backend(backend: Backend, mode: ConstraintMode) -> None:
    prior = _config(backend=backend, seed=17).prior_for_backend()
    assert prior.constraint_mode is mode
    assert prior.seed == 17


@pytest.mark.parametrize(
    "overrides",
    [
        {
            "columns": {"parts": ["a", "b"], "response": "y"},
            "model": {"moderator": "numeric"},
        },
        {"lag": 1, "columns": {"parts": ["a", "b"], "response": "y"}},
        {"backend": "zinb"},
        {"model": {"moderator": "binary"}},
        {"lag": -1},
        {"seed": -3},
        {"freq": {"alr_reference": -1}},
        {"backend": "gibbs"},
        {"extra": True},
        {"model": {"log_base": 1.0}},
        {"glm": {"restarts": 0}},
    ],
)
def test_invalid_run_config(overrides: dict[str, object]) -> None:
    with pytest.raises(ValidationError):
        _config(**overrides)


def test_zinb_backend_with_counts() -> None:
    config = _config(backend="zinb", model={"moderator": "binary"})
    assert config.backend is Backend.ZINB


def test_offset_covariate_allows_identity_response() -> None:
    config = _config(model={"moderator": "binary", "offset_mode": "covariate"})
    assert config.model_spec().offset_mode is OffsetMode.COVARIATE


@pytest.mark.parametrize(
    "fields",
    [
        {"parts": ["a", "a"], "response": "y"},
        {"parts": ["a", "b"], "response": "a"},
        {"parts": ["a", "b"], "response": "y", "group": "y"},
        {"parts": ["a"], "response": "y"},
    ],
)
def test_invalid_column_mapping(fields: dict[str, object]) -> None:
    with pytest.raises(ValidationError):
        ColumnMapping.model_validate(fields)


def test_column_mapping_columns() -> None:
    mapping = ColumnMapping(parts=("a", "b"), response="y", time="date")
    assert mapping.columns() == ("a", "b", "y", "date")
