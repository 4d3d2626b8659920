import math
from pathlib import Path
from typing import Final

import numpy as np
import pandas as pd
import pytest

from logcontrast.compute.design import Dataset
from logcontrast.compute.design import DesignMeta
from logcontrast.compute.design import ModelSpec
from logcontrast.compute.design import build_design
from logcontrast.compute.design import response_vector
from logcontrast.compute.enums import Backend
from logcontrast.compute.enums import ModeratorKind
from logcontrast.compute.enums import ResponseTransform
from logcontrast.compute.freq_fit import CoefficientEstimates
from logcontrast.compute.freq_fit import fit_constrained_ols
from logcontrast.compute.interpret import ElasticityReport
from logcontrast.compute.interpret import elasticity_report
from logcontrast.io.report import ELASTICITY_JSON
from logcontrast.io.report import ELASTICITY_TXT
from logcontrast.io.report import VERSIONED_PACKAGES
from logcontrast.io.report import FitRecord
from logcontrast.io.report import coefficient_frame
from logcontrast.io.report import coefficient_table
from logcontrast.io.report import config_digest
from logcontrast.io.report import package_versions
from logcontrast.io.report import read_fit_record
from logcontrast.io.report import render_elasticity
from logcontrast.io.report import write_coefficients_csv
from logcontrast.io.report import write_elasticity
from logcontrast.io.report import write_json
from logcontrast.io.schemas import ColumnMapping
from logcontrast.io.schemas import RunConfig
from logcontrast.io.synth import SynthTruth
from tests.conftest import PART_NAMES

SMALL_SPEC: Final = ModelSpec(part_names=("a", "b"))
MORTALITY_SPEC: Final = ModelSpec(
    part_names=PART_NAMES,
    log_base=math.e,
    include_total=True,
    moderator=ModeratorKind.BINARY,
    response_transform=ResponseTransform.LOG,
)
MORTALITY_COEFFICIENTS: Final = (
    0.0,
    -0.002,
    0.010,
    -0.003,
    -0.001,
    -0.004,
    0.071,
    0.025,
    -0.010,
    -0.005,
    -0.004,
    -0.006,
    0.006,
    0.001,
)


def _small(**kwargs: object) -> CoefficientEstimates:
    return CoefficientEstimates(
        design_meta=DesignMeta.for_spec(SMALL_SPEC),
        coefficients=np.array([1.0, 0.25, -0.25]),
        **kwargs,  # type: ignore[arg-type]
    )


def _mortality_report() -> ElasticityReport:
    estimates = CoefficientEstimates(
        design_meta=DesignMeta.for_spec(MORTALITY_SPEC),
        coefficients=np.array(MORTALITY_COEFFICIENTS),
    )
    return elasticity_report(estimates, MORTALITY_SPEC)


def test_coefficient_table_golden() -> None:
    table = coefficient_table(_small(sd=np.array([0.1, 0.05, 0.05])))
    assert table == (
        "            Estimate         SE\n"
        "intercept      1.000      0.100\n"
        "comp:a         0.250      0.050\n"
        "comp:b        -0.250      0.050\n"
    )


def test_coefficient_table_with_sign_probabilities() -> None:
    table = coefficient_table(
        _small(sd=np.full(3, 0.1), sign_prob=np.array([1.0, 0.975, 0.975]))
    )
    assert table.splitlines() == [
        "                Mean       Prob",
        "intercept      1.000      1.000",
        "comp:a         0.250      0.975",
        "comp:b        -0.250      0.975",
    ]


def test_coefficient_frame_without_uncertainty() -> None:
    frame = coefficient_frame(_small())
    assert frame["label"].tolist() == ["intercept", "comp:a", "comp:b"]
    assert frame["role"].tolist() == ["intercept", "comp", "comp"]
    assert frame["part"].tolist() == ["", "a", "b"]
    assert frame["sd"].isna().all()
    assert frame["sign_prob"].isna().all()


def test_coefficients_csv_keeps_full_precision(
    log_synth: tuple[Dataset, SynthTruth],
    tmp_path: Path,
) -> None:
    data, truth = log_synth
    spec = truth.spec.model_spec()
    estimates = fit_constrained_ols(
        build_design(data, spec), response_vector(data, spec)
    ).estimates()
    path = tmp_path / "coefficients.csv"
    write_coefficients_csv(estimates, path)
    frame = pd.read_csv(path, keep_default_na=False, float_precision="round_trip")
    assert frame.columns.tolist() == [
        "label",
        "role",
        "part",
        "estimate",
        "sd",
        "sign_prob",
    ]
    np.testing.assert_array_equal(frame["estimate"], estimates.coefficients)
    np.testing.assert_array_equal(frame["sd"], estimates.sd)
    assert path.read_bytes().endswith(b"\n")
    assert b"\r" not in path.read_bytes()


def test_fit_record_round_trip(
    log_synth: tuple[Dataset, SynthTruth],
    tmp_path: Path,
) -> None:
    data, truth = log_synth
    spec = truth.spec.model_spec()
    estimates = fit_constrained_ols(
        build_design(data, spec), response_vector(data, spec)
    ).estimates()
    record = FitRecord.from_estimates(estimates, Backend.FREQ, {"rss": 1.5})
    path = tmp_path / "fit.json"
    write_json(record, path)
    loaded = read_fit_record(path)
    assert loaded == record
    rebuilt = loaded.to_estimates()
    np.testing.assert_array_equal(rebuilt.coefficients, estimates.coefficients)
    np.testing.assert_array_equal(rebuilt.covariance, estimates.covariance)
    np.testing.assert_array_equal(
        rebuilt.design_meta.centers, estimates.design_meta.centers
    )
    assert rebuilt.design_meta.labels == estimates.design_meta.labels
    assert rebuilt.design_meta.response_log_base == 2.0
    assert rebuilt.dof == estimates.dof


def test_fit_record_gaussian_dof() -> None:
    record = FitRecord.from_estimates(_small(), Backend.ZINB)
    assert record.dof is None
    assert math.isinf(record.to_estimates().dof)


def test_render_elasticity() -> None:
    lines = render_elasticity(_mortality_report()).splitlines()
    assert lines[0] == (
        "Response change in % per 1% increase of a part "
        "(scale 1.000, support threshold 0.90)"
    )
    assert "NO2: 0.016% [exact 0.016%]" in lines
    assert "  moderated compositional: 0.023" in lines
    assert "Total (all parts +1%): 0.030%" in lines
    assert "Moderated total: 0.035%" in lines
    assert lines[-1] == "Moderator: 0.071, response factor 1.074"


def test_write_elasticity(tmp_path: Path) -> None:
    report = _mortality_report()
    assert write_elasticity(report, tmp_path) == (ELASTICITY_JSON, ELASTICITY_TXT)
    loaded = ElasticityReport.model_validate_json(
        (tmp_path / ELASTICITY_JSON).read_text(encoding="utf-8")
    )
    assert loaded == report
    assert (tmp_path / ELASTICITY_TXT).read_text(encoding="utf-8") == (
        render_elasticity(report)
    )


def test_config_digest() -> None:
    config = RunConfig(
        input=Path("data.csv"),
        columns=ColumnMapping(parts=("a", "b"), response="y"),
    )
    digest = config_digest(config)
    assert len(digest) == 64
    assert digest == config_digest(RunConfig.model_validate(config.model_dump()))
    assert digest != config_digest(config.model_copy(update={"seed": 1}))


def test_package_versions() -> None:
    versions = package_versions()
    assert tuple(versions) == VERSIONED_PACKAGES
    assert versions["numpy"] == np.__version__


@pytest.mark.parametrize("sign_prob", [None, 0.5])
def test_fit_record_sign_prob_optional(sign_prob: float | None) -> None:
    estimates = _small(
        sign_prob=None if sign_prob is None else np.full(3, sign_prob)
    )
    record = FitRecord.from_estimates(estimates, Backend.BAYES_SOFT)
    assert (record.sign_prob is None) == (sign_prob is None)
