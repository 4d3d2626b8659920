"""Coefficient tables, elasticity reports, fit records and run manifests.

Machine files print floats with 17 significant digits (CSV) or their
shortest round-trip form (JSON); human tables use three decimals.
"""

import hashlib
import importlib.metadata
import json
import logging
import math
from pathlib import Path
from typing import Final
from typing import Self

import numpy as np
import pandas as pd
from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field

from logcontrast.compute.design import DesignMeta
from logcontrast.compute.design import ModelSpec
from logcontrast.compute.enums import Backend
from logcontrast.compute.freq_fit import CoefficientEstimates
from logcontrast.compute.glm_zinb import GRADIENT_TOLERANCE
from logcontrast.compute.glm_zinb import MAX_ITERATIONS
from logcontrast.compute.glm_zinb import NEWTON_STEPS
from logcontrast.compute.glm_zinb import QUASI_NEWTON_FTOL
from logcontrast.compute.glm_zinb import QUASI_NEWTON_GTOL
from logcontrast.compute.glm_zinb import RESTART_JITTER
from logcontrast.compute.interpret import Effect
from logcontrast.compute.interpret import ElasticityReport
from logcontrast.config.settings import Settings
from logcontrast.io.schemas import RunConfig

logger = logging.getLogger(__name__)

COEFFICIENTS_CSV: Final = "coefficients.csv"
COEFFICIENTS_TXT: Final = "coefficients.txt"
ELASTICITY_JSON: Final = "elasticity.json"
ELASTICITY_TXT: Final = "elasticity.txt"
FIT_JSON: Final = "fit.json"
MANIFEST_JSON: Final = "manifest.json"

VERSIONED_PACKAGES: Final = ("logcontrast", "numpy", "pandas", "pydantic", "scipy")
NUMBER_WIDTH: Final = 9


def coefficient_frame(estimates: CoefficientEstimates) -> pd.DataFrame:
    """One row per design column with its estimate and uncertainty."""
    meta = estimates.design_meta
    return pd.DataFrame(
        {
            "label": meta.labels,
            "role": [str(role.kind) for role in meta.column_roles],
            "part": [
                "" if role.part is None else meta.part_names[role.part]
                for role in meta.column_roles
            ],
            "estimate": estimates.coefficients,
            "sd": np.nan if estimates.sd is None else estimates.sd,
            "sign_prob": np.nan if estimates.sign_prob is None else estimates.sign_prob,
        }
    )


def write_coefficients_csv(estimates: CoefficientEstimates, path: Path) -> None:
    coefficient_frame(estimates).to_csv(
        path, index=False, float_format="%.17g", lineterminator="\n"
    )


def coefficient_table(estimates: CoefficientEstimates) -> str:
    """Aligned plain-text table with three decimals.

    Fits with sign probabilities get `Mean` and `Prob` columns, the others
    `Estimate` and `SE`.
    """
    frame = coefficient_frame(estimates)
    if estimates.sign_prob is not None:
        headers, columns = ("Mean", "Prob"), ("estimate", "sign_prob")
    else:
        headers, columns = ("Estimate", "SE"), ("estimate", "sd")
    width = max(len(label) for label in frame["label"])
    lines = [
        f"{'':<{width}}"
        + "".join(f"  {header:>{NUMBER_WIDTH}}" for header in headers)
    ]
    for label, first, second in zip(
        frame["label"], frame[columns[0]], frame[columns[1]], strict=True
    ):
        lines.append(
            f"{label:<{width}}"
            + f"  {first:>{NUMBER_WIDTH}.3f}  {second:>{NUMBER_WIDTH}.3f}"
        )
    return "\n".join(lines) + "\n"


def _effect_line(name: str, effect: Effect, unit: str = "") -> str:
    line = f"{name}: {effect.value:.3f}{unit}"
    if effect.sd is not None:
        line += f" (sd {effect.sd:.3f})"
    if effect.sign_prob is not None:
        line += f", sign probability {effect.sign_prob:.3f}"
        if effect.supported:
            line += " [supported]"
    return line


def render_elasticity(report: ElasticityReport) -> str:
    """Plain-text rendering of an elasticity report."""
    lines = [
        f"Response change in % per 1% increase of a part "
        f"(scale {report.scale:.3f}, support threshold "
        f"{report.support_threshold:.2f})",
        "",
    ]
    for part in report.parts:
        lines.append(
            _effect_line(part.part, part.elasticity, "%")
            + f" [exact {part.elasticity.exact_percent:.3f}%]"
        )
        if part.moderated_elasticity is not None:
            lines.append(
                _effect_line("  moderated", part.moderated_elasticity, "%")
                + f" [exact {part.moderated_elasticity.exact_percent:.3f}%]"
            )
        if part.moderated_compositional is not None:
            lines.append(
                _effect_line("  moderated compositional", part.moderated_compositional)
            )
    lines.append("")
    if report.total is not None:
        lines.append(_effect_line("Total (all parts +1%)", report.total, "%"))
    if report.moderated_total is not None:
        lines.append(_effect_line("Moderated total", report.moderated_total, "%"))
    if report.moderator is not None and report.moderator_factor is not None:
        lines.append(
            _effect_line("Moderator", report.moderator)
            + f", response factor {report.moderator_factor:.3f}"
        )
    return "\n".join(lines).rstrip("\n") + "\n"


class FitRecord(BaseModel):
    """Everything needed to rebuild the coefficient estimates of a fit."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    backend: Backend
    spec: ModelSpec
    response_log_base: float | None = Field(
        description="Log base of the modelled response; null on the identity scale.",
    )
    labels: tuple[str, ...]
    centers: tuple[float, ...]
    coefficients: tuple[float, ...]
    sd: tuple[float, ...] | None = None
    sign_prob: tuple[float, ...] | None = None
    covariance: tuple[tuple[float, ...], ...] | None = None
    dof: float | None = Field(
        default=None,
        description="Student-t degrees of freedom; null for Gaussian uncertainty.",
    )
    samples: tuple[tuple[float, ...], ...] | None = Field(
        default=None,
        description="Posterior draws of sampled fits, one row per draw.",
    )
    diagnostics: dict[str, float | str] = Field(
        default_factory=dict,
        description="Backend-specific fit statistics.",
    )

    @classmethod
    def from_estimates(
        cls,
        estimates: CoefficientEstimates,
        backend: Backend,
        diagnostics: dict[str, float | str] | None = None,
    ) -> Self:
        meta = estimates.design_meta
        return cls(
            backend=backend,
            spec=meta.spec,
            response_log_base=meta.response_log_base,
            labels=meta.labels,
            centers=tuple(meta.centers.tolist()),
            coefficients=tuple(estimates.coefficients.tolist()),
            sd=None if estimates.sd is None else tuple(estimates.sd.tolist()),
            sign_prob=(
                None
                if estimates.sign_prob is None
                else tuple(estimates.sign_prob.tolist())
            ),
            covariance=(
                None
                if estimates.covariance is None
                else tuple(tuple(row) for row in estimates.covariance.tolist())
            ),
            dof=None if math.isinf(estimates.dof) else estimates.dof,
            samples=(
                None
                if estimates.samples is None
                else tuple(tuple(row) for row in estimates.samples.tolist())
            ),
            diagnostics=diagnostics or {},
        )

    def to_estimates(self) -> CoefficientEstimates:
        meta = DesignMeta.for_spec(
            self.spec,
            response_log_base=self.response_log_base,
            centers=np.asarray(self.centers, dtype=np.float64),
        )
        return CoefficientEstimates(
            design_meta=meta,
            coefficients=np.asarray(self.coefficients, dtype=np.float64),
            sd=None if self.sd is None else np.asarray(self.sd, dtype=np.float64),
            sign_prob=(
                None
                if self.sign_prob is None
                else np.asarray(self.sign_prob, dtype=np.float64)
            ),
            covariance=(
                None
                if self.covariance is None
                else np.asarray(self.covariance, dtype=np.float64)
            ),
            dof=math.inf if self.dof is None else self.dof,
            samples=(
                None
                if self.samples is None
                else np.asarray(self.samples, dtype=np.float64)
            ),
        )


class OptimizerSettings(BaseModel):
    """Settings of the count-model optimiser used by a `zinb` run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    method: str = "L-BFGS-B"
    restarts: int = Field(description="Optimiser starts, the first unperturbed.")
    restart_jitter: float = Field(
        default=RESTART_JITTER,
        description="Standard deviation of the perturbation of later starts.",
    )
    max_iterations: int = MAX_ITERATIONS
    gtol: float = QUASI_NEWTON_GTOL
    ftol: float = QUASI_NEWTON_FTOL
    newton_steps: int = Field(
        default=NEWTON_STEPS,
        description="Most Newton polishing steps after the quasi-Newton run.",
    )
    gradient_tolerance: float = Field(
        default=GRADIENT_TOLERANCE,
        description="Largest gradient entry a converged restart may have.",
    )


class Manifest(BaseModel):
    """Provenance of a `fit` run.

    The configuration is dumped with every default filled in.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    config: RunConfig
    config_sha256: str = Field(
        description="SHA-256 of the configuration as sorted-key JSON.",
    )
    seed: int
    backend: Backend
    versions: dict[str, str]
    settings: Settings
    rows: int = Field(description="Rows used by the fit.")
    dropped_rows: int = Field(description="Rows removed by missing values or lagging.")
    outputs: tuple[str, ...]
    optimizer: OptimizerSettings | None = Field(
        default=None,
        description="Count-model optimiser settings; null for other backends.",
    )


def config_digest(config: RunConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def package_versions() -> dict[str, str]:
    versions = {}
    for package in VERSIONED_PACKAGES:
        try:
            versions[package] = importlib.metadata.version(package)
        except importlib.metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


def write_json(model: BaseModel, path: Path) -> None:
    path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")


def write_text(text: str, path: Path) -> None:
    path.write_text(text, encoding="utf-8")


def write_elasticity(report: ElasticityReport, out_dir: Path) -> tuple[str, ...]:
    write_json(report, out_dir / ELASTICITY_JSON)
    write_text(render_elasticity(report), out_dir / ELASTICITY_TXT)
    return ELASTICITY_JSON, ELASTICITY_TXT


def read_fit_record(path: Path) -> FitRecord:
    return FitRecord.model_validate_json(path.read_text(encoding="utf-8"))
