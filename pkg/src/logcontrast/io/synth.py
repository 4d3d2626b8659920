"""Synthetic datasets drawn from the log-contrast models themselves."""

import dataclasses
import logging
import math

import numpy as np
from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field

from logcontrast.compute.compositions import FloatArray
from logcontrast.compute.design import Dataset
from logcontrast.compute.design import DesignMatrix
from logcontrast.compute.design import IntArray
from logcontrast.compute.design import build_design
from logcontrast.compute.enums import ModeratorKind
from logcontrast.compute.enums import ResponseLaw
from logcontrast.compute.enums import RoleKind
from logcontrast.config.settings import settings
from logcontrast.io.schemas import SynthSpec

logger = logging.getLogger(__name__)


class SynthTruth(BaseModel):
    """Every generating parameter of a synthetic dataset."""

    model_config = ConfigDict(frozen=True)

    spec: SynthSpec
    labels: tuple[str, ...] = Field(description="Design column labels, in order.")
    coefficients: tuple[float, ...] = Field(
        description="True coefficients in design order, after any recentring.",
    )
    recentred: bool = Field(description="Whether a coefficient block was recentred.")

    def as_array(self) -> FloatArray:
        return np.asarray(self.coefficients, dtype=np.float64)


def _zero_sum(name: str, block: tuple[float, ...]) -> tuple[FloatArray, bool]:
    values = np.asarray(block, dtype=np.float64)
    total = math.fsum(block)
    if abs(total) <= settings.zero_sum_tolerance:
        return values, False
    logger.warning(
        "Recentred a coefficient block to sum to zero.",
        extra={"block": name, "sum": total},
    )
    return values - total / values.size, True


def _truth_vector(spec: SynthSpec, X: DesignMatrix) -> tuple[FloatArray, bool]:
    beta, recentred = _zero_sum("comp", spec.beta)
    interaction, interaction_recentred = _zero_sum(
        "interaction", spec.beta_interaction or (0.0,) * len(spec.beta)
    )
    truth = np.zeros(X.p)
    for i, role in enumerate(X.column_roles):
        match role.kind:
            case RoleKind.INTERCEPT:
                truth[i] = spec.intercept
            case RoleKind.COMP:
                truth[i] = beta[role.part]
            case RoleKind.MODERATOR:
                truth[i] = spec.beta_moderator
            case RoleKind.INTERACTION:
                truth[i] = interaction[role.part]
            case RoleKind.TOTAL:
                truth[i] = spec.beta_total
            case RoleKind.TOTAL_INTERACTION:
                truth[i] = spec.beta_total_interaction
            case RoleKind.LOG_OFFSET:
                pass
    return truth, recentred or interaction_recentred


def _lag_sources(lag: int, group: tuple[str, ...], time: IntArray) -> list[int]:
    """Row whose covariates drive each row's response."""
    position = {key: i for i, key in enumerate(zip(group, time.tolist(), strict=True))}
    return [
        position.get((g, t - lag), i)
        for i, (g, t) in enumerate(zip(group, time.tolist(), strict=True))
    ]


def synth_generate(spec: SynthSpec) -> tuple[Dataset, SynthTruth]:
    """Draw a dataset from the model described by `spec`.

    Parts are i.i.d. log-normal; a binary moderator is Bernoulli with
    `spec.moderator_rate`, a numeric one standard normal. Rows cycle
    through `spec.n_groups` groups with consecutive integer times. With a
    lag, each row's response follows the covariates of its group `lag`
    steps earlier (rows without such a source use their own).

    Returns:
        The dataset and the record of true parameters.
    """
    rng = np.random.default_rng(spec.seed)
    D = len(spec.part_names)
    parts = np.exp(rng.normal(spec.part_log_mean, spec.part_log_sd, size=(spec.n, D)))
    moderator = None
    match spec.moderator:
        case ModeratorKind.BINARY:
            moderator = (rng.random(spec.n) < spec.moderator_rate).astype(np.float64)
        case ModeratorKind.NUMERIC:
            moderator = rng.standard_normal(spec.n)
        case ModeratorKind.NONE:
            pass
    offset = None
    if spec.offset_log_mean is not None:
        log_offset = rng.normal(spec.offset_log_mean, spec.offset_log_sd, size=spec.n)
        offset = np.exp(log_offset)
    group = tuple(f"g{i % spec.n_groups + 1}" for i in range(spec.n))
    time = np.arange(spec.n, dtype=np.int64) // spec.n_groups

    data = Dataset(
        parts=parts,
        response=np.zeros(spec.n),
        part_names=spec.part_names,
        moderator=moderator,
        offset=offset,
        group=group,
        time=time,
    )
    model = spec.model_spec()
    X = build_design(data, model)
    truth, recentred = _truth_vector(spec, X)
    signal = X.values @ truth
    if spec.lag > 0:
        signal = signal[_lag_sources(spec.lag, group, time)]
    if X.offset is not None:
        log_base = math.e if spec.law is ResponseLaw.ZINB else spec.log_base
        signal = signal + X.offset / math.log(log_base)

    noise = rng.normal(0.0, math.sqrt(spec.sigma2), size=spec.n)
    match spec.law:
        case ResponseLaw.IDENTITY:
            response = signal + noise
        case ResponseLaw.LOG:
            response = np.power(spec.log_base, signal + noise)
        case ResponseLaw.ZINB:
            mu = np.exp(signal)
            if math.isinf(spec.theta):
                counts = rng.poisson(mu)
            else:
                success = spec.theta / (spec.theta + mu)
                counts = rng.negative_binomial(spec.theta, success)
            structural = rng.random(spec.n) < spec.pi
            response = np.where(structural, 0, counts).astype(np.float64)

    data = dataclasses.replace(data, response=response)
    logger.info(
        "Generated synthetic dataset.",
        extra={"n": spec.n, "law": str(spec.law), "seed": spec.seed},
    )
    return data, SynthTruth(
        spec=spec,
        labels=X.meta.labels,
        coefficients=tuple(truth.tolist()),
        recentred=recentred,
    )
