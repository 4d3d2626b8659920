"""Elasticities, moderated effects and doubling statements.

Every statement is a linear combination of coefficients. On a log
response with log parts, bumping part `j` by 1% raises both its log and
the total by `log(1.01)`, so the response changes by a factor
`1.01 ** (beta_j + beta_t)` once the coefficients are rescaled by
`ln(response base) / ln(part base)`.
"""

import logging
import math
from dataclasses import dataclass
from typing import final

import numpy as np
import scipy.stats
from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field

from logcontrast.compute.bayes_fit import PosteriorSummary
from logcontrast.compute.bayes_fit import draw_sign_prob
from logcontrast.compute.compositions import FloatArray
from logcontrast.compute.design import ColumnRole
from logcontrast.compute.design import Dataset
from logcontrast.compute.design import DesignMeta
from logcontrast.compute.design import ModelSpec
from logcontrast.compute.design import linear_predictor
from logcontrast.compute.design import transform_design
from logcontrast.compute.enums import RoleKind
from logcontrast.compute.freq_fit import CoefficientEstimates
from logcontrast.compute.freq_fit import FreqFit
from logcontrast.compute.glm_zinb import GlmFit
from logcontrast.config.settings import settings
from logcontrast.exceptions import InconsistentDError
from logcontrast.exceptions import NoModeratorError
from logcontrast.exceptions import NotBase2Error
from logcontrast.exceptions import NotLogScaleError
from logcontrast.exceptions import RefIndexOutOfRangeError

logger = logging.getLogger(__name__)

type Fit = FreqFit | PosteriorSummary | GlmFit | CoefficientEstimates

ONE_PERCENT = 1.01


def as_estimates(fit: Fit) -> CoefficientEstimates:
    if isinstance(fit, CoefficientEstimates):
        return fit
    return fit.estimates()


class Effect(BaseModel):
    """A linear combination of coefficients with its uncertainty."""

    model_config = ConfigDict(frozen=True)

    value: float = Field(description="Point estimate.")
    sd: float | None = Field(
        default=None,
        description="Standard error or posterior standard deviation.",
    )
    sign_prob: float | None = Field(
        default=None,
        description="Probability of the more likely sign.",
    )
    supported: bool | None = Field(
        default=None,
        description="Whether sign_prob exceeds the support threshold.",
    )


class Elasticity(Effect):
    """An elasticity, printed as a percentage per 1% change."""

    exact_percent: float = Field(
        description="Exact response change in % for a 1% increase, 100 (1.01^e - 1).",
    )


class PartElasticity(BaseModel):
    model_config = ConfigDict(frozen=True)

    part: str = Field(examples=["PM10"])
    beta: float = Field(description="Compositional coefficient.")
    beta_total: float = Field(description="Total coefficient (0 without a total).")
    beta_interaction: float | None = Field(
        default=None,
        description="Compositional interaction coefficient.",
    )
    beta_total_interaction: float | None = Field(
        default=None,
        description="Total interaction coefficient.",
    )
    elasticity: Elasticity = Field(description="beta + beta_total.")
    moderated_elasticity: Elasticity | None = Field(
        default=None,
        description="beta + beta_total + beta_interaction + beta_total_interaction.",
    )
    moderated_compositional: Effect | None = Field(
        default=None,
        description="beta + beta_interaction.",
    )


class ElasticityReport(BaseModel):
    """Interpretation of a log-response fit.

    Coefficients in the report are on the elasticity scale: the fitted
    values multiplied by `scale`.
    """

    model_config = ConfigDict(frozen=True)

    response_log_base: float
    part_log_base: float
    scale: float = Field(
        description="ln(response log base) / ln(part log base).",
    )
    support_threshold: float
    parts: tuple[PartElasticity, ...]
    total: Effect | None = Field(
        default=None,
        description="D * beta_total, the response change in % per 1% of every part.",
    )
    moderated_total: Effect | None = Field(
        default=None,
        description="D * (beta_total + beta_total_interaction).",
    )
    moderator: Effect | None = Field(
        default=None,
        description="Moderator coefficient on the response log scale.",
    )
    moderator_factor: float | None = Field(
        default=None,
        description="Response factor per unit of the moderator, base^beta_z.",
    )


@final
@dataclass(frozen=True, slots=True)
class _Combiner:
    """Evaluates weighted sums of coefficients with their uncertainty."""

    estimates: CoefficientEstimates
    scale: float
    threshold: float

    def weights(self, *roles: ColumnRole | RoleKind) -> FloatArray:
        weights = np.zeros(self.estimates.design_meta.p)
        for role in roles:
            weights[self.estimates.design_meta.index_of(role)] += 1.0
        return weights

    def effect(self, weights: FloatArray, scale: float | None = None) -> Effect:
        return Effect.model_validate(self._fields(weights, scale))

    def elasticity(self, weights: FloatArray) -> Elasticity:
        fields = self._fields(weights, None)
        value = float(fields["value"] or 0.0)
        fields["exact_percent"] = 100 * math.expm1(value * math.log(ONE_PERCENT))
        return Elasticity.model_validate(fields)

    def _fields(
        self, weights: FloatArray, scale: float | None
    ) -> dict[str, float | bool | None]:
        estimates = self.estimates
        if scale is None:
            scale = self.scale
        value = scale * float(weights @ estimates.coefficients)
        sd = self._sd(weights)
        sign_prob = None
        nonzero = np.flatnonzero(weights)
        if estimates.sign_prob is not None and nonzero.size == 1:
            sign_prob = float(estimates.sign_prob[nonzero[0]])
        if sign_prob is None and estimates.samples is not None:
            combined = estimates.samples @ weights
            sign_prob = float(draw_sign_prob(combined[:, np.newaxis])[0])
        if sd is not None:
            sd *= abs(scale)
            if estimates.sign_prob is not None and sign_prob is None:
                sign_prob = self._sign_prob(value, sd)
        return {
            "value": value,
            "sd": sd,
            "sign_prob": sign_prob,
            "supported": None if sign_prob is None else sign_prob > self.threshold,
        }

    def _sd(self, weights: FloatArray) -> float | None:
        estimates = self.estimates
        nonzero = np.flatnonzero(weights)
        if nonzero.size == 1 and estimates.sd is not None:
            return float(estimates.sd[nonzero[0]])
        if estimates.covariance is None:
            return None
        return math.sqrt(max(float(weights @ estimates.covariance @ weights), 0.0))

    def _sign_prob(self, value: float, sd: float) -> float:
        if sd == 0:
            return 0.5 if value == 0 else 1.0
        dof = self.estimates.dof
        if math.isinf(dof):
            return float(scipy.stats.norm.cdf(abs(value) / sd))
        scale = sd * math.sqrt((dof - 2) / dof)
        return float(scipy.stats.t.cdf(abs(value) / scale, dof))


def elasticity_scale(meta: DesignMeta) -> float:
    """Factor turning coefficients into elasticities.

    Raises:
        NotLogScaleError: If the response is not modelled on a log scale.
    """
    if meta.response_log_base is None:
        raise NotLogScaleError(
            "Coefficients of an identity-response fit are level effects, "
            "not elasticities."
        )
    return math.log(meta.response_log_base) / math.log(meta.spec.log_base)


def _check_spec(meta: DesignMeta, spec: ModelSpec) -> None:
    if tuple(spec.part_names) != meta.part_names:
        raise InconsistentDError(
            f"Fit has parts {meta.part_names}, specification has {spec.part_names}."
        )


def elasticity_report(fit: Fit, spec: ModelSpec) -> ElasticityReport:
    """Elasticity report of a log-response or log-link fit.

    Raises:
        NotLogScaleError: If the fit's response is on the identity scale.
        InconsistentDError: If `spec` names other parts than the fit.
    """
    estimates = as_estimates(fit)
    meta = estimates.design_meta
    _check_spec(meta, spec)
    combiner = _Combiner(
        estimates=estimates,
        scale=elasticity_scale(meta),
        threshold=settings.support_threshold,
    )
    coefficient = dict(
        zip(meta.column_roles, estimates.coefficients.tolist(), strict=True)
    )
    has_total = meta.has(RoleKind.TOTAL)
    has_moderator = meta.has(RoleKind.MODERATOR)
    has_total_interaction = meta.has(RoleKind.TOTAL_INTERACTION)
    total_roles: tuple[RoleKind, ...] = (RoleKind.TOTAL,) if has_total else ()
    total_interaction_roles: tuple[RoleKind, ...] = (
        (RoleKind.TOTAL_INTERACTION,) if has_total_interaction else ()
    )

    parts = []
    for j, name in enumerate(meta.part_names):
        comp = ColumnRole(RoleKind.COMP, j)
        interaction = ColumnRole(RoleKind.INTERACTION, j)
        main = combiner.weights(comp, *total_roles)
        entry = PartElasticity(
            part=name,
            beta=combiner.scale * coefficient[comp],
            beta_total=combiner.scale
            * coefficient.get(ColumnRole(RoleKind.TOTAL), 0.0),
            elasticity=combiner.elasticity(main),
        )
        if has_moderator:
            entry = entry.model_copy(
                update={
                    "beta_interaction": combiner.scale * coefficient[interaction],
                    "beta_total_interaction": combiner.scale
                    * coefficient.get(ColumnRole(RoleKind.TOTAL_INTERACTION), 0.0),
                    "moderated_elasticity": combiner.elasticity(
                        main + combiner.weights(interaction, *total_interaction_roles)
                    ),
                    "moderated_compositional": combiner.effect(
                        combiner.weights(comp, interaction)
                    ),
                }
            )
        parts.append(entry)

    report = ElasticityReport(
        response_log_base=float(meta.response_log_base or math.e),
        part_log_base=meta.spec.log_base,
        scale=combiner.scale,
        support_threshold=settings.support_threshold,
        parts=tuple(parts),
    )
    updates: dict[str, Effect | float] = {}
    if has_total:
        total = combiner.weights(RoleKind.TOTAL)
        updates["total"] = combiner.effect(total, scale=combiner.scale * meta.spec.D)
        if has_total_interaction:
            updates["moderated_total"] = combiner.effect(
                total + combiner.weights(RoleKind.TOTAL_INTERACTION),
                scale=combiner.scale * meta.spec.D,
            )
    if has_moderator:
        moderator = combiner.effect(combiner.weights(RoleKind.MODERATOR), scale=1.0)
        updates["moderator"] = moderator
        updates["moderator_factor"] = report.response_log_base**moderator.value
    logger.debug("Built elasticity report.", extra={"parts": meta.part_names})
    return report.model_copy(update=updates)


def moderated_coefficients(fit: Fit, z_value: float) -> FloatArray:
    """Coefficients at moderator value `z_value` (on the design scale).

    Returns:
        `beta_j + z * beta_j_interaction` for every part, followed by
        `beta_t + z * beta_t_interaction` (0 without a total).

    Raises:
        NoModeratorError: If the fit has no moderator.
    """
    estimates = as_estimates(fit)
    meta = estimates.design_meta
    if not meta.has(RoleKind.MODERATOR):
        raise NoModeratorError("The fit has no moderator.")
    b = estimates.coefficients
    comp = b[list(meta.indices(RoleKind.COMP))]
    interaction = b[list(meta.indices(RoleKind.INTERACTION))]
    total = 0.0
    if meta.has(RoleKind.TOTAL):
        total = float(b[meta.index_of(RoleKind.TOTAL)])
        if meta.has(RoleKind.TOTAL_INTERACTION):
            total += z_value * float(b[meta.index_of(RoleKind.TOTAL_INTERACTION)])
    return np.append(comp + z_value * interaction, total)


@final
@dataclass(frozen=True, slots=True)
class DoublingEffect:
    """Effect of doubling one part with the other parts held fixed.

    Attributes:
        effect: Exponent of 2 in the response factor for log responses, or
            the level change for identity responses.
        factor: Multiplicative response factor, None for identity
            responses.
    """

    effect: float
    factor: float | None


def doubling_effect(
    fit: Fit,
    spec: ModelSpec,
    part_index: int,
    *,
    z_value: float = 0.0,
) -> DoublingEffect:
    """Response change when part `part_index` doubles.

    Doubling raises the part's log2 and the log2 total by one, so the
    linear predictor moves by `beta_j + beta_t`, plus the interaction
    terms at `z_value` when the fit has a moderator.

    Raises:
        NotBase2Error: If the parts are not on a log2 scale.
        RefIndexOutOfRangeError: If `part_index` is not a part position.
    """
    if spec.log_base != 2:  # noqa: PLR2004
        raise NotBase2Error(f"Doubling statements need base 2, got {spec.log_base}.")
    estimates = as_estimates(fit)
    meta = estimates.design_meta
    _check_spec(meta, spec)
    if not 0 <= part_index < spec.D:
        raise RefIndexOutOfRangeError(
            f"Part index {part_index} is outside [0, {spec.D})."
        )
    if meta.has(RoleKind.MODERATOR):
        coefficients = moderated_coefficients(estimates, z_value)
        change = float(coefficients[part_index] + coefficients[-1])
    else:
        b = estimates.coefficients
        change = float(b[meta.index_of(ColumnRole(RoleKind.COMP, part_index))])
        if meta.has(RoleKind.TOTAL):
            change += float(b[meta.index_of(RoleKind.TOTAL)])
    if meta.response_log_base is None:
        return DoublingEffect(effect=change, factor=None)
    effect = change * elasticity_scale(meta)
    return DoublingEffect(effect=effect, factor=2.0**effect)


def predict(fit: Fit, data: Dataset) -> FloatArray:
    """Predicted responses for new data on the original response scale.

    Log-response fits are back-transformed by exponentiation in their
    base; count fits return the mean `(1 - pi) * exp(eta)`.
    """
    estimates = as_estimates(fit)
    meta = estimates.design_meta
    X = transform_design(data, meta)
    eta = linear_predictor(X, estimates.coefficients)
    if meta.response_log_base is None:
        return eta
    mean = np.power(meta.response_log_base, eta)
    if isinstance(fit, GlmFit):
        mean = (1 - fit.params.pi) * mean
    return np.asarray(mean)

