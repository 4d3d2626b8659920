"""JSON configuration schemas for runs and synthetic data."""

from pathlib import Path
from typing import Self

from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field
from pydantic import field_validator
from pydantic import model_validator

from logcontrast.compute.bayes_fit import PriorSpec
from logcontrast.compute.compositions import MIN_PARTS
from logcontrast.compute.design import ModelSpec
from logcontrast.compute.enums import Backend
from logcontrast.compute.enums import ConstraintMode
from logcontrast.compute.enums import CountFamily
from logcontrast.compute.enums import ModeratorKind
from logcontrast.compute.enums import OffsetMode
from logcontrast.compute.enums import ResponseLaw
from logcontrast.compute.enums import ResponseTransform


class ColumnMapping(BaseModel):
    """CSV column names for each role."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    parts: tuple[str, ...] = Field(
        min_length=MIN_PARTS,
        description="Columns holding the composition parts, in model order.",
        examples=[("PM10", "NO2", "O3", "CO", "SO2")],
    )
    response: str = Field(examples=["deaths"])
    moderator: str | None = Field(default=None, examples=["extreme_temperature"])
    offset: str | None = Field(default=None, examples=["population"])
    group: str | None = Field(default=None, examples=["area"])
    time: str | None = Field(
        default=None,
        description="Integer or ISO date time key.",
        examples=["date"],
    )

    @field_validator("parts")
    @classmethod
    def _distinct_parts(cls, parts: tuple[str, ...]) -> tuple[str, ...]:
        if len(set(parts)) != len(parts):
            msg = "Part columns must be distinct"
            raise ValueError(msg)
        return parts

    @model_validator(mode="after")
    def _distinct_roles(self) -> Self:
        columns = self.columns()
        if len(set(columns)) != len(columns):
            msg = "Each column may be mapped to one role only"
            raise ValueError(msg)
        return self

    def columns(self) -> tuple[str, ...]:
        """Every mapped column, parts first."""
        optional = (self.moderator, self.offset, self.group, self.time)
        return (
            *self.parts,
            self.response,
            *(column for column in optional if column is not None),
        )


class ModelOptions(BaseModel):
    """Model family options; part names and offset come from the mapping."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    log_base: float = Field(default=2.0, gt=1)
    include_total: bool = False
    moderator: ModeratorKind = ModeratorKind.NONE
    center_covariates: bool = True
    response_transform: ResponseTransform = ResponseTransform.IDENTITY
    offset_mode: OffsetMode = OffsetMode.FIXED


class FreqOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    alr_reference: int | None = Field(
        default=None,
        ge=0,
        description="Fit by alr least squares with this reference part instead of KKT.",
    )


class GlmOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    family: CountFamily = CountFamily.ZINB
    constraint: ConstraintMode = ConstraintMode.SOFT
    reference: int | None = Field(
        default=None,
        ge=0,
        description="alr reference part for hard-mode coordinates.",
    )
    prior_precision: float = Field(default=0.0, ge=0)
    restarts: int = Field(default=5, ge=1)


class OutputOptions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    out_dir: Path = Path("out")


class RunConfig(BaseModel):
    """Everything a `fit` run needs."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    input: Path = Field(description="UTF-8 CSV file with a header row.")
    columns: ColumnMapping
    model: ModelOptions = ModelOptions()
    backend: Backend = Backend.FREQ
    freq: FreqOptions = FreqOptions()
    prior: PriorSpec = PriorSpec()
    glm: GlmOptions = GlmOptions()
    lag: int = Field(default=0, ge=0, description="Covariate lag in time-key units.")
    seed: int = Field(default=0, ge=0)
    output: OutputOptions = OutputOptions()

    @model_validator(mode="after")
    def _backend_requirements(self) -> Self:
        moderated = self.model.moderator is not ModeratorKind.NONE
        if moderated and self.columns.moderator is None:
            msg = "A moderator kind needs columns.moderator"
            raise ValueError(msg)
        if self.lag > 0 and (self.columns.group is None or self.columns.time is None):
            msg = "A lag needs columns.group and columns.time"
            raise ValueError(msg)
        if self.backend is Backend.ZINB:
            if self.model.response_transform is not ResponseTransform.IDENTITY:
                msg = (
                    "The zinb backend models raw counts; "
                    "use response_transform=identity"
                )
                raise ValueError(msg)
        elif (
            self.columns.offset is not None
            and self.model.offset_mode is OffsetMode.FIXED
            and self.model.response_transform is ResponseTransform.IDENTITY
        ):
            msg = "A fixed offset needs a log response or the zinb backend"
            raise ValueError(msg)
        return self

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            part_names=self.columns.parts,
            log_base=self.model.log_base,
            include_total=self.model.include_total,
            moderator=self.model.moderator,
            center_covariates=self.model.center_covariates,
            response_transform=self.model.response_transform,
            offset_column=self.columns.offset,
            offset_mode=self.model.offset_mode,
        )

    def prior_for_backend(self) -> PriorSpec:
        """The prior with the backend's constraint mode and the run seed."""
        mode = (
            ConstraintMode.HARD
            if self.backend is Backend.BAYES_HARD
            else ConstraintMode.SOFT
        )
        return self.prior.model_copy(
            update={"constraint_mode": mode, "seed": self.seed}
        )


class SynthSpec(BaseModel):
    """Generating parameters of a synthetic dataset.

    Coefficients are on the design scale of the model built from
    `model_spec()`: with centring, the intercept is the linear predictor at
    the covariate means.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    n: int = Field(default=500, ge=1)
    part_names: tuple[str, ...] = Field(
        default=("PM10", "NO2", "O3", "CO", "SO2"),
        min_length=MIN_PARTS,
    )
    log_base: float = Field(default=2.0, gt=1)
    law: ResponseLaw = ResponseLaw.LOG
    intercept: float = 0.0
    beta: tuple[float, ...] = Field(
        description="Compositional coefficients; recentred if they do not sum to 0.",
        examples=[(-0.002, 0.010, -0.003, -0.001, -0.004)],
    )
    include_total: bool = True
    beta_total: float = 0.0
    moderator: ModeratorKind = ModeratorKind.BINARY
    moderator_rate: float = Field(
        default=0.16,
        gt=0,
        lt=1,
        description="Probability of a binary moderator being 1.",
    )
    beta_moderator: float = 0.0
    beta_interaction: tuple[float, ...] | None = Field(
        default=None,
        description="Interaction coefficients; zeros when omitted.",
    )
    beta_total_interaction: float = 0.0
    sigma2: float = Field(default=0.01, ge=0)
    theta: float = Field(
        default=1.5,
        gt=0,
        description="Negative binomial dispersion; +inf gives Poisson counts.",
    )
    pi: float = Field(default=0.0, ge=0, lt=1)
    part_log_mean: float = Field(
        default=3.0, description="Mean of the natural log of parts."
    )
    part_log_sd: float = Field(default=0.5, gt=0)
    offset_log_mean: float | None = Field(
        default=None,
        description=(
            "Mean of the natural log of a population offset; None for no offset."
        ),
    )
    offset_log_sd: float = Field(default=0.3, ge=0)
    n_groups: int = Field(default=1, ge=1)
    lag: int = Field(
        default=0,
        ge=0,
        description="Responses follow the covariates this many time steps earlier.",
    )
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _consistent(self) -> Self:
        D = len(self.part_names)
        if len(self.beta) != D:
            msg = f"beta needs {D} entries"
            raise ValueError(msg)
        if self.beta_interaction is not None and len(self.beta_interaction) != D:
            msg = f"beta_interaction needs {D} entries"
            raise ValueError(msg)
        if self.offset_log_mean is not None and self.law is ResponseLaw.IDENTITY:
            msg = "An offset needs the log or zinb law"
            raise ValueError(msg)
        return self

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            part_names=self.part_names,
            log_base=self.log_base,
            include_total=self.include_total,
            moderator=self.moderator,
            response_transform=(
                ResponseTransform.LOG
                if self.law is ResponseLaw.LOG
                else ResponseTransform.IDENTITY
            ),
            offset_column="offset" if self.offset_log_mean is not None else None,
        )
