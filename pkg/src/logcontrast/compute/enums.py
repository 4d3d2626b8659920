import enum
from typing import final


@final
class RoleKind(enum.StrEnum):
    """Role of a design-matrix column."""

    INTERCEPT = "intercept"
    COMP = "comp"
    MODERATOR = "moderator"
    INTERACTION = "interaction"
    TOTAL = "total"
    TOTAL_INTERACTION = "total_interaction"
    LOG_OFFSET = "log_offset"


@final
class ModeratorKind(enum.StrEnum):
    NONE = "none"
    NUMERIC = "numeric"
    BINARY = "binary"


@final
class ResponseTransform(enum.StrEnum):
    IDENTITY = "identity"
    LOG = "log"


@final
class OffsetMode(enum.StrEnum):
    """How an offset column enters the linear predictor."""

    FIXED = "fixed"
    COVARIATE = "covariate"


@final
class ConstraintMode(enum.StrEnum):
    SOFT = "soft"
    HARD = "hard"
    NONE = "none"


@final
class PosteriorMode(enum.StrEnum):
    ANALYTIC = "analytic"
    SAMPLED = "sampled"


@final
class HardSampling(enum.StrEnum):
    """How `fit_bayes_hard` produces draws, if at all."""

    NONE = "none"
    EXACT = "exact"
    GIBBS = "gibbs"


@final
class BlockName(enum.StrEnum):
    """Column groups removable by the joint F test."""

    COMP = "comp"
    INTERACTION = "interaction"
    ALL_INTERACTIONS = "all_interactions"


@final
class CountFamily(enum.StrEnum):
    POISSON = "poisson"
    NEGBIN = "negbin"
    ZIP = "zip"
    ZINB = "zinb"

    @property
    def has_dispersion(self) -> bool:
        return self in {CountFamily.NEGBIN, CountFamily.ZINB}

    @property
    def is_zero_inflated(self) -> bool:
        return self in {CountFamily.ZIP, CountFamily.ZINB}


@final
class Backend(enum.StrEnum):
    FREQ = "freq"
    BAYES_SOFT = "bayes_soft"
    BAYES_HARD = "bayes_hard"
    ZINB = "zinb"


@final
class ResponseLaw(enum.StrEnum):
    """Generative law of synthetic responses."""

    IDENTITY = "identity"
    LOG = "log"
    ZINB = "zinb"
