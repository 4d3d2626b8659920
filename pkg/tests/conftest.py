from pathlib import Path
from typing import Final

import pytest

from logcontrast.compute.design import Dataset
from logcontrast.compute.enums import ResponseLaw
from logcontrast.io.schemas import SynthSpec
from logcontrast.io.synth import SynthTruth
from logcontrast.io.synth import synth_generate

PART_NAMES: Final = ("PM10", "NO2", "O3", "CO", "SO2")
BETA: Final = (0.4, -0.1, -0.3, 0.2, -0.2)
BETA_INTERACTION: Final = (0.1, 0.0, -0.2, 0.15, -0.05)
GOLDEN_CSV: Final = Path(__file__).parent / "io" / "data" / "golden.csv"


def moderated_spec(**overrides: object) -> SynthSpec:
    """A log-response model with a total and a binary moderator."""
    fields: dict[str, object] = {
        "n": 300,
        "beta": BETA,
        "beta_total": 0.3,
        "beta_moderator": 0.2,
        "beta_interaction": BETA_INTERACTION,
        "beta_total_interaction": -0.1,
        "intercept": 1.0,
        "seed": 11,
    }
    return SynthSpec.model_validate(fields | overrides)


@pytest.fixture(name="log_synth")
def _log_synth() -> tuple[Dataset, SynthTruth]:
    return synth_generate(moderated_spec())


@pytest.fixture(name="exact_synth")
def _exact_synth() -> tuple[Dataset, SynthTruth]:
    # Noise-free responses lie exactly on the model surface.
    return synth_generate(moderated_spec(law=ResponseLaw.IDENTITY, sigma2=0.0))


@pytest.fixture(name="golden_csv")
def _golden_csv() -> Path:
    return GOLDEN_CSV
