"""Independent oracles for checking the constrained solvers.

These are test and `check` tooling: they are slow and only as accurate as
a generic optimiser allows.
"""

import dataclasses
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Final
from typing import final

import numpy as np
import numpy.typing as npt
import scipy.optimize

from logcontrast.compute.compositions import FloatArray
from logcontrast.compute.design import Dataset
from logcontrast.compute.design import ModelSpec
from logcontrast.compute.design import build_design
from logcontrast.compute.design import response_vector
from logcontrast.compute.enums import ModeratorKind
from logcontrast.compute.freq_fit import fit_alr_ols
from logcontrast.compute.freq_fit import fit_constrained_ols
from logcontrast.exceptions import NonConvergenceError

logger = logging.getLogger(__name__)

PENALTY: Final = 1e10
CONTINUATION: Final = (1e2, 1e4, 1e6, 1e8, PENALTY)
AGREEMENT: Final = 1e-6
ORACLE_AGREEMENT: Final = 1e-5
MAX_ITERATIONS: Final = 20_000
CHECK_PARTS: Final = (3, 5, 8)
MODERATOR_RATE: Final = 0.3


@final
@dataclass(frozen=True, slots=True)
class _Penalised:
    """`rss + weight * sum over blocks of (block sum)**2`, scaled by `1/n`."""

    X: FloatArray
    y: FloatArray
    C: FloatArray
    weight: float

    def value_and_grad(self, beta: FloatArray) -> tuple[float, FloatArray]:
        residual = self.y - self.X @ beta
        sums = self.C @ beta
        n = self.X.shape[0]
        value = (float(residual @ residual) + self.weight * float(sums @ sums)) / n
        grad = (-2 * self.X.T @ residual + 2 * self.weight * self.C.T @ sums) / n
        return value, grad


def oracle_constrained_ls(
    X: npt.ArrayLike,
    y: npt.ArrayLike,
    blocks: Sequence[Sequence[int]],
) -> FloatArray:
    """Least squares with zero-sum blocks by a quadratic penalty.

    Minimises `rss + 1e10 * sum_B (sum of beta over B)**2` with BFGS from
    the unconstrained least-squares start, raising the penalty weight
    through a continuation schedule. Only values and gradients are used,
    so agreement with the KKT solve is checked to `ORACLE_AGREEMENT`.

    Raises:
        NonConvergenceError: If the optimiser fails or returns non-finite
            values.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    C = np.zeros((len(blocks), X.shape[1]))
    for row, block in enumerate(blocks):
        C[row, list(block)] = 1.0
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    if not blocks:
        return beta

    for weight in CONTINUATION:
        problem = _Penalised(X=X, y=y, C=C, weight=weight)
        result = scipy.optimize.minimize(
            problem.value_and_grad,
            beta,
            jac=True,
            method="BFGS",
            options={"gtol": 1e-12, "maxiter": MAX_ITERATIONS},
        )
        beta = np.asarray(result.x)
    if not np.all(np.isfinite(beta)):
        raise NonConvergenceError("Penalty oracle returned non-finite coefficients.")
    # BFGS ends on precision loss at a penalty this stiff; status 1 is the
    # iteration limit.
    if result.status == 1:
        raise NonConvergenceError(f"Penalty oracle did not converge: {result.message}")
    return beta


@final
@dataclass(frozen=True, slots=True)
class CheckSummary:
    """Outcome of the solver cross-check.

    Attributes:
        instances: Number of random instances.
        max_discrepancy: Largest absolute coefficient difference seen.
        failures: Indices of instances above the agreement tolerance.
    """

    instances: int
    max_discrepancy: float
    failures: tuple[int, ...]

    @property
    def passed(self) -> bool:
        return not self.failures


def random_instance(
    rng: np.random.Generator, n: int, D: int
) -> tuple[Dataset, ModelSpec]:
    """A random log-contrast problem with a binary moderator and a total."""
    parts = np.exp(rng.normal(0.0, 1.0, size=(n, D)))
    moderator = (rng.random(n) < MODERATOR_RATE).astype(np.float64)
    spec = ModelSpec(
        part_names=tuple(f"x{j + 1}" for j in range(D)),
        include_total=True,
        moderator=ModeratorKind.BINARY,
    )
    beta = rng.normal(size=D)
    interaction = rng.normal(size=D)
    data = Dataset(
        parts=parts,
        response=np.zeros(n),
        part_names=spec.part_names,
        moderator=moderator,
    )
    X = build_design(data, spec)
    truth = rng.normal(size=X.p)
    comp = list(X.meta.constraint_blocks[0])
    truth[comp] = beta - beta.mean()
    truth[list(X.meta.constraint_blocks[1])] = interaction - interaction.mean()
    response = X.values @ truth + rng.normal(0.0, 0.5, size=n)
    return dataclasses.replace(data, response=response), spec


def cross_check(seed: int, instances: int = 100, n: int = 200) -> CheckSummary:
    """Compare the KKT, alr and penalty solvers on random instances.

    Every alr reference part is tried and must agree to `AGREEMENT`; the
    penalty oracle must agree to `ORACLE_AGREEMENT`. The instance sizes
    cycle through 3, 5 and 8 parts.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    failures = []
    for instance in range(instances):
        D = CHECK_PARTS[instance % len(CHECK_PARTS)]
        data, spec = random_instance(rng, n, D)
        X = build_design(data, spec)
        y = response_vector(data, spec)
        reference = fit_constrained_ols(X, y).coefficients
        oracle = oracle_constrained_ls(X.values, y, X.constraint_blocks)
        oracle_gap = float(np.max(np.abs(oracle - reference)))
        alr_gap = max(
            float(np.max(np.abs(fit_alr_ols(data, spec, ref).coefficients - reference)))
            for ref in range(D)
        )
        discrepancy = max(oracle_gap, alr_gap)
        worst = max(worst, discrepancy)
        if (
            math.isnan(discrepancy)
            or oracle_gap > ORACLE_AGREEMENT
            or alr_gap > AGREEMENT
        ):
            failures.append(instance)
            logger.warning(
                "Solvers disagree.",
                extra={"instance": instance, "discrepancy": discrepancy},
            )
    logger.info(
        "Finished solver cross-check.",
        extra={"instances": instances, "max_discrepancy": worst},
    )
    return CheckSummary(
        instances=instances,
        max_discrepancy=worst,
        failures=tuple(failures),
    )
