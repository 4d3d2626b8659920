"""Command-line entry point: `fit`, `synth`, `report` and `check`."""

import argparse
import logging
import sys
from collections.abc import Callable
from collections.abc import Sequence
from pathlib import Path
from typing import Final

import numpy as np
import pandas as pd
from pydantic import ValidationError

from logcontrast.compute.bayes_fit import fit_bayes_hard
from logcontrast.compute.bayes_fit import fit_bayes_soft
from logcontrast.compute.compositions import FloatArray
from logcontrast.compute.design import Dataset
from logcontrast.compute.design import DesignMatrix
from logcontrast.compute.design import apply_lag
from logcontrast.compute.design import build_design
from logcontrast.compute.design import response_vector
from logcontrast.compute.enums import Backend
from logcontrast.compute.enums import BlockName
from logcontrast.compute.freq_fit import CoefficientEstimates
from logcontrast.compute.freq_fit import FreqFit
from logcontrast.compute.freq_fit import f_test_block
from logcontrast.compute.freq_fit import fit_alr_ols
from logcontrast.compute.freq_fit import fit_constrained_ols
from logcontrast.compute.glm_zinb import fit_zinb
from logcontrast.compute.interpret import elasticity_report
from logcontrast.config.logger import setup_logging
from logcontrast.config.settings import settings
from logcontrast.exceptions import CheckFailedError
from logcontrast.exceptions import LogContrastCompositionError
from logcontrast.exceptions import LogContrastDataError
from logcontrast.exceptions import LogContrastDesignError
from logcontrast.exceptions import LogContrastError
from logcontrast.exceptions import LogContrastFitError
from logcontrast.exceptions import LogContrastInterpretError
from logcontrast.exceptions import MissingColumnError
from logcontrast.exceptions import NonPositivePartError
from logcontrast.exceptions import ParseError
from logcontrast.io import report
from logcontrast.io.data import load_csv
from logcontrast.io.data import write_csv
from logcontrast.io.oracles import cross_check
from logcontrast.io.schemas import RunConfig
from logcontrast.io.schemas import SynthSpec
from logcontrast.io.synth import synth_generate

logger = logging.getLogger(__name__)

type Diagnostics = dict[str, float | str]

EXIT_OK: Final = 0
EXIT_UNEXPECTED: Final = 1
# Looked up along the exception's MRO, so the most specific class wins.
EXIT_CODES: Final[dict[type[Exception], int]] = {
    ValidationError: 2,
    OSError: 3,
    MissingColumnError: 4,
    ParseError: 5,
    pd.errors.ParserError: 5,
    pd.errors.EmptyDataError: 5,
    NonPositivePartError: 6,
    LogContrastCompositionError: 7,
    LogContrastFitError: 8,
    LogContrastInterpretError: 9,
    CheckFailedError: 10,
    LogContrastDesignError: 11,
    LogContrastDataError: 12,
    LogContrastError: EXIT_UNEXPECTED,
}
HANDLED: Final = tuple(EXIT_CODES)

SYNTHETIC_CSV: Final = "synthetic.csv"
TRUTH_JSON: Final = "truth.json"


def exit_code(error: Exception) -> int:
    """Process exit code for an error raised by a command."""
    for cls in type(error).__mro__:
        if cls in EXIT_CODES:
            return EXIT_CODES[cls]
    return EXIT_UNEXPECTED


def _guarded(command: Callable[[], int]) -> int:
    try:
        return command()
    except HANDLED as error:
        code = exit_code(error)
        logger.error(
            "Command failed.",
            extra={"error": type(error).__name__, "exit_code": code},
        )
        sys.stderr.write(f"error: {error}\n")
        return code


def _freq_diagnostics(fit: FreqFit, X: DesignMatrix, y: FloatArray) -> Diagnostics:
    diagnostics: Diagnostics = {
        "sigma2_hat": fit.sigma2_hat,
        "df_resid": fit.df_resid,
        "rss": fit.rss,
    }
    blocks = [BlockName.COMP]
    if fit.design_meta.spec.has_moderator:
        blocks.append(BlockName.ALL_INTERACTIONS)
    for block in blocks:
        test = f_test_block(fit, y, X, block)
        diagnostics[f"f_{block}_statistic"] = test.statistic
        diagnostics[f"f_{block}_p_value"] = test.p_value
    return diagnostics


def fit_backend(
    config: RunConfig, data: Dataset
) -> tuple[CoefficientEstimates, Diagnostics]:
    """Fit the configured backend to an already lagged dataset."""
    spec = config.model_spec()
    if config.backend is Backend.ZINB:
        glm = fit_zinb(
            data,
            spec,
            config.glm.constraint,
            config.seed,
            family=config.glm.family,
            reference=config.glm.reference,
            prior_precision=config.glm.prior_precision,
            restarts=config.glm.restarts,
        )
        return glm.estimates(), {
            "family": str(glm.family),
            "loglik": glm.loglik,
            "aic": glm.aic,
            "theta": glm.params.theta,
            "pi": glm.params.pi,
            "restart": glm.restart,
        }

    X = build_design(data, spec)
    y = response_vector(data, spec)
    if config.backend is Backend.FREQ:
        if config.freq.alr_reference is None:
            fit = fit_constrained_ols(X, y)
        else:
            fit = fit_alr_ols(data, spec, config.freq.alr_reference)
        return fit.estimates(), _freq_diagnostics(fit, X, y)

    if config.backend is Backend.BAYES_HARD:
        post = fit_bayes_hard(X, y, config.prior_for_backend())
    else:
        post = fit_bayes_soft(X, y, config.prior_for_backend())
    diagnostics: Diagnostics = {"mode": str(post.mode)}
    if post.rhat is not None:
        diagnostics["max_rhat"] = float(np.max(post.rhat))
    return post.estimates(), diagnostics


def _execute(config: RunConfig) -> int:
    data = apply_lag(load_csv(config.input, config.columns), config.lag)
    estimates, diagnostics = fit_backend(config, data)

    out_dir = config.output.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_coefficients_csv(estimates, out_dir / report.COEFFICIENTS_CSV)
    report.write_text(
        report.coefficient_table(estimates), out_dir / report.COEFFICIENTS_TXT
    )
    record = report.FitRecord.from_estimates(estimates, config.backend, diagnostics)
    report.write_json(record, out_dir / report.FIT_JSON)
    outputs = [report.COEFFICIENTS_CSV, report.COEFFICIENTS_TXT, report.FIT_JSON]
    if estimates.design_meta.response_log_base is not None:
        elasticities = elasticity_report(estimates, config.model_spec())
        outputs.extend(report.write_elasticity(elasticities, out_dir))
    else:
        logger.info("Identity-scale response; skipping the elasticity report.")
    outputs.append(report.MANIFEST_JSON)

    manifest = report.Manifest(
        config=config,
        config_sha256=report.config_digest(config),
        seed=config.seed,
        backend=config.backend,
        versions=report.package_versions(),
        settings=settings,
        rows=data.n,
        dropped_rows=data.dropped_rows,
        outputs=tuple(outputs),
        optimizer=(
            report.OptimizerSettings(restarts=config.glm.restarts)
            if config.backend is Backend.ZINB
            else None
        ),
    )
    report.write_json(manifest, out_dir / report.MANIFEST_JSON)
    logger.info(
        "Finished fit run.",
        extra={"backend": str(config.backend), "out_dir": str(out_dir)},
    )
    return EXIT_OK


def run(config: RunConfig) -> int:
    """Load, lag, fit and write every output of a `fit` run.

    Returns:
        0 on success, otherwise the exit code of the error that stopped
        the run.
    """
    return _guarded(lambda: _execute(config))


def _overrides(args: argparse.Namespace) -> dict[str, object]:
    updates: dict[str, object] = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if getattr(args, "backend", None) is not None:
        updates["backend"] = Backend(args.backend)
    return updates


def _fit_command(args: argparse.Namespace) -> int:
    config = RunConfig.model_validate_json(args.config.read_text(encoding="utf-8"))
    updates = _overrides(args)
    if args.out_dir is not None:
        updates["output"] = config.output.model_copy(update={"out_dir": args.out_dir})
    if updates:
        # Re-validate so overrides meet the same checks as the file.
        config = RunConfig.model_validate(config.model_dump() | updates)
    code = _execute(config)
    sys.stdout.write(
        (config.output.out_dir / report.COEFFICIENTS_TXT).read_text(encoding="utf-8")
    )
    return code


def _synth_command(args: argparse.Namespace) -> int:
    spec = SynthSpec.model_validate_json(args.config.read_text(encoding="utf-8"))
    if args.seed is not None:
        spec = SynthSpec.model_validate(spec.model_dump() | {"seed": args.seed})
    data, truth = synth_generate(spec)
    out_dir: Path = args.out_dir or Path("out")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(data, out_dir / SYNTHETIC_CSV)
    report.write_json(truth, out_dir / TRUTH_JSON)
    sys.stdout.write(f"Wrote {data.n} rows to {out_dir / SYNTHETIC_CSV}\n")
    return EXIT_OK


def _report_command(args: argparse.Namespace) -> int:
    out_dir: Path = args.out_dir or Path("out")
    record = report.read_fit_record(out_dir / report.FIT_JSON)
    elasticities = elasticity_report(record.to_estimates(), record.spec)
    report.write_elasticity(elasticities, out_dir)
    sys.stdout.write(report.render_elasticity(elasticities))
    return EXIT_OK


def _check_command(args: argparse.Namespace) -> int:
    summary = cross_check(args.seed or 0, instances=args.instances)
    sys.stdout.write(
        f"{summary.instances} instances, largest discrepancy "
        f"{summary.max_discrepancy:.3g}\n"
    )
    if not summary.passed:
        raise CheckFailedError(
            f"Solvers disagree on {len(summary.failures)} of "
            f"{summary.instances} instances."
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="logcontrast",
        description="Compositional regression with total and moderation effects.",
    )
    verbs = parser.add_subparsers(dest="verb", required=True)

    fit = verbs.add_parser("fit", help="Fit a model described by a JSON config.")
    fit.add_argument("--config", type=Path, required=True)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--out-dir", type=Path)
    fit.add_argument("--backend", choices=[str(b) for b in Backend])
    fit.set_defaults(command=_fit_command)

    synth = verbs.add_parser("synth", help="Generate a synthetic dataset.")
    synth.add_argument("--config", type=Path, required=True)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--out-dir", type=Path)
    synth.set_defaults(command=_synth_command)

    rerender = verbs.add_parser(
        "report", help="Re-render the elasticity report from fit.json."
    )
    rerender.add_argument("--out-dir", type=Path)
    rerender.set_defaults(command=_report_command)

    check = verbs.add_parser(
        "check", help="Cross-check the constrained solvers against the oracle."
    )
    check.add_argument("--seed", type=int)
    check.add_argument("--instances", type=int, default=100)
    check.set_defaults(command=_check_command)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Parse `argv` and run the chosen verb, returning the exit code."""
    args = build_parser().parse_args(argv)
    command: Callable[[argparse.Namespace], int] = args.command
    return _guarded(lambda: command(args))


def entrypoint() -> None:
    setup_logging()
    sys.exit(main())
