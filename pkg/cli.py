import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Tuple

import click
from dotenv import load_dotenv

from constants import (
    EXIT_CAP,
    EXIT_IO,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_VALIDATION,
    LOG_FILE,
    LOG_FORMAT,
    LOG_LEVEL,
    RESULTS_DIR,
    TOOL_NAME,
    TOOL_VERSION,
)
from engine.Simulator import Scenario, compare_costs, run_scenario, write_cost_report, write_results
from errors import MismatchedScenarios, ScenarioError
from scenario.schema import (
    Diagnostic,
    ScenarioDocument,
    load_manifest,
    load_scenario,
    manifest_for,
    resolve_capacity,
    resolve_scenario,
    validate_document,
)
from solvability.search import (
    SolvabilityInstance,
    capacity_lower_bound,
    capacity_report_dict,
    linear_identity_check,
    write_report,
)
from utils import get_logger

load_dotenv()

if LOG_FILE:
    logging.basicConfig(filename=LOG_FILE, level=LOG_LEVEL, format=LOG_FORMAT)
logger = get_logger(__name__)

SCENARIO_SUFFIXES = (".yaml", ".yml")


def _echo_diagnostics(path: str, diagnostics: List[Diagnostic]) -> None:
    for diagnostic in diagnostics:
        click.echo(diagnostic.render(path), err=True)


def _load(path: str) -> ScenarioDocument:
    if path.endswith(".json"):
        return load_manifest(path)
    return load_scenario(path)


def _with_trials(doc: ScenarioDocument, trials: Optional[int]) -> ScenarioDocument:
    if trials is None:
        return doc
    rlnc = doc.model.rlnc
    if rlnc is None:
        raise ScenarioError(f"{doc.path}: --trials needs an rlnc section", [Diagnostic("no 'rlnc' section to override")])
    model = doc.model.model_copy(update={"rlnc": rlnc.model_copy(update={"trials": trials})})
    return ScenarioDocument(doc.path, model, doc.root)


def _output_dir(doc: ScenarioDocument, out: Optional[str]) -> str:
    if out:
        return out
    if doc.model.output:
        return doc.model.output
    return os.path.join(RESULTS_DIR, doc.model.name)


def prepare(path: str, seed: Optional[int] = None, trials: Optional[int] = None) -> Tuple[ScenarioDocument, Scenario]:
    """Load and resolve a scenario; every failure here is an input problem."""
    doc = _with_trials(_load(path), trials)
    return doc, resolve_scenario(doc, seed)


def _rejected(path: str, error: Exception) -> Tuple[int, List[str], List[str]]:
    if isinstance(error, OSError):
        return EXIT_IO, [], [f"{path}: {error}"]
    if isinstance(error, ScenarioError):
        return EXIT_VALIDATION, [], [str(error)] + [d.render(path) for d in error.diagnostics]
    return EXIT_VALIDATION, [], [f"{path}: {error}"]


def run_one(path: str, seed: Optional[int], out: Optional[str], trials: Optional[int]) -> Tuple[int, List[str], List[str]]:
    """
    Run a single scenario file and write its results.

    Input problems exit with 2 (3 when the file cannot be read), anything raised
    once the scenario is running exits with 4.

    Returns:
        Tuple[int, List[str], List[str]]: Exit code, stdout lines and stderr lines.
    """
    try:
        doc, scenario = prepare(path, seed, trials)
    except (OSError, ValueError) as e:
        return _rejected(path, e)

    try:
        result = run_scenario(scenario)
    except (ValueError, RuntimeError) as e:
        logger.error(f"Run of {path} failed: {e}")
        return EXIT_RUNTIME, [], [f"{path}: {e}"]

    out_dir = _output_dir(doc, out)
    try:
        write_results(result, out_dir, manifest_for(doc, scenario))
    except OSError as e:
        return EXIT_IO, [], [f"{path}: {e}"]
    return EXIT_OK, [f"{result.summary()} -> {out_dir}"], []


def _batch(directory: str) -> List[str]:
    return sorted(
        os.path.join(directory, name) for name in os.listdir(directory) if name.endswith(SCENARIO_SUFFIXES)
    )


@click.group()
@click.version_option(TOOL_VERSION, prog_name=TOOL_NAME)
@click.option("--quiet", is_flag=True, help="Only print errors.")
@click.pass_context
def main(ctx: click.Context, quiet: bool):
    """Simulate network function computation over NFC graphs."""
    ctx.ensure_object(dict)
    ctx.obj["quiet"] = quiet
    logging.disable(logging.INFO if quiet else logging.NOTSET)


@main.command()
@click.argument("path")
@click.pass_context
def validate(ctx: click.Context, path: str):
    """Check a scenario file against the schema and the graph invariants."""
    try:
        doc = load_scenario(path)
    except OSError as e:
        click.echo(f"Cannot read {path}: {e}", err=True)
        sys.exit(EXIT_IO)
    except ScenarioError as e:
        _echo_diagnostics(path, e.diagnostics)
        sys.exit(EXIT_VALIDATION)

    diagnostics = validate_document(doc)
    if diagnostics:
        _echo_diagnostics(path, diagnostics)
        sys.exit(EXIT_VALIDATION)
    if not ctx.obj["quiet"]:
        click.echo(f"{path}: valid")
    sys.exit(EXIT_OK)


@main.command()
@click.argument("path")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Directory for CSV tables and the manifest.")
@click.option("--trials", type=int, default=None, help="Override the rlnc recovery-experiment trial count.")
@click.option("--workers", type=int, default=None, help="Processes for a batch directory.")
@click.pass_context
def run(ctx: click.Context, path: str, seed: Optional[int], out: Optional[str], trials: Optional[int], workers: Optional[int]):
    """Run a scenario file, a run manifest (replay) or every scenario in a directory."""
    quiet = ctx.obj["quiet"]
    if os.path.isdir(path):
        files = _batch(path)
        if not files:
            click.echo(f"No scenario files in {path}", err=True)
            sys.exit(EXIT_IO)
        out_root = out or RESULTS_DIR
        jobs = [(f, seed, os.path.join(out_root, os.path.splitext(os.path.basename(f))[0]), trials) for f in files]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_one, *job) for job in jobs]
            outcomes = [future.result() for future in futures]
    else:
        outcomes = [run_one(path, seed, out, trials)]

    code = EXIT_OK
    for status, lines, errors in outcomes:
        code = max(code, status)
        if not quiet:
            for line in lines:
                click.echo(line)
        for line in errors:
            click.echo(line, err=True)
    sys.exit(code)


@main.command()
@click.argument("path")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Directory for the JSON verdict report.")
@click.pass_context
def capacity(ctx: click.Context, path: str, out: Optional[str]):
    """Min-cut check and exhaustive solvability sweep for the scenario's target function."""
    quiet = ctx.obj["quiet"]
    try:
        doc = load_scenario(path)
        request = resolve_capacity(doc)
    except OSError as e:
        click.echo(f"Cannot read {path}: {e}", err=True)
        sys.exit(EXIT_IO)
    except ScenarioError as e:
        _echo_diagnostics(path, e.diagnostics)
        sys.exit(EXIT_VALIDATION)

    check = linear_identity_check(request.graph, request.destination)
    try:
        report = capacity_lower_bound(
            request.graph, request.field_spec, request.target, request.sweep, request.linear, request.cap
        )
    except ValueError as e:
        click.echo(f"{path}: {e}", err=True)
        sys.exit(EXIT_VALIDATION)
    except RuntimeError as e:
        click.echo(f"{path}: {e}", err=True)
        sys.exit(EXIT_RUNTIME)

    if not quiet:
        click.echo(f"linear identity delivery: {check.message}")
        for verdict in report.points:
            click.echo(f"{request.target.name} K={verdict.K} L={verdict.L}: {verdict.message}")
        best = report.best
        if best is None:
            click.echo("no solvable point in the sweep")
        else:
            click.echo(f"capacity lower bound: {best.ratio} (K={best.K}, L={best.L})")

    first = request.sweep[0] if request.sweep else (1, 1)
    instance = SolvabilityInstance(request.graph, request.field_spec, request.target, K=first[0], L=first[1], linear=request.linear)
    if out:
        try:
            write_report(os.path.join(out, "capacity_report.json"), capacity_report_dict(instance, check, report))
        except OSError as e:
            click.echo(f"Cannot write report: {e}", err=True)
            sys.exit(EXIT_IO)

    if report.skipped:
        click.echo(f"{len(report.skipped)} sweep point(s) exceeded the search cap: {report.skipped}", err=True)
        sys.exit(EXIT_CAP)
    sys.exit(EXIT_OK)


@main.command()
@click.argument("nfc")
@click.argument("forwarding")
@click.option("--seed", type=int, default=None, help="Override the seed of both scenarios.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Directory for cost_breakdown.csv.")
@click.pass_context
def compare(ctx: click.Context, nfc: str, forwarding: str, seed: Optional[int], out: Optional[str]):
    """Communication cost of an NFC scenario against its raw-forwarding baseline."""
    scenarios = []
    for path in (nfc, forwarding):
        try:
            scenarios.append(prepare(path, seed)[1])
        except (OSError, ValueError) as e:
            code, _, errors = _rejected(path, e)
            for line in errors:
                click.echo(line, err=True)
            sys.exit(code)

    try:
        nfc_result, fwd_result = [run_scenario(s) for s in scenarios]
    except (ValueError, RuntimeError) as e:
        logger.error(f"Comparison run failed: {e}")
        click.echo(str(e), err=True)
        sys.exit(EXIT_RUNTIME)

    try:
        report = compare_costs(nfc_result, fwd_result)
    except MismatchedScenarios as e:
        click.echo(str(e), err=True)
        sys.exit(EXIT_VALIDATION)

    if out:
        try:
            write_cost_report(report, out)
        except OSError as e:
            click.echo(f"I/O error: {e}", err=True)
            sys.exit(EXIT_IO)

    if not ctx.obj["quiet"]:
        click.echo(
            f"forwarding={report.forwarding_total} nfc={report.nfc_total} ratio={report.ratio:.6g}"
        )
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
