"""
lyapguard command line: simulate | monitor | emit-fof | check.

Exit codes
    0   success (simulate, emit-fof), Stable (monitor), Theorem (check)
    2   configuration or argument error
    3   simulation aborted (singularity or domain exit); the partial log is still written
    4   malformed or out-of-order trajectory row (monitor)
    5   prover unavailable (check)
    10  worst verdict Warning (monitor)
    20  worst verdict Violation (monitor)
    21  CounterSatisfiable (check)
    22  GaveUp or Timeout (check)
    23  prover reported Error or no status (check)
"""

import json
import math
import os
import shutil
import sys
from contextlib import contextmanager
from typing import IO, Iterator, List, Optional, Tuple

import typer
from pydantic import ValidationError

from lyapguard import logging
from lyapguard.config import RunConfig, load_config
from lyapguard.tools import (
    LyapguardError,
    MalformedSampleError,
    OutOfOrderSampleError,
    ProverUnavailableError,
    SimulationAborted,
)
from lyapguard.tools.fof import MetiTarskiProver, SzsStatus, render
from lyapguard.tools.fof.utils import stability_conjecture
from lyapguard.tools.lyapunov import Branch, certificate_summary
from lyapguard.tools.monitor import StabilityMonitor
from lyapguard.tools.simulator import LiveSimulationSource
from lyapguard.tools.trajectory import CsvSampleSource

EXIT_CONFIG = 2
EXIT_ABORTED = 3
EXIT_MALFORMED = 4
EXIT_PROVER_UNAVAILABLE = 5

CHECK_EXIT_CODES = {
    SzsStatus.THEOREM: 0,
    SzsStatus.COUNTER_SATISFIABLE: 21,
    SzsStatus.GAVE_UP: 22,
    SzsStatus.TIMEOUT: 22,
    SzsStatus.ERROR: 23,
}

PROVER_ENV = "LYAPGUARD_PROVER"
PROVER_DEFAULT_NAME = "metit"
PROVER_HINT = (
    f"install MetiTarski and put '{PROVER_DEFAULT_NAME}' on PATH, pass --prover PATH, "
    f"or set {PROVER_ENV}=PATH"
)

app = typer.Typer(
    name="lyapguard",
    help="Robust quadcopter attitude control: simulation, stability monitoring and conjecture emission.",
    no_args_is_help=True,
    add_completion=False,
)

ConfigOption = typer.Option(None, "--config", "-c", help="Run configuration (JSON). Default: shipped default.")
EValuesOption = typer.Option(..., "--e-values", help="Error state E_1..E_6.")
BranchOption = typer.Option(
    "15",
    "--branch",
    help="Robust-term form: 15 (‖BᵀQE‖ >= sigma) or 16 (boundary layer); also outside | boundary-layer.",
)
NameOption = typer.Option(None, "--name", help="Conjecture name. Default: Stability_Eq15 or Stability_Eq16.")


def _fail(code: int, message: str) -> typer.Exit:
    typer.echo(f"error: {message}", err=True)
    return typer.Exit(code)


def _load(path: Optional[str]) -> RunConfig:
    try:
        return load_config(path)
    except ValidationError as e:
        raise _fail(EXIT_CONFIG, f"invalid configuration: {e}")
    except OSError as e:
        raise _fail(EXIT_CONFIG, f"cannot read configuration: {e}")


@contextmanager
def _output(path: Optional[str]) -> Iterator[IO[str]]:
    """Text stream for a path; '-' or None means standard output."""
    if path is None or path == "-":
        yield sys.stdout
        return
    with open(path, "w", encoding="utf-8", newline="") as f:
        yield f


def _check_e_values(e_values: Tuple[float, ...]) -> List[float]:
    values = [float(e) for e in e_values]
    if len(values) != 6 or not all(math.isfinite(e) for e in values):
        raise _fail(EXIT_CONFIG, f"--e-values needs six finite numbers, got {values}")
    return values


@app.command()
def simulate(
    config: Optional[str] = ConfigOption,
    out: Optional[str] = typer.Option(None, "--out", "-o", help="Trajectory CSV ('-' for stdout)."),
):
    """Runs the configured scenario and writes the trajectory log plus a certificate sidecar."""
    cfg = _load(config)
    out = out or cfg.outputs.trajectory_csv or "-"
    try:
        cert = cfg.build_certificate()
        simulator = cfg.build_simulator(cert)
    except (LyapguardError, ValueError) as e:
        raise _fail(EXIT_CONFIG, str(e))

    code = 0
    try:
        log = simulator.run()
    except SimulationAborted as e:
        log = e.log
        typer.echo(f"error: {e}", err=True)
        code = EXIT_ABORTED

    with _output(out) as f:
        log.to_csv(f)
    if out != "-":
        with open(f"{out}.cert.json", "w", encoding="utf-8") as f:
            json.dump(certificate_summary(cert), f, indent=2)
            f.write("\n")
        typer.echo(f"wrote {len(log)} samples to {out}", err=True)
    raise typer.Exit(code)


@app.command()
def monitor(
    config: Optional[str] = ConfigOption,
    input_path: Optional[str] = typer.Option(None, "--input", "-i", help="Trajectory CSV ('-' for stdin)."),
    live: bool = typer.Option(False, "--live", help="Monitor an in-process simulation of the configured scenario."),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="Transition log, one JSON object per line ('-' for stdout)."),
):
    """Streams trajectory samples through the stability monitor."""
    if (input_path is None) == (not live):
        raise _fail(EXIT_CONFIG, "give exactly one of --input PATH|- and --live")
    cfg = _load(config)
    out = out or cfg.outputs.transitions or "-"
    try:
        cert = cfg.build_certificate()
        monitor_cfg = cfg.monitor_config(cert)
        if live:
            source = LiveSimulationSource(cfg.build_simulator(cert))
        elif input_path == "-":
            source = CsvSampleSource(sys.stdin)
        else:
            if not os.path.isfile(input_path):
                raise _fail(EXIT_CONFIG, f"input file not found: {input_path}")
            source = CsvSampleSource(input_path)
    except (LyapguardError, ValueError) as e:
        raise _fail(EXIT_CONFIG, str(e))

    with _output(out) as sink:
        runner = StabilityMonitor(monitor_cfg, sink)
        try:
            report = runner.run(source)
        except MalformedSampleError as e:
            raise _fail(EXIT_MALFORMED, f"malformed trajectory {e}")
        except OutOfOrderSampleError as e:
            raise _fail(EXIT_MALFORMED, str(e))
        except SimulationAborted as e:
            raise _fail(EXIT_ABORTED, str(e))
    typer.echo(
        f"{report.samples} samples, worst verdict {report.worst.value}, "
        f"{len(report.transitions)} transitions",
        err=True,
    )
    raise typer.Exit(report.exit_code)


def _conjecture(cfg: RunConfig, e_values, branch: str, name: Optional[str]):
    E = _check_e_values(e_values)
    try:
        form = Branch(branch)
    except ValueError:
        raise _fail(EXIT_CONFIG, f"unknown branch '{branch}'; expected 15, 16, outside or boundary-layer")
    try:
        cert = cfg.build_certificate()
        return stability_conjecture(
            cfg.bounds, cfg.vbound_template(), cert, cfg.plant, E, form, name
        )
    except (LyapguardError, ValueError) as e:
        raise _fail(EXIT_CONFIG, str(e))


@app.command("emit-fof")
def emit_fof(
    config: Optional[str] = ConfigOption,
    e_values: Tuple[float, float, float, float, float, float] = EValuesOption,
    branch: str = BranchOption,
    name: Optional[str] = NameOption,
    out: Optional[str] = typer.Option(None, "--out", "-o", help="TPTP file ('-' for stdout)."),
):
    """Writes the stability conjecture for one error state."""
    cfg = _load(config)
    conj = _conjecture(cfg, e_values, branch, name)
    with _output(out or cfg.outputs.tptp or "-") as f:
        f.write(render(conj))
    raise typer.Exit(0)


def _resolve_prover(option: Optional[str], cfg: RunConfig) -> str:
    candidate = option or os.getenv(PROVER_ENV) or cfg.prover.path or PROVER_DEFAULT_NAME
    resolved = shutil.which(candidate)
    if resolved is None:
        logging.error(f"Prover '{candidate}' not found")
        raise _fail(EXIT_PROVER_UNAVAILABLE, f"prover '{candidate}' not found; {PROVER_HINT}")
    return resolved


@app.command()
def check(
    config: Optional[str] = ConfigOption,
    e_values: Tuple[float, float, float, float, float, float] = EValuesOption,
    branch: str = BranchOption,
    name: Optional[str] = NameOption,
    prover: Optional[str] = typer.Option(None, "--prover", help=f"Prover executable (fallback: ${PROVER_ENV})."),
    timeout_s: Optional[float] = typer.Option(None, "--timeout-s", help="Prover wall-clock budget in seconds."),
):
    """Emits the conjecture, runs the prover on it and reports the SZS status."""
    cfg = _load(config)
    conj = _conjecture(cfg, e_values, branch, name)
    timeout = cfg.prover.timeout_s if timeout_s is None else timeout_s
    if not timeout > 0.0:
        raise _fail(EXIT_CONFIG, f"--timeout-s must be positive, got {timeout}")
    executable = _resolve_prover(prover, cfg)
    try:
        result = MetiTarskiProver(executable, cfg.prover.extra_args).prove(conj, timeout)
    except ProverUnavailableError as e:
        raise _fail(EXIT_PROVER_UNAVAILABLE, f"{e}; {PROVER_HINT}")
    typer.echo(f"SZS status {result.status.value} for {conj.name} ({result.wall_time:.3f}s)")
    raise typer.Exit(CHECK_EXIT_CODES[result.status])


if __name__ == "__main__":
    app()
