"""Command-line entry point.

    osc-pic run --epsilon 0.01 --scheme improved --field cubic --t-end 10
    osc-pic compare --a reference --b improved --epsilon 0.01 --particles 1000
    osc-pic period-table --epsilon 0.01

Settings come from defaults, then an optional ``--config`` file of flat
``key = value`` lines (keys are flag names without dashes), then flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics
from .core import DomainError, FieldKind, Scheme, SimConfig
from .duffing import period_quadrature, period_taylor
from .etd import SimulationResult, initial_ensemble, make_ode, plan_macro_step, run_simulation
from .io import snapshot_name, write_snapshot

log = logging.getLogger("osc_pic")

ENV_OUT = "OSC_PIC_OUT"


class UsageError(Exception):
    pass


# flag name -> (SimConfig field, converter)
_SCHEME_ALIASES = {"classic_etd": "classic", "modified_etd": "modified", "improved_etd": "improved"}


def _scheme(value: str) -> Scheme:
    return Scheme(_SCHEME_ALIASES.get(value, value))


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _positive_int(value) -> int:
    as_float = float(value)
    if as_float != int(as_float):
        raise ValueError(f"not an integer: {value!r}")
    return int(as_float)


OPTIONS = {
    "epsilon": ("epsilon", float),
    "dt": ("macro_step", float),
    "t-end": ("final_time", float),
    "particles": ("n_particles", _positive_int),
    "cells": ("grid_cells", _positive_int),
    "extent": ("grid_extent", float),
    "substep-divisor": ("fine_substep_divisor", _positive_int),
    "seed": ("rng_seed", _positive_int),
    "threads": ("threads", _positive_int),
    "scheme": ("scheme", _scheme),
    "field": ("field", FieldKind),
    "quiet-start": ("quiet_start", _bool),
    "frozen-field": ("frozen_field", _bool),
    "deposition": ("deposition", str),
}


def read_config_file(path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in OPTIONS and key != "out-dir":
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value settings file")
    p.add_argument("--epsilon", help="small parameter (required, no default)")
    p.add_argument("--dt", help="macro time step (default 0.5)")
    p.add_argument("--t-end", help="final time (default 10)")
    p.add_argument("--particles", help="number of macroparticles (default 20000)")
    p.add_argument("--cells", help="Poisson grid cells (default 256)")
    p.add_argument("--extent", help="Poisson grid half-width L (default 2)")
    p.add_argument("--substep-divisor", help="fine substeps per 2*pi*eps (default 100)")
    p.add_argument("--seed", help="sampling seed (default 0)")
    p.add_argument("--threads", help="worker threads; 1 is fully deterministic (default 1)")
    p.add_argument("--scheme", help="reference|classic|modified|improved (default improved)")
    p.add_argument("--field", help="zero|cubic|poisson (default cubic)")
    p.add_argument("--deposition", help="cic|ngp (default cic)")
    p.add_argument("--quiet-start", action="store_const", const="true", help="stratified initial sampling")
    p.add_argument("--frozen-field", action="store_const", const="true", help="one field solve per substep")
    p.add_argument("--out-dir", help=f"output directory (fallback: ${ENV_OUT}, then ./out)")
    p.add_argument("-v", "--verbose", action="store_true")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="osc-pic", description="PIC simulation of a highly oscillatory Vlasov equation")
    sub = parser.add_subparsers(dest="mode", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="simulate one scheme and write snapshots")
    _add_sim_flags(run)
    run.add_argument("--report-every", type=int, default=0, help="write period/modulus/residual CSVs every K steps")
    cmp_ = sub.add_parser("compare", help="run two schemes on the same seed, write error_vs_time.csv")
    _add_sim_flags(cmp_)
    cmp_.add_argument("--a", default="reference", help="first scheme (default reference)")
    cmp_.add_argument("--b", default="improved", help="second scheme (default improved)")
    table = sub.add_parser("period-table", help="periods of the initial ensemble, cubic field")
    _add_sim_flags(table)
    table.add_argument("--no-detect", action="store_true", help="skip the fine-solver period column")
    return parser


def _config_from(args: argparse.Namespace, file_values: dict[str, str], **overrides) -> SimConfig:
    kwargs = {}
    merged = dict(file_values)
    for flag in OPTIONS:
        value = getattr(args, flag.replace("-", "_"), None)
        if value is not None:
            merged[flag] = value
    merged.update(overrides)
    for flag, value in merged.items():
        if flag == "out-dir":
            continue
        name, conv = OPTIONS[flag]
        try:
            kwargs[name] = conv(value)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid value for --{flag}: {value!r}") from exc
    if "epsilon" not in kwargs:
        raise UsageError("--epsilon is required (there is no default)")
    try:
        return SimConfig(**kwargs)
    except DomainError as exc:
        raise UsageError(str(exc)) from exc


def parse_config(argv, config_file=None) -> SimConfig:
    """Resolve a SimConfig from ``run``-style flags and an optional file."""
    parser = _Parser(prog="osc-pic")
    _add_sim_flags(parser)
    args = parser.parse_args(list(argv))
    path = config_file or args.config
    file_values = read_config_file(path) if path else {}
    return _config_from(args, file_values)


def _out_dir(args, file_values) -> Path:
    out = args.out_dir or file_values.get("out-dir") or os.environ.get(ENV_OUT) or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


@dataclass
class RunManifest:
    config: dict
    seed: int
    files: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    fine_substeps: int = 0
    particle_substeps: int = 0
    counters: dict = field(default_factory=dict)

    def add_file(self, path: Path, nbytes: int | None = None) -> None:
        size = nbytes if nbytes is not None else path.stat().st_size
        self.files.append({"name": path.name, "bytes": size})

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def config_dict(config: SimConfig) -> dict:
    out = asdict(config)
    out["scheme"] = config.scheme.value
    out["field"] = config.field.value
    return out


def _manifest_for(result: SimulationResult, wall: float) -> RunManifest:
    cfg = result.config
    st = result.stats
    steps = max(st.macro_steps, 1)
    man = RunManifest(config_dict(cfg), cfg.rng_seed)
    man.timing = {
        "total_seconds": wall,
        "fine_seconds": st.fine.seconds,
        "field_solve_seconds": st.field_solve_seconds,
        "extrapolation_seconds": st.extrapolation_seconds,
    }
    man.fine_substeps = st.fine.substeps
    man.particle_substeps = st.fine.particle_substeps
    man.counters = {
        "macro_steps": st.macro_steps,
        "tours_per_macro_step": st.fine.substeps / cfg.fine_substep_divisor / steps,
        "detection_substeps": st.detection_substeps,
        "evaluation_substeps": st.evaluation_substeps,
        "field_solves": st.field_solves,
        "n_tours_min": st.n_tours_min,
        "n_tours_max": st.n_tours_max,
        "fallback_particles": st.fallback_particles,
        "substituted_periods": st.substituted_periods,
        "fast_time": result.fast_time,
    }
    return man


def cmd_run(args, file_values) -> int:
    config = _config_from(args, file_values)
    out = _out_dir(args, file_values)
    written: list[tuple[Path, int]] = []
    report_every = args.report_every
    ode = make_ode(config) if report_every else None
    state = {}

    def on_snapshot(k, ens):
        path = out / snapshot_name(ens.time)
        written.append((path, write_snapshot(path, ens)))
        if k == 0:
            state["initial"] = ens
        if report_every and k % report_every == 0:
            written.extend(_write_reports(out, config, ode, ens, state))

    started = time.perf_counter()
    result = run_simulation(config, on_snapshot=on_snapshot)
    wall = time.perf_counter() - started
    man = _manifest_for(result, wall)
    for path, nbytes in written:
        man.add_file(path, nbytes)
    man.write(out / "manifest.json")
    log.info("wrote %d files to %s in %.2fs", len(written), out, wall)
    return 0


def _write_reports(out: Path, config, ode, ens, state):
    tag = f"t{ens.time:.4f}"
    rep = diagnostics.distribution_report(
        ens, state["initial"], ode, config.fine_step, initial_periods=state.get("periods0")
    )
    state.setdefault("periods0", rep.period_initial)
    files = []
    for name, writer in ((f"periods_{tag}.csv", diagnostics.write_periods), (f"modulus_{tag}.csv", diagnostics.write_modulus)):
        writer(out / name, rep)
        files.append((out / name, (out / name).stat().st_size))
    if config.final_time > ens.time:
        dt = min(config.macro_step, config.final_time - ens.time)
        plan = plan_macro_step(ens, dt, ode, config.fine_step)
        idx = diagnostics.probe_indices(len(ens))
        res = diagnostics.approximation_residual(idx, ens, plan, ode, config.fine_step)
        name = out / f"residuals_{tag}.csv"
        diagnostics.write_residuals(name, idx, res)
        files.append((name, name.stat().st_size))
    return files


def cmd_compare(args, file_values) -> int:
    try:
        scheme_a, scheme_b = _scheme(args.a), _scheme(args.b)
    except ValueError as exc:
        raise UsageError(f"unknown scheme: {exc}") from exc
    base = _config_from(args, file_values)
    out = _out_dir(args, file_values)
    started = time.perf_counter()
    ra = run_simulation(base.replace(scheme=scheme_a))
    rb = run_simulation(base.replace(scheme=scheme_b))
    wall = time.perf_counter() - started
    errors = [diagnostics.cloud_error(a, b) for a, b in zip(ra.snapshots, rb.snapshots)]
    times = [s.time for s in ra.snapshots]
    path = out / "error_vs_time.csv"
    diagnostics.write_error_vs_time(path, times, errors)
    man = RunManifest(config_dict(base), base.rng_seed)
    man.add_file(path)
    man.timing = {
        "total_seconds": wall,
        f"{scheme_a.value}_fine_seconds": ra.stats.fine.seconds,
        f"{scheme_b.value}_fine_seconds": rb.stats.fine.seconds,
    }
    man.fine_substeps = ra.stats.fine.substeps + rb.stats.fine.substeps
    man.particle_substeps = ra.stats.fine.particle_substeps + rb.stats.fine.particle_substeps
    man.counters = {
        "a": scheme_a.value,
        "b": scheme_b.value,
        "a_fine_substeps": ra.stats.fine.substeps,
        "b_fine_substeps": rb.stats.fine.substeps,
        "final_rms": errors[-1].rms,
        "final_max": errors[-1].max,
    }
    man.write(out / "compare_manifest.json")
    print(f"t={times[-1]:g} rms={errors[-1].rms:.6e} max={errors[-1].max:.6e}")
    return 0


def period_table(config: SimConfig, detect: bool = True):
    """Rows ``(r0, v0, eps, T_taylor, T_quadrature, T_detected)`` for the initial ensemble."""
    ens = initial_ensemble(config)
    eps = config.epsilon
    taylor = period_taylor(ens.r, ens.v, eps)
    quad = period_quadrature(ens.r, ens.v, eps)
    if detect:
        ode = make_ode(config.replace(field=FieldKind.CUBIC))
        detected = diagnostics.measure_periods(ens, ode, config.fine_step)
    else:
        detected = np.full(len(ens), np.nan)
    return [(r, v, eps, a, b, c) for r, v, a, b, c in zip(ens.r, ens.v, taylor, quad, detected)]


def cmd_period_table(args, file_values) -> int:
    config = _config_from(args, file_values)
    out = _out_dir(args, file_values)
    rows = period_table(config, detect=not args.no_detect)
    path = out / "period_table.csv"
    diagnostics.write_csv(path, ["r0", "v0", "epsilon", "T_taylor", "T_quadrature", "T_detected"], rows)
    log.info("wrote %s (%d rows)", path, len(rows))
    return 0


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "period-table": cmd_period_table}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        file_values = read_config_file(args.config) if args.config else {}
        return COMMANDS[args.mode](args, file_values)
    except UsageError as exc:
        print(f"osc-pic: usage error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, RuntimeError, OSError) as exc:
        print(f"osc-pic: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
