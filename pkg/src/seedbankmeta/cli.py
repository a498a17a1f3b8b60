"""Command-line entry point.

Every subcommand resolves its configuration from (defaults, optional JSON
config file, repeated --set key=value overrides, dedicated flags), runs,
and writes CSV outputs plus a manifest JSON next to them.  The manifest
records the fully resolved configuration and seed; feeding it back through
--config reproduces the outputs byte for byte.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import subprocess
import sys

import numpy as np

from . import experiments, occupancy, percolation, wfsb
from ._kernels import backend_name
from .core import (Params, TOPOLOGY_LINE, TOPOLOGY_TORUS, Window,
                   sample_extinction_field, validate_params)
from .errors import (BudgetExceededError, CouplingViolationError,
                     DegenerateKError, OccupancySpecError, RangeError,
                     ScanExhaustedError, WindowMismatchError)

PARAM_KEYS = ("M", "H", "g", "c", "p", "k", "alpha", "topology", "L")
_INT_KEYS = {"M", "H", "k", "L", "seed", "replicates", "generations",
             "seeded_patches", "half_width", "horizon", "n_occupied", "jobs"}
_FLOAT_KEYS = {"g", "c", "p", "alpha", "p_start", "p_step",
               "accept_threshold", "epsilon"}
_LIST_KEYS = {"M_sequence", "H_list"}
_STR_KEYS = {"topology", "mode"}
_BOOL_KEYS = {"audit"}


def _coerce(key, value):
    """Parse a config value arriving as a string (from --set) or JSON."""
    if value is None:
        return None
    if key in _LIST_KEYS:
        if isinstance(value, str):
            parts = [v for v in value.replace(",", " ").split() if v]
            return tuple(int(v) for v in parts)
        return tuple(int(v) for v in value)
    if key in _BOOL_KEYS:
        if isinstance(value, str):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise RangeError(f"parameter {key!r}: expected a boolean, "
                             f"got {value!r}")
        return bool(value)
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _STR_KEYS:
        return str(value)
    raise RangeError(f"parameter {key!r}: unknown configuration key")


def _load_config_file(path):
    if not os.path.exists(path):
        raise RangeError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise RangeError(f"config file {path} must hold a JSON object")
    # manifests nest the resolved values under "config"
    if "config" in doc and isinstance(doc["config"], dict):
        doc = doc["config"]
    return doc


def resolve_config(defaults, args):
    """defaults < config file < --set pairs (in order) < dedicated flags."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        for key, value in _load_config_file(args.config).items():
            if key not in resolved:
                raise RangeError(f"parameter {key!r}: unknown configuration "
                                 f"key for this subcommand")
            resolved[key] = _coerce(key, value)
    for pair in getattr(args, "set", None) or []:
        if "=" not in pair:
            raise RangeError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        if key not in resolved:
            raise RangeError(f"parameter {key!r}: unknown configuration key "
                             f"for this subcommand")
        resolved[key] = _coerce(key, value)
    for key in resolved:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = _coerce(key, flag)
    return resolved


def _params_from(config) -> Params:
    raw = {k: config[k] for k in PARAM_KEYS if k in config}
    return validate_params(raw)


def config_fingerprint(config) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
            cwd=os.path.dirname(os.path.abspath(__file__)))
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _write_manifest(outdir, subcommand, config, outputs):
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "resolved_seed": config.get("seed"),
        "config_fingerprint": config_fingerprint(config),
        "backend": backend_name(),
        "git_describe": _git_describe(),
        "outputs": sorted(outputs),
    }
    path = os.path.join(outdir, f"{subcommand}_manifest.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _open_out(outdir, name):
    os.makedirs(outdir, exist_ok=True)
    return open(os.path.join(outdir, name), "w", encoding="utf-8",
                newline="\n")


# ---------------------------------------------------------------------------
# Subcommand defaults and runners
# ---------------------------------------------------------------------------

_TORUS_BASE_PARAMS = dict(M=100, H=1, g=0.5, c=0.05, p=0.5, k=25,
                    topology=TOPOLOGY_TORUS, L=200)

_SIMULATE_DEFAULTS = dict(**_TORUS_BASE_PARAMS, alpha=None, seed=1,
                          replicates=50, generations=100, seeded_patches=5,
                          mode="aggregate")

_BOA_DEFAULTS = dict(**_TORUS_BASE_PARAMS, alpha=None, seed=1, generations=100,
                     seeded_patches=5)

_COUPLED_DEFAULTS = dict(M=20, H=1, g=0.5, c=0.05, p=0.25, k=25,
                         alpha=None, topology=TOPOLOGY_LINE, L=None, seed=1,
                         generations=20, seeded_patches=3, mode="aggregate",
                         audit=False, epsilon=None)

_PCRIT_DEFAULTS = dict(H=0, seed=1, half_width=percolation.DESK_HALF_WIDTH,
                       horizon=percolation.DESK_HORIZON, p_start=0.99,
                       p_step=0.01, accept_threshold=-0.005)

_CURVE_DEFAULTS = dict(H_list=(0, 1, 2, 3), seed=1,
                       half_width=percolation.DESK_HALF_WIDTH,
                       horizon=percolation.DESK_HORIZON)

_CONVERGENCE_DEFAULTS = dict(M=10, H=1, g=0.5, c=0.05, p=0.25,
                             alpha=1.5, topology=TOPOLOGY_LINE, L=None,
                             seed=1, replicates=500, generations=10,
                             M_sequence=(10, 20, 40, 80), n_occupied=3,
                             mode="aggregate")

_OFFSPRING_DEFAULTS = dict(M=100, H=1, g=0.5, c=0.05, p=0.0, k=25,
                           alpha=None, topology=TOPOLOGY_LINE, L=None,
                           seed=1, replicates=100000)

_DUMP_DEFAULTS = dict(M=10, H=1, g=0.5, c=0.1, p=0.2, k=5, alpha=None,
                      topology=TOPOLOGY_TORUS, L=30, seed=1, generations=5,
                      seeded_patches=3, mode="aggregate")


def _run_simulate(config, outdir, jobs):
    params = _params_from(config)
    spec = experiments.ExperimentSpec(
        kind="invasion", params=params, replicates=config["replicates"],
        generations=config["generations"], seed=config["seed"],
        seeded_patches=config["seeded_patches"])
    series = experiments.run_invasion(spec, mode=config["mode"], jobs=jobs)
    fp = config_fingerprint(config)
    with _open_out(outdir, "densities.csv") as fh:
        series.write_csv(fh, fp)
    with _open_out(outdir, "survival.csv") as fh:
        series.write_summary_csv(fh, fp)
    return ["densities.csv", "survival.csv"]


def _run_boa(config, outdir, jobs):
    params = _params_from(config)
    first = (params.L - config["seeded_patches"]) // 2
    occ_bits = np.zeros(params.L, dtype=np.int64)
    occ_bits[first:first + config["seeded_patches"]] = 1
    ages = np.zeros(params.L, dtype=np.int64)
    state = occupancy.state_from_occupancy_profile(
        params, occ_bits, ages, config["seed"])
    bound = occupancy.derive_occupancy(state)
    rows = [bound]
    for gen in range(config["generations"]):
        field = sample_extinction_field(params, gen + 1,
                                        Window(0, params.L - 1),
                                        config["seed"])
        bound = occupancy.boa_step(bound, params, field)
        rows.append(bound)
    fp = config_fingerprint(config)
    with _open_out(outdir, "boa.csv") as fh:
        fh.write(f"# config_fingerprint={fp}\n")
        fh.write("generation,patch,occupied,age\n")
        for st in rows:
            for patch, o, a in zip(st.patches(), st.occ, st.age):
                fh.write(f"{st.generation},{patch},{int(o)},{a}\n")
    return ["boa.csv"]


def _run_coupled(config, outdir, jobs):
    params = _params_from(config)
    n = config["seeded_patches"]
    occ_bits = np.ones(n, dtype=np.int64)
    ages = np.zeros(n, dtype=np.int64)
    init = occupancy.state_from_occupancy_profile(params, occ_bits, ages,
                                                  config["seed"], i_min=0)
    run = occupancy.coupled_run(params, init, config["generations"],
                                config["seed"], mode=config["mode"],
                                audit=config["audit"],
                                epsilon=config["epsilon"])
    fp = config_fingerprint(config)
    with _open_out(outdir, "coupled.csv") as fh:
        occupancy.dump_coupled_csv(run, fh, fp)
    with _open_out(outdir, "deviations.csv") as fh:
        run.report.write_csv(fh, fp)
    return ["coupled.csv", "deviations.csv"]


def _run_pcrit(config, outdir, jobs):
    pc = percolation.PercConfig(
        H=config["H"], half_width=config["half_width"],
        horizon=config["horizon"], accept_threshold=config["accept_threshold"],
        p_start=config["p_start"], p_step=config["p_step"],
        seed=config["seed"])
    trace = percolation.pcrit_scan(pc, jobs=jobs)
    fp = config_fingerprint(config)
    with _open_out(outdir, "scan_trace.csv") as fh:
        trace.write_csv(fh, fp)
    with _open_out(outdir, "threshold.csv") as fh:
        fh.write(f"# config_fingerprint={fp}\n")
        fh.write("H,p_crit_estimate,half_width,horizon,seed\n")
        fh.write(f"{pc.H},{trace.estimate:.10g},{pc.half_width},"
                 f"{pc.horizon},{pc.seed}\n")
    return ["scan_trace.csv", "threshold.csv"]


def _run_curve(config, outdir, jobs):
    params = Params(M=2, H=0, g=0.5, c=0.1, p=0.5, k=2)  # placeholder only
    spec = experiments.ExperimentSpec(
        kind="threshold_curve", params=params, replicates=1, generations=0,
        seed=config["seed"], H_list=config["H_list"],
        half_width=config["half_width"], horizon=config["horizon"])
    curve = experiments.run_threshold_curve(spec, jobs=jobs)
    fp = config_fingerprint(config)
    with _open_out(outdir, "threshold_curve.csv") as fh:
        curve.write_csv(fh, fp)
    return ["threshold_curve.csv"]


def _run_convergence(config, outdir, jobs):
    params = _params_from(config)
    spec = experiments.ExperimentSpec(
        kind="convergence", params=params, replicates=config["replicates"],
        generations=config["generations"], seed=config["seed"],
        M_sequence=config["M_sequence"])
    result = experiments.run_convergence(spec, mode=config["mode"],
                                         jobs=jobs,
                                         n_occupied=config["n_occupied"])
    fp = config_fingerprint(config)
    with _open_out(outdir, "convergence.csv") as fh:
        result.write_csv(fh, fp)
    return ["convergence.csv"]


def _run_offspring(config, outdir, jobs):
    params = _params_from(config)
    spec = experiments.ExperimentSpec(
        kind="offspring_test", params=params,
        replicates=config["replicates"], generations=0, seed=config["seed"])
    report = experiments.run_offspring_test(spec)
    fp = config_fingerprint(config)
    with _open_out(outdir, "offspring_pmf.csv") as fh:
        report.write_csv(fh, fp)
    with _open_out(outdir, "offspring_gof.csv") as fh:
        report.write_summary_csv(fh, fp)
    return ["offspring_pmf.csv", "offspring_gof.csv"]


def _run_dump_state(config, outdir, jobs):
    params = _params_from(config)
    init = experiments.invasion_initial_state(params,
                                              config["seeded_patches"])
    states = wfsb.simulate_generations(params, init, config["generations"],
                                       config["seed"], mode=config["mode"])
    fp = config_fingerprint(config)
    with _open_out(outdir, "states.csv") as fh:
        wfsb.dump_states_csv(states, fh, fp)
    return ["states.csv"]


_SUBCOMMANDS = {
    "simulate": (_SIMULATE_DEFAULTS, _run_simulate),
    "boa": (_BOA_DEFAULTS, _run_boa),
    "coupled": (_COUPLED_DEFAULTS, _run_coupled),
    "pcrit": (_PCRIT_DEFAULTS, _run_pcrit),
    "curve": (_CURVE_DEFAULTS, _run_curve),
    "convergence": (_CONVERGENCE_DEFAULTS, _run_convergence),
    "offspring": (_OFFSPRING_DEFAULTS, _run_offspring),
    "dump-state": (_DUMP_DEFAULTS, _run_dump_state),
}

_USAGE_ERRORS = (RangeError, DegenerateKError, OccupancySpecError,
                 ValueError, KeyError, json.JSONDecodeError)
_RUNTIME_ERRORS = (ScanExhaustedError, BudgetExceededError,
                   WindowMismatchError, CouplingViolationError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seedbankmeta",
        description="Seed-bank metapopulation simulation toolkit")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, (defaults, _) in _SUBCOMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file or manifest")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--jobs", type=int,
                       default=max(1, os.cpu_count() or 1),
                       help="worker threads (outputs independent of this)")
        for key in defaults:
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    defaults, runner = _SUBCOMMANDS[args.subcommand]
    try:
        config = resolve_config(defaults, args)
        jobs = max(1, int(args.jobs))
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        outputs = runner(config, args.out, jobs)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _RUNTIME_ERRORS as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    _write_manifest(args.out, args.subcommand, config, outputs)
    return 0


if __name__ == "__main__":
    sys.exit(main())
