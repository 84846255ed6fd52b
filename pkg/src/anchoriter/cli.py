"""Command-line entry point.

Every command resolves its configuration (defaults < ``--config`` file <
flags), writes its outputs into ``--out`` and finishes with ``record.json``:
the command, the resolved config, the seed, the library version, a SHA-256
per output file and the wall-clock duration. ``anchoriter replay record.json``
re-runs the recorded config and compares the output hashes.

Exit codes: 0 success, 1 invalid input, 2 verification failure, 3 internal error.
"""

from __future__ import annotations

import argparse
import copy
import logging
import os
import sys
import time

import numpy as np

from . import __version__, kernels
from .attention import certify_layer
from .drift import run, stepwise_bounds, event_bounds, verify_envelope
from .envelopes import EventSchedule, envelope_stepwise, envelope_uniform_gap, envelope_variable
from .errors import AnchorError
from .io import (
    inline_manifest,
    layer_from_manifest,
    load_json,
    run_config_from_dict,
    sha256_file,
    write_json,
    write_table,
)
from .mc import Program, complexity_audit, execute, perturbed_execute
from .scheduling import BlockLawSpec, mc_sweep, run_sim

log = logging.getLogger("anchoriter")

EXIT_OK, EXIT_INVALID, EXIT_VIOLATION, EXIT_INTERNAL = 0, 1, 2, 3


class CommandResult:
    def __init__(self, files, summary, status=EXIT_OK):
        self.files = files
        self.summary = summary
        self.status = status


# Defaults ----------------------------------------------------------------------------

def _scaling(factor, dim):
    return {"kind": "scaling", "params": {"factor": factor, "dim": dim}}


DEFAULTS = {
    "staircase": {
        "N": 100,
        "M": 5,
        "d": 2,
        "sigma": 0.0,
        "literal_order": False,
        "regimes": {
            "convergent": {"eps": 0.01, "alpha": 0.8},
            "divergent": {"eps": 0.05, "alpha": 0.9},
        },
    },
    "sweep": {"law": BlockLawSpec.reference().to_dict(), "K": 400, "trials": 100, "eps_margin": 0.0, "bins": 20},
    "run": {
        "horizon": 100,
        "event_times": list(range(5, 101, 5)),
        "x0": [3.0, 4.0],
        "z": [0.0, 0.0],
        "drift": _scaling(1.01, 2),
        "blocks": [
            {
                "anchor": {"kind": "affine_set", "params": {"matrix": [[0.0, 1.0]], "offset": [0.0]}},
                "intra_maps": [_scaling(0.8, 2)],
            }
        ] * 20,
        "at": "events",
    },
    "envelope": {
        "mode": "variable",
        "moduli": ([1.01] * 4 + [0.8]) * 20,
        "event_times": list(range(5, 101, 5)),
        "d0": 1.0,
        "at": "all",
    },
    "attention-cert": {"method": "overlap", "calibration_points": 256},
    "mc run": {"guard": 0.0},
    "mc audit": {},
    "mc perturb": {"guard": 0.0, "deltas": 1e-3, "noise_law": "ball"},
}


# Commands ----------------------------------------------------------------------------

def cmd_staircase(cfg, out, fmt, parallel):
    N, M, d, sigma = int(cfg["N"]), int(cfg["M"]), int(cfg["d"]), float(cfg["sigma"])
    events = N // M
    files, summary = [], {}
    for name, regime in cfg["regimes"].items():
        eps, alpha = float(regime["eps"]), float(regime["alpha"])
        norms = run_sim(cfg["seed"], N, M, eps, alpha, d, sigma, bool(cfg["literal_order"]))
        with np.errstate(divide="ignore"):
            logs = np.log(norms)
        rows = [(t, logs[t], t > 0 and t % M == 0) for t in range(N + 1)]
        files.append(write_table(os.path.join(out, f"staircase_{name}.csv"),
                                 ["step", "log_norm", "event_flag"], rows, fmt))
        summary[name] = {
            "eps": eps,
            "alpha": alpha,
            "terminal_norm": float(norms[-1]),
            "terminal_log_norm": float(logs[-1]),
            "block_factor": (1.0 + eps) ** (M - 1) * alpha,
            "noiseless_terminal_norm": 10.0 * (1.0 + eps) ** (N - events) * alpha ** events,
        }
    files.append(write_json(os.path.join(out, "summary.json"), summary))
    return CommandResult(files, summary)


def cmd_sweep(cfg, out, fmt, parallel):
    law = BlockLawSpec.from_dict(cfg["law"])
    res = mc_sweep(law, int(cfg["K"]), int(cfg["trials"]), float(cfg["eps_margin"]), cfg["seed"], parallel)
    doc = res.to_dict()
    files = [write_json(os.path.join(out, "sweep.json"), doc)]
    verdicts = []
    for s in res.slopes:
        verdicts.append("convergent" if s < -res.eps_margin else "divergent" if s > res.eps_margin else "indeterminate")
    files.append(write_table(os.path.join(out, "slopes.csv"), ["trial", "slope", "verdict"],
                             [(i, s, v) for i, (s, v) in enumerate(zip(res.slopes, verdicts))], fmt))
    counts, edges = np.histogram(res.slopes, bins=int(cfg["bins"]))
    files.append(write_table(os.path.join(out, "histogram.csv"), ["bin_left", "bin_right", "count"],
                             [(edges[i], edges[i + 1], int(c)) for i, c in enumerate(counts)], fmt))
    summary = {"caption": res.caption(), "mean_slope": res.mean_slope,
               "ci95_halfwidth": res.ci95_halfwidth, "counts": res.classification_counts}
    print(res.caption())
    return CommandResult(files, summary)


def cmd_run(cfg, out, fmt, parallel):
    config = run_config_from_dict(cfg)
    trace = run(config)
    files = [write_table(os.path.join(out, "trace.csv"),
                         ["step", "distance", "event_flag", "local_modulus"], trace.rows(), fmt)]
    if cfg.get("at", "events") == "all":
        bounds = stepwise_bounds(config)
        report = verify_envelope(trace, bounds, at="all")
    else:
        bounds = event_bounds(config)
        report = verify_envelope(trace, bounds, at="events")
    doc = {
        "final_distance": float(trace.distances[-1]),
        "block_lambdas": config.block_lambdas(),
        "bounds": bounds,
        "report": report.to_dict(),
    }
    files.append(write_json(os.path.join(out, "envelope.json"), doc))
    status = EXIT_OK if report.certified else EXIT_VIOLATION
    return CommandResult(files, doc["report"], status)


def cmd_envelope(cfg, out, fmt, parallel):
    mode = cfg.get("mode", "variable")
    if mode == "variable":
        moduli = cfg["moduli"]
        d0 = float(cfg["d0"])
        if cfg.get("at", "all") == "all":
            bounds = envelope_stepwise(moduli, d0)
            rows = list(enumerate(bounds))
        else:
            schedule = EventSchedule(tuple(cfg["event_times"]), len(moduli))
            rows = list(zip(schedule.event_times, envelope_variable(moduli, schedule, d0)))
    elif mode == "uniform_gap":
        n1, n_max = int(cfg["n1"]), int(cfg["n_max"])
        rows = [(n, envelope_uniform_gap(float(cfg["tau_bar"]), int(cfg["M"]), n1, float(cfg["d_at_n1"]), n))
                for n in range(n1, n_max + 1)]
    else:
        raise AnchorError(f"unknown envelope mode {mode!r}")
    path = write_table(os.path.join(out, "envelope.csv"), ["step", "bound"], rows, fmt)
    return CommandResult([path], {"rows": len(rows), "final_bound": float(rows[-1][1]) if rows else None})


def cmd_attention_cert(cfg, out, fmt, parallel):
    if "heads" not in cfg:
        raise AnchorError("attention-cert needs a manifest (--manifest or heads in the config)")
    layer = layer_from_manifest(cfg)
    rng = np.random.default_rng(cfg["seed"])
    points = {}
    for i, h in enumerate(layer.heads):
        if h.modulus_bound is None:
            points[i] = rng.standard_normal((int(cfg["calibration_points"]), h.projector.shape[0]))
    for i, pts in points.items():
        layer.heads[i].resolve_bound(pts)
    cert = certify_layer(layer, cfg["method"], seed=cfg["seed"])
    doc = cert.to_dict()
    path = write_json(os.path.join(out, "certificate.json"), doc)
    return CommandResult([path], {"bound": cert.bound, "passes": cert.passes},
                         EXIT_OK if cert.passes else EXIT_VIOLATION)


def _program(cfg):
    if "program" not in cfg:
        raise AnchorError("mc commands need a program (--program or program in the config)")
    return Program.from_dict(cfg["program"])


def cmd_mc_run(cfg, out, fmt, parallel):
    program = _program(cfg)
    if "input" not in cfg:
        raise AnchorError("mc run needs an input (--input or input in the config)")
    output, report = execute(program, cfg["input"], float(cfg["guard"]))
    doc = {"output": output, "report": report.to_dict(include_trace=True)}
    ok = True
    if program.declared_output is not None:
        doc["matches_declared"] = ok = bool(
            np.array_equal(np.asarray(output["values"]), np.asarray(program.declared_output, dtype=float))
        )
    path = write_json(os.path.join(out, "output.json"), doc)
    return CommandResult([path], {"output": output["values"], **report.to_dict()},
                         EXIT_OK if ok else EXIT_VIOLATION)


def cmd_mc_audit(cfg, out, fmt, parallel):
    audit = complexity_audit(_program(cfg))
    path = write_json(os.path.join(out, "audit.json"), audit.to_dict())
    return CommandResult([path], audit.to_dict())


def cmd_mc_perturb(cfg, out, fmt, parallel):
    program = _program(cfg)
    if "input" not in cfg:
        raise AnchorError("mc perturb needs an input (--input or input in the config)")
    _, report = perturbed_execute(program, cfg["input"], cfg["deltas"], cfg["noise_law"],
                                  cfg["seed"], float(cfg["guard"]))
    path = write_json(os.path.join(out, "perturb.json"), report.to_dict())
    rows = [(t, d, b) for t, (d, b) in enumerate(zip(report.deviations, report.bounds))]
    files = [path, write_table(os.path.join(out, "deviations.csv"), ["step", "deviation", "bound"], rows, fmt)]
    return CommandResult(files, {"violations": report.violations},
                         EXIT_OK if report.ok else EXIT_VIOLATION)


COMMANDS = {
    "staircase": cmd_staircase,
    "sweep": cmd_sweep,
    "run": cmd_run,
    "envelope": cmd_envelope,
    "attention-cert": cmd_attention_cert,
    "mc run": cmd_mc_run,
    "mc audit": cmd_mc_audit,
    "mc perturb": cmd_mc_perturb,
}


# Records -----------------------------------------------------------------------------

def execute_command(command, cfg, out, fmt="csv", parallel=1):
    """Run ``command`` with a fully resolved config and write ``record.json`` into ``out``."""
    os.makedirs(out, exist_ok=True)
    start = time.perf_counter()
    result = COMMANDS[command](copy.deepcopy(cfg), out, fmt, parallel)
    duration = time.perf_counter() - start
    record = {
        "command": command,
        "config": cfg,
        "seed": cfg["seed"],
        "format": fmt,
        "version": __version__,
        "backend": kernels.BACKEND,
        "outputs": {
            "files": {os.path.basename(p): sha256_file(p) for p in result.files},
            "summary": result.summary,
        },
        "status": result.status,
        "duration_s": duration,
    }
    write_json(os.path.join(out, "record.json"), record)
    return record, result.status


def replay(record_path, out=None):
    """Re-run a record into ``out`` and return the list of output files whose hashes differ."""
    record = load_json(record_path)
    if out is None:
        out = os.path.join(os.path.dirname(os.path.abspath(record_path)), "replay")
    new, _ = execute_command(record["command"], record["config"], out, record.get("format", "csv"))
    old_files, new_files = record["outputs"]["files"], new["outputs"]["files"]
    return sorted(n for n in set(old_files) | set(new_files) if old_files.get(n) != new_files.get(n))


# Argument parsing ---------------------------------------------------------------------

def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--config", default=None, help="JSON config file layered over the defaults")
    p.add_argument("--out", default=None, help="output directory (default ./out/<command>)")
    p.add_argument("--parallel", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="format of tabular outputs")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="anchoriter", description="Anchored operator iteration experiments.")
    parser.add_argument("--version", action="version", version=f"anchoriter {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("staircase", parents=[common], help="drift/event staircase series for two regimes")
    p.add_argument("--N", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--literal-order", action="store_true", default=None,
                   help="record before each update and also update at t = 0")

    p = sub.add_parser("sweep", parents=[common], help="Monte-Carlo block-law classification sweep")
    p.add_argument("--K", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--eps-margin", type=float, dest="eps_margin")
    p.add_argument("--law", choices=("reference", "divergent"), help="preset block law")
    p.add_argument("--bins", type=int)

    p = sub.add_parser("run", parents=[common], help="drift-projection run with envelope verification")
    p.add_argument("--at", choices=("events", "all"))

    p = sub.add_parser("envelope", parents=[common], help="contraction envelope as (step, bound) rows")
    p.add_argument("--mode", choices=("variable", "uniform_gap"))
    p.add_argument("--d0", type=float)
    p.add_argument("--at", choices=("events", "all"))

    p = sub.add_parser("attention-cert", parents=[common], help="contraction certificate for an attention layer")
    p.add_argument("--manifest", help="JSON manifest listing projector and output-map matrix files")
    p.add_argument("--method", choices=("orthogonal", "general", "overlap"))

    p = sub.add_parser("mc", help="register-machine programs")
    mc_sub = p.add_subparsers(dest="mc_command", required=True)
    for name, help_ in (("run", "execute a program on an input"),
                        ("audit", "static operation count and modulus bound"),
                        ("perturb", "perturbed execution against the error envelope")):
        q = mc_sub.add_parser(name, parents=[common], help=help_)
        q.add_argument("--program", help="program JSON file")
        if name != "audit":
            q.add_argument("--input", help="input JSON file")
            q.add_argument("--guard", type=float)
        if name == "perturb":
            q.add_argument("--delta", type=float, dest="deltas", help="per-step perturbation radius")
            q.add_argument("--noise-law", choices=("ball", "sphere"), dest="noise_law")

    p = sub.add_parser("replay", help="re-run an experiment record and compare output hashes")
    p.add_argument("record")
    p.add_argument("--out", default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


FLAG_KEYS = ("N", "M", "d", "sigma", "literal_order", "K", "trials", "eps_margin", "bins",
             "at", "mode", "d0", "method", "guard", "deltas", "noise_law")


def resolve_config(command, args):
    cfg = copy.deepcopy(DEFAULTS[command])
    if args.config:
        cfg.update(load_json(args.config))
    base_dir = os.path.dirname(os.path.abspath(args.config)) if args.config else "."
    for key in FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "law", None):
        law = BlockLawSpec.reference() if args.law == "reference" else BlockLawSpec.divergent_reference()
        cfg["law"] = law.to_dict()
    if getattr(args, "manifest", None):
        manifest = load_json(args.manifest)
        cfg.update(inline_manifest(manifest, os.path.dirname(os.path.abspath(args.manifest))))
    elif "heads" in cfg:
        cfg.update(inline_manifest(cfg, base_dir))
    if getattr(args, "program", None):
        cfg["program"] = load_json(args.program)
    if getattr(args, "input", None):
        cfg["input"] = load_json(args.input)
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            mismatched = replay(args.record, args.out)
            if mismatched:
                print("replay mismatch: " + ", ".join(mismatched), file=sys.stderr)
                return EXIT_VIOLATION
            print("replay reproduced all outputs bit-exactly")
            return EXIT_OK
        command = f"mc {args.mc_command}" if args.command == "mc" else args.command
        cfg = resolve_config(command, args)
        out = args.out or os.path.join("out", command.replace(" ", "_"))
        record, status = execute_command(command, cfg, out, args.format, args.parallel)
        if status == EXIT_VIOLATION:
            print(f"{command}: verification failed, see {out}", file=sys.stderr)
        return status
    except (AnchorError, ValueError, KeyError, OSError) as exc:
        # JSONDecodeError is a ValueError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
