"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import math
import time

import numpy as np
import pytest

from anchoriter.attention import (
    certify_layer,
    layer_empirical_modulus,
    overlap_index,
    softmax_jacobian,
    softmax_lip_probe,
)
from anchoriter.cli import main, replay
from anchoriter.drift import run, event_bounds, verify_envelope
from anchoriter.envelopes import block_products, drift_block_lambda
from anchoriter.io import save_matrix
from anchoriter.mc import GuardedBlock, perturbed_execute, realize_trace, run_state
from anchoriter.operators import AffineSet, box_clamp, radial_retract
from anchoriter.scheduling import BlockLawSpec, adversarial_schedule, mc_sweep

from _factories import (
    random_affine_nonexpansive,
    random_layer,
    random_orthogonal,
    random_program,
    random_run_config,
)

GOLDEN_LAMBDA = 0.83248320648
E_LOG_MU = -0.22345634489532304  # quadrature oracle for the reference event law


def test_ac01_block_factor_golden_value(verdict):
    lam = drift_block_lambda([1.01] * 4, [0.8])
    tenth = lam**10
    ok = abs(lam - GOLDEN_LAMBDA) <= 1e-9 and 0.158 <= tenth <= 0.162
    verdict(1, ok, f"lambda={lam!r} golden={GOLDEN_LAMBDA} |diff|={abs(lam - GOLDEN_LAMBDA):.3e} "
                   f"(tol 1e-9), lambda^10={tenth:.6f} in [0.158, 0.162]")


def test_ac02_staircase_regimes(verdict, tmp_path):
    start = time.perf_counter()
    code = main(["staircase", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - start
    summary = json.loads((tmp_path / "summary.json").read_text())
    conv, div = summary["convergent"]["terminal_norm"], summary["divergent"]["terminal_norm"]
    closed = 10 * 1.01**80 * 0.8**20
    rel = abs(conv - closed) / closed
    ok = code == 0 and rel <= 1e-6 and div > 10 and elapsed < 1.0
    verdict(2, ok, f"convergent={conv:.10f} closed form={closed:.10f} rel={rel:.1e}, "
                   f"divergent={div:.4f} > 10, {elapsed:.3f}s")


def test_ac03_envelope_soundness(verdict):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    violations = checked = 0
    for _ in range(200):
        cfg = random_run_config(rng, max_dim=8, max_gap=8)
        report = verify_envelope(run(cfg), event_bounds(cfg), at="events", rtol=1e-9)
        violations += len(report.violations)
        checked += len(report.checked)
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 30
    verdict(3, ok, f"200 runs, {checked} event checks, {violations} violations, {elapsed:.2f}s")


def test_ac04_softmax_lipschitz(verdict):
    start = time.perf_counter()
    worst = max(softmax_lip_probe(d, 1.0, 100_000, rng=d) for d in range(2, 11))
    antipodal = softmax_lip_probe(2, 1.0, 100_000, rng=0, sampler="antipodal")
    jac = float(np.linalg.norm(softmax_jacobian(np.zeros(2)), 2))
    elapsed = time.perf_counter() - start
    ok = worst <= 0.5 + 1e-9 and antipodal >= 0.499 and abs(jac - 0.5) <= 1e-12 and elapsed < 10
    verdict(4, ok, f"max probe over d=2..10 {worst:.12f}, antipodal d=2 {antipodal:.12f}, "
                   f"|J(0,0)|={jac!r}, {elapsed:.2f}s")


def test_ac05_overlap_index(verdict):
    rng = np.random.default_rng(5)
    P = random_orthogonal(rng, 6)[:3]
    omega_same = overlap_index([P] * 4)
    I = np.eye(6)
    omega_orth = overlap_index([I[:2], I[2:4], I[4:]])
    bad = 0
    for _ in range(100):
        layer = random_layer(rng)
        if certify_layer(layer, "overlap").bound > certify_layer(layer, "general").bound * (1 + 1e-12):
            bad += 1
    ok = abs(omega_same - 2) <= 1e-9 and abs(omega_orth - 1) <= 1e-9 and bad == 0
    verdict(5, ok, f"identical heads {omega_same!r}, orthogonal heads {omega_orth!r}, "
                   f"overlap > general on {bad}/100 layers")


def test_ac06_certificate_soundness(verdict):
    rng = np.random.default_rng(6)
    start = time.perf_counter()
    passing, worst_gap = 0, -math.inf
    while passing < 100:
        layer = random_layer(rng)
        cert = certify_layer(layer, "overlap")
        if not cert.passes:
            continue
        passing += 1
        worst_gap = max(worst_gap, layer_empirical_modulus(layer, 10_000, rng) - cert.bound)
    elapsed = time.perf_counter() - start
    ok = worst_gap <= 1e-6 and elapsed < 60
    verdict(6, ok, f"100 passing layers, max(empirical - certified)={worst_gap:.3e}, {elapsed:.2f}s")


def _firm_slack(f, U, V):
    D = f(U) - f(V)
    return float(np.max(np.einsum("ij,ij->i", D, D) - np.einsum("ij,ij->i", D, U - V)))


def test_ac07_firm_nonexpansiveness(verdict):
    rng = np.random.default_rng(7)
    n = 10_000
    slacks = {}
    A = rng.standard_normal((3, 6))
    S = AffineSet(A, A @ rng.standard_normal(6))
    U, V = 5 * rng.standard_normal((n, 6)), 5 * rng.standard_normal((n, 6))
    slacks["affine projection"] = _firm_slack(S.project, U, V)
    d = 3
    for i in (0, 1):
        blk = GuardedBlock(i, (random_affine_nonexpansive(rng, d), rng.standard_normal(d)), d)
        U, V = 5 * rng.standard_normal((n, 2 * d + 1)), 5 * rng.standard_normal((n, 2 * d + 1))
        slacks[f"guarded block {i}"] = _firm_slack(blk.apply_batch, U, V)
    ok = all(s <= 1e-9 for s in slacks.values())
    verdict(7, ok, ", ".join(f"{k} max slack {v:.2e}" for k, v in slacks.items()) + " (tol 1e-9)")


def test_ac08_trace_realization(verdict):
    rng = np.random.default_rng(8)
    mismatches = 0
    for _ in range(100):
        d = int(rng.integers(1, 5))
        states = rng.standard_normal((int(rng.integers(1, 12)), 2 * d + 1)) * 10 ** rng.uniform(-3, 3)
        prog = realize_trace(states)
        for _ in range(5):
            _, report = run_state(prog, rng.standard_normal(2 * d + 1) * 100)
            got = np.array([s.to_vector() for s in report.trace[1:]])
            mismatches += not np.array_equal(got, states)
    verdict(8, mismatches == 0, f"100 traces x 5 starts, {mismatches} non-bit-exact replays")


def test_ac09_perturbation_envelope(verdict):
    rng = np.random.default_rng(9)
    violations = 0
    for i in range(100):
        prog = random_program(rng, K=int(rng.integers(1, 12)))
        deltas = rng.uniform(0, 0.1, len(prog.instructions))
        data = list(rng.integers(-8, 8, prog.dims) / 4.0)
        law = "sphere" if i % 2 else "ball"
        _, report = perturbed_execute(prog, data, deltas, law, seed=i)
        violations += len(report.violations)
    verdict(9, violations == 0, f"100 perturbed executions, {violations} violations")


def test_ac10_slln_sweep(verdict):
    start = time.perf_counter()
    res = mc_sweep(BlockLawSpec.reference(), K=400, trials=100, seed=0)
    div = mc_sweep(BlockLawSpec.divergent_reference(), K=400, trials=100, seed=0)
    elapsed = time.perf_counter() - start
    gap = abs(res.mean_slope - E_LOG_MU)
    ok = (gap <= 3 * res.ci95_halfwidth and res.fraction("convergent") >= 0.95
          and div.fraction("divergent") >= 0.95 and elapsed < 30)
    verdict(10, ok, f"{res.caption()}, oracle {E_LOG_MU:.5f}, |diff|={gap:.2e} <= 3*CI, "
                    f"convergent {res.fraction('convergent'):.2f}, divergent law "
                    f"{div.fraction('divergent'):.2f}, {elapsed:.2f}s")


def test_ac11_retraction_properties(verdict):
    rng = np.random.default_rng(11)
    n, d, r = 100_000, 4, 1.0
    # radial retraction: both inside, one inside one outside, both outside, on the sphere
    radii = np.stack([rng.uniform(0, 2.5, n), rng.uniform(0, 2.5, n)])
    radii[:, : n // 10] = 1.0
    dirs = rng.standard_normal((2, n, d))
    dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
    X, Y = dirs[0] * radii[0][:, None], dirs[1] * radii[1][:, None]
    inside = (radii <= r)
    cases = {"in/in": int(np.sum(inside[0] & inside[1])), "in/out": int(np.sum(inside[0] ^ inside[1])),
             "out/out": int(np.sum(~inside[0] & ~inside[1]))}
    radial_slack = float(np.max(np.linalg.norm(radial_retract(r, X) - radial_retract(r, Y), axis=1)
                                - np.linalg.norm(X - Y, axis=1)))
    # box clamp: per coordinate both below, both above, both inside, straddling
    lo, hi = -np.ones(d), np.ones(d)
    Xb, Yb = rng.uniform(-3, 3, (n, d)), rng.uniform(-3, 3, (n, d))
    cx, cy = box_clamp(lo, hi, Xb), box_clamp(lo, hi, Yb)
    coord_slack = float(np.max(np.abs(cx - cy) - np.abs(Xb - Yb)))
    norm_slack = float(np.max(np.linalg.norm(cx - cy, axis=1) - np.linalg.norm(Xb - Yb, axis=1)))
    covered = all(v > 0 for v in cases.values())
    ok = covered and max(radial_slack, coord_slack, norm_slack) <= 1e-12
    verdict(11, ok, f"radial cases {cases}, max slack radial {radial_slack:.1e}, "
                    f"box coordinate {coord_slack:.1e}, box norm {norm_slack:.1e} (tol 1e-12)")


def test_ac12_adversarial_closed_form(verdict):
    worst = 0.0
    for K in (1, 3, 10, 50, 200):
        gaps = list(range(2, K + 2))
        schedule, moduli = adversarial_schedule(0.05, K, gaps)
        log_cum = block_products(moduli, schedule).log_cumulative[-1]
        exponent = schedule.event_times[-1] - K
        worst = max(worst, abs(log_cum - exponent * math.log(1.05)))
    verdict(12, worst <= 1e-12, f"max |log product - log closed form| over K in (1,3,10,50,200) = {worst:.2e}")


def _attention_manifest(tmp_path):
    I = np.eye(4)
    save_matrix(tmp_path / "p1.csv", I[:2])
    save_matrix(tmp_path / "p2.csv", I[2:])
    save_matrix(tmp_path / "wo.csv", I)
    manifest = {"heads": [{"projector": "p1.csv", "head_map": {"kind": "softmax", "Q": [[1, 0], [0, 1]],
                                                               "K": [[0.5, 0], [0, 0.5]], "V": [[0.5, 0], [0, 0.5]]}},
                          {"projector": "p2.csv", "head_map": {"kind": "linear", "matrix": [[0.3, 0], [0.1, 0.2]]}}],
                "output_map": "wo.csv"}
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    return str(tmp_path / "manifest.json")


def _program_files(tmp_path):
    prog = {"instructions": [
        {"op": "affine_step", "matrix": [[0.5, 0, 0, 0, 0], [0, 0.5, 0, 0, 0], [0, 0, 1, 0, 0],
                                         [0, 0, 0, 1, 0], [0, 0, 0, 0, 1]]},
        {"op": "guarded", "f0": {"matrix": [[0, 1], [1, 0]]}, "f1": {"matrix": [[0.5, 0], [0, 0.5]],
                                                                      "offset": [0.25, 0]}},
        {"op": "translate", "offset": [0, 0, 0.125, 0, 0]}],
        "encoding": {"dims": 2, "fractional_bits": 16}}
    (tmp_path / "prog.json").write_text(json.dumps(prog))
    (tmp_path / "in.json").write_text(json.dumps({"x": [1.0, 0.5], "b": 1}))
    return str(tmp_path / "prog.json"), str(tmp_path / "in.json")


def test_ac13_determinism(verdict, tmp_path):
    manifest = _attention_manifest(tmp_path)
    prog, data = _program_files(tmp_path)
    commands = {
        "staircase": ["staircase", "--sigma", "0.05", "--seed", "17"],
        "sweep": ["sweep", "--seed", "4", "--parallel", "2"],
        "sweep-json": ["sweep", "--law", "divergent", "--K", "50", "--format", "json"],
        "run": ["run", "--at", "all"],
        "envelope": ["envelope"],
        "attention-cert": ["attention-cert", "--manifest", manifest, "--seed", "3"],
        "mc run": ["mc", "run", "--program", prog, "--input", data],
        "mc audit": ["mc", "audit", "--program", prog],
        "mc perturb": ["mc", "perturb", "--program", prog, "--input", data, "--delta", "0.05", "--seed", "8"],
    }
    failures = []
    for name, argv in commands.items():
        out = tmp_path / name.replace(" ", "_")
        if main(argv + ["--out", str(out)]) != 0:
            failures.append(f"{name}: command failed")
            continue
        mismatched = replay(str(out / "record.json"), str(out) + "_replay")
        if mismatched:
            failures.append(f"{name}: {mismatched}")
    verdict(13, not failures, f"{len(commands)} commands replayed from their records; "
                              + ("all outputs bit-identical" if not failures else "; ".join(failures)))
