import numpy as np
import pytest

from anchoriter.errors import EncodingError, ProgramError
from anchoriter.mc import (
    AffineStep,
    ConstantWrite,
    Encoding,
    Guarded,
    GuardedBlock,
    MCState,
    Permute,
    Program,
    Readout,
    Translate,
    complexity_audit,
    execute,
    guarded_block,
    instruction_from_dict,
    perturbed_execute,
    realize_trace,
    run_state,
)

from _factories import random_affine_nonexpansive, random_program


def graph_residual(state, M, c):
    return np.linalg.norm(state.y - (M @ state.x + c))


# guarded blocks ---------------------------------------------------------------------

@pytest.mark.parametrize("b", [0.0, 1.0])
def test_block_lands_on_graph_and_keeps_guard(b):
    s = MCState(np.array([1.0, 2.0]), np.array([3.0, 4.0]), b)
    out = guarded_block(1, (np.eye(2), None), s)
    assert out.b == b
    assert np.allclose(out.y, out.x)
    # the graph projection of (x, y) onto {y = x} is the midpoint
    assert np.allclose(out.x, [2.0, 3.0])


def test_block_ignores_the_guard_value():
    # the literal block acts the same on both guard values
    blk = GuardedBlock(0, (0.5 * np.eye(2), np.ones(2)), 2)
    s0 = np.array([1.0, -1.0, 4.0, 0.0, 0.0])
    s1 = s0.copy()
    s1[-1] = 1.0
    assert np.allclose(blk(s0)[:-1], blk(s1)[:-1])


def test_block_fixes_points_on_the_graph(rng):
    M, c = 0.5 * np.eye(3), rng.standard_normal(3)
    x = rng.standard_normal(3)
    s = np.concatenate([x, M @ x + c, [1.0]])
    assert np.allclose(GuardedBlock(1, (M, c), 3)(s), s)


def test_block_with_affine_branch(rng):
    c = np.array([0.25, -1.0])
    s = MCState(rng.standard_normal(2), rng.standard_normal(2), 1.0)
    out = guarded_block(1, (0.5 * np.eye(2), c), s)
    assert graph_residual(out, 0.5 * np.eye(2), c) < 1e-12


def test_block_is_firmly_nonexpansive(rng):
    M = random_affine_nonexpansive(rng, 3)
    blk = GuardedBlock(1, (M, rng.standard_normal(3)), 3)
    U, V = 3 * rng.standard_normal((1000, 7)), 3 * rng.standard_normal((1000, 7))
    D = blk.apply_batch(U) - blk.apply_batch(V)
    assert np.all(np.einsum("ij,ij->i", D, D) <= np.einsum("ij,ij->i", D, U - V) + 1e-9)


def test_block_decomposition_identity(rng):
    blk = GuardedBlock(0, (random_affine_nonexpansive(rng, 2), rng.standard_normal(2)), 2)
    S = rng.standard_normal((50, 5))
    expected = S - blk.guard.project(S) + blk.guard.project(blk.constraint.project(S))
    assert np.allclose(blk.apply_batch(S), expected)


def test_branch_maps_must_be_nonexpansive():
    with pytest.raises(ProgramError):
        GuardedBlock(0, (2.0 * np.eye(2), None), 2)
    with pytest.raises(ProgramError):
        GuardedBlock(2, (np.eye(2), None), 2)


# programs ---------------------------------------------------------------------------

def test_load_time_verification():
    with pytest.raises(ProgramError):
        Program([AffineStep(1.1 * np.eye(3))], 1)
    with pytest.raises(ProgramError):
        Program([Permute([0, 0, 1])], 1)
    with pytest.raises(ProgramError):
        Program([Translate(np.ones(2))], 1)
    with pytest.raises(ProgramError):
        instruction_from_dict({"op": "jump"})


def test_empty_program_is_identity():
    prog = Program([], 2)
    s0 = np.array([1.0, 2.0, 3.0, 4.0, 1.0])
    final, report = run_state(prog, s0)
    assert np.array_equal(final, s0)
    assert report.op_applications == 0


def test_affine_program_counts():
    prog = Program([AffineStep(0.5 * np.eye(3))] * 3, 1)
    _, report = run_state(prog, np.ones(3))
    assert report.op_applications == 3
    assert report.end_to_end_modulus_bound == pytest.approx(0.125)


def test_guarded_program_ends_on_second_branch_graph(rng):
    d = 2
    f0 = (0.5 * np.eye(d), np.zeros(d))
    f1 = (np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([0.5, 0.0]))
    prog = Program([Guarded(f0, f1)], d)
    for b in (0.0, 1.0):
        final, report = run_state(prog, np.concatenate([rng.standard_normal(2 * d), [b]]))
        state = MCState.from_vector(final, d)
        assert state.b == b
        assert graph_residual(state, *f1) < 1e-12
        assert report.op_applications == 2 and report.guard_projections == 2


def test_program_round_trip(rng):
    prog = random_program(rng, d=2, K=6)
    back = Program.from_dict(prog.to_dict())
    s0 = rng.standard_normal(5)
    assert np.array_equal(run_state(prog, s0)[0], run_state(back, s0)[0])


def test_map_batch_matches_sequential(rng):
    prog = random_program(rng, d=2, K=7)
    S = rng.standard_normal((20, 5))
    batch = prog.map_batch(S)
    for s, out in zip(S, batch):
        assert np.allclose(run_state(prog, s)[0], out, atol=1e-12)


def test_program_is_nonexpansive(rng):
    prog = random_program(rng, d=2, K=6)
    U, V = rng.standard_normal((500, 5)), rng.standard_normal((500, 5))
    num = np.linalg.norm(prog.map_batch(U) - prog.map_batch(V), axis=1)
    assert np.all(num <= prog.modulus_bound() * np.linalg.norm(U - V, axis=1) + 1e-9)


# encoding and readout ---------------------------------------------------------------

def test_encoding_inputs():
    enc = Encoding(3, 4)
    assert np.array_equal(enc.encode("101").x, [1.0, 0.0, 1.0])
    st = enc.encode({"x": [0.5], "y": [0.25, 0.125], "b": 1})
    assert st.b == 1.0 and np.array_equal(st.y, [0.25, 0.125, 0.0])
    assert np.array_equal(enc.encode([0.0625, 1.0]).x, [0.0625, 1.0, 0.0])


def test_encoding_rejections():
    enc = Encoding(2, 4)
    with pytest.raises(EncodingError):
        enc.encode("2")
    with pytest.raises(EncodingError):
        enc.encode([0.01])
    with pytest.raises(EncodingError):
        enc.encode([1.0, 2.0, 3.0])
    with pytest.raises(EncodingError):
        enc.encode({"x": [0.0], "b": 0.5})


def test_decode_rounds_to_grid():
    out = Encoding(1, 2).decode([0.3, -0.9])
    assert out["values"] == [0.25, -1.0] and out["raw"] == [1, -4]


def test_execute_readout():
    prog = Program([AffineStep(np.array([[0, 0, 0], [1, 0, 0], [0, 0, 1.0]]))], 1,
                   readout=Readout([1]))
    output, _ = execute(prog, [0.75])
    assert output["values"] == [0.75]


# trace realization ------------------------------------------------------------------

def test_single_state_trace(rng):
    s = rng.standard_normal(5)
    prog = realize_trace([s])
    final, _ = run_state(prog, rng.standard_normal(5))
    assert np.array_equal(final, s)


def test_trace_replayed_bit_exactly(rng):
    states = rng.standard_normal((10, 7))
    prog = realize_trace(states)
    for _ in range(5):
        _, report = run_state(prog, rng.standard_normal(7) * 100)
        for expected, got in zip(states, report.trace[1:]):
            assert np.array_equal(got.to_vector(), expected)


def test_trace_output_matches_declared(rng):
    states = [np.concatenate([rng.standard_normal(2), [0.5, 0.25], [1.0]]) for _ in range(3)]
    prog = realize_trace(states, declared_output=[0.5, 0.25])
    output, _ = execute(prog, [0.0])
    assert output["values"] == prog.declared_output


def test_trace_validation():
    with pytest.raises(ProgramError):
        realize_trace([])
    with pytest.raises(ProgramError):
        realize_trace([np.zeros(4)])


# perturbation and audit ---------------------------------------------------------------

def test_zero_perturbation_is_exact(rng):
    prog = random_program(rng, d=2, K=6)
    (clean, noisy), report = perturbed_execute(prog, [0.5, 0.25], 0.0, seed=1)
    assert all(np.array_equal(a.to_vector(), b.to_vector()) for a, b in zip(clean, noisy))
    assert report.ok and np.all(report.deviations == 0.0)


def test_constant_write_annihilates_history():
    prog = Program([Translate(np.zeros(3)), ConstantWrite(np.ones(3)), Translate(np.zeros(3))], 1)
    _, report = perturbed_execute(prog, [0.5], [0.1, 0.0, 0.0], seed=2)
    assert report.deviations[1] > 0
    assert report.deviations[2] == 0.0 and report.deviations[3] == 0.0
    assert report.ok


def test_contractive_program_geometric_bound(rng):
    prog = Program([AffineStep(0.9 * np.eye(5))] * 30, 2)
    _, report = perturbed_execute(prog, [0.5, 0.25], 0.01, seed=3, noise_law="sphere")
    assert report.ok
    assert np.all(report.bounds <= 0.1 + 1e-12)
    assert np.all(report.deviations <= 0.1 + 1e-12)


def test_perturbation_validation():
    with pytest.raises(ValueError):
        perturbed_execute(Program([Translate(np.zeros(3))], 1), [0.0], -1.0)


def test_audit_examples():
    assert complexity_audit(Program([Translate(np.zeros(3))] * 5, 1)).predicted_applications == 5
    f = (np.eye(1), None)
    prog = Program([Guarded(f, f), Translate(np.zeros(3)), Guarded(f, f), Translate(np.zeros(3))], 1)
    audit = complexity_audit(prog)
    assert audit.guards == 2 and audit.predicted_applications == 8


def test_audit_admits_random_executions(rng):
    for _ in range(50):
        prog = random_program(rng)
        audit = complexity_audit(prog)
        _, report = run_state(prog, rng.standard_normal(prog.state_dim))
        assert audit.admits(report)
