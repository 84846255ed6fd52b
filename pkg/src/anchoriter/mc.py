"""Manuscript Computer: finite programs of nonexpansive operators on ``R^(2d+1)``.

The state is ``s = (x, y, b)`` with register block ``x``, result block ``y``
and guard ``b``. Instructions are constant writes, affine steps with
``|M| <= 1``, permutations, translations and guarded updates. A guarded
update applies the two literal blocks

    B_i = I - E_{H_i} + E_{H_i} P_{C_i},   H_i = {b = i},
    C_i = {(x, y, b) : y = F_i(x), b = i},

first ``B_0`` then ``B_1``, whatever the guard value. Because ``C_i`` lies
in ``H_i``, ``B_i s = (Q_i(x, y), b)``, where ``Q_i`` is the metric
projection of ``(x, y)`` onto the graph of ``F_i``. Each block is firmly
nonexpansive. The guard coordinate passes through unchanged, and the graph
projection also moves ``x``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, EncodingError, ProgramError
from .operators import NONEXPANSIVE_TOL, AffineMap, AffineSet, as_matrix, as_vector

log = logging.getLogger(__name__)

GUARD_TOL = 1e-9


@dataclass(eq=False)
class MCState:
    x: np.ndarray
    y: np.ndarray
    b: float

    @property
    def dim(self):
        return len(self.x)

    def to_vector(self):
        return np.concatenate([self.x, self.y, [self.b]])

    @classmethod
    def from_vector(cls, s, dim=None):
        s = np.asarray(s, dtype=np.float64)
        d = (len(s) - 1) // 2 if dim is None else dim
        if len(s) != 2 * d + 1:
            raise ProgramError(f"state vector of length {len(s)} does not match register size {d}")
        return cls(s[:d].copy(), s[d:2 * d].copy(), float(s[-1]))

    def guard_ok(self, tol=GUARD_TOL):
        return min(abs(self.b), abs(self.b - 1.0)) <= tol


def _affine_part(F, d, name):
    """Accept an ``AffineMap``, ``(M, c)`` pair or ``{"matrix", "offset"}`` dict."""
    if isinstance(F, AffineMap):
        M, c = F.matrix, F.offset
    elif isinstance(F, dict):
        M, c = F["matrix"], F.get("offset")
    elif isinstance(F, (tuple, list)) and len(F) == 2:
        M, c = F
    else:
        raise ProgramError(f"{name} must be an affine map, got {type(F).__name__}")
    M = as_matrix(M, name)
    if M.shape != (d, d):
        raise ProgramError(f"{name} must be {d}x{d}, got {M.shape}")
    c = np.zeros(d) if c is None else as_vector(c, d, f"{name} offset")
    norm = float(np.linalg.norm(M, 2))
    if norm > 1.0 + NONEXPANSIVE_TOL:
        raise ProgramError(f"{name} is not nonexpansive (|M| = {norm:.6g})")
    return M, c


class GuardedBlock:
    """``I - E_{H_i} + E_{H_i} P_{C_i}`` on states of register size ``d``."""

    def __init__(self, branch, F, d):
        if branch not in (0, 1):
            raise ProgramError("branch index must be 0 or 1")
        self.branch = branch
        self.d = d
        self.M, self.c = _affine_part(F, d, f"F{branch}")
        n = 2 * d + 1
        rows = np.zeros((d + 1, n))
        rows[:d, :d] = -self.M
        rows[:d, d:2 * d] = np.eye(d)
        rows[d, -1] = 1.0
        self.constraint = AffineSet(rows, np.concatenate([self.c, [float(branch)]]))
        e_b = np.zeros(n)
        e_b[-1] = 1.0
        self.guard = AffineSet.hyperplane(e_b, float(branch))

    def apply_batch(self, S):
        S = np.atleast_2d(S)
        return S - self.guard.project(S) + self.guard.project(self.constraint.project(S))

    def __call__(self, s):
        return self.apply_batch(s)[0]


def guarded_block(i, F, state):
    """Apply the literal guarded block for branch ``i`` to an ``MCState``."""
    block = GuardedBlock(i, F, state.dim)
    return MCState.from_vector(block(state.to_vector()), state.dim)


# Instructions -------------------------------------------------------------------

class Instruction:
    guarded = False

    def bind(self, d):
        """Verify against register size ``d``; called once at program load."""
        return self

    def modulus(self):
        raise NotImplementedError

    def apply(self, s):
        raise NotImplementedError


@dataclass(eq=False)
class ConstantWrite(Instruction):
    target: np.ndarray

    def bind(self, d):
        self.target = as_vector(self.target, 2 * d + 1, "constant write target")
        self.target.setflags(write=False)
        return self

    def modulus(self):
        return 0.0

    def apply(self, s):
        return self.target.copy()

    def to_dict(self):
        return {"op": "constant_write", "target": self.target.tolist()}


@dataclass(eq=False)
class AffineStep(Instruction):
    matrix: np.ndarray
    offset: np.ndarray | None = None

    def bind(self, d):
        n = 2 * d + 1
        self.matrix = as_matrix(self.matrix, "affine step")
        if self.matrix.shape != (n, n):
            raise ProgramError(f"affine step must be {n}x{n}, got {self.matrix.shape}")
        self.offset = np.zeros(n) if self.offset is None else as_vector(self.offset, n, "offset")
        self._norm = float(np.linalg.norm(self.matrix, 2))
        if self._norm > 1.0 + NONEXPANSIVE_TOL:
            raise ProgramError(f"affine step is not nonexpansive (|M| = {self._norm:.6g})")
        return self

    def modulus(self):
        return min(self._norm, 1.0)

    def apply(self, s):
        return self.matrix @ s + self.offset

    def to_dict(self):
        return {"op": "affine_step", "matrix": self.matrix.tolist(), "offset": self.offset.tolist()}


@dataclass(eq=False)
class Permute(Instruction):
    perm: list

    def bind(self, d):
        self.perm = [int(i) for i in self.perm]
        if sorted(self.perm) != list(range(2 * d + 1)):
            raise ProgramError("permute needs a permutation of all state coordinates")
        return self

    def modulus(self):
        return 1.0

    def apply(self, s):
        return s[self.perm]

    def to_dict(self):
        return {"op": "permute", "perm": list(self.perm)}


@dataclass(eq=False)
class Translate(Instruction):
    offset: np.ndarray

    def bind(self, d):
        self.offset = as_vector(self.offset, 2 * d + 1, "translation")
        return self

    def modulus(self):
        return 1.0

    def apply(self, s):
        return s + self.offset

    def to_dict(self):
        return {"op": "translate", "offset": self.offset.tolist()}


@dataclass(eq=False)
class Guarded(Instruction):
    f0: object
    f1: object
    guarded = True

    def bind(self, d):
        self.blocks = (GuardedBlock(0, self.f0, d), GuardedBlock(1, self.f1, d))
        return self

    def modulus(self):
        return 1.0

    def apply(self, s):
        for block in self.blocks:
            s = block(s)
        return s

    def to_dict(self):
        return {
            "op": "guarded",
            "f0": {"matrix": self.blocks[0].M.tolist(), "offset": self.blocks[0].c.tolist()},
            "f1": {"matrix": self.blocks[1].M.tolist(), "offset": self.blocks[1].c.tolist()},
        }


def instruction_from_dict(doc):
    op = doc.get("op")
    if op is None:
        raise ProgramError(f"instruction without an 'op' field: {doc!r}")
    if op == "constant_write":
        return ConstantWrite(doc["target"])
    if op == "affine_step":
        return AffineStep(doc["matrix"], doc.get("offset"))
    if op == "permute":
        return Permute(doc["perm"])
    if op == "translate":
        return Translate(doc["offset"])
    if op == "guarded":
        return Guarded(doc["f0"], doc["f1"])
    raise ProgramError(f"unknown instruction {op!r}")


# Encoding and readout -------------------------------------------------------------

@dataclass(frozen=True)
class Encoding:
    """Fixed-point encoding with step ``2^-fractional_bits`` per coordinate."""

    dims: int
    fractional_bits: int = 16

    @property
    def step(self):
        return 2.0 ** -self.fractional_bits

    def _check(self, values, name):
        v = np.asarray(values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise EncodingError(f"{name} contains NaN or Inf")
        scaled = v * 2.0 ** self.fractional_bits
        if np.any(scaled != np.round(scaled)) or np.any(np.abs(scaled) >= 2.0 ** 53):
            raise EncodingError(f"{name} is not representable with {self.fractional_bits} fractional bits")
        return v

    def encode(self, data, guard=0.0):
        """Input as a bitstring, a list of values for ``x`` or a dict with ``x``/``y``/``b``."""
        d = self.dims
        x, y, b = np.zeros(d), np.zeros(d), float(guard)
        if isinstance(data, str):
            if set(data) - {"0", "1"} or len(data) > d:
                raise EncodingError(f"bitstring must hold at most {d} binary digits")
            x[: len(data)] = [float(ch) for ch in data]
        elif isinstance(data, dict):
            if "x" in data:
                vals = self._check(data["x"], "x")
                if len(vals) > d:
                    raise EncodingError(f"x has {len(vals)} entries for {d} registers")
                x[: len(vals)] = vals
            if "y" in data:
                vals = self._check(data["y"], "y")
                if len(vals) > d:
                    raise EncodingError(f"y has {len(vals)} entries for {d} registers")
                y[: len(vals)] = vals
            b = float(data.get("b", guard))
            if b not in (0.0, 1.0):
                raise EncodingError("guard must be 0 or 1")
        else:
            vals = self._check(data, "input")
            if len(vals) > d:
                raise EncodingError(f"input has {len(vals)} entries for {d} registers")
            x[: len(vals)] = vals
        return MCState(x, y, b)

    def decode(self, values):
        v = np.asarray(values, dtype=np.float64)
        raw = np.round(v * 2.0 ** self.fractional_bits)
        return {"values": (raw * self.step).tolist(), "raw": [int(r) for r in raw]}

    def to_dict(self):
        return {"dims": self.dims, "fractional_bits": self.fractional_bits}


@dataclass(eq=False)
class Readout:
    """``R(s) = matrix @ s[indices] + offset``; defaults to the ``y`` block."""

    indices: list
    matrix: np.ndarray | None = None
    offset: np.ndarray | None = None

    def __post_init__(self):
        self.indices = [int(i) for i in self.indices]
        k = len(self.indices)
        self.matrix = np.eye(k) if self.matrix is None else as_matrix(self.matrix, "readout")
        if self.matrix.shape[1] != k:
            raise ProgramError("readout matrix width must match the index count")
        self.offset = np.zeros(self.matrix.shape[0]) if self.offset is None else as_vector(
            self.offset, self.matrix.shape[0], "readout offset"
        )

    @classmethod
    def y_block(cls, d):
        return cls(list(range(d, 2 * d)))

    def __call__(self, s):
        return self.matrix @ np.asarray(s)[self.indices] + self.offset

    def to_dict(self):
        return {"indices": self.indices, "matrix": self.matrix.tolist(), "offset": self.offset.tolist()}


# Programs ----------------------------------------------------------------------------

class Program:
    """A verified, immutable instruction list with readout and encoding."""

    def __init__(self, instructions, dims, readout=None, encoding=None, declared_output=None):
        self.dims = int(dims)
        if self.dims < 1:
            raise ProgramError("register size must be >= 1")
        self.encoding = encoding or Encoding(self.dims)
        if self.encoding.dims != self.dims:
            raise ProgramError("encoding dims differ from program dims")
        self.readout = readout or Readout.y_block(self.dims)
        if any(not 0 <= i < self.state_dim for i in self.readout.indices):
            raise ProgramError("readout index out of range")
        try:
            self.instructions = tuple(ins.bind(self.dims) for ins in instructions)
        except DimensionError as exc:
            raise ProgramError(f"instruction does not fit register size {self.dims}: {exc}") from exc
        self.declared_output = declared_output

    @property
    def state_dim(self):
        return 2 * self.dims + 1

    @property
    def guard_count(self):
        return sum(1 for ins in self.instructions if ins.guarded)

    def moduli(self):
        return [ins.modulus() for ins in self.instructions]

    def modulus_bound(self):
        return float(np.prod(self.moduli())) if self.instructions else 1.0

    def map_batch(self, S):
        """The realized program map on a batch of raw state vectors."""
        S = np.array(S, dtype=np.float64, copy=True)
        for ins in self.instructions:
            if isinstance(ins, Guarded):
                for block in ins.blocks:
                    S = block.apply_batch(S)
            elif isinstance(ins, ConstantWrite):
                S = np.broadcast_to(ins.target, S.shape).copy()
            elif isinstance(ins, AffineStep):
                S = S @ ins.matrix.T + ins.offset
            elif isinstance(ins, Permute):
                S = S[:, ins.perm]
            else:
                S = S + ins.offset
        return S

    def to_dict(self):
        doc = {
            "instructions": [ins.to_dict() for ins in self.instructions],
            "readout": self.readout.to_dict(),
            "encoding": self.encoding.to_dict(),
        }
        if self.declared_output is not None:
            doc["declared_output"] = self.declared_output
        return doc

    @classmethod
    def from_dict(cls, doc):
        enc_doc = doc.get("encoding", {})
        if "dims" not in enc_doc:
            raise ProgramError("program encoding must declare dims")
        encoding = Encoding(int(enc_doc["dims"]), int(enc_doc.get("fractional_bits", 16)))
        readout = None
        if "readout" in doc:
            r = doc["readout"]
            readout = Readout(r["indices"], r.get("matrix"), r.get("offset"))
        return cls(
            [instruction_from_dict(i) for i in doc.get("instructions", [])],
            encoding.dims,
            readout,
            encoding,
            doc.get("declared_output"),
        )


@dataclass(eq=False)
class ExecutionReport:
    op_applications: int
    guard_projections: int
    end_to_end_modulus_bound: float
    trace: list = field(default_factory=list)
    guard_well_formed: bool = True

    def to_dict(self, include_trace=False):
        doc = {
            "op_applications": self.op_applications,
            "guard_projections": self.guard_projections,
            "end_to_end_modulus_bound": self.end_to_end_modulus_bound,
            "guard_well_formed": self.guard_well_formed,
        }
        if include_trace:
            doc["trace"] = [s.to_vector().tolist() for s in self.trace]
        return doc


def run_state(program, s0):
    """Execute from a raw state vector. Returns ``(final_vector, report)``."""
    s = as_vector(s0, program.state_dim, "initial state").copy()
    d = program.dims
    trace = [MCState.from_vector(s, d)]
    apps = guards = 0
    well_formed = trace[0].guard_ok()
    for ins in program.instructions:
        s = ins.apply(s)
        if ins.guarded:
            apps += len(ins.blocks)
            guards += len(ins.blocks)
        else:
            apps += 1
        state = MCState.from_vector(s, d)
        well_formed = well_formed and state.guard_ok()
        trace.append(state)
    if not well_formed:
        log.debug("guard register left {0, 1} during execution")
    report = ExecutionReport(apps, guards, program.modulus_bound(), trace, well_formed)
    return s, report


def execute(program, data, guard=0.0):
    """Encode ``data``, run the program, and decode ``R(x_N)``. Returns ``(output, report)``."""
    s0 = program.encoding.encode(data, guard).to_vector()
    final, report = run_state(program, s0)
    return program.encoding.decode(program.readout(final)), report


def realize_trace(states, declared_output=None, readout=None, fractional_bits=16):
    """Program of constant writes that reproduces ``states`` from any initial state."""
    vecs = [s.to_vector() if isinstance(s, MCState) else as_vector(s, name="trace state") for s in states]
    if not vecs:
        raise ProgramError("cannot realize an empty trace")
    n = len(vecs[0])
    if n % 2 != 1 or any(len(v) != n for v in vecs):
        raise ProgramError("trace states must share an odd length 2d+1")
    d = (n - 1) // 2
    return Program(
        [ConstantWrite(v.copy()) for v in vecs],
        d,
        readout,
        Encoding(d, fractional_bits),
        declared_output,
    )


# Perturbations and audits ------------------------------------------------------------

def _ball_noise(rng, n, radius, law):
    if radius == 0.0:
        return np.zeros(n)
    g = rng.standard_normal(n)
    g /= np.linalg.norm(g)
    if law == "sphere":
        return radius * g
    return radius * rng.uniform() ** (1.0 / n) * g


@dataclass(eq=False)
class PerturbationReport:
    deviations: np.ndarray
    bounds: np.ndarray
    violations: list

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        return {
            "deviations": self.deviations.tolist(),
            "bounds": self.bounds.tolist(),
            "violations": self.violations,
            "ok": self.ok,
        }


def perturbed_execute(program, data, deltas, noise_law="ball", seed=0, guard=0.0, rtol=1e-9, atol=1e-12):
    """Run clean and perturbed executions and check the variation-of-constants bound.

    Step ``t`` of the perturbed run is ``U_t(s) + eta_t`` with ``|eta_t| <= delta_t``
    (uniform in the ball, or on the sphere for ``noise_law="sphere"``). The
    deviation after step ``t`` must satisfy
    ``|s~_t - s_t| <= sum_{j<=t} (prod_{j<i<=t} tau_i) delta_j`` with ``tau_i``
    the instruction moduli.
    """
    K = len(program.instructions)
    deltas = np.broadcast_to(np.asarray(deltas, dtype=np.float64), (K,)).copy()
    if np.any(deltas < 0):
        raise ValueError("deltas must be nonnegative")
    rng = np.random.default_rng(seed)
    s0 = program.encoding.encode(data, guard).to_vector()
    _, clean_report = run_state(program, s0)
    s = s0.copy()
    perturbed = [MCState.from_vector(s, program.dims)]
    for ins, delta in zip(program.instructions, deltas):
        s = ins.apply(s) + _ball_noise(rng, len(s), float(delta), noise_law)
        perturbed.append(MCState.from_vector(s, program.dims))
    tau = program.moduli()
    bounds = np.zeros(K + 1)
    for t in range(1, K + 1):
        bounds[t] = sum(math.prod(tau[j:t]) * deltas[j - 1] for j in range(1, t + 1))
    dev = np.array([
        np.linalg.norm(a.to_vector() - b.to_vector()) for a, b in zip(clean_report.trace, perturbed)
    ])
    violations = [int(t) for t in np.flatnonzero(dev > bounds * (1.0 + rtol) + atol)]
    return (clean_report.trace, perturbed), PerturbationReport(dev, bounds, violations)


@dataclass(frozen=True)
class AuditReport:
    instructions: int
    guards: int
    predicted_applications: int
    predicted_modulus_bound: float

    def admits(self, report):
        """True when an execution's dynamic counts stay within the static predictions."""
        return (
            report.op_applications <= self.predicted_applications
            and report.end_to_end_modulus_bound <= self.predicted_modulus_bound + 1e-12
        )

    def to_dict(self):
        return {
            "instructions": self.instructions,
            "guards": self.guards,
            "predicted_applications": self.predicted_applications,
            "predicted_modulus_bound": self.predicted_modulus_bound,
        }


def complexity_audit(program):
    K, G = len(program.instructions), program.guard_count
    return AuditReport(K, G, K + 2 * G, program.modulus_bound())
