"""Anchored drift-projection iteration and nested-projection schemes.

A run applies ``x_t = S_t(x_{t-1})`` on ordinary steps and, at each event
step ``n_k``, the block ``P_{A_k} A_{k,m_k} ... A_{k,1}``. The event step uses
up its time index: no drift fires at ``n_k``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .envelopes import EventSchedule, drift_block_lambda, envelope_stepwise
from .errors import DimensionError, FixedPointError, NestingError
from .operators import FEASIBILITY_TOL, NONEXPANSIVE_TOL, AffineSet, Operator, as_vector

log = logging.getLogger(__name__)

FEJER_TOL = 1e-9
ENVELOPE_RTOL = 1e-9


@dataclass(eq=False)
class EventBlock:
    anchor: AffineSet
    intra_maps: list = field(default_factory=list)

    def __post_init__(self):
        self.intra_maps = list(self.intra_maps)
        for j, op in enumerate(self.intra_maps):
            if op.bound() > 1.0 + NONEXPANSIVE_TOL:
                warnings.warn(
                    f"intra-event map {j} has modulus bound {op.bound():.6g} > 1", stacklevel=3
                )

    def apply(self, y):
        for op in self.intra_maps:
            y = op(y)
        return self.anchor.project(y)

    def intra_moduli(self):
        return [op.bound() for op in self.intra_maps]


@dataclass(eq=False)
class RunConfig:
    """Drifts, events, anchors and the common fixed point ``z`` of one run.

    ``drifts`` is either one operator used at every drift step or a list with
    one operator per step ``1..N`` (entries at event steps are ignored).
    """

    drifts: object
    schedule: EventSchedule
    blocks: list
    x0: np.ndarray
    z: np.ndarray
    record_local_moduli: bool = True
    fixed_point_tol: float = FEASIBILITY_TOL

    def __post_init__(self):
        self.z = as_vector(self.z, name="z")
        d = len(self.z)
        self.x0 = as_vector(self.x0, d, "x0")
        self.blocks = list(self.blocks)
        if len(self.blocks) != len(self.schedule):
            raise DimensionError(
                f"{len(self.blocks)} event blocks for {len(self.schedule)} events"
            )
        if isinstance(self.drifts, Operator):
            self._drift_list = None
        else:
            self._drift_list = list(self.drifts)
            if len(self._drift_list) != self.schedule.horizon:
                raise DimensionError(
                    f"{len(self._drift_list)} drifts for horizon {self.schedule.horizon}"
                )
        self._check_fixed_point()

    @property
    def dim(self):
        return len(self.z)

    @property
    def horizon(self):
        return self.schedule.horizon

    def drift_at(self, t):
        return self.drifts if self._drift_list is None else self._drift_list[t - 1]

    def _check_fixed_point(self):
        z = self.z
        tol = self.fixed_point_tol * max(1.0, float(np.linalg.norm(z)))
        drifts = [(1, self.drifts)] if self._drift_list is None else enumerate(self._drift_list, 1)
        for t, op in drifts:
            gap = float(np.linalg.norm(op(z) - z))
            if gap > tol:
                raise FixedPointError(f"drift at step {t} moves z by {gap:.3e}", "drift", t)
        for k, block in enumerate(self.blocks, 1):
            for j, op in enumerate(block.intra_maps, 1):
                gap = float(np.linalg.norm(op(z) - z))
                if gap > tol:
                    raise FixedPointError(
                        f"intra map {j} of event {k} moves z by {gap:.3e}", "intra", (k, j)
                    )
            if not block.anchor.contains(z, self.fixed_point_tol):
                raise FixedPointError(f"z does not lie in anchor {k}", "anchor", k)

    def step_moduli(self):
        """Per-step modulus bounds: drift bound on drift steps, block bound on event steps."""
        tau = np.empty(self.horizon)
        events = dict(zip(self.schedule.event_times, self.blocks))
        for t in range(1, self.horizon + 1):
            if t in events:
                tau[t - 1] = float(np.prod(events[t].intra_moduli())) if events[t].intra_maps else 1.0
            else:
                tau[t - 1] = self.drift_at(t).bound()
        return tau

    def block_lambdas(self):
        """``lambda_k = prod(rho_t over drift steps of block k) * prod(mu_{k,j})``."""
        bounds = (0,) + self.schedule.event_times
        out = []
        for k, block in enumerate(self.blocks):
            a, b = bounds[k], bounds[k + 1]
            rhos = [self.drift_at(t).bound() for t in range(a + 1, b)]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                out.append(drift_block_lambda(rhos, block.intra_moduli()))
        return np.array(out)


@dataclass(eq=False)
class RunTrace:
    states: np.ndarray
    distances: np.ndarray
    event_marks: np.ndarray
    local_moduli: np.ndarray | None = None

    @property
    def horizon(self):
        return len(self.distances) - 1

    def event_steps(self):
        return np.flatnonzero(self.event_marks)

    def rows(self):
        """``(step, distance, event_flag, local_modulus)`` tuples."""
        local = self.local_moduli
        for t in range(len(self.distances)):
            lm = float("nan") if local is None else float(local[t])
            yield t, float(self.distances[t]), bool(self.event_marks[t]), lm


def _local_moduli(distances):
    lm = np.full(len(distances), np.nan)
    prev = distances[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        lm[1:] = np.where(prev > 0, distances[1:] / np.where(prev > 0, prev, 1.0), 0.0)
    return lm


def run(config):
    """Execute the anchored iteration and record every state and distance to ``z``."""
    N, d = config.horizon, config.dim
    states = np.empty((N + 1, d))
    states[0] = config.x0
    marks = config.schedule.is_event()
    blocks = dict(zip(config.schedule.event_times, config.blocks))
    x = config.x0
    for t in range(1, N + 1):
        if marks[t]:
            x = blocks[t].apply(x)
        else:
            x = config.drift_at(t)(x)
        states[t] = x
    distances = np.linalg.norm(states - config.z, axis=1)
    local = _local_moduli(distances) if config.record_local_moduli else None
    return RunTrace(states, distances, marks, local)


def event_bounds(config, d0=None):
    """Cumulative block-factor bounds ``(prod_{j<=k} lambda_j) |x_0 - z|`` at the event times."""
    if d0 is None:
        d0 = float(np.linalg.norm(config.x0 - config.z))
    return np.cumprod(config.block_lambdas()) * d0


def stepwise_bounds(config, d0=None):
    """Partial-product bound at every step ``0..N`` (valid between events too)."""
    if d0 is None:
        d0 = float(np.linalg.norm(config.x0 - config.z))
    return envelope_stepwise(config.step_moduli(), d0)


@dataclass(frozen=True)
class EnvelopeReport:
    checked: tuple
    violations: tuple
    worst_ratio: float

    @property
    def certified(self):
        return not self.violations

    def to_dict(self):
        return {
            "checked": len(self.checked),
            "violations": list(self.violations),
            "worst_ratio": self.worst_ratio,
            "certified": self.certified,
        }


def verify_envelope(trace, bounds, at="events", rtol=ENVELOPE_RTOL):
    """List every step whose distance exceeds ``bound * (1 + rtol)``.

    ``at="events"`` aligns ``bounds`` with the event steps, ``at="all"`` with
    steps ``0..N``.
    """
    if at == "events":
        steps = trace.event_steps()
    elif at == "all":
        steps = np.arange(len(trace.distances))
    else:
        raise ValueError(f"at must be 'events' or 'all', got {at!r}")
    bounds = np.asarray(bounds, dtype=np.float64)
    if len(bounds) != len(steps):
        raise DimensionError(f"{len(bounds)} bounds for {len(steps)} checked steps")
    dist = trace.distances[steps]
    bad = dist > bounds * (1.0 + rtol)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(bounds > 0, dist / np.where(bounds > 0, bounds, 1.0),
                          np.where(dist > 0, np.inf, 0.0))
    worst = float(ratios.max()) if len(ratios) else 0.0
    return EnvelopeReport(tuple(int(s) for s in steps), tuple(int(s) for s in steps[bad]), worst)


# Nested and approximately nested projections ---------------------------------

def check_nested(sets, tol=FEASIBILITY_TOL):
    """Raise ``NestingError`` unless ``sets[k+1]`` is contained in ``sets[k]`` for every k.

    Containment is decided algebraically: every constraint row of the outer
    set must lie in the row space of the inner one, and the inner set's
    least-norm point must satisfy the outer offsets.
    """
    for k in range(len(sets) - 1):
        outer, inner = sets[k], sets[k + 1]
        if outer.dim != inner.dim:
            raise NestingError(f"sets {k} and {k + 1} differ in dimension", (k, k + 1))
        A = outer.matrix
        if A.shape[0] == 0:
            continue
        V = inner.row_basis
        leak = np.linalg.norm(A - (A @ V) @ V.T)
        if leak > tol * max(1.0, float(np.linalg.norm(A))):
            raise NestingError(f"set {k + 1} is not contained in set {k}", (k, k + 1))
        if not outer.contains(inner.point, tol):
            raise NestingError(f"set {k + 1} is not contained in set {k}", (k, k + 1))


@dataclass(eq=False)
class NestedRun:
    trace: RunTrace
    fejer_violations: list
    squared_displacement_sum: float
    z: np.ndarray


def nested_projection_run(sets, x0, z=None, tol=FEJER_TOL):
    """Project successively onto nested affine sets, ``x^(k) = P_{A_k} x^(k-1)``.

    ``z`` defaults to the single point of the last set when it is a singleton,
    otherwise to the final iterate. Each step is checked against
    ``|x^(k) - z|^2 + |x^(k) - x^(k-1)|^2 <= |x^(k-1) - z|^2 + tol``.
    """
    sets = list(sets)
    check_nested(sets)
    x = as_vector(x0, sets[0].dim, "x0")
    states = [x]
    for s in sets:
        x = s.project(x)
        states.append(x)
    states = np.array(states)
    if z is None:
        z = sets[-1].point if sets[-1].is_singleton else states[-1]
    z = as_vector(z, len(x), "z")
    distances = np.linalg.norm(states - z, axis=1)
    steps = np.linalg.norm(np.diff(states, axis=0), axis=1)
    lhs = distances[1:] ** 2 + steps**2
    fejer = [int(k) + 1 for k in np.flatnonzero(lhs > distances[:-1] ** 2 + tol)]
    marks = np.ones(len(states), dtype=bool)
    marks[0] = False
    trace = RunTrace(states, distances, marks, _local_moduli(distances))
    return NestedRun(trace, fejer, float(np.sum(steps**2)), z)


@dataclass(eq=False)
class ApproxNestingReport:
    displacements: np.ndarray
    violations: list
    cumulative_displacement: float
    delta_sum: float
    tail_bounds: np.ndarray
    tail_realized: np.ndarray

    @property
    def cauchy_ok(self):
        return bool(np.all(self.tail_realized <= self.tail_bounds + FEJER_TOL))


def approx_nesting_run(sets, deltas, x0, z=None, tol=FEJER_TOL):
    """Project onto ``C_1, C_2, ...`` and check ``|x^(k+1) - x^(k)| <= delta_k``.

    ``deltas[k-1]`` bounds the move from ``x^(k)`` to ``x^(k+1)``, so there is
    one delta per consecutive pair of sets. The first move, from ``x0`` onto
    ``C_1``, is recorded but not constrained. Violations are reported, not raised.
    """
    sets = list(sets)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1)
    if len(deltas) != len(sets) - 1:
        raise DimensionError(f"need {len(sets) - 1} deltas, got {len(deltas)}")
    if np.any(deltas < 0):
        raise ValueError("deltas must be nonnegative")
    x = as_vector(x0, sets[0].dim, "x0")
    states = [x]
    for s in sets:
        x = s.project(x)
        states.append(x)
    states = np.array(states)
    moves = np.linalg.norm(np.diff(states, axis=0), axis=1)
    constrained = moves[1:]
    violations = [int(k) + 1 for k in np.flatnonzero(constrained > deltas + tol)]
    for k in violations:
        log.info("approximate nesting: step %d moved %.3e > delta %.3e", k, constrained[k - 1], deltas[k - 1])
    # tail from x^(k), k = 1..K: |x^(K) - x^(k)| <= sum_{j >= k} delta_j
    tails = np.concatenate([np.cumsum(deltas[::-1])[::-1], [0.0]])
    realized = np.linalg.norm(states[1:] - states[-1], axis=1)
    if z is None:
        z = states[-1]
    z = as_vector(z, len(x), "z")
    distances = np.linalg.norm(states - z, axis=1)
    marks = np.ones(len(states), dtype=bool)
    marks[0] = False
    trace = RunTrace(states, distances, marks, _local_moduli(distances))
    report = ApproxNestingReport(
        moves, violations, float(np.sum(constrained)), float(np.sum(deltas)), tails, realized
    )
    return trace, report
