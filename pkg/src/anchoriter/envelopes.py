"""Contraction envelopes built from products of per-step Lipschitz moduli.

Conventions: steps are numbered ``1..N``; ``n_0 = 0`` so the steps before the
first event belong to block 1, and block ``k`` covers steps
``n_{k-1}+1 .. n_k``. Steps after the last event are in no block.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import AnchorError

LOG_SPACE_LENGTH = 10_000
LOG_SPACE_FLOOR = 1e-300


@dataclass(frozen=True)
class EventSchedule:
    event_times: tuple
    horizon: int

    def __post_init__(self):
        times = tuple(int(t) for t in self.event_times)
        object.__setattr__(self, "event_times", times)
        object.__setattr__(self, "horizon", int(self.horizon))
        if any(t < 1 for t in times):
            raise AnchorError("event times must be >= 1")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise AnchorError("event times must be strictly increasing")
        if times and times[-1] > self.horizon:
            raise AnchorError(f"event at {times[-1]} lies beyond horizon {self.horizon}")

    @classmethod
    def periodic(cls, period, horizon):
        return cls(tuple(range(period, horizon + 1, period)), horizon)

    @classmethod
    def from_gaps(cls, gaps, horizon=None):
        times = tuple(int(t) for t in np.cumsum(gaps))
        if horizon is None:
            horizon = times[-1] if times else 0
        return cls(times, horizon)

    def __len__(self):
        return len(self.event_times)

    def gaps(self):
        """``n_k - n_{k-1}`` for every event, with ``n_0 = 0``."""
        prev = (0,) + self.event_times[:-1]
        return [b - a for a, b in zip(prev, self.event_times)]

    def uniform_gap(self):
        """Largest gap between consecutive events (needs at least two events)."""
        if len(self.event_times) < 2:
            raise AnchorError("uniform gap needs at least two events")
        t = self.event_times
        return max(b - a for a, b in zip(t, t[1:]))

    def is_event(self):
        """Boolean mask over steps ``0..N`` marking event steps."""
        mask = np.zeros(self.horizon + 1, dtype=bool)
        mask[list(self.event_times)] = True
        return mask


@dataclass(frozen=True)
class BlockFactors:
    """Block factors and running products; the log fields stay finite when the products overflow."""

    lambdas: np.ndarray
    cumulative: np.ndarray
    log_lambdas: np.ndarray
    log_cumulative: np.ndarray


def as_moduli(moduli):
    tau = np.asarray(moduli, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(tau)) or np.any(tau < 0):
        raise AnchorError("moduli must be finite and nonnegative")
    return tau


def _product(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return 1.0
    if values.size > LOG_SPACE_LENGTH or np.any(values < LOG_SPACE_FLOOR):
        if np.any(values == 0.0):
            return 0.0
        return math.exp(math.fsum(np.log(values)))
    return float(np.prod(values))


def _log_product(values):
    values = np.asarray(values, dtype=np.float64)
    if np.any(values == 0.0):
        return -math.inf
    return math.fsum(np.log(values))


def _compensated_cumsum(values):
    """Running sums with Neumaier compensation."""
    out = np.empty(len(values))
    total = comp = 0.0
    for i, v in enumerate(values):
        v = float(v)
        t = total + v
        if math.isinf(t) or math.isnan(t):
            total, comp = t, 0.0
        else:
            comp += (total - t) + v if abs(total) >= abs(v) else (v - t) + total
            total = t
        out[i] = total + comp
    return out


def _cumulative(lambdas):
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if np.any(lambdas < LOG_SPACE_FLOOR) and np.all(lambdas > 0):
        return np.exp(np.cumsum(np.log(lambdas)))
    return np.cumprod(lambdas)


def block_products(moduli, schedule):
    """Per-block factors ``prod_{t in (n_{k-1}, n_k]} tau_t`` and their running products."""
    tau = as_moduli(moduli)
    if len(schedule) == 0:
        raise AnchorError("schedule has no events")
    if schedule.horizon > len(tau):
        raise AnchorError(f"schedule horizon {schedule.horizon} exceeds {len(tau)} moduli")
    bounds = (0,) + schedule.event_times
    spans = list(zip(bounds, bounds[1:]))
    lambdas = np.array([_product(tau[a:b]) for a, b in spans])
    log_lambdas = np.array([_log_product(tau[a:b]) for a, b in spans])
    with np.errstate(over="ignore"):
        cumulative = _cumulative(lambdas)
    return BlockFactors(lambdas, cumulative, log_lambdas, _compensated_cumsum(log_lambdas))


def envelope_variable(moduli, schedule, d0):
    """Distance bounds at the event times: ``cumulative[k] * d0``."""
    if d0 < 0:
        raise AnchorError("initial distance must be nonnegative")
    return block_products(moduli, schedule).cumulative * d0


def envelope_stepwise(moduli, d0):
    """Bound at every step ``t``: ``prod_{s <= t} tau_s * d0``, with step 0 included."""
    tau = as_moduli(moduli)
    return np.concatenate([[1.0], _cumulative(tau)]) * d0


def envelope_uniform_gap(tau_bar, M, n1, d_at_n1, n):
    """``tau_bar ** (1 + floor((n - n1) / M)) * d_at_n1`` for ``n >= n1``."""
    if M < 1:
        raise AnchorError("gap M must be >= 1")
    if n < n1:
        raise AnchorError(f"step {n} precedes the first event {n1}")
    return tau_bar ** (1 + (n - n1) // M) * d_at_n1


def km_modulus(alpha, q):
    """Lipschitz constant ``(1 - alpha) + alpha q`` of a Krasnosel'skii-Mann step."""
    if not 0.0 < alpha <= 1.0:
        raise AnchorError(f"alpha must lie in (0, 1], got {alpha}")
    if not 0.0 <= q < 1.0:
        raise AnchorError(f"q must lie in [0, 1), got {q}")
    return (1.0 - alpha) + alpha * q


def drift_block_lambda(rhos, mus):
    """Block factor: product of the drift moduli times product of intra-event moduli.

    Intra-event moduli above 1 are allowed (with a warning) so that
    non-contractive regimes can still be evaluated.
    """
    rhos = np.asarray(rhos, dtype=np.float64).reshape(-1)
    mus = np.asarray(mus, dtype=np.float64).reshape(-1)
    if np.any(rhos < 0) or np.any(mus < 0):
        raise AnchorError("moduli must be nonnegative")
    if np.any(mus > 1.0):
        warnings.warn("intra-event modulus above 1; block is not an event contraction", stacklevel=2)
    return _product(rhos) * _product(mus)
