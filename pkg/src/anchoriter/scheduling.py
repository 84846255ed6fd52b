"""Event schedules: random block laws, the SLLN classifier, Monte-Carlo sweeps,
the adversarial growing-gap schedule and the scalar staircase simulator.

Random streams
--------------
Sweeps derive one independent substream per trial with
``numpy.random.SeedSequence(seed).spawn(trials)`` and drive each with the
counter-based Philox4x64-10 bit generator. Within a trial, a block law is
sampled in three batched draws: all gaps, then all drift log-moduli, then all
event moduli (with rejection of event draws outside ``(0, 1.5]``).
``run_sim`` follows the reference harness and uses ``default_rng(seed)``.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .envelopes import EventSchedule
from .errors import AnchorError

log = logging.getLogger(__name__)

MU_UPPER = 1.5
RNG_ALGORITHM = "SeedSequence.spawn + Philox4x64-10"

CONVERGENT = "convergent"
DIVERGENT = "divergent"
INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class GapLaw:
    """Block length law: ``fixed`` (gap = value) or ``one_plus_geometric``.

    For ``one_plus_geometric`` the gap is ``1 + Geometric(p = 1/value)`` with
    the geometric part supported on ``{1, 2, ...}``, so ``value`` is the mean
    number of drift steps per block and the mean gap is ``1 + value``.
    """

    kind: str = "fixed"
    value: float = 5

    def __post_init__(self):
        if self.kind == "fixed":
            if int(self.value) != self.value or self.value < 1:
                raise AnchorError("fixed gap must be an integer >= 1")
        elif self.kind == "one_plus_geometric":
            if self.value < 1:
                raise AnchorError("geometric mean must be >= 1")
        else:
            raise AnchorError(f"unknown gap law {self.kind!r}")

    def sample(self, rng, n):
        if self.kind == "fixed":
            return np.full(n, int(self.value), dtype=np.int64)
        return 1 + rng.geometric(p=1.0 / self.value, size=n).astype(np.int64)

    def mean_drift_steps(self):
        return self.value - 1 if self.kind == "fixed" else self.value


@dataclass(frozen=True)
class RhoLaw:
    """Drift modulus law: ``fixed`` (rho = loc) or ``lognormal`` (log rho ~ N(loc, scale^2))."""

    kind: str = "fixed"
    loc: float = 1.0
    scale: float = 0.0

    def __post_init__(self):
        if self.kind == "fixed":
            if not self.loc > 0:
                raise AnchorError("fixed drift modulus must be positive")
        elif self.kind == "lognormal":
            if self.scale < 0:
                raise AnchorError("lognormal scale must be nonnegative")
        else:
            raise AnchorError(f"unknown drift law {self.kind!r}")

    def sample_log(self, rng, n):
        if self.kind == "fixed":
            return np.full(n, math.log(self.loc))
        return rng.normal(self.loc, self.scale, size=n)


@dataclass(frozen=True)
class MuLaw:
    """Event modulus law: ``fixed`` (mu = mean) or ``gaussian`` truncated to ``(0, 1.5]``."""

    kind: str = "fixed"
    mean: float = 1.0
    sd: float = 0.0

    def __post_init__(self):
        if self.kind == "fixed":
            if not 0 < self.mean:
                raise AnchorError("fixed event modulus must be positive")
        elif self.kind == "gaussian":
            if self.sd < 0:
                raise AnchorError("gaussian sd must be nonnegative")
            if not 0 < self.mean <= MU_UPPER and self.sd == 0:
                raise AnchorError("degenerate gaussian outside (0, 1.5]")
        else:
            raise AnchorError(f"unknown event law {self.kind!r}")

    def sample(self, rng, n):
        """Return ``(mu, resampled)``: out-of-range draws are redrawn, never clamped."""
        if self.kind == "fixed":
            return np.full(n, float(self.mean)), 0
        mu = self.mean + self.sd * rng.standard_normal(n)
        resampled = 0
        bad = (mu <= 0.0) | (mu > MU_UPPER)
        while bad.any():
            k = int(bad.sum())
            resampled += k
            mu[bad] = self.mean + self.sd * rng.standard_normal(k)
            bad = (mu <= 0.0) | (mu > MU_UPPER)
        return mu, resampled


@dataclass(frozen=True)
class BlockLawSpec:
    gap: GapLaw = field(default_factory=GapLaw)
    rho: RhoLaw = field(default_factory=RhoLaw)
    mu: MuLaw = field(default_factory=MuLaw)

    @classmethod
    def reference(cls):
        """Geometric gaps (mean 5 drift steps), log rho ~ N(0, 0.01^2), mu ~ N(0.8, 0.02^2)."""
        return cls(
            GapLaw("one_plus_geometric", 5.0),
            RhoLaw("lognormal", 0.0, 0.01),
            MuLaw("gaussian", 0.80, 0.02),
        )

    @classmethod
    def divergent_reference(cls):
        return cls(
            GapLaw("one_plus_geometric", 5.0),
            RhoLaw("lognormal", 0.05, 0.01),
            MuLaw("fixed", 1.0),
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        return cls(
            GapLaw(**doc.get("gap", {})),
            RhoLaw(**doc.get("rho", {})),
            MuLaw(**doc.get("mu", {})),
        )


def _sample_blocks(law, K, rng):
    gaps = law.gap.sample(rng, K)
    drift_counts = gaps - 1
    log_rho = law.rho.sample_log(rng, int(drift_counts.sum()))
    mu, resampled = law.mu.sample(rng, K)
    Y = kernels.segment_sums(log_rho, drift_counts) + np.log(mu)
    return Y, resampled


def sample_block_log_tau(law, K, rng):
    """Per-block log-moduli ``Y_k = sum of (gap-1) log rho draws + log mu``."""
    if K < 1:
        raise AnchorError("K must be >= 1")
    Y, resampled = _sample_blocks(law, K, rng)
    if resampled:
        log.debug("resampled %d out-of-range event moduli", resampled)
    return Y


def slln_classify(Y, eps_margin=0.0):
    """Return ``(m_hat, verdict)`` with a symmetric indeterminate band ``[-eps, eps]``."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.size == 0:
        raise AnchorError("no block samples to classify")
    if eps_margin < 0:
        raise AnchorError("margin must be nonnegative")
    m_hat = float(np.cumsum(Y)[-1] / Y.size)
    if m_hat < -eps_margin:
        return m_hat, CONVERGENT
    if m_hat > eps_margin:
        return m_hat, DIVERGENT
    return m_hat, INDETERMINATE


@dataclass
class SweepResult:
    slopes: list
    mean_slope: float
    ci95_halfwidth: float
    classification_counts: dict
    seed: int
    K: int
    trials: int
    eps_margin: float
    law: dict
    mu_resamples: int = 0
    rng: str = RNG_ALGORITHM

    def fraction(self, verdict):
        return self.classification_counts.get(verdict, 0) / self.trials

    def caption(self):
        return f"mean slope={self.mean_slope:.4f} +/- {self.ci95_halfwidth:.4f} (95% CI)"

    def to_dict(self):
        doc = asdict(self)
        doc["caption"] = self.caption()
        return doc


def trial_generators(seed, trials):
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(trials)]


def _run_trial(args):
    law, K, eps_margin, gen = args
    Y, resampled = _sample_blocks(law, K, gen)
    m_hat, verdict = slln_classify(Y, eps_margin)
    return m_hat, verdict, resampled


def mc_sweep(law, K=400, trials=100, eps_margin=0.0, seed=0, parallel=1):
    """Independent trials of ``K`` blocks each; classify every terminal average."""
    if K < 1 or trials < 1:
        raise AnchorError("K and trials must be >= 1")
    jobs = [(law, K, eps_margin, g) for g in trial_generators(seed, trials)]
    if parallel and parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_trial, jobs, chunksize=max(1, trials // (4 * parallel))))
    else:
        results = [_run_trial(j) for j in jobs]
    slopes = np.array([r[0] for r in results])
    counts = Counter(r[1] for r in results)
    return SweepResult(
        slopes=slopes.tolist(),
        mean_slope=float(np.mean(slopes)),
        ci95_halfwidth=float(1.96 * np.std(slopes) / math.sqrt(trials)),
        classification_counts={v: counts.get(v, 0) for v in (CONVERGENT, DIVERGENT, INDETERMINATE)},
        seed=int(seed),
        K=int(K),
        trials=int(trials),
        eps_margin=float(eps_margin),
        law=law.to_dict(),
        mu_resamples=int(sum(r[2] for r in results)),
    )


def adversarial_schedule(epsilon, K, gap_growth=None):
    """Expansive drifts ``(1 + eps) I`` with no event contraction and growing gaps.

    ``gap_growth`` is ``None`` (gap_k = k + 1), a callable ``k -> gap`` with
    ``k = 1..K``, or an explicit sequence of gaps. Returns the schedule and a
    per-step moduli trace with ``1 + eps`` on drift steps and 1 on events.
    """
    if not epsilon > 0:
        raise AnchorError("epsilon must be positive")
    if gap_growth is None:
        gaps = [k + 1 for k in range(1, K + 1)]
    elif callable(gap_growth):
        gaps = [int(gap_growth(k)) for k in range(1, K + 1)]
    else:
        gaps = [int(g) for g in gap_growth][:K]
        if len(gaps) != K:
            raise AnchorError(f"need {K} gaps, got {len(gaps)}")
    if any(g < 1 for g in gaps):
        raise AnchorError("gaps must be >= 1")
    schedule = EventSchedule.from_gaps(gaps)
    moduli = np.full(schedule.horizon, 1.0 + epsilon)
    moduli[np.array(schedule.event_times) - 1] = 1.0
    return schedule, moduli


def drift_step_count(N, M, literal_order=False):
    events = N // M
    return (N + 1 - events) if literal_order else (N - events)


def run_sim(seed, N, M, eps, alpha, d, sigma, literal_order=False):
    """Norms ``|x_t|`` for ``t = 0..N`` of the scalar drift/event harness.

    ``x_0 = (10, 0, ..., 0)``. Step ``t >= 1`` applies ``x <- alpha x`` when
    ``t % M == 0`` and ``x <- (1 + eps) x + eta`` otherwise, with
    ``eta ~ N(0, sigma^2 I)``; the norm is recorded after the step, so the
    event at ``t = N`` counts. With ``literal_order=True`` the norm is
    recorded before each update and an update also runs at ``t = 0``, as in
    the original listing. No noise is drawn when ``sigma == 0``.
    """
    if N < 0 or M < 1 or d < 1 or sigma < 0:
        raise AnchorError("need N >= 0, M >= 1, d >= 1, sigma >= 0")
    x0 = np.zeros(d)
    x0[0] = 10.0
    noise = None
    if sigma > 0:
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, sigma, size=(drift_step_count(N, M, literal_order), d))
    return kernels.staircase_norms(x0, N, M, eps, alpha, noise, literal_order)
