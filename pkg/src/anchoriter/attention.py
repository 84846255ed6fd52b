"""Softmax Lipschitz machinery and contraction certificates for multi-head layers.

A layer is ``U(x) = W_o [U_1(P_1 x) || ... || U_H(P_H x)]``. Three
certificates are available:

``orthogonal``
    ``max_h L_h``; needs pairwise orthogonal head ranges, ``|P_h| <= 1`` and
    an isometric ``W_o`` (all checked).
``general``
    ``|W_o| (sum_h L_h^2 |P_h|^2)^(1/2)``.
``overlap``
    ``|W_o| sqrt(lambda_max(sum_h L_h^2 P_h^T P_h))``; never worse than ``general``.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import CertificationPreconditionError, DimensionError, NonFiniteError
from .operators import as_matrix, as_vector

ORTHOGONALITY_TOL = 1e-9
PROJ_NORM_ITERS = 100
DEFAULT_CALIBRATION = 256


def softmax(x, beta=1.0):
    """``softmax(beta * x)`` along the last axis, computed with max-subtraction."""
    z = beta * np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("softmax input contains NaN or Inf")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_jacobian(x, beta=1.0):
    """Jacobian of ``x -> softmax(beta x)``: ``beta (Diag(p) - p p^T)`` with ``p = softmax(beta x)``."""
    p = softmax(as_vector(x), beta)
    return beta * (np.diag(p) - np.outer(p, p))


def softmax_lip_probe(dim, beta=1.0, n_pairs=100_000, rng=None, sampler="mixed", batch=20_000):
    """Largest observed ``|softmax(x) - softmax(y)| / |x - y|`` over random pairs.

    ``sampler``: ``"gaussian"`` draws pairs at scales spread over three
    decades; ``"antipodal"`` draws ``x = s u``, ``y = -s u`` with small ``s``
    along ``u = (e_a - e_b)/sqrt 2``, the direction that saturates the bound
    in two dimensions; ``"mixed"`` splits the budget between the two.
    """
    rng = np.random.default_rng(rng)
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")

    def draw(kind, n):
        if kind == "gaussian":
            s = 10.0 ** rng.uniform(-2.0, 1.0, size=(n, 1)) / max(beta, 1e-300)
            return s * rng.standard_normal((n, dim)), s * rng.standard_normal((n, dim))
        a = rng.integers(0, dim, size=n)
        b = (a + rng.integers(1, dim, size=n)) % dim if dim > 1 else a
        u = np.zeros((n, dim))
        u[np.arange(n), a] += 1.0 / math.sqrt(2.0)
        u[np.arange(n), b] -= 1.0 / math.sqrt(2.0)
        s = 10.0 ** rng.uniform(-6.0, -3.0, size=(n, 1)) / max(beta, 1e-300)
        shift = rng.standard_normal((n, 1))
        return s * u + shift, -s * u + shift

    kinds = {"gaussian": [("gaussian", n_pairs)], "antipodal": [("antipodal", n_pairs)],
             "mixed": [("gaussian", n_pairs - n_pairs // 2), ("antipodal", n_pairs // 2)]}[sampler]
    best = 0.0
    for kind, total in kinds:
        done = 0
        while done < total:
            n = min(batch, total - done)
            X, Y = draw(kind, n)
            r, _ = kernels.max_pair_ratio(softmax(X, beta), softmax(Y, beta), X, Y)
            best = max(best, r)
            done += n
    return best


def spec_norm(W, iters=PROJ_NORM_ITERS, seed=0, return_history=False):
    """Power-iteration estimate of ``|W|_2`` from a seeded start vector.

    The sequence ``|W v_k|`` is nondecreasing and bounded by the true norm.
    """
    W = as_matrix(W, "W")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    history = []
    if W.size == 0 or not np.any(W):
        return (0.0, [0.0]) if return_history else 0.0
    v = np.random.default_rng(seed).standard_normal(W.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        u = W @ v
        un = np.linalg.norm(u)
        history.append(float(un))
        if un == 0.0:
            break
        v = W.T @ (u / un)
        vn = np.linalg.norm(v)
        if vn == 0.0:
            break
        v /= vn
    est = float(np.linalg.norm(W @ v))
    history.append(est)
    return (est, history) if return_history else est


def fd_jacobian(f, x, fd_step=None):
    """Central-difference Jacobian, one JVP ``(f(x + h e_i) - f(x - h e_i)) / 2h`` per column."""
    x = as_vector(x)
    h = 1e-5 * (1.0 + np.linalg.norm(x)) if fd_step is None else fd_step
    if not h > 0:
        raise ValueError("fd_step must be positive")
    cols = []
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        fp, fm = np.asarray(f(x + e), dtype=np.float64), np.asarray(f(x - e), dtype=np.float64)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteError("function returned non-finite values")
        cols.append((fp - fm) / (2.0 * h))
    return np.column_stack(cols)


def jvp_power_iteration(f, x, iters=PROJ_NORM_ITERS, fd_step=None, seed=0):
    """Estimate ``|J_f(x)|_2`` by power iteration on a finite-difference Jacobian.

    The Jacobian is assembled from central-difference JVPs so that both ``J``
    and ``J^T`` are available; a second estimate at twice the step is used to
    detect a finite-difference noise floor.
    """
    x = as_vector(x)
    h = 1e-5 * (1.0 + np.linalg.norm(x)) if fd_step is None else fd_step
    est = spec_norm(fd_jacobian(f, x, h), iters, seed)
    check = spec_norm(fd_jacobian(f, x, 2.0 * h), iters, seed)
    if abs(est - check) > 1e-3 * max(1.0, est):
        warnings.warn(
            f"finite-difference estimates disagree ({est:.6g} vs {check:.6g}); step may be at the noise floor",
            RuntimeWarning,
            stacklevel=2,
        )
    return est


def calibrated_lipschitz(f, dim, points=None, n_points=DEFAULT_CALIBRATION, seed=0, **kw):
    """``max_{x in D} |J_f(x)|`` over a calibration set (default: standard Gaussian points)."""
    if points is None:
        points = np.random.default_rng(seed).standard_normal((n_points, dim))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return max(jvp_power_iteration(f, p, **kw) for p in np.atleast_2d(points))


# Heads and layers -------------------------------------------------------------

class LinearHead:
    """``u -> W u``; exact modulus ``|W|_2``."""

    def __init__(self, W):
        self.W = as_matrix(W, "head matrix")

    @property
    def out_dim(self):
        return self.W.shape[0]

    def __call__(self, U):
        return np.asarray(U) @ self.W.T

    def modulus(self):
        return float(np.linalg.norm(self.W, 2))

    def to_dict(self):
        return {"kind": "linear", "matrix": self.W.tolist()}


class SoftmaxHead:
    """Single-query attention over a fixed memory: ``u -> V^T softmax(beta K Q u)``.

    ``K`` holds one key per row and ``V`` one value per row. Its modulus is at
    most ``|V|_2 (beta/2) |K Q|_2`` because softmax is 1/2-Lipschitz.
    """

    def __init__(self, Q, K, V, beta=1.0):
        self.Q = as_matrix(Q, "Q")
        self.K = as_matrix(K, "K")
        self.V = as_matrix(V, "V")
        self.beta = float(beta)
        if self.K.shape[1] != self.Q.shape[0] or self.K.shape[0] != self.V.shape[0]:
            raise DimensionError("incompatible Q/K/V shapes")

    @property
    def out_dim(self):
        return self.V.shape[1]

    def __call__(self, U):
        U = np.asarray(U, dtype=np.float64)
        scores = U @ (self.K @ self.Q).T
        return softmax(scores, self.beta) @ self.V

    def modulus(self):
        return float(np.linalg.norm(self.V, 2) * self.beta / 2.0 * np.linalg.norm(self.K @ self.Q, 2))

    def to_dict(self):
        return {"kind": "softmax", "Q": self.Q.tolist(), "K": self.K.tolist(),
                "V": self.V.tolist(), "beta": self.beta}


@dataclass(eq=False)
class HeadSpec:
    """One head: projector ``P_h`` (``d_h x d``), head map on batches of rows, modulus bound ``L_h``."""

    projector: np.ndarray
    head_map: object = None
    modulus_bound: float | None = None

    def __post_init__(self):
        self.projector = as_matrix(self.projector, "projector")
        if self.head_map is None:
            self.head_map = LinearHead(np.eye(self.projector.shape[0]))
        if self.modulus_bound is None and hasattr(self.head_map, "modulus"):
            self.modulus_bound = self.head_map.modulus()

    @property
    def in_dim(self):
        return self.projector.shape[1]

    @property
    def out_dim(self):
        if hasattr(self.head_map, "out_dim"):
            return self.head_map.out_dim
        return int(np.asarray(self.head_map(np.zeros((1, self.projector.shape[0])))).shape[1])

    def resolve_bound(self, calibration=None, seed=0):
        """Return ``L_h``, estimating it by Jacobian power iteration when absent."""
        if self.modulus_bound is None:
            d_h = self.projector.shape[0]
            f = lambda u: np.asarray(self.head_map(u[None, :]))[0]  # noqa: E731
            self.modulus_bound = calibrated_lipschitz(f, d_h, calibration, seed=seed)
        return float(self.modulus_bound)


@dataclass(eq=False)
class LayerSpec:
    heads: list
    output_map: np.ndarray

    def __post_init__(self):
        self.heads = list(self.heads)
        self.output_map = as_matrix(self.output_map, "output map")
        dims = {h.in_dim for h in self.heads}
        if len(dims) != 1:
            raise DimensionError("projectors must share the input dimension")
        concat = sum(h.out_dim for h in self.heads)
        if concat != self.output_map.shape[1]:
            raise DimensionError(
                f"concatenated head outputs have dimension {concat}, output map expects {self.output_map.shape[1]}"
            )

    @property
    def dim(self):
        return self.heads[0].in_dim

    def __call__(self, X):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        B = X[None, :] if single else X
        parts = [np.asarray(h.head_map(B @ h.projector.T)) for h in self.heads]
        out = np.concatenate(parts, axis=1) @ self.output_map.T
        return out[0] if single else out

    def digest(self):
        h = hashlib.sha256()
        for head in self.heads:
            h.update(np.ascontiguousarray(head.projector).tobytes())
            h.update(repr(head.modulus_bound).encode())
            if hasattr(head.head_map, "to_dict"):
                h.update(json.dumps(head.head_map.to_dict(), sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.output_map).tobytes())
        return h.hexdigest()


def _projectors(heads):
    return [h.projector if isinstance(h, HeadSpec) else as_matrix(h, "projector") for h in heads]


def overlap_index(heads):
    """``sqrt(lambda_max(sum_h P_h^T P_h))`` for a list of heads or projector matrices."""
    Ps = _projectors(heads)
    if len({P.shape[1] for P in Ps}) != 1:
        raise DimensionError("projectors must share the input dimension")
    G = sum(P.T @ P for P in Ps)
    return math.sqrt(max(0.0, float(np.linalg.eigvalsh(G)[-1])))


@dataclass(frozen=True)
class ContractionCertificate:
    method: str
    bound: float
    inputs_digest: str
    witnesses: dict = field(default_factory=dict)

    @property
    def margin(self):
        return 1.0 - self.bound

    @property
    def passes(self):
        return self.bound < 1.0

    def to_dict(self):
        return {
            "method": self.method,
            "bound": self.bound,
            "margin": self.margin,
            "passes": self.passes,
            "inputs_digest": self.inputs_digest,
            "witnesses": self.witnesses,
        }


def bound_from_witnesses(method, witnesses):
    """Recompute a certificate's bound from its recorded witnesses."""
    L = witnesses["L"]
    if method == "orthogonal":
        return max(L)
    if method == "general":
        return witnesses["W_o_norm"] * math.sqrt(sum(l * l * p * p for l, p in zip(L, witnesses["P_norms"])))
    if method == "overlap":
        return witnesses["W_o_norm"] * math.sqrt(witnesses["lambda_max_S"])
    raise ValueError(f"unknown method {method!r}")


def check_orthogonal_preconditions(layer, tol=ORTHOGONALITY_TOL):
    """Return a list of failed preconditions for the orthogonal-heads certificate."""
    problems = []
    Ps = _projectors(layer.heads)
    for i in range(len(Ps)):
        for j in range(i + 1, len(Ps)):
            cross = float(np.linalg.norm(Ps[i] @ Ps[j].T))
            if cross > tol:
                problems.append(f"heads {i} and {j} overlap (|P_i P_j^T|_F = {cross:.3e})")
    Wo = layer.output_map
    iso = float(np.linalg.norm(Wo.T @ Wo - np.eye(Wo.shape[1])))
    if iso > tol:
        problems.append(f"W_o is not an isometry (|W_o^T W_o - I|_F = {iso:.3e})")
    omega = overlap_index(Ps)
    if omega > 1.0 + tol:
        problems.append(f"projectors expand (overlap index {omega:.6g} > 1)")
    return problems


def certify_layer(layer, method="overlap", calibration=None, seed=0):
    """Contraction certificate for ``layer``; it passes iff the bound is below 1."""
    L = [h.resolve_bound(calibration, seed) for h in layer.heads]
    Ps = _projectors(layer.heads)
    witnesses = {"L": L}
    if method == "orthogonal":
        problems = check_orthogonal_preconditions(layer)
        if problems:
            raise CertificationPreconditionError(
                "orthogonal certificate preconditions fail: " + "; ".join(problems)
                + ". Use method='overlap' instead."
            )
        witnesses["omega"] = overlap_index(Ps)
        witnesses["W_o_norm"] = 1.0
    elif method == "general":
        witnesses["P_norms"] = [spec_norm(P, PROJ_NORM_ITERS, seed) for P in Ps]
        witnesses["W_o_norm"] = float(np.linalg.norm(layer.output_map, 2))
    elif method == "overlap":
        S = sum(l * l * (P.T @ P) for l, P in zip(L, Ps))
        witnesses["lambda_max_S"] = max(0.0, float(np.linalg.eigvalsh(S)[-1]))
        witnesses["omega"] = overlap_index(Ps)
        witnesses["W_o_norm"] = float(np.linalg.norm(layer.output_map, 2))
    else:
        raise ValueError(f"unknown method {method!r}")
    bound = bound_from_witnesses(method, witnesses)
    return ContractionCertificate(method, float(bound), layer.digest(), witnesses)


def layer_empirical_modulus(layer, n_pairs=10_000, rng=None):
    """Largest observed ratio for the assembled layer map (a lower bound on ``Lip(U)``)."""
    rng = np.random.default_rng(rng)
    d = layer.dim
    half = n_pairs // 2
    s = 10.0 ** rng.uniform(-1.0, 1.0, size=(n_pairs - half, 1))
    Xg, Yg = s * rng.standard_normal((n_pairs - half, d)), s * rng.standard_normal((n_pairs - half, d))
    base = rng.standard_normal((half, d))
    h = 10.0 ** rng.uniform(-5.0, -1.0, size=(half, 1))
    Xl, Yl = base + h * rng.standard_normal((half, d)), base + h * rng.standard_normal((half, d))
    X, Y = np.vstack([Xg, Xl]), np.vstack([Yg, Yl])
    r, _ = kernels.max_pair_ratio(layer(X), layer(Y), X, Y)
    return r
