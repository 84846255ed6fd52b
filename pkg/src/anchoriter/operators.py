"""Nonexpansive and Lipschitz operator primitives on R^d.

Every operator works on a single vector or on a batch of row vectors, so the
probing utilities can evaluate thousands of pairs without a Python loop.
``Composite`` applies its members in list order: the first member listed is
applied first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    AnchorError,
    DimensionError,
    InfeasibleError,
    NonFiniteError,
    NotAProjectionError,
)

FEASIBILITY_TOL = 1e-8
PROJECTION_TOL = 1e-9
NONEXPANSIVE_TOL = 1e-9


def as_vector(x, dim=None, name="x"):
    """Return ``x`` as a finite float64 1-D array, optionally of length ``dim``."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimensionError(f"{name} has dimension {v.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return v


def as_matrix(a, name="matrix"):
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be two-dimensional, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return m


def _as_batch(x, dim):
    """View ``x`` as rows; returns ``(batch, was_vector)``."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr[None, :] if single else arr
    if batch.ndim != 2:
        raise DimensionError(f"expected a vector or a batch of vectors, got shape {arr.shape}")
    if dim is not None and batch.shape[1] != dim:
        raise DimensionError(f"input has dimension {batch.shape[1]}, operator expects {dim}")
    if not np.all(np.isfinite(batch)):
        raise NonFiniteError("input contains NaN or Inf")
    return batch, single


class AffineSet:
    """Closed affine set ``{x : A x = b}`` with a cached SVD for projections.

    The projection is ``x_p + (I - V V^T) x`` where ``V`` spans the row space
    of ``A`` and ``x_p`` is the least-norm solution, which equals
    ``x - A^+ (A x - b)`` and is exact for rank-deficient ``A``.
    """

    def __init__(self, matrix, offset, rtol=FEASIBILITY_TOL):
        A = np.asarray(matrix, dtype=np.float64)
        if A.ndim == 1:
            A = A[None, :]
        A = as_matrix(A, "constraint matrix")
        b = np.asarray(offset, dtype=np.float64).reshape(-1)
        if b.shape[0] != A.shape[0]:
            raise DimensionError(
                f"offset has length {b.shape[0]} but matrix has {A.shape[0]} rows"
            )
        if not np.all(np.isfinite(b)):
            raise NonFiniteError("offset contains NaN or Inf")
        self.matrix = A
        self.offset = b
        self.dim = A.shape[1]
        self.rtol = rtol
        if A.shape[0] == 0:
            self.rank = 0
            self._basis = np.zeros((self.dim, 0))
            self.point = np.zeros(self.dim)
        else:
            try:
                U, s, Vt = np.linalg.svd(A, full_matrices=False)
            except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
                raise AnchorError(f"factorization of constraint matrix failed: {exc}") from exc
            cutoff = max(A.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
            r = int(np.sum(s > cutoff))
            self.rank = r
            self._basis = Vt[:r].T.copy()
            self.point = self._basis @ ((U[:, :r].T @ b) / s[:r])
        residual = self.residual(self.point)
        if residual > rtol * max(1.0, float(np.linalg.norm(b))):
            raise InfeasibleError(f"inconsistent system: least-squares residual {residual:.3e}")
        for arr in (self.matrix, self.offset, self._basis, self.point):
            arr.setflags(write=False)

    @classmethod
    def singleton(cls, z):
        z = as_vector(z, name="z")
        return cls(np.eye(len(z)), z)

    @classmethod
    def whole_space(cls, dim):
        return cls(np.zeros((0, dim)), np.zeros(0))

    @classmethod
    def hyperplane(cls, normal, level):
        return cls(np.asarray(normal, dtype=np.float64)[None, :], [level])

    @property
    def row_basis(self):
        """Orthonormal basis (columns) of the row space of the constraint matrix."""
        return self._basis

    @property
    def is_singleton(self):
        return self.rank == self.dim

    def residual(self, x):
        if self.matrix.shape[0] == 0:
            return 0.0
        return float(np.linalg.norm(self.matrix @ x - self.offset))

    def contains(self, x, tol=FEASIBILITY_TOL):
        x = as_vector(x, self.dim)
        return self.residual(x) <= tol * max(1.0, float(np.linalg.norm(self.offset)))

    def project(self, x):
        batch, single = _as_batch(x, self.dim)
        V = self._basis
        out = batch - (batch @ V) @ V.T + self.point
        return out[0] if single else out

    def to_dict(self):
        return {
            "kind": "affine_set",
            "params": {"matrix": self.matrix.tolist(), "offset": self.offset.tolist()},
        }

    @classmethod
    def from_dict(cls, doc):
        params = doc.get("params", doc)
        matrix = params["matrix"]
        if len(matrix) == 0:
            return cls.whole_space(int(params["dim"]))
        return cls(matrix, params["offset"])

    def __repr__(self):
        return f"AffineSet(dim={self.dim}, constraints={self.matrix.shape[0]}, rank={self.rank})"


class Box:
    """Axis-aligned box ``[lower, upper]``; its projection is the coordinate clamp."""

    def __init__(self, lower, upper):
        self.lower = as_vector(lower, name="lower")
        self.upper = as_vector(upper, len(self.lower), "upper")
        if np.any(self.lower > self.upper):
            raise AnchorError(f"lower > upper in coordinate {int(np.argmax(self.lower > self.upper))}")
        self.dim = len(self.lower)

    def project(self, x):
        return box_clamp(self.lower, self.upper, x)

    def contains(self, x, tol=FEASIBILITY_TOL):
        x = as_vector(x, self.dim)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def diameter(self):
        return float(np.linalg.norm(self.upper - self.lower))

    def to_dict(self):
        return {"kind": "box", "params": {"lower": self.lower.tolist(), "upper": self.upper.tolist()}}


class Operator:
    """Base class. Subclasses implement ``apply_batch`` and ``intrinsic_bound``."""

    kind = "operator"
    declared_modulus = None

    @property
    def in_dim(self):
        return None

    @property
    def out_dim(self):
        return self.in_dim

    def apply_batch(self, X):
        raise NotImplementedError

    def __call__(self, x):
        batch, single = _as_batch(x, self.in_dim)
        out = self.apply_batch(batch)
        return out[0] if single else out

    def intrinsic_bound(self):
        """Lipschitz bound implied by the operator's kind and parameters."""
        raise NotImplementedError

    def bound(self):
        """Declared modulus when given, otherwise the intrinsic one."""
        if self.declared_modulus is not None:
            return float(self.declared_modulus)
        return self.intrinsic_bound()

    def params(self):
        return {}

    def to_dict(self):
        doc = {"kind": self.kind, "params": self.params()}
        if self.declared_modulus is not None:
            doc["declared_modulus"] = float(self.declared_modulus)
        return doc


@dataclass(eq=False)
class AffineMap(Operator):
    matrix: np.ndarray
    offset: np.ndarray | None = None
    declared_modulus: float | None = None
    kind = "affine_map"

    def __post_init__(self):
        self.matrix = as_matrix(self.matrix)
        if self.offset is None:
            self.offset = np.zeros(self.matrix.shape[0])
        self.offset = as_vector(self.offset, self.matrix.shape[0], "offset")
        self._norm = None

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim))

    @classmethod
    def scaling(cls, factor, dim, center=None):
        """``x -> center + factor (x - center)``; fixes ``center``."""
        c = np.zeros(dim) if center is None else as_vector(center, dim, "center")
        return cls(factor * np.eye(dim), (1.0 - factor) * c)

    @property
    def in_dim(self):
        return self.matrix.shape[1]

    @property
    def out_dim(self):
        return self.matrix.shape[0]

    def apply_batch(self, X):
        return X @ self.matrix.T + self.offset

    def intrinsic_bound(self):
        if self._norm is None:
            self._norm = float(np.linalg.norm(self.matrix, 2)) if self.matrix.size else 0.0
        return self._norm

    def params(self):
        return {"matrix": self.matrix.tolist(), "offset": self.offset.tolist()}


@dataclass(eq=False)
class Projection(Operator):
    anchor: AffineSet
    declared_modulus: float | None = None
    kind = "projection"

    @property
    def in_dim(self):
        return self.anchor.dim

    def apply_batch(self, X):
        return self.anchor.project(X)

    def intrinsic_bound(self):
        return 1.0

    def params(self):
        return self.anchor.to_dict()["params"]


@dataclass(eq=False)
class Constant(Operator):
    point: np.ndarray
    declared_modulus: float | None = None
    kind = "constant"

    def __post_init__(self):
        self.point = as_vector(self.point, name="point")

    @property
    def in_dim(self):
        return len(self.point)

    def apply_batch(self, X):
        return np.broadcast_to(self.point, X.shape[:1] + self.point.shape).copy()

    def intrinsic_bound(self):
        return 0.0

    def params(self):
        return {"point": self.point.tolist()}


def radial_retract(r, x):
    """Map ``x`` to the closed ball of radius ``r`` along the ray to the origin."""
    if not r > 0:
        raise AnchorError(f"radius must be positive, got {r}")
    batch, single = _as_batch(x, None)
    norms = np.sqrt(np.einsum("ij,ij->i", batch, batch))
    scale = np.ones_like(norms)
    outside = norms > r
    scale[outside] = r / norms[outside]
    out = batch * scale[:, None]
    return out[0] if single else out


def box_clamp(lower, upper, x):
    """Componentwise ``min(upper, max(lower, x))``."""
    lo = np.asarray(lower, dtype=np.float64)
    hi = np.asarray(upper, dtype=np.float64)
    if lo.shape != hi.shape:
        raise DimensionError("lower and upper bounds differ in shape")
    if np.any(lo > hi):
        bad = int(np.argmax(lo > hi))
        raise AnchorError(f"lower > upper in coordinate {bad}")
    batch, single = _as_batch(x, lo.shape[0])
    out = np.minimum(hi, np.maximum(lo, batch))
    return out[0] if single else out


@dataclass(eq=False)
class RadialRetraction(Operator):
    radius: float
    dim: int | None = None
    declared_modulus: float | None = None
    kind = "radial_retraction"

    def __post_init__(self):
        if not self.radius > 0:
            raise AnchorError(f"radius must be positive, got {self.radius}")

    @property
    def in_dim(self):
        return self.dim

    def apply_batch(self, X):
        return radial_retract(self.radius, X)

    def intrinsic_bound(self):
        return 1.0

    def params(self):
        doc = {"radius": float(self.radius)}
        if self.dim is not None:
            doc["dim"] = int(self.dim)
        return doc


@dataclass(eq=False)
class BoxClamp(Operator):
    lower: np.ndarray
    upper: np.ndarray
    p: float = 2.0
    declared_modulus: float | None = None
    kind = "box_clamp"

    def __post_init__(self):
        self.lower = as_vector(self.lower, name="lower")
        self.upper = as_vector(self.upper, len(self.lower), "upper")
        if np.any(self.lower > self.upper):
            raise AnchorError(f"lower > upper in coordinate {int(np.argmax(self.lower > self.upper))}")
        if self.p not in (1, 2, math.inf):
            raise AnchorError("p must be 1, 2 or inf")

    @property
    def in_dim(self):
        return len(self.lower)

    def apply_batch(self, X):
        return np.minimum(self.upper, np.maximum(self.lower, X))

    def intrinsic_bound(self):
        return 1.0

    def params(self):
        p = "inf" if self.p == math.inf else self.p
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist(), "p": p}


@dataclass(eq=False)
class Permutation(Operator):
    """``y_i = x_{perm[i]}``."""

    perm: tuple
    declared_modulus: float | None = None
    kind = "permutation"

    def __post_init__(self):
        perm = tuple(int(i) for i in self.perm)
        if sorted(perm) != list(range(len(perm))):
            raise AnchorError(f"not a permutation of 0..{len(perm) - 1}: {perm}")
        self.perm = perm
        self._idx = np.array(perm, dtype=np.intp)

    @property
    def in_dim(self):
        return len(self.perm)

    def apply_batch(self, X):
        return X[:, self._idx]

    def intrinsic_bound(self):
        return 1.0

    def params(self):
        return {"perm": list(self.perm)}


@dataclass(eq=False)
class Averaged(Operator):
    """``(1 - theta) I + theta S`` for nonexpansive ``S``."""

    theta: float
    inner: Operator
    declared_modulus: float | None = None
    kind = "averaged"

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise AnchorError(f"theta must lie in (0, 1], got {self.theta}")
        if self.inner.bound() > 1.0 + NONEXPANSIVE_TOL:
            raise AnchorError(
                f"averaged operator needs a nonexpansive inner map, bound is {self.inner.bound()}"
            )
        if self.inner.in_dim is not None and self.inner.out_dim != self.inner.in_dim:
            raise DimensionError("averaged inner map must be square")

    @property
    def in_dim(self):
        return self.inner.in_dim

    def apply_batch(self, X):
        return (1.0 - self.theta) * X + self.theta * self.inner.apply_batch(X)

    def intrinsic_bound(self):
        return (1.0 - self.theta) + self.theta * self.inner.bound()

    def params(self):
        return {"theta": float(self.theta), "inner": self.inner.to_dict()}


@dataclass(eq=False)
class Composite(Operator):
    members: list
    declared_modulus: float | None = None
    kind = "composite"

    def __post_init__(self):
        self.members = list(self.members)
        prev = None
        for i, op in enumerate(self.members):
            if prev is not None and op.in_dim is not None and prev != op.in_dim:
                raise DimensionError(f"member {i} expects dimension {op.in_dim}, receives {prev}")
            prev = op.out_dim if op.out_dim is not None else prev

    @property
    def in_dim(self):
        for op in self.members:
            if op.in_dim is not None:
                return op.in_dim
        return None

    @property
    def out_dim(self):
        for op in reversed(self.members):
            if op.out_dim is not None:
                return op.out_dim
        return None

    def apply_batch(self, X):
        for op in self.members:
            X = op.apply_batch(X)
        return X

    def intrinsic_bound(self):
        return float(np.prod([op.bound() for op in self.members])) if self.members else 1.0

    def params(self):
        return {"members": [op.to_dict() for op in self.members]}


@dataclass(eq=False)
class Product(Operator):
    """Block-diagonal product ``(R_1 x_1, ..., R_m x_m)`` over consecutive coordinate blocks."""

    parts: list
    sizes: list
    declared_modulus: float | None = None
    kind = "product"

    def __post_init__(self):
        self.parts = list(self.parts)
        self.sizes = [int(s) for s in self.sizes]
        if len(self.parts) != len(self.sizes):
            raise DimensionError("one block size per part is required")
        for op, size in zip(self.parts, self.sizes):
            if op.in_dim is not None and op.in_dim != size:
                raise DimensionError(f"part of dimension {op.in_dim} given block size {size}")
            if op.out_dim is not None and op.out_dim != size:
                raise DimensionError("product parts must map each block into itself")
        self._cuts = np.cumsum([0] + self.sizes)

    @property
    def in_dim(self):
        return int(self._cuts[-1])

    def apply_batch(self, X):
        blocks = [
            op.apply_batch(X[:, a:b])
            for op, a, b in zip(self.parts, self._cuts[:-1], self._cuts[1:])
        ]
        return np.concatenate(blocks, axis=1)

    def intrinsic_bound(self):
        # holds for the Euclidean, max and sum product norms alike
        return max((op.bound() for op in self.parts), default=0.0)

    def params(self):
        return {"parts": [op.to_dict() for op in self.parts], "sizes": self.sizes}


def apply(op, x):
    """Evaluate ``op`` at the vector ``x`` (finite entries, matching dimension)."""
    x = as_vector(x, op.in_dim)
    return op(x)


def project_affine(anchor, x):
    return anchor.project(as_vector(x, anchor.dim))


# JSON round trip -----------------------------------------------------------

def operator_from_dict(doc):
    kind = doc["kind"]
    p = doc.get("params", {})
    declared = doc.get("declared_modulus")
    if kind == "affine_map":
        op = AffineMap(p["matrix"], p.get("offset"))
    elif kind == "projection":
        op = Projection(AffineSet.from_dict({"params": p}))
    elif kind == "constant":
        op = Constant(p["point"])
    elif kind == "radial_retraction":
        op = RadialRetraction(float(p["radius"]), p.get("dim"))
    elif kind == "box_clamp":
        pval = p.get("p", 2)
        op = BoxClamp(p["lower"], p["upper"], math.inf if pval in ("inf", "infinity") else float(pval))
    elif kind == "permutation":
        op = Permutation(p["perm"])
    elif kind == "averaged":
        op = Averaged(float(p["theta"]), operator_from_dict(p["inner"]))
    elif kind == "composite":
        op = Composite([operator_from_dict(m) for m in p["members"]])
    elif kind == "product":
        op = Product([operator_from_dict(m) for m in p["parts"]], p["sizes"])
    elif kind == "identity":
        op = AffineMap.identity(int(p["dim"]))
    elif kind == "scaling":
        op = AffineMap.scaling(float(p["factor"]), int(p["dim"]), p.get("center"))
    else:
        raise AnchorError(f"unknown operator kind {kind!r}")
    if declared is not None:
        op.declared_modulus = float(declared)
    return op


def operator_to_dict(op):
    return op.to_dict()


# Probing --------------------------------------------------------------------

def _sample_pairs(op, dim, n, rng, sampler, scale):
    def gaussian(m):
        s = scale * 10.0 ** rng.uniform(-1.0, 1.0, size=(m, 1))
        return s * rng.standard_normal((m, dim)), s * rng.standard_normal((m, dim))

    def local(m):
        base = op.apply_batch(scale * rng.standard_normal((m, dim)))
        if base.shape[1] != dim:
            base = scale * rng.standard_normal((m, dim))
        h = scale * 10.0 ** rng.uniform(-6.0, 0.0, size=(m, 1))
        return base + h * rng.standard_normal((m, dim)), base + h * rng.standard_normal((m, dim))

    if sampler == "gaussian":
        return gaussian(n)
    if sampler == "local":
        return local(n)
    if sampler == "mixed":
        n_g = (n + 1) // 2
        xg, yg = gaussian(n_g)
        xl, yl = local(n - n_g)
        return np.vstack([xg, xl]), np.vstack([yg, yl])
    raise AnchorError(f"unknown sampler {sampler!r}")


def empirical_modulus(op, n_pairs=10_000, rng=None, dim=None, sampler="mixed", scale=1.0):
    """Largest observed ``|op(x) - op(y)| / |x - y|`` over sampled pairs.

    This is a lower bound on the Lipschitz modulus. ``sampler`` is one of
    ``"gaussian"`` (pairs at scales spread over two decades), ``"local"``
    (pairs clustered around points in the operator's image, which are fixed
    points for projections and retractions) or ``"mixed"``.
    """
    if n_pairs < 1:
        raise AnchorError("n_pairs must be at least 1")
    rng = np.random.default_rng(rng)
    dim = dim if dim is not None else op.in_dim
    if dim is None:
        raise DimensionError("operator has no fixed dimension; pass dim")
    X, Y = _sample_pairs(op, dim, n_pairs, rng, sampler, scale)
    same = np.all(X == Y, axis=1)
    while same.any():
        Y[same] = X[same] + scale * rng.standard_normal((int(same.sum()), dim))
        same = np.all(X == Y, axis=1)
    ratio, _ = kernels.max_pair_ratio(op.apply_batch(X), op.apply_batch(Y), X, Y)
    return ratio


# Commutant logic --------------------------------------------------------------

@dataclass(frozen=True)
class CommutationReport:
    norm_ea_p: float
    norm_eb_p: float
    norm_ea_eb: float
    tol: float

    @property
    def valid(self):
        return max(self.norm_ea_p, self.norm_eb_p, self.norm_ea_eb) <= self.tol


def is_projection(E, tol=PROJECTION_TOL):
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] != E.shape[1]:
        return False
    return (
        np.linalg.norm(E @ E - E, 2) <= tol * max(1.0, np.linalg.norm(E, 2))
        and np.linalg.norm(E - E.T, 2) <= tol
    )


def anchored_implication(E_A, E_B, P, tol=PROJECTION_TOL):
    """Return ``I - E_A + E_A E_B`` and the commutator norms that license it.

    The identity is the material implication ``not A or B`` only when all
    three projections commute pairwise; ``report.valid`` says whether they do.
    """
    mats = []
    for name, E in (("E_A", E_A), ("E_B", E_B), ("P", P)):
        E = as_matrix(E, name)
        if not is_projection(E, tol):
            raise NotAProjectionError(f"{name} is not a symmetric idempotent matrix")
        mats.append(E)
    EA, EB, PP = mats
    if not (EA.shape == EB.shape == PP.shape):
        raise DimensionError("projections must share a shape")

    def comm(X, Y):
        return float(np.linalg.norm(X @ Y - Y @ X, 2))

    report = CommutationReport(comm(EA, PP), comm(EB, PP), comm(EA, EB), tol)
    implication = np.eye(EA.shape[0]) - EA + EA @ EB
    return implication, report
