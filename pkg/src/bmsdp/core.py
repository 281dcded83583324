"""Symmetric-matrix substrate: constraint maps, the svec codec and ball sampling.

Matrices are plain ``numpy`` arrays. A factor ``Y`` is an ``(n, p)`` array and
is flattened in C order whenever a vector view is needed, so that
``vec(M @ Y) == kron(M, I_p) @ vec(Y)``.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

SQRT2 = math.sqrt(2.0)


class DimensionError(ValueError):
    pass


def triangular(k: int) -> int:
    """k-th triangular number k(k+1)/2."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    return k * (k + 1) // 2


def as_symmetric(X, name: str = "X", atol: float = 0.0) -> np.ndarray:
    """Validate a square, finite, symmetric array and return it as float64."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} has non-finite entries")
    if atol == 0.0:
        if not np.array_equal(X, X.T):
            raise ValueError(f"{name} is not symmetric")
    elif np.max(np.abs(X - X.T), initial=0.0) > atol:
        raise ValueError(f"{name} is not symmetric")
    return X


def sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.T)


def as_factor(Y, n: int | None = None) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 0:
        Y = Y.reshape(1, 1)
    elif Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if Y.ndim != 2:
        raise DimensionError(f"factor must be 2-d, got shape {Y.shape}")
    if n is not None and Y.shape[0] != n:
        raise DimensionError(f"factor has {Y.shape[0]} rows, expected {n}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("factor has non-finite entries")
    return Y


def min_eig(X: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(X)[0])


# ---------------------------------------------------------------------------
# svec codec

def _svec_scale(n: int) -> np.ndarray:
    iu = np.triu_indices(n)
    return np.where(iu[0] == iu[1], 1.0, SQRT2)


def svec(X) -> np.ndarray:
    """Row-major upper triangle with off-diagonals scaled by sqrt(2).

    ``np.linalg.norm(svec(X)) == np.linalg.norm(X)`` up to rounding.
    """
    X = as_symmetric(X)
    n = X.shape[0]
    return X[np.triu_indices(n)] * _svec_scale(n)


def _dim_from_len(length: int) -> int:
    n = int(round((math.sqrt(8 * length + 1) - 1) / 2))
    if triangular(n) != length:
        raise DimensionError(f"length {length} is not a triangular number")
    return n


def smat(v) -> np.ndarray:
    """Inverse of :func:`svec`.

    Off-diagonal entries are chosen so that ``svec(smat(v))`` reproduces ``v``
    bit for bit whenever such a preimage exists (it nearly always does; the
    search moves at most a couple of ulps from ``v / sqrt(2)``).
    """
    v = np.asarray(v, dtype=float).ravel()
    n = _dim_from_len(v.size)
    iu = np.triu_indices(n)
    off = iu[0] != iu[1]
    vals = v.copy()
    w = v[off]
    x = w / SQRT2
    bad = x * SQRT2 != w
    if np.any(bad):
        idx = np.flatnonzero(bad)
        for j in idx:
            target = w[j]
            cand = x[j]
            for step in (np.inf, -np.inf):
                c = x[j]
                found = False
                for _ in range(3):
                    c = np.nextafter(c, step)
                    if c * SQRT2 == target:
                        cand, found = c, True
                        break
                if found:
                    break
            x[j] = cand
    vals[off] = x
    X = np.zeros((n, n))
    X[iu] = vals
    X[(iu[1], iu[0])] = vals
    return X


def snap_svec(X) -> np.ndarray:
    """Return the nearest matrix whose svec/smat round trip is exact."""
    return smat(svec(X))


# ---------------------------------------------------------------------------
# constraint maps

@dataclass(frozen=True)
class ConstraintMap:
    """The linear map X -> (A_1 . X, ..., A_m . X) stored as an (m, n, n) stack."""

    mats: np.ndarray

    def __post_init__(self):
        mats = np.asarray(self.mats, dtype=float)
        if mats.ndim == 2:
            mats = mats[None]
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise DimensionError(f"constraint stack must be (m, n, n), got {mats.shape}")
        if mats.shape[0] < 1:
            raise DimensionError("need at least one constraint")
        if not np.all(np.isfinite(mats)):
            raise ValueError("constraint matrices have non-finite entries")
        if not np.array_equal(mats, np.swapaxes(mats, 1, 2)):
            raise ValueError("constraint matrices must be symmetric")
        mats = mats.copy()
        mats.setflags(write=False)
        object.__setattr__(self, "mats", mats)

    @classmethod
    def from_list(cls, matrices) -> "ConstraintMap":
        return cls(np.stack([as_symmetric(A, "A_i") for A in matrices]))

    @property
    def m(self) -> int:
        return self.mats.shape[0]

    @property
    def n(self) -> int:
        return self.mats.shape[1]

    def __call__(self, X) -> np.ndarray:
        return apply_map(self, X)

    def adjoint(self, lam) -> np.ndarray:
        return apply_adjoint(self, lam)

    def svec_matrix(self) -> np.ndarray:
        """m x tau(n) matrix whose rows are svec(A_i)."""
        n = self.n
        iu = np.triu_indices(n)
        return self.mats[:, iu[0], iu[1]] * _svec_scale(n)

    def norm(self) -> float:
        return operator_norm(self)

    def tuple_norm(self) -> float:
        """Euclidean norm of (A_1, ..., A_m) as an element of (S^n)^m."""
        return float(np.sqrt(np.sum(self.mats ** 2)))

    def scaled(self, c: float) -> "ConstraintMap":
        return ConstraintMap(c * self.mats)

    def apply_factor(self, U, Y) -> np.ndarray:
        """A(U Y^T) for n x p factors; A_i . U Y^T = <A_i Y, U>."""
        return np.einsum("kij,jl,il->k", self.mats, Y, U)

    def factor_jacobian(self, Y) -> np.ndarray:
        """Rows vec(A_i Y): the matrix of U -> A(U Y^T) in C-order coordinates."""
        Y = as_factor(Y, self.n)
        return np.einsum("kij,jl->kil", self.mats, Y).reshape(self.m, -1)


def apply_map(A: ConstraintMap, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    if X.shape != (A.n, A.n):
        raise DimensionError(f"X has shape {X.shape}, map acts on {A.n}x{A.n}")
    return np.einsum("kij,ij->k", A.mats, X)


def apply_adjoint(A: ConstraintMap, lam) -> np.ndarray:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.shape != (A.m,):
        raise DimensionError(f"multiplier has shape {lam.shape}, expected ({A.m},)")
    return np.tensordot(lam, A.mats, axes=1)


def operator_norm(A: ConstraintMap) -> float:
    """sup over ||X||_F = 1 of ||A(X)||_2, via the SVD of the svec rows."""
    return float(np.linalg.norm(A.svec_matrix(), 2))


@dataclass(frozen=True)
class SdpInstance:
    """min C . X  s.t.  A(X) = b, X psd."""

    cost: np.ndarray
    map: ConstraintMap
    rhs: np.ndarray

    def __post_init__(self):
        C = as_symmetric(self.cost, "C")
        b = np.atleast_1d(np.asarray(self.rhs, dtype=float))
        if C.shape[0] != self.map.n:
            raise DimensionError("cost and constraint dimensions differ")
        if b.shape != (self.map.m,):
            raise DimensionError(f"rhs has shape {b.shape}, expected ({self.map.m},)")
        if not np.all(np.isfinite(b)):
            raise ValueError("rhs has non-finite entries")
        C = C.copy()
        C.setflags(write=False)
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "cost", C)
        object.__setattr__(self, "rhs", b)

    @property
    def n(self) -> int:
        return self.map.n

    @property
    def m(self) -> int:
        return self.map.m

    def slack(self, lam) -> np.ndarray:
        """S(lam) = C - A^*(lam)."""
        return self.cost - apply_adjoint(self.map, lam)

    def with_cost(self, C) -> "SdpInstance":
        return SdpInstance(C, self.map, self.rhs)

    def with_map(self, A: ConstraintMap) -> "SdpInstance":
        return SdpInstance(self.cost, A, self.rhs)


# ---------------------------------------------------------------------------
# sampling

def make_rng(seed, *keys) -> np.random.Generator:
    """Philox generator keyed by (seed, *keys); independent streams per key."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


def sample_uniform_ball(center, sigma: float, rng: np.random.Generator, size: int | None = None):
    """Uniform draw(s) from the Euclidean ball of radius ``sigma`` around ``center``.

    Direction from a normalized Gaussian, radius ``sigma * U**(1/k)``.
    With ``size`` given, returns a ``(size, k)`` array.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    k = center.size
    shape = (k,) if size is None else (size, k)
    if sigma == 0:
        return np.broadcast_to(center, shape).copy()
    z = rng.standard_normal(shape)
    nz = np.linalg.norm(z, axis=-1, keepdims=True)
    u = rng.random(shape[:-1] + (1,))
    r = sigma * u ** (1.0 / k)
    return center + r * z / nz
