"""Planted SDP instances, smoothing perturbations and JSON persistence."""
from __future__ import annotations

from dataclasses import dataclass
import json
import math
from pathlib import Path

import numpy as np

from ..certificates import ToleranceBundle, check_approx_optimal_sdp
from ..core import (
    ConstraintMap,
    SdpInstance,
    apply_adjoint,
    apply_map,
    sample_uniform_ball,
    smat,
    snap_svec,
    svec,
    triangular,
)


@dataclass(frozen=True)
class PlantedInstance:
    instance: SdpInstance
    X0: np.ndarray
    lambda0: np.ndarray
    S0: np.ndarray
    r: int


class PlantedInvariantError(AssertionError):
    pass


def _goe(n: int, rng: np.random.Generator) -> np.ndarray:
    M = rng.standard_normal((n, n))
    return snap_svec((M + M.T) / math.sqrt(2 * n))


def verify_planted(pl: PlantedInstance, tol: float = 1e-10) -> None:
    """Re-check exact KKT at (X0, lambda0) and rank(X0) = r; raise on failure."""
    inst = pl.instance
    scale = 1.0 + float(np.linalg.norm(inst.cost)) * (1.0 + float(np.linalg.norm(pl.X0)))
    if not np.array_equal(apply_map(inst.map, pl.X0), inst.rhs):
        raise PlantedInvariantError("A(X0) != b")
    w_S = np.linalg.eigvalsh(pl.S0)
    if w_S[0] < -tol * scale:
        raise PlantedInvariantError("S0 is not psd")
    if np.linalg.norm(pl.S0 @ pl.X0) > tol * scale:
        raise PlantedInvariantError("S0 X0 != 0")
    if np.linalg.norm(inst.cost - apply_adjoint(inst.map, pl.lambda0) - pl.S0) > tol * scale:
        raise PlantedInvariantError("C != A^*(lambda0) + S0")
    w = np.linalg.eigvalsh(pl.X0)
    rank = int(np.sum(w > 1e-8 * w[-1]))
    if rank != pl.r:
        raise PlantedInvariantError(f"rank(X0) = {rank}, expected {pl.r}")
    rep = check_approx_optimal_sdp(inst, pl.X0, pl.lambda0, ToleranceBundle(tol * scale, tol * scale, tol * scale))
    if not rep.certified:
        raise PlantedInvariantError(f"planted pair not certified: {rep.failed}")


def gen_planted_sdp(n: int, r: int, rng: np.random.Generator, m: int | None = None,
                    slack: str = "projector") -> PlantedInstance:
    """Random SDP whose optimum is a planted rank-r matrix X0 = G G^T.

    ``m`` defaults to tau(r). Constraints are GOE matrices, ``b = A(X0)``, and
    ``C = A^*(lambda0) + S0`` with ``S0`` psd and supported on ker(X0), so
    exact KKT holds at ``(X0, lambda0)``. ``slack="projector"`` takes
    ``S0 = |g| Q Q^T`` for a Gaussian ``g`` and an orthonormal basis ``Q`` of
    ker(X0); ``slack="wishart"`` takes ``S0 = Q W W^T Q^T`` with Gaussian ``W``,
    whose small eigenvalues give nearly degenerate instances.
    """
    if not 1 <= r <= n:
        raise ValueError(f"need 1 <= r <= n, got r={r}, n={n}")
    m = triangular(r) if m is None else int(m)
    if m < 1:
        raise ValueError("m must be positive")
    G = rng.standard_normal((n, r)) / math.sqrt(n)
    X0 = G @ G.T
    X0 = 0.5 * (X0 + X0.T)
    A = ConstraintMap(np.stack([_goe(n, rng) for _ in range(m)]))
    lam0 = rng.standard_normal(m)
    Qfull, _ = np.linalg.qr(G, mode="complete")
    Q = Qfull[:, r:]
    if slack == "projector":
        S0 = abs(rng.standard_normal()) * (Q @ Q.T)
    elif slack == "wishart":
        W = Q @ rng.standard_normal((n - r, n - r)) / math.sqrt(max(n - r, 1))
        S0 = W @ W.T
    else:
        raise ValueError(f"unknown slack model {slack!r}")
    S0 = 0.5 * (S0 + S0.T)
    C = snap_svec(apply_adjoint(A, lam0) + S0)
    S0 = C - apply_adjoint(A, lam0)
    S0 = 0.5 * (S0 + S0.T)
    b = apply_map(A, X0)
    pl = PlantedInstance(SdpInstance(C, A, b), X0, lam0, S0, r)
    verify_planted(pl)
    return pl


def perturb_instance(inst: SdpInstance, sigma: float, target: str, rng: np.random.Generator) -> SdpInstance:
    """Uniform draw from the radius-``sigma`` ball around the cost (Frobenius) or the constraint tuple."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if target == "cost":
        if sigma == 0:
            return inst
        v = sample_uniform_ball(svec(inst.cost), sigma, rng)
        return inst.with_cost(smat(v))
    if target == "constraints":
        if sigma == 0:
            return inst
        flat = np.concatenate([svec(Ai) for Ai in inst.map.mats])
        v = sample_uniform_ball(flat, sigma, rng)
        k = triangular(inst.n)
        mats = np.stack([smat(v[i * k:(i + 1) * k]) for i in range(inst.m)])
        return inst.with_map(ConstraintMap(mats))
    raise ValueError(f"unknown target {target!r}; expected 'cost' or 'constraints'")


# ---------------------------------------------------------------------------
# JSON

def instance_to_dict(inst: SdpInstance, meta: dict | None = None) -> dict:
    return {
        "n": inst.n,
        "m": inst.m,
        "C": [float(x) for x in svec(inst.cost)],
        "A": [[float(x) for x in svec(Ai)] for Ai in inst.map.mats],
        "b": [float(x) for x in inst.rhs],
        "meta": dict(meta or {}),
    }


def instance_from_dict(d: dict) -> tuple[SdpInstance, dict]:
    try:
        n, m = int(d["n"]), int(d["m"])
        C = smat(d["C"])
        mats = np.stack([smat(a) for a in d["A"]])
        b = np.asarray(d["b"], dtype=float)
    except KeyError as e:
        raise ValueError(f"instance JSON lacks field {e.args[0]!r}") from None
    if C.shape != (n, n) or mats.shape != (m, n, n) or b.shape != (m,):
        raise ValueError("instance JSON dimensions are inconsistent")
    return SdpInstance(C, ConstraintMap(mats), b), dict(d.get("meta", {}))


def save_instance(path, inst: SdpInstance, meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst, meta)) + "\n", encoding="utf-8")


def load_instance(path) -> tuple[SdpInstance, dict]:
    return instance_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def planted_meta(pl: PlantedInstance) -> dict:
    return {
        "r": pl.r,
        "X0_svec": [float(x) for x in svec(snap_svec(pl.X0))],
        "lambda0": [float(x) for x in pl.lambda0],
    }
