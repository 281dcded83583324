"""Checkers for approximate optimality / criticality of SDP and Burer-Monteiro points.

Every checker returns a :class:`CertificateReport` carrying all measured
residuals (even on failure) and, when a condition is violated, a named witness
that re-evaluates to the violation.

Sign convention for multipliers: ``S(lam) = C - A^*(lam)``, so the Lagrangian
of the factored problem is ``S(lam) . Y Y^T + b . lam``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from enum import Enum
import math

import numpy as np

from .core import (
    ConstraintMap,
    DimensionError,
    SdpInstance,
    apply_adjoint,
    apply_map,
    as_factor,
    as_symmetric,
)


class Verdict(str, Enum):
    CERTIFIED = "certified"
    FALSIFIED = "falsified"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class ToleranceBundle:
    eps0: float = 0.0
    eps1: float = 0.0
    eps2: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        for name in ("eps0", "eps1", "eps2", "gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")

    def scaled(self, c: float) -> "ToleranceBundle":
        return ToleranceBundle(c * self.eps0, c * self.eps1, c * self.eps2, c * self.gamma)


REPORT_KEYS = ("feas_resid", "stat_resid", "min_eig_S", "min_eig_X", "sigma_p", "licq_margin")


@dataclass
class CertificateReport:
    verdict: Verdict
    residuals: dict[str, float]
    tol: ToleranceBundle
    multiplier: np.ndarray | None = None
    witnesses: dict[str, np.ndarray] = field(default_factory=dict)
    failed: list[str] = field(default_factory=list)
    route: str = ""

    @property
    def certified(self) -> bool:
        return self.verdict is Verdict.CERTIFIED

    @property
    def witness(self) -> np.ndarray | None:
        for name in self.failed:
            if name in self.witnesses:
                return self.witnesses[name]
        return None

    def to_dict(self) -> dict:
        """Flat JSON-ready mapping; documented keys always present (None if unmeasured)."""
        out: dict = {k: self.residuals.get(k) for k in REPORT_KEYS}
        for k, v in self.residuals.items():
            out.setdefault(k, v)
        out["verdict"] = self.verdict.value
        out["failed"] = ",".join(self.failed)
        out["route"] = self.route
        out.update({f"tol_{k}": v for k, v in asdict(self.tol).items()})
        if self.multiplier is not None:
            out["multiplier"] = [float(x) for x in self.multiplier]
        return out


def psd_slack(X: np.ndarray) -> float:
    return 1e-9 * (1.0 + float(np.linalg.norm(X)))


def _unit(v: np.ndarray) -> np.ndarray:
    nv = np.linalg.norm(v)
    return v / nv if nv > 0 else v


def _eigmin(M: np.ndarray) -> tuple[float, np.ndarray]:
    w, V = np.linalg.eigh(M)
    return float(w[0]), V[:, 0]


def sigma_p(Y: np.ndarray) -> float:
    """p-th (smallest) singular value of an n x p factor; 0 if p > n."""
    n, p = Y.shape
    if p > n:
        return 0.0
    return float(np.linalg.svd(Y, compute_uv=False)[p - 1])


def _verdict(failed: list[str]) -> Verdict:
    return Verdict.FALSIFIED if failed else Verdict.CERTIFIED


# ---------------------------------------------------------------------------
# approximate optimality for the SDP

def check_approx_optimal_sdp(inst: SdpInstance, X, lam, tol: ToleranceBundle) -> CertificateReport:
    X = as_symmetric(X, "X", atol=1e-12 * (1 + np.abs(X).max(initial=0.0)))
    if X.shape[0] != inst.n:
        raise DimensionError("X does not match the instance dimension")
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    S = inst.slack(lam)
    r = apply_map(inst.map, X) - inst.rhs
    SX = S @ X
    eX, uX = _eigmin(X)
    eS, uS = _eigmin(S)
    res = {
        "feas_resid": float(np.linalg.norm(r)),
        "stat_resid": float(np.linalg.norm(SX)),
        "min_eig_X": eX,
        "min_eig_S": eS,
    }
    failed, wit = [], {}
    if res["feas_resid"] > tol.eps0:
        failed.append("feasibility")
        wit["feasibility"] = _unit(r)
    if res["stat_resid"] > tol.eps1:
        failed.append("stationarity")
        wit["stationarity"] = _unit(SX)
    if eX < -psd_slack(X):
        failed.append("psd_X")
        wit["psd_X"] = uX
    if eS < -tol.eps2:
        failed.append("psd_S")
        wit["psd_S"] = uS
    return CertificateReport(_verdict(failed), res, tol, lam, wit, failed, route="sdp")


def gap_bound(eps: ToleranceBundle, lambda_norm: float, X_norm: float, n: int, mode: str = "sdp") -> float:
    """Optimality-gap bound for an eps-approximately optimal point.

    ``sdp``: eps0*|lam| + eps1*sqrt(n) + eps2*|X|*sqrt(n); ``ls`` drops the eps0 term.
    """
    if lambda_norm < 0 or X_norm < 0 or n < 0:
        raise ValueError("inputs must be nonnegative")
    rn = math.sqrt(n)
    base = eps.eps1 * rn + eps.eps2 * X_norm * rn
    if mode == "sdp":
        return eps.eps0 * lambda_norm + base
    if mode == "ls":
        return base
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# AFAC for the factored problem

def _slab_scale(v_null: np.ndarray, v_row: np.ndarray, Mv_row: np.ndarray, gamma: float) -> float:
    """Largest t in [0, 1] with ||M(v_null + t v_row)|| <= gamma ||v_null + t v_row||."""
    a = float(Mv_row @ Mv_row) - gamma**2 * float(v_row @ v_row)
    if a <= 0:
        return 1.0
    return min(1.0, gamma * float(np.linalg.norm(v_null)) / math.sqrt(a))


def check_afac_bm(
    inst: SdpInstance,
    Y,
    lam,
    tol: ToleranceBundle,
    n_samples: int = 200,
    rng: np.random.Generator | None = None,
) -> CertificateReport:
    """Three-valued check of the (eps, gamma)-AFAC conditions at (Y, lam).

    The second-order condition ranges over unit U with ||A(U Y^T)|| <= gamma.
    Certified when S(lam) >= -eps2 globally; falsified when the exact null space
    of U -> A(U Y^T) or a random search in the gamma-slab exhibits a violating
    direction; indeterminate otherwise.
    """
    Y = as_factor(Y, inst.n)
    n, p = Y.shape
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.shape != (inst.m,):
        raise DimensionError("multiplier length does not match the number of constraints")
    S = inst.slack(lam)
    X = Y @ Y.T
    r = apply_map(inst.map, X) - inst.rhs
    SY = S @ Y
    eS, uS = _eigmin(S)
    res = {
        "feas_resid": float(np.linalg.norm(r)),
        "stat_resid": float(np.linalg.norm(SY)),
        "min_eig_S": eS,
        "min_eig_X": 0.0 if p < n else float(np.linalg.eigvalsh(X)[0]),
        "sigma_p": sigma_p(Y),
        "licq_margin": licq_margin(inst.map, inst.rhs, Y),
    }
    failed, wit = [], {}
    if res["feas_resid"] > tol.eps0:
        failed.append("feasibility")
        wit["feasibility"] = _unit(r)
    if res["stat_resid"] > tol.eps1:
        failed.append("stationarity")
        wit["stationarity"] = _unit(SY)

    if eS >= -tol.eps2:
        res["slab_min_found"] = eS
        return CertificateReport(_verdict(failed), res, tol, lam, wit, failed, route="global_psd")

    # (ii) exact null space of U -> A(U Y^T)
    M = inst.map.factor_jacobian(Y)
    Q = np.kron(S, np.eye(p))
    _, sv, Vt = np.linalg.svd(M, full_matrices=True)
    scale = max(1.0, sv[0] if sv.size else 1.0)
    rank = int(np.sum(sv > 1e-12 * scale))
    Z = Vt[rank:].T
    R = Vt[:rank].T
    best_val, best_U = math.inf, None
    if Z.shape[1] > 0:
        w, V = np.linalg.eigh(Z.T @ Q @ Z)
        best_val, best_U = float(w[0]), Z @ V[:, 0]
        res["null_min_eig"] = best_val
    # rank-one candidates u z^T with u the bottom eigenvector of S
    if best_val >= -tol.eps2:
        _, _, Wt = np.linalg.svd(Y, full_matrices=True)
        for z in Wt[::-1]:
            U = np.outer(uS, z).ravel()
            if np.linalg.norm(M @ U) <= tol.gamma:
                best_val, best_U = eS, U
                break
    # random directions inside the gamma-slab
    if best_val >= -tol.eps2 and n_samples > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        neg = np.linalg.eigh(S)
        neg_vecs = neg[1][:, neg[0] < -tol.eps2]
        for s in range(n_samples):
            if neg_vecs.shape[1] and s % 2 == 0:
                u = neg_vecs @ rng.standard_normal(neg_vecs.shape[1])
                V = np.outer(u, rng.standard_normal(p)).ravel()
                V = V + 0.1 * rng.standard_normal(V.size) * np.linalg.norm(V) / math.sqrt(V.size)
            else:
                V = rng.standard_normal(n * p)
            v_null = Z @ (Z.T @ V) if Z.shape[1] else np.zeros_like(V)
            v_row = R @ (R.T @ V) if rank else np.zeros_like(V)
            t = _slab_scale(v_null, v_row, M @ v_row, tol.gamma)
            U = v_null + t * v_row
            nU = np.linalg.norm(U)
            if nU == 0:
                continue
            U /= nU
            if np.linalg.norm(M @ U) > tol.gamma + 1e-14 * scale:
                continue
            val = float(U @ Q @ U)
            if val < best_val:
                best_val, best_U = val, U
    res["slab_min_found"] = best_val
    if best_val < -tol.eps2:
        failed.append("second_order")
        wit["second_order"] = best_U.reshape(n, p)
        return CertificateReport(Verdict.FALSIFIED, res, tol, lam, wit, failed, route="slab_witness")
    if failed:
        return CertificateReport(Verdict.FALSIFIED, res, tol, lam, wit, failed, route="first_order")
    return CertificateReport(Verdict.INDETERMINATE, res, tol, lam, wit, failed, route="slab_unresolved")


# ---------------------------------------------------------------------------
# least-squares formulation

def ls_gradient_matrix(A: ConstraintMap, b, X) -> np.ndarray:
    """S(X) = 2 A^*(A(X) - b), the gradient of ||A(X) - b||^2."""
    return 2.0 * apply_adjoint(A, apply_map(A, X) - np.asarray(b, dtype=float))


def ls_second_order_matrix(A: ConstraintMap, b, Y) -> np.ndarray:
    """Matrix of q(U) = S(YY^T) . UU^T + 4 ||A(U Y^T)||^2 on C-order vec(U)."""
    Y = as_factor(Y, A.n)
    p = Y.shape[1]
    S = ls_gradient_matrix(A, b, Y @ Y.T)
    M = A.factor_jacobian(Y)
    return np.kron(S, np.eye(p)) + 4.0 * (M.T @ M)


def check_ac_ls(A: ConstraintMap, b, Y, eps1: float, eps2: float) -> CertificateReport:
    """(eps1, eps2)-approximate 2-criticality for min_Y ||A(YY^T) - b||^2.

    Uses the normalized conditions ||S Y|| <= eps1 and q(U) >= -eps2 on the
    unit sphere, which are one half of the true gradient / Hessian form.
    """
    Y = as_factor(Y, A.n)
    n, p = Y.shape
    b = np.atleast_1d(np.asarray(b, dtype=float))
    X = Y @ Y.T
    S = ls_gradient_matrix(A, b, X)
    SY = S @ Y
    qmin, qvec = _eigmin(ls_second_order_matrix(A, b, Y))
    res = {
        "feas_resid": float(np.linalg.norm(apply_map(A, X) - b)),
        "stat_resid": float(np.linalg.norm(SY)),
        "min_eig_S": float(np.linalg.eigvalsh(S)[0]),
        "min_eig_q": qmin,
        "sigma_p": sigma_p(Y),
    }
    tol = ToleranceBundle(0.0, eps1, eps2, 0.0)
    failed, wit = [], {}
    if res["stat_resid"] > eps1:
        failed.append("stationarity")
        wit["stationarity"] = _unit(SY)
    if qmin < -eps2:
        failed.append("second_order_ls")
        wit["second_order_ls"] = qvec.reshape(n, p)
    return CertificateReport(_verdict(failed), res, tol, None, wit, failed, route="ls_dense")


def check_approx_optimal_ls(A: ConstraintMap, b, X, tol: ToleranceBundle) -> CertificateReport:
    X = as_symmetric(X, "X", atol=1e-12 * (1 + np.abs(X).max(initial=0.0)))
    if X.shape[0] != A.n:
        raise DimensionError("X does not match the map dimension")
    b = np.atleast_1d(np.asarray(b, dtype=float))
    r = apply_map(A, X) - b
    S = 2.0 * apply_adjoint(A, r)
    SX = S @ X
    eX, uX = _eigmin(X)
    eS, uS = _eigmin(S)
    res = {
        "feas_resid": float(np.linalg.norm(r)),
        "stat_resid": float(np.linalg.norm(SX)),
        "min_eig_X": eX,
        "min_eig_S": eS,
    }
    failed, wit = [], {}
    if eX < -psd_slack(X):
        failed.append("psd_X")
        wit["psd_X"] = uX
    feas_ok = res["feas_resid"] <= tol.eps0
    stat_ok = res["stat_resid"] <= tol.eps1 and eS >= -tol.eps2
    route = "feasibility" if feas_ok else ("stationarity" if stat_ok else "")
    if not (feas_ok or stat_ok):
        failed.append("feasibility")
        wit["feasibility"] = _unit(r)
        if res["stat_resid"] > tol.eps1:
            failed.append("stationarity")
            wit["stationarity"] = _unit(SX)
        if eS < -tol.eps2:
            failed.append("psd_S")
            wit["psd_S"] = uS
    return CertificateReport(_verdict(failed), res, tol, None, wit, failed, route=route)


# ---------------------------------------------------------------------------
# constraint qualification and multiplier bounds

def licq_margin(A: ConstraintMap, b, Y) -> float:
    """Smallest singular value of the m x np Jacobian of Y -> A(YY^T) - b (0 if m > np)."""
    Y = as_factor(Y, A.n)
    J = 2.0 * A.factor_jacobian(Y)
    m, d = J.shape
    if m > d:
        return 0.0
    return float(np.linalg.svd(J, compute_uv=False)[m - 1])


def multiplier_bound(eps1: float, rho: float, grad_f_norm: float) -> float:
    """Bound (eps1 + ||grad f||) / rho on ||lam|| under rho-LICQ."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    return (eps1 + grad_f_norm) / rho


def unperturbed_transfer(
    report: CertificateReport,
    sigma: float,
    X_norm: float,
    mode: str = "cost",
    extras: dict | None = None,
) -> ToleranceBundle:
    """Tolerances at which a certified point stays approximately optimal for the unperturbed data.

    ``cost``: (eps0, eps1 + sigma |X|, eps2 + sigma).
    ``constraints``: the feasibility branch gives eps0 + sigma |X|; the
    stationarity branch propagates |lam_bar - lam| <= 2 sigma |X| and
    |S_bar - S| <= R_A 2 sigma |X| + sigma |lam| (needs ``extras`` R_A, lambda_norm).
    """
    if not report.certified:
        raise ValueError("only certified reports can be transferred")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    t = report.tol
    if mode == "cost":
        return ToleranceBundle(t.eps0, t.eps1 + sigma * X_norm, t.eps2 + sigma, t.gamma)
    if mode == "constraints":
        extras = extras or {}
        eps0 = t.eps0 + sigma * X_norm
        if sigma == 0:
            return ToleranceBundle(eps0, t.eps1, t.eps2, t.gamma)
        try:
            R_A = float(extras["R_A"])
            lam_norm = float(extras["lambda_norm"])
        except KeyError as e:
            raise ValueError(f"constraints transfer needs extras[{e.args[0]!r}]") from None
        dS = R_A * 2.0 * sigma * X_norm + sigma * lam_norm
        return ToleranceBundle(eps0, t.eps1 + dS * X_norm, t.eps2 + dS, t.gamma)
    raise ValueError(f"unknown mode {mode!r}")
