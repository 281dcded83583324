"""Burer-Monteiro oracles and the optimality / feasibility pipelines.

The factored problem ``min C . YY^T s.t. A(YY^T) = b`` is handed to the
two-phase method, which uses the generic multiplier convention
``L = f + lam . h``. The SDP multiplier (``S = C - A^*(lam)``) is its
negative, and derivatives differ by a factor of two:
``grad L = 2 S Y`` and ``Hess L[U, U] = 2 S . UU^T``. A generic AFAC point at
``(e0, 2 e1, 2 e2, 2 g)`` is therefore a factored AFAC point at ``(e0, e1, e2, g)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
import math

import numpy as np

from .certificates import (
    CertificateReport,
    ToleranceBundle,
    check_ac_ls,
    check_afac_bm,
    check_approx_optimal_ls,
    check_approx_optimal_sdp,
    licq_margin,
)
from .core import ConstraintMap, SdpInstance, as_factor, triangular
from .inner import ArcError, ArcResult, ArcSettings, SmoothObjective, arc_minimize
from .outer import (
    MappedTolerances,
    NlpProblem,
    OuterBudgetExhausted,
    PhaseTrace,
    extract_afac,
    tolerance_mapping,
    two_phase_solve,
)
from .theory import BoundQuery, BoundResult, probability_bound

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


class ToleranceError(ValueError):
    """Tolerances violate the admissibility inequalities of the two-phase mapping."""


class InfeasibleStall(RuntimeError):
    """The two-phase method stopped at a point with t = f(y) (phase I failure)."""

    def __init__(self, msg: str, Y: np.ndarray, trace: PhaseTrace):
        super().__init__(msg)
        self.Y = Y
        self.trace = trace


class PipelineBudgetExhausted(RuntimeError):
    def __init__(self, msg: str, Y: np.ndarray, trace: PhaseTrace | None = None):
        super().__init__(msg)
        self.Y = Y
        self.trace = trace


# ---------------------------------------------------------------------------
# oracles

class BmOracleSet(NlpProblem):
    """``f(Y) = C . YY^T`` and ``h(Y) = A(YY^T) - b`` on C-order ``vec(Y)``."""

    def __init__(self, inst: SdpInstance, p: int):
        if not 1 <= p <= inst.n:
            raise ValueError(f"need 1 <= p <= n={inst.n}, got p={p}")
        self.instance = inst
        self.p = int(p)
        self.n = inst.n
        self.m = inst.m
        self.dim = self.n * self.p
        self._eye = np.eye(self.p)
        self._hess_f = 2.0 * np.kron(inst.cost, self._eye)
        self._hess_f.setflags(write=False)
        self._C_norm = float(np.linalg.norm(inst.cost))
        self._A_norm = inst.map.tuple_norm()
        self._b_norm = float(np.linalg.norm(inst.rhs))
        self._key: bytes | None = None
        self._cache: tuple = ()

    def factor(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float).reshape(self.n, self.p)

    def _eval(self, y):
        y = np.asarray(y, dtype=float).ravel()
        key = y.tobytes()
        if key != self._key:
            Y = y.reshape(self.n, self.p)
            CY = self.instance.cost @ Y
            AY = np.einsum("kij,jl->kil", self.instance.map.mats, Y)
            f = float(np.sum(CY * Y))
            h = np.einsum("kil,il->k", AY, Y) - self.instance.rhs
            self._cache = (Y, CY, AY, f, h)
            self._key = key
        return self._cache

    def f(self, y):
        return self._eval(y)[3]

    def grad_f(self, y):
        return 2.0 * self._eval(y)[1].ravel()

    def hess_f(self, y):
        return self._hess_f

    def h(self, y):
        return self._eval(y)[4].copy()

    def jac_h(self, y):
        return 2.0 * self._eval(y)[2].reshape(self.m, -1)

    def hess_h(self, y, w):
        return 2.0 * np.kron(self.instance.map.adjoint(w), self._eye)

    def f_diff(self, y, s):
        _, CY, _, _, _ = self._eval(y)
        S = np.asarray(s, dtype=float).reshape(self.n, self.p)
        return float(2.0 * np.sum(CY * S) + np.sum((self.instance.cost @ S) * S))

    def h_diff(self, y, s):
        _, _, AY, _, _ = self._eval(y)
        S = np.asarray(s, dtype=float).reshape(self.n, self.p)
        AS = np.einsum("kij,jl->kil", self.instance.map.mats, S)
        return 2.0 * np.einsum("kil,il->k", AY, S) + np.einsum("kil,il->k", AS, S)

    def noise_f(self, y):
        Y = self._eval(y)[0]
        return 8 * _EPS * self.n * self._C_norm * float(np.sum(Y * Y))

    def noise_h(self, y):
        Y = self._eval(y)[0]
        return 8 * _EPS * (self._b_norm + self.n * self._A_norm * float(np.sum(Y * Y)))

    def lagrangian_hessian(self, y, lam):
        return 2.0 * np.kron(self.instance.slack(-np.asarray(lam, dtype=float)), self._eye)


def make_bm_oracles(inst: SdpInstance, p: int) -> BmOracleSet:
    return BmOracleSet(inst, p)


@dataclass
class LsOracle:
    """``g(Y) = ||A(YY^T) - b||^2`` with ``grad g = 2 S Y`` and
    ``Hess g[U, U] = 2 S . UU^T + 8 ||A(UY^T)||^2`` where ``S = 2 A^*(A(X) - b)``."""

    map: ConstraintMap
    rhs: np.ndarray
    p: int

    def __post_init__(self):
        self.rhs = np.atleast_1d(np.asarray(self.rhs, dtype=float))
        if self.rhs.shape != (self.map.m,):
            raise ValueError("rhs does not match the number of constraints")
        if not 1 <= self.p <= self.map.n:
            raise ValueError(f"need 1 <= p <= n={self.map.n}")

    @property
    def n(self) -> int:
        return self.map.n

    @property
    def dim(self) -> int:
        return self.map.n * self.p

    def residual(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=float).reshape(self.n, self.p)
        return np.einsum("kij,jl,il->k", self.map.mats, Y, Y) - self.rhs

    def value(self, y) -> float:
        r = self.residual(y)
        return float(r @ r)

    def derivs(self, y):
        Y = np.asarray(y, dtype=float).reshape(self.n, self.p)
        AY = np.einsum("kij,jl->kil", self.map.mats, Y)
        r = np.einsum("kil,il->k", AY, Y) - self.rhs
        S = 2.0 * self.map.adjoint(r)
        M = AY.reshape(self.map.m, -1)
        H = 2.0 * np.kron(S, np.eye(self.p)) + 8.0 * (M.T @ M)
        return float(r @ r), 2.0 * (S @ Y).ravel(), 0.5 * (H + H.T)

    def gradient(self, y):
        return self.derivs(y)[1]

    def hessian(self, y):
        return self.derivs(y)[2]

    def decrease(self, y, s) -> float:
        """g(y) - g(y + s) from the exact residual change."""
        Y = np.asarray(y, dtype=float).reshape(self.n, self.p)
        S = np.asarray(s, dtype=float).reshape(self.n, self.p)
        r = self.residual(Y)
        dr = (2.0 * np.einsum("kij,jl,il->k", self.map.mats, Y, S)
              + np.einsum("kij,jl,il->k", self.map.mats, S, S))
        return -float(dr @ (2.0 * r + dr))

    def noise(self, y) -> float:
        Y = np.asarray(y, dtype=float).reshape(self.n, self.p)
        r = self.residual(Y)
        e = 8 * _EPS * (float(np.linalg.norm(self.rhs)) + self.n * self.map.tuple_norm() * float(np.sum(Y * Y)))
        return 2.0 * float(np.linalg.norm(r)) * e + e * e

    def objective(self) -> SmoothObjective:
        return SmoothObjective(self.dim, self.value, self.gradient, self.hessian, self.derivs, self.noise,
                               self.decrease)


def make_ls_oracle(A: ConstraintMap, b, p: int) -> LsOracle:
    return LsOracle(A, b, p)


# ---------------------------------------------------------------------------
# configuration

@dataclass
class PipelineConfig:
    """Constants and budgets of the optimality and feasibility pipelines.

    ``epsilon`` (resp. ``feas_epsilon``) left as ``None`` selects the
    theoretical schedule, which is usually far below what floating point can
    resolve; practical runs override it or pass explicit ``tolerances``.
    ``R_lambda`` overrides ``2 + 2 L_f / rho_licq``; unset constants are
    estimated from the data at the start of each run. ``divergence_radius``
    caps |Y|_F during the optimality solve (default ten times
    ``max(1, |Y0|_F, R_Y)``), which turns an objective unbounded below into a
    budget failure instead of an endless target decrease.
    """

    eta: float = 1.0
    t: float = 1.0
    rho_smoothing: float = 1.0
    sigma: float = 0.1
    rho_licq: float | None = None
    L_f: float | None = None
    R_Y: float | None = None
    R_A: float | None = None
    R_lambda: float | None = None
    epsilon: float | None = None
    tolerances: ToleranceBundle | None = None
    sdp_tolerances: ToleranceBundle | None = None
    feas_epsilon: float | None = None
    feas_tolerances: tuple[float, float] | None = None
    feas_eps0: float | None = None
    beta: float | None = None
    delta: float = 0.5
    continuation: float = 10.0
    eps0_start: float | None = None
    arc_max_iters: int = 1000
    feas_max_iters: int = 5000
    max_outer: int = 200000
    afac_samples: int = 200
    divergence_radius: float | None = None
    require_rank_condition: bool = False

    def __post_init__(self):
        for name in ("eta", "t", "sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.rho_smoothing <= 1:
            raise ValueError("rho_smoothing must lie in (0, 1]")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.continuation < 1:
            raise ValueError("continuation factor must be >= 1")
        for name in ("rho_licq", "L_f", "R_Y", "R_A", "R_lambda", "epsilon", "feas_epsilon", "beta",
                     "divergence_radius"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive when given")
        if self.tolerances is not None:
            R = self.resolved_R_lambda()
            if R is not None:
                mapped = tolerance_mapping(_generic(self.tolerances), R)
                if not mapped.valid:
                    bad = [k for k, ok in mapped.flags.items() if not ok]
                    raise ToleranceError(f"tolerances violate admissibility: {bad}")

    def resolved_R_lambda(self, L_f: float | None = None, rho: float | None = None) -> float | None:
        if self.R_lambda is not None:
            return self.R_lambda
        L_f = self.L_f if self.L_f is not None else L_f
        rho = self.rho_licq if self.rho_licq is not None else rho
        if L_f is None or rho is None or rho <= 0:
            return None
        return 2.0 + 2.0 * L_f / rho

    def rank_condition(self, p: int, m: int) -> bool:
        """tau(p) >= (1 + eta) m + eta t."""
        return triangular(p) >= (1 + self.eta) * m + self.eta * self.t


def _generic(tol: ToleranceBundle) -> ToleranceBundle:
    """Factored-problem targets expressed for L = f + lam . h (gradient and Hessian double)."""
    return ToleranceBundle(tol.eps0, 2 * tol.eps1, 2 * tol.eps2, 2 * tol.gamma)


def theoretical_epsilon(cfg: PipelineConfig, n: int, A_norm: float, R_lambda: float) -> float:
    """K^-1 rho (sigma / 2 e n^3)^(1 + 1/eta) with K = |A| (3 kappa)^(1/eta), kappa = R_lambda |A|."""
    kappa = R_lambda * A_norm
    K = A_norm * (3 * kappa) ** (1 / cfg.eta)
    return cfg.rho_smoothing * (cfg.sigma / (2 * math.e * n**3)) ** (1 + 1 / cfg.eta) / K


def theoretical_feas_epsilon(cfg: PipelineConfig, n: int, R_A: float, R_Y: float, b_norm: float) -> float:
    """K^-1 (rho sigma^2 / e^2 n^6)^(1 + 1/eta) with K = R_A (3 kappa)^(1/eta), kappa = 2(R_A R_Y^2 + |b|) R_A."""
    kappa = 2 * (R_A * R_Y**2 + b_norm) * R_A
    K = R_A * (3 * kappa) ** (1 / cfg.eta)
    return (cfg.rho_smoothing * cfg.sigma**2 / (math.e**2 * n**6)) ** (1 + 1 / cfg.eta) / K


def _radius_from_psd_constraint(A: ConstraintMap, b, slack: float) -> float | None:
    """Bound on ||Y||_F from a positive definite A_i: tr(YY^T) <= (b_i + slack) / lmin(A_i)."""
    best = None
    for Ai, bi in zip(A.mats, np.atleast_1d(b)):
        lmin = float(np.linalg.eigvalsh(Ai)[0])
        if lmin > 0:
            r = math.sqrt(max(bi + slack, 0.0) / lmin)
            best = r if best is None else min(best, r)
    return best


# ---------------------------------------------------------------------------
# optimality pipeline

@dataclass
class BmSolveResult:
    Y: np.ndarray
    lam: np.ndarray
    afac: CertificateReport
    sdp: CertificateReport
    merit: CertificateReport
    tolerances: ToleranceBundle
    sdp_tolerances: ToleranceBundle
    mapped: MappedTolerances
    R_lambda: float
    L_f: float
    R_Y: float
    rho_licq: float
    bound: BoundResult | None
    traces: list[PhaseTrace] = field(default_factory=list)
    outcome: str = "critical"
    evaluations: int = 0
    rank_condition: bool = False

    @property
    def certified(self) -> bool:
        return self.sdp.certified

    @property
    def inner_iterations(self) -> int:
        return sum(t.inner_iterations for t in self.traces)

    @property
    def outer_iterations(self) -> int:
        return sum(len(t.steps) for t in self.traces)


def _eps0_stages(target: float, start: float, factor: float) -> list[float]:
    if factor <= 1 or start <= target:
        return [target]
    stages = []
    e = start
    while e > target * factor:
        stages.append(e)
        e /= factor
    stages.append(target)
    return stages


def _stage_tolerances(tol: ToleranceBundle, e0: float, R_lambda: float) -> ToleranceBundle:
    """Targets for a continuation stage with feasibility tolerance ``e0 >= tol.eps0``.

    eps2 stays at its target so every stage enforces the same second-order
    condition; eps1 and gamma grow with ``e0`` up to 0.99 of their admissible caps.
    """
    if e0 == tol.eps0:
        return tol
    c = e0 / tol.eps0
    # caps in factored units (the generic targets are twice these)
    eps1_cap = 0.99 * min(0.5, math.sqrt(e0 * tol.eps2 / (32 * R_lambda)))
    gamma_cap = 0.99 * math.sqrt(e0 * tol.eps2 / (32 * R_lambda**3))
    return ToleranceBundle(e0, max(tol.eps1, min(c * tol.eps1, eps1_cap)), tol.eps2,
                           max(tol.gamma, min(c * tol.gamma, gamma_cap)))


def solve_sdp_bm(inst: SdpInstance, p: int, Y0, cfg: PipelineConfig | None = None) -> BmSolveResult:
    """Two-phase solve of the factored problem from ``Y0``, then independent certification.

    The run is continued over a decreasing sequence of feasibility tolerances
    (factor ``cfg.continuation``), each stage warm-started at the previous
    output; the last stage uses the target tolerances. The returned
    ``afac`` and ``sdp`` reports come from the certificates module, not from
    the solver's own bookkeeping.
    """
    cfg = cfg or PipelineConfig()
    Y0 = as_factor(Y0, inst.n)
    if Y0.shape[1] != p:
        raise ValueError(f"Y0 has {Y0.shape[1]} columns, expected p={p}")
    rank_ok = cfg.rank_condition(p, inst.m)
    if cfg.require_rank_condition and not rank_ok:
        raise ValueError(f"tau({p}) < (1 + eta) m + eta t for m={inst.m}")
    prob = make_bm_oracles(inst, p)
    A_norm = inst.map.norm()

    L_f = cfg.L_f if cfg.L_f is not None else float(np.linalg.norm(2 * inst.cost @ Y0))
    rho = cfg.rho_licq if cfg.rho_licq is not None else licq_margin(inst.map, inst.rhs, Y0)
    R_lambda = cfg.resolved_R_lambda(L_f, rho)
    if R_lambda is None or not math.isfinite(R_lambda):
        raise ToleranceError("R_lambda is undefined: LICQ margin vanishes at Y0; set rho_licq or R_lambda")

    if cfg.tolerances is not None:
        tol = cfg.tolerances
    else:
        eps = cfg.epsilon if cfg.epsilon is not None else theoretical_epsilon(cfg, inst.n, A_norm, R_lambda)
        tol = ToleranceBundle(eps, eps**2, 16 * R_lambda**3 * eps, eps)
    mapped = tolerance_mapping(_generic(tol), R_lambda, cfg.beta)
    bad = [k for k, ok in mapped.flags.items() if not ok and k != "eps0_le_beta"]
    if bad:
        raise ToleranceError(f"tolerances violate admissibility: {bad}")

    h0 = float(np.linalg.norm(prob.h(Y0.ravel())))
    scale = max(1.0, float(np.linalg.norm(inst.rhs)))
    start = cfg.eps0_start if cfg.eps0_start is not None else max(0.1 * scale, 4 * h0, tol.eps0)
    stages = _eps0_stages(tol.eps0, start, cfg.continuation)
    arc = ArcSettings(max_iters=cfg.arc_max_iters)
    radius = cfg.divergence_radius
    if radius is None:
        radius = 10.0 * max(1.0, float(np.linalg.norm(Y0)), cfg.R_Y or 0.0)
    traces: list[PhaseTrace] = []
    y = Y0.ravel().copy()
    t = None
    evals = 0
    for e0 in stages:
        stage_tol = _stage_tolerances(tol, e0, R_lambda)
        m_st = tolerance_mapping(_generic(stage_tol), R_lambda)
        try:
            res = two_phase_solve(prob, y, e0, (m_st.eps1, m_st.eps2), cfg.delta, arc, cfg.max_outer, radius)
        except OuterBudgetExhausted as err:
            traces.append(err.trace)
            raise PipelineBudgetExhausted(str(err), prob.factor(err.y), err.trace) from err
        traces.append(res.trace)
        evals += res.evaluations
        y = res.y
        t = res.t
        if res.outcome != "critical":
            raise InfeasibleStall(f"two-phase method stalled at eps0={e0:.3e} "
                                  f"(|h| = {np.linalg.norm(prob.h(y)):.3e})", prob.factor(y), res.trace)

    Y = prob.factor(y).copy()
    lam_generic, merit = extract_afac(y, t, prob, _generic(tol), rho, L_f)
    lam = -lam_generic
    L_f_seen = max(L_f, float(np.linalg.norm(2 * inst.cost @ Y)))
    R_Y = cfg.R_Y
    if R_Y is None:
        R_Y = _radius_from_psd_constraint(inst.map, inst.rhs, cfg.beta if cfg.beta is not None else tol.eps0)
    if R_Y is None:
        R_Y = max(float(np.linalg.norm(Y0)), float(np.linalg.norm(Y)))
    R_Y = max(R_Y, float(np.linalg.norm(Y)))
    afac = check_afac_bm(inst, Y, lam, tol, n_samples=cfg.afac_samples)
    sdp_tol = cfg.sdp_tolerances or ToleranceBundle(tol.eps0, tol.eps1 * R_Y, tol.eps2, 0.0)
    sdp = check_approx_optimal_sdp(inst, Y @ Y.T, lam, sdp_tol)
    bound = None
    if triangular(p) > inst.m and tol.gamma > 0:
        bound = probability_bound(BoundQuery("cost", {
            "n": inst.n, "m": inst.m, "p": p, "sigma": cfg.sigma,
            "eps1": tol.eps1, "gamma": tol.gamma, "A_norm": A_norm, "R_lambda": R_lambda}))
    return BmSolveResult(Y, lam, afac, sdp, merit, tol, sdp_tol, mapped, R_lambda, L_f_seen, R_Y, rho,
                         bound, traces, "critical", evals, rank_ok)


# ---------------------------------------------------------------------------
# feasibility pipeline

@dataclass
class FeasibilityResult:
    Y: np.ndarray
    ac: CertificateReport
    ls: CertificateReport
    arc: ArcResult
    eps1: float
    eps2: float
    ls_tolerances: ToleranceBundle
    R_Y: float
    residual: float
    remark_bound: float
    bound: BoundResult | None = None

    @property
    def certified(self) -> bool:
        return self.ac.certified and self.ls.certified


def solve_feasibility(A: ConstraintMap, b, p: int, Y0, cfg: PipelineConfig | None = None) -> FeasibilityResult:
    """Minimize ||A(YY^T) - b||^2 to an (eps1, eps2)-AC point and certify it.

    ARC works with the true derivatives, which are twice the normalized AC
    quantities, so it is run to ``(2 eps1, 2 eps2)``.
    """
    cfg = cfg or PipelineConfig()
    b = np.atleast_1d(np.asarray(b, dtype=float))
    Y0 = as_factor(Y0, A.n)
    if Y0.shape[1] != p:
        raise ValueError(f"Y0 has {Y0.shape[1]} columns, expected p={p}")
    oracle = make_ls_oracle(A, b, p)
    b_norm = float(np.linalg.norm(b))
    R_A = cfg.R_A if cfg.R_A is not None else A.norm() + cfg.sigma
    R_Y_cfg = cfg.R_Y
    if R_Y_cfg is None:
        R_Y_cfg = _radius_from_psd_constraint(A, b, float(np.linalg.norm(oracle.residual(Y0))))
    if cfg.feas_tolerances is not None:
        eps1, eps2 = cfg.feas_tolerances
    else:
        R_Y_th = R_Y_cfg if R_Y_cfg is not None else max(1.0, float(np.linalg.norm(Y0)))
        eps = cfg.feas_epsilon if cfg.feas_epsilon is not None else \
            theoretical_feas_epsilon(cfg, A.n, R_A, R_Y_th, b_norm)
        eps1, eps2 = eps**1.5, eps
    if not (eps1 > 0 and eps2 > 0):
        raise ValueError("feasibility tolerances must be positive")
    settings = ArcSettings(eps1=2 * eps1, eps2=2 * eps2, max_iters=cfg.feas_max_iters)
    try:
        res = arc_minimize(oracle.objective(), Y0.ravel(), settings)
    except ArcError as err:
        raise PipelineBudgetExhausted(str(err), err.result.y.reshape(A.n, p)) from err
    Y = res.y.reshape(A.n, p).copy()
    R_Y = R_Y_cfg if R_Y_cfg is not None else max(float(np.linalg.norm(Y0)), float(np.linalg.norm(Y)))
    R_Y = max(R_Y, float(np.linalg.norm(Y)))
    ac = check_ac_ls(A, b, Y, eps1, eps2)
    eps0 = cfg.feas_eps0 if cfg.feas_eps0 is not None else cfg.rho_smoothing * cfg.sigma
    ls_tol = ToleranceBundle(eps0, eps1 * R_Y, 5 * eps2, 0.0)
    ls = check_approx_optimal_ls(A, b, Y @ Y.T, ls_tol)
    resid = float(np.linalg.norm(oracle.residual(Y)))
    remark = max(ls_tol.eps0, A.n**0.25 * math.sqrt(ls_tol.eps1 + ls_tol.eps2 * R_Y))
    bound = None
    if triangular(p) > A.m:
        bound = probability_bound(BoundQuery("ls", {
            "n": A.n, "m": A.m, "p": p, "sigma": cfg.sigma, "eps0": eps0,
            "eps1": eps1, "eps2": eps2, "R_A": R_A, "R_Y": R_Y, "b_norm": b_norm}))
    return FeasibilityResult(Y, ac, ls, res, eps1, eps2, ls_tol, R_Y, resid, remark, bound)


# ---------------------------------------------------------------------------
# composition

@dataclass
class EndToEndResult:
    feasibility: FeasibilityResult
    optimality: BmSolveResult | None
    error: str | None = None

    @property
    def Y(self) -> np.ndarray:
        return self.optimality.Y if self.optimality is not None else self.feasibility.Y

    @property
    def lam(self) -> np.ndarray | None:
        return self.optimality.lam if self.optimality is not None else None

    @property
    def certified(self) -> bool:
        return self.optimality is not None and self.optimality.certified

    @property
    def inner_iterations(self) -> int:
        n = self.feasibility.arc.iterations
        if self.optimality is not None:
            n += self.optimality.inner_iterations
        return n


def random_factor(n: int, p: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Gaussian n x p factor with E||Y||_F^2 = scale^2."""
    return scale * rng.standard_normal((n, p)) / math.sqrt(n * p) * math.sqrt(p)


def end_to_end(inst: SdpInstance, p: int, cfg: PipelineConfig | None = None, Y0=None,
               rng: np.random.Generator | None = None) -> EndToEndResult:
    """Feasibility solve from a random (or given) start, then the optimality pipeline.

    Non-certified outcomes, stalls and exhausted budgets are recorded in the
    result rather than raised; ``beta`` defaults to 1.1 times the feasibility
    residual.
    """
    cfg = cfg or PipelineConfig()
    if cfg.require_rank_condition and not cfg.rank_condition(p, inst.m):
        raise ValueError(f"tau({p}) < (1 + eta) m + eta t for m={inst.m}")
    if Y0 is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        Y0 = random_factor(inst.n, p, rng)
    feas = solve_feasibility(inst.map, inst.rhs, p, Y0, cfg)
    run_cfg = cfg
    if cfg.beta is None and feas.residual > 0:
        run_cfg = replace(cfg, beta=1.1 * feas.residual)
    try:
        opt = solve_sdp_bm(inst, p, feas.Y, run_cfg)
    except (InfeasibleStall, PipelineBudgetExhausted, ToleranceError) as err:
        log.info("optimality stage failed: %s", err)
        return EndToEndResult(feas, None, f"{type(err).__name__}: {err}")
    return EndToEndResult(feas, opt)
