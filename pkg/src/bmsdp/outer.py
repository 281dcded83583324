"""Two-phase target-following method for equality constrained problems.

Solves ``min f(y) s.t. h(y) = 0`` by minimizing ``nu = |h|^2`` (phase I) and
then a sequence of ``mu(t, y) = (f(y) - t)^2 + |h(y)|^2`` with decreasing
targets ``t`` (phase II). Multipliers follow the convention
``L = f + lam . h``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
import io
import logging
import math

import numpy as np

from .certificates import CertificateReport, ToleranceBundle, Verdict
from .inner import ArcError, ArcSettings, SmoothObjective, arc_minimize

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


class NlpProblem:
    """Equality constrained problem with dense first and second derivatives.

    Subclasses override the six derivative methods. ``hess_h(y, w)`` returns
    the weighted sum of constraint Hessians ``sum_i w_i Hess h_i(y)``.
    ``noise_f`` and ``noise_h`` estimate absolute rounding errors of ``f``
    and ``h``; they only feed floating-point slack in comparisons.
    """

    dim: int
    m: int

    def f(self, y) -> float:
        raise NotImplementedError

    def grad_f(self, y) -> np.ndarray:
        raise NotImplementedError

    def hess_f(self, y) -> np.ndarray:
        raise NotImplementedError

    def h(self, y) -> np.ndarray:
        raise NotImplementedError

    def jac_h(self, y) -> np.ndarray:
        raise NotImplementedError

    def hess_h(self, y, w) -> np.ndarray:
        raise NotImplementedError

    def f_diff(self, y, s) -> float:
        """f(y + s) - f(y); override with a cancellation-free formula when possible."""
        return self.f(np.asarray(y) + s) - self.f(y)

    def h_diff(self, y, s) -> np.ndarray:
        """h(y + s) - h(y)."""
        return self.h(np.asarray(y) + s) - self.h(y)

    def noise_f(self, y) -> float:
        return 16 * _EPS * (1.0 + abs(self.f(y)))

    def noise_h(self, y) -> float:
        return 16 * _EPS * (1.0 + float(np.linalg.norm(self.h(y))))

    def lagrangian_hessian(self, y, lam) -> np.ndarray:
        return self.hess_f(y) + self.hess_h(y, lam)


@dataclass
class CallableProblem(NlpProblem):
    """An :class:`NlpProblem` assembled from plain callables."""

    dim: int
    m: int
    f_fn: object
    grad_f_fn: object
    hess_f_fn: object
    h_fn: object
    jac_h_fn: object
    hess_h_fn: object

    def f(self, y):
        return float(self.f_fn(y))

    def grad_f(self, y):
        return np.asarray(self.grad_f_fn(y), dtype=float).reshape(self.dim)

    def hess_f(self, y):
        return np.asarray(self.hess_f_fn(y), dtype=float).reshape(self.dim, self.dim)

    def h(self, y):
        return np.asarray(self.h_fn(y), dtype=float).reshape(self.m)

    def jac_h(self, y):
        return np.asarray(self.jac_h_fn(y), dtype=float).reshape(self.m, self.dim)

    def hess_h(self, y, w):
        return np.asarray(self.hess_h_fn(y, w), dtype=float).reshape(self.dim, self.dim)


# ---------------------------------------------------------------------------
# merit functions

def nu_mu_oracles(problem: NlpProblem, t: float) -> tuple[SmoothObjective, SmoothObjective]:
    """Return ``nu(y) = |h|^2`` and ``mu_t(y) = (f - t)^2 + |h|^2`` with exact derivatives."""

    def nu_val(y):
        h = problem.h(y)
        return float(h @ h)

    def nu_derivs(y):
        h = problem.h(y)
        J = problem.jac_h(y)
        H = 2.0 * (J.T @ J) + 2.0 * problem.hess_h(y, h)
        return float(h @ h), 2.0 * (J.T @ h), 0.5 * (H + H.T)

    def nu_noise(y):
        return 2.0 * float(np.linalg.norm(problem.h(y))) * problem.noise_h(y) + problem.noise_h(y) ** 2

    def mu_val(y):
        h = problem.h(y)
        d = problem.f(y) - t
        return float(d * d + h @ h)

    def mu_derivs(y):
        h = problem.h(y)
        J = problem.jac_h(y)
        d = problem.f(y) - t
        gf = problem.grad_f(y)
        g = 2.0 * d * gf + 2.0 * (J.T @ h)
        H = (2.0 * np.outer(gf, gf) + 2.0 * d * problem.hess_f(y)
             + 2.0 * (J.T @ J) + 2.0 * problem.hess_h(y, h))
        return float(d * d + h @ h), g, 0.5 * (H + H.T)

    def mu_noise(y):
        d = abs(problem.f(y) - t)
        ef = problem.noise_f(y) + 4 * _EPS * abs(t)
        return 2.0 * d * ef + ef**2 + nu_noise(y)

    def nu_dec(y, s):
        h = problem.h(y)
        dh = problem.h_diff(y, s)
        return -float(dh @ (2.0 * h + dh))

    def mu_dec(y, s):
        d = problem.f(y) - t
        df = problem.f_diff(y, s)
        return -df * (2.0 * d + df) + nu_dec(y, s)

    # exact decreases only pay off when the problem supplies cancellation-free differences
    exact = type(problem).h_diff is not NlpProblem.h_diff and type(problem).f_diff is not NlpProblem.f_diff
    nu = SmoothObjective(problem.dim, nu_val, lambda y: nu_derivs(y)[1],
                         lambda y: nu_derivs(y)[2], nu_derivs, nu_noise, nu_dec if exact else None)
    mu = SmoothObjective(problem.dim, mu_val, lambda y: mu_derivs(y)[1],
                         lambda y: mu_derivs(y)[2], mu_derivs, mu_noise, mu_dec if exact else None)
    return nu, mu


def criticality(obj: SmoothObjective, y) -> tuple[float, float]:
    """chi^AC = (|grad|, -lambda_min(Hess))."""
    _, g, H = obj.all(y)
    return float(np.linalg.norm(g)), -float(np.linalg.eigvalsh(H)[0])


# ---------------------------------------------------------------------------
# the two-phase method

TRACE_COLUMNS = ("k", "case", "t_k", "mu", "nu", "inner_iters", "grad_norm", "min_eig")


@dataclass
class TraceStep:
    k: int
    case: str
    t_k: float
    t_prev: float
    f: float
    mu: float        # mu(t_k, y_k)
    mu_prev: float   # mu(t_{k-1}, y_k)
    nu: float
    inner_iters: int
    grad_norm: float  # |grad mu_{t_k}(y_k)| (|grad nu| for phase I)
    min_eig: float


@dataclass
class PhaseTrace:
    eps0: float
    delta: float
    steps: list[TraceStep] = field(default_factory=list)

    @property
    def inner_iterations(self) -> int:
        return sum(s.inner_iters for s in self.steps)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for s in self.steps:
            w.writerow([s.k, s.case, repr(s.t_k), repr(s.mu), repr(s.nu), s.inner_iters,
                        repr(s.grad_norm), repr(s.min_eig)])
        return buf.getvalue()


class TraceInvariantError(AssertionError):
    pass


class OuterBudgetExhausted(RuntimeError):
    """Inner or outer iteration budget ran out; carries the partial trace and last iterate."""

    def __init__(self, msg: str, trace: PhaseTrace, y: np.ndarray, t: float):
        super().__init__(msg)
        self.trace = trace
        self.y = y
        self.t = t


class IterateDivergence(OuterBudgetExhausted):
    """The iterate left the configured ball (typically an objective unbounded below)."""


@dataclass
class TwoPhaseResult:
    y: np.ndarray
    t: float
    trace: PhaseTrace
    outcome: str  # "critical" or "infeasible_stall"
    evaluations: int = 0

    @property
    def inner_iterations(self) -> int:
        return self.trace.inner_iterations


def _slack(eps0: float, f: float, t: float, problem_noise: float) -> float:
    """Absolute slack for comparisons against eps0**2."""
    return 1e-9 * eps0**2 + 32 * _EPS * (abs(f) + abs(t)) * eps0 + problem_noise


# process-wide tally of runtime trace checks (read by the test suite)
TRACE_CHECK_COUNTS = {"checked": 0, "failed": 0}


def check_trace_step(step: TraceStep, eps0: float, delta: float, final: bool,
                     eps: tuple[float, float] | None = None, noise: float = 0.0) -> None:
    """Runtime check of the per-iteration properties of the phase II iterates."""
    TRACE_CHECK_COUNTS["checked"] += 1
    try:
        _check_trace_step(step, eps0, delta, final, eps, noise)
    except TraceInvariantError:
        TRACE_CHECK_COUNTS["failed"] += 1
        raise


def _check_trace_step(step, eps0, delta, final, eps, noise):
    if step.case == "phase1":
        if step.t_k != step.t_prev - math.sqrt(max(eps0**2 - step.nu, 0.0)):
            raise TraceInvariantError(f"k={step.k}: phase II start target mismatch")
        return
    tol = _slack(eps0, step.f, step.t_k, noise)
    tol_t = 1e-9 * eps0 + 32 * _EPS * (abs(step.f) + abs(step.t_k))
    gap = step.f - step.t_k
    if not (step.nu <= step.mu + tol and step.mu <= eps0**2 + tol):
        raise TraceInvariantError(f"k={step.k}: need nu <= mu(t_k,y_k) <= eps0^2, "
                                  f"got nu={step.nu:.6e} mu={step.mu:.6e} eps0^2={eps0**2:.6e}")
    if not (-tol_t <= gap <= eps0 + tol_t):
        raise TraceInvariantError(f"k={step.k}: need 0 <= f - t_k <= eps0, got {gap:.6e}")
    if step.case == "a":
        if step.nu <= eps0**2 and abs(step.mu - eps0**2) > tol:
            raise TraceInvariantError(f"k={step.k}: case (a) needs mu(t_k,y_k) = eps0^2, got {step.mu:.6e}")
        if step.t_prev - step.t_k < (1 - delta) * eps0 - tol_t:
            raise TraceInvariantError(f"k={step.k}: case (a) decrease {step.t_prev - step.t_k:.6e} too small")
    elif step.case == "b":
        if abs(step.mu - step.mu_prev) > tol:
            raise TraceInvariantError(f"k={step.k}: case (b) needs mu(t_k,y_k) = mu(t_k-1,y_k)")
        if not step.t_prev > step.t_k:
            raise TraceInvariantError(f"k={step.k}: case (b) needs t to decrease")
    if final:
        if step.case in ("b", "c") and step.mu_prev < (delta * eps0) ** 2:
            raise TraceInvariantError(f"k={step.k}: final mu below (delta eps0)^2")
        if step.case in ("a", "b") and eps is not None:
            if step.grad_norm > eps[0] or -step.min_eig > eps[1]:
                raise TraceInvariantError(f"k={step.k}: final point not critical")


def two_phase_solve(problem: NlpProblem, y0, eps0: float, eps: tuple[float, float],
                    delta: float = 0.5, arc: ArcSettings | None = None,
                    max_outer: int = 100000, max_norm: float | None = None) -> TwoPhaseResult:
    """Run the two-phase method from ``y0``.

    ``eps = (eps1, eps2)`` are the AC targets of every inner solve. The
    outcome is ``"critical"`` when the returned target satisfies ``t < f(y)``
    and ``"infeasible_stall"`` otherwise (``t = f(y)``). Every phase II step is
    checked against the trace invariants as it is produced. With ``max_norm``
    set, :class:`IterateDivergence` is raised once a phase II iterate has
    ``|y| > max_norm``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not (eps0 > 0 and eps[0] > 0 and eps[1] > 0):
        raise ValueError("tolerances must be positive")
    base = arc or ArcSettings()
    settings = ArcSettings(eps1=eps[0], eps2=eps[1], max_iters=base.max_iters, sigma0=base.sigma0,
                           eta1=base.eta1, eta2=base.eta2, gamma_dec=base.gamma_dec,
                           gamma_inc=base.gamma_inc, sigma_min=base.sigma_min)
    trace = PhaseTrace(eps0, delta)
    evals = 0
    thresh = (delta * eps0) ** 2

    # phase I
    nu, _ = nu_mu_oracles(problem, 0.0)
    try:
        res = arc_minimize(nu, y0, settings)
    except ArcError as err:
        raise OuterBudgetExhausted(f"phase I: {err}", trace, err.result.y, problem.f(err.result.y)) from err
    evals += res.evaluations
    y = res.y
    f_y = problem.f(y)
    t0 = f_y
    nu_y = res.value
    if nu_y > thresh:
        trace.steps.append(TraceStep(1, "phase1", t0, t0, f_y, nu_y, nu_y, nu_y, res.iterations,
                                     res.grad_norm, res.min_eig))
        return TwoPhaseResult(y, t0, trace, "infeasible_stall", evals)
    t = f_y - math.sqrt(eps0**2 - nu_y)
    step = TraceStep(1, "phase1", t, t0, f_y, (f_y - t) ** 2 + nu_y, nu_y, nu_y, res.iterations,
                     res.grad_norm, res.min_eig)
    check_trace_step(step, eps0, delta, False)
    trace.steps.append(step)
    sigma_warm = res.sigma

    # phase II
    for k in range(2, max_outer + 2):
        t_prev = t
        _, mu = nu_mu_oracles(problem, t_prev)
        try:
            res = arc_minimize(mu, y, settings, sigma_init=sigma_warm)
        except ArcError as err:
            raise OuterBudgetExhausted(f"phase II k={k}: {err}", trace, err.result.y, t_prev) from err
        evals += res.evaluations
        sigma_warm = res.sigma
        y = res.y
        if max_norm is not None and np.linalg.norm(y) > max_norm:
            raise IterateDivergence(f"phase II k={k}: |y| = {np.linalg.norm(y):.3e} exceeds {max_norm:.3e}",
                                    trace, y, t_prev)
        f_y = problem.f(y)
        h_y = problem.h(y)
        nu_y = float(h_y @ h_y)
        mu_prev = res.value
        noise = mu.noise(y)
        if mu_prev < thresh:
            case = "a"
            t = f_y - math.sqrt(max(eps0**2 - nu_y, 0.0))
        elif f_y < t_prev:
            case = "b"
            t = 2.0 * f_y - t_prev
        else:
            case = "c"
            t = t_prev
        _, mu_new = nu_mu_oracles(problem, t)
        evals += 1
        if case == "c":
            gn, lmin = res.grad_norm, res.min_eig
        else:
            gn, neg = criticality(mu_new, y)
            lmin = -neg
        mu_k = mu_new.value(y)
        done = case == "c" or (gn <= eps[0] and -lmin <= eps[1])
        step = TraceStep(k, case, t, t_prev, f_y, mu_k, mu_prev, nu_y, res.iterations, gn, lmin)
        check_trace_step(step, eps0, delta, done, eps, noise)
        trace.steps.append(step)
        if done:
            outcome = "critical" if t < f_y else "infeasible_stall"
            return TwoPhaseResult(y, t, trace, outcome, evals)
    raise OuterBudgetExhausted(f"phase II exceeded max_outer={max_outer}", trace, y, t)


# ---------------------------------------------------------------------------
# tolerances and certificates

@dataclass(frozen=True)
class MappedTolerances:
    eps0: float
    eps1: float
    eps2: float
    delta: float
    valid: bool
    flags: dict


def tolerance_mapping(eps: ToleranceBundle, R_lambda: float, beta: float | None = None) -> MappedTolerances:
    """Map AFAC targets to the two-phase tolerances with ``delta = 1/2``.

    ``eps1' = eps0 eps1 / R``, ``eps2' = eps0 eps2 / (2 R)``. The flags record
    the admissibility inequalities; ``eps0 <= beta`` is only checked when
    ``beta`` is supplied.
    """
    if R_lambda <= 0:
        raise ValueError("R_lambda must be positive")
    e0, e1, e2, g = eps.eps0, eps.eps1, eps.eps2, eps.gamma
    rel = 1 + 1e-12
    flags = {
        "eps1_le_1": e1 <= 1.0,
        "eps1_sq": e1**2 <= rel * e0 * e2 / (16 * R_lambda),
        "gamma_sq": g**2 <= rel * e0 * e2 / (16 * R_lambda**3),
        "positive": min(e0, e1, e2, g) > 0,
    }
    if beta is not None:
        flags["eps0_le_beta"] = e0 <= beta
    return MappedTolerances(e0, e0 * e1 / R_lambda, 0.5 * e0 * e2 / R_lambda, 0.5,
                            all(flags.values()), flags)


def _nullspace(J: np.ndarray, scale: float) -> np.ndarray:
    if J.shape[0] == 0:
        return np.eye(J.shape[1])
    _, s, Vt = np.linalg.svd(J)
    rank = int(np.sum(s > 1e-12 * max(scale, 1.0)))
    return Vt[rank:].T


def extract_afac(y, t: float, problem: NlpProblem, targets: ToleranceBundle,
                 rho: float | None = None, L_f: float | None = None) -> tuple[np.ndarray, CertificateReport]:
    """Multiplier ``lam = h / (f - t)`` and an AFAC report for ``L = f + lam . h``.

    The second-order clause is certified through the merit function: with
    ``alpha = 1/(f - t)`` and ``J~`` the Jacobian of ``(f, h)``,
    ``Hess L = alpha (Hess mu / 2 - J~^T J~)``, so every unit ``u`` with
    ``|J u| <= gamma`` has ``u.Hess L.u >= alpha (lmin(Hess mu)/2 - (|grad L| + gamma |(1, lam)|)^2)``.
    If that bound is inconclusive, the global minimum eigenvalue of ``Hess L``
    may still certify, and a negative curvature direction in ``ker J``
    falsifies.
    """
    y = np.asarray(y, dtype=float).ravel()
    f_y = problem.f(y)
    if not f_y > t:
        raise ValueError("f(y) <= t: no multiplier (the infeasible_stall path was taken)")
    alpha = 1.0 / (f_y - t)
    h = problem.h(y)
    lam = alpha * h
    J = problem.jac_h(y)
    gf = problem.grad_f(y)
    gL = gf + J.T @ lam
    _, mu = nu_mu_oracles(problem, t)
    _, gmu, Hmu = mu.all(y)
    identity_gap = float(np.linalg.norm(gL - 0.5 * alpha * gmu))
    lam_aug = math.sqrt(1.0 + float(lam @ lam))
    feas = float(np.linalg.norm(h))
    stat = float(np.linalg.norm(gL))
    mu_lmin = float(np.linalg.eigvalsh(Hmu)[0])
    lower = alpha * (0.5 * mu_lmin - (stat + targets.gamma * lam_aug) ** 2)
    HL = problem.lagrangian_hessian(y, lam)
    HL = 0.5 * (HL + HL.T)
    w, V = np.linalg.eigh(HL)
    Z = _nullspace(J, float(np.linalg.norm(J)))
    null_min = math.inf
    null_vec = None
    if Z.shape[1]:
        wz, Vz = np.linalg.eigh(Z.T @ HL @ Z)
        null_min, null_vec = float(wz[0]), Z @ Vz[:, 0]
    residuals = {
        "feas_resid": feas,
        "stat_resid": stat,
        "mu_min_eig": mu_lmin,
        "second_order_lower": lower,
        "lagrangian_min_eig": float(w[0]),
        "null_min_eig": null_min,
        "identity_gap": identity_gap,
        "lambda_aug_norm": lam_aug,
    }
    witnesses: dict = {}
    failed: list[str] = []
    if feas > targets.eps0:
        failed.append("feasibility")
    if stat > targets.eps1:
        failed.append("stationarity")
        witnesses["stationarity"] = gL / max(stat, 1e-300)
    route = "mu_bound"
    if lower >= -targets.eps2:
        second = True
    elif w[0] >= -targets.eps2:
        second, route = True, "global"
    else:
        second = None
        route = "inconclusive"
        if null_min < -targets.eps2:
            second = False
            route = "null_space"
            witnesses["second_order"] = null_vec
    if second is False:
        failed.append("second_order")
    if failed:
        verdict = Verdict.FALSIFIED
    elif second:
        verdict = Verdict.CERTIFIED
    else:
        verdict = Verdict.INDETERMINATE
    if rho is not None and L_f is not None and rho > 0:
        R_lambda = 2.0 + 2.0 * L_f / rho
        residuals["R_lambda"] = R_lambda
        residuals["within_R_lambda"] = float(lam_aug <= R_lambda)
    return lam, CertificateReport(verdict, residuals, targets, lam, witnesses, failed, route)
