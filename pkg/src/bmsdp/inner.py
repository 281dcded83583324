"""Adaptive regularization with cubics (ARC) with second-order termination.

Each iteration eigendecomposes the dense Hessian once; the decomposition serves
both the termination test and the cubic subproblem.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from typing import Callable

import numpy as np
from scipy.optimize import brentq

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


@dataclass
class SmoothObjective:
    """A twice differentiable function with dense derivatives.

    ``derivs(y)`` may return ``(value, gradient, hessian)`` in one pass; when
    absent it is assembled from the three separate callables. ``noise(y)``
    estimates the absolute rounding error of ``value(y)``. ``decrease(y, s)``,
    when given, returns ``value(y) - value(y + s)`` computed without
    cancellation; ARC then uses it for step acceptance, which keeps the ratio
    test meaningful when values are far below their own rounding error.
    """

    dim: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    derivs: Callable[[np.ndarray], tuple] | None = None
    noise: Callable[[np.ndarray], float] | None = None
    decrease: Callable[[np.ndarray, np.ndarray], float] | None = None

    def all(self, y):
        if self.derivs is not None:
            return self.derivs(y)
        return self.value(y), self.gradient(y), self.hessian(y)


@dataclass
class ArcSettings:
    eps1: float = 1e-6
    eps2: float = 1e-6
    max_iters: int = 2000
    sigma0: float = 1.0
    eta1: float = 0.1
    eta2: float = 0.9
    gamma_dec: float = 0.5
    gamma_inc: float = 2.0
    sigma_min: float = 1e-10

    def __post_init__(self):
        if not (self.eps1 > 0 and self.eps2 > 0):
            raise ValueError("eps1 and eps2 must be positive")
        if not (0 < self.eta1 <= self.eta2 < 1):
            raise ValueError("need 0 < eta1 <= eta2 < 1")
        if not (self.gamma_dec < 1 < self.gamma_inc):
            raise ValueError("need gamma_dec < 1 < gamma_inc")


@dataclass
class ArcResult:
    y: np.ndarray
    value: float
    grad_norm: float
    min_eig: float
    iterations: int
    accepted: int
    evaluations: int
    success: bool
    values: list[float] = field(default_factory=list)
    sigma: float = 1.0


class ArcError(RuntimeError):
    def __init__(self, msg: str, result: ArcResult):
        super().__init__(msg)
        self.result = result


class BudgetExhausted(ArcError):
    pass


class NonFiniteObjective(ArcError):
    pass


def cubic_model(g: np.ndarray, H: np.ndarray, sigma_reg: float, s: np.ndarray) -> float:
    return float(g @ s + 0.5 * s @ H @ s + sigma_reg / 3.0 * np.linalg.norm(s) ** 3)


def solve_cubic_subproblem(g, H=None, sigma_reg: float = 1.0, eig=None) -> np.ndarray:
    """Global minimizer of g.s + s.H.s/2 + sigma_reg/3 |s|^3.

    The minimizer solves (H + lam I) s = -g with lam = sigma_reg |s| and
    H + lam I psd. ``lam`` is found by bracketing the secular equation
    |s(lam)| = lam / sigma_reg; the hard case (g orthogonal to the bottom
    eigenspace) is completed along a bottom eigenvector.
    """
    if sigma_reg <= 0:
        raise ValueError("sigma_reg must be positive")
    g = np.asarray(g, dtype=float)
    w, V = eig if eig is not None else np.linalg.eigh(H)
    gh = V.T @ g
    gnorm = float(np.linalg.norm(g))
    lam_lo = max(0.0, -float(w[0]))
    if gnorm == 0.0 and lam_lo == 0.0:
        return np.zeros_like(g)

    def snorm(lam):
        return float(np.linalg.norm(gh / (w + lam)))

    def phi(lam):
        return snorm(lam) - lam / sigma_reg

    span = 2.0 * math.sqrt(sigma_reg * gnorm) + 8 * _EPS * max(1.0, lam_lo)
    hi = lam_lo + span
    while phi(hi) > 0:  # pragma: no cover - the bound above already guarantees phi(hi) <= 0
        hi = lam_lo + 2 * (hi - lam_lo)

    bottom = w <= w[0] + 1e-12 * max(1.0, abs(w[0]))
    lo_eval = lam_lo + max(span, lam_lo, 1.0) * 4 * _EPS
    if lam_lo > 0 and phi(lo_eval) <= 0:
        # hard case: the secular equation has no root right of lam_lo
        ratio = np.where(bottom, 0.0, gh / np.where(bottom, 1.0, w + lam_lo))
        s_hat = -ratio
        target = lam_lo / sigma_reg
        tau2 = target**2 - float(s_hat @ s_hat)
        s_hat[np.flatnonzero(bottom)[0]] += math.sqrt(max(tau2, 0.0))
        return V @ s_hat
    lo = lo_eval if lam_lo > 0 else 0.0
    if phi(lo) <= 0:
        lam = lo
    else:
        lam = brentq(phi, lo, hi, xtol=1e-300, rtol=4 * _EPS, maxiter=500)
    return V @ (-gh / (w + lam))


def arc_minimize(obj: SmoothObjective, y0, settings: ArcSettings | None = None,
                 sigma_init: float | None = None) -> ArcResult:
    """Minimize ``obj`` from ``y0`` until |grad| <= eps1 and min eig(Hess) >= -eps2.

    Raises :class:`BudgetExhausted` (with the best iterate attached) when
    ``max_iters`` is hit and :class:`NonFiniteObjective` on NaN/Inf values.
    ``sigma_init`` warm-starts the regularization weight (e.g. from a previous solve).
    """
    st = settings or ArcSettings()
    y = np.array(y0, dtype=float).ravel()
    v, g, H = obj.all(y)
    evals = 1
    if not math.isfinite(v):
        raise NonFiniteObjective("objective is not finite at the initial point",
                                 ArcResult(y, v, math.nan, math.nan, 0, 0, evals, False))
    v_true = v
    sigma = st.sigma0 if sigma_init is None else max(sigma_init, st.sigma_min)
    values = [float(v)]
    accepted = 0
    it = 0
    eig = np.linalg.eigh(H)
    gn = float(np.linalg.norm(g))
    lmin = float(eig[0][0])
    while True:
        if gn <= st.eps1 and lmin >= -st.eps2:
            return ArcResult(y, float(v_true), gn, lmin, it, accepted, evals, True, values, sigma)
        if it >= st.max_iters:
            res = ArcResult(y, float(v_true), gn, lmin, it, accepted, evals, False, values, sigma)
            raise BudgetExhausted(f"ARC hit max_iters={st.max_iters} (|g|={gn:.3e}, lmin={lmin:.3e})", res)
        it += 1
        s = solve_cubic_subproblem(g, sigma_reg=sigma, eig=eig)
        pred = -cubic_model(g, H, sigma, s)
        y_new = y + s
        if obj.decrease is not None:
            ared = float(obj.decrease(y, s))
            evals += 1
            if not math.isfinite(ared):
                sigma *= st.gamma_inc
                continue
            v_new = v - ared
            rho = ared / pred if pred > 0 else -math.inf
        else:
            v_new = obj.value(y_new)
            evals += 1
            if not math.isfinite(v_new):
                sigma *= st.gamma_inc
                continue
            ared = v - v_new
            floor = 64 * _EPS * abs(v) + (obj.noise(y) if obj.noise is not None else 0.0)
            if pred <= floor and ared >= -floor:
                rho = 1.0
            else:
                rho = ared / pred if pred > 0 else -math.inf
        if rho >= st.eta1 and v_new <= v:
            y = y_new
            v_true, g, H = obj.all(y)
            v = v_new if obj.decrease is not None else v_true
            evals += 1
            eig = np.linalg.eigh(H)
            gn = float(np.linalg.norm(g))
            lmin = float(eig[0][0])
            accepted += 1
            values.append(float(v))
            if rho >= st.eta2:
                sigma = max(st.gamma_dec * sigma, st.sigma_min)
        else:
            sigma *= st.gamma_inc
            if sigma > 1e300:
                res = ArcResult(y, float(v_true), gn, lmin, it, accepted, evals, False, values, sigma)
                raise BudgetExhausted("ARC regularization overflowed; no further progress possible", res)
