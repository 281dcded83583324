"""Closed-form probability bounds, low-rank variety geometry and a tube Monte-Carlo estimator.

All bounds are evaluated as natural logarithms so that exponents in the
thousands neither overflow nor underflow.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.special import gammaln
from scipy.stats import binomtest

from .core import _dim_from_len, as_symmetric, sample_uniform_ball, svec, triangular

__all__ = [
    "BoundQuery",
    "BoundResult",
    "TubeBounds",
    "MonteCarloEstimate",
    "triangular",
    "dist_to_low_rank",
    "project_low_rank",
    "variety_codim",
    "variety_degree",
    "tube_bound",
    "probability_bound",
    "mc_tube_probability",
    "VARIANTS",
]

LOG_8E = math.log(8.0) + 1.0
VARIANTS = ("cost", "cost_corollary", "ls", "ls_corollary", "constraints", "tube")


# ---------------------------------------------------------------------------
# variety geometry

def variety_codim(p: int) -> int:
    """Codimension of {rank <= n - p} inside S^n."""
    return triangular(p)


def variety_degree(n: int, p: int) -> int:
    """Degree of the defining minors of {rank <= n - p}."""
    return n - p + 1


def dist_to_low_rank(S, p: int) -> float:
    """Frobenius distance from ``S`` to the symmetric matrices of rank <= n - p."""
    S = as_symmetric(S, "S", atol=1e-12 * (1 + np.abs(np.asarray(S, dtype=float)).max(initial=0.0)))
    n = S.shape[0]
    if not 0 <= p <= n:
        raise ValueError(f"p must lie in [0, {n}]")
    if p == 0:
        return 0.0
    mags = np.sort(np.abs(np.linalg.eigvalsh(S)))
    return float(math.sqrt(math.fsum(mags[:p] ** 2)))


def project_low_rank(S, max_rank: int) -> np.ndarray:
    """Nearest symmetric matrix of rank <= ``max_rank`` (drop the smallest |eigenvalues|)."""
    S = as_symmetric(S, "S", atol=1e-12 * (1 + np.abs(np.asarray(S, dtype=float)).max(initial=0.0)))
    n = S.shape[0]
    if not 0 <= max_rank <= n:
        raise ValueError(f"max_rank must lie in [0, {n}]")
    w, V = np.linalg.eigh(S)
    order = np.argsort(np.abs(w), kind="stable")
    w = w.copy()
    w[order[: n - max_rank]] = 0.0
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# bound containers

@dataclass
class BoundResult:
    """A probability bound ``exp(log_value)`` with the conditions it relies on.

    When any validity flag is false the number is still reported but is not a
    guarantee. ``clipped`` marks bounds exceeding one.
    """

    log_value: float
    validity: dict[str, bool] = field(default_factory=dict)
    variant: str = ""

    @property
    def clipped(self) -> bool:
        return self.log_value > 0.0

    @property
    def valid(self) -> bool:
        return all(self.validity.values())

    @property
    def value(self) -> float:
        if self.log_value > 700:
            return math.inf
        return math.exp(self.log_value)

    @property
    def probability(self) -> float:
        """The bound capped at one."""
        return math.exp(min(self.log_value, 0.0))

    def to_dict(self) -> dict:
        lv = self.log_value
        return {
            "variant": self.variant,
            "log_value": lv if math.isfinite(lv) else ("-inf" if lv < 0 else "inf"),
            "value": self.value,
            "validity": dict(self.validity),
            "valid": self.valid,
            "clipped": self.clipped,
        }


@dataclass
class TubeBounds:
    summation: BoundResult
    simple: BoundResult


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _logsumexp(terms: list[float]) -> float:
    finite = [t for t in terms if t != -math.inf]
    if not finite:
        return -math.inf
    top = max(finite)
    return top + math.log(math.fsum(math.exp(t - top) for t in finite))


def _log_binom(k: int, i: int) -> float:
    return float(gammaln(k + 1) - gammaln(i + 1) - gammaln(k - i + 1))


def tube_bound(k: int, c: int, D: int, delta: float, sigma: float) -> TubeBounds:
    """Probability that a uniform point of a radius-``sigma`` ball in R^k lies
    within ``delta`` of a codimension-``c`` variety cut out by degree-``D`` equations.

    Returns the summation form and the simplified ``8e (2ekD delta / c sigma)^c`` form.
    """
    if not (1 <= c <= k):
        raise ValueError("need 1 <= c <= k")
    if D < 1:
        raise ValueError("D must be positive")
    if delta < 0 or sigma <= 0:
        raise ValueError("need delta >= 0 and sigma > 0")
    lr = _log(2.0 * D * delta / sigma)
    l1 = math.log1p(delta / sigma)
    terms = [_log_binom(k, i) + i * lr + (k - i) * l1 for i in range(c, k + 1)]
    summation = BoundResult(math.log(4.0) + _logsumexp(terms), {}, "tube_summation")
    ratio = 4 * math.e * k * D * delta / (c * sigma)
    flags = {"simple_form_region": max(ratio, k * delta / sigma) <= 1.0}
    simple = BoundResult(LOG_8E + c * _log(2 * math.e * k * D * delta / (c * sigma)), flags, "tube_simple")
    return TubeBounds(summation, simple)


# ---------------------------------------------------------------------------
# probability bounds

_REQUIRED = {
    "cost": ("n", "m", "p", "sigma"),
    "cost_corollary": ("n", "m", "p", "sigma", "eta", "t"),
    "ls": ("n", "m", "p", "sigma", "eps0"),
    "ls_corollary": ("n", "m", "p", "sigma", "eta", "t", "rho"),
    "constraints": ("n", "m", "p", "sigma", "Delta"),
    "tube": ("k", "c", "D", "delta", "sigma"),
}


@dataclass(frozen=True)
class BoundQuery:
    """Which bound to evaluate and its named parameters.

    ``delta`` may be given directly or derived: cost and constraints from
    ``(eps1, gamma, A_norm)``, ls from ``(eps1, eps2, R_A)``. ``kappa`` may be
    given directly or derived: cost from ``(R_lambda, A_norm)``, ls from
    ``(R_A, R_Y, b_norm)``, constraints from ``(R_lambda, R_A)``.
    """

    variant: str
    params: dict

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        missing = [k for k in _REQUIRED[self.variant] if k not in self.params]
        if missing:
            raise ValueError(f"{self.variant}: missing parameter(s) {missing}")
        for k, v in self.params.items():
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v) or v < 0:
                raise ValueError(f"parameter {k} must be a finite nonnegative number, got {v!r}")
        if self.variant != "tube":
            for k in ("n", "m", "p"):
                if int(self.params[k]) != self.params[k] or self.params[k] < 1:
                    raise ValueError(f"{k} must be a positive integer")
            if self.params["sigma"] <= 0:
                raise ValueError("sigma must be positive")
            if triangular(int(self.params["p"])) <= self.params["m"]:
                raise ValueError("the bound needs tau(p) > m")

    def get(self, key: str) -> float:
        try:
            return float(self.params[key])
        except KeyError:
            raise ValueError(f"{self.variant}: missing parameter {key!r}") from None

    def has(self, key: str) -> bool:
        return key in self.params


def _delta(q: BoundQuery) -> float:
    if q.has("delta"):
        return q.get("delta")
    if q.variant in ("ls", "ls_corollary"):
        eps2 = q.get("eps2")
        if eps2 <= 0:
            raise ValueError("eps2 must be positive")
        return q.get("eps1") * q.get("R_A") / math.sqrt(eps2)
    gamma = q.get("gamma")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return q.get("eps1") * q.get("A_norm") / gamma


def _kappa(q: BoundQuery) -> float:
    if q.has("kappa"):
        k = q.get("kappa")
    elif q.variant in ("ls", "ls_corollary"):
        R_A = q.get("R_A")
        k = 2.0 * (R_A * q.get("R_Y") ** 2 + q.get("b_norm")) * R_A
    elif q.variant == "constraints":
        k = q.get("R_lambda") * q.get("R_A")
    else:
        k = q.get("R_lambda") * q.get("A_norm")
    if k <= 0:
        raise ValueError("kappa must be positive")
    return k


def _core(delta: float, kappa: float, tau: int, m: int, log_base: float) -> float:
    """log of 8e delta^(tau - m) (3 kappa)^m base^tau."""
    return LOG_8E + (tau - m) * _log(delta) + m * math.log(3 * kappa) + tau * log_base


def probability_bound(q: BoundQuery) -> BoundResult:
    """Evaluate the selected bound in log space together with its validity flags."""
    v = q.variant
    if v == "tube":
        tb = tube_bound(int(q.get("k")), int(q.get("c")), int(q.get("D")), q.get("delta"), q.get("sigma"))
        return tb.summation
    n, m, p, sigma = int(q.get("n")), int(q.get("m")), int(q.get("p")), q.get("sigma")
    tau = triangular(p)
    n3 = float(n) ** 3
    delta = _delta(q)
    kappa = _kappa(q)
    flags: dict[str, bool] = {"tau_gt_m": tau > m}
    if v == "cost":
        flags["delta_lt_sigma_4en3"] = delta < sigma / (4 * math.e * n3)
        lv = _core(delta, kappa, tau, m, math.log(2 * math.e * n3 / sigma))
    elif v == "ls":
        eps0 = q.get("eps0")
        if eps0 <= 0:
            raise ValueError("eps0 must be positive")
        flags["delta_lt_sigma_eps0_4en3"] = delta < sigma * eps0 / (4 * math.e * n3)
        lv = _core(delta, kappa, tau, m, math.log(math.e * n3 / (sigma * eps0)))
    elif v == "constraints":
        Delta = q.get("Delta")
        R_A = q.get("R_A")
        if Delta <= 0 or R_A <= 0:
            raise ValueError("Delta and R_A must be positive")
        Dp = Delta / (2 * R_A)
        flags["delta_lt_min"] = delta < min(sigma * Dp / (4 * math.e * n3), Delta / 2)
        lv = _core(delta, kappa, tau, m, math.log(2 * math.e * n3 / (sigma * Dp)))
    else:
        eta, t = q.get("eta"), q.get("t")
        if eta <= 0 or t <= 0:
            raise ValueError("eta and t must be positive")
        flags["rank_condition"] = tau >= (1 + eta) * m + eta * t
        flags["three_kappa_ge_one"] = 3 * kappa >= 1
        if v == "cost_corollary":
            base = sigma / (2 * math.e * n3)
            flags["delta_cap"] = delta <= (1 / (3 * kappa)) ** (1 / eta) * base ** (1 + 1 / eta)
            flags["base_le_one"] = base <= 1
            lv = LOG_8E + t * math.log(sigma / (6 * kappa * math.e * n3))
        else:
            rho = q.get("rho")
            if rho <= 0:
                raise ValueError("rho must be positive")
            base = rho * sigma**2 / (math.e**2 * n3**2)
            flags["delta_cap"] = delta <= (1 / (3 * kappa)) ** (1 / eta) * base ** (1 + 1 / eta)
            flags["base_le_one"] = base <= 1
            if q.has("eps0"):
                flags["eps0_ge_rho_sigma"] = q.get("eps0") >= rho * sigma
            lv = LOG_8E + t * math.log(rho * sigma**2 / (3 * kappa * math.e**2 * n3**2))
    return BoundResult(lv, flags, v)


# ---------------------------------------------------------------------------
# Monte Carlo

@dataclass
class MonteCarloEstimate:
    successes: int
    trials: int
    low: float
    high: float

    @property
    def estimate(self) -> float:
        return self.successes / self.trials

    @property
    def half_width(self) -> float:
        return 0.5 * (self.high - self.low)


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = binomtest(successes, trials).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def mc_tube_probability(n: int, p: int, shift, center, sigma: float, delta: float, trials: int,
                        rng: np.random.Generator, batch: int = 20000) -> MonteCarloEstimate:
    """Estimate Pr[dist(X - shift, rank <= n - p) <= delta] for X uniform on ball(center, sigma)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    shift = as_symmetric(shift, "shift")
    center = as_symmetric(center, "center")
    if shift.shape != (n, n) or center.shape != (n, n):
        raise ValueError("shift and center must be n x n")
    if not 0 <= p <= n:
        raise ValueError("p out of range")
    c = svec(center) - svec(shift)
    k = c.size
    _dim_from_len(k)
    iu = np.triu_indices(n)
    off = iu[0] != iu[1]
    hits = 0
    done = 0
    while done < trials:
        size = min(batch, trials - done)
        v = sample_uniform_ball(c, sigma, rng, size=size)
        v[:, off] /= math.sqrt(2.0)
        M = np.zeros((size, n, n))
        M[:, iu[0], iu[1]] = v
        M[:, iu[1], iu[0]] = v
        if p == 0:
            hits += size
        else:
            mags = np.sort(np.abs(np.linalg.eigvalsh(M)), axis=1)[:, :p]
            d = np.sqrt(np.sum(mags**2, axis=1))
            hits += int(np.count_nonzero(d <= delta))
        done += size
    lo, hi = wilson_interval(hits, trials)
    return MonteCarloEstimate(hits, trials, lo, hi)
