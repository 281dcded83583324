"""Phase-transition and smoothing experiments over planted instances.

Every trial draws its randomness from ``make_rng(seed, stream, ...)`` keyed by
its grid position, so results do not depend on worker count or scheduling.
Deterministic columns go to the main CSV; wall-clock timings go to a sidecar
``*.timing.csv`` so the main output is byte-reproducible.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import asdict, dataclass, field, fields
import io
import json
import math
from pathlib import Path
import time
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from ..bm import EndToEndResult, PipelineConfig, end_to_end, random_factor
from ..certificates import ToleranceBundle, check_approx_optimal_sdp
from ..core import SdpInstance, make_rng
from .instances import gen_planted_sdp, load_instance, perturb_instance

PHASE_COLUMNS = ("r", "p", "trials", "successes", "rate", "mean_inner_iters")
PHASE_TIMING_COLUMNS = ("r", "p", "trials", "mean_runtime")
SMOOTHING_COLUMNS = ("sigma", "trials", "successes", "rate", "mean_inner_iters")
RESIDUAL_COLUMNS = ("sigma", "iteration", "count", "mean", "std")

# RNG stream identifiers
_INSTANCE, _INIT, _CANDIDATE, _PERTURB = 0, 1, 2, 3


DEFAULT_PIPELINE: dict[str, Any] = {
    "tolerances": [1e-6, 1e-6, 1e-2, 5e-7],
    "R_lambda": 10.0,
    "feas_tolerances": [1e-8, 1e-6],
    "feas_eps0": 1e-6,
}


def pipeline_from_dict(d: dict | None) -> PipelineConfig:
    """Build a :class:`PipelineConfig` from JSON-style values (lists become tuples/bundles)."""
    d = dict(DEFAULT_PIPELINE if d is None else d)
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown pipeline keys: {sorted(unknown)}")
    for key in ("tolerances", "sdp_tolerances"):
        if d.get(key) is not None:
            d[key] = ToleranceBundle(*map(float, d[key]))
    if d.get("feas_tolerances") is not None:
        d["feas_tolerances"] = tuple(float(x) for x in d["feas_tolerances"])
    return PipelineConfig(**d)


@dataclass
class ExperimentConfig:
    """Settings shared by both experiments.

    ``p_list=None`` sweeps ``1..2r``. ``success_tol`` is relative to
    ``|C|_F`` and applies to all three approximate-optimality residuals.
    The smoothing experiment uses ``r_list[0]`` and ``p = smoothing_p or r``;
    ``base_instance`` (a JSON path) skips bad-instance selection.
    """

    n: int = 20
    r_list: list[int] = field(default_factory=lambda: [3])
    p_list: list[int] | None = None
    trials: int = 50
    sigma_list: list[float] = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2])
    success_tol: float = 1e-4
    slack: str = "projector"
    init_scale: float = 1.0
    pipeline: dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_PIPELINE))
    smoothing_p: int | None = None
    perturb_target: str = "cost"
    candidates: int = 10
    selection_inits: int = 20
    base_instance: str | None = None
    seed: int = 0
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.n < 1 or not self.r_list or any(not 1 <= r <= self.n for r in self.r_list):
            raise ValueError("need n >= 1 and 1 <= r <= n for every r")
        if self.p_list is not None and any(not 1 <= p <= self.n for p in self.p_list):
            raise ValueError("every p must lie in [1, n]")
        if any(s < 0 for s in self.sigma_list):
            raise ValueError("sigma values must be nonnegative")
        if self.success_tol <= 0 or self.workers < 1:
            raise ValueError("success_tol and workers must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        pipeline_from_dict(self.pipeline)  # validate early

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        d = dict(d)
        if "pipeline" in d:
            d["pipeline"] = {**DEFAULT_PIPELINE, **d["pipeline"]}
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)

    def ps_for(self, r: int) -> list[int]:
        if self.p_list is not None:
            return list(self.p_list)
        return list(range(1, min(2 * r, self.n) + 1))


@dataclass(frozen=True)
class TrialOutcome:
    success: bool
    inner_iterations: int
    runtime: float
    residuals: dict
    criticality: tuple[float, ...] = ()
    error: str | None = None


def is_success(inst: SdpInstance, res: EndToEndResult, rel_tol: float) -> tuple[bool, dict]:
    """Approximate optimality of the final pair at ``rel_tol * |C|_F`` on every residual."""
    if res.optimality is None:
        return False, {}
    scale = rel_tol * float(np.linalg.norm(inst.cost))
    Y = res.optimality.Y
    rep = check_approx_optimal_sdp(inst, Y @ Y.T, res.optimality.lam, ToleranceBundle(scale, scale, scale))
    return rep.certified, dict(rep.residuals)


def criticality_series(res: EndToEndResult) -> tuple[float, ...]:
    """Lagrangian stationarity |grad mu_t| / (2 (f - t)) per Phase-II step, across all stages."""
    if res.optimality is None:
        return ()
    out = []
    for tr in res.optimality.traces:
        for s in tr.steps:
            if s.case != "phase1" and s.f > s.t_k:
                out.append(s.grad_norm / (2.0 * (s.f - s.t_k)))
    return tuple(out)


def run_trial(inst: SdpInstance, p: int, cfg: ExperimentConfig, init_rng: np.random.Generator,
              keep_series: bool = False) -> TrialOutcome:
    pipe = pipeline_from_dict(cfg.pipeline)
    t0 = time.perf_counter()
    Y0 = random_factor(inst.n, p, init_rng, cfg.init_scale)
    res = end_to_end(inst, p, pipe, Y0=Y0)
    runtime = time.perf_counter() - t0
    ok, resid = is_success(inst, res, cfg.success_tol)
    series = criticality_series(res) if keep_series else ()
    return TrialOutcome(ok, res.inner_iterations, runtime, resid, series, res.error)


def _map(fn: Callable, jobs: Sequence, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _csv(columns: Iterable[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def _sidecar(path: Path, tag: str) -> Path:
    return path.with_name(f"{path.stem}.{tag}{path.suffix or '.csv'}")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# phase transition

def planted_for(cfg: ExperimentConfig, r: int, i: int):
    return gen_planted_sdp(cfg.n, r, make_rng(cfg.seed, _INSTANCE, r, i), slack=cfg.slack)


def _phase_job(job) -> TrialOutcome:
    cfg, r, p, i = job
    inst = planted_for(cfg, r, i).instance
    return run_trial(inst, p, cfg, make_rng(cfg.seed, _INIT, r, p, i))


@dataclass
class PhaseTransitionResult:
    rows: list[tuple]
    timing_rows: list[tuple]
    outcomes: dict[tuple[int, int], list[TrialOutcome]]

    def to_csv(self) -> str:
        return _csv(PHASE_COLUMNS, self.rows)

    def timing_csv(self) -> str:
        return _csv(PHASE_TIMING_COLUMNS, self.timing_rows)

    def rate(self, r: int, p: int) -> float:
        for row in self.rows:
            if row[0] == r and row[1] == p:
                return row[4]
        raise KeyError((r, p))


def run_phase_transition(cfg: ExperimentConfig) -> PhaseTransitionResult:
    """Success rate of the end-to-end pipeline per (r, p) cell on shared planted instances.

    The same ``trials`` planted instances are used for every ``p`` of a given ``r``.
    Cells with zero trials produce no row.
    """
    cells = [(r, p) for r in cfg.r_list for p in cfg.ps_for(r)]
    jobs = [(cfg, r, p, i) for r, p in cells for i in range(cfg.trials)]
    results = _map(_phase_job, jobs, cfg.workers)
    outcomes: dict[tuple[int, int], list[TrialOutcome]] = {c: [] for c in cells}
    for (_, r, p, _), out in zip(jobs, results):
        outcomes[(r, p)].append(out)
    rows, timing = [], []
    for (r, p), outs in outcomes.items():
        if not outs:
            continue
        k = sum(o.success for o in outs)
        rows.append((r, p, len(outs), k, k / len(outs), math.fsum(o.inner_iterations for o in outs) / len(outs)))
        timing.append((r, p, len(outs), math.fsum(o.runtime for o in outs) / len(outs)))
    result = PhaseTransitionResult(rows, timing, outcomes)
    if cfg.out:
        path = Path(cfg.out)
        _write(path, result.to_csv())
        _write(_sidecar(path, "timing"), result.timing_csv())
    return result


# ---------------------------------------------------------------------------
# smoothing

def _selection_job(job) -> bool:
    cfg, r, p, c, j = job
    inst = gen_planted_sdp(cfg.n, r, make_rng(cfg.seed, _CANDIDATE, r, c), slack=cfg.slack).instance
    return run_trial(inst, p, cfg, make_rng(cfg.seed, _CANDIDATE, r, c, j)).success


def select_bad_instance(cfg: ExperimentConfig, r: int, p: int) -> tuple[SdpInstance, int, list[float]]:
    """Planted candidate with the lowest success rate over ``selection_inits`` starts (first on ties)."""
    jobs = [(cfg, r, p, c, j) for c in range(cfg.candidates) for j in range(cfg.selection_inits)]
    wins = _map(_selection_job, jobs, cfg.workers)
    rates = [sum(wins[c * cfg.selection_inits:(c + 1) * cfg.selection_inits]) / cfg.selection_inits
             for c in range(cfg.candidates)]
    best = int(np.argmin(rates))
    inst = gen_planted_sdp(cfg.n, r, make_rng(cfg.seed, _CANDIDATE, r, best), slack=cfg.slack).instance
    return inst, best, rates


def _smoothing_job(job) -> TrialOutcome:
    cfg, inst, p, si, sigma, i = job
    pert = perturb_instance(inst, sigma, cfg.perturb_target, make_rng(cfg.seed, _PERTURB, si, i))
    return run_trial(pert, p, cfg, make_rng(cfg.seed, _INIT, si, i), keep_series=True)


@dataclass
class SmoothingResult:
    rows: list[tuple]
    residual_rows: list[tuple]
    timing_rows: list[tuple]
    meta: dict
    outcomes: dict[float, list[TrialOutcome]]

    def to_csv(self) -> str:
        return _csv(SMOOTHING_COLUMNS, self.rows)

    def residual_csv(self) -> str:
        return _csv(RESIDUAL_COLUMNS, self.residual_rows)

    def timing_csv(self) -> str:
        return _csv(("sigma", "trials", "mean_runtime"), self.timing_rows)

    def rate(self, sigma: float) -> float:
        for row in self.rows:
            if row[0] == sigma:
                return row[3]
        raise KeyError(sigma)


def _residual_stats(sigma: float, series: list[tuple[float, ...]]) -> list[tuple]:
    rows = []
    longest = max((len(s) for s in series), default=0)
    for k in range(longest):
        vals = np.array([s[k] for s in series if len(s) > k])
        rows.append((sigma, k + 1, len(vals), float(vals.mean()), float(vals.std())))
    return rows


def run_smoothing_experiment(cfg: ExperimentConfig, base: SdpInstance | None = None) -> SmoothingResult:
    """Success rate per perturbation size on one (typically hard) instance.

    ``sigma = 0`` leaves the instance untouched, so that column measures
    re-initialization alone. Also reports mean and std, over trials, of the
    Lagrangian stationarity at each outer iteration.
    """
    r = cfg.r_list[0]
    p = cfg.smoothing_p or r
    meta: dict[str, Any] = {"n": cfg.n, "r": r, "p": p, "seed": cfg.seed}
    if base is None and cfg.base_instance:
        base, _ = load_instance(cfg.base_instance)
        meta["base_instance"] = cfg.base_instance
    elif base is None:
        base, idx, rates = select_bad_instance(cfg, r, p)
        meta.update(selected_candidate=idx, candidate_rates=rates)
    jobs = [(cfg, base, p, si, float(s), i) for si, s in enumerate(cfg.sigma_list) for i in range(cfg.trials)]
    results = _map(_smoothing_job, jobs, cfg.workers)
    outcomes: dict[float, list[TrialOutcome]] = {float(s): [] for s in cfg.sigma_list}
    for job, out in zip(jobs, results):
        outcomes[job[4]].append(out)
    rows, resid, timing = [], [], []
    for s, outs in outcomes.items():
        k = sum(o.success for o in outs)
        rows.append((s, len(outs), k, k / len(outs), math.fsum(o.inner_iterations for o in outs) / len(outs)))
        resid.extend(_residual_stats(s, [o.criticality for o in outs]))
        timing.append((s, len(outs), math.fsum(o.runtime for o in outs) / len(outs)))
    result = SmoothingResult(rows, resid, timing, meta, outcomes)
    if cfg.out:
        path = Path(cfg.out)
        _write(path, result.to_csv())
        _write(_sidecar(path, "residuals"), result.residual_csv())
        _write(_sidecar(path, "timing"), result.timing_csv())
        _write(path.with_name(path.stem + ".meta.json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return result
