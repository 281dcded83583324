import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bmsdp.bm import (
    PipelineConfig,
    ToleranceError,
    end_to_end,
    make_bm_oracles,
    make_ls_oracle,
    random_factor,
    solve_feasibility,
    solve_sdp_bm,
)
from bmsdp.certificates import ToleranceBundle, check_approx_optimal_sdp, gap_bound
from bmsdp.core import ConstraintMap, SdpInstance, make_rng
from bmsdp.harness.instances import gen_planted_sdp

from helpers import fd_gradient, fd_jacobian, rel_err

ONE = ConstraintMap.from_list([np.eye(1)])


def practical_cfg(**kw):
    base = dict(tolerances=ToleranceBundle(1e-6, 1e-6, 1e-2, 5e-7), R_lambda=10.0,
                feas_tolerances=(1e-8, 1e-6), feas_eps0=1e-6)
    base.update(kw)
    return PipelineConfig(**base)


def random_instance(rng, n, m):
    def s():
        G = rng.standard_normal((n, n))
        return (G + G.T) / 2
    return SdpInstance(s(), ConstraintMap.from_list([s() for _ in range(m)]), rng.standard_normal(m))


# oracles

def test_bm_scalar_oracle():
    prob = make_bm_oracles(SdpInstance(np.array([[3.0]]), ONE, [1.0]), 1)
    assert prob.f([2.0]) == pytest.approx(12.0)
    assert prob.grad_f([2.0]) == pytest.approx([12.0])
    assert prob.h([2.0]) == pytest.approx([3.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_bm_oracle_derivatives(n, m, seed):
    rng = make_rng(seed)
    p = int(rng.integers(1, n + 1))
    inst = random_instance(rng, n, m)
    prob = make_bm_oracles(inst, p)
    y = rng.standard_normal(n * p)
    w = rng.standard_normal(m)
    assert rel_err(prob.grad_f(y), fd_gradient(prob.f, y)) <= 1e-5
    assert rel_err(prob.grad_f(y), 2 * (inst.cost @ y.reshape(n, p)).ravel()) <= 1e-12
    assert rel_err(prob.jac_h(y), fd_jacobian(prob.h, y)) <= 1e-5
    assert rel_err(prob.hess_f(y), fd_jacobian(prob.grad_f, y)) <= 1e-5
    assert rel_err(prob.hess_h(y, w), fd_jacobian(lambda z: prob.jac_h(z).T @ w, y)) <= 1e-5
    s = rng.standard_normal(n * p)
    assert prob.f_diff(y, s) == pytest.approx(prob.f(y + s) - prob.f(y), rel=1e-9, abs=1e-12)
    assert np.allclose(prob.h_diff(y, s), prob.h(y + s) - prob.h(y), rtol=1e-9, atol=1e-12)
    # the Lagrangian Hessian of f + lam.h is 2 S(-lam) (x) I
    lag = prob.hess_f(y) + prob.hess_h(y, w)
    assert np.allclose(prob.lagrangian_hessian(y, w), lag)


def test_ls_oracle_examples():
    ls = make_ls_oracle(ONE, [0.0], 1)
    assert ls.value([0.5]) == pytest.approx(0.5**4)
    assert ls.gradient([0.5]) == pytest.approx([4 * 0.5**3])
    rng = make_rng(1)
    A = random_instance(rng, 3, 2).map
    Y = rng.standard_normal((3, 2))
    ls = make_ls_oracle(A, A(Y @ Y.T), 2)
    assert ls.value(Y.ravel()) == pytest.approx(0, abs=1e-24)
    assert np.allclose(ls.gradient(Y.ravel()), 0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_ls_oracle_derivatives(n, m, seed):
    rng = make_rng(seed)
    p = int(rng.integers(1, n + 1))
    inst = random_instance(rng, n, m)
    ls = make_ls_oracle(inst.map, inst.rhs, p)
    y = rng.standard_normal(n * p)
    assert rel_err(ls.gradient(y), fd_gradient(ls.value, y)) <= 1e-5
    assert rel_err(ls.hessian(y), fd_jacobian(ls.gradient, y)) <= 1e-5
    s = 0.1 * rng.standard_normal(n * p)
    assert ls.decrease(y, s) == pytest.approx(ls.value(y) - ls.value(y + s), rel=1e-8, abs=1e-12)


def test_oracle_rank_validation():
    with pytest.raises(ValueError):
        make_bm_oracles(SdpInstance(np.eye(2), ConstraintMap.from_list([np.eye(2)]), [1.0]), 3)


# pipelines

def test_sdp_bm_scalar_unique_feasible_point():
    inst = SdpInstance(np.array([[1.0]]), ONE, [1.0])
    res = solve_sdp_bm(inst, 1, np.array([[1.0]]), practical_cfg(R_lambda=4.0))
    assert abs(res.Y[0, 0]) == pytest.approx(1.0, abs=1e-6)
    assert res.lam[0] == pytest.approx(1.0, abs=1e-4)
    assert res.certified


def test_tolerances_violating_admissibility_rejected():
    with pytest.raises(ToleranceError):
        PipelineConfig(tolerances=ToleranceBundle(1e-6, 1e-2, 1e-2, 1e-2), R_lambda=10.0)
    inst = SdpInstance(np.array([[1.0]]), ONE, [1.0])
    with pytest.raises(ToleranceError):
        solve_sdp_bm(inst, 1, np.array([[1.0]]),
                     PipelineConfig(tolerances=ToleranceBundle(1e-6, 1e-2, 1e-2, 1e-2)))


def test_planted_n6_r2_p3_from_feasibility():
    pl = gen_planted_sdp(6, 2, make_rng(11, 0))
    inst = pl.instance
    cfg = practical_cfg()
    feas = solve_feasibility(inst.map, inst.rhs, 3, random_factor(6, 3, make_rng(11, 1)), cfg)
    assert feas.certified
    assert feas.residual <= feas.remark_bound
    res = solve_sdp_bm(inst, 3, feas.Y, cfg)
    assert res.certified
    # independent re-check, not the solver's bookkeeping
    X = res.Y @ res.Y.T
    assert check_approx_optimal_sdp(inst, X, res.lam, res.sdp_tolerances).certified
    gap = float(np.sum(inst.cost * X) - np.sum(inst.cost * pl.X0))
    bound = gap_bound(res.sdp_tolerances, float(np.linalg.norm(res.lam)), float(np.linalg.norm(X)), 6)
    assert gap <= bound + 1e-8


def test_feasibility_infeasible_scalar():
    res = solve_feasibility(ONE, [-1.0], 1, np.array([[0.8]]), practical_cfg(feas_eps0=1e-6))
    assert abs(res.Y[0, 0]) < 1e-3
    assert res.residual == pytest.approx(1.0, abs=1e-6)
    assert res.ls.certified and res.ls.route == "stationarity"


def test_feasibility_from_feasible_start():
    rng = make_rng(2)
    A = random_instance(rng, 4, 3).map
    Y = rng.standard_normal((4, 2))
    res = solve_feasibility(A, A(Y @ Y.T), 2, Y, practical_cfg())
    assert res.certified and res.arc.iterations <= 2


def test_end_to_end_planted_n8():
    pl = gen_planted_sdp(8, 2, make_rng(21, 0))
    e2e = end_to_end(pl.instance, 3, practical_cfg(), rng=make_rng(21, 1))
    assert e2e.error is None and e2e.certified
    assert np.sum(pl.instance.cost * (e2e.Y @ e2e.Y.T)) == pytest.approx(np.sum(pl.instance.cost * pl.X0), abs=1e-4)


def test_end_to_end_low_rank_not_certified():
    pl = gen_planted_sdp(8, 2, make_rng(21, 0))
    e2e = end_to_end(pl.instance, 1, practical_cfg(), rng=make_rng(21, 1))
    assert not e2e.certified
    assert e2e.feasibility is not None


def test_end_to_end_deterministic():
    pl = gen_planted_sdp(6, 2, make_rng(5, 0))
    runs = [end_to_end(pl.instance, 3, practical_cfg(), rng=make_rng(5, 1)) for _ in range(2)]
    a, b = (r.optimality for r in runs)
    assert np.array_equal(a.Y, b.Y) and np.array_equal(a.lam, b.lam)
    assert [t.to_csv() for t in a.traces] == [t.to_csv() for t in b.traces]
