import json
import math

import numpy as np
import pytest
from scipy import stats

from bmsdp.certificates import ToleranceBundle, check_approx_optimal_sdp
from bmsdp.core import make_rng, svec, triangular
from bmsdp.harness.cli import main
from bmsdp.harness.experiments import (
    PHASE_COLUMNS,
    SMOOTHING_COLUMNS,
    ExperimentConfig,
    pipeline_from_dict,
    run_phase_transition,
    run_smoothing_experiment,
)
from bmsdp.harness.instances import (
    PlantedInvariantError,
    gen_planted_sdp,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    perturb_instance,
    save_instance,
    verify_planted,
)


# planted instances

def test_planted_full_size_constraint_count():
    pl = gen_planted_sdp(50, 7, make_rng(0))
    assert pl.instance.m == 28


@pytest.mark.parametrize("slack", ["projector", "wishart"])
def test_planted_invariants(slack):
    pl = gen_planted_sdp(10, 3, make_rng(1), slack=slack)
    inst = pl.instance
    assert np.array_equal(inst.map(pl.X0), inst.rhs)
    assert np.linalg.eigvalsh(pl.S0)[0] >= -1e-12
    assert np.linalg.norm(pl.S0 @ pl.X0) <= 1e-12
    w = np.linalg.eigvalsh(pl.X0)
    assert int(np.sum(w > 1e-8 * w[-1])) == 3
    assert check_approx_optimal_sdp(inst, pl.X0, pl.lambda0, ToleranceBundle(1e-10, 1e-10, 1e-10)).certified


def test_planted_rejects_bad_rank_and_slack():
    with pytest.raises(ValueError):
        gen_planted_sdp(3, 4, make_rng(0))
    with pytest.raises(ValueError):
        gen_planted_sdp(3, 1, make_rng(0), slack="other")


def test_verify_planted_detects_tampering():
    pl = gen_planted_sdp(6, 2, make_rng(2))
    bad = type(pl)(pl.instance, pl.X0, pl.lambda0 + 0.1, pl.S0, pl.r)
    with pytest.raises(PlantedInvariantError):
        verify_planted(bad)


def test_planted_is_seed_deterministic():
    a = gen_planted_sdp(7, 2, make_rng(3))
    b = gen_planted_sdp(7, 2, make_rng(3))
    assert np.array_equal(a.instance.cost, b.instance.cost)
    assert np.array_equal(a.instance.map.mats, b.instance.map.mats)


# perturbations

def test_perturb_sigma_zero_unchanged():
    inst = gen_planted_sdp(5, 2, make_rng(4)).instance
    for target in ("cost", "constraints"):
        assert perturb_instance(inst, 0.0, target, make_rng(5)) is inst
    with pytest.raises(ValueError):
        perturb_instance(inst, 0.1, "rhs", make_rng(5))
    with pytest.raises(ValueError):
        perturb_instance(inst, -0.1, "cost", make_rng(5))


def test_perturb_cost_stays_in_ball():
    inst = gen_planted_sdp(5, 2, make_rng(6)).instance
    rng = make_rng(7)
    for _ in range(200):
        pert = perturb_instance(inst, 0.3, "cost", rng)
        assert np.linalg.norm(pert.cost - inst.cost) <= 0.3 * (1 + 1e-12)
        assert np.array_equal(pert.rhs, inst.rhs) and pert.map is inst.map


def test_perturb_constraints_radius_law():
    inst = gen_planted_sdp(3, 2, make_rng(8)).instance
    k = inst.m * triangular(inst.n)
    sigma = 0.5
    rng = make_rng(9)
    u = []
    for _ in range(4000):
        pert = perturb_instance(inst, sigma, "constraints", rng)
        d = np.linalg.norm(pert.map.mats - inst.map.mats)
        u.append((d / sigma) ** k)
        assert np.array_equal(pert.cost, inst.cost)
    assert stats.kstest(u, "uniform").pvalue > 0.01


# persistence

def test_json_round_trip_is_bit_exact(tmp_path):
    pl = gen_planted_sdp(6, 2, make_rng(10))
    path = tmp_path / "inst.json"
    save_instance(path, pl.instance, {"r": 2})
    inst, meta = load_instance(path)
    assert meta == {"r": 2}
    assert np.array_equal(inst.cost, pl.instance.cost)
    assert np.array_equal(inst.map.mats, pl.instance.map.mats)
    assert np.array_equal(inst.rhs, pl.instance.rhs)
    d = json.loads(path.read_text())
    assert set(d) == {"n", "m", "C", "A", "b", "meta"}
    assert d["C"] == [float(x) for x in svec(pl.instance.cost)]
    assert instance_to_dict(inst, meta) == d


def test_json_rejects_inconsistent_dimensions():
    d = instance_to_dict(gen_planted_sdp(4, 1, make_rng(11)).instance)
    d["n"] = 5
    with pytest.raises(ValueError):
        instance_from_dict(d)
    del d["b"]
    with pytest.raises(ValueError):
        instance_from_dict(d)


# experiments

def small_cfg(**kw):
    base = dict(n=6, r_list=[2], p_list=[1, 3], trials=3, sigma_list=[0.0, 0.1], candidates=2,
                selection_inits=2, seed=1)
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        ExperimentConfig(trials=0)
    with pytest.raises(ValueError):
        ExperimentConfig(r_list=[30])
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        pipeline_from_dict({"bogus": 1})
    cfg = small_cfg()
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    assert ExperimentConfig(n=20, r_list=[3]).ps_for(3) == [1, 2, 3, 4, 5, 6]


def test_phase_transition_small(tmp_path):
    cfg = small_cfg(out=str(tmp_path / "pt.csv"))
    res = run_phase_transition(cfg)
    lines = (tmp_path / "pt.csv").read_text().splitlines()
    assert lines[0] == ",".join(PHASE_COLUMNS)
    assert len(lines) == 1 + 2
    assert (tmp_path / "pt.timing.csv").exists()
    for row in res.rows:
        assert 0 <= row[3] <= row[2] == 3
    assert res.rate(2, 3) == 1.0


def test_phase_transition_full_rank_cell():
    cfg = ExperimentConfig(n=6, r_list=[2], p_list=[6], trials=10, seed=3)
    assert run_phase_transition(cfg).rate(2, 6) == 1.0


def test_phase_transition_worker_independent():
    a = run_phase_transition(small_cfg(workers=1)).to_csv()
    b = run_phase_transition(small_cfg(workers=2)).to_csv()
    assert a == b


def test_smoothing_small(tmp_path):
    cfg = small_cfg(out=str(tmp_path / "sm.csv"))
    res = run_smoothing_experiment(cfg)
    lines = (tmp_path / "sm.csv").read_text().splitlines()
    assert lines[0] == ",".join(SMOOTHING_COLUMNS)
    assert len(lines) == 1 + 2
    meta = json.loads((tmp_path / "sm.meta.json").read_text())
    assert meta["selected_candidate"] in (0, 1) and len(meta["candidate_rates"]) == 2
    resid = (tmp_path / "sm.residuals.csv").read_text().splitlines()
    assert resid[0] == "sigma,iteration,count,mean,std" and len(resid) > 1
    assert all(o.criticality for o in res.outcomes[0.0] if o.success)


def test_smoothing_with_given_base(tmp_path):
    pl = gen_planted_sdp(6, 2, make_rng(12))
    path = tmp_path / "base.json"
    save_instance(path, pl.instance)
    cfg = small_cfg(base_instance=str(path), sigma_list=[0.0])
    res = run_smoothing_experiment(cfg)
    assert res.meta["base_instance"] == str(path)
    assert res.rate(0.0) == 1.0


def test_experiment_csv_reproducible(tmp_path):
    for name in ("a", "b"):
        run_phase_transition(small_cfg(out=str(tmp_path / f"{name}.csv")))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


# CLI

def test_cli_round_trip(tmp_path, capsys):
    inst_path = tmp_path / "inst.json"
    assert main(["gen-planted", "-n", "6", "-r", "2", "--seed", "4", "--out", str(inst_path)]) == 0
    sol_path = tmp_path / "sol.json"
    assert main(["solve", str(inst_path), "-p", "3", "--seed", "4", "--out", str(sol_path)]) == 0
    sol = json.loads(sol_path.read_text())
    assert sol["sdp"]["verdict"] == "certified" and sol["error"] is None
    cert_path = tmp_path / "cert.json"
    code = main(["certify", str(inst_path), str(sol_path), "--tol", "1e-5", "1e-4", "1e-2", "1e-6",
                 "--afac", "--out", str(cert_path)])
    cert = json.loads(cert_path.read_text())
    assert code == 0 and cert["sdp"]["verdict"] == "certified" and "afac" in cert
    assert main(["feasify", str(inst_path), "-p", "3", "--out", str(tmp_path / "f.json")]) == 0


def test_cli_bounds_and_tube(tmp_path, capsys):
    q = tmp_path / "q.json"
    q.write_text(json.dumps({"variant": "cost", "params": {"n": 10, "m": 3, "p": 3, "sigma": 0.1,
                                                          "eps1": 1e-9, "gamma": 1.0, "A_norm": 1.0,
                                                          "R_lambda": 1.0}}))
    assert main(["bounds", str(q)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["valid"] and math.isfinite(out["log_value"])
    q.write_text(json.dumps({"variant": "tube", "params": {"k": 3, "c": 1, "D": 2, "delta": 0.01, "sigma": 1.0}}))
    assert main(["bounds", str(q)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out) == {"summation", "simple"}
    assert main(["tube-mc", "--trials", "2000", "--delta", "0.05", "--threads", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert 0 <= out["estimate"] <= 1 and out["trials"] == 2000


def test_cli_experiments(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 6, "r_list": [2], "p_list": [3], "sigma_list": [0.0],
                               "candidates": 1, "selection_inits": 1}))
    out = tmp_path / "pt.csv"
    assert main(["phase-transition", "--config", str(cfg), "--trials", "2", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == ",".join(PHASE_COLUMNS)
    out = tmp_path / "sm.csv"
    assert main(["smoothing", "--config", str(cfg), "--trials", "2", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 2


def test_cli_rejects_bad_seed():
    with pytest.raises(SystemExit):
        main(["gen-planted", "-n", "3", "-r", "1", "--seed", "-1"])
