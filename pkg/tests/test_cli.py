import json

import pytest

from jumpmix.cli import main


def write_cfg(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh)
    return str(path)


@pytest.fixture
def linear_cfg(tmp_path):
    return write_cfg(tmp_path / "cfg.json", {
        "system": {"preset": "linear_1d", "params": {"alpha": 1.0, "rate": 2.0}},
        "seed": 11,
        "replicas": 200,
        "horizon": 10.0,
        "coupling": {"r": 1.0},
        "moments": {"k_max": 5, "t_grid": [0.0, 1.0, 2.0]},
        "mixing": {"t_grid": {"start": 0.0, "stop": 8.0, "num": 9}, "bins": 30,
                   "keep_blocks": [1, 3]},
        "trajectories": 3,
    })


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_simulate_outputs(tmp_path, linear_cfg):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", linear_cfg, "--out", str(out)]) == 0
    for name in ["trajectories.csv", "moments_embedded.csv",
                 "moments_continuous.csv", "resolved_config.json",
                 "moments.png", "trajectories.png"]:
        assert (out / name).exists()
    header = read(out / "trajectories.csv").decode().splitlines()[0]
    assert header == "replica,k,tau_k,x_1"


def test_simulate_deterministic_and_no_plots(tmp_path, linear_cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", linear_cfg, "--out", str(a),
                 "--no-plots"]) == 0
    assert main(["simulate", "--config", linear_cfg, "--out", str(b),
                 "--no-plots"]) == 0
    for name in ["trajectories.csv", "moments_embedded.csv", "moments_continuous.csv"]:
        assert read(a / name) == read(b / name)
    assert not (a / "moments.png").exists()


def test_couple_thread_determinism(tmp_path, linear_cfg):
    a, b = tmp_path / "t1", tmp_path / "t2"
    assert main(["couple", "--config", linear_cfg, "--out", str(a),
                 "--threads", "1", "--no-plots"]) == 0
    assert main(["couple", "--config", linear_cfg, "--out", str(b),
                 "--threads", "3", "--no-plots"]) == 0
    assert read(a / "coupling_records.csv") == read(b / "coupling_records.csv")
    assert read(a / "tail_curve.csv") == read(b / "tail_curve.csv")


def test_resolved_config_round_trip(tmp_path, linear_cfg):
    a = tmp_path / "orig"
    assert main(["couple", "--config", linear_cfg, "--out", str(a),
                 "--no-plots"]) == 0
    b = tmp_path / "rerun"
    assert main(["couple", "--config", str(a / "resolved_config.json"),
                 "--out", str(b), "--no-plots"]) == 0
    assert read(a / "coupling_records.csv") == read(b / "coupling_records.csv")


def test_seed_override_changes_output(tmp_path, linear_cfg):
    a, b = tmp_path / "s1", tmp_path / "s2"
    assert main(["simulate", "--config", linear_cfg, "--out", str(a),
                 "--seed", "1", "--no-plots"]) == 0
    assert main(["simulate", "--config", linear_cfg, "--out", str(b),
                 "--seed", "2", "--no-plots"]) == 0
    assert read(a / "trajectories.csv") != read(b / "trajectories.csv")


def test_mixing_outputs(tmp_path, linear_cfg):
    out = tmp_path / "mix"
    assert main(["mixing", "--config", linear_cfg, "--out", str(out)]) == 0
    for name in ["tv_curve.csv", "tail_curve.csv", "mixing_report.json",
                 "mixing_summary.json", "mixing.png"]:
        assert (out / name).exists()
    summary = json.loads(read(out / "mixing_summary.json"))
    assert summary["coupling_inequality_holds"] is True


def test_mixing_end_to_end_rate_fit(tmp_path):
    # The nondegenerate scalar gallery mixes exponentially: the fitted TV
    # report must show a positive rate with a clean log-linear fit.
    cfg = write_cfg(tmp_path / "m.json", {
        "system": {"preset": "linear_1d", "params": {"alpha": 1.0, "rate": 2.0}},
        "seed": 77,
        "replicas": 5000,
        "horizon": 15.0,
        "coupling": {"r": 1.0},
        "mixing": {"t_grid": {"start": 0.0, "stop": 15.0, "num": 25}, "bins": 50},
    })
    out = tmp_path / "m5k"
    assert main(["mixing", "--config", cfg, "--out", str(out), "--no-plots"]) == 0
    rep = json.loads(read(out / "mixing_report.json"))
    assert rep["c"] > 0
    assert rep["r_squared"] >= 0.95
    assert rep["mixing"] is True


def test_check_outputs_pass_verdicts(tmp_path, linear_cfg):
    out = tmp_path / "chk"
    assert main(["check", "--config", linear_cfg, "--out", str(out)]) == 0
    rep = json.loads(read(out / "certificates.json"))
    assert rep["dissipativity"]["passed"] is True
    assert rep["kalman"]["verdict"] == "pass"
    assert rep["hormander"]["verdict"] == "pass"
    assert rep["solid"]["verdict"] == "pass"


def test_check_galerkin_probe_scan(tmp_path):
    cfg = write_cfg(tmp_path / "g.json", {
        "system": {"preset": "galerkin",
                   "params": {"D": 1, "N": 2, "g": "bump"}},
        "seed": 3,
        "check": {"solid_probes": 8, "probe_norms": [0.0, 2.0, 6.0]},
    })
    out = tmp_path / "gchk"
    assert main(["check", "--config", cfg, "--out", str(out), "--no-plots"]) == 0
    rep = json.loads(read(out / "certificates.json"))
    assert "tower_probe_scan" in rep
    assert rep["dissipativity"]["beta_fitted"] is True


def test_galerkin_steer_command(tmp_path):
    cfg = write_cfg(tmp_path / "g.json", {
        "system": {"preset": "galerkin", "params": {"D": 1, "N": 2}},
        "seed": 5,
        "steering": {"targets": 2, "epsilon": 0.01, "time_budget": 50.0},
    })
    out = tmp_path / "steer"
    assert main(["galerkin-steer", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads(read(out / "steering_summary.json"))
    assert summary["all_within_epsilon"] is True
    assert (out / "steering_results.csv").exists()
    assert (out / "control_0.csv").exists()


def test_galerkin_steer_wrong_preset(tmp_path, linear_cfg):
    assert main(["galerkin-steer", "--config", linear_cfg,
                 "--out", str(tmp_path / "x"), "--no-plots"]) == 1


def test_network_command(tmp_path):
    cfg = write_cfg(tmp_path / "nw.json", {
        "system": {"preset": "chain_langevin", "params": {"L": 3}},
        "seed": 5,
    })
    out = tmp_path / "nw"
    assert main(["network", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads(read(out / "network_report.json"))
    assert rep["conditions"]["kalman"]["verdict"] == "pass"
    assert rep["langevin"]["kalman"]["verdict"] == "pass"
    assert max(rep["langevin"]["eigenvalues_real"]) < 0


def test_exit_code_validation_errors(tmp_path):
    missing = str(tmp_path / "nope.json")
    assert main(["check", "--config", missing, "--out", str(tmp_path / "o")]) == 1
    bad = write_cfg(tmp_path / "bad.json", {"system": {"preset": "linear_1d"},
                                            "seed": 1, "bogus": 2})
    assert main(["check", "--config", bad, "--out", str(tmp_path / "o")]) == 1
    badpreset = write_cfg(tmp_path / "bp.json",
                          {"system": {"preset": "nope"}, "seed": 1})
    assert main(["check", "--config", badpreset, "--out", str(tmp_path / "o")]) == 1
    badparam = write_cfg(tmp_path / "bpar.json",
                         {"system": {"preset": "linear_1d",
                                     "params": {"alpha": -2.0}}, "seed": 1})
    assert main(["check", "--config", badparam, "--out", str(tmp_path / "o")]) == 1
    notjson = tmp_path / "nj.json"
    notjson.write_text("not json")
    assert main(["check", "--config", str(notjson), "--out", str(tmp_path / "o")]) == 1


def test_exit_code_numeric_failure(tmp_path):
    # Solid certificate with one forcing column cannot reach rank 2 in one
    # jump; the precondition raises a numeric failure.
    cfg = write_cfg(tmp_path / "n.json", {
        "system": {"preset": "spiral_2d"},
        "seed": 1,
        "check": {"solid_m": 1},
    })
    assert main(["check", "--config", cfg, "--out", str(tmp_path / "o"),
                 "--no-plots"]) == 2
