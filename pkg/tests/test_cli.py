"""Experiment harness: dispatch, exit codes, artifacts, reproducibility."""

import json

import pytest

from wickgrid import cli


def run(tmp_path, experiment, config_text="", seed=None, subdir="run"):
    out = tmp_path / subdir
    args = [experiment, "--out", str(out)]
    if config_text is not None:
        cfg = tmp_path / f"{subdir}.cfg"
        cfg.write_text(config_text)
        args += ["--config", str(cfg)]
    if seed is not None:
        args += ["--seed", str(seed)]
    code = cli.main(args)
    return code, out


def read_csv(path):
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    rows = [dict(zip(header, ln.split(","))) for ln in lines[1:]]
    return rows


def test_unknown_experiment_is_usage_error(tmp_path):
    code, _ = run(tmp_path, "does-not-exist")
    assert code == 64


def test_missing_config_is_usage_error(tmp_path):
    code = cli.main(["gram", "--config", str(tmp_path / "nope.cfg"),
                     "--out", str(tmp_path / "o")])
    assert code == 64


def test_malformed_config_line(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("this line has no equals sign\n")
    code = cli.main(["gram", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 64


def test_misaligned_time_is_config_error(tmp_path):
    code, _ = run(tmp_path, "jensen", "model = fbm\nH = 0.75\nN = 8\nr = 0.3\n")
    assert code == 1


def test_opnorm_sweep_dichotomy(tmp_path):
    code, out = run(tmp_path, "opnorm-sweep",
                    "H_list = 0.2,0.35,0.5,0.75\nN = 16\n", seed=1)
    assert code == 0
    rows = read_csv(out / "opnorm_sweep.csv")
    by_h = {float(r["H"]): float(r["opnorm"]) for r in rows}
    assert by_h[0.5] == pytest.approx(1.0, abs=1e-9)
    for H in (0.2, 0.35, 0.75):
        assert by_h[H] > 1.0 + 1e-6
    assert (out / "run-manifest.json").exists()


def test_dr_sweep_runs(tmp_path):
    code, out = run(tmp_path, "dr-sweep", "H = 0.75\nN = 8\n")
    assert code == 0
    rows = read_csv(out / "dr_sweep.csv")
    assert len(rows) == 7
    assert all(float(r["d_r"]) > 0 for r in rows)


def test_jensen_experiment(tmp_path):
    code, out = run(tmp_path, "jensen", "model = fbm\nH = 0.75\nN = 16\n")
    assert code == 0
    payload = json.loads((out / "jensen.json").read_text())
    assert payload["status"] == "counterexample"
    assert payload["ratio"] > 1.0


def test_jensen_martingale_refusal(tmp_path):
    code, out = run(tmp_path, "jensen", "model = bm\nN = 8\n")
    assert code == 0
    payload = json.loads((out / "jensen.json").read_text())
    assert payload["status"] == "martingale-case"


def test_nonexist_cert(tmp_path):
    code, out = run(tmp_path, "nonexist-cert", "model = fbm\nH = 0.75\nN = 16\nK_max = 12\n")
    assert code == 0
    payload = json.loads((out / "certificate.json").read_text())
    assert payload["status"] == "certificate"
    assert payload["rho"] > 1.0
    assert payload["bound_ok"]


def test_nonexist_cert_bm_refusal(tmp_path):
    code, out = run(tmp_path, "nonexist-cert", "model = bm\nN = 16\n")
    assert code == 0
    payload = json.loads((out / "certificate.json").read_text())
    assert payload["status"] == "refusal"


def test_reproducibility_byte_identical(tmp_path):
    cfg = "model = fbm\nH = 0.3\nN = 6\ntrials = 5\nxi_order = 2\n"
    code1, out1 = run(tmp_path, "bsde-verify", cfg, seed=9, subdir="a")
    code2, out2 = run(tmp_path, "bsde-verify", cfg, seed=9, subdir="b")
    assert code1 == code2 == 0
    b1 = (out1 / "bsde_verify.json").read_bytes()
    b2 = (out2 / "bsde_verify.json").read_bytes()
    assert b1 == b2
    # example33 CSV bodies as well
    _, o3 = run(tmp_path, "example33", "H_list = 0.5\nN_list = 16,32,64\n", subdir="c")
    _, o4 = run(tmp_path, "example33", "H_list = 0.5\nN_list = 16,32,64\n", subdir="d")
    assert (o3 / "example33.csv").read_bytes() == (o4 / "example33.csv").read_bytes()


def test_stochastic_experiments_require_seed(tmp_path):
    code, _ = run(tmp_path, "mc-crosscheck", "model = bm\nN = 4\nn_paths = 100\n")
    assert code == 64
    code2, _ = run(tmp_path, "mc-crosscheck",
                   "model = bm\nN = 4\nn_paths = 5000\nseed = 3\n", subdir="s")
    assert code2 == 0


def test_check_failure_exits_two(tmp_path, monkeypatch):
    def failing(cfg, out, seed, threads):
        p = out / "dummy.json"
        p.write_text("{}")
        return False, [p]

    monkeypatch.setitem(cli.EXPERIMENTS, "always-fails", failing)
    code = cli.main(["always-fails", "--out", str(tmp_path / "o")])
    assert code == 2


def test_qce_and_skorokhod_checks(tmp_path):
    code, out = run(tmp_path, "qce-check",
                    "model = fbm\nH = 0.75\nN = 8\nc_scale = 0.5\ntrials = 4\n", seed=2)
    assert code == 0
    assert json.loads((out / "qce_check.json").read_text())["passes"]
    code2, out2 = run(tmp_path, "skorokhod-check",
                      "model = fbm\nH = 0.25\nN = 8\n", seed=3, subdir="sk")
    assert code2 == 0


def test_bsde_solve_and_wick_verify(tmp_path):
    code, out = run(tmp_path, "bsde-solve",
                    "model = fbm\nH = 0.3\nN = 6\nxi_order = 2\n", seed=5)
    assert code == 0
    rows = read_csv(out / "bsde_solution.csv")
    assert len(rows) == 7
    code2, out2 = run(tmp_path, "bsde-verify",
                      "model = fbm\nH = 0.3\nN = 6\nsolution = wick\n",
                      seed=5, subdir="wick")
    assert code2 == 0
    assert json.loads((out2 / "bsde_verify.json").read_text())["passes"]


def test_domain_diagnostic_csv(tmp_path):
    code, out = run(tmp_path, "domain-diagnostic",
                    "model = fbm\nH = 0.75\nN = 16\nK_max = 10\n")
    assert code == 0
    rows = read_csv(out / "domain_diagnostic.csv")
    sums = [float(r["S_K"]) for r in rows]
    assert len(sums) == 11
    assert all(b >= a for a, b in zip(sums, sums[1:]))


def test_gram_export_and_plot(tmp_path):
    code, out = run(tmp_path, "gram", "model = fbm\nH = 0.2\nN = 8\n")
    assert code == 0
    rows = read_csv(out / "gram.csv")
    assert len(rows) == 8
    code2, out2 = run(tmp_path, "opnorm-sweep",
                      "H_list = 0.25,0.5,0.75\nN = 8\nplot = true\n", subdir="plot")
    assert code2 == 0
    svg = (out2 / "opnorm_sweep.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg


def test_weighted_model_from_config(tmp_path):
    code, out = run(tmp_path, "gram",
                    "model = weighted_fbm\nH = 0.75\nN = 4\n"
                    "sigma = 1.0,2.0,0.5,1.0\n")
    assert code == 0
    rows = read_csv(out / "gram.csv")
    assert len(rows) == 4
    code2, out2 = run(tmp_path, "gram",
                      "model = sum\nsum_model1 = bm\nsum_model2 = fbm\n"
                      "sum_H2 = 0.75\nsum_gamma = 2.0\nN = 4\n", subdir="sum")
    assert code2 == 0


def test_mc_crosscheck(tmp_path):
    code, out = run(tmp_path, "mc-crosscheck",
                    "model = fbm\nH = 0.7\nN = 6\nn_paths = 20000\n", seed=8)
    assert code == 0
    payload = json.loads((out / "mc_crosscheck.json").read_text())
    assert payload["passes"]


def test_example33_exit_and_slopes(tmp_path):
    code, out = run(tmp_path, "example33",
                    "H_list = 0.5,0.2\nN_list = 16,32,64,128\n")
    assert code == 0
    rows = read_csv(out / "example33.csv")
    slopes = {float(r["H"]): float(r["slope"]) for r in rows}
    assert slopes[0.5] < -0.4
    assert slopes[0.2] >= -0.02


def test_threads_do_not_change_output(tmp_path):
    cfg = "H_list = 0.25,0.5,0.75\nN = 8\n"
    _, o1 = run(tmp_path, "opnorm-sweep", cfg, subdir="t1")
    out2 = tmp_path / "t4"
    cfgp = tmp_path / "t4.cfg"
    cfgp.write_text(cfg)
    code = cli.main(["opnorm-sweep", "--config", str(cfgp),
                     "--out", str(out2), "--threads", "4"])
    assert code == 0
    assert (o1 / "opnorm_sweep.csv").read_bytes() == (out2 / "opnorm_sweep.csv").read_bytes()
