import csv
import json

import pytest

from sqpinvit import cli
from sqpinvit import modelgen as mg


def write_cfg(path, **kw):
    cfg = {"model": {"K": 4, "N": 2}, "mode": "outer", "tau": 1e-6}
    cfg.update(kw)
    path.write_text(json.dumps(cfg))
    return path


def read_csv(path):
    with open(path) as f:
        return list(csv.reader(f))


def test_config_validation():
    with pytest.raises(cli.ConfigError, match="subspace"):
        cli.RunConfig.from_dict({"model": {}, "mode": "outer", "D": 2})
    with pytest.raises(cli.ConfigError, match="unknown"):
        cli.RunConfig.from_dict({"model": {}, "bogus": 1})
    with pytest.raises(cli.ConfigError, match="exactly one"):
        cli.RunConfig.from_dict({"model": {}, "coeffs": "x.txt"})
    with pytest.raises(cli.ConfigError):
        cli.RunConfig.from_dict({"model": {}, "tau": 0.0})
    with pytest.raises(cli.ConfigError, match="user constants"):
        cli.RunConfig.from_dict({"model": {}, "constants": {"source": "user", "delta": 3.0}})


def test_flags_override_file(tmp_path):
    p = write_cfg(tmp_path / "c.json")
    cfg = cli.load_config(p, {"tau": 1e-3, "mode": "subspace", "D": 2, "out": "o",
                              "oracle_cap": 10, "coeffs": None, "plots": None})
    assert (cfg.tau, cfg.mode, cfg.D, cfg.out, cfg.oracle_cap) == (1e-3, "subspace", 2, "o", 10)
    cfg = cli.load_config(p, {"coeffs": "f.txt"})
    assert cfg.coeffs == "f.txt" and cfg.model is None


def test_run_writes_artifacts(tmp_path):
    out = tmp_path / "out"
    code = cli.main(["run", str(write_cfg(tmp_path / "c.json")), "--out", str(out)])
    assert code == 0
    trace = read_csv(out / "trace.csv")
    assert trace[0] == cli.TRACE_COLUMNS
    assert all(row[-1] == "" for row in trace[1:])  # no timing by default
    ranks = read_csv(out / "ranks.csv")
    assert ranks[0] == ["n", "cut", "rank"]
    assert len(ranks) - 1 == 3 * (len(trace) - 1)
    s = json.loads((out / "summary.json").read_text())
    assert s["schema_version"] == 1 and s["status"] == "converged"
    for key in ("lambda", "lambdas", "bounds", "columns", "constants", "preconditioner",
                "problem", "outer_steps", "config"):
        assert key in s
    assert s["bounds"]["certified"] is True
    d = json.loads((out / "dense_check.json").read_text())
    assert abs(d["final_rel_eig_true"][0]) < 1e-6
    assert not list(out.glob("*.tmp"))


def test_inner_mode_and_timing(tmp_path):
    out = tmp_path / "out"
    p = write_cfg(tmp_path / "c.json", mode="inner", record_timing=True)
    assert cli.main(["run", str(p), "--out", str(out)]) == 0
    trace = read_csv(out / "trace.csv")
    assert all(row[1] == "-1" for row in trace[1:])
    assert all(float(row[-1]) >= 0 for row in trace[1:])


def test_subspace_mode(tmp_path):
    out = tmp_path / "out"
    p = write_cfg(tmp_path / "c.json")
    assert cli.main(["run", str(p), "--mode", "subspace", "--d", "2", "--out", str(out)]) == 0
    trace = read_csv(out / "trace.csv")
    assert trace[0][-2:] == ["lambda_2", "rho_bound_2"]
    s = json.loads((out / "summary.json").read_text())
    assert len(s["lambdas"]) == 2
    assert [c["certified"] for c in s["columns"]] == [True, False]


def test_trivial_tolerance_stops_at_first_admissible_iterate(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", str(write_cfg(tmp_path / "c.json")), "--tau", "1",
                     "--out", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    trace = read_csv(out / "trace.csv")[1:]
    assert s["status"] == "converged"
    assert all(row[4] == "inf" for row in trace[:-1])
    assert float(trace[-1][4]) < 1


def test_config_error_exit_code(tmp_path):
    out = tmp_path / "out"
    code = cli.main(["run", str(write_cfg(tmp_path / "c.json")), "--d", "2", "--out", str(out)])
    assert code == cli.EXIT_CONFIG
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "config" and err["exit_code"] == 2


def test_missing_config_file(tmp_path):
    assert cli.main(["run", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_oracle_cap_exit_code(tmp_path):
    out = tmp_path / "out"
    p = write_cfg(tmp_path / "c.json", constants={"source": "oracle-exact"})
    assert cli.main(["run", str(p), "--oracle-cap", "3", "--out", str(out)]) == cli.EXIT_ORACLE
    assert cli.main(["compare", str(write_cfg(tmp_path / "d.json")), "--oracle-cap", "3",
                     "--out", str(out)]) != 0


def test_nonconvergence_exit_code(tmp_path):
    out = tmp_path / "out"
    p = write_cfg(tmp_path / "c.json", mode="inner", max_inner=1, tau=1e-12)
    assert cli.main(["run", str(p), "--out", str(out)]) == cli.EXIT_NONCONV
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "non-convergence"
    assert (out / "trace.csv").exists()


def test_compare_with_oracle(tmp_path):
    cfg = cli.RunConfig.from_dict({"model": {"K": 4, "N": 2}, "tau": 1e-8,
                                   "out": str(tmp_path / "cmp")})
    report = cli.compare_with_oracle(cfg)
    assert report["converged"] and report["bounds_dominate"]
    assert report["rows"] and report["min_eig_tightness"] >= 1
    rows = read_csv(tmp_path / "cmp" / "compare.csv")
    assert rows[0] == cli.COMPARE_COLUMNS
    assert len(rows) - 1 + report["omitted"] == len(read_csv(tmp_path / "cmp" / "trace.csv")) - 1


def test_user_constants_and_coefficient_file(tmp_path):
    c = mg.generate_coefficients(mg.ModelSpec(K=4))
    f = tmp_path / "coeffs.txt"
    mg.write_coefficients(c, f)
    from sqpinvit import precond as pc
    from sqpinvit.blockmps import SectorShape
    sc = pc.exact_constants(c, SectorShape(4, 2))
    p = write_cfg(tmp_path / "c.json", constants={
        "source": "user", "C_lower": sc.C_lower, "C_upper": sc.C_upper, "delta": sc.delta,
        "lambda1_lower": sc.lambda1 * 0.999})
    out = tmp_path / "out"
    assert cli.main(["run", str(p), "--coeffs", str(f), "--out", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["problem"]["source"] == "file" and s["constants"]["source"] == "user"


def test_generate_subcommand(tmp_path):
    f = tmp_path / "c.txt"
    assert cli.main(["generate", "--K", "5", "--N", "2", "-o", str(f)]) == 0
    c = mg.read_coefficients(f)
    assert c.K == 5 and c.n_particles == 2


def test_plots_flag(tmp_path):
    pytest.importorskip("matplotlib")
    out = tmp_path / "out"
    assert cli.main(["run", str(write_cfg(tmp_path / "c.json")), "--plots",
                     "--out", str(out)]) == 0
    assert (out / "plots" / "convergence.png").exists()
    assert (out / "plots" / "ranks.png").exists()
