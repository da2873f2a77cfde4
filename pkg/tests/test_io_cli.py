import csv
import json
from dataclasses import replace

import pytest

from coexchange.cli import (
    ACCEPT_HEADER,
    SUMMARY_HEADER,
    exit_code,
    gridbox_seed,
    main,
    run_gridboxes,
    write_summary,
)
from coexchange.gibbs import ChainConfig
from coexchange.io import (
    GridboxDataset,
    InputError,
    load_config,
    load_ensemble_csv,
    load_reanalysis_csv,
    pair_gridboxes,
    parse_config,
    write_ensemble_csv,
    write_reanalysis_csv,
)
from coexchange.model import EnsembleData, ModelRuns, PriorConfig, ReanalysisData
from coexchange.validation import SyntheticTruth, generate_synthetic

from conftest import FAST


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_two_row_schema(tmp_path):
    p = _write(tmp_path / "e.csv", "gridbox_id,model_id,scenario,run_id,value\ng1,ACCESS,hist,1,270.1\ng1,ACCESS,fut,1,275.3\n")
    ens = load_ensemble_csv(p)
    assert list(ens) == ["g1"]
    m = ens["g1"].models[0]
    assert (m.model_id, m.hist_runs, m.fut_runs) == ("ACCESS", (270.1,), (275.3,))


def test_runs_ordered_by_run_id_and_extra_columns(tmp_path):
    text = "gridbox_id,model_id,scenario,run_id,value,lat,lon\n"
    text += "g,A,hist,3,3.0,1,2\ng,A,hist,1,1.0,1,2\ng,A,hist,2,2.0,1,2\ng,A,fut,1,9.0,1,2\n"
    ens = load_ensemble_csv(_write(tmp_path / "e.csv", text))
    assert ens["g"].models[0].hist_runs == (1.0, 2.0, 3.0)


def test_reference_design_roundtrip_is_bit_exact(tmp_path):
    data, rean, _ = generate_synthetic(SyntheticTruth(), 0)
    write_ensemble_csv(tmp_path / "e.csv", {"g1": data, "g2": data.shifted(1e-17)})
    write_reanalysis_csv(tmp_path / "r.csv", {"g1": rean})
    ens = load_ensemble_csv(tmp_path / "e.csv")
    assert ens["g1"] == data
    assert sum(len(m.hist_runs) for m in ens["g1"].models) == 50
    assert sum(len(m.fut_runs) for m in ens["g1"].models) == 39
    assert load_reanalysis_csv(tmp_path / "r.csv")["g1"] == rean
    assert load_reanalysis_csv(tmp_path / "r.csv")["g1"].n == 4
    subset = load_ensemble_csv(tmp_path / "e.csv", model_subset=["CanESM2", "MIROC5"])
    assert subset["g1"].model_ids == ["CanESM2", "MIROC5"]


@pytest.mark.parametrize(
    "body, match",
    [
        ("g,A,present,1,1.0\n", r":2: unknown scenario"),
        ("g,A,hist,1,1.0\ng,A,hist,x,1.0\n", r":3: run_id"),
        ("g,A,hist,1,1.0\ng,A,hist,0,1.0\n", r":3: run_id must be positive"),
        ("g,A,hist,1,abc\n", r":2: value"),
        ("g,A,hist,1\n", r":2: expected 5 fields"),
        ("g,A,hist,1,1.0\ng,A,hist,1,2.0\n", r":3: duplicate run"),
    ],
)
def test_ensemble_errors_name_the_line(tmp_path, body, match):
    p = _write(tmp_path / "e.csv", "gridbox_id,model_id,scenario,run_id,value\n" + body)
    with pytest.raises(InputError, match=match):
        load_ensemble_csv(p)


def test_bad_header(tmp_path):
    with pytest.raises(InputError, match=":1: expected header"):
        load_ensemble_csv(_write(tmp_path / "e.csv", "a,b,c\n"))


def test_reanalysis_errors_and_empty(tmp_path):
    p = _write(tmp_path / "r.csv", "gridbox_id,reanalysis_id,value\ng,era,1.0\ng,era,2.0\n")
    with pytest.raises(InputError, match=":3: duplicate"):
        load_reanalysis_csv(p)
    assert load_reanalysis_csv(_write(tmp_path / "empty.csv", "")) == {}
    assert load_reanalysis_csv(_write(tmp_path / "hdr.csv", "gridbox_id,reanalysis_id,value\n")) == {}


def test_pairing_makes_missing_sides_empty():
    data, rean, _ = generate_synthetic(SyntheticTruth(), 0)
    paired = pair_gridboxes({"b": data}, {"a": rean})
    assert [p.gridbox_id for p in paired] == ["a", "b"]
    assert paired[0].data.n_models == 0 and paired[1].rean.n == 0


def test_config_defaults_and_overrides(tmp_path):
    assert load_config(None).chains == ChainConfig()
    cfg = parse_config({"kappa": 1.5, "priors": {"b_beta": 0.01}, "chains": {"thin": 10}, "seed": 7,
                        "model_subset": ["A", "B"]})
    assert cfg.inadequacy.kappa == 1.5 and cfg.inadequacy.kappa_w == 1.2
    assert cfg.priors == replace(PriorConfig(), b_beta=0.01)
    assert cfg.chains == replace(ChainConfig(), thin=10, base_seed=7)
    assert cfg.model_subset == ("A", "B")
    for bad in ({"kapa": 1}, {"priors": {"zzz": 1}}, {"kappa": 0.5}, {"priors": {"b_tau_h": -1}},
                {"chains": {"burn_in": 1e9}}):
        with pytest.raises(InputError):
            parse_config(bad)
    with pytest.raises(InputError, match=":1: invalid JSON"):
        load_config(_write(tmp_path / "c.json", "{oops"))


# ---------------------------------------------------------------- batch runner

def _datasets(n=3, seed=0):
    out = []
    for g in range(n):
        data, rean, _ = generate_synthetic(SyntheticTruth(), [seed, g])
        out.append(GridboxDataset(f"g{g}", data, rean))
    return out


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_gridboxes_contract(tmp_path):
    results = run_gridboxes(_datasets(2)[::-1], chains=FAST)
    assert [r.gridbox_id for r in results] == ["g0", "g1"]
    quantities = [row[1] for row in results[0].rows]
    assert quantities == sorted(quantities)
    assert {"mu_h", "mu_f", "beta", "y_f_minus_y_h", "constraint_effect", "psi2"} <= set(quantities)
    write_summary(tmp_path / "s.csv", results)
    rows = _read(tmp_path / "s.csv")
    assert tuple(rows[0]) == SUMMARY_HEADER
    assert all(row[-1] == "ok" for row in rows[1:])
    with pytest.raises(ValueError):
        run_gridboxes(_datasets(1) * 2, chains=FAST)


def test_gridbox_seed_is_local():
    assert gridbox_seed(0, "g1") == gridbox_seed(0, "g1")
    assert gridbox_seed(0, "g1") != gridbox_seed(1, "g1") != gridbox_seed(0, "g2")
    one = run_gridboxes(_datasets(1), chains=FAST)
    three = run_gridboxes(_datasets(3), chains=FAST)
    assert one[0] == three[0]


def test_failures_are_isolated():
    good = _datasets(1)[0]
    bad = GridboxDataset("bad", good.data, ReanalysisData(()))
    results = run_gridboxes([good, bad], chains=FAST)
    status = {r.gridbox_id: r.status for r in results}
    assert status == {"g0": "ok", "bad": "invalid"}
    assert len([r for r in results if r.gridbox_id == "bad"][0].rows) == 1
    assert exit_code(results) == 2


def test_parallel_output_is_byte_identical(tmp_path):
    ds = _datasets(5)
    write_summary(tmp_path / "a.csv", run_gridboxes(ds, chains=FAST, parallelism=1))
    write_summary(tmp_path / "b.csv", run_gridboxes(ds, chains=FAST, parallelism=8))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


# ---------------------------------------------------------------- command line

def _synth(tmp_path, n=2):
    e, r, t = tmp_path / "e.csv", tmp_path / "r.csv", tmp_path / "t.json"
    assert main(["synth", "--gridboxes", str(n), "--seed", "3", "--out-ensemble", str(e),
                 "--out-reanalysis", str(r), "--out-truth", str(t)]) == 0
    return e, r, t


def test_cli_synth_and_run(tmp_path):
    e, r, t = _synth(tmp_path)
    assert json.loads(t.read_text())["truth"]["beta"] == 0.6
    cfg = _write(tmp_path / "c.json", json.dumps({"chains": {"iters_initial": 2000, "burn_in": 1000, "thin": 4}}))
    out = tmp_path / "s.csv"
    assert main(["run", "--ensemble", str(e), "--reanalysis", str(r), "--config", str(cfg), "--out", str(out)]) == 0
    rows = _read(out)
    assert {row[0] for row in rows[1:]} == {"g0", "g1"}
    accept = _read(tmp_path / "s.accept.csv")
    assert tuple(accept[0]) == ACCEPT_HEADER and len(accept) == 3
    assert all(0 < float(a[1]) < 1 and a[3] == "2000" for a in accept[1:])


def test_cli_exit_codes(tmp_path, caplog):
    e, r, _ = _synth(tmp_path, 1)
    out = str(tmp_path / "s.csv")
    bad = _write(tmp_path / "bad.csv", "gridbox_id,model_id,scenario,run_id,value\ng,A,bad,1,1\n")
    assert main(["run", "--ensemble", str(bad), "--reanalysis", str(r), "--out", out]) == 4
    assert "bad.csv:2" in caplog.text
    assert main(["run", "--ensemble", str(tmp_path / "missing.csv"), "--reanalysis", str(r), "--out", out]) == 4
    empty = _write(tmp_path / "empty.csv", "gridbox_id,reanalysis_id,value\n")
    assert main(["run", "--ensemble", str(e), "--reanalysis", str(empty), "--out", out]) == 2
    tight = _write(tmp_path / "c.json", json.dumps({"chains": {
        "iters_initial": 40, "burn_in": 20, "extend_by": 20, "thin": 1, "max_total_iters": 60, "psrf_threshold": 1.0001}}))
    assert main(["run", "--ensemble", str(e), "--reanalysis", str(r), "--config", str(tight), "--out", out]) == 3
    assert {row[-1] for row in _read(out)[1:]} == {"not_converged"}


def test_cli_cv(tmp_path, capsys):
    e, r, _ = _synth(tmp_path, 1)
    cfg = _write(tmp_path / "c.json", json.dumps({"chains": {"iters_initial": 2000, "burn_in": 1000, "thin": 4}}))
    out = tmp_path / "pit.csv"
    args = ["cv", "--ensemble", str(e), "--reanalysis", str(r), "--config", str(cfg), "--out", str(out)]
    assert main(args + ["--mode", "future"]) == 0
    assert len(_read(out)) == 14
    ks = _read(tmp_path / "pit.ks.csv")
    assert ks[1][1] == "future" and ks[1][2] == "13" and 0 <= float(ks[1][4]) <= 1
    assert "gridboxes have KS p < 0.10" in capsys.readouterr().out


def test_cli_dilution(capsys):
    assert main(["dilution", "--reps", "300"]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0][:4] == ["beta_prime", "sigma_H2", "sigma2", "R"]
    first = rows[1]
    assert float(first[5]) == -0.25 and abs(float(first[8])) < 4


def test_cli_check(capsys):
    assert main(["check", "--states", "2", "--geweke-draws", "1000"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 18 and all(line.startswith("PASS") for line in lines)
