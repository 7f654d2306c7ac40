import json

import numpy as np
import pytest

from robust_pob import cli, randgen
from robust_pob.io import (ParseError, load_json, load_model, load_policy, load_specs,
                           model_to_dict, policy_to_dict, specs_to_dict, write_json)
from robust_pob.model import DimensionError, Ellitope, MarkovChain, MjlsModel, PobPolicy
from robust_pob.equivalence import ObPolicy
from robust_pob.portfolio import build_portfolio_model
from robust_pob.specs import SpecAvgQuad, SpecCovBound, SpecMeanQuad, SpecSet


def test_model_round_trip(tmp_path, rng):
    for known in (False, True):
        model = randgen.random_model(rng, 3, 2, n_x=2, n_u=1, n_y=2, x0_known=known)
        write_json(tmp_path / "m.json", model_to_dict(model))
        back = load_model(tmp_path / "m.json")
        for name in ("A", "B", "Bd", "Bs", "C", "Dd", "Ds", "Sigma0"):
            assert np.array_equal(getattr(back, name), getattr(model, name))
        assert np.array_equal(back.chain.P, model.chain.P)
        assert (back.x0_known is None) == (not known)


def test_policy_round_trip_and_basis(tmp_path, rng):
    model = randgen.random_model(rng, 3, 2)
    pol = randgen.random_policy(rng, model, 1)
    write_json(tmp_path / "p.json", policy_to_dict(pol))
    back = load_policy(tmp_path / "p.json")
    assert type(back) is PobPolicy and np.array_equal(back.chi, pol.chi)
    write_json(tmp_path / "o.json", policy_to_dict(pol, basis="outputs"))
    assert isinstance(load_policy(tmp_path / "o.json"), ObPolicy)


def test_policy_file_modes_are_zero_based(tmp_path):
    doc = {"N": 1, "T": 0, "m": 2, "n_u": 1, "n_y": 1, "basis": "purified",
           "entries": [{"t": 0, "j": None, "hist": [1], "values": [[5.0]]}]}
    write_json(tmp_path / "p.json", doc)
    pol = load_policy(tmp_path / "p.json")
    assert pol.h(0, (1,))[0] == 5.0 and pol.h(0, (0,))[0] == 0.0
    doc["entries"][0]["hist"] = [2]
    write_json(tmp_path / "p.json", doc)
    with pytest.raises(DimensionError):
        load_policy(tmp_path / "p.json")


def test_specs_round_trip(tmp_path):
    n = 3
    specs = SpecSet(avg_quad=(SpecAvgQuad(np.eye(n), np.ones(n), None, "free"),),
                    mean_quad=(SpecMeanQuad(np.eye(n), np.zeros(n), 2.0),),
                    cov_bound=(SpecCovBound(np.eye(n)[:1], np.eye(1), "c"),))
    ell = Ellitope((np.eye(2),))
    write_json(tmp_path / "s.json", specs_to_dict(specs, ell))
    back, ell2 = load_specs(tmp_path / "s.json")
    assert back.avg_quad[0].gamma is None and back.mean_quad[0].gamma_hat == 2.0
    assert back.labels() == specs.labels()
    assert np.array_equal(ell2.Qs[0], np.eye(2))


def test_malformed_json_reports_position(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "N": 2,\n  "m": \n}')
    with pytest.raises(ParseError) as err:
        load_json(bad)
    assert err.value.line == 4 and err.value.column is not None


# ---------------------------------------------------------------------------
# command line


@pytest.fixture
def portfolio_files(tmp_path):
    model, ell, specs, _ = build_portfolio_model()
    write_json(tmp_path / "model.json", model_to_dict(model))
    write_json(tmp_path / "specs.json", specs_to_dict(specs, ell))
    return tmp_path


def test_synthesize_portfolio_exit_zero(portfolio_files):
    out = portfolio_files / "out"
    code = cli.main(["synthesize", "--model", str(portfolio_files / "model.json"), "--specs",
                     str(portfolio_files / "specs.json"), "--memory", "2", "--out", str(out),
                     "--deterministic-solver"])
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "feasible"
    pol = load_policy(out / "policy.json")
    assert pol.T == 2 and pol.N == 3


def _small_files(tmp_path, gamma):
    model = MjlsModel.from_arrays(MarkovChain.single_mode(), A=np.eye(1)[None, None].repeat(2, 0),
                                  B=np.eye(1), C=np.eye(1), Bd=np.eye(1))
    write_json(tmp_path / "model.json", model_to_dict(model))
    specs = SpecSet(avg_quad=(SpecAvgQuad(np.eye(model.n_w), np.zeros(model.n_w), gamma, "energy"),))
    write_json(tmp_path / "specs.json", specs_to_dict(specs, Ellitope((np.eye(model.n_zeta),))))
    return model


def test_synthesize_infeasible_exit_two(tmp_path, capsys):
    _small_files(tmp_path, -1e6)
    code = cli.main(["synthesize", "--model", str(tmp_path / "model.json"), "--specs",
                     str(tmp_path / "specs.json"), "--memory", "0", "--out", str(tmp_path / "o")])
    assert code == 2
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["status"] == "infeasible" and len(rep["gamma_minus"]) == 1
    assert not (tmp_path / "o" / "policy.json").exists()
    diag = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert diag["status"] == "infeasible"


def test_synthesize_malformed_json_exit_four(tmp_path, capsys):
    _small_files(tmp_path, 10.0)
    (tmp_path / "model.json").write_text('{"N": 2,\n "m": [}')
    code = cli.main(["synthesize", "--model", str(tmp_path / "model.json"), "--specs",
                     str(tmp_path / "specs.json"), "--memory", "0", "--out", str(tmp_path / "o")])
    assert code == 4
    diag = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert diag["line"] == 2 and diag["column"] is not None


def test_synthesize_memory_out_of_range_exit_four(tmp_path):
    _small_files(tmp_path, 10.0)
    assert cli.main(["synthesize", "--model", str(tmp_path / "model.json"), "--specs",
                     str(tmp_path / "specs.json"), "--memory", "2", "--out",
                     str(tmp_path / "o")]) == 4


def _simulate(tmp_path, out, seed=3, samples=20, extra=()):
    return cli.main(["simulate", "--model", str(tmp_path / "model.json"), "--policy",
                     str(tmp_path / "policy.json"), "--samples", str(samples), "--seed", str(seed),
                     "--out", str(tmp_path / out), *extra])


def test_simulate_zero_policy_constant_trajectories(tmp_path):
    model = _small_files(tmp_path, 10.0)
    doc = model_to_dict(model)
    doc["x0_known"] = [2.5]
    write_json(tmp_path / "model.json", doc)
    write_json(tmp_path / "policy.json", policy_to_dict(PobPolicy.zeros(2, 0, 1, 1, 1)))
    assert _simulate(tmp_path, "sim") == 0
    rows = (tmp_path / "sim" / "trajectories.csv").read_text().splitlines()
    assert rows[0].startswith("scenario,path,t,x_1,u_1,y_1,v_1")
    xs = {float(r.split(",")[3]) for r in rows[1:]}
    assert xs == {2.5}
    assert (tmp_path / "sim" / "states.png").stat().st_size > 0


def test_simulate_is_deterministic_and_reports_specs(tmp_path, rng):
    model = randgen.random_model(rng, 3, 2)
    write_json(tmp_path / "model.json", model_to_dict(model))
    write_json(tmp_path / "policy.json", policy_to_dict(randgen.random_policy(rng, model, 1)))
    specs = SpecSet(avg_quad=(SpecAvgQuad(np.eye(model.n_w), np.zeros(model.n_w), 1e9),))
    write_json(tmp_path / "specs.json",
               specs_to_dict(specs, randgen.random_ellitope(rng, model.n_zeta, 2)))
    extra = ("--specs", str(tmp_path / "specs.json"))
    assert _simulate(tmp_path, "a", extra=extra) == 0
    assert _simulate(tmp_path, "b", extra=extra) == 0
    assert _simulate(tmp_path, "c", seed=4, extra=extra) == 0
    a = (tmp_path / "a" / "trajectories.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectories.csv").read_bytes()
    assert a != (tmp_path / "c" / "trajectories.csv").read_bytes()
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    row = rep["specs"][0]
    assert {"exact_value", "mc_value", "stderr", "satisfied"} <= set(row)
    assert row["satisfied"] is True


def test_simulate_dimension_mismatch_exit_four(tmp_path, rng, capsys):
    model = randgen.random_model(rng, 3, 2)
    write_json(tmp_path / "model.json", model_to_dict(model))
    other = randgen.random_model(rng, 2, 2)
    write_json(tmp_path / "policy.json", policy_to_dict(randgen.random_policy(rng, other, 1)))
    assert _simulate(tmp_path, "x") == 4
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["status"] == "dimension error"


def test_thread_cap_sets_environment(monkeypatch):
    monkeypatch.setenv("ROBUST_POB_THREADS", "1")
    for var in cli._THREAD_VARS:
        monkeypatch.delenv(var, raising=False)
    cli._cap_threads()
    import os
    assert all(os.environ[v] == "1" for v in cli._THREAD_VARS)
