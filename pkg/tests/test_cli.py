"""End-to-end CLI round trips through ``dyadic.cli:main``.

Each test drives a subcommand with CliRunner against files on disk and
checks the emitted JSON/CSV against values frozen from the library
tests, so the CLI layer cannot drift from the library.
"""

import json
from fractions import Fraction

import numpy as np
import pytest
from click.testing import CliRunner

from dyadic import (
    BranchingProfile,
    branching_profile_of,
    counting_measure,
    gen_ap,
    load_family,
    load_set,
    product_measure,
    save_measure,
    save_profile,
)
from dyadic.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


# ------------------------------------------------------------ generators


def test_gen_ap_round_trip(tmp_path, runner):
    dest = tmp_path / "ap.txt"
    res = invoke(runner, ["gen", "ap", "--n", "6", "--size", "8", str(dest)])
    assert "wrote 8 points at n=6" in res.output
    a = load_set(dest)
    assert a.n == 6 and list(a.indices) == list(range(0, 64, 8))


def test_gen_aligned(tmp_path, runner):
    paths = [str(tmp_path / name) for name in ("a.txt", "b.txt", "c.txt")]
    res = invoke(runner, ["gen", "aligned", "--n-param", "16", *paths])
    assert "wrote |A|=4 |B|=2 |C|=2" in res.output
    assert [len(load_set(p)) for p in paths] == [4, 2, 2]


def test_gen_tree_left_is_deterministic(tmp_path, runner):
    prof = tmp_path / "prof.json"
    save_profile(BranchingProfile(2, (2, 1, 2)), prof)
    dest = tmp_path / "tree.txt"
    invoke(runner, ["gen", "tree", "--profile", str(prof), str(dest)])
    assert list(load_set(dest).indices) == [0, 1, 16, 17]


def test_gen_tree_random_uses_seed(tmp_path, runner):
    prof = tmp_path / "prof.json"
    save_profile(BranchingProfile(2, (2, 1, 2)), prof)
    dest = tmp_path / "tree.txt"
    invoke(runner, ["--seed", "4", "gen", "tree", "--profile", str(prof),
                    "--placement", "random", str(dest)])
    assert list(load_set(dest).indices) == [6, 7, 24, 27]
    again = tmp_path / "tree2.txt"
    invoke(runner, ["--seed", "4", "gen", "tree", "--profile", str(prof),
                    "--placement", "random", str(again)])
    assert list(load_set(again).indices) == [6, 7, 24, 27]


def test_gen_random_seeded(tmp_path, runner):
    d1, d2 = tmp_path / "r1.txt", tmp_path / "r2.txt"
    invoke(runner, ["--seed", "9", "gen", "random", "--n", "8", "--size", "20", str(d1)])
    invoke(runner, ["--seed", "9", "gen", "random", "--n", "8", "--size", "20", str(d2)])
    a, b = load_set(d1), load_set(d2)
    assert np.array_equal(a.indices, b.indices) and len(a) == 20
    bad = runner.invoke(main, ["gen", "random", "--n", "3", "--size", "100",
                               str(tmp_path / "bad.txt")])
    assert bad.exit_code != 0


# ------------------------------------------------------------ analysis


def test_analyze_json(tmp_path, runner):
    dest = tmp_path / "ap.txt"
    invoke(runner, ["gen", "ap", "--n", "6", "--size", "8", str(dest)])
    res = invoke(runner, ["analyze", str(dest)])
    payload = json.loads(res.output)
    assert payload["n"] == 6 and payload["size"] == 8
    assert payload["covering_counts"]["0"] == 1
    assert payload["covering_counts"]["6"] == 8
    assert payload["frostman"]["passed"] is True
    assert payload["profile"] == [2, 2, 2, 1, 1, 1]


def test_analyze_csv(tmp_path, runner):
    dest = tmp_path / "ap.txt"
    invoke(runner, ["gen", "ap", "--n", "6", "--size", "8", str(dest)])
    res = invoke(runner, ["--format", "csv", "analyze", str(dest)])
    lines = res.output.strip().splitlines()
    assert lines[0] == "r_exp,count"
    assert len(lines) == 8  # depths 0..6


def test_uniformize(tmp_path, runner):
    src, dest = tmp_path / "in.txt", tmp_path / "out.txt"
    invoke(runner, ["--seed", "2", "gen", "random", "--n", "8", "--size", "37", str(src)])
    res = invoke(runner, ["uniformize", str(src), str(dest), "--m", "2", "--levels", "4"])
    payload = json.loads(res.output)
    sub = load_set(dest)
    assert payload["size_in"] == 37 and payload["size_out"] == len(sub)
    prof = branching_profile_of(sub, 2, 4)
    assert prof is not None and list(prof.r) == payload["profile"]
    assert payload["loss_bits"] >= 0


def test_prune_requires_uniform_input(tmp_path, runner):
    prof = tmp_path / "prof.json"
    save_profile(BranchingProfile(2, (4, 1, 4)), prof)
    tree, dest = tmp_path / "tree.txt", tmp_path / "pruned.txt"
    invoke(runner, ["gen", "tree", "--profile", str(prof), str(tree)])
    res = invoke(runner, ["prune", str(tree), str(dest), "--m", "2", "--levels", "3"])
    payload = json.loads(res.output)
    assert payload["profile_in"] == [4, 1, 4]
    assert payload["profile_out"] == [2, 1, 2]
    assert all(g >= 2 for g in payload["min_gaps"])

    ragged = tmp_path / "ragged.txt"
    invoke(runner, ["--seed", "3", "gen", "random", "--n", "6", "--size", "37",
                    str(ragged)])
    bad = runner.invoke(main, ["prune", str(ragged), str(dest), "--m", "2",
                               "--levels", "3"])
    assert bad.exit_code != 0 and "not uniform" in bad.output

    nocsv = runner.invoke(main, ["--format", "csv", "prune", str(tree), str(dest),
                                 "--m", "2", "--levels", "3"])
    assert nocsv.exit_code != 0 and "no tabular form" in nocsv.output


def test_extend_classifies_and_saves_family(tmp_path, runner):
    b_prof, a_prof = tmp_path / "b.json", tmp_path / "a.json"
    save_profile(BranchingProfile(1, (2, 2, 2, 2, 1, 1, 1, 1)), b_prof)
    save_profile(BranchingProfile(1, (2,) * 8), a_prof)
    fam_out = tmp_path / "family.json"
    res = invoke(runner, ["extend", str(b_prof), "--ell", "4", "--zeta", "1/4",
                          "--a-profile", str(a_prof), "--gamma-cap", "3/4",
                          "--family-out", str(fam_out)])
    payload = json.loads(res.output)
    assert payload["intervals"], "expected at least one interval"
    for row in payload["intervals"]:
        assert set(row) == {"lo", "hi", "tag"}
        assert row["tag"] in ("low", "high")
    fam = load_family(fam_out)
    assert [(iv.lo, iv.hi, iv.tag) for iv in fam] == [
        (row["lo"], row["hi"], row["tag"]) for row in payload["intervals"]
    ]


# ------------------------------------------------------------ measures


@pytest.fixture
def planar_measure(tmp_path):
    mu = product_measure(counting_measure(gen_ap(8, 16)),
                         counting_measure(gen_ap(8, 4)))
    path = tmp_path / "mu.json"
    save_measure(mu, path)
    return path


def test_entropy_chain_json_and_csv(tmp_path, runner, planar_measure):
    args = ["entropy", str(planar_measure), "--c", "1/4", "--c", "3/4",
            "--cuts", "0,4,8"]
    payload = json.loads(invoke(runner, args).output)
    assert payload["cuts"] == [0, 4, 8]
    assert len(payload["chains"]) == 2
    first = payload["chains"][0]
    assert first["c"] == "1/4"
    assert first["slack"] == pytest.approx(3.16992500144)
    assert first["lhs"] >= first["rhs"]

    res = invoke(runner, ["--format", "csv", *args])
    lines = res.output.strip().splitlines()
    assert lines[0] == "c,lhs,rhs,correction,slack"
    assert len(lines) == 3


def test_project_avg_l2(tmp_path, runner, planar_measure):
    nu_path = tmp_path / "nu.json"
    save_measure(counting_measure(gen_ap(8, 4)), nu_path)
    args = ["project-avg", str(planar_measure), str(nu_path),
            "--gamma-a", "1/2", "--gamma-b", "1/4", "--gamma", "1/4",
            "--xi", "1/2"]
    payload = json.loads(invoke(runner, args).output)
    assert payload["audit_failures"] == []
    assert payload["average"] == "113/8"
    assert payload["fitted"] == pytest.approx(0.0137939453125)

    res = invoke(runner, ["--format", "csv", *args])
    lines = res.output.strip().splitlines()
    assert lines[0] == "c,l2" and len(lines) == 5


def test_project_avg_entropy_mode(tmp_path, runner, planar_measure):
    nu_path = tmp_path / "nu.json"
    save_measure(counting_measure(gen_ap(8, 4)), nu_path)
    res = invoke(runner, ["project-avg", str(planar_measure), str(nu_path),
                          "--gamma-a", "1/2", "--gamma-b", "1/4",
                          "--gamma", "1/4", "--xi", "1/2", "--mode", "entropy"])
    payload = json.loads(res.output)
    assert payload["value"] == pytest.approx(4.24586464834)
    assert payload["value"] >= payload["rhs"]
    assert len(payload["per_c"]) == 4


# ------------------------------------------------------------ experiments


def test_ladder_cli(tmp_path, runner):
    dest = tmp_path / "ap.txt"
    invoke(runner, ["gen", "ap", "--n", "6", "--size", "8", str(dest)])
    payload = json.loads(invoke(runner, ["ladder", str(dest)]).output)
    assert payload["slow_step"] == 1
    assert [row["size"] for row in payload["sizes"]] == [8, 15, 29, 57, 113, 225, 449]


def test_greedy_cli(tmp_path, runner):
    b_path, c_path = tmp_path / "b.txt", tmp_path / "c.txt"
    invoke(runner, ["gen", "ap", "--n", "6", "--size", "8", str(b_path)])
    invoke(runner, ["gen", "ap", "--n", "6", "--size", "8", "--step", "8", str(c_path)])
    payload = json.loads(invoke(runner, ["greedy", str(b_path), str(c_path)]).output)
    assert payload["n_star"] == 1
    assert payload["sizes"] == [1, 8, 57, 106]
    assert payload["c_sequence"] == ["0", "1/8", "7/8", "7/8"]

    res = invoke(runner, ["--format", "csv", "greedy", str(b_path), str(c_path)])
    lines = res.output.strip().splitlines()
    assert lines[0] == "step,size,c" and len(lines) == 5


def test_sharpness_cli(runner):
    payload = json.loads(invoke(runner, ["sharpness"]).output)
    assert [row["n_param"] for row in payload["rows"]] == [16, 256, 4096]
    assert payload["rows"][0]["product_ratio"] == "7/4"


def test_sweep_cli(tmp_path, runner):
    cfg = {
        "alpha": "3/4", "beta": "1/2", "gamma": "3/4", "kappa": "1/2",
        "eta": "1/2", "zeta": "1/8", "ell": 32,
        "family": "aligned-triple",
        "scales": [[1, 8, 1], [1, 10, 1]],
        "gammas": ["1/4", "3/4"],
        "seed": 5,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    payload = json.loads(invoke(runner, ["sweep", str(cfg_path)]).output)
    assert len(payload["records"]) == 4
    medians = [rec["median_exponent"] for rec in payload["records"]]
    assert medians == pytest.approx([0.0679, 0.2442, 0.0827, 0.2897], abs=5e-4)

    res = invoke(runner, ["--format", "csv", "sweep", str(cfg_path)])
    lines = res.output.strip().splitlines()
    assert len(lines) == 1 + 4 + 64 + 4 + 256  # header + one row per slope

    override = json.loads(
        invoke(runner, ["--seed", "11", "sweep", str(cfg_path)]).output
    )
    assert override["config"]["seed"] == 11


def test_sweep_config_out_fallback(tmp_path, runner):
    out_path = tmp_path / "sweep.json"
    cfg = {
        "alpha": "3/4", "beta": "1/2", "gamma": "3/4", "zeta": "1/8", "ell": 32,
        "scales": [[1, 8, 1]], "gammas": ["1/2"], "seed": 5,
        "out": str(out_path),
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    res = invoke(runner, ["sweep", str(cfg_path)])
    assert res.output == ""
    payload = json.loads(out_path.read_text())
    assert len(payload["records"]) == 1


def test_assemble_cli(tmp_path, runner):
    res = invoke(runner, ["--seed", "1", "assemble", "--pattern", "bt"])
    payload = json.loads(res.output)
    assert payload["intervals"] == [[0, 7, "low"]]
    assert payload["expanded"] is True and payload["achieved"] is True

    csv_res = invoke(runner, ["--seed", "1", "--format", "csv", "assemble",
                              "--pattern", "bt"])
    lines = csv_res.output.strip().splitlines()
    assert len(lines) == 2 and ",low," in lines[1]


def test_out_writes_file(tmp_path, runner):
    dest = tmp_path / "ap.txt"
    out = tmp_path / "report.json"
    invoke(runner, ["gen", "ap", "--n", "6", "--size", "8", str(dest)])
    res = invoke(runner, ["--out", str(out), "ladder", str(dest)])
    assert res.output == ""
    assert json.loads(out.read_text())["slow_step"] == 1


def test_help_lists_subcommands(runner):
    res = invoke(runner, ["--help"])
    for name in ("gen", "analyze", "uniformize", "prune", "extend", "entropy",
                 "project-avg", "ladder", "greedy", "sweep", "assemble"):
        assert name in res.output
