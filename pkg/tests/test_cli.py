import csv
import json

import numpy as np
import pytest

from bdlim.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_SAMPLER, load_inputs, main
from bdlim.simulation import generate_exposures

FAST = ["--iter", "400", "--burnin", "200", "--thin", "2"]


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    rng = np.random.default_rng(0)
    n, T = 160, 12
    X = generate_exposures(n, T, rng=rng).values
    Z = rng.normal(size=(n, 2))
    labels = np.where(np.arange(n) % 3 == 0, "male", "female")  # "male" appears first
    y = 0.3 * X[:, 4:8].sum(axis=1) + Z @ [0.5, -0.5] + rng.normal(size=n)
    ids = [f"p{i}" for i in range(n)]
    order = rng.permutation(n)  # outcome rows in a different order
    write_csv(d / "x.csv", ["id", *[f"t{t}" for t in range(1, T + 1)]],
              [[ids[i], *X[i]] for i in range(n)])
    write_csv(d / "y.csv", ["id", "y"], [[ids[i], y[i]] for i in order])
    write_csv(d / "z.csv", ["id", "z1", "z2"], [[ids[i], *Z[i]] for i in range(n)])
    write_csv(d / "g.csv", ["id", "group"], [[ids[i], labels[i]] for i in range(n)])
    write_csv(d / "ones.csv", ["id", "y"], [[i, 1] for i in ids])
    return d, y


def data_flags(d, outcome="y.csv"):
    return ["--exposures", str(d / "x.csv"), "--outcome", str(d / outcome),
            "--covariates", str(d / "z.csv"), "--groups", str(d / "g.csv"), "--knots", "6"]


def test_load_inputs_aligns_and_maps_groups(inputs):
    d, y = inputs
    X, yy, Z, g, labels = load_inputs(d / "x.csv", d / "y.csv", d / "z.csv", d / "g.csv")
    assert np.allclose(yy, y)
    assert labels == ("male", "female")
    assert g[0] == 0 and g[1] == 1 and Z.shape == (160, 2)


def test_fit_writes_outputs(inputs, tmp_path, capsys):
    d, _ = inputs
    out = tmp_path / "fit"
    code = main(["fit", *data_flags(d), "--pattern", "b", *FAST, "--out", str(out),
                 "--emit", "json,csv,plot-data"])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["pattern"] == "b" and report["groups"] == {"male": 0, "female": 1}
    names = {p.name for p in out.iterdir()}
    assert names == {"summary.json", "basis.json", "coefficients.csv", "draws.csv", "weights.csv"}
    summ = json.loads((out / "summary.json").read_text())
    assert summ["group_labels"] == ["male", "female"]
    draws = (out / "draws.csv").read_text().splitlines()
    assert len(draws) == 1 + 100
    assert draws[0].startswith("chain,iter,alpha_1,alpha_2,beta_1,beta_2")


def test_fit_emit_subset(inputs, tmp_path, capsys):
    d, _ = inputs
    out = tmp_path / "only-json"
    assert main(["fit", *data_flags(d), *FAST, "--out", str(out), "--emit", "json"]) == EXIT_OK
    assert {p.name for p in out.iterdir()} == {"summary.json", "basis.json"}


def test_config_file_with_flag_override(inputs, tmp_path, capsys):
    d, _ = inputs
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        "[data]\n"
        f'exposures = "{d / "x.csv"}"\noutcome = "{d / "y.csv"}"\n'
        f'groups = "{d / "g.csv"}"\n'
        "[basis]\nknots = 6\n"
        '[model]\npattern = "bw"\n'
        "[chain]\nn_iter = 400\nn_burnin = 200\nthin = 2\nseed = 3\n"
        f'[output]\ndir = "{tmp_path / "cfg-out"}"\nemit = "json"\n'
    )
    assert main(["fit", "--config", str(cfg), "--pattern", "w"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["pattern"] == "w"
    summ = json.loads((tmp_path / "cfg-out" / "summary.json").read_text())
    assert summ["diagnostics"]["n_draws"] == 100


def test_compare(inputs, tmp_path, capsys):
    d, _ = inputs
    out = tmp_path / "cmp"
    code = main(["compare", *data_flags(d), "--patterns", "n,bw", *FAST, "--out", str(out)])
    assert code == EXIT_OK
    table = json.loads((out / "compare.json").read_text())
    assert [r["pattern"] for r in table["models"]] == ["n", "bw"]
    assert sum(r["normalized_probability"] for r in table["models"]) == pytest.approx(1, abs=1e-12)
    assert not table["renormalized"]
    assert (out / "bw_summary.json").exists() and (out / "n_draws.csv").exists()


def test_simulate(tmp_path, capsys):
    out = tmp_path / "sim"
    code = main(["simulate", "--scenario", "B.1", "--replicates", "2", "--models", "n",
                 *FAST, "--out", str(out)])
    assert code == EXIT_OK
    assert {p.name for p in out.iterdir()} == {"B1_groups.csv", "B1_models.csv", "B1_metrics.json"}
    metrics = json.loads((out / "B1_metrics.json").read_text())
    assert metrics["n_replicates"] == 2 and metrics["config"]["chain"]["n_iter"] == 400


@pytest.mark.parametrize("argv", [
    ["fit", "--pattern", "zz"],
    ["fit", "--iter", "10", "--burnin", "20"],
    ["fit", "--emit", "xml"],
    ["simulate", "--scenario", "Q.9"],
    ["fit", "--config", "/nonexistent.toml"],
    [],
])
def test_config_errors(argv, inputs, tmp_path, capsys):
    d, _ = inputs
    if argv and argv[0] == "fit" and "--config" not in argv:
        argv = [*argv, *data_flags(d), "--out", str(tmp_path)]
    assert main(argv) == EXIT_CONFIG


def test_data_errors(inputs, tmp_path, capsys):
    d, _ = inputs
    bad = tmp_path / "bad.csv"
    bad.write_text("id,y\np0,1\np1,abc\n")
    assert main(["fit", *data_flags(d, outcome=str(bad)), "--out", str(tmp_path)]) == EXIT_DATA
    missing = ["fit", "--exposures", str(tmp_path / "nope.csv"), "--outcome", str(d / "y.csv")]
    assert main(missing) == EXIT_DATA
    short = tmp_path / "short.csv"
    short.write_text("id,y\np0,1\n")
    assert main(["fit", *data_flags(d, outcome=str(short)), "--out", str(tmp_path)]) == EXIT_DATA
    err = capsys.readouterr().err
    assert "p1" in err


def test_sampler_error(inputs, tmp_path, capsys):
    d, _ = inputs
    argv = ["fit", "--exposures", str(d / "x.csv"), "--outcome", str(d / "ones.csv"),
            "--family", "logit", "--pattern", "n", "--knots", "6", *FAST, "--out", str(tmp_path)]
    assert main(argv) == EXIT_SAMPLER
    assert "separated" in capsys.readouterr().err


def test_same_seed_same_draw_file(inputs, tmp_path, capsys):
    d, _ = inputs
    texts = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["fit", *data_flags(d), "--pattern", "bw", *FAST, "--seed", "9",
                     "--out", str(out)]) == EXIT_OK
        texts.append((out / "draws.csv").read_bytes())
    assert texts[0] == texts[1]


def test_sampler_failure_keeps_partial_draws(inputs, tmp_path, capsys, monkeypatch):
    import bdlim.samplers as samplers

    real = samplers.elliptical_slice
    calls = {"n": 0}

    def failing(*a, **k):
        calls["n"] += 1
        if calls["n"] > 300:
            raise samplers.SamplerStuckError("stuck for the test")
        return real(*a, **k)

    monkeypatch.setattr(samplers, "elliptical_slice", failing)
    d, _ = inputs
    out = tmp_path / "failed"
    assert main(["fit", *data_flags(d), "--pattern", "b", *FAST, "--out", str(out)]) == EXIT_SAMPLER
    report = json.loads((out / "failure.json").read_text())
    assert report["chain"] == 0 and "stuck for the test" in report["error"]
    rows = (out / "partial_draws.csv").read_text().splitlines()
    assert 1 < len(rows) < 101
