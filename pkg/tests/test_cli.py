import csv
import json

import numpy as np
import pytest

from bmef.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, main
from bmef.dataset import load_dataset_dir
from bmef.posterior import align_components, load_chain, waic
from bmef.sampler import GibbsSampler

SIM = {"scenario": "S2", "rank": 2, "n_subjects": 4, "J": 2, "T": 8, "F": 8, "K_T": 4, "K_F": 4, "seed": 3}
FIT = {"K_T": 4, "K_F": 4, "burn_in": 20, "n_draws": 10, "warm_start_interval": 10, "seed": 1}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def workdir(tmp_path):
    sim = write(tmp_path / "sim.json", SIM)
    assert main(["simulate", "--config", sim, "--out", str(tmp_path / "data")]) == EXIT_OK
    return tmp_path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_simulate_writes_files_and_manifest(workdir):
    data = workdir / "data"
    for name in ("responses.csv", "covariates.csv", "grid.json", "truth.json", "manifest.json"):
        assert (data / name).exists()
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["seed"] == 3
    from bmef.cli import config_hash
    assert manifest["config_hash"] == config_hash(manifest["config"])
    assert load_dataset_dir(data).n_subjects == 4


def test_simulate_rerun_is_byte_identical(workdir):
    assert main(["simulate", "--config", str(workdir / "sim.json"), "--out", str(workdir / "again")]) == EXIT_OK
    for name in ("responses.csv", "covariates.csv", "grid.json", "truth.json"):
        assert (workdir / "data" / name).read_bytes() == (workdir / "again" / name).read_bytes()


def test_malformed_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"scenario": "S1",,}')
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config_parse" and "line 1" in err["message"]
    unknown = write(tmp_path / "unknown.json", {"bogus": 1})
    assert main(["simulate", "--config", unknown, "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_fit_summarize_metrics_pipeline(workdir, capsys):
    fitcfg = write(workdir / "fit.json", dict(FIT, checkpoint_every=5))
    out = workdir / "fit"
    assert main(["fit", "--data", str(workdir / "data"), "--config", fitcfg, "--out", str(out),
                 "--gram-diag-csv", "gram.csv"]) == EXIT_OK
    assert "final rank R=" in capsys.readouterr().err
    for name in ("chain.jsonl", "checkpoint.jsonl", "gram.csv", "manifest.json"):
        assert (out / name).exists()
    chain = load_chain(out / "chain.jsonl")
    assert chain.n_draws == 10

    summ = workdir / "summary"
    assert main(["summarize", "--chain", str(out / "chain.jsonl"), "--data", str(workdir / "data"),
                 "--out", str(summ)]) == EXIT_OK
    for name in ("principal_functions.csv", "base_patterns.csv", "weights.csv", "waic.csv"):
        assert (summ / name).exists()
    weights = read_csv(summ / "weights.csv")
    keys = {(r["condition"], r["profile"], r["rank"]) for r in weights}
    assert len(weights) == len(keys) == 2 * 2 * chain.rank
    ds = load_dataset_dir(workdir / "data")
    row = read_csv(summ / "waic.csv")[0]
    assert float(row["waic"]) == waic(align_components(chain), ds)
    assert row["model_spec"] == "ABC"

    met = workdir / "metrics"
    assert main(["metrics", "--chain", str(out / "chain.jsonl"), "--truth", str(workdir / "data" / "truth.json"),
                 "--out", str(met)]) == EXIT_OK
    names = [r["metric"] for r in read_csv(met / "metrics.csv")]
    assert names == ["mse_A", "mse_B", "mse_C", "cmse_x2", "selected_rank", "true_rank"]


def test_fit_seed_reproducibility_and_binary_format(workdir):
    fitcfg = write(workdir / "fit.json", FIT)
    data = str(workdir / "data")
    outs = {}
    for name, seed in (("a", 5), ("b", 5), ("c", 6)):
        assert main(["fit", "--data", data, "--config", fitcfg, "--seed", str(seed), "--out",
                     str(workdir / name), "--chain-format", "binary"]) == EXIT_OK
        outs[name] = load_chain(workdir / name / "chain.npz")
    for key in outs["a"].arrays:
        np.testing.assert_array_equal(outs["a"].arrays[key], outs["b"].arrays[key])
    assert not np.array_equal(outs["a"].arrays["sigma_eps2"], outs["c"].arrays["sigma_eps2"])


def test_model_a_warns_about_random_effect_keys(workdir, caplog):
    fitcfg = write(workdir / "fit.json", dict(FIT, model_spec="A", a_gamma=2.0))
    with caplog.at_level("WARNING", logger="bmef"):
        assert main(["fit", "--data", str(workdir / "data"), "--config", fitcfg, "--out",
                     str(workdir / "fitA")]) == EXIT_OK
    assert "ignoring a_gamma" in caplog.text
    assert load_chain(workdir / "fitA" / "chain.jsonl").model_spec == "A"


def test_divergence_flushes_partial_chain(workdir, monkeypatch, capsys):
    from bmef.errors import NumericalDivergenceError

    original = GibbsSampler.update_variances

    def flaky(self, rng=None):
        if self.iteration == 25:
            raise NumericalDivergenceError("forced")
        return original(self, rng)

    monkeypatch.setattr(GibbsSampler, "update_variances", flaky)
    fitcfg = write(workdir / "fit.json", FIT)
    out = workdir / "div"
    assert main(["fit", "--data", str(workdir / "data"), "--config", fitcfg, "--out", str(out)]) == EXIT_DIVERGED
    report = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert report["iteration"] == 25
    assert load_chain(out / "partial.jsonl").n_draws == 4
