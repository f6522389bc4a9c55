import filecmp
import json
import shutil
import warnings
from pathlib import Path

import pytest

from fixture_server import FIXTURE, FixtureServer
from marketstates import ingest
from marketstates.cli import main
from marketstates.pipeline import ConfigError, Pipeline, PipelineConfig, load_config


def tree(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def small_panel(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    code = main(
        [
            "synth",
            "--output", str(d / "panel.csv"),
            "--labels", str(d / "labels.csv"),
            "--epochs", "24",
            "--top-k", "12",
            "--regimes", "3",
            "--seed", "3",
        ]
    )
    assert code == 0
    return d


def run(panel_dir, out, *extra):
    return main(
        ["run", "--csv", str(panel_dir / "panel.csv"), "--labels", str(panel_dir / "labels.csv"), "--top-k", "12", "--out", str(out), *extra]
    )


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ncsv = prices.csv\nepoch_length = 30\nalpha = 0.01  # inline\ncoins = a, b\n", encoding="utf-8")
    c = load_config(cfg, {"alpha": 0.02})
    assert c.csv == "prices.csv" and c.epoch_length == 30 and c.alpha == 0.02 and c.coins == ("a", "b")
    assert load_config(cfg, {"k": "auto"}).k is None


@pytest.mark.parametrize(
    "overrides, needle",
    [
        ({"bogus": 1}, "unknown"),
        ({"csv": "x", "alpha": 1.5}, "alpha"),
        ({"csv": "x", "epoch_length": 3}, "epoch_length"),
        ({"csv": "x", "null": "gauss"}, "null"),
        ({}, "csv"),
        ({"source": "remote"}, "coins"),
    ],
)
def test_invalid_config(overrides, needle):
    with pytest.raises(ConfigError, match=needle):
        load_config(None, overrides)


def test_run_writes_declared_outputs(small_panel, tmp_path):
    out = tmp_path / "out"
    assert run(small_panel, out) == 0
    for rel in [
        "data/panel.csv",
        "returns/normalized.csv",
        "epochs.csv",
        "portfolios.csv",
        "correlations/epoch_0.csv",
        "correlations/powermap/epoch_0.csv",
        "correlations/stats.csv",
        "graphs/epoch_0.json",
        "graphs/epoch_0.dot",
        "graphs/metrics.csv",
        "kernel/kernel_matrix.csv",
        "kernel/distance_matrix.csv",
        "states/assignments.csv",
        "states/eigenvalues.csv",
        "states/state_0_medoid_matrix.csv",
        "report/summary.json",
        "manifest.json",
    ]:
        assert (out / rel).is_file(), rel
    summary = json.loads((out / "report/summary.json").read_text())
    assert summary["n_epochs"] == 24 and sum(summary["state_sizes"]) == 24
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["parameters"]["epoch_length"] == 20
    assert "jobs" not in manifest["parameters"] and "out" not in manifest["parameters"]
    assert set(manifest["stages"]) == {"ingest", "returns", "correlate", "network", "kernel", "cluster", "report"}
    assert manifest["seeds"]["config"] == 0
    assert str(small_panel / "panel.csv") in manifest["inputs"]
    header = (out / "correlations/epoch_0.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 12


def test_runs_are_byte_identical_across_jobs(small_panel, tmp_path):
    assert run(small_panel, tmp_path / "a") == 0
    assert run(small_panel, tmp_path / "b", "--jobs", "3") == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_unchanged_stages_are_skipped(small_panel, tmp_path):
    cfg = load_config(None, {"csv": str(small_panel / "panel.csv"), "top_k": 12, "out": str(tmp_path / "o")})
    first = Pipeline(cfg)
    first.run()
    assert not any(r.skipped for r in first.results)
    again = Pipeline(cfg)
    again.run()
    assert all(r.skipped for r in again.results)
    cfg.k = 2
    third = Pipeline(cfg)
    third.run()
    assert [r.name for r in third.results if not r.skipped] == ["cluster", "report"]


def test_deleting_states_recomputes_them_identically(small_panel, tmp_path):
    out = tmp_path / "o"
    assert run(small_panel, out) == 0
    before = tree(out)
    shutil.rmtree(out / "states")
    assert run(small_panel, out) == 0
    assert tree(out) == before


def test_tampered_output_is_rebuilt(small_panel, tmp_path):
    out = tmp_path / "o"
    assert run(small_panel, out) == 0
    before = tree(out)
    (out / "kernel/kernel_matrix.csv").write_text("garbage\n")
    assert run(small_panel, out) == 0
    assert tree(out) == before


def test_k_override(small_panel, tmp_path):
    assert run(small_panel, tmp_path / "o", "--k", "4") == 0
    summary = json.loads((tmp_path / "o/report/summary.json").read_text())
    assert summary["k"] == 4 and summary["k_source"] == "override" and len(summary["state_sizes"]) == 4


def test_planted_regimes_recovered(small_panel, tmp_path):
    assert run(small_panel, tmp_path / "o", "--neighbors", "6") == 0
    summary = json.loads((tmp_path / "o/report/summary.json").read_text())
    assert summary["k"] == 3 and summary["ari"] >= 0.9


def test_failing_stage_is_named(small_panel, tmp_path, capsys):
    code = main(["run", "--csv", str(small_panel / "panel.csv"), "--top-k", "13", "--out", str(tmp_path / "o")])
    assert code != 0
    assert "stage 'kernel' failed" in capsys.readouterr().err
    rows = (tmp_path / "o/epochs.csv").read_text().splitlines()
    assert rows[1].endswith("insufficient:12")


def test_missing_input_fails_cleanly(tmp_path, capsys):
    assert main(["run", "--csv", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) != 0
    assert "ingest" in capsys.readouterr().err


def test_strong_power_map_warns(small_panel, tmp_path):
    cfg = load_config(None, {"csv": str(small_panel / "panel.csv"), "top_k": 12, "power_q": 2.0, "out": str(tmp_path / "o")})
    with pytest.warns(UserWarning, match="power_q"):
        Pipeline(cfg).run()


def test_report_subcommand(small_panel, tmp_path, capsys):
    assert run(small_panel, tmp_path / "o") == 0
    capsys.readouterr()
    assert main(["report", "--out", str(tmp_path / "o")]) == 0
    assert "states:" in capsys.readouterr().out
    assert main(["report", "--out", str(tmp_path / "o"), "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["n_epochs"] == 24
    assert main(["report", "--out", str(tmp_path / "missing")]) == 1


def test_synth_subcommand_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--output", str(tmp_path / f"{name}.csv"), "--labels", str(tmp_path / f"{name}_l.csv"), "--epochs", "3", "--top-k", "5"]) == 0
    assert filecmp.cmp(tmp_path / "a.csv", tmp_path / "b.csv", shallow=False)
    assert (tmp_path / "a_l.csv").read_text().splitlines()[:3] == ["epoch_index,regime", "0,0", "1,1"]


def test_fetch_subcommand_and_remote_run(tmp_path):
    with FixtureServer() as srv:
        args = ["--coins", "alpha,beta", "--start", "2017-01-01", "--end", "2017-01-10", "--cache-dir", str(tmp_path / "cache"), "--base-url", srv.url]
        assert main(["fetch", *args, "--output", str(tmp_path / "p.csv")]) == 0
        assert len(srv.requests) == 2
        panel = ingest.parse_csv(tmp_path / "p.csv")
        assert panel.close[1].tolist() == [p for _, p, _ in FIXTURE["beta"]]
        cfg = PipelineConfig(source="remote", coins=("alpha", "beta"), cache_dir=str(tmp_path / "cache"), remote_base_url=srv.url, out=str(tmp_path / "o"))
        cfg.start, cfg.end = panel.dates[0], panel.dates[-1]
        pipe = Pipeline(cfg)
        pipe.stage_ingest()
        assert len(srv.requests) == 2  # served from the warm cache
        assert ingest.parse_csv(tmp_path / "o/data/panel.csv").equals(panel)
