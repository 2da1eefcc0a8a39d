import json

import pandas as pd
import pytest

from windemos import cli, data

SMALL = ["--stations", "4", "--dates", "60"]


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    cfg = {"lead_count": 2, "members_low_total": 6, "members_high_total": 3}
    (out / "cfg.json").write_text(json.dumps(cfg))
    assert cli.main(["generate", "--out", str(out / "data"), "--config", str(out / "cfg.json"), *SMALL]) == 0
    return out / "data"


def common(dataset_dir, out):
    return ["--data", str(dataset_dir), "--out", str(out), "--combos", "6,0;6,3", "--window-days", "20",
            "--bootstrap-replicates", "100", "--reference", "6,0"]


class TestParsing:
    def test_combos(self):
        assert cli.parse_combos("100,0;0,50") == [(100, 0), (0, 50)]

    def test_leads(self):
        assert cli.parse_leads("1-3,7") == (1, 2, 3, 7)

    def test_strategies(self):
        assert cli.parse_strategies("local, regional") == ["local", "regional"]


class TestCommands:
    def test_generate_files(self, dataset_dir):
        for name in ("stations.csv", "observations.csv", "forecasts.csv", "manifest.json"):
            assert (dataset_dir / name).exists()
        ds = data.load(dataset_dir)
        assert ds.n_stations == 4 and ds.n_init == 60 and ds.members_high == 3

    def test_manifest_only(self, tmp_path):
        assert cli.main(["generate", "--out", str(tmp_path), "--manifest-only", *SMALL]) == 0
        assert [p.name for p in tmp_path.iterdir()] == ["manifest.json"]
        assert data.open_dataset(tmp_path).n_stations == 4

    def test_fit_then_verify_equals_experiment(self, dataset_dir, tmp_path):
        args = common(dataset_dir, tmp_path / "split")
        assert cli.main(["fit", *args]) == 0
        assert cli.main(["verify", *args]) == 0
        assert cli.main(["experiment", *common(dataset_dir, tmp_path / "one")]) == 0
        for name in ("coefficients.json", "summary.csv", "scores.csv"):
            assert (tmp_path / "split" / name).read_bytes() == (tmp_path / "one" / name).read_bytes()
        summary = pd.read_csv(tmp_path / "one" / "summary.csv")
        assert set(summary["model_id"]) == {"raw(6,0)", "local(6,0)", "raw(6,3)", "local(6,3)"}

    def test_report(self, dataset_dir, tmp_path):
        cli.main(["experiment", "--no-scores", *common(dataset_dir, tmp_path)])
        assert not (tmp_path / "scores.csv").exists()
        code = cli.main(["report", "--summary", str(tmp_path / "summary.csv"), "--out", str(tmp_path / "r"),
                         "--metric", "CRPS", "--metric", "BS@5"])
        assert code == 0
        assert sorted(p.name for p in (tmp_path / "r").glob("*.svg")) == ["report_BS_at_5.svg", "report_CRPS.svg"]


class TestErrors:
    def test_empty_strategy(self, dataset_dir, tmp_path, capsys):
        code = cli.main(["fit", *common(dataset_dir, tmp_path), "--strategy", ""])
        assert code == 2
        assert "at least one training strategy is required" in capsys.readouterr().err

    def test_unknown_metric(self, dataset_dir, tmp_path, capsys):
        cli.main(["experiment", "--no-scores", *common(dataset_dir, tmp_path)])
        code = cli.main(["report", "--summary", str(tmp_path / "summary.csv"), "--out", str(tmp_path), "--metric", "XYZ"])
        assert code == 2
        assert "available:" in capsys.readouterr().err

    def test_too_many_members(self, dataset_dir, tmp_path, capsys):
        code = cli.main(["fit", "--data", str(dataset_dir), "--out", str(tmp_path), "--combos", "50,0"])
        assert code == 2
        assert "exceeds" in capsys.readouterr().err

    def test_missing_data(self, tmp_path, capsys):
        assert cli.main(["fit", "--data", str(tmp_path / "none"), "--out", str(tmp_path)]) == 2

    def test_verify_without_fits(self, dataset_dir, tmp_path, capsys):
        assert cli.main(["verify", *common(dataset_dir, tmp_path)]) == 2
        assert "run `fit` first" in capsys.readouterr().err

    def test_bad_combo_is_usage_error(self, dataset_dir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(["fit", "--data", str(dataset_dir), "--out", str(tmp_path), "--combos", "6"])
        assert exc.value.code == 2
