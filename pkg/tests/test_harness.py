import json
import os

import numpy as np
import pytest

from slelab import harness as H
from slelab import measures
from slelab.loewner import InputError


def run_cli(*args):
    return H.main(list(args))


class TestConfig:
    def test_json_round_trip(self):
        cfg = H.RunConfig(command="simulate", kappa=4.0, n=3, seed=7)
        back = H.RunConfig.from_json(cfg.to_json())
        assert back == cfg

    def test_config_file_and_override(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("kappa = 4.0  # comment\nn = 5\ntol_gap_law = 0.5\n")
        values, extras = H._parse_config_file(str(path))
        assert values == {"kappa": 4.0, "n": 5}
        assert extras == {"gap_law": 0.5}

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("nonsense = 1\n")
        with pytest.raises(InputError):
            H._parse_config_file(str(path))

    def test_region_and_window_parsing(self):
        assert H._parse_region("disk:1,2,0.5") == ("disk", 1 + 2j, 0.5)
        assert H._parse_window("-1,1,-2,2") == (-1.0, 1.0, -2.0, 2.0)
        with pytest.raises(InputError):
            H._parse_region("square:0,0,1")
        with pytest.raises(InputError):
            H._parse_window("1,2,3")


class TestSimulate:
    def test_outputs_and_schema(self, tmp_path):
        out = str(tmp_path / "sim")
        code = run_cli("simulate", "--kappa", "4", "--n", "2", "--tmax",
                       "0.3", "--dt", "0.02", "--seed", "1", "--out", out)
        assert code == 0
        names = sorted(os.listdir(out))
        assert names == ["curve_0000.csv", "curve_0001.csv", "manifest.json"]
        header = open(os.path.join(out, "curve_0000.csv")).readline().strip()
        assert header.split(",") == H.SCHEMA["curve_csv_columns"]
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert sorted(manifest) == H.SCHEMA["manifest_keys"]
        assert manifest["config"]["kappa"] == 4.0

    def test_kappa_out_of_range_is_usage_error(self, tmp_path, capsys):
        code = run_cli("simulate", "--kappa", "9", "--n", "1",
                       "--out", str(tmp_path / "x"))
        assert code == 1
        assert "kappa must lie in (0,8)" in capsys.readouterr().err

    def test_missing_out_is_usage_error(self):
        assert run_cli("simulate", "--kappa", "4") == 1

    def test_regeneration_byte_identical(self, tmp_path):
        a = str(tmp_path / "a")
        run_cli("simulate", "--kappa", "2", "--n", "2", "--tmax", "0.3",
                "--dt", "0.02", "--seed", "9", "--out", a)
        b = str(tmp_path / "b")
        H.regenerate(os.path.join(a, "manifest.json"), b)
        for name in sorted(os.listdir(a)):
            assert open(os.path.join(a, name), "rb").read() == \
                open(os.path.join(b, name), "rb").read()


class TestEnsembleCommands:
    def test_loop_ensemble(self, tmp_path):
        out = str(tmp_path / "loops")
        code = run_cli("loop", "--kappa", "4", "--n", "2", "--radius", "0.5",
                       "--dt", "0.02", "--seed", "2", "--out", out)
        assert code == 0
        loops = measures.load_ensemble(out)
        assert len(loops) == 2 and all(wl.weight > 0 for wl in loops)

    def test_bubble_ensemble(self, tmp_path):
        out = str(tmp_path / "bubs")
        code = run_cli("bubble", "--kappa", "4", "--n", "1", "--radius",
                       "0.5", "--dt", "0.02", "--seed", "3", "--out", out)
        assert code == 0
        wl = measures.load_ensemble(out)[0]
        assert wl.loop.points[0] == 0j and wl.loop.points[-1] == 0j

    def test_soup_summary(self, tmp_path):
        out = str(tmp_path / "soup")
        code = run_cli("soup", "--window=-2,2,-2,2", "--t-min", "0.05",
                       "--t-max", "8", "--seed", "4", "--out", out)
        assert code == 0
        body = json.load(open(os.path.join(out, "soup.json")))
        assert body["count"] == len(body["roots"]) == len(body["durations"])
        assert body["mean_count"] == pytest.approx(
            16.0 * (1 / 0.05 - 1 / 8.0) / (2 * np.pi)
        )

    def test_estimate_json(self, tmp_path):
        out = str(tmp_path / "est")
        code = run_cli("estimate", "--kappa", "2.6666666666666665", "--n",
                       "2", "--dt", "0.05", "--region", "disk:2,0,0.5",
                       "--threshold", "0.5", "--seed", "5", "--out", out)
        assert code == 0
        body = json.load(open(os.path.join(out, "estimate.json")))
        assert sorted(body) == H.SCHEMA["estimate_keys"]


class TestRender:
    def make_curves(self, tmp_path):
        out = str(tmp_path / "sim")
        run_cli("simulate", "--kappa", "4", "--n", "1", "--tmax", "0.3",
                "--dt", "0.02", "--seed", "6", "--out", out)
        return out

    def test_svg_written(self, tmp_path):
        out = self.make_curves(tmp_path)
        svg = H.render(out, style="time")
        text = open(svg).read()
        assert text.startswith("<svg") and "<path" in text
        again = H.render(out, style="time")
        assert open(again).read() == text  # deterministic

    def test_gradient_monotone(self, tmp_path):
        out = self.make_curves(tmp_path)
        text = open(H.render(out, style="time", n_chunks=8)).read()
        reds = [
            int(line.split('stroke="#')[1][:2], 16)
            for line in text.splitlines() if 'stroke="#' in line
        ]
        assert reds == sorted(reds) and reds[0] < reds[-1]

    def test_empty_and_bad_style(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        with pytest.raises(InputError):
            H.render(str(empty))
        out = self.make_curves(tmp_path)
        with pytest.raises(InputError):
            H.render(out, style="neon")


class TestVerify:
    def test_fast_suite_passes(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SLE_LAB_THREADS", "2")
        out = str(tmp_path / "ver")
        code = run_cli("verify", "--suite", "fast", "--budget", "5000",
                       "--seed", "7", "--out", out)
        assert code == 0
        reports = json.load(open(os.path.join(out, "report.json")))
        assert all(
            sorted(r) == H.SCHEMA["verify_report_keys"] for r in reports
        )
        ids = [r["test_id"] for r in reports]
        assert ids == sorted(ids)
        assert any(r["provenance"].startswith("[PAPER]") for r in reports)
        assert any(r["provenance"].startswith("[DERIVED]") for r in reports)
        assert any(r["provenance"].startswith("[TRIVIAL]") for r in reports)

    def test_small_budget_inconclusive(self, tmp_path):
        cfg = H.RunConfig(command="verify", suite="fast", budget=100, seed=1)
        reports, all_passed = H.verify(cfg)
        assert all_passed
        assert any(r.status == "inconclusive" for r in reports)

    def test_tampered_tolerance_marked_modified(self, tmp_path):
        out = str(tmp_path / "ver")
        cfgfile = tmp_path / "t.cfg"
        cfgfile.write_text("tol_gap_law = 1e-9\n")
        code = run_cli("verify", "--suite", "fast", "--budget", "5000",
                       "--seed", "7", "--out", out, "--config", str(cfgfile))
        assert code == 3  # impossible tolerance: honest failure
        reports = json.load(open(os.path.join(out, "report.json")))
        gap = [r for r in reports if r["test_id"].startswith("gap_law")]
        assert all(r["status"] == "modified" for r in gap)

    def test_bad_suite(self):
        assert run_cli("verify", "--suite", "slow") == 1


class TestCliTopLevel:
    def test_no_command(self):
        assert H.main([]) == 1

    def test_unknown_command(self):
        assert H.main(["frobnicate"]) == 1
