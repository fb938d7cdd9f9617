from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from fmds import (
    CoeffSet,
    euclidean_series,
    eval_basis,
    make_basis,
    save_coeffs,
    write_dissim_csv,
)
from fmds.cli import main
from tests.conftest import build_stock_fixture


def read_rows(path: Path) -> list[dict[str, str]]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def perfect_fit(tmp_path, rng):
    """A coefficient file plus the dissimilarity CSV it reproduces exactly."""
    spec = make_basis(5, 1, 12)
    mats = 0.3 * rng.standard_normal((4, 2, spec.q))
    coeffs = CoeffSet(mats, labels=("A", "B", "C", "D"))
    series = euclidean_series(coeffs, spec, np.arange(1.0, 13.0))
    coeffs_path = tmp_path / "coeffs.csv"
    save_coeffs(coeffs_path, coeffs, spec)
    dissim_path = tmp_path / "observed.csv"
    write_dissim_csv(dissim_path, series)
    return coeffs_path, dissim_path, coeffs, series, spec


class TestSimulate:
    def test_smoke_cell(self, tmp_path):
        out = tmp_path / "run"
        code = main(
            ["simulate", "--n", "5", "--L", "5", "--m", "15", "--reps", "1",
             "--seed", "7", "--out", str(out)]
        )
        assert code == 0
        agg = read_rows(out / "study_aggregate.csv")
        assert len(agg) == 1
        assert agg[0]["L"] == "5" and agg[0]["m"] == "15"
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert len(manifest["fit_seconds"]) == 1
        assert manifest["fit_seconds"][0]["seconds"] > 0

    def test_small_run_deterministic(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(
                ["simulate", "--n", "5", "--L", "5", "--m", "15", "--reps", "2",
                 "--seed", "7", "--out", str(out)]
            ) == 0
            outs.append((out / "study_aggregate.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_grid_flags(self, tmp_path):
        out = tmp_path / "grid"
        code = main(
            ["simulate", "--n", "5", "--L", "5", "--m", "8,15", "--reps", "1",
             "--seed", "3", "--out", str(out)]
        )
        assert code == 0
        agg = read_rows(out / "study_aggregate.csv")
        assert [(r["L"], r["m"]) for r in agg] == [("5", "8"), ("5", "15")]

    def test_usage_error_exit_2(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--n", "not-a-number", "--out", str(tmp_path)])
        assert exc.value.code == 2


class TestFitCommand:
    def test_fit_prices_writes_outputs(self, tmp_path):
        prices, series, truth, spec = build_stock_fixture(tmp_path)
        out = tmp_path / "fit"
        code = main(
            ["fit", "--prices", str(prices), "--p", "2", "--L", "6",
             "--seed", "11", "--max-sweeps", "60", "--out", str(out)]
        )
        assert code == 0
        assert (out / "coeffs.csv").exists() and (out / "coeffs.json").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["super_matrix_rows"] == 45  # 10 choose 2
        assert manifest["fit_seconds"] > 0
        assert manifest["n_objects"] == 10
        sidecar = json.loads((out / "coeffs.json").read_text())
        assert sidecar["q"] == 10 and sidecar["labels"][0] == "S01"

    def test_fit_dissim_deterministic(self, perfect_fit, tmp_path):
        _, dissim_path, *_ = perfect_fit
        blobs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            code = main(
                ["fit", "--dissim", str(dissim_path), "--p", "2", "--L", "5",
                 "--seed", "4", "--max-sweeps", "25", "--out", str(out)]
            )
            assert code == 0
            blobs.append((out / "coeffs.csv").read_bytes())
        assert blobs[0] == blobs[1]

    def test_missing_input_exit_1(self, tmp_path, capsys):
        code = main(["fit", "--dissim", str(tmp_path / "nope.csv"), "--out", str(tmp_path)])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_config_file_fills_flags(self, perfect_fit, tmp_path):
        _, dissim_path, *_ = perfect_fit
        config = tmp_path / "flags.json"
        config.write_text(json.dumps({"max-sweeps": 10, "seed": 9}))
        out = tmp_path / "cfg"
        code = main(
            ["fit", "--dissim", str(dissim_path), "--config", str(config), "--out", str(out)]
        )
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["resolved"]["max_sweeps"] == 10
        assert manifest["resolved"]["seed"] == 9


class TestSnapshot:
    def test_two_times_two_files(self, perfect_fit, tmp_path):
        coeffs_path, _, coeffs, _, spec = perfect_fit
        out = tmp_path / "snaps"
        code = main(["snapshot", "--coeffs", str(coeffs_path), "--t", "1,12", "--out", str(out)])
        assert code == 0
        for t in (1, 12):
            rows = read_rows(out / f"snapshot_t{t}.csv")
            assert len(rows) == coeffs.n

    def test_blend_between_grid_points(self, perfect_fit, tmp_path):
        coeffs_path, _, coeffs, _, spec = perfect_fit
        out = tmp_path / "snap"
        assert main(["snapshot", "--coeffs", str(coeffs_path), "--t", "1.5", "--out", str(out)]) == 0
        rows = read_rows(out / "snapshot_t1.5.csv")
        weights = eval_basis(spec, 1.5)
        expected = coeffs.mats @ weights
        for i, row in enumerate(rows):
            assert float(row["x1"]) == pytest.approx(expected[i, 0], abs=1e-12)
            assert float(row["x2"]) == pytest.approx(expected[i, 1], abs=1e-12)

    def test_out_of_domain_t(self, perfect_fit, tmp_path):
        coeffs_path, *_ = perfect_fit
        code = main(["snapshot", "--coeffs", str(coeffs_path), "--t", "99", "--out", str(tmp_path / "x")])
        assert code == 1


class TestCluster:
    @pytest.fixture
    def square_coeffs(self, tmp_path):
        # four labeled objects at hand-picked constant positions
        spec = make_basis(5, 1, 12)
        pts = np.array([[0.0, 0.0], [0.2, 0.0], [0.0, 0.3], [1.0, 1.0]])
        mats = np.repeat(pts[:, :, None], spec.q, axis=2)
        coeffs = CoeffSet(mats, labels=("HUB", "NEAR", "EDGE", "FAR"))
        path = tmp_path / "sq.csv"
        save_coeffs(path, coeffs, spec)
        return path

    def test_partition_matches_hand_geometry(self, square_coeffs, tmp_path):
        out = tmp_path / "cl"
        code = main(
            ["cluster", "--coeffs", str(square_coeffs), "--center", "HUB",
             "--t", "1", "--out", str(out)]
        )
        assert code == 0
        report = json.loads((out / "cluster.json").read_text())
        assert report["center"] == "HUB"
        assert report["red"] == ["NEAR"]  # 0.2 < 0.3
        assert sorted(report["blue"]) == ["EDGE", "FAR"]  # 0.3 and beyond

    def test_distance_exactly_at_threshold_is_blue(self, square_coeffs, tmp_path):
        out = tmp_path / "edge"
        code = main(
            ["cluster", "--coeffs", str(square_coeffs), "--center", "HUB",
             "--t", "1", "--threshold", "0.3", "--out", str(out)]
        )
        assert code == 0
        report = json.loads((out / "cluster.json").read_text())
        assert "EDGE" in report["blue"]  # strict < for red membership

    def test_all_objects_partitioned(self, square_coeffs, tmp_path):
        out = tmp_path / "part"
        main(["cluster", "--coeffs", str(square_coeffs), "--center", "NEAR", "--t", "3",
              "--out", str(out)])
        report = json.loads((out / "cluster.json").read_text())
        members = set(report["red"]) | set(report["blue"]) | {report["center"]}
        assert members == {"HUB", "NEAR", "EDGE", "FAR"}
        assert not (set(report["red"]) & set(report["blue"]))

    def test_unknown_center_exit_1(self, square_coeffs, tmp_path):
        code = main(["cluster", "--coeffs", str(square_coeffs), "--center", "NOPE",
                     "--t", "3", "--out", str(tmp_path / "x")])
        assert code == 1


class TestShepard:
    def test_perfect_fit_matches_columns(self, perfect_fit, tmp_path):
        coeffs_path, dissim_path, coeffs, series, _ = perfect_fit
        out = tmp_path / "sh"
        code = main(
            ["shepard", "--coeffs", str(coeffs_path), "--dissim", str(dissim_path),
             "--out", str(out)]
        )
        assert code == 0
        rows = read_rows(out / "shepard.csv")
        assert len(rows) == series.m * 6  # all months, 4 objects -> 6 pairs
        for row in rows:
            assert float(row["observed"]) == pytest.approx(float(row["estimated"]), abs=1e-12)

    def test_single_month_selection(self, perfect_fit, tmp_path):
        coeffs_path, dissim_path, *_ = perfect_fit
        out = tmp_path / "sh1"
        code = main(
            ["shepard", "--coeffs", str(coeffs_path), "--dissim", str(dissim_path),
             "--t", "3", "--out", str(out)]
        )
        assert code == 0
        rows = read_rows(out / "shepard.csv")
        assert len(rows) == 6
        assert all(row["t"] == "3.0" for row in rows)


class TestResiduals:
    def test_perfect_fit_all_within_tolerance(self, perfect_fit, tmp_path):
        coeffs_path, dissim_path, *_ = perfect_fit
        out = tmp_path / "res"
        code = main(
            ["residuals", "--coeffs", str(coeffs_path), "--dissim", str(dissim_path),
             "--out", str(out)]
        )
        assert code == 0
        summary = json.loads((out / "residual_summary.json").read_text())
        assert summary["fraction_pairs_within_tol"] == 1.0
        assert summary["fraction_cells_within_tol"] == 1.0
        assert abs(summary["max_abs_residual"]) <= 1e-12
        rows = read_rows(out / "residuals.csv")
        assert len(rows) == 12 * 6


class TestAlignCommand:
    def test_recovers_rotation(self, tmp_path, rng):
        spec = make_basis(5, 1, 12)
        truth = CoeffSet(rng.standard_normal((5, 2, spec.q)))
        angle = 0.7
        rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        fitted = CoeffSet(np.matmul(rot.T, truth.mats))
        truth_path = tmp_path / "truth.csv"
        fitted_path = tmp_path / "fitted.csv"
        save_coeffs(truth_path, truth, spec)
        save_coeffs(fitted_path, fitted, spec)
        out = tmp_path / "al"
        code = main(
            ["align", "--fitted", str(fitted_path), "--truth", str(truth_path),
             "--m", "12", "--out", str(out)]
        )
        assert code == 0
        report = json.loads((out / "alignment.json").read_text())
        assert report["objective"] <= 1e-8
        np.testing.assert_allclose(np.array(report["transform"]), rot, atol=1e-4)

    def test_basis_mismatch_exit_1(self, tmp_path, rng):
        spec_a = make_basis(5, 1, 12)
        spec_b = make_basis(5, 1, 10)
        a = CoeffSet(rng.standard_normal((3, 2, spec_a.q)))
        path_a, path_b = tmp_path / "a.csv", tmp_path / "b.csv"
        save_coeffs(path_a, a, spec_a)
        save_coeffs(path_b, a, spec_b)
        code = main(["align", "--fitted", str(path_a), "--truth", str(path_b),
                     "--out", str(tmp_path / "x")])
        assert code == 1


class TestManifest:
    def test_single_manifest_with_digests(self, perfect_fit, tmp_path):
        coeffs_path, dissim_path, *_ = perfect_fit
        out = tmp_path / "m"
        main(["residuals", "--coeffs", str(coeffs_path), "--dissim", str(dissim_path),
              "--out", str(out)])
        manifests = list(out.glob("*manifest*"))
        assert len(manifests) == 1
        payload = json.loads(manifests[0].read_text())
        assert set(payload["inputs"]) == {str(coeffs_path), str(dissim_path)}
        for digest in payload["inputs"].values():
            assert len(digest) == 64
        assert payload["version"]
        assert payload["timestamp_utc"]
