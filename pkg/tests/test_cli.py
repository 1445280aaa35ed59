import json
import time

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import DATA_DIR, TAXI_FIXTURE
from statecompress import cli as cli_mod
from statecompress.cli import cli
from statecompress.errors import DegenerateEstimateError
from statecompress.io import matrix_from_envelope, write_matrix, write_trajectory
from statecompress.markov import simulate_trajectory

GOLDEN_P = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]])


@pytest.fixture
def runner():
    return CliRunner()


def _run(runner, *args):
    return runner.invoke(cli, [str(a) for a in args])


class TestSimulate:
    def test_deterministic_chain(self, runner, tmp_path):
        write_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]), tmp_path / "P.csv")
        res = _run(runner, "simulate", "--input", tmp_path / "P.csv", "--output", tmp_path / "t.txt", "-n", 3, "--initial", 0)
        assert res.exit_code == 0, res.output
        assert (tmp_path / "t.txt").read_text() == "0\n1\n0\n1\n"

    def test_invalid_matrix_names_row(self, runner, tmp_path):
        (tmp_path / "P.csv").write_text("2,2\n1.5,-0.5\n0.5,0.5\n")
        res = _run(runner, "simulate", "--input", tmp_path / "P.csv", "--output", tmp_path / "t.txt", "-n", 3)
        assert res.exit_code == 2
        assert "row 0" in res.output

    def test_seeded(self, runner, tmp_path):
        write_matrix(GOLDEN_P, tmp_path / "P.csv")
        texts = []
        for name in ("a", "b"):
            res = _run(runner, "simulate", "--input", tmp_path / "P.csv", "--output", tmp_path / name, "-n", 200,
                       "--seed", 9, "--initial", "stationary")
            assert res.exit_code == 0, res.output
            texts.append((tmp_path / name).read_text())
        assert texts[0] == texts[1]


class TestEstimate:
    def test_rank_one_rows_identical(self, runner, tmp_path):
        P = np.tile([0.2, 0.5, 0.3], (3, 1))
        write_trajectory(simulate_trajectory(P, 0, 2000, seed=0).states, tmp_path / "t.txt")
        res = _run(runner, "estimate", "--input", tmp_path / "t.txt", "--output", tmp_path / "e.json", "-r", 1)
        assert res.exit_code == 0, res.output
        P_hat = matrix_from_envelope(json.loads((tmp_path / "e.json").read_text())["P_hat"])
        np.testing.assert_allclose(P_hat, np.tile(P_hat[0], (3, 1)), atol=1e-12)

    def test_golden(self, runner, tmp_path):
        write_trajectory(simulate_trajectory(GOLDEN_P, 0, 5000, seed=2016).states, tmp_path / "t.txt")
        res = _run(runner, "estimate", "--input", tmp_path / "t.txt", "--output", tmp_path / "e.json", "-r", 2,
                   "--with-empirical")
        assert res.exit_code == 0, res.output
        got = json.loads((tmp_path / "e.json").read_text())
        want = json.loads((DATA_DIR / "estimate_golden.json").read_text())
        assert got.keys() == want.keys()
        for key in ("F_hat", "P_hat", "F_tilde", "P_tilde"):
            np.testing.assert_allclose(matrix_from_envelope(got[key]), matrix_from_envelope(want[key]), atol=1e-12)
        assert got["n"] == 5000 and got["p"] == 3
        # second route: plain rank-2 truncation, positive part, normalize
        U, s, Vt = np.linalg.svd(matrix_from_envelope(want["F_tilde"]))
        F0 = np.clip((U[:, :2] * s[:2]) @ Vt[:2], 0, None)
        np.testing.assert_allclose(matrix_from_envelope(want["F_hat"]), F0 / F0.sum(), atol=1e-14)

    def test_numerical_failure_exit_code(self, runner, tmp_path, monkeypatch):
        def boom(*args, **kwargs):
            raise DegenerateEstimateError("positive part vanished")

        monkeypatch.setattr(cli_mod, "estimate_low_rank_matrix", boom)
        write_trajectory([0, 1, 0], tmp_path / "t.txt")
        res = _run(runner, "estimate", "--input", tmp_path / "t.txt", "--output", tmp_path / "e.json", "-r", 1)
        assert res.exit_code == 3

    def test_bad_trajectory(self, runner, tmp_path):
        (tmp_path / "t.txt").write_text("0\nx\n")
        res = _run(runner, "estimate", "--input", tmp_path / "t.txt", "--output", tmp_path / "e.json", "-r", 1)
        assert res.exit_code == 2


def test_subspaces(runner, tmp_path):
    write_trajectory(simulate_trajectory(GOLDEN_P, 0, 500, seed=1).states, tmp_path / "t.txt")
    res = _run(runner, "subspaces", "--input", tmp_path / "t.txt", "--output", tmp_path / "s.json", "-r", 2)
    assert res.exit_code == 0, res.output
    d = json.loads((tmp_path / "s.json").read_text())
    assert set(d) == {"U_F", "V_F", "U_P", "V_P"}
    U = matrix_from_envelope(d["U_P"])
    np.testing.assert_allclose(U.T @ U, np.eye(2), atol=1e-12)


class TestPartitions:
    @pytest.mark.parametrize("generator,command", [("aggregatable", "aggregate"), ("lumpable", "lump")])
    def test_recovers_truth(self, runner, tmp_path, generator, command):
        res = _run(runner, "generate", "--generator", generator, "-p", 20, "-r", 2, "--seed", 1, "--output", tmp_path)
        assert res.exit_code == 0, res.output
        res = _run(runner, "simulate", "--input", tmp_path / "P.csv", "--output", tmp_path / "t.txt", "-n", 200000,
                   "--initial", "stationary")
        assert res.exit_code == 0, res.output
        res = _run(runner, command, "--input", tmp_path / "t.txt", "--output", tmp_path / "est.csv", "-r", 2, "-p", 20,
                   "--truth", tmp_path / "truth.csv")
        assert res.exit_code == 0, res.output
        assert "misclassification_rate=0.0" in res.output

    def test_truth_length_mismatch(self, runner, tmp_path):
        write_trajectory([0, 1, 2, 0, 1, 2], tmp_path / "t.txt")
        (tmp_path / "truth.csv").write_text("state,block\n0,0\n1,1\n")
        res = _run(runner, "aggregate", "--input", tmp_path / "t.txt", "--output", tmp_path / "o.csv", "-r", 2,
                   "--truth", tmp_path / "truth.csv")
        assert res.exit_code == 2


class TestBench:
    CONFIG = {"generator": "low_rank", "p_values": [20], "r": 2, "k_values": [1, 2, 3, 4], "trials": 2,
              "kmeans_restarts": 2}

    def test_tiny_sweep(self, runner, tmp_path):
        (tmp_path / "cfg.json").write_text(json.dumps(self.CONFIG))
        start = time.perf_counter()
        res = _run(runner, "bench", "--config", tmp_path / "cfg.json", "--output", tmp_path / "a")
        assert time.perf_counter() - start < 5
        assert res.exit_code == 0, res.output
        _run(runner, "bench", "--config", tmp_path / "cfg.json", "--output", tmp_path / "b")
        for name in ("sweep.csv", "summary.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        summary = json.loads((tmp_path / "a" / "summary.json").read_text())
        assert isinstance(summary["rate_l1_total_spectral"]["20"]["slope"], float)

    def test_bad_config(self, runner, tmp_path):
        (tmp_path / "cfg.json").write_text(json.dumps({"generator": "nope"}))
        assert _run(runner, "bench", "--config", tmp_path / "cfg.json", "--output", tmp_path / "a").exit_code == 2
        (tmp_path / "cfg.json").write_text("[1,")
        assert _run(runner, "bench", "--config", tmp_path / "cfg.json", "--output", tmp_path / "a").exit_code == 2


class TestTaxi:
    def test_fixture_deterministic(self, runner, tmp_path):
        for name in ("a", "b"):
            res = _run(runner, "taxi", "--input", TAXI_FIXTURE, "--output", tmp_path / name, "-r", 2)
            assert res.exit_code == 0, res.output
        files = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert files == ["F_tilde.json", "P_tilde.json", "counts.csv", "partition.csv", "report.json", "states.csv"]
        for name in files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        blocks = [line.split(",")[-1] for line in (tmp_path / "a" / "partition.csv").read_text().splitlines()[1:]]
        assert blocks == ["0"] * 4 + ["1"] * 4
        report = json.loads((tmp_path / "a" / "report.json").read_text())
        assert report["counters_reconcile"] and report["p"] == 8

    def test_segments(self, runner, tmp_path):
        res = _run(runner, "taxi", "--input", TAXI_FIXTURE, "--output", tmp_path, "-r", 2, "--segments",
                   "--min-visits", 20, "--format", "geojson")
        assert res.exit_code == 0, res.output
        for seg in ("morning", "afternoon", "evening"):
            assert (tmp_path / seg / "partition.geojson").exists()

    def test_empty_csv(self, runner, tmp_path):
        (tmp_path / "empty.csv").write_text("")
        res = _run(runner, "taxi", "--input", tmp_path / "empty.csv", "--output", tmp_path / "o", "-r", 2)
        assert res.exit_code == 2

    def test_r_too_large(self, runner, tmp_path):
        res = _run(runner, "taxi", "--input", TAXI_FIXTURE, "--output", tmp_path / "o", "-r", 9)
        assert res.exit_code == 2
