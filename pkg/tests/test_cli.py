import csv
import json

import numpy as np
import pytest

from drvi.cli import parse_samples, run_command
from drvi.experiment import sec5_components
from drvi.mixture import sample_mixture


def write_csv(path, rows, header=None):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(header)
        writer.writerows(rows)


class TestParseSamples:
    def test_plain_numeric(self, tmp_path):
        path = tmp_path / "s.csv"
        write_csv(path, [[float(i + j) for j in range(10)] for i in range(2)])
        mat = parse_samples(path)
        assert mat.shape == (2, 10)
        assert mat[1, 3] == 4.0

    def test_header_skipped(self, tmp_path):
        path = tmp_path / "s.csv"
        write_csv(path, [[1.0, 2.0], [3.0, 4.0]], header=["a", "b"])
        assert parse_samples(path).shape == (2, 2)

    def test_ragged_row_names_index(self, tmp_path):
        path = tmp_path / "s.csv"
        with open(path, "w", newline="") as fh:
            fh.write("1.0,2.0\n3.0\n")
        with pytest.raises(ValueError, match="row 2"):
            parse_samples(path)

    def test_non_numeric_cell_reported(self, tmp_path):
        path = tmp_path / "s.csv"
        with open(path, "w", newline="") as fh:
            fh.write("1.0,2.0\n3.0,oops\n")
        with pytest.raises(ValueError, match="row 2, column 2"):
            parse_samples(path)

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            parse_samples("/does/not/exist.csv")


@pytest.fixture()
def sample_file(tmp_path):
    comps = sec5_components()
    train = sample_mixture(np.array([0.5, 0.25, 0.25]), comps, 120, seed=42)
    path = tmp_path / "samples.csv"
    write_csv(path, [[repr(float(v)) for v in row] for row in train],
              header=[f"a{i}" for i in range(10)])
    return path


class TestSubcommands:
    def test_regimes_emits_components_and_manifest(self, tmp_path):
        rc = run_command(["regimes", "--preset", "sec5", "--out", str(tmp_path)])
        assert rc == 0
        payload = json.loads((tmp_path / "regimes.json").read_text())
        assert len(payload["components"]) == 3
        assert payload["components"][2]["mean"][0] == pytest.approx(0.0155)
        manifest = json.loads((tmp_path / "regimes_manifest.json").read_text())
        assert "regimes.json" in manifest["outputs"]

    def test_fit_pipeline(self, tmp_path, sample_file):
        run_command(["regimes", "--out", str(tmp_path)])
        rc = run_command([
            "fit",
            "--samples", str(sample_file),
            "--regimes", str(tmp_path / "regimes.json"),
            "--alpha", "0.05",
            "--out", str(tmp_path),
        ])
        assert rc == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["N"] == 120
        assert len(summary["theta_hat"]) == 3
        assert summary["delta_hat"] > 0

    def test_single_column_fit(self, tmp_path):
        rng = np.random.default_rng(0)
        path = tmp_path / "one.csv"
        write_csv(path, [[float(v)] for v in rng.standard_t(3, size=60)], header=["x"])
        from drvi.experiment import sec22_components
        from drvi.mixture import components_to_json

        components_to_json(sec22_components(), tmp_path / "c22.json")
        rc = run_command([
            "fit", "--samples", str(path), "--regimes", str(tmp_path / "c22.json"),
            "--out", str(tmp_path),
        ])
        assert rc == 0

    def test_ambiguity_subcommand(self, tmp_path, sample_file):
        run_command(["regimes", "--out", str(tmp_path)])
        run_command([
            "fit", "--samples", str(sample_file),
            "--regimes", str(tmp_path / "regimes.json"), "--out", str(tmp_path),
        ])
        rc = run_command([
            "ambiguity", "--summary", str(tmp_path / "summary.json"),
            "--r-c", "0.05", "--out", str(tmp_path),
        ])
        assert rc == 0
        amb = json.loads((tmp_path / "ambiguity.json").read_text())
        assert amb["radius"] == pytest.approx(0.05 + amb["delta_hat"])
        assert amb["feasible"]

    def test_envelope_outputs_per_method(self, tmp_path):
        rc = run_command([
            "envelope", "--sizes", "20,50", "--grid-points", "60", "--out", str(tmp_path),
        ])
        assert rc == 0
        for method in ("bayes", "l1", "chi2"):
            for N in (20, 50):
                path = tmp_path / f"envelope_{method}_N{N}.csv"
                assert path.exists()
                with open(path) as fh:
                    rows = list(csv.reader(fh))
                assert rows[0] == ["t", "lower", "upper", "nominal", "empirical_cdf", "true_cdf"]
                assert len(rows) == 61
                lower = np.array([float(r[1]) for r in rows[1:]])
                upper = np.array([float(r[2]) for r in rows[1:]])
                nominal = np.array([float(r[3]) for r in rows[1:]])
                assert np.all(lower <= nominal + 1e-9)
                assert np.all(nominal <= upper + 1e-9)

    def test_solve_subcommand(self, tmp_path):
        run_command(["regimes", "--out", str(tmp_path)])
        amb_path = tmp_path / "amb.json"
        amb_path.write_text(json.dumps({"center": [0.5, 0.25, 0.25], "radius": 0.05}))
        prob = {
            "regimes": str(tmp_path / "regimes.json"),
            "ambiguity": str(amb_path),
            "kappa": 0.1,
            "lambda": 0.01,
            "eps": 1e-4,
            "eta": 0.5,
            "max_iter": 4000,
            "pool_size": 1000,
            "seed": 3,
        }
        (tmp_path / "prob.json").write_text(json.dumps(prob))
        rc = run_command(["solve", "--problem", str(tmp_path / "prob.json"), "--out", str(tmp_path)])
        assert rc == 0
        result = json.loads((tmp_path / "solve_result.json").read_text())
        assert len(result["x_star"]) == 20
        hist = (tmp_path / "residual_history.csv").read_text().splitlines()
        assert hist[0] == "iteration,stop_value"
        assert len(hist) == result["iterations"] + 1

    def test_truth_subcommand_with_overrides(self, tmp_path):
        rc = run_command([
            "truth", "--preset", "desk", "--set", "n_sim=5000", "--out", str(tmp_path),
        ])
        assert rc == 0
        truth = json.loads((tmp_path / "truth.json").read_text())
        assert truth["converged"]
        assert len(truth["x_c"]) == 20

    def test_benchmark_tables_and_manifest(self, tmp_path):
        rc = run_command([
            "benchmark", "--preset", "desk", "--seed", "3",
            "--set", "trials=2", "--set", "sample_sizes=[20]",
            "--set", "n_sim=5000", "--set", "pool_size=500", "--set", "n_test=500",
            "--out", str(tmp_path),
        ])
        assert rc == 0
        for name in ("table1_residual.csv", "table2_utility_error.csv",
                     "table3_sharpe.csv", "table4_raroc.csv"):
            with open(tmp_path / name) as fh:
                rows = list(csv.reader(fh))
            assert rows[0] == ["method", "N", "mean", "variance", "trials_completed"]
            assert len(rows) == 5  # four methods x one size
            assert all(r[4] == "2" for r in rows[1:])
        manifest = json.loads((tmp_path / "benchmark_manifest.json").read_text())
        emitted = set(manifest["outputs"])
        assert emitted == {
            "table1_residual.csv", "table2_utility_error.csv", "table3_sharpe.csv",
            "table4_raroc.csv", "failures.json",
        }
        assert manifest["seed"] == 3
        assert "config_hash" in manifest["config"]

    def test_byte_determinism_small(self, tmp_path):
        args = [
            "benchmark", "--preset", "desk", "--seed", "5",
            "--set", "trials=2", "--set", "sample_sizes=[20]",
            "--set", "n_sim=5000", "--set", "pool_size=500", "--set", "n_test=500",
        ]
        d1, d2 = tmp_path / "a", tmp_path / "b"
        assert run_command(args + ["--out", str(d1)]) == 0
        assert run_command(args + ["--out", str(d2)]) == 0
        for path in sorted(d1.iterdir()):
            assert path.read_bytes() == (d2 / path.name).read_bytes()


class TestErrorContracts:
    def test_usage_error_unknown_subcommand(self):
        assert run_command(["frobnicate"]) == 2

    def test_usage_error_unknown_override(self, tmp_path):
        rc = run_command([
            "benchmark", "--preset", "desk", "--set", "nonsense.key=1", "--out", str(tmp_path),
        ])
        assert rc == 2

    def test_domain_error_missing_file(self, tmp_path):
        rc = run_command([
            "fit", "--samples", "/no/such.csv", "--regimes", "/no/such.json",
            "--out", str(tmp_path),
        ])
        assert rc == 1

    def test_domain_error_malformed_config(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        rc = run_command(["benchmark", "--config", str(bad), "--out", str(tmp_path)])
        assert rc == 1
