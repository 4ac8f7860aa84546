import subprocess
import sys

import numpy as np
import pytest

from qpdecomp.cli import main
from qpdecomp.series import load_csv


@pytest.fixture(scope="module")
def synth_csv(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    out = root / "torus.csv"
    latent = root / "torus_latent.csv"
    code = main(["synth", "--testbed", "pure_torus_2", "--steps", "700",
                 "--dt", "1.0", "--seed", "3", "--out", str(out),
                 "--latent-out", str(latent)])
    assert code == 0
    return out, latent


def run_cli(args):
    return main([str(a) for a in args])


class TestSynthCommand:
    def test_writes_series_and_latent(self, synth_csv):
        out, latent = synth_csv
        data = load_csv(out)
        assert data.n == 700 and data.k == 3
        header = latent.read_text().splitlines()[0].split(",")
        assert header == ["time", "theta0", "theta1", "x0"]

    def test_unknown_testbed_exit_code(self, tmp_path, capsys):
        code = run_cli(["synth", "--testbed", "nope", "--steps", "10",
                        "--out", tmp_path / "x.csv"])
        assert code == 3
        err = capsys.readouterr().err
        assert err.startswith("qpdecomp: DataError:")
        assert err.count("\n") == 1

    def test_deterministic_output(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            assert run_cli(["synth", "--testbed", "torus_plus_damped",
                            "--steps", "100", "--seed", "7", "--out", p]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestFrequenciesCommand:
    def test_writes_frequency_table(self, synth_csv, tmp_path, capsys):
        out, _ = synth_csv
        freq_csv = tmp_path / "freqs.csv"
        code = run_cli(["frequencies", "--input", out, "--epsilon", "2.0",
                        "--delays", "6", "--num-eigen", "40", "--L0", "8",
                        "--train-end", "600", "--solver", "dense",
                        "--out", freq_csv])
        assert code == 0
        lines = freq_csv.read_text().splitlines()
        assert lines[0] == "bin,omega_rad_per_s,period_s,period_human,amplitude,growth"
        assert len(lines) >= 2
        assert lines[1].split(",")[0] == "0"
        report = capsys.readouterr().out
        assert "long periods" in report and "short periods" in report


@pytest.fixture(scope="module")
def model_file(synth_csv, tmp_path_factory):
    out, _ = synth_csv
    model = tmp_path_factory.mktemp("model") / "m.npz"
    code = run_cli(["decompose", "--input", out, "--epsilon", "2.0",
                    "--delays", "6", "--num-eigen", "40", "--L0", "8",
                    "--train-end", "600", "--solver", "dense",
                    "--model-out", model])
    assert code == 0
    return model


class TestDecomposeReconstructPredict:

    def test_reconstruct_modes(self, model_file, tmp_path):
        for mode in ("insample", "freerun"):
            out = tmp_path / f"recon_{mode}.csv"
            assert run_cli(["reconstruct", "--model", model_file,
                            "--mode", mode, "--out", out]) == 0
            lines = out.read_text().splitlines()
            assert lines[0].startswith("time_s,truth_")
            assert len(lines) > 500

    def test_insample_reconstruction_is_close(self, model_file, synth_csv, tmp_path):
        out, _ = synth_csv
        recon = tmp_path / "recon.csv"
        run_cli(["reconstruct", "--model", model_file, "--mode", "insample",
                 "--out", recon])
        rows = np.loadtxt(recon, delimiter=",", skiprows=1)
        k = (rows.shape[1] - 1) // 2
        truth, est = rows[:, 1:1 + k], rows[:, 1 + k:]
        scale = np.abs(truth).max(axis=0)
        assert (np.abs(truth - est).max(axis=0) / scale).max() < 0.1

    def test_predict_case_study_protocol(self, model_file, synth_csv, tmp_path):
        out, _ = synth_csv
        pred = tmp_path / "pred.csv"
        code = run_cli(["predict", "--model", model_file, "--input", out,
                        "--init-at", "620", "--steps", "60",
                        "--ma-window", "10", "--out", pred])
        assert code == 0
        lines = pred.read_text().splitlines()
        header = lines[0].split(",")
        assert len(lines) == 61
        assert float(lines[1].split(",")[0]) == 620.0
        assert any(h.startswith("err_") and h.endswith("_ma10") for h in header)

    def test_predict_init_too_early(self, model_file, synth_csv, tmp_path, capsys):
        out, _ = synth_csv
        code = run_cli(["predict", "--model", model_file, "--input", out,
                        "--init-at", "2", "--steps", "5",
                        "--out", tmp_path / "p.csv"])
        assert code == 3
        assert "delay window" in capsys.readouterr().err


class TestDiagnosticsCommand:
    def test_writes_diagnostic_curves(self, synth_csv, tmp_path):
        out, _ = synth_csv
        outdir = tmp_path / "diag"
        code = run_cli(["diagnostics", "--input", out, "--epsilon", "2.0",
                        "--delays", "6", "--num-eigen", "40", "--L0", "8",
                        "--train-end", "600", "--solver", "dense",
                        "--outdir", outdir])
        assert code == 0
        for name in ("sqdist_histogram.csv", "norm_growth_by_column.csv",
                     "growth_ratio_sorted.csv", "eigenvalues.csv"):
            assert (outdir / name).is_file()


class TestRunCommand:
    def test_run_from_config_with_flag_override(self, synth_csv, tmp_path):
        out, _ = synth_csv
        cfg = tmp_path / "run.conf"
        cfg.write_text(
            f"input = {out}\n"
            f"outdir = {tmp_path / 'wrong'}\n"
            "delays = 6\nepsilon = 2.0\nnum_eigen = 40\nL0 = 8\n"
            "train_end = 600\npredict_start = 620\npredict_end = 680\n"
            "ma_windows = 1 10\nsolver = dense\n",
            encoding="utf-8",
        )
        outdir = tmp_path / "artifacts"
        code = run_cli(["run", "--config", cfg, "--outdir", outdir])
        assert code == 0
        assert (outdir / "manifest.txt").is_file()
        assert not (tmp_path / "wrong").exists()

    def test_exit_codes(self, synth_csv, tmp_path, capsys):
        out, _ = synth_csv
        # config error: bad threshold relation
        code = run_cli(["run", "--input", out, "--outdir", tmp_path / "o1",
                        "--epsilon", "2.0", "--num-eigen", "10", "--L0", "50"])
        assert code == 2
        # data error: missing input
        code = run_cli(["run", "--input", tmp_path / "absent.csv",
                        "--outdir", tmp_path / "o2", "--epsilon", "2.0",
                        "--num-eigen", "40", "--L0", "8",
                        "--predict-start", "30", "--predict-end", "40"])
        assert code == 3
        # numerical error: eigenvalue floor (near-duplicate data, huge eps)
        flat = tmp_path / "flat.csv"
        rng = np.random.default_rng(0)
        rows = ["time,a"] + [f"{i},{1 + 1e-9 * rng.random():.17g}"
                             for i in range(50)]
        flat.write_text("\n".join(rows) + "\n", encoding="utf-8")
        code = run_cli(["run", "--input", flat, "--outdir", tmp_path / "o3",
                        "--epsilon", "1e6", "--delays", "0",
                        "--num-eigen", "10", "--L0", "5", "--train-end", "0",
                        "--predict-start", "30", "--predict-end", "40"])
        assert code == 4
        err = capsys.readouterr().err
        assert "NumericalError" in err


def test_module_invocation_smoke(tmp_path):
    out = tmp_path / "x.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "qpdecomp", "synth", "--testbed",
         "pure_torus_2", "--steps", "50", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.is_file()


def test_thread_env_applied(monkeypatch):
    import os

    from qpdecomp.cli import _apply_thread_env

    monkeypatch.setenv("QPDECOMP_THREADS", "2")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS"):
        monkeypatch.delenv(var, raising=False)
    _apply_thread_env()
    assert os.environ["OMP_NUM_THREADS"] == "2"
    assert os.environ["OPENBLAS_NUM_THREADS"] == "2"
