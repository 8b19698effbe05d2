import pandas as pd
import pytest

import dlgn
from dlgn import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main


TRAIN_ARGS = ["--dataset", "parity", "--parity-bits", "4", "--L", "2", "--k", "8",
              "--iters", "20", "--eval-every", "10", "--batch-size", "16",
              "--probe-size", "32", "--seeds", "0"]


@pytest.fixture
def trained_run(tmp_path):
    out = tmp_path / "run"
    assert main(["train", *TRAIN_ARGS, "--output-dir", str(out), "--quiet"]) == EXIT_OK
    return out


def test_train_writes_outputs(trained_run, capsys):
    assert (trained_run / "metrics_seed0.csv").exists()
    assert (trained_run / "checkpoint_seed0.ckpt").exists()
    assert (trained_run / "summary.csv").exists()


def test_export_and_run_circuit(trained_run, tmp_path, capsys):
    ckpt = str(trained_run / "checkpoint_seed0.ckpt")
    netlist = tmp_path / "model.net"
    assert main(["export", "--checkpoint", ckpt, "--output", str(netlist)]) == EXIT_OK
    assert netlist.read_text().startswith("DLGN v1\n")

    predictions = tmp_path / "pred.csv"
    code = main(["run-circuit", "--netlist", str(netlist), "--checkpoint", ckpt,
                 "--predictions", str(predictions)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "Hard accuracy" in out
    assert "DG:" in out
    assert len(pd.read_csv(predictions)) == 16


def test_run_circuit_dimension_mismatch(trained_run, tmp_path, capsys):
    ckpt = str(trained_run / "checkpoint_seed0.ckpt")
    netlist = tmp_path / "model.net"
    main(["export", "--checkpoint", ckpt, "--output", str(netlist)])
    code = main(["run-circuit", "--netlist", str(netlist), "--dataset", "parity", "--parity-bits", "5"])
    assert code == EXIT_FAILURE
    assert "Dimension mismatch" in capsys.readouterr().out


def test_diagnose(trained_run, capsys):
    code = main(["diagnose", "--checkpoint", str(trained_run / "checkpoint_seed0.ckpt")])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "survival per layer" in out
    assert "layer 1 gates" in out


def test_resume_needs_single_seed(trained_run):
    code = main(["train", *TRAIN_ARGS[:-1], "0", "1", "--resume",
                 str(trained_run / "checkpoint_seed0.ckpt"), "--quiet"])
    assert code == EXIT_USAGE


def test_config_error_exit_code(capsys):
    assert main(["train", "--method", "softmixx", "--iters", "1"]) == EXIT_USAGE
    assert "did you mean 'soft_mix'" in capsys.readouterr().out


def test_missing_netlist(tmp_path):
    assert main(["run-circuit", "--netlist", str(tmp_path / "none.net"),
                 "--dataset", "parity"]) == EXIT_FAILURE


def test_usage_error_from_argparse():
    with pytest.raises(SystemExit) as info:
        main(["export"])
    assert info.value.code == 2


def test_verify_exit_codes(capsys):
    assert main(["verify", "--quick"]) == EXIT_OK
    assert main(["verify", "--quick", "--fault", "sign_flip"]) == EXIT_FAILURE
    assert "FAILED" in capsys.readouterr().out


def test_basis_metrics_names_degenerate(capsys):
    assert main(["basis-metrics", "--basis", "canonical", "uniform", "affine:0.5,2"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "degenerate" in out
    assert "affine:0.5,2" in out


def test_sweep_depth(tmp_path, capsys):
    out = tmp_path / "sweep"
    code = main(["sweep", "--axis", "depth", "--values", "1", "2", *TRAIN_ARGS[:4],
                 "--k", "8", "--iters", "10", "--eval-every", "10", "--batch-size", "16",
                 "--probe-size", "16", "--seeds", "0", "--output-dir", str(out)])
    assert code == EXIT_OK
    df = pd.read_csv(out / "sweep_depth.csv")
    assert sorted(df["value"].unique().tolist()) == [1, 2]
    assert "sweep depth" in capsys.readouterr().err


def test_sweep_width_needs_values():
    assert main(["sweep", "--axis", "width", "--dataset", "parity", "--iters", "5"]) == EXIT_USAGE


@pytest.mark.parametrize("flags, expected", [
    (["--workers", "4"], 4),
    (["--workers", "4", "--deterministic"], 1),
])
def test_run_circuit_workers(trained_run, tmp_path, monkeypatch, flags, expected):
    ckpt = str(trained_run / "checkpoint_seed0.ckpt")
    netlist = tmp_path / "model.net"
    main(["export", "--checkpoint", ckpt, "--output", str(netlist)])

    used = []
    real_predict = dlgn.predict

    def recording_predict(circuit, features, workers=1):
        used.append(workers)
        return real_predict(circuit, features, workers=workers)

    monkeypatch.setattr(dlgn, "predict", recording_predict)
    code = main(["run-circuit", "--netlist", str(netlist), "--checkpoint", ckpt, *flags])
    assert code == EXIT_OK
    assert used == [expected]
