import numpy as np
import pytest

from mfggan import networks
from mfggan.cli import main
from mfggan.config import PRESETS, RunConfig, parse_config_text, read_config_file, resolve
from mfggan.data import write_idx_images
from mfggan.errors import ConfigError
from mfggan.metrics import read_points

FAST = ["--outer-steps", "4", "--inner-steps", "1", "--batch-size", "16", "--gen-hidden", "6",
        "--disc-hidden", "6", "--eval-every", "2", "--checkpoint-every", "2", "--eval-samples", "100",
        "--hjb-samples", "20", "--export-count", "30", "--quiet"]


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_train_writes_run_directory(tmp_path, capsys):
    out = tmp_path / "a"
    code, stdout, _ = run(["train", "--experiment", "syn2", "--seed", "7", "--out", str(out), *FAST], capsys)
    assert code == 0
    for name in ("metrics.csv", "effective_config", "samples_t0.csv", "samples_t1.csv",
                 "gen_final.ckpt", "disc_final.ckpt", "gen_0000000.ckpt", "gen_0000004.ckpt"):
        assert (out / name).exists(), name
    assert read_points(out / "samples_t1.csv").shape == (30, 2)
    assert "wrote" in stdout


def test_train_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(["train", "--experiment", "syn2", "--seed", "7", "--out", str(tmp_path / name), *FAST], capsys)[0] == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "samples_t1.csv").read_bytes() == (tmp_path / "b" / "samples_t1.csv").read_bytes()


def test_effective_config_reproduces_run(tmp_path, capsys):
    first = tmp_path / "first"
    run(["train", "--experiment", "syn1", "--seed", "3", "--out", str(first), *FAST], capsys)
    cfg = read_config_file(first / "effective_config")
    assert cfg["q"] == 10.0 and cfg["seed"] == 3 and cfg["experiment"] == "syn1"
    second = tmp_path / "second"
    code, _, _ = run(["train", "--config", str(first / "effective_config"), "--out", str(second),
                      "--export-count", "30", "--quiet"], capsys)
    assert code == 0
    assert (first / "metrics.csv").read_bytes() == (second / "metrics.csv").read_bytes()


def test_seed_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MFGAN_SEED", "11")
    run(["train", "--experiment", "syn2", "--out", str(tmp_path / "env"), *FAST], capsys)
    assert read_config_file(tmp_path / "env" / "effective_config")["seed"] == 11
    run(["train", "--experiment", "syn2", "--seed", "2", "--out", str(tmp_path / "flag"), *FAST], capsys)
    assert read_config_file(tmp_path / "flag" / "effective_config")["seed"] == 2


def test_mnist_requires_dataset(tmp_path, capsys):
    code, _, err = run(["train", "--experiment", "mnist", "--out", str(tmp_path / "m"), *FAST], capsys)
    assert code != 0
    assert err.startswith("error:missing-dataset:")


def test_mnist_tiny_run(tmp_path, capsys):
    imgs = np.random.default_rng(0).integers(0, 256, size=(20, 28, 28), dtype=np.uint8)
    idx = write_idx_images(tmp_path / "imgs.idx", imgs)
    code, _, _ = run(["train", "--experiment", "mnist", "--mnist-path", str(idx), "--out", str(tmp_path / "m"),
                      *FAST], capsys)
    assert code == 0
    pts = read_points(tmp_path / "m" / "samples_t1.csv")
    assert pts.shape == (30, 784)
    assert pts.min() >= 0.0 and pts.max() <= 1.0


def test_unknown_config_key_in_file(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("# comment\nseed = 1\nlearning_rate = 3\n")
    code, _, err = run(["train", "--config", str(cfg), "--out", str(tmp_path / "x")], capsys)
    assert code == 2
    assert err.startswith("error:config:")
    assert "valid keys" in err and "lr_gen" in err


def test_unknown_flag(capsys):
    with pytest.raises(SystemExit) as info:
        main(["train", "--learning-rate", "3"])
    assert info.value.code == 2
    err = capsys.readouterr().err
    assert err.startswith("error:usage:")
    assert "--lr-gen" in err


def test_preset_conflict(tmp_path, capsys):
    code, _, err = run(["train", "--experiment", "syn1", "--q", "2", "--out", str(tmp_path / "x")], capsys)
    assert code == 2 and err.startswith("error:config:")


def test_config_parsing():
    values = parse_config_text("experiment = syn3  # ten dims\n\nouter_steps=12\nwall_clock = yes\n")
    assert values == {"experiment": "syn3", "outer_steps": 12, "wall_clock": True}
    with pytest.raises(ConfigError):
        parse_config_text("just words\n")
    with pytest.raises(ConfigError):
        parse_config_text("seed = abc\n")


def test_resolve_precedence():
    cfg = resolve("syn3", {"seed": 4, "batch_size": 32}, {"batch_size": 64}, environ={"MFGAN_SEED": "9"})
    assert (cfg.dim, cfg.q, cfg.seed, cfg.batch_size) == (10, 2.0, 4, 64)
    assert resolve("syn2", environ={"MFGAN_SEED": "9"}).seed == 9
    assert set(PRESETS) == {"syn1", "syn2", "syn3", "mnist"}
    assert "lr_half_life" in RunConfig.keys()


def test_sample_command(tmp_path, capsys):
    out = tmp_path / "a"
    run(["train", "--experiment", "syn2", "--out", str(out), *FAST], capsys)
    code, _, _ = run(["sample", "--checkpoint", str(out / "gen_final.ckpt"), "--t", "0.5", "--count", "12",
                      "--out", str(tmp_path / "s.csv")], capsys)
    assert code == 0
    assert read_points(tmp_path / "s.csv").shape == (12, 2)
    code, _, _ = run(["sample", "--checkpoint", str(out / "gen_final.ckpt"), "--count", "0",
                      "--out", str(tmp_path / "e.csv")], capsys)
    assert code == 0 and (tmp_path / "e.csv").read_text() == "x0,x1\n"
    code, _, err = run(["sample", "--checkpoint", str(out / "gen_final.ckpt"), "--t", "1.2",
                        "--out", str(tmp_path / "bad.csv")], capsys)
    assert code == 2 and err.startswith("error:precondition:")


def test_sample_spec_mismatch(tmp_path, capsys):
    out = tmp_path / "a"
    run(["train", "--experiment", "syn2", "--out", str(out), *FAST], capsys)
    other = networks.MlpSpec(2, (5,), 2)
    networks.save_checkpoint(other, networks.init_params(other, 0), out / "gen_other.ckpt")
    code, _, err = run(["sample", "--checkpoint", str(out / "gen_other.ckpt"), "--out", str(tmp_path / "s.csv")],
                       capsys)
    assert code == 2 and err.startswith("error:spec-mismatch:")


def test_sample_bad_magic(tmp_path, capsys):
    bad = tmp_path / "gen.ckpt"
    bad.write_bytes(b"NOTACKPT" + bytes(20))
    code, _, err = run(["sample", "--checkpoint", str(bad), "--out", str(tmp_path / "s.csv")], capsys)
    assert code == 2 and err.startswith("error:bad-magic:")


def test_eval_command_writes_report_and_figures(tmp_path, capsys):
    out = tmp_path / "a"
    run(["train", "--experiment", "syn2", "--out", str(out), *FAST], capsys)
    code, stdout, _ = run(["eval", "--run", str(out), "--samples", "200"], capsys)
    assert code == 0
    lines = (out / "eval.csv").read_text().splitlines()
    assert lines[0] == "t,n,mean_err,cov_err,w2,hjb_residual"
    assert [line.split(",")[0] for line in lines[1:]] == ["0.0", "0.5", "1.0"]
    assert (out / "samples.png").stat().st_size > 0
    assert (out / "metrics.png").stat().st_size > 0
    assert "report:" in stdout


def test_eval_not_a_run(tmp_path, capsys):
    code, _, err = run(["eval", "--run", str(tmp_path)], capsys)
    assert code == 2 and err.startswith("error:config:")


def test_train_plot_flag(tmp_path, capsys):
    out = tmp_path / "p"
    code, stdout, _ = run(["train", "--experiment", "syn3", "--out", str(out), "--plot", *FAST], capsys)
    assert code == 0
    assert (out / "samples.png").exists()
    assert "figure:" in stdout


def test_verify_negative_control(capsys):
    code, stdout, err = run(["verify", "--corrupt-hamiltonian"], capsys)
    assert code != 0
    assert "legendre" in stdout and "FAIL" in stdout
    assert "error:verify:legendre" in err
