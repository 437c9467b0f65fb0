"""The four subcommands end-to-end on the bundled 3-frame fixture."""

import os
import shutil

import pytest

from cascade_denoiser.cli import main

DATA = os.path.join(os.path.dirname(__file__), "data")

CFG = """
patch_size = 16
search_radius = 3
feat_channels = 8
context_channels = 8
hidden_channels = 12
recon_channels = 8
offset_groups = 2
pre_width = 4
max_iters = 2
steps = 3
pre_steps = 2
flow_steps = 2
freeze_steps = 1
lr = 0.001
seed = 11
frame_size = 32x32
sigmas = 0.05, 0.1
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "toy.cfg"
    cfg.write_text(CFG + f"params_path = {root / 'params.bin'}\n"
                         f"log_path = {root / 'train_log.csv'}\n")
    return root


@pytest.fixture(scope="module")
def trained(workdir, capsysbinary=None):
    rc = main(["train", "--config", str(workdir / "toy.cfg")])
    assert rc == 0
    assert (workdir / "params.bin").exists()
    assert (workdir / "train_log.csv").exists()
    return workdir


def test_train_subcommand(trained):
    log = (trained / "train_log.csv").read_text().splitlines()
    assert log[0].startswith("step,phase,loss")
    assert len(log) == 1 + 7  # 2 pre + 2 flow + 3 joint


def test_denoise_subcommand(trained):
    out = trained / "denoised"
    rc = main(["denoise", "--in", os.path.join(DATA, "fixture3", "manifest.txt"),
               "--out", str(out), "--params", str(trained / "params.bin"),
               "--config", str(trained / "toy.cfg")])
    assert rc == 0
    names = sorted(os.listdir(out))
    assert "manifest.txt" in names and "patches.csv" in names
    assert sum(n.endswith(".pgm") for n in names) == 3


def test_denoise_gate_flags(trained):
    out = trained / "denoised_nogate"
    rc = main(["denoise", "--in", os.path.join(DATA, "fixture3", "manifest.txt"),
               "--out", str(out), "--params", str(trained / "params.bin"),
               "--config", str(trained / "toy.cfg"), "--no-gate",
               "--max-iters", "2"])
    assert rc == 0
    csv_text = (out / "patches.csv").read_text()
    for line in csv_text.strip().splitlines()[1:]:
        assert line.split(",")[3] == "2"  # every patch ran the full 2 iterations


def test_eval_subcommand(trained):
    report = trained / "eval.csv"
    rc = main(["eval", "--pred", str(trained / "denoised"),
               "--gt", os.path.join(DATA, "fixture3_clean"),
               "--report", str(report)])
    assert rc == 0
    lines = report.read_text().strip().splitlines()
    assert lines[0] == "frame,psnr,ssim"
    assert lines[-1].startswith("mean,")


def test_bench_subcommand(trained):
    report = trained / "bench.csv"
    rc = main(["bench", "--config", str(trained / "toy.cfg"),
               "--report", str(report)])
    assert rc == 0
    text = report.read_text()
    assert "gating" in text.splitlines()[0]
    assert (trained / "heatmaps" / "seq0_error.pgm").exists()


def test_malformed_manifest_nonzero_exit_names_line(trained, capsys):
    rc = main(["denoise", "--in", os.path.join(DATA, "fixture3", "broken.txt"),
               "--out", str(trained / "x"), "--params", str(trained / "params.bin"),
               "--config", str(trained / "toy.cfg")])
    assert rc != 0
    err = capsys.readouterr().err
    assert "line 2" in err and "no_such_frame.pgm" in err


def test_train_determinism_bit_identical_csv(workdir, tmp_path):
    # same seed twice: byte-identical log and params
    for i in (1, 2):
        cfg = tmp_path / f"run{i}.cfg"
        cfg.write_text(CFG + f"params_path = {tmp_path}/p{i}.bin\n"
                             f"log_path = {tmp_path}/l{i}.csv\n")
        assert main(["train", "--config", str(cfg)]) == 0
    assert (tmp_path / "l1.csv").read_bytes() == (tmp_path / "l2.csv").read_bytes()
    assert (tmp_path / "p1.bin").read_bytes() == (tmp_path / "p2.bin").read_bytes()


def test_seed_env_override(workdir, tmp_path, monkeypatch):
    cfg = tmp_path / "env.cfg"
    cfg.write_text(CFG + f"params_path = {tmp_path}/pe.bin\n"
                         f"log_path = {tmp_path}/le.csv\n")
    monkeypatch.setenv("CASCADE_DENOISER_SEED", "99")
    assert main(["train", "--config", str(cfg)]) == 0
    monkeypatch.delenv("CASCADE_DENOISER_SEED")
    cfg2 = tmp_path / "plain.cfg"
    cfg2.write_text(CFG + f"params_path = {tmp_path}/pp.bin\n"
                          f"log_path = {tmp_path}/lp.csv\n")
    assert main(["train", "--config", str(cfg2)]) == 0
    assert (tmp_path / "pe.bin").read_bytes() != (tmp_path / "pp.bin").read_bytes()


def test_unknown_config_key_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("steps = 3\nbanana = 1\n")
    rc = main(["train", "--config", str(cfg)])
    assert rc != 0
    assert "line 2" in capsys.readouterr().err
