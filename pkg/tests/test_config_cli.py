import math

import numpy as np
import pytest
import yaml

from crowdcast.cli import main
from crowdcast.config import build_run_config, load_run_config
from crowdcast.errors import ConfigError
from crowdcast.formats import read_cdmp
from crowdcast.masking import tm_ratio, MaskTask
from crowdcast.simdata import load_trajectories

MICRO_YAML = """
seed: 7
output_dir: {out}
sim:
  width: 16
  height: 16
  n_agents: 3
  frames: 120
  speed_mean: 0.8
  turn_std: 0.1
model:
  embed_dim: 16
  encoder_depth: 1
  decoder_dim: 16
  decoder_depth: 1
  heads: 4
  mlp_ratio: 2.0
train:
  absolute_lr: 1.0e-3
  epochs: 2
  warmup_epochs: 1
  batch_size: 8
augment:
  rotate: false
  flip_h: false
  flip_v: false
  scale: false
data:
  train_path: {traj}
  eval_path: {traj}
"""


@pytest.fixture
def micro_cfg(tmp_path):
    cfg_path = tmp_path / "run.yaml"
    traj = tmp_path / "trajectories.txt"
    cfg_path.write_text(MICRO_YAML.format(out=tmp_path / "runs", traj=traj))
    return cfg_path, traj, tmp_path


class TestRunConfig:
    def test_defaults_and_seed_cascade(self):
        cfg = build_run_config({"seed": 5})
        assert cfg.sim.seed == 5
        assert cfg.train.seed == 6
        assert cfg.eval.seed == 7
        assert cfg.model.token_len == cfg.grid.token_len == 256

    def test_explicit_section_seed_wins(self):
        cfg = build_run_config({"seed": 5, "sim": {"seed": 99}})
        assert cfg.sim.seed == 99

    def test_unknown_top_level_key_named(self):
        with pytest.raises(ConfigError, match="simm"):
            build_run_config({"simm": {}})

    def test_unknown_section_key_named(self):
        with pytest.raises(ConfigError, match="n_agentz"):
            build_run_config({"sim": {"n_agentz": 3}})

    def test_invalid_value_reported_with_section(self):
        with pytest.raises(ConfigError, match="tdm"):
            build_run_config({"tdm": {"tau": -1.0}})

    def test_override_sets_nested_key(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("sim:\n  n_agents: 2\n")
        cfg = load_run_config(path, ["sim.n_agents=9", "tdm.lambda_max=4.5"])
        assert cfg.sim.n_agents == 9
        assert cfg.tdm.lambda_max == 4.5

    def test_bad_override_rejected(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("{}")
        with pytest.raises(ConfigError):
            load_run_config(path, ["no_equals_sign"])


class TestCliPipeline:
    def test_full_micro_pipeline(self, micro_cfg, capsys):
        cfg_path, traj, tmp = micro_cfg

        assert main(["simulate", str(cfg_path), "--out", str(traj)]) == 0
        assert traj.exists()
        dataset = load_trajectories(traj)
        assert len(dataset) > 0

        run_dir = tmp / "train-run"
        assert main(["train", str(cfg_path), "--out-dir", str(run_dir)]) == 0
        ckpt = run_dir / "checkpoint.cdck"
        assert ckpt.exists()
        loss_lines = (run_dir / "loss.csv").read_text().strip().splitlines()
        assert len(loss_lines) == 3  # header + one row per epoch

        eval_dir = tmp / "eval-run"
        assert main(["eval", str(cfg_path), "--checkpoint", str(ckpt),
                     "--out-dir", str(eval_dir)]) == 0
        metrics = (eval_dir / "metrics.csv").read_text().strip().splitlines()
        assert metrics[0] == "ad_js,fd_js,n_windows"
        ad, fd, _n = metrics[1].split(",")
        assert len(ad.split(".")[1]) == 6 and len(fd.split(".")[1]) == 6
        pgms = sorted(eval_dir.glob("pred_t*.pgm"))
        assert len(pgms) == 12

        corrupted = tmp / "corrupted.txt"
        assert main(["corrupt", str(cfg_path), "--traj", str(traj), "--out",
                     str(corrupted), "--miss-ratio", "0.5"]) == 0
        assert len(load_trajectories(corrupted)) < len(dataset)

    def test_simulate_same_seed_byte_identical(self, micro_cfg):
        cfg_path, _traj, tmp = micro_cfg
        a, b = tmp / "a.txt", tmp / "b.txt"
        assert main(["simulate", str(cfg_path), "--out", str(a)]) == 0
        assert main(["simulate", str(cfg_path), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_miss_ratio_zero_equals_omitting_flag(self, micro_cfg):
        cfg_path, traj, tmp = micro_cfg
        main(["simulate", str(cfg_path), "--out", str(traj)])
        run_dir = tmp / "t"
        main(["train", str(cfg_path), "--out-dir", str(run_dir)])
        ckpt = run_dir / "checkpoint.cdck"
        d0, d1 = tmp / "e0", tmp / "e1"
        assert main(["eval", str(cfg_path), "--checkpoint", str(ckpt),
                     "--out-dir", str(d0)]) == 0
        assert main(["eval", str(cfg_path), "--checkpoint", str(ckpt),
                     "--miss-ratio", "0", "--out-dir", str(d1)]) == 0
        assert (d0 / "metrics.csv").read_text() == (d1 / "metrics.csv").read_text()

    def test_invalid_config_key_exits_2(self, micro_cfg, capsys):
        cfg_path, _traj, _tmp = micro_cfg
        code = main(["simulate", str(cfg_path), "--set", "sim.bogus_knob=1"])
        assert code == 2
        assert "bogus_knob" in capsys.readouterr().err

    def test_missing_checkpoint_exits_3(self, micro_cfg):
        cfg_path, _traj, tmp = micro_cfg
        assert main(["eval", str(cfg_path), "--checkpoint", str(tmp / "nope.cdck")]) == 3

    def test_rasterize_writes_cdmp_and_pgms(self, micro_cfg):
        cfg_path, traj, tmp = micro_cfg
        main(["simulate", str(cfg_path), "--out", str(traj)])
        out = tmp / "win.cdmp"
        pgm_dir = tmp / "pgms"
        assert main(["rasterize", str(cfg_path), "--traj", str(traj), "--out", str(out),
                     "--pgm-dir", str(pgm_dir)]) == 0
        seq = read_cdmp(out)
        assert seq.shape == (20, 16, 16)
        assert 0.0 <= seq.min() and seq.max() <= 1.0
        assert len(list(pgm_dir.glob("*.pgm"))) == 20

    def test_mask_viz_emits_three_sidecars(self, micro_cfg):
        cfg_path, traj, tmp = micro_cfg
        main(["simulate", str(cfg_path), "--out", str(traj)])
        out_dir = tmp / "masks"
        lam = 4.0
        assert main(["mask-viz", str(cfg_path), "--out-dir", str(out_dir),
                     "--lam", str(lam)]) == 0
        files = {p.name for p in out_dir.glob("mask_*.cdmp")}
        assert files == {"mask_future_prediction.cdmp", "mask_past_prediction.cdmp",
                         "mask_interpolation.cdmp"}
        future = read_cdmp(out_dir / "mask_future_prediction.cdmp")
        assert future.shape == (20, 16, 16)
        assert (future[8:] == 1.0).all()  # frame-masked future slices
        # Observation slices: masked pixel fraction equals floor(gamma*N_s)/N_s.
        n_s = 4
        for r in range(2):
            gamma = tm_ratio(r + 1, 2, lam, MaskTask.FUTURE_PREDICTION)
            expected = math.floor(gamma * n_s) / n_s
            got = future[r * 4:(r + 1) * 4].mean()
            assert got == pytest.approx(expected, abs=1e-12)

    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for cmd in ("simulate", "rasterize", "train", "eval", "corrupt", "ablate-tm",
                    "ablate-tasks", "mask-viz"):
            assert cmd in out

    def test_ablate_tasks_micro(self, micro_cfg, capsys):
        cfg_path, traj, tmp = micro_cfg
        main(["simulate", str(cfg_path), "--out", str(traj)])
        out_dir = tmp / "abl"
        code = main(["ablate-tasks", str(cfg_path), "--out-dir", str(out_dir),
                     "--set", "train.epochs=1", "--set", "sim.frames=60"])
        assert code == 0
        table = (out_dir / "results.csv").read_text().strip().splitlines()
        assert len(table) == 5
        out = capsys.readouterr().out
        assert "0.068" in out and "0.080" in out  # full-scale reference annotations
