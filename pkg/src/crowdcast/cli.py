"""Command-line entry point.

Subcommands: simulate, rasterize, train, eval, corrupt, ablate-tm,
ablate-tasks, mask-viz. Every command takes a YAML config plus optional
`--set key.path=value` overrides; outputs land in a fresh timestamped
directory under output_dir unless an explicit path is given. Exit codes:
0 success, 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np
import yaml

from . import evaluation, formats, masking, simdata, tokenizer, training
from .config import RunConfig, load_run_config, make_run_dir
from .errors import ConfigError, CrowdcastError
from .evaluation import (EvalProtocol, TASKS_REFERENCE_SDD, TM_REFERENCE_SDD,
                         ablate_multitask, ablate_tm_functions, evaluate,
                         format_results_table, robustness_sweep, write_results_csv)
from .masking import MaskTask, build_mask_plan, sample_lambda
from .simdata import (CorruptionSpec, corrupt_missdetect, load_trajectories,
                      save_trajectories, simulate_crowd, window_split)
from .tokenizer import accumulated_density
from .training import load_checkpoint, save_checkpoint, train, write_loss_csv


def _dataset_windows(cfg: RunConfig, path) -> tuple[list, list[np.ndarray]]:
    """Load trajectories, split into windows and rasterize them."""
    dataset = load_trajectories(path)
    proto = cfg.eval
    stride = cfg.data.stride or proto.effective_stride()
    windows = window_split(dataset, proto.t_obs, proto.t_pred, stride)
    seqs = [w.rasterize(cfg.sim.width, cfg.sim.height, proto.sigma).astype(np.float32)
            for w in windows]
    return windows, seqs


def _require_traj(cfg: RunConfig, arg_value, field: str) -> str:
    path = arg_value or getattr(cfg.data, field)
    if not path:
        raise ConfigError(f"no trajectory file: pass --traj or set data.{field}")
    return path


def _echo_config(cfg: RunConfig, path: Path) -> None:
    doc = dataclasses.asdict(cfg)
    doc["tdm"]["task_weights"] = list(cfg.tdm.task_weights)
    doc["augment"]["scale_range"] = list(cfg.augment.scale_range)
    path.write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")


def cmd_simulate(cfg: RunConfig, args) -> int:
    dataset = simulate_crowd(cfg.sim)
    out = args.out
    if out is None:
        out = make_run_dir(cfg.output_dir, "simulate") / "trajectories.txt"
    save_trajectories(dataset, out)
    print(f"simulated {len(dataset)} records "
          f"({cfg.sim.n_agents} initial agents, {cfg.sim.frames} frames) -> {out}")
    return 0


def cmd_rasterize(cfg: RunConfig, args) -> int:
    path = _require_traj(cfg, args.traj, "train_path")
    dataset = load_trajectories(path)
    lo, hi = dataset.frame_span()
    start = args.start if args.start is not None else lo
    n_frames = args.frames or (cfg.eval.t_obs + cfg.eval.t_pred)
    if start + n_frames - 1 > hi:
        raise ConfigError(f"window [{start}, {start + n_frames}) exceeds frame span "
                          f"[{lo}, {hi}]")
    positions = [dataset.positions_at(f) for f in range(start, start + n_frames)]
    seq = simdata.rasterize_sequence(positions, cfg.sim.width, cfg.sim.height,
                                     cfg.eval.sigma)
    out = args.out
    if out is None:
        out = make_run_dir(cfg.output_dir, "rasterize") / "density.cdmp"
    formats.write_cdmp(out, seq)
    if args.pgm_dir:
        pgm_dir = Path(args.pgm_dir)
        pgm_dir.mkdir(parents=True, exist_ok=True)
        for t in range(seq.shape[0]):
            formats.write_pgm(pgm_dir / f"frame_{t:03d}.pgm", seq[t])
    print(f"rasterized {n_frames} frames from {path} -> {out}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    path = _require_traj(cfg, args.traj, "train_path")
    _windows, seqs = _dataset_windows(cfg, path)
    if not seqs:
        raise ConfigError(f"{path}: no full windows of "
                          f"{cfg.eval.t_obs + cfg.eval.t_pred} frames")
    run_dir = Path(args.out_dir) if args.out_dir else make_run_dir(cfg.output_dir, "train")
    run_dir.mkdir(parents=True, exist_ok=True)

    initial = moments = None
    if args.resume:
        initial, moments, _echo = load_checkpoint(args.resume)
        print(f"resuming from {args.resume} at step {initial.step}")

    state, curve = train(seqs, cfg.model, cfg.train, cfg.tdm, cfg.grid,
                         cfg.eval.t_obs, cfg.eval.t_pred, policy=cfg.augment,
                         initial=initial, initial_moments=moments,
                         log_every=args.log_every)
    optimizer = training.make_optimizer(state.module, cfg.train)
    ckpt = run_dir / "checkpoint.cdck"
    save_checkpoint(ckpt, state, optimizer=None,
                    extra_config={"train": dataclasses.asdict(cfg.train),
                                  "sigma": cfg.eval.sigma})
    write_loss_csv(run_dir / "loss.csv", curve)
    _echo_config(cfg, run_dir / "resolved_config.yaml")
    del optimizer
    final = curve[-1].mean_loss if curve else float("nan")
    print(f"trained {len(seqs)} windows for {len(curve)} epochs "
          f"(step {state.step}); final loss {final:.6f}")
    print(f"checkpoint -> {ckpt}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    state, _moments, _echo = load_checkpoint(args.checkpoint)
    path = _require_traj(cfg, args.traj, "eval_path")
    dataset = load_trajectories(path)
    protocol = cfg.eval
    run_dir = Path(args.out_dir) if args.out_dir else make_run_dir(cfg.output_dir, "eval")
    run_dir.mkdir(parents=True, exist_ok=True)

    if args.sweep:
        ratios = [float(v) for v in args.sweep.split(",")]
        rows = robustness_sweep(state, dataset, ratios, protocol, out_dir=run_dir)
        for r in rows:
            print(f"p={r['miss_ratio']:.2f}  ad_js {r['ad_js']:.6f}  fd_js {r['fd_js']:.6f}")
        print(f"sweep -> {run_dir}/robustness.csv")
        return 0

    if args.miss_ratio is not None:
        protocol = dataclasses.replace(protocol, miss_ratio=args.miss_ratio)
    result = evaluate(state, dataset, protocol)
    with open(run_dir / "metrics.csv", "w", encoding="utf-8") as f:
        f.write("ad_js,fd_js,n_windows\n")
        f.write(f"{result.aggregate.ad_js:.6f},{result.aggregate.fd_js:.6f},"
                f"{result.n_windows}\n")

    windows = window_split(dataset, protocol.t_obs, protocol.t_pred,
                           cfg.data.stride or protocol.effective_stride())
    if windows:
        from .model import predict_future

        win = windows[0]
        obs = win.rasterize_obs(state.layout.w, state.layout.h, protocol.sigma)
        pred = predict_future(obs, state)
        gt = win.rasterize_future(state.layout.w, state.layout.h, protocol.sigma)
        for t in range(pred.shape[0]):
            formats.write_pgm(run_dir / f"pred_t{t:02d}.pgm", pred[t])
            formats.write_pgm(run_dir / f"gt_t{t:02d}.pgm", gt[t])
    print(f"ad_js {result.aggregate.ad_js:.6f}  fd_js {result.aggregate.fd_js:.6f}  "
          f"({result.n_windows} windows) -> {run_dir}")
    return 0


def cmd_corrupt(cfg: RunConfig, args) -> int:
    path = _require_traj(cfg, args.traj, "eval_path")
    dataset = load_trajectories(path)
    proto = cfg.eval
    windows = window_split(dataset, proto.t_obs, proto.t_pred, proto.effective_stride())
    obs_frames = [f for w in windows for f in w.obs_frame_ids()]
    spec = CorruptionSpec(miss_ratio=args.miss_ratio, seed=cfg.seed,
                          whole_track=args.whole_track)
    corrupted = corrupt_missdetect(dataset, spec, obs_frames)
    out = args.out
    if out is None:
        out = make_run_dir(cfg.output_dir, "corrupt") / "trajectories.txt"
    save_trajectories(corrupted, out)
    print(f"kept {len(corrupted)} of {len(dataset)} records at p={args.miss_ratio} -> {out}")
    return 0


def _run_ablation(cfg: RunConfig, args, which: str) -> int:
    train_path = _require_traj(cfg, args.traj, "train_path")
    eval_path = cfg.data.eval_path or train_path
    _w, train_seqs = _dataset_windows(cfg, train_path)
    if not train_seqs:
        raise ConfigError(f"{train_path}: no training windows")
    eval_dataset = load_trajectories(eval_path)
    run_dir = Path(args.out_dir) if args.out_dir else make_run_dir(cfg.output_dir, which)
    run_dir.mkdir(parents=True, exist_ok=True)

    if which == "ablate-tm":
        cells = [(fn, cfg.ablation.dm_enabled) for fn in cfg.ablation.tm_functions]
        results = ablate_tm_functions(train_seqs, eval_dataset, cfg.eval, cfg.model,
                                      cfg.train, cfg.tdm, cfg.grid, cells=cells,
                                      policy=cfg.augment)
        reference = TM_REFERENCE_SDD
    else:
        results = ablate_multitask(train_seqs, eval_dataset, cfg.eval, cfg.model,
                                   cfg.train, cfg.tdm, cfg.grid, policy=cfg.augment)
        reference = TASKS_REFERENCE_SDD
    write_results_csv(run_dir / "results.csv", results)
    print(format_results_table(results, reference))
    print(f"table -> {run_dir}/results.csv")
    return 0


def cmd_mask_viz(cfg: RunConfig, args) -> int:
    """Emit one CDMP mask sidecar per task for a sampled lambda."""
    if cfg.data.train_path:
        dataset = load_trajectories(cfg.data.train_path)
    else:
        dataset = simulate_crowd(cfg.sim)
    proto = cfg.eval
    windows = window_split(dataset, proto.t_obs, proto.t_pred, proto.effective_stride())
    if not windows:
        raise ConfigError("dataset too short for one mask-viz window")
    seq = windows[0].rasterize(cfg.sim.width, cfg.sim.height, proto.sigma)
    layout = cfg.grid.layout(*seq.shape)
    table = accumulated_density(seq, cfg.grid)
    obs_slices = proto.t_obs // cfg.grid.t_c

    run_dir = Path(args.out_dir) if args.out_dir else make_run_dir(cfg.output_dir, "mask-viz")
    run_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    lam = args.lam if args.lam is not None else sample_lambda(rng, cfg.tdm.lambda_max)
    for task in MaskTask:
        plan = build_mask_plan(task, table, cfg.tdm, lam, obs_slices, rng)
        sidecar = masking.mask_to_sequence(plan, layout)
        out = run_dir / f"mask_{task.value}.cdmp"
        formats.write_cdmp(out, sidecar)
        per_slice = plan.mask.sum(axis=1)
        print(f"{task.value}: lambda={plan.lambda_used:.3f} masked/slice "
              f"{per_slice.tolist()} -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdcast",
        description="Masked crowd-density completion: simulate, train, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="YAML run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY.PATH=VALUE", help="override one config key")
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "generate synthetic crowd trajectories")
    p.add_argument("--out", help="trajectory file to write")

    p = add("rasterize", cmd_rasterize, "rasterize a trajectory window to CDMP")
    p.add_argument("--traj", help="trajectory file (default: data.train_path)")
    p.add_argument("--out", help="CDMP file to write")
    p.add_argument("--start", type=int, help="first frame of the window")
    p.add_argument("--frames", type=int, help="window length (default t_obs+t_pred)")
    p.add_argument("--pgm-dir", help="also dump per-frame PGM heatmaps here")

    p = add("train", cmd_train, "train the masked autoencoder")
    p.add_argument("--traj", help="trajectory file (default: data.train_path)")
    p.add_argument("--out-dir", help="run directory (default: timestamped)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log-every", type=int, default=None, metavar="N",
                   help="print progress every N epochs")

    p = add("eval", cmd_eval, "evaluate a checkpoint (metrics CSV + heatmaps)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--traj", help="trajectory file (default: data.eval_path)")
    p.add_argument("--miss-ratio", type=float, default=None,
                   help="corrupt observation inputs at this ratio")
    p.add_argument("--sweep", help="comma-separated miss ratios; runs the robustness sweep")
    p.add_argument("--out-dir", help="run directory (default: timestamped)")

    p = add("corrupt", cmd_corrupt, "inject miss-detections into a trajectory file")
    p.add_argument("--traj", help="trajectory file (default: data.eval_path)")
    p.add_argument("--out", help="corrupted trajectory file to write")
    p.add_argument("--miss-ratio", type=float, required=True)
    p.add_argument("--whole-track", action="store_true",
                   help="drop whole tracks instead of single records")

    p = add("ablate-tm", lambda c, a: _run_ablation(c, a, "ablate-tm"),
            "train/evaluate one model per TM ratio function")
    p.add_argument("--traj", help="training trajectory file (default: data.train_path)")
    p.add_argument("--out-dir", help="run directory (default: timestamped)")

    p = add("ablate-tasks", lambda c, a: _run_ablation(c, a, "ablate-tasks"),
            "train/evaluate one model per task combination")
    p.add_argument("--traj", help="training trajectory file (default: data.train_path)")
    p.add_argument("--out-dir", help="run directory (default: timestamped)")

    p = add("mask-viz", cmd_mask_viz, "emit CDMP mask sidecars, one per task")
    p.add_argument("--out-dir", help="run directory (default: timestamped)")
    p.add_argument("--lam", type=float, default=None,
                   help="fix lambda instead of sampling it")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_run_config(args.config, args.overrides)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CrowdcastError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
