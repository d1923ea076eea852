"""Scratch experiment for acceptance gates 7/8 calibration (not part of the package)."""
import time

import numpy as np

from crowdcast.evaluation import EvalProtocol, evaluate, evaluate_persistence
from crowdcast.masking import TDMConfig
from crowdcast.model import ModelConfig
from crowdcast.simdata import SimConfig, simulate_crowd, window_split
from crowdcast.tokenizer import CubeGrid
from crowdcast.training import AugmentPolicy, TrainConfig, save_checkpoint, train

W = H = 40
SIGMA = 3.0

def sim(frames, seed):
    return simulate_crowd(SimConfig(width=W, height=H, n_agents=6, frames=frames,
                                    speed_mean=1.5, speed_std=0.3, turn_std=0.03,
                                    spawn_rate=0.0, despawn=False, seed=seed))

t0 = time.time()
train_ds = sim(1100, seed=101)
test_ds = sim(220, seed=202)
train_windows = window_split(train_ds, 8, 12, stride=2)
seqs = [w.rasterize(W, H, SIGMA).astype(np.float32) for w in train_windows]
print(f"train windows: {len(seqs)}  ({time.time()-t0:.0f}s)", flush=True)

proto = EvalProtocol(t_obs=8, t_pred=12, sigma=SIGMA, stride=2, seed=0)
pers = evaluate_persistence(test_ds, proto, W, H)
print(f"persistence: ad={pers.aggregate.ad_js:.5f} fd={pers.aggregate.fd_js:.5f} "
      f"windows={pers.n_windows}", flush=True)

model_cfg = ModelConfig()
train_cfg = TrainConfig(absolute_lr=1.5e-3, epochs=60, warmup_epochs=5, batch_size=32, seed=7)
policy = AugmentPolicy()

for name, tdm in [("A-full", TDMConfig()),
                  ("B-frame-only", TDMConfig(lambda_max=0.0, task_weights=(1.0, 0.0, 0.0)))]:
    t1 = time.time()
    state, curve = train(seqs, model_cfg, train_cfg, tdm, CubeGrid(), 8, 12, policy=policy)
    print(f"{name}: trained {time.time()-t1:.0f}s  loss[0]={curve[0].mean_loss:.5f} "
          f"loss[-1]={curve[-1].mean_loss:.5f}", flush=True)
    save_checkpoint(f"/tmp/gate_{name}.cdck", state)
    clean = evaluate(state, test_ds, proto)
    import dataclasses
    p03 = evaluate(state, test_ds, dataclasses.replace(proto, miss_ratio=0.3))
    rel = (p03.aggregate.ad_js - clean.aggregate.ad_js) / clean.aggregate.ad_js
    print(f"{name}: clean ad={clean.aggregate.ad_js:.5f} fd={clean.aggregate.fd_js:.5f} | "
          f"p0.3 ad={p03.aggregate.ad_js:.5f} rel_increase={rel:.4f}", flush=True)

print(f"total {time.time()-t0:.0f}s")
