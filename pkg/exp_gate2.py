"""Scratch probe: does the model overtake persistence with more epochs?"""
import time

import numpy as np

from crowdcast.evaluation import EvalProtocol, evaluate, evaluate_persistence
from crowdcast.masking import TDMConfig
from crowdcast.model import ModelConfig
from crowdcast.simdata import SimConfig, simulate_crowd, window_split
from crowdcast.tokenizer import CubeGrid
from crowdcast.training import AugmentPolicy, TrainConfig, train

W = H = 40
SIGMA = 3.0

def sim(frames, seed):
    return simulate_crowd(SimConfig(width=W, height=H, n_agents=6, frames=frames,
                                    speed_mean=1.5, speed_std=0.3, turn_std=0.03,
                                    spawn_rate=0.0, despawn=False, seed=seed))

train_ds = sim(1100, seed=101)
test_ds = sim(220, seed=202)
seqs = [w.rasterize(W, H, SIGMA).astype(np.float32)
        for w in window_split(train_ds, 8, 12, stride=2)]
proto = EvalProtocol(t_obs=8, t_pred=12, sigma=SIGMA, stride=2, seed=0)
pers = evaluate_persistence(test_ds, proto, W, H)
print(f"persistence ad={pers.aggregate.ad_js:.5f} per-step[0,5,11]="
      f"{pers.aggregate.per_step_js[0]:.5f},{pers.aggregate.per_step_js[5]:.5f},"
      f"{pers.aggregate.per_step_js[11]:.5f}", flush=True)

state = None
moments = None
total = 300
tdm = TDMConfig()
t0 = time.time()
for target in (50, 100, 150, 200, 250, 300):
    cfg = TrainConfig(absolute_lr=2e-3, epochs=target, warmup_epochs=8, batch_size=32, seed=7)
    state, curve = train(seqs, ModelConfig(), cfg, tdm, CubeGrid(), 8, 12,
                         policy=AugmentPolicy(), initial=state)
    res = evaluate(state, test_ds, proto)
    ps = res.aggregate.per_step_js
    print(f"epoch {target}: loss={curve[-1].mean_loss:.5f} ad={res.aggregate.ad_js:.5f} "
          f"steps[0,5,11]={ps[0]:.5f},{ps[5]:.5f},{ps[11]:.5f} "
          f"ratio={res.aggregate.ad_js / pers.aggregate.ad_js:.3f} ({time.time()-t0:.0f}s)",
          flush=True)
