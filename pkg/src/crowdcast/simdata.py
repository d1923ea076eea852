"""Synthetic crowd trajectories: simulation, flat-file IO, windowing and
miss-detection injection.

The trajectory file format is UTF-8 text, one `frame_id,agent_id,x,y` record
per line, `#` comments permitted, coordinates in pixels. Records are unique
per (frame_id, agent_id) and positions always lie inside [0, W) x [0, H).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .density import rasterize_sequence
from .errors import DuplicateRecordError, ParameterError, TrajectoryParseError

DEFAULT_FRAME_INTERVAL = 0.4  # seconds per frame


@dataclass
class TrajectoryDataset:
    """Flat per-frame pedestrian records as parallel arrays."""

    frame: np.ndarray
    agent: np.ndarray
    x: np.ndarray
    y: np.ndarray
    frame_interval: float = DEFAULT_FRAME_INTERVAL

    def __post_init__(self):
        self.frame = np.asarray(self.frame, dtype=np.int64)
        self.agent = np.asarray(self.agent, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        n = len(self.frame)
        if not (len(self.agent) == len(self.x) == len(self.y) == n):
            raise ParameterError("trajectory record arrays must share one length")
        self._frame_index = None

    def __len__(self) -> int:
        return len(self.frame)

    @classmethod
    def empty(cls, frame_interval: float = DEFAULT_FRAME_INTERVAL) -> "TrajectoryDataset":
        z = np.zeros(0)
        return cls(frame=z, agent=z, x=z, y=z, frame_interval=frame_interval)

    def sorted(self) -> "TrajectoryDataset":
        """Canonical (frame_id, agent_id) ordering."""
        order = np.lexsort((self.agent, self.frame))
        return TrajectoryDataset(self.frame[order], self.agent[order],
                                 self.x[order], self.y[order], self.frame_interval)

    def check_unique(self) -> None:
        keys = set()
        for f, a in zip(self.frame.tolist(), self.agent.tolist()):
            if (f, a) in keys:
                raise DuplicateRecordError(f"duplicate record for frame {f}, agent {a}")
            keys.add((f, a))

    def frame_span(self) -> tuple[int, int]:
        """(min frame, max frame) inclusive; raises on an empty dataset."""
        if len(self) == 0:
            raise ParameterError("dataset has no records")
        return int(self.frame.min()), int(self.frame.max())

    def _index(self):
        if self._frame_index is None:
            idx = {}
            for i, f in enumerate(self.frame.tolist()):
                idx.setdefault(f, []).append(i)
            self._frame_index = {f: np.asarray(v, dtype=np.int64) for f, v in idx.items()}
        return self._frame_index

    def positions_at(self, frame_id: int) -> np.ndarray:
        """(K, 2) array of (x, y) for all agents recorded at frame_id."""
        rows = self._index().get(int(frame_id))
        if rows is None:
            return np.zeros((0, 2))
        return np.stack([self.x[rows], self.y[rows]], axis=1)

    def subset_frames(self, lo: int, hi: int) -> "TrajectoryDataset":
        """Records with lo <= frame_id < hi, in the original order."""
        keep = (self.frame >= lo) & (self.frame < hi)
        return TrajectoryDataset(self.frame[keep], self.agent[keep],
                                 self.x[keep], self.y[keep], self.frame_interval)


@dataclass
class SimConfig:
    """Noisy constant-velocity crowd simulator parameters."""

    width: int = 80
    height: int = 80
    n_agents: int = 8
    frames: int = 200
    speed_mean: float = 1.5   # px per frame
    speed_std: float = 0.3
    turn_std: float = 0.05    # radians per frame
    spawn_rate: float = 0.0   # expected new agents per frame (Poisson)
    despawn: bool = False     # True: agents exit at boundaries; False: reflect
    seed: int = 0
    frame_interval: float = DEFAULT_FRAME_INTERVAL

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ParameterError("scene dimensions must be positive")
        if self.n_agents < 0 or self.frames <= 0:
            raise ParameterError("agent and frame counts must be non-negative / positive")
        if self.speed_mean < 0 or self.speed_std < 0 or self.turn_std < 0 or self.spawn_rate < 0:
            raise ParameterError("speeds, turn_std and spawn_rate must be >= 0")


@dataclass
class CorruptionSpec:
    """Synthetic miss-detection: each in-scope record dropped independently.

    Scope is per (agent, frame) within the observation frames by default;
    whole_track=True instead drops all observation records of the sampled
    agents.
    """

    miss_ratio: float
    seed: int = 0
    whole_track: bool = False

    def __post_init__(self):
        if not (0.0 <= self.miss_ratio <= 1.0):
            raise ParameterError(f"miss_ratio must lie in [0, 1], got {self.miss_ratio}")


def simulate_crowd(cfg: SimConfig) -> TrajectoryDataset:
    """Generate noisy constant-velocity agents, seed-deterministic.

    Each agent keeps a fixed speed (drawn once, clipped >= 0) while its
    heading random-walks with turn_std per frame. Agents either reflect off
    the scene boundary or despawn there; new agents spawn at the edges with
    inward headings at spawn_rate per frame. Positions are recorded at every
    frame the agent is inside the scene.
    """
    rng = np.random.default_rng(cfg.seed)
    w, h = float(cfg.width), float(cfg.height)
    # Agents are dicts to keep per-agent state together; order of rng use is
    # fixed by iterating in spawn order.
    agents = []
    next_id = 0

    def new_agent(x, y, heading):
        nonlocal next_id
        speed = max(0.0, rng.normal(cfg.speed_mean, cfg.speed_std)) if cfg.speed_std > 0 \
            else cfg.speed_mean
        a = {"id": next_id, "x": x, "y": y, "heading": heading, "speed": speed}
        next_id += 1
        return a

    for _ in range(cfg.n_agents):
        x = rng.uniform(0.0, w)
        y = rng.uniform(0.0, h)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        agents.append(new_agent(x, y, heading))

    frames_out, agents_out, xs_out, ys_out = [], [], [], []
    eps = 1e-9
    for f in range(cfg.frames):
        if cfg.spawn_rate > 0:
            for _ in range(int(rng.poisson(cfg.spawn_rate))):
                side = int(rng.integers(4))  # 0 left, 1 right, 2 top, 3 bottom
                along = rng.uniform(0.0, 1.0)
                jitter = rng.uniform(-math.pi / 2, math.pi / 2)
                if side == 0:
                    x, y, inward = 0.0, along * (h - eps), 0.0
                elif side == 1:
                    x, y, inward = w - eps, along * (h - eps), math.pi
                elif side == 2:
                    x, y, inward = along * (w - eps), 0.0, math.pi / 2
                else:
                    x, y, inward = along * (w - eps), h - eps, -math.pi / 2
                agents.append(new_agent(x, y, inward + jitter))

        for a in agents:
            frames_out.append(f)
            agents_out.append(a["id"])
            xs_out.append(a["x"])
            ys_out.append(a["y"])

        survivors = []
        for a in agents:
            if cfg.turn_std > 0:
                a["heading"] += rng.normal(0.0, cfg.turn_std)
            x = a["x"] + a["speed"] * math.cos(a["heading"])
            y = a["y"] + a["speed"] * math.sin(a["heading"])
            if cfg.despawn:
                if 0.0 <= x < w and 0.0 <= y < h:
                    a["x"], a["y"] = x, y
                    survivors.append(a)
                continue
            # Reflect off walls; a step never exceeds the scene size, but loop
            # in case a corner bounce needs both axes.
            for _ in range(4):
                if x < 0.0:
                    x = -x
                    a["heading"] = math.pi - a["heading"]
                elif x > w - eps:
                    x = 2.0 * (w - eps) - x
                    a["heading"] = math.pi - a["heading"]
                elif y < 0.0:
                    y = -y
                    a["heading"] = -a["heading"]
                elif y > h - eps:
                    y = 2.0 * (h - eps) - y
                    a["heading"] = -a["heading"]
                else:
                    break
            a["x"] = min(max(x, 0.0), w - eps)
            a["y"] = min(max(y, 0.0), h - eps)
            survivors.append(a)
        agents = survivors

    return TrajectoryDataset(np.asarray(frames_out), np.asarray(agents_out),
                             np.asarray(xs_out), np.asarray(ys_out),
                             frame_interval=cfg.frame_interval).sorted()


def save_trajectories(dataset: TrajectoryDataset, path) -> None:
    """Write records sorted by (frame_id, agent_id), 17 significant digits."""
    ds = dataset.sorted()
    with open(path, "w", encoding="utf-8") as f:
        f.write("# frame_id,agent_id,x,y\n")
        for fr, ag, x, y in zip(ds.frame.tolist(), ds.agent.tolist(),
                                ds.x.tolist(), ds.y.tolist()):
            f.write(f"{fr},{ag},{x:.17g},{y:.17g}\n")


def load_trajectories(path, frame_interval: float = DEFAULT_FRAME_INTERVAL) -> TrajectoryDataset:
    frames, agents, xs, ys = [], [], [], []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise TrajectoryParseError(
                    f"{path}:{lineno}: expected 4 comma-separated fields, got {len(parts)}")
            try:
                fr, ag = int(parts[0]), int(parts[1])
                x, y = float(parts[2]), float(parts[3])
            except ValueError as exc:
                raise TrajectoryParseError(f"{path}:{lineno}: {exc}") from exc
            if (fr, ag) in seen:
                raise DuplicateRecordError(
                    f"{path}:{lineno}: duplicate record for frame {fr}, agent {ag}")
            seen.add((fr, ag))
            frames.append(fr)
            agents.append(ag)
            xs.append(x)
            ys.append(y)
    return TrajectoryDataset(np.asarray(frames), np.asarray(agents),
                             np.asarray(xs), np.asarray(ys),
                             frame_interval=frame_interval)


@dataclass
class Window:
    """One T = t_obs + t_pred frame window of a dataset.

    Holds the records restricted to [start, start + T) with their original
    frame ids. Agents may appear or disappear mid-window; no completeness
    filter is applied.
    """

    traj: TrajectoryDataset
    start: int
    t_obs: int
    t_pred: int

    @property
    def length(self) -> int:
        return self.t_obs + self.t_pred

    def obs_frame_ids(self) -> range:
        return range(self.start, self.start + self.t_obs)

    def pred_frame_ids(self) -> range:
        return range(self.start + self.t_obs, self.start + self.length)

    def frame_positions(self, frames=None, traj: TrajectoryDataset | None = None):
        """Per-frame (K, 2) position arrays, default over the whole window."""
        src = self.traj if traj is None else traj
        ids = range(self.start, self.start + self.length) if frames is None else frames
        return [src.positions_at(f) for f in ids]

    def rasterize(self, width: int, height: int, sigma: float,
                  traj: TrajectoryDataset | None = None) -> np.ndarray:
        return rasterize_sequence(self.frame_positions(traj=traj), width, height, sigma)

    def rasterize_obs(self, width: int, height: int, sigma: float,
                      traj: TrajectoryDataset | None = None) -> np.ndarray:
        return rasterize_sequence(self.frame_positions(self.obs_frame_ids(), traj),
                                  width, height, sigma)

    def rasterize_future(self, width: int, height: int, sigma: float) -> np.ndarray:
        return rasterize_sequence(self.frame_positions(self.pred_frame_ids()),
                                  width, height, sigma)


def window_split(dataset: TrajectoryDataset, t_obs: int, t_pred: int,
                 stride: int) -> list[Window]:
    """Sliding frame-contiguous windows of T = t_obs + t_pred frames.

    Windows start at the dataset's first frame and advance by `stride`. A
    dataset spanning fewer than T frames yields an empty list.
    """
    if t_obs < 1 or t_pred < 1:
        raise ParameterError(f"t_obs and t_pred must be >= 1, got {t_obs}, {t_pred}")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if len(dataset) == 0:
        return []
    lo, hi = dataset.frame_span()
    total = t_obs + t_pred
    windows = []
    start = lo
    while start + total - 1 <= hi:
        windows.append(Window(traj=dataset.subset_frames(start, start + total),
                              start=start, t_obs=t_obs, t_pred=t_pred))
        start += stride
    return windows


def corrupt_missdetect(dataset: TrajectoryDataset, spec: CorruptionSpec,
                       obs_frames) -> TrajectoryDataset:
    """Remove observation-frame records independently with probability p.

    Only records whose frame_id is in `obs_frames` are eligible; future-frame
    records stay untouched so scoring targets remain clean. Surviving records
    keep their exact coordinates. Deterministic given spec.seed.
    """
    rng = np.random.default_rng(spec.seed)
    ds = dataset.sorted()
    obs = np.isin(ds.frame, np.fromiter(obs_frames, dtype=np.int64))
    keep = np.ones(len(ds), dtype=bool)
    if spec.whole_track:
        agents_in_scope = np.unique(ds.agent[obs])
        dropped = agents_in_scope[rng.random(agents_in_scope.size) < spec.miss_ratio]
        keep[obs & np.isin(ds.agent, dropped)] = False
    else:
        u = rng.random(int(obs.sum()))
        drop_scope = u < spec.miss_ratio
        keep[np.flatnonzero(obs)[drop_scope]] = False
    return TrajectoryDataset(ds.frame[keep], ds.agent[keep], ds.x[keep], ds.y[keep],
                             ds.frame_interval)
