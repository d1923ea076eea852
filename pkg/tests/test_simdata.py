import math

import numpy as np
import pytest

from crowdcast.errors import DuplicateRecordError, ParameterError, TrajectoryParseError
from crowdcast.simdata import (CorruptionSpec, SimConfig, TrajectoryDataset,
                               corrupt_missdetect, load_trajectories, save_trajectories,
                               simulate_crowd, window_split)


def make_dataset(records):
    fr, ag, xs, ys = zip(*records)
    return TrajectoryDataset(np.array(fr), np.array(ag), np.array(xs), np.array(ys))


class TestSimulateCrowd:
    def test_noiseless_agents_move_in_straight_lines(self):
        cfg = SimConfig(width=100, height=100, n_agents=3, frames=30, speed_mean=1.0,
                        speed_std=0.0, turn_std=0.0, spawn_rate=0.0, despawn=True, seed=4)
        ds = simulate_crowd(cfg)
        for aid in np.unique(ds.agent):
            sel = ds.agent == aid
            frames = ds.frame[sel]
            xs, ys = ds.x[sel], ds.y[sel]
            assert np.array_equal(frames, np.arange(frames.min(), frames.max() + 1))
            if len(xs) >= 3:
                # Constant displacement per frame until the agent exits.
                np.testing.assert_allclose(np.diff(xs), xs[1] - xs[0], atol=1e-9)
                np.testing.assert_allclose(np.diff(ys), ys[1] - ys[0], atol=1e-9)

    def test_no_agents_no_spawns_is_empty(self):
        ds = simulate_crowd(SimConfig(n_agents=0, spawn_rate=0.0, frames=10, seed=0))
        assert len(ds) == 0

    def test_seed_determinism(self):
        cfg = SimConfig(n_agents=5, frames=50, spawn_rate=0.3, turn_std=0.1, seed=9)
        a, b = simulate_crowd(cfg), simulate_crowd(cfg)
        np.testing.assert_array_equal(a.frame, b.frame)
        np.testing.assert_array_equal(a.agent, b.agent)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.y, b.y)

    def test_positions_always_inside_scene(self):
        for despawn in (False, True):
            cfg = SimConfig(width=24, height=32, n_agents=12, frames=200, speed_mean=2.5,
                            speed_std=1.0, turn_std=0.4, spawn_rate=0.5,
                            despawn=despawn, seed=13)
            ds = simulate_crowd(cfg)
            assert (ds.x >= 0).all() and (ds.x < 24).all()
            assert (ds.y >= 0).all() and (ds.y < 32).all()

    def test_unique_records(self):
        ds = simulate_crowd(SimConfig(n_agents=6, frames=40, spawn_rate=0.2, seed=3))
        ds.check_unique()


class TestTrajectoryIO:
    def test_roundtrip_exact(self, rng, tmp_path):
        n = 200
        ds = TrajectoryDataset(rng.integers(0, 50, n), rng.integers(0, 20, n) * 50
                               + np.arange(n),  # unique (frame, agent)
                               rng.random(n) * 80, rng.random(n) * 80)
        path = tmp_path / "t.txt"
        save_trajectories(ds, path)
        back = load_trajectories(path)
        expect = ds.sorted()
        np.testing.assert_array_equal(back.frame, expect.frame)
        np.testing.assert_array_equal(back.agent, expect.agent)
        np.testing.assert_array_equal(back.x, expect.x)
        np.testing.assert_array_equal(back.y, expect.y)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("# only a comment\n\n")
        assert len(load_trajectories(path)) == 0

    def test_single_line_example(self, tmp_path):
        path = tmp_path / "one.txt"
        path.write_text("7,3,40.5,12.0\n")
        ds = load_trajectories(path)
        assert (ds.frame[0], ds.agent[0], ds.x[0], ds.y[0]) == (7, 3, 40.5, 12.0)

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1,1,2.0,3.0\nnot,a,record\n")
        with pytest.raises(TrajectoryParseError, match=":2"):
            load_trajectories(path)

    def test_duplicate_record_rejected(self, tmp_path):
        path = tmp_path / "dup.txt"
        path.write_text("1,1,2.0,3.0\n1,1,4.0,5.0\n")
        with pytest.raises(DuplicateRecordError):
            load_trajectories(path)

    def test_save_sorts_and_writes_17_digits(self, tmp_path):
        x = 1.0 / 3.0
        ds = make_dataset([(2, 1, x, 0.0), (1, 9, 1.0, 2.0), (1, 2, 3.0, 4.0)])
        path = tmp_path / "s.txt"
        save_trajectories(ds, path)
        lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
        assert lines[0].startswith("1,2,") and lines[1].startswith("1,9,")
        assert f"{x:.17g}" in lines[2]


class TestWindowSplit:
    def test_exactly_one_window(self):
        ds = make_dataset([(f, 0, 1.0, 1.0) for f in range(20)])
        wins = window_split(ds, 8, 12, stride=20)
        assert len(wins) == 1
        assert wins[0].start == 0 and wins[0].length == 20

    def test_stride_ten_over_forty_frames(self):
        ds = make_dataset([(f, 0, 1.0, 1.0) for f in range(40)])
        wins = window_split(ds, 8, 12, stride=10)
        assert [w.start for w in wins] == [0, 10, 20]

    def test_partial_presence_agent_retained(self):
        records = [(f, 0, 1.0, 1.0) for f in range(20)] + \
                  [(f, 7, 5.0, 5.0) for f in range(8)]  # agent 7 vanishes at frame 8
        wins = window_split(make_dataset(records), 8, 12, stride=20)
        w = wins[0]
        assert 7 in w.traj.agent
        assert len(w.frame_positions()[0]) == 2
        assert len(w.frame_positions()[10]) == 1

    def test_short_dataset_yields_empty_list(self):
        ds = make_dataset([(f, 0, 1.0, 1.0) for f in range(10)])
        assert window_split(ds, 8, 12, stride=1) == []

    def test_bad_horizons_rejected(self):
        ds = make_dataset([(0, 0, 1.0, 1.0)])
        with pytest.raises(ParameterError):
            window_split(ds, 0, 12, stride=1)


class TestCorruptMissdetect:
    def scene(self):
        records = [(f, a, float(a), float(f)) for f in range(20) for a in range(10)]
        return make_dataset(records).sorted()

    def test_p_zero_is_identity(self):
        ds = self.scene()
        out = corrupt_missdetect(ds, CorruptionSpec(0.0, seed=1), range(0, 8))
        np.testing.assert_array_equal(out.frame, ds.frame)
        np.testing.assert_array_equal(out.x, ds.x)

    def test_p_one_removes_all_observation_records(self):
        ds = self.scene()
        out = corrupt_missdetect(ds, CorruptionSpec(1.0, seed=1), range(0, 8))
        assert not np.isin(out.frame, range(8)).any()
        assert np.isin(ds.frame, range(8, 20)).sum() == len(out)

    def test_future_records_untouched_and_no_mutation(self):
        ds = self.scene()
        out = corrupt_missdetect(ds, CorruptionSpec(0.6, seed=2), range(0, 8))
        future_in = {(f, a, x, y) for f, a, x, y in zip(ds.frame, ds.agent, ds.x, ds.y)
                     if f >= 8}
        future_out = {(f, a, x, y) for f, a, x, y in zip(out.frame, out.agent, out.x, out.y)
                      if f >= 8}
        assert future_in == future_out
        # Survivors are a subset with identical coordinates.
        all_in = {(f, a): (x, y) for f, a, x, y in zip(ds.frame, ds.agent, ds.x, ds.y)}
        for f, a, x, y in zip(out.frame, out.agent, out.x, out.y):
            assert all_in[(f, a)] == (x, y)
        assert len(out) <= len(ds)

    def test_binomial_concentration(self):
        ds = self.scene()
        p = 0.3
        scope = 8 * 10  # records in observation frames
        removed = []
        for seed in range(40):
            out = corrupt_missdetect(ds, CorruptionSpec(p, seed=seed), range(0, 8))
            removed.append(len(ds) - len(out))
        removed = np.asarray(removed)
        bound = 4.0 * math.sqrt(scope * p * (1 - p))
        assert np.all(np.abs(removed - p * scope) <= bound)

    def test_whole_track_mode_drops_agents_entirely(self):
        ds = self.scene()
        out = corrupt_missdetect(ds, CorruptionSpec(0.5, seed=3, whole_track=True),
                                 range(0, 8))
        obs = out.frame < 8
        for aid in range(10):
            n = int((out.agent[obs] == aid).sum())
            assert n in (0, 8)  # all observation records kept or all dropped

    def test_determinism(self):
        ds = self.scene()
        a = corrupt_missdetect(ds, CorruptionSpec(0.4, seed=5), range(0, 8))
        b = corrupt_missdetect(ds, CorruptionSpec(0.4, seed=5), range(0, 8))
        np.testing.assert_array_equal(a.frame, b.frame)
        np.testing.assert_array_equal(a.agent, b.agent)
