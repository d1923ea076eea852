import numpy as np
import pytest

from crowdcast.errors import ParameterError
from crowdcast.tokenizer import CubeGrid, TokenField, accumulated_density, cubify, decubify


def brute_force_table(seq, grid):
    """Triple-loop oracle for per-cube pixel sums."""
    t, h, w = seq.shape
    n_r, bh, bw = t // grid.t_c, h // grid.h_c, w // grid.w_c
    table = np.zeros((n_r, bh * bw))
    for r in range(n_r):
        for i in range(bh):
            for j in range(bw):
                cube = seq[r * grid.t_c:(r + 1) * grid.t_c,
                           i * grid.h_c:(i + 1) * grid.h_c,
                           j * grid.w_c:(j + 1) * grid.w_c]
                table[r, i * bw + j] = cube.sum()
    return table


class TestCubify:
    def test_default_grid_geometry(self, rng):
        seq = rng.random((20, 80, 80))
        tf = cubify(seq, CubeGrid())
        assert tf.values.shape == (5, 100, 256)
        assert tf.layout.n_r == 5 and tf.layout.n_s == 100

    def test_zero_sequence_gives_zero_tokens(self):
        tf = cubify(np.zeros((8, 16, 16)), CubeGrid())
        assert not tf.values.any()

    def test_roundtrip_bit_exact(self, rng):
        for shape in [(8, 16, 16), (20, 80, 80), (4, 8, 24)]:
            seq = rng.random(shape)
            np.testing.assert_array_equal(decubify(cubify(seq, CubeGrid())), seq)

    def test_non_divisible_axis_named(self):
        grid = CubeGrid()
        with pytest.raises(ParameterError, match="time"):
            cubify(np.zeros((7, 16, 16)), grid)
        with pytest.raises(ParameterError, match="height"):
            cubify(np.zeros((8, 15, 16)), grid)
        with pytest.raises(ParameterError, match="width"):
            cubify(np.zeros((8, 16, 15)), grid)

    def test_token_covers_expected_block(self, rng):
        # Token (r, s) must hold frames [r*T_c, (r+1)*T_c) of one spatial block.
        seq = rng.random((8, 16, 24))
        grid = CubeGrid(t_c=4, h_c=8, w_c=8)
        tf = cubify(seq, grid)
        r, bh, bw = 1, 1, 2
        s = bh * tf.layout.blocks_w + bw
        block = seq[4:8, 8:16, 16:24].reshape(-1)
        np.testing.assert_array_equal(tf.values[r, s], block)


class TestDecubify:
    def test_single_token_value_maps_to_single_pixel(self):
        grid = CubeGrid(t_c=2, h_c=4, w_c=4)
        layout = grid.layout(4, 8, 12)
        values = np.zeros((layout.n_r, layout.n_s, layout.token_len))
        # Token (r=1, bh=1, bw=2), value index (dt=1, dy=2, dx=3); the pixel
        # index arithmetic below is the independent oracle.
        r, bh, bw, dt, dy, dx = 1, 1, 2, 1, 2, 3
        s = bh * layout.blocks_w + bw
        values[r, s, dt * 16 + dy * 4 + dx] = 0.7
        seq = decubify(TokenField(values=values, layout=layout))
        assert seq[r * 2 + dt, bh * 4 + dy, bw * 4 + dx] == 0.7
        assert np.count_nonzero(seq) == 1

    def test_constant_tokens_give_constant_sequence(self):
        grid = CubeGrid()
        layout = grid.layout(8, 16, 16)
        values = np.full((layout.n_r, layout.n_s, layout.token_len), 0.25)
        np.testing.assert_array_equal(decubify(TokenField(values, layout)),
                                      np.full((8, 16, 16), 0.25))

    def test_clamp_flag_clips_model_output(self):
        grid = CubeGrid(t_c=1, h_c=2, w_c=2)
        layout = grid.layout(1, 2, 2)
        values = np.array([[[1.5, -0.5, 0.25, 0.75]]])
        seq = decubify(TokenField(values, layout), clamp=True)
        assert seq.min() >= 0.0 and seq.max() <= 1.0

    def test_inconsistent_shape_rejected(self):
        grid = CubeGrid()
        layout = grid.layout(8, 16, 16)  # n_r=2, n_s=4, token_len=256
        with pytest.raises(ParameterError):
            TokenField(values=np.zeros((1, 4, 256)), layout=layout)


class TestAccumulatedDensity:
    def test_constant_one_sequence(self):
        table = accumulated_density(np.ones((20, 80, 80)), CubeGrid())
        np.testing.assert_allclose(table, 256.0)

    def test_zero_sequence(self):
        assert not accumulated_density(np.zeros((8, 16, 16)), CubeGrid()).any()

    def test_matches_brute_force(self, rng):
        grid = CubeGrid(t_c=2, h_c=4, w_c=8)
        seq = rng.random((6, 12, 16))
        np.testing.assert_allclose(accumulated_density(seq, grid),
                                   brute_force_table(seq, grid), rtol=1e-12)

    def test_conservation(self, rng):
        for _ in range(25):
            seq = rng.random((8, 16, 16))
            table = accumulated_density(seq, CubeGrid())
            assert abs(table.sum() - seq.sum()) <= 1e-6 * seq.sum()

    def test_locality_single_pixel_perturbation(self, rng):
        grid = CubeGrid()
        seq = rng.random((8, 16, 16))
        tf0 = cubify(seq, grid)
        t0 = accumulated_density(seq, grid)
        bumped = seq.copy()
        bumped[5, 9, 3] += 0.5
        tf1 = cubify(bumped, grid)
        t1 = accumulated_density(bumped, grid)
        assert (tf0.values != tf1.values).any(axis=2).sum() == 1
        assert (t0 != t1).sum() == 1
