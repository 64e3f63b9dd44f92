import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from beamupdate import linalg
from beamupdate._ops import OpCounter
from beamupdate.errors import EmptyResult, RankDeficient, SingularUpdate

from conftest import random_channels, random_pd, rel_fro


def pinv_oracle(h):
    return h @ np.linalg.inv(h.conj().T @ h)


class TestBlockAugment:
    def test_identity_blocks(self):
        out = linalg.block_augment_inverse(np.eye(2), np.zeros(2), np.zeros(2), 1.0)
        np.testing.assert_array_equal(out, np.eye(3))

    def test_two_by_two(self):
        out = linalg.block_augment_inverse(np.array([[1.0]]), [0.5], [0.5], 1.0)
        np.testing.assert_allclose(out, [[4 / 3, -2 / 3], [-2 / 3, 4 / 3]], atol=1e-15)
        np.testing.assert_allclose(out, np.linalg.inv([[1, 0.5], [0.5, 1]]), atol=1e-15)

    def test_random_hermitian_split(self, rng):
        full = random_pd(rng, 5)
        out = linalg.block_augment_inverse(np.linalg.inv(full[:4, :4]), full[:4, 4],
                                           full[4, :4], full[4, 4])
        assert rel_fro(out, np.linalg.inv(full)) <= 1e-10

    def test_matrix_block(self, rng):
        full = random_pd(rng, 7)
        out = linalg.block_augment_inverse(np.linalg.inv(full[:4, :4]), full[:4, 4:],
                                           full[4:, :4], full[4:, 4:])
        assert rel_fro(out, np.linalg.inv(full)) <= 1e-10

    def test_from_empty(self):
        out = linalg.block_augment_inverse(np.zeros((0, 0)), np.zeros(0), np.zeros(0), 4.0)
        np.testing.assert_allclose(out, [[0.25]])

    def test_singular_schur(self):
        # [[1, 1], [1, 1]] is singular
        with pytest.raises(SingularUpdate):
            linalg.block_augment_inverse(np.eye(1), [1.0], [1.0], 1.0)

    def test_singular_threshold_is_relative(self):
        a = 1e-9
        out = linalg.block_augment_inverse(np.array([[1 / a]]), [0.5 * a], [0.5 * a], a)
        np.testing.assert_allclose(out, np.linalg.inv([[a, 0.5 * a], [0.5 * a, a]]), rtol=1e-12)


class TestBlockReduce:
    def test_identity(self):
        np.testing.assert_array_equal(linalg.block_reduce_inverse(np.eye(3), 2), np.eye(2))

    def test_two_by_two(self):
        full_inv = np.linalg.inv([[1, 0.5], [0.5, 1]])
        np.testing.assert_allclose(linalg.block_reduce_inverse(full_inv, 1), [[1.0]], atol=1e-15)

    def test_round_trip_6x6(self, rng):
        full = random_pd(rng, 6)
        a_inv = np.linalg.inv(full[:5, :5])
        aug = linalg.block_augment_inverse(a_inv, full[:5, 5], full[5, :5], full[5, 5])
        assert rel_fro(linalg.block_reduce_inverse(aug, 5), a_inv) <= 1e-10

    def test_matrix_trailing_block(self, rng):
        full = random_pd(rng, 6)
        out = linalg.block_reduce_inverse(np.linalg.inv(full), 3)
        assert rel_fro(out, np.linalg.inv(full[:3, :3])) <= 1e-10

    def test_singular_trailing(self):
        with pytest.raises(SingularUpdate):
            linalg.block_reduce_inverse(np.array([[1.0, 1.0], [1.0, 0.0]]), 1)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 64), seed=st.integers(0, 2 ** 32 - 1))
    def test_round_trip_property(self, n, seed):
        rng = np.random.default_rng(seed)
        full = random_pd(rng, n + 1)
        a_inv = np.linalg.inv(full[:n, :n])
        aug = linalg.block_augment_inverse(a_inv, full[:n, n], full[n, :n], full[n, n])
        assert rel_fro(linalg.block_reduce_inverse(aug, n), a_inv) <= 1e-10


class TestRankOne:
    def test_unit_vector(self):
        out = linalg.rank_one_update_inverse(np.eye(2), np.array([1.0, 0.0]), 1.0)
        np.testing.assert_allclose(out, [[0.5, 0], [0, 1]])

    def test_zero_vector(self, rng):
        a_inv = np.linalg.inv(random_pd(rng, 4))
        np.testing.assert_array_equal(linalg.rank_one_update_inverse(a_inv, np.zeros(4), 3.0), a_inv)

    def test_random_against_direct(self, rng):
        a = random_pd(rng, 8)
        v = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        out = linalg.rank_one_update_inverse(np.linalg.inv(a), v, 0.7)
        assert rel_fro(out, np.linalg.inv(a + 0.7 * np.outer(v, v.conj()))) <= 1e-10

    def test_downdate_undoes_update(self, rng):
        a_inv = np.linalg.inv(random_pd(rng, 6))
        v = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        up = linalg.rank_one_update_inverse(a_inv, v, 2.5)
        assert rel_fro(linalg.rank_one_update_inverse(up, v, -2.5), a_inv) <= 1e-10

    def test_singular_downdate(self):
        # removing all of I's e1 component
        with pytest.raises(SingularUpdate):
            linalg.rank_one_update_inverse(np.eye(2), np.array([1.0, 0.0]), -1.0)


class TestPinvRemove:
    def test_orthogonal_columns_unchanged(self, rng):
        q, _ = np.linalg.qr(random_channels(rng, 6, 4))
        h = q * np.array([1.0, 2.0, 0.5, 3.0])
        g = pinv_oracle(h)
        out = linalg.pinv_remove_column(g, 1)
        np.testing.assert_allclose(out, np.delete(g, 1, axis=1), atol=1e-14)

    def test_random_matches_scratch(self, rng):
        h = random_channels(rng, 6, 4)
        out = linalg.pinv_remove_column(pinv_oracle(h), 2)
        assert rel_fro(out, pinv_oracle(np.delete(h, 2, axis=1))) <= 1e-9

    def test_two_columns(self, rng):
        h = random_channels(rng, 5, 2)
        out = linalg.pinv_remove_column(pinv_oracle(h), 1)
        h1 = h[:, 0]
        np.testing.assert_allclose(out[:, 0], h1 / np.vdot(h1, h1), rtol=1e-12)

    @pytest.mark.parametrize("idx", [0, 1, 3])
    def test_arbitrary_index(self, rng, idx):
        h = random_channels(rng, 8, 4)
        out = linalg.pinv_remove_column(pinv_oracle(h), idx)
        reduced = np.delete(h, idx, axis=1)
        np.testing.assert_allclose(out.conj().T @ reduced, np.eye(3), atol=1e-9)

    def test_single_column_is_empty(self, rng):
        with pytest.raises(EmptyResult):
            linalg.pinv_remove_column(pinv_oracle(random_channels(rng, 4, 1)), 0)

    def test_vanishing_column(self, rng):
        g = pinv_oracle(random_channels(rng, 4, 2))
        g[:, 1] = 0
        with pytest.raises(SingularUpdate):
            linalg.pinv_remove_column(g, 1)


class TestPinvAdd:
    def test_orthogonal_new_column(self, rng):
        q, _ = np.linalg.qr(random_channels(rng, 6, 4))
        h = q[:, :3] * 2.0
        h_new = q[:, 3] * 0.5
        g = pinv_oracle(h)
        out = linalg.pinv_add_column(g, h, h_new)
        np.testing.assert_allclose(out[:, 3], h_new / np.vdot(h_new, h_new), atol=1e-14)
        np.testing.assert_allclose(out[:, :3], g, atol=1e-14)

    def test_from_empty(self, rng):
        h = random_channels(rng, 4, 1)[:, 0]
        out = linalg.pinv_add_column(np.zeros((4, 0)), np.zeros((4, 0)), h)
        np.testing.assert_allclose(out[:, 0], h / np.vdot(h, h), rtol=1e-14)

    def test_random_matches_scratch(self, rng):
        h = random_channels(rng, 8, 6)
        out = linalg.pinv_add_column(pinv_oracle(h[:, :5]), h[:, :5], h[:, 5])
        assert rel_fro(out, pinv_oracle(h)) <= 1e-9

    def test_scale_is_real_positive(self, rng):
        h = random_channels(rng, 8, 4)
        out = linalg.pinv_add_column(pinv_oracle(h[:, :3]), h[:, :3], h[:, 3])
        np.testing.assert_allclose(np.vdot(out[:, 3], h[:, 3]), 1.0, atol=1e-12)

    def test_dependent_column(self, rng):
        h = random_channels(rng, 6, 3)
        with pytest.raises(RankDeficient):
            linalg.pinv_add_column(pinv_oracle(h), h, h @ np.array([1.0, -2.0, 0.5j]))

    def test_square_system(self, rng):
        h = random_channels(rng, 3, 3)
        with pytest.raises(RankDeficient):
            linalg.pinv_add_column(pinv_oracle(h), h, random_channels(rng, 3, 1)[:, 0])

    @settings(max_examples=40, deadline=None)
    @given(nt=st.integers(4, 64), frac=st.floats(0.0, 0.99), seed=st.integers(0, 2 ** 32 - 1))
    def test_add_then_remove_round_trip(self, nt, frac, seed):
        rng = np.random.default_rng(seed)
        k = 1 + int(frac * (nt - 2))
        h = random_channels(rng, nt, k + 1)
        g = pinv_oracle(h[:, :k])
        grown = linalg.pinv_add_column(g, h[:, :k], h[:, k])
        np.testing.assert_allclose(grown.conj().T @ h, np.eye(k + 1), atol=1e-9)
        back = linalg.pinv_remove_column(grown, k)
        assert rel_fro(back, g) <= 1e-9


def test_refresh_from_scratch(rng):
    h = random_channels(rng, 6, 3)
    assert rel_fro(linalg.refresh_from_scratch(h), np.linalg.pinv(h).conj().T) <= 1e-12
    with pytest.raises(RankDeficient):
        linalg.refresh_from_scratch(np.column_stack([h, h[:, 0]]))


def test_sequential_updates_drift_stays_small(rng):
    h = random_channels(rng, 32, 24)
    g = pinv_oracle(h[:, :4])
    cols = list(range(4))
    for j in range(4, 24):
        g = linalg.pinv_add_column(g, h[:, cols], h[:, j])
        cols.append(j)
        if j % 3 == 0:
            g = linalg.pinv_remove_column(g, 0)
            cols.pop(0)
    np.testing.assert_allclose(g.conj().T @ h[:, cols], np.eye(len(cols)), atol=1e-9)
    assert rel_fro(g, linalg.refresh_from_scratch(h[:, cols])) <= 1e-9


def test_operation_counts_scale(rng):
    from beamupdate.incremental import zf_user_in

    nt = 128
    direct, block = [], []
    for k in (8, 16, 32, 64):
        h = random_channels(rng, nt, k + 1)
        g = pinv_oracle(h[:, :k])
        gram_inv = g.conj().T @ g
        with OpCounter() as ops:
            zf_user_in(g, None, h[:, :k], h[:, k], "direct")
        direct.append(ops.count)
        with OpCounter() as ops:
            zf_user_in(g, gram_inv, h[:, :k], h[:, k], "block")
        block.append(ops.count)
    ratio = np.array(block) / np.array(direct)
    assert np.all(np.diff(ratio) > 0)
    assert np.all(np.diff(direct) > 0)
