import numpy as np
import pytest

from beamupdate import core, linalg
from beamupdate.errors import ConvergenceFailure, DegenerateChannel, Infeasible, RankDeficient

from conftest import orthogonal_channels, random_channels


def phase_align(u, ref):
    return u * np.exp(-1j * np.angle(np.vdot(ref, u)))


class TestDirections:
    def test_mrt_simple(self):
        u = core.mrt_directions(np.array([[1.0], [1j]]))
        np.testing.assert_allclose(u[:, 0], np.array([1, 1j]) / np.sqrt(2))

    def test_mrt_orthonormal(self, rng):
        q = orthogonal_channels(rng, 5, 3)
        np.testing.assert_allclose(core.mrt_directions(q), q)

    def test_mrt_unit_norm(self, rng):
        u = core.mrt_directions(random_channels(rng, 7, 4) * 1e-5)
        np.testing.assert_allclose(np.linalg.norm(u, axis=0), 1, atol=1e-12)

    def test_mrt_zero_channel(self):
        with pytest.raises(DegenerateChannel):
            core.mrt_directions(np.zeros((3, 1)))

    def test_zf_orthogonal_equals_mrt(self, rng):
        h = orthogonal_channels(rng, 6, 3, scale=[1, 3, 0.2])
        np.testing.assert_allclose(core.zf_directions(h)[0], core.mrt_directions(h), atol=1e-12)

    def test_zf_single_user(self, rng):
        h = random_channels(rng, 4, 1)
        np.testing.assert_allclose(core.zf_directions(h)[0], h / np.linalg.norm(h), atol=1e-12)

    def test_zf_pseudoinverse(self, rng):
        h = random_channels(rng, 6, 3)
        u, g = core.zf_directions(h)
        np.testing.assert_allclose(g.conj().T @ h, np.eye(3), atol=1e-9)
        cross = np.abs(h.conj().T @ u) * (1 - np.eye(3))
        assert np.all(cross <= 1e-9 * np.linalg.norm(h, axis=0)[:, None])

    def test_zf_rank_deficient(self, rng):
        h = random_channels(rng, 4, 2)
        with pytest.raises(RankDeficient):
            core.zf_directions(np.column_stack([h, h[:, 0] * 2j]))


class TestDualFixedPoint:
    def test_single_user(self, rng):
        h = random_channels(rng, 4, 1)
        dual = core.solve_dual_fixed_point(h, [3.0])
        assert dual.nu[0] == pytest.approx(3.0 / np.vdot(h, h).real, rel=1e-12)

    def test_orthogonal(self, rng):
        h = orthogonal_channels(rng, 6, 4, scale=[1, 0.1, 2, 5])
        gamma = np.array([1.0, 2.0, 4.0, 0.5])
        dual = core.solve_dual_fixed_point(h, gamma)
        np.testing.assert_allclose(dual.nu, gamma / np.sum(np.abs(h) ** 2, axis=0), rtol=1e-12)

    def test_residual_small(self, rng):
        h = random_channels(rng, 4, 2)
        gamma = np.ones(2)
        dual = core.solve_dual_fixed_point(h, gamma)
        assert dual.converged
        assert np.max(np.abs(core.dual_residual(h, dual.nu, gamma, dual.m_inv))) < 1e-8
        m = np.eye(4) + (h * dual.nu) @ h.conj().T
        np.testing.assert_allclose(dual.m_inv @ m, np.eye(4), atol=1e-8)

    def test_update_rules_agree(self, rng):
        h = random_channels(rng, 8, 4)
        gamma = np.array([1.0, 2.0, 3.0, 1.5])
        a = core.solve_dual_fixed_point(h, gamma)
        b = core.solve_dual_fixed_point(h, gamma, update="direct")
        np.testing.assert_allclose(a.nu, b.nu, rtol=1e-8)
        assert a.iterations < b.iterations

    def test_nonconvergence(self, rng):
        h = random_channels(rng, 8, 4)
        with pytest.raises(ConvergenceFailure) as info:
            core.solve_dual_fixed_point(h, 10 * np.ones(4), max_iter=2, update="direct")
        assert info.value.residual > 0

    def test_leave_one_out_identity(self, rng):
        h = random_channels(rng, 8, 4)
        gamma = np.array([1.0, 4.0, 2.0, 8.0])
        dual = core.solve_dual_fixed_point(h, gamma)
        for k in range(4):
            loo = linalg.rank_one_update_inverse(dual.m_inv, h[:, k], -dual.nu[k])
            val = gamma[k] / np.vdot(h[:, k], loo @ h[:, k]).real
            assert val == pytest.approx(dual.nu[k], rel=1e-8)


class TestOptimalDirections:
    def test_single_user(self, rng):
        h = random_channels(rng, 5, 1)
        dual = core.solve_dual_fixed_point(h, [2.0])
        for mode in ("closed_form", "power_iteration"):
            u = core.optimal_directions(h, dual, [2.0], mode=mode)
            np.testing.assert_allclose(u, h / np.linalg.norm(h), atol=1e-9)

    def test_orthogonal_equals_mrt(self, rng):
        h = orthogonal_channels(rng, 6, 3, scale=[1, 2, 3])
        dual = core.solve_dual_fixed_point(h, np.ones(3))
        np.testing.assert_allclose(core.optimal_directions(h, dual, np.ones(3)),
                                   core.mrt_directions(h), atol=1e-12)

    def test_modes_agree(self, rng):
        h = random_channels(rng, 8, 4)
        gamma = np.array([1.0, 2.0, 1.0, 3.0])
        dual = core.solve_dual_fixed_point(h, gamma)
        a = core.optimal_directions(h, dual, gamma)
        b = core.optimal_directions(h, dual, gamma, mode="power_iteration")
        for k in range(4):
            assert np.linalg.norm(phase_align(b[:, k], a[:, k]) - a[:, k]) <= 1e-6

    def test_phase_convention(self, rng):
        h = random_channels(rng, 8, 4)
        dual = core.solve_dual_fixed_point(h, np.ones(4))
        inner = np.einsum("ij,ij->j", h.conj(), core.optimal_directions(h, dual, np.ones(4)))
        assert np.all(inner.real > 0)
        np.testing.assert_allclose(inner.imag, 0, atol=1e-12 * np.abs(inner).max())

    def test_eigen_relation(self, rng):
        h = random_channels(rng, 8, 4)
        gamma = np.array([2.0, 1.0, 4.0, 1.0])
        dual = core.solve_dual_fixed_point(h, gamma)
        u = core.optimal_directions(h, dual, gamma)
        for k in range(4):
            b = dual.nu[k] / gamma[k] * np.outer(h[:, k], h[:, k].conj())
            for j in range(4):
                if j != k:
                    b -= dual.nu[j] * np.outer(h[:, j], h[:, j].conj())
            assert np.linalg.norm(b @ u[:, k] - u[:, k]) <= 1e-6

    def test_power_iteration_cap(self, rng):
        h = random_channels(rng, 8, 4)
        dual = core.solve_dual_fixed_point(h, np.ones(4))
        with pytest.raises(ConvergenceFailure):
            core.optimal_directions(h, dual, np.ones(4), mode="power_iteration", max_iter=2)


class TestPowerLoading:
    def test_coupling_zf_diagonal(self, rng):
        h = random_channels(rng, 6, 3)
        u, _ = core.zf_directions(h)
        a = core.build_coupling_matrix(h, u, np.array([1.0, 2.0, 4.0]))
        np.testing.assert_allclose(a - np.diag(np.diag(a)), 0, atol=1e-20)
        np.testing.assert_allclose(np.diag(a), np.abs(np.einsum("ij,ij->j", h.conj(), u)) ** 2
                                   / [1.0, 2.0, 4.0])

    def test_coupling_single_user(self, rng):
        h = random_channels(rng, 4, 1)
        a = core.build_coupling_matrix(h, core.mrt_directions(h), [2.0])
        assert a[0, 0] == pytest.approx(np.vdot(h, h).real / 2.0)

    def test_coupling_brute_force(self, rng):
        h = random_channels(rng, 5, 3)
        u = core.mrt_directions(random_channels(rng, 5, 3))
        gamma = np.array([1.5, 0.5, 3.0])
        a = core.build_coupling_matrix(h, u, gamma)
        for i in range(3):
            for j in range(3):
                g = abs(sum(h[n, i].conjugate() * u[n, j] for n in range(5))) ** 2
                assert a[i, j] == pytest.approx(g / gamma[i] if i == j else -g, rel=1e-12)
        assert np.all(np.diag(a) > 0) and np.all(a - np.diag(np.diag(a)) <= 0)

    def test_single_user_load(self, rng):
        h = random_channels(rng, 4, 1) * 1e-4
        for u in (core.mrt_directions(h), core.zf_directions(h)[0]):
            beta = core.power_load(core.build_coupling_matrix(h, u, [3.0]), [1e-12])
            assert beta[0] == pytest.approx(3.0 * 1e-12 / np.vdot(h, h).real, rel=1e-12)

    def test_zf_closed_form(self, rng):
        h = random_channels(rng, 6, 3)
        u, _ = core.zf_directions(h)
        gamma, s2 = np.array([1.0, 2.0, 3.0]), np.array([1.0, 0.5, 2.0])
        general = core.power_load(core.build_coupling_matrix(h, u, gamma), s2)
        np.testing.assert_allclose(core.zf_power_load(h, u, gamma, s2), general, rtol=1e-12)
        np.testing.assert_allclose(
            general, gamma * s2 / np.abs(np.einsum("ij,ij->j", h.conj(), u)) ** 2, rtol=1e-12)

    def test_mrt_infeasible(self):
        h = np.array([[1.0, 1.0], [0.0, 0.05]], dtype=complex)
        u = core.mrt_directions(h)
        with pytest.raises(Infeasible) as info:
            core.power_load(core.build_coupling_matrix(h, u, [10.0, 10.0]), [1.0, 1.0])
        assert np.any(info.value.beta < 0)


class TestAssembleAndSinr:
    def test_zero_loads(self, rng):
        d = core.assemble(core.mrt_directions(random_channels(rng, 3, 2)), np.zeros(2))
        np.testing.assert_array_equal(d.W, 0)
        assert d.total_power == 0

    def test_total(self):
        d = core.assemble(np.eye(2, dtype=complex), np.array([1.0, 2.0]))
        assert core.total_power(d) == 3.0

    def test_total_matches_norms(self, rng):
        h = random_channels(rng, 6, 3)
        d = core.assemble(core.mrt_directions(h), rng.uniform(0.1, 2, 3))
        assert d.total_power == pytest.approx(np.sum(np.abs(d.W) ** 2), rel=1e-12)
        np.testing.assert_allclose(np.linalg.norm(d.W, axis=0) ** 2, d.beta, rtol=1e-10)

    def test_single_user_sinr(self, rng):
        h = random_channels(rng, 4, 1)
        w = np.sqrt(2.0) * h / np.linalg.norm(h)
        assert core.compute_sinr(h, w, [0.5])[0] == pytest.approx(2.0 * np.vdot(h, h).real / 0.5)

    def test_zf_design_hits_targets(self, rng):
        h = random_channels(rng, 6, 4) * 1e-4
        gamma = np.array([1.0, 2.0, 5.0, 10.0])
        d, _ = core.zf_design(h, gamma, np.full(4, 1e-12))
        np.testing.assert_allclose(d.achieved_sinr, gamma, rtol=1e-9)

    def test_optimal_design_hits_targets(self, rng):
        h = random_channels(rng, 8, 4) * 1e-4
        gamma = np.array([1.0, 2.0, 5.0, 10.0])
        d, _ = core.optimal_design(h, gamma, np.full(4, 1e-12))
        np.testing.assert_allclose(d.achieved_sinr, gamma, rtol=1e-6)

    def test_zero_beamformer_sinr(self, rng):
        h = random_channels(rng, 3, 2)
        np.testing.assert_array_equal(core.compute_sinr(h, np.zeros((3, 2)), [1.0, 1.0]), 0)


class TestMargins:
    def test_equality_design(self, rng):
        h = random_channels(rng, 6, 3)
        s2 = np.array([1.0, 2.0, 0.5])
        d, _ = core.optimal_design(h, np.full(3, 2.0), s2)
        assert np.all(np.abs(core.constraint_margin(h, d.W, np.full(3, 2.0), s2)) <= 1e-6 * s2)

    def test_zero_beamformers(self, rng):
        h = random_channels(rng, 3, 2)
        np.testing.assert_array_equal(
            core.constraint_margin(h, np.zeros((3, 2)), [1.0, 1.0], [0.3, 0.4]), [-0.3, -0.4])

    def test_doubling_power(self, rng):
        h = random_channels(rng, 6, 3)
        gamma, s2 = np.full(3, 2.0), np.ones(3)
        d, _ = core.mrt_design(h, np.full(3, 0.5), s2)
        d, _ = core.optimal_design(h, gamma, s2)
        margin = core.constraint_margin(h, np.sqrt(2) * d.W, gamma, s2)
        assert np.all(margin > 0)
        sinr = core.compute_sinr(h, np.sqrt(2) * d.W, s2)
        assert np.all(sinr > gamma)


def test_dominance(rng):
    for _ in range(30):
        h = random_channels(rng, 6, 3)
        gamma, s2 = np.full(3, 2.0), np.ones(3)
        opt, _ = core.optimal_design(h, gamma, s2)
        zf, _ = core.zf_design(h, gamma, s2)
        assert opt.total_power <= zf.total_power * (1 + 1e-9)
        try:
            mrt, _ = core.mrt_design(h, gamma, s2)
        except Infeasible:
            continue
        assert opt.total_power <= mrt.total_power * (1 + 1e-9)
