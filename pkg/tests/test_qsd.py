import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg

from qsdchaos.errors import DimensionCapError, NumericalBlowupError, TruncationTooSmallError
from qsdchaos.fock import (
    basis_state,
    build_hamiltonian,
    displaced_vacuum,
    embed,
    momentum_op,
    number_op,
    position_op,
)
from qsdchaos.params import SystemParams
from qsdchaos.qsd import (
    Stepper,
    child_seed,
    default_dt,
    draw_noise,
    make_rng,
    n_steps_for,
    qsd_step,
    run_ensemble,
    run_trajectory,
)

SMALL = SystemParams(beta=0.5, n_max=7, kappa=(0.3, 0.3, 0.3), t_end=0.4, seed=11)


class TestNoise:
    dt = 0.01
    z = draw_noise(make_rng(2024), 1, dt, 10**6)[:, 0]

    def test_mean_square_modulus(self):
        assert np.mean(np.abs(self.z) ** 2) / self.dt == pytest.approx(1.0, abs=0.01)

    def test_mean_square(self):
        assert abs(np.mean(self.z**2)) < 0.01 * self.dt

    def test_three_sigma(self):
        n = self.z.size
        # |dxi|^2/dt ~ Exp(1); Re, Im of dxi ~ N(0, dt/2); dxi^2 has E|.|^2 = 2 dt^2
        assert abs(np.mean(np.abs(self.z) ** 2) / self.dt - 1) < 3 / math.sqrt(n)
        assert abs(self.z.mean().real) < 3 * math.sqrt(self.dt / 2 / n)
        assert abs(self.z.mean().imag) < 3 * math.sqrt(self.dt / 2 / n)
        sq = self.z**2
        assert abs(sq.mean().real) < 3 * self.dt / math.sqrt(n)
        assert abs(sq.mean().imag) < 3 * self.dt / math.sqrt(n)

    def test_independent_lindblads(self):
        z = draw_noise(make_rng(5), 2, 1.0, 10**5)
        corr = np.mean(z[:, 0] * z[:, 1].conj())
        assert abs(corr) < 3 / math.sqrt(10**5)

    def test_deterministic(self):
        a = draw_noise(make_rng(7), 3, 0.1, 50)
        b = draw_noise(make_rng(7), 3, 0.1, 50)
        assert np.array_equal(a, b)

    def test_block_size_independent(self):
        whole = draw_noise(make_rng(9), 2, 0.1, 30)
        rng = make_rng(9)
        parts = np.concatenate([draw_noise(rng, 2, 0.1, k) for k in (7, 1, 22)])
        assert np.array_equal(whole, parts)
        rng = make_rng(9)
        singles = np.array([draw_noise(rng, 2, 0.1) for _ in range(30)])
        assert np.array_equal(whole, singles)


class TestChildSeeds:
    def test_deterministic_and_distinct(self):
        seeds = [child_seed(42, k) for k in range(1000)]
        assert seeds == [child_seed(42, k) for k in range(1000)]
        assert len(set(seeds)) == 1000
        assert all(0 <= s < 2**64 for s in seeds)
        assert child_seed(43, 0) != child_seed(42, 0)


class TestStep:
    def test_free_no_lindblads(self):
        psi = displaced_vacuum(0.5, 0.2, 8)
        out = qsd_step(psi, None, [], 0.1, np.zeros(0))
        assert np.array_equal(out, psi)

    @pytest.mark.parametrize("k", [0, 1, 3])
    def test_lindblad_eigenstate(self, k):
        n = 6
        psi = basis_state([k], n)
        out = qsd_step(psi, None, [0.7 * number_op(n)], 0.01, np.array([0.3 - 0.2j]))
        assert abs(abs(np.vdot(psi, out)) - 1) < 1e-14

    @pytest.mark.parametrize("scheme,order", [("euler", 2), ("rk4", 5)])
    def test_number_hamiltonian_rotation(self, scheme, order):
        n = 30
        psi = displaced_vacuum(1.0, 0.5, n)
        num = number_op(n)
        errs = []
        for dt in (0.02, 0.01):
            exact = np.exp(-1j * np.arange(n) * dt) * psi
            errs.append(np.linalg.norm(qsd_step(psi, num, [], dt, np.zeros(0), scheme=scheme) - exact))
        assert errs[0] / errs[1] == pytest.approx(2**order, rel=0.15)
        if scheme == "euler":
            assert errs[0] < 0.02**2 * 10

    def test_norm_preserved(self):
        n = 10
        rng = make_rng(3)
        q = position_op(n)
        h = 0.5 * momentum_op(n) @ momentum_op(n) + (q @ q @ q @ q) / 32
        psi = displaced_vacuum(1.0, 0.0, n)
        for _ in range(200):
            psi = qsd_step(psi, h, [0.8 * q], 0.005, draw_noise(rng, 1, 0.005))
            assert abs(np.linalg.norm(psi) - 1) < 1e-12

    def test_expectations_taken_before_step(self):
        """Hand-built Ito increment on the incoming state."""
        n = 8
        q = position_op(n).toarray()
        h = np.diag(np.arange(n, dtype=float)) + 0.1 * q
        L = 0.4 * q + 0.2j * momentum_op(n).toarray()
        psi = displaced_vacuum(0.6, -0.3, n)
        dt, dxi = 0.01, np.array([0.05 + 0.02j])
        ell = np.vdot(psi, L @ psi)
        ld = L.conj().T
        inc = -1j * h @ psi * dt
        inc += (np.conj(ell) * L @ psi - 0.5 * ld @ L @ psi - 0.5 * abs(ell) ** 2 * psi) * dt
        inc += (L @ psi - ell * psi) * dxi[0]
        expected = (psi + inc) / np.linalg.norm(psi + inc)
        out = qsd_step(psi, h, [L], dt, dxi, scheme="euler")
        assert np.abs(out - expected).max() < 1e-14

    def test_batch_matches_single(self):
        n = 8
        q = position_op(n)
        h = 0.5 * momentum_op(n) @ momentum_op(n)
        st = Stepper(h, [0.5 * q])
        psis = np.array([displaced_vacuum(x, 0.0, n) for x in (-0.5, 0.2, 0.7)])
        noise = draw_noise(make_rng(1), 1, 0.01, 3)
        batch, _ = st.advance(psis, 0.01, noise)
        for k in range(3):
            single, _ = st.advance(psis[k], 0.01, noise[k])
            assert np.abs(batch[k] - single).max() < 1e-15

    def test_blowup(self):
        psi = displaced_vacuum(0.5, 0.0, 8)
        with pytest.raises(NumericalBlowupError) as info:
            qsd_step(psi, None, [position_op(8)], 0.01, np.array([np.nan]))
        assert info.value.step == 1

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            Stepper(None, [], scheme="milstein")


class TestStrongConvergence:
    def test_refinement_of_fixed_paths(self):
        """Same Brownian paths, coarser levels from summed fine increments.

        Euler-Maruyama has strong order 1/2, so the change in <q>(t_end)
        between successive halvings shrinks by about sqrt(2) each time. The
        rms over 1024 paths keeps the sampled ratio well above 1.3.
        """
        n = 10
        q = position_op(n)
        h = 0.5 * momentum_op(n) @ momentum_op(n) + (q @ q @ q @ q) / 32
        st = Stepper(h, [0.7 * q])
        t_end, paths, finest = 1.0, 1024, 0.5**8
        fine = draw_noise(make_rng(77), 1, finest, int(t_end / finest) * paths).reshape(paths, -1)
        psi0 = np.tile(displaced_vacuum(1.0, 0.0, n), (paths, 1))
        q_end = []
        for level in (4, 5, 6, 7, 8):
            dt = 0.5**level
            group = int(dt / finest)
            inc = fine.reshape(paths, -1, group).sum(axis=2)
            psi = psi0.copy()
            for k in range(inc.shape[1]):
                psi, _ = st.advance(psi, dt, inc[:, k : k + 1])
            q_end.append(np.real(np.sum(psi.conj() * (q @ psi.T).T, axis=1)))
        diffs = [np.sqrt(np.mean((a - b) ** 2)) for a, b in zip(q_end, q_end[1:])]
        assert all(d1 / d2 >= 1.3 for d1, d2 in zip(diffs, diffs[1:]))


class TestStepSize:
    def test_rule(self):
        p = SystemParams(beta=0.5, n_max=8, kappa=(0.5, 0.1, 0.0))
        h = build_hamiltonian(p)
        hnorm = np.abs(scipy.linalg.eigvalsh(h.toarray())).max()
        for scheme, courant in (("euler", 0.05), ("rk4", 0.5)):
            dt = default_dt(p, h, scheme=scheme)
            assert dt * hnorm <= courant
            assert dt * 0.25 * ((-0.2 / 0.5) ** 2 + 0.5) <= 1e-3
            assert dt * 10 > 1e-3 / (0.25 * 0.66) or dt * hnorm > courant / 10
            assert round(dt / 10 ** math.floor(math.log10(dt)), 9) in (1, 2, 5)

    def test_steps(self):
        assert n_steps_for(1.0, 0.1) == 10
        assert n_steps_for(1.0, 0.3) == 4


class TestTrajectory:
    def test_record_layout(self):
        rec = run_trajectory(SMALL)
        assert rec.q.shape == rec.dq.shape == rec.g2.shape == rec.leakage.shape == (len(rec.times), 3)
        assert rec.times[0] == 0.0
        assert rec.times[-1] == pytest.approx(SMALL.t_end)
        assert np.allclose(SMALL.beta * rec.q[0], [-0.2, 0.05, 0.15], atol=1e-6)
        assert np.allclose(rec.dq[0], 1 / math.sqrt(2), atol=1e-4)
        assert np.all(np.abs(rec.norm - 1) < 1e-3)
        assert rec.norm_valid and not rec.closed_system

    def test_deterministic(self):
        a, b = run_trajectory(SMALL), run_trajectory(SMALL)
        for field in ("q", "p", "dq", "dp", "n", "g2", "energy", "norm", "leakage"):
            assert np.array_equal(getattr(a, field), getattr(b, field), equal_nan=True)

    def test_seed_changes_path(self):
        a, b = run_trajectory(SMALL), run_trajectory(replace(SMALL, seed=12))
        assert not np.array_equal(a.q, b.q)

    def test_explicit_noise_matches_seeded(self):
        dt = default_dt(SMALL)
        steps = n_steps_for(SMALL.t_end, dt)
        noise = draw_noise(make_rng(SMALL.seed), 3, dt, steps)
        a = run_trajectory(SMALL)
        b = run_trajectory(SMALL, noise=noise)
        assert np.array_equal(a.q, b.q)
        with pytest.raises(ValueError):
            run_trajectory(SMALL, noise=noise[:, :2])

    def test_uncertainty_product(self):
        # n_max=7 leaks ~1e-3 at this coupling and the truncated [q, p] then
        # lets the product dip 1e-9 below the bound
        rec = run_trajectory(replace(SMALL, n_max=10, kappa=(1.0, 1.0, 1.0)))
        assert np.all(rec.dq * rec.dp >= 0.5 - 1e-9)

    def test_single_measured_mode(self):
        rec = run_trajectory(replace(SMALL, kappa=(0.3, 0.0, 0.0)), measured_modes=[1])
        assert not rec.closed_system
        assert rec.measured_modes == (1,)

    def test_closed_flag(self):
        rec = run_trajectory(replace(SMALL, kappa=(0.0, 0.0, 0.0)))
        assert rec.closed_system

    def test_closed_system_conserves_energy(self):
        p = SystemParams(beta=0.5, n_max=8, kappa=(0, 0, 0), t_end=2.0)
        h = build_hamiltonian(p)
        rec = run_trajectory(p, checkpoint_times=[0.0, 1.0, 2.0], hamiltonian=h)
        energies = [np.vdot(rec.checkpoints[t], h @ rec.checkpoints[t]).real for t in (0.0, 1.0, 2.0)]
        assert max(abs(e - energies[0]) for e in energies) / energies[0] < 1e-6

    def test_closed_system_matches_exact_propagator(self):
        p = SystemParams(beta=0.5, n_max=7, kappa=(0, 0, 0), t_end=1.0)
        h = build_hamiltonian(p)
        rec = run_trajectory(p, checkpoint_times=[0.0, 1.0])
        exact = scipy.linalg.expm(-1j * h.toarray()) @ rec.checkpoints[0.0]
        assert abs(abs(np.vdot(exact, rec.checkpoints[1.0])) - 1) < 1e-8

    def test_truncation_error(self):
        with pytest.raises(TruncationTooSmallError):
            run_trajectory(SystemParams(beta=0.05, n_max=8))

    def test_invalid_mode(self):
        with pytest.raises(ValueError):
            run_trajectory(SMALL, measured_modes=[4])


class TestEnsemble:
    def test_single_trajectory_is_pure(self):
        res = run_ensemble(SMALL, n_traj=1, checkpoint_times=[0.2, 0.4])
        for k in range(2):
            assert res.purity(k) == pytest.approx(1.0, abs=1e-10)

    def test_density_properties_and_bookkeeping(self):
        n = SMALL.n_max
        res = run_ensemble(SMALL, n_traj=6, checkpoint_times=[0.0, 0.4])
        for k, t in enumerate(res.checkpoint_times):
            rho = res.mean_density[k]
            assert np.abs(rho - rho.conj().T).max() < 1e-10
            assert np.trace(rho).real == pytest.approx(1.0, abs=1e-10)
            assert np.linalg.eigvalsh(rho).min() > -1e-10
            row = int(np.argmin(np.abs(res.records[0].times - t)))
            for mode in (1, 2, 3):
                for op, attr in ((position_op, "q"), (momentum_op, "p"), (number_op, "n")):
                    a = embed(op(n), mode, n).toarray()
                    traced = np.real(np.trace(rho @ a))
                    mean = np.mean([getattr(r, attr)[row, mode - 1] for r in res.records])
                    assert traced == pytest.approx(mean, abs=1e-10)
        mean_q1 = np.mean([r.q[0, 0] for r in res.records])
        assert mean_q1 == pytest.approx(-0.2 / SMALL.beta, abs=1e-6)

    def test_worker_count_invariance(self):
        a = run_ensemble(SMALL, n_traj=3, checkpoint_times=[0.4])
        b = run_ensemble(SMALL, n_traj=3, checkpoint_times=[0.4], jobs=2)
        assert np.array_equal(a.mean_density[0], b.mean_density[0])
        for ra, rb in zip(a.records, b.records):
            assert np.array_equal(ra.q, rb.q)

    def test_child_seeds_used(self):
        res = run_ensemble(SMALL, n_traj=2)
        direct = run_trajectory(replace(SMALL, seed=child_seed(SMALL.seed, 1), dt=res.records[1].dt))
        assert np.array_equal(res.records[1].q, direct.q)

    def test_density_cap(self):
        with pytest.raises(DimensionCapError):
            run_ensemble(SystemParams(n_max=12, t_end=0.1), n_traj=1, checkpoint_times=[0.1])

    def test_needs_a_trajectory(self):
        with pytest.raises(ValueError):
            run_ensemble(SMALL, n_traj=0)


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="the quartic well confines the unmeasured packet: dq breathes and peaks near 2.3x its initial value",
)
def test_closed_system_delocalizes_monotonically():
    rec = run_trajectory(SystemParams(beta=0.25, n_max=24, kappa=(0, 0, 0), t_end=20.0))
    assert not rec.truncation_suspect
    growth = rec.dq / rec.dq[0]
    assert np.all(np.diff(rec.dq, axis=0) >= 0)
    assert np.all(growth.max(axis=0) > 3)
