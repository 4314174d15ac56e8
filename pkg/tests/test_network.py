import numpy as np
import pytest
from scipy.linalg import solve_lyapunov

from jumpmix import controllability as ctl
from jumpmix import dynamics as dyn
from jumpmix import network as net
from jumpmix import noise, pdmp


def test_single_mass_langevin_matrix():
    nw = net.NetworkSpec(size=1, driven=(0,), omega=np.array([[1.0]]), gammas=[1.0])
    A, B = net.langevin_matrices(nw)
    assert np.allclose(A, [[-1.0, -1.0], [1.0, 0.0]])
    assert np.allclose(B, [[1.0], [0.0]])


def test_chain_reproduces_textbook_coefficients():
    # dp_i = -(3q_i - q_{i-1} - q_{i+1}) interior, -(2q - neighbor) at ends.
    nw = net.chain_network(3)
    A, _ = net.langevin_matrices(nw)
    K = net.chain_stiffness(3)
    assert np.allclose(K, [[2, -1, 0], [-1, 3, -1], [0, -1, 2]])
    for q in np.eye(3):
        x = np.concatenate([np.zeros(3), nw.omega @ q])
        dp = (A @ x)[:3]
        assert np.allclose(dp, -K @ q, atol=1e-10)


def test_langevin_eigenvalues():
    nw = net.chain_network(3)
    A, _ = net.langevin_matrices(nw)
    eigs = np.linalg.eigvals(A)
    assert eigs.real.max() <= 1e-12
    cert = ctl.kalman_rank(nw.omega.T @ nw.omega, nw.iota() @ nw.iota().T)
    assert cert.passed
    assert eigs.real.max() < -1e-4      # strictly negative once Kalman holds


def test_hamiltonian_conservation_without_dissipation():
    # Vanishing dissipation: the flow preserves ||p||^2 + ||omega q||^2.
    nw = net.chain_network(3, gamma=1e-12)
    spec = net.build_langevin(nw)
    rng = np.random.default_rng(0)
    x = rng.normal(size=6)
    out = dyn.flow(spec.f, x, 5.0)
    assert abs(out @ out - x @ x) < 1e-6


def test_semimarkov_effective_stiffness_identity():
    nw = net.chain_network(2, driven=(0, 1), lam=0.1)
    A, B, omega_t = net.semimarkov_matrices(nw)
    lam_mat = nw.iota() * nw.lambdas[None, :]
    lhs = omega_t.T @ omega_t + lam_mat @ lam_mat.T
    assert np.abs(lhs - nw.omega.T @ nw.omega).max() < 1e-10
    cert = ctl.kalman_rank(A, B)
    assert cert.passed and cert.dimension_reached == 6


def test_semimarkov_rejects_large_couplings():
    nw = net.chain_network(2, driven=(0, 1), lam=10.0)
    with pytest.raises(ValueError):
        net.semimarkov_matrices(nw)


def test_semimarkov_r_block_decouples_at_small_lambda():
    nw = net.chain_network(2, driven=(0, 1), lam=1e-6)
    A, _, _ = net.semimarkov_matrices(nw)
    off = np.abs(A[:2, 2:4]).max() + np.abs(A[2:4, :2]).max()
    assert off < 1e-5


def test_conditions_zero_potential():
    nw = net.chain_network(3)
    ray = [np.full(3, 2 * np.pi * n) for n in range(1, 8)]
    rep = net.check_conditions(nw, ray)
    assert rep.kalman.passed and rep.growth_pass and rep.decay_pass
    assert "not a proof" in rep.caveat


def test_conditions_cosine_potential_fails_decay():
    nw = net.chain_network(3, potential=net.cosine_potential())
    ray = [np.full(3, 2 * np.pi * n) for n in range(1, 8)]
    rep = net.check_conditions(nw, ray)
    assert rep.growth_pass
    assert not rep.decay_pass


def test_conditions_bump_potential_passes():
    nw = net.chain_network(3, potential=net.bump_potential(radius=1.0))
    ray = [np.full(3, 2 * np.pi * n) for n in range(1, 8)]
    rep = net.check_conditions(nw, ray)
    assert rep.growth_pass and rep.decay_pass


def test_kalman_chains_match_brute_force():
    for L in range(2, 7):
        nw = net.chain_network(L)
        pair_A = nw.omega.T @ nw.omega
        pair_B = nw.iota() @ nw.iota().T
        blocks = [pair_B]
        for _ in range(L - 1):
            blocks.append(pair_A @ blocks[-1])
        brute = np.linalg.matrix_rank(np.hstack(blocks))
        cert = ctl.kalman_rank(pair_A, pair_B)
        assert cert.dimension_reached == brute == L
        A, B = net.langevin_matrices(nw)
        full = ctl.kalman_rank(A, B)
        assert full.passed


def test_decoupled_network_fails_kalman():
    # Two disconnected chains, both drives on the first one.
    K2 = net.chain_stiffness(2)
    from scipy.linalg import block_diag, sqrtm
    omega = np.real(sqrtm(block_diag(K2, K2)))
    nw = net.NetworkSpec(size=4, driven=(0, 1), omega=omega, gammas=[1.0, 1.0])
    cert = ctl.kalman_rank(nw.omega.T @ nw.omega, nw.iota() @ nw.iota().T)
    assert not cert.passed
    A, B = net.langevin_matrices(nw)
    assert not ctl.kalman_rank(A, B).passed


def test_langevin_second_moments_match_lyapunov_equation():
    # Oracle: stationary M solves A M + M A^T = -rate * B E[eta eta^T] B^T.
    nw = net.chain_network(2)
    rate = 2.0
    spec = net.build_langevin(nw, rate=rate, law=noise.isotropic_gaussian(2, 0.8))
    A, B = net.langevin_matrices(nw)
    Q = rate * (0.8 ** 2) * B @ B.T
    M = solve_lyapunov(A, -Q)
    target = np.trace(M)
    states = pdmp.ensemble_states_at(spec, np.zeros(4), [40.0], 2000, noise.Streams(1))
    sq = np.sum(states[:, 0] ** 2, axis=1)
    se = sq.std(ddof=1) / np.sqrt(sq.size)
    assert abs(sq.mean() - target) <= 3 * se + 0.01 * target


def test_merged_bath_path_marginals():
    g = noise.stream(2, 0, "baths")
    rates = [1.0, 3.0]
    laws = [noise.isotropic_gaussian(1), noise.product_laplace(1)]
    T = 400.0
    path = net.merged_bath_path(rates, laws, T, g)
    per_bath = [(path.jumps[:, j] != 0).sum() for j in range(2)]
    for j, rate in enumerate(rates):
        mean = rate * T
        assert abs(per_bath[j] - mean) < 4 * np.sqrt(mean)
    from scipy import stats
    vals1 = path.jumps[path.jumps[:, 1] != 0, 1]
    assert stats.kstest(vals1, "laplace").pvalue > 0.01


def test_merged_bath_trajectory_evolves():
    nw = net.chain_network(2)
    spec = net.build_langevin(nw, rate=2.0)
    g = noise.stream(3, 0, "bathtraj")
    path = net.merged_bath_path([1.0, 1.0],
                                [noise.isotropic_gaussian(1)] * 2, 10.0, g)
    traj = pdmp.trajectory_from_path(spec, np.zeros(4), path)
    assert traj.post_jump_states.shape == (path.count + 1, 4)
    assert np.isfinite(traj.at(10.0)).all()


def test_network_spec_validation():
    with pytest.raises(ValueError):
        net.NetworkSpec(size=2, driven=(), omega=np.eye(2), gammas=[])
    with pytest.raises(ValueError):
        net.NetworkSpec(size=2, driven=(3,), omega=np.eye(2), gammas=[1.0])
    with pytest.raises(ValueError):
        net.NetworkSpec(size=2, driven=(0,), omega=np.zeros((2, 2)), gammas=[1.0])
    nw = net.chain_network(3)
    assert nw.condition_number >= 1.0


def test_potential_gradients():
    pot = net.cosine_potential(1.0)
    q = np.array([0.3, -0.7, 1.1])
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (pot.value(q + e) - pot.value(q - e)) / (2 * h)
        assert abs(fd - pot.grad(q)[j]) < 1e-6
    bump = net.bump_potential(1.0, 2.0)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (bump.value(q + e) - bump.value(q - e)) / (2 * h)
        assert abs(fd - bump.grad(q)[j]) < 1e-6
    assert bump.value(np.array([3.0, 0.0, 0.0])) == 0.0
    assert np.all(bump.grad(np.array([3.0, 0.0, 0.0])) == 0.0)
