import numpy as np
import pytest
from scipy import stats

from jumpmix import coupling as cpl
from jumpmix import dynamics as dyn
from jumpmix import noise, pdmp
from jumpmix.gallery import build_preset


def gaussian_density(mu, sigma):
    c = 1.0 / (sigma * np.sqrt(2 * np.pi))
    return cpl.Density(
        sampler=lambda rng: np.atleast_1d(rng.normal(mu, sigma)),
        density=lambda v: float(c * np.exp(-0.5 * ((np.asarray(v).ravel()[0] - mu) / sigma) ** 2)),
    )


def uniform_density(a, b):
    return cpl.Density(
        sampler=lambda rng: np.atleast_1d(rng.uniform(a, b)),
        density=lambda v: float((1.0 / (b - a)) if a <= np.asarray(v).ravel()[0] <= b else 0.0),
    )


def mix_spec(alpha=1.0, rate=2.0):
    return build_preset("linear_1d", {"alpha": alpha, "rate": rate}).spec


def mix_policy(r=1.0, mode="exact-density", **kw):
    return cpl.CouplingPolicy(x_hat=[0.0], r=r, m=1, hit_mode=mode, R=4.0, **kw)


def test_maximal_coupling_identical_laws_always_hit():
    p = gaussian_density(0.0, 1.0)
    rng = noise.stream(0, 0, "mc-eq")
    for _ in range(200):
        x, y, hit = cpl.maximal_coupling_sample(p, p, rng)
        assert hit and np.array_equal(x, y)


def test_maximal_coupling_disjoint_always_miss_marginals_exact():
    p = uniform_density(0.0, 1.0)
    q = uniform_density(2.0, 3.0)
    rng = noise.stream(1, 0, "mc-disjoint")
    xs, ys = [], []
    for _ in range(4000):
        x, y, hit = cpl.maximal_coupling_sample(p, q, rng)
        assert not hit
        xs.append(x[0])
        ys.append(y[0])
    assert stats.kstest(xs, "uniform", args=(0, 1)).pvalue > 0.01
    assert stats.kstest(ys, "uniform", args=(2, 1)).pvalue > 0.01


def test_maximal_coupling_gaussian_miss_rate_matches_tv():
    # Oracle: quadrature of 0.5 |p - q| (equals 2 Phi(1/2) - 1 = 0.3829...).
    p = gaussian_density(0.0, 1.0)
    q = gaussian_density(1.0, 1.0)
    grid = np.linspace(-9, 10, 4001)
    tv = cpl.tv_quadrature(p.density, q.density, grid)
    assert abs(tv - 0.3829) < 1e-4
    rng = noise.stream(2, 0, "mc-gauss")
    n = 20_000
    miss = sum(not cpl.maximal_coupling_sample(p, q, rng)[2] for _ in range(n))
    se = np.sqrt(tv * (1 - tv) / n)
    assert abs(miss / n - tv) <= 3 * se


def test_maximal_coupling_miss_parts_independent_marginals():
    # Conditioned on a miss the coordinates follow the normalized positive
    # and negative parts of q - p.
    p = gaussian_density(0.0, 1.0)
    q = gaussian_density(1.0, 1.0)
    rng = noise.stream(3, 0, "mc-parts")
    xs, ys = [], []
    while len(xs) < 4000:
        x, y, hit = cpl.maximal_coupling_sample(p, q, rng)
        if not hit:
            xs.append(x[0])
            ys.append(y[0])
    # (p - q)_+ lives left of 1/2, (q - p)_+ right of it.
    assert np.max(xs) < 0.5 + 1e-9
    assert np.min(ys) > 0.5 - 1e-9


def test_tv_quadrature_edges():
    p = gaussian_density(0.0, 1.0)
    grid = np.linspace(-9, 9, 2001)
    assert cpl.tv_quadrature(p.density, p.density, grid) == 0.0
    pu = uniform_density(0.0, 1.0)
    qu = uniform_density(2.0, 3.0)
    grid2 = np.linspace(-0.5, 3.5, 8001)
    assert abs(cpl.tv_quadrature(pu.density, qu.density, grid2) - 1.0) < 1e-3
    with pytest.raises(ValueError):
        cpl.tv_quadrature(p.density, p.density, np.linspace(-0.5, 0.5, 101))


def test_tv_quadrature_grid_refinement_converges():
    p = gaussian_density(0.0, 1.0)
    q = gaussian_density(1.0, 1.0)
    coarse = cpl.tv_quadrature(p.density, q.density, np.linspace(-9, 10, 1001))
    fine = cpl.tv_quadrature(p.density, q.density, np.linspace(-9, 10, 16001))
    assert abs(coarse - fine) < 1e-4


def test_block_couple_equal_branch():
    spec = mix_spec()
    pol = mix_policy()
    rng = noise.stream(4, 0, "blk-eq")
    z = np.array([0.4])
    for _ in range(20):
        res = cpl.block_couple(spec, pol, z, z, [0.3], rng)
        assert res.branch == "equal"
        assert np.array_equal(res.z_next, res.zp_next)
        z = res.z_next


def test_block_couple_far_branch_never_hits():
    spec = mix_spec()
    pol = mix_policy()
    rng = noise.stream(5, 0, "blk-far")
    for _ in range(200):
        res = cpl.block_couple(spec, pol, [3.0], [-3.0], [0.5], rng)
        assert res.branch == "far"
        assert not np.array_equal(res.z_next, res.zp_next)


def test_block_couple_exact_density_hit_rate_matches_tv():
    # Oracle: the one-step pushforwards are the jump law shifted to the two
    # flowed points, so P{hit} = 1 - TV of those shifts.
    spec = mix_spec()
    pol = mix_policy(r=1.0)
    z, zp, s = np.array([0.8]), np.array([-0.6]), 0.5
    a = float(np.exp(-s) * z[0])
    ap = float(np.exp(-s) * zp[0])
    tv = cpl.tv_quadrature(gaussian_density(a, 1.0).density,
                           gaussian_density(ap, 1.0).density,
                           np.linspace(-10, 10, 4001))
    rng = noise.stream(6, 0, "blk-hit")
    n = 10_000
    hits = sum(cpl.block_couple(spec, pol, z, zp, [s], rng).branch == "hit"
               for _ in range(n))
    se = np.sqrt(tv * (1 - tv) / n)
    assert abs(hits / n - (1 - tv)) <= 3 * se


def test_block_couple_independent_mode_marginal_tag():
    spec = mix_spec()
    pol = mix_policy(mode="independent")
    rng = noise.stream(7, 0, "blk-ind")
    res = cpl.block_couple(spec, pol, [0.3], [-0.3], [0.5], rng)
    assert res.branch == "miss"
    assert not np.array_equal(res.z_next, res.zp_next)


def test_shoot_match_identical_states():
    spec = mix_spec()
    rng = noise.stream(8, 0, "shoot-eq")
    out = cpl.shoot_match(spec, [0.5], [0.5], [0.7], [[0.2]], rng)
    assert out.accepted and out.residual == 0.0 and out.iterations == 0
    assert np.allclose(out.xi, [[0.2]])


def test_shoot_match_affine_one_step():
    f0 = dyn.VectorField(1, lambda x: np.zeros_like(x))
    spec0 = pdmp.SystemSpec(f0, np.eye(1), 1.0, noise.isotropic_gaussian(1))
    rng = noise.stream(9, 0, "shoot-aff")
    out = cpl.shoot_match(spec0, [0.5], [0.2], [1.0], [[0.3]], rng)
    assert out.converged
    if out.xi is not None:
        assert abs(out.xi[0, 0] - 0.6) < 1e-12


def test_shoot_match_nonlinear_converges():
    preset = build_preset("cubic_1d", {})
    rng = noise.stream(10, 0, "shoot-cat")
    converged = 0
    for _ in range(50):
        xi = preset.spec.law.sample(rng, 1)
        out = cpl.shoot_match(preset.spec, [0.3], [0.1], [0.8], xi, rng,
                              iters=20, tol=1e-8)
        converged += out.converged
        if out.converged:
            assert out.residual <= 1e-8 and out.iterations <= 20
    assert converged == 50


def test_shoot_match_singular_jacobian_flagged():
    f0 = dyn.VectorField(2, lambda x: np.zeros_like(x))
    spec0 = pdmp.SystemSpec(f0, np.array([[1.0], [0.0]]), 1.0,
                            noise.isotropic_gaussian(1))
    rng = noise.stream(11, 0, "shoot-sing")
    out = cpl.shoot_match(spec0, [0.0, 0.0], [0.0, 0.5], [1.0], [[0.3]], rng)
    assert out.xi is None and out.singular


def test_run_coupling_equal_start():
    spec = mix_spec()
    pol = mix_policy()
    rec = cpl.run_coupling(spec, pol, [1.0], [1.0], 20.0, noise.stream(12, 0, "eqrun"))
    assert rec.K == 0.0 and rec.T == 0.0 and rec.tau_K == 0.0


def test_run_coupling_record_invariants():
    spec = mix_spec()
    pol = mix_policy()
    for i in range(30):
        rec = cpl.run_coupling(spec, pol, [2.0], [-2.0], 10.0,
                               noise.stream(13, i, "recrun"))
        if np.isfinite(rec.K):
            assert rec.I <= rec.J <= rec.K
            assert rec.T <= rec.tau_K + 1e-12
            assert rec.T == rec.tau_K
        assert rec.I <= rec.J or not np.isfinite(rec.J)


def test_record_validation_rejects_bad_order():
    with pytest.raises(ValueError):
        cpl.CouplingRecord(I=2.0, J=1.0, K=3.0, tau_K=1.0, T=1.0,
                           branches=(), horizon=10.0)
    with pytest.raises(ValueError):
        cpl.CouplingRecord(I=0.0, J=1.0, K=2.0, tau_K=1.0, T=2.0,
                           branches=(), horizon=10.0)


def test_policy_validation():
    with pytest.raises(ValueError):
        cpl.CouplingPolicy(x_hat=[0.0], r=-1.0)
    with pytest.raises(ValueError):
        cpl.CouplingPolicy(x_hat=[0.0], r=1.0, m=0)
    with pytest.raises(ValueError):
        cpl.CouplingPolicy(x_hat=[0.0], r=1.0, hit_mode="bogus")
    spec = mix_spec()
    pol_m2 = cpl.CouplingPolicy(x_hat=[0.0], r=1.0, m=2, hit_mode="exact-density")
    with pytest.raises(ValueError):
        cpl.block_couple(spec, pol_m2, [0.1], [-0.1], [0.3, 0.4],
                         noise.stream(14, 0, "bad"))
    spiral = build_preset("spiral_2d", {}).spec
    pol2 = cpl.CouplingPolicy(x_hat=[0.0, 0.0], r=1.0, m=1, hit_mode="exact-density")
    with pytest.raises(ValueError):
        cpl.block_couple(spiral, pol2, [0.1, 0.0], [0.0, 0.1], [0.3],
                         noise.stream(15, 0, "bad2"))


def test_lyapunov_radius_formula():
    assert cpl.lyapunov_radius(1.0, 0.0, 2.0) == 0.0
    val = cpl.lyapunov_radius(0.5, 1.0, 1.0)
    assert abs(val - 2 * np.sqrt((1.0 / 0.5) * (1 + 1.0 / 1.0))) < 1e-12
    pol = cpl.CouplingPolicy(x_hat=[3.0], r=0.5, R=1.0)
    assert pol.effective_R() == 3.5


def test_couple_ensemble_tail_and_geometric_K():
    spec = mix_spec()
    pol = mix_policy()
    res = cpl.couple_ensemble(spec, pol, [2.0], [-2.0], 25.0, 2000,
                              noise.Streams(16))
    assert np.isfinite(res.K).mean() > 0.95
    # Geometric block-count tail: log P{K > k} close to linear.
    ks = np.arange(0, 25, 2.0)
    surv = np.array([(res.K > k).mean() for k in ks])
    keep = surv > 0.01
    slope, intercept = np.polyfit(ks[keep], np.log(surv[keep]), 1)
    pred = intercept + slope * ks[keep]
    ss_res = np.sum((np.log(surv[keep]) - pred) ** 2)
    ss_tot = np.sum((np.log(surv[keep]) - np.log(surv[keep]).mean()) ** 2)
    assert slope < 0 and 1 - ss_res / ss_tot > 0.9


def test_couple_ensemble_marginal_smoke():
    # Exact-density mode must preserve each component's embedded-chain law.
    spec = mix_spec()
    pol = mix_policy()
    res = cpl.couple_ensemble(spec, pol, [2.0], [-2.0], 30.0, 2000,
                              noise.Streams(17), keep_blocks=(5,))
    z5, zp5 = res.block_states[5]
    plain_a, _ = pdmp.ensemble_embedded(spec, [2.0], 5, 2000, noise.Streams(18))
    plain_b, _ = pdmp.ensemble_embedded(spec, [-2.0], 5, 2000, noise.Streams(19))
    assert stats.ks_2samp(z5[:, 0], plain_a[:, 5, 0]).pvalue > 0.005
    assert stats.ks_2samp(zp5[:, 0], plain_b[:, 5, 0]).pvalue > 0.005


def test_coupling_inequality_cubic_gallery():
    # Histogram TV between the time-t marginals stays below the coalescence
    # survival plus twice the combined errors, on the nonlinear gallery too.
    spec = build_preset("cubic_1d", {"rate": 2.0}).spec
    pol = cpl.CouplingPolicy(x_hat=[0.0], r=0.8, m=1, hit_mode="exact-density",
                             R=3.0)
    t_grid = np.linspace(0.0, 8.0, 9)
    res = cpl.couple_ensemble(spec, pol, [1.5], [-1.5], 8.0, 1500,
                              noise.Streams(21), t_grid=t_grid)
    from jumpmix import diagnostics as dg
    surv, s_se, _ = dg.survival_curve(res.T, t_grid)
    for j in range(t_grid.size):
        tv, tv_se = dg.histogram_tv(res.grid_states[:, j], res.grid_states_p[:, j],
                                    bins=40, paired=True,
                                    rng=noise.stream(22, j, "boot"))
        assert tv <= surv[j] + 2 * (tv_se + s_se[j]) + 1e-12


def test_couple_ensemble_matches_single_runs():
    spec = mix_spec()
    pol = mix_policy()
    res = cpl.couple_ensemble(spec, pol, [2.0], [-2.0], 15.0, 4,
                              noise.Streams(20))
    for i in range(4):
        rec = cpl.run_coupling(spec, pol, [2.0], [-2.0], 15.0,
                               noise.stream(20, i, "couple"))
        assert rec.K == res.K[i]
        assert rec.tau_K == res.tau_K[i] or (np.isinf(rec.tau_K) and np.isinf(res.tau_K[i]))
