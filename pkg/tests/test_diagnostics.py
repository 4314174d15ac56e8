import numpy as np
import pytest

from jumpmix import diagnostics as dg
from jumpmix import noise
from jumpmix.gallery import build_preset


def test_histogram_tv_identical_sets():
    g = noise.stream(0, 0, "tv-id")
    a = g.normal(size=5000)
    tv, se = dg.histogram_tv(a, a, bins=50)
    assert tv == 0.0


def test_histogram_tv_gaussian_pair():
    # Oracle: quadrature TV of N(0,1) vs N(1,1) is 0.3829.
    ga = noise.stream(1, 0, "tv-a")
    gb = noise.stream(2, 0, "tv-b")
    a = ga.normal(0.0, 1.0, 100_000)
    b = gb.normal(1.0, 1.0, 100_000)
    tv, se = dg.histogram_tv(a, b, bins=100)
    assert abs(tv - 0.383) < 0.01
    assert 0 < se < 0.01


def test_histogram_tv_disjoint():
    ga = noise.stream(3, 0, "tv-u1")
    gb = noise.stream(4, 0, "tv-u2")
    n = 20_000
    a = ga.uniform(0, 1, n)
    b = gb.uniform(2, 3, n)
    tv, _ = dg.histogram_tv(a, b, bins=40)
    assert tv > 1 - 100.0 / n


def test_histogram_tv_validation():
    with pytest.raises(ValueError):
        dg.histogram_tv(np.zeros((10, 4)), np.zeros((10, 4)))
    with pytest.raises(ValueError):
        dg.histogram_tv(np.zeros((0, 1)), np.zeros((5, 1)))
    with pytest.raises(ValueError):
        dg.histogram_tv(np.zeros(5), np.zeros(6), paired=True)


def test_histogram_tv_paired_mode_cancels_noise():
    g = noise.stream(5, 0, "tv-paired")
    a = g.normal(size=20_000)
    b = a.copy()
    b[:200] += 3.0     # only 1% of pairs differ
    tv, se = dg.histogram_tv(a, b, paired=True, rng=noise.stream(6, 0, "boot"))
    assert tv < 0.02
    assert se < 0.005


def test_histogram_tv_2d():
    ga = noise.stream(7, 0, "tv2a")
    gb = noise.stream(8, 0, "tv2b")
    a = ga.normal(size=(30_000, 2))
    b = gb.normal(size=(30_000, 2)) + [1.0, 0.0]
    tv, _ = dg.histogram_tv(a, b, bins=30)
    assert 0.25 < tv < 0.55


def test_mixing_fit_exact_exponential():
    t = np.linspace(0, 10, 20)
    rep = dg.mixing_fit(t, np.exp(-0.7 * t))
    assert abs(rep.c - 0.7) < 1e-10
    assert abs(rep.C - 1.0) < 1e-10
    assert rep.r_squared > 1 - 1e-12
    assert rep.mixing


def test_mixing_fit_noisy_rate_recovery():
    # Noise model: 5% multiplicative noise on an exact exponential.
    g = noise.stream(9, 0, "fit-noise")
    t = np.linspace(0, 8, 30)
    vals = np.exp(-0.7 * t) * (1 + 0.05 * g.normal(size=t.size))
    rep = dg.mixing_fit(t, vals, 0.05 * np.exp(-0.7 * t))
    assert 0.6 <= rep.c <= 0.8


def test_mixing_fit_constant_curve_flagged():
    t = np.linspace(0, 10, 12)
    rep = dg.mixing_fit(t, np.full(12, 0.4))
    assert abs(rep.c) < 1e-10
    assert not rep.mixing


def test_mixing_fit_planted_rates_within_ten_percent():
    g = noise.stream(10, 0, "fit-planted")
    for rate in (0.3, 0.9, 2.0):
        t = np.linspace(0, 4 / rate, 25)
        n = 10_000
        surv = np.exp(-rate * t)
        noisy = surv + g.normal(size=t.size) * np.sqrt(surv * (1 - surv) / n)
        keep = noisy > 0.01
        rep = dg.mixing_fit(t[keep], noisy[keep],
                            np.sqrt(surv[keep] * (1 - surv[keep]) / n))
        assert abs(rep.c - rate) < 0.1 * rate


def test_mixing_fit_needs_points():
    with pytest.raises(ValueError):
        dg.mixing_fit([1.0, 2.0], [0.5, 0.4])
    with pytest.raises(ValueError):
        dg.mixing_fit([1, 2, 3, 4], [0.5, -0.1, 0.0, 0.2])


def test_survival_curve_with_censoring():
    times = np.array([1.0, 2.0, np.inf, np.inf])
    surv, se, frac = dg.survival_curve(times, [0.5, 1.5, 3.0], horizon=5.0)
    assert np.allclose(surv, [1.0, 0.75, 0.5])
    assert frac == 0.5
    with pytest.raises(ValueError):
        dg.survival_curve(times, [6.0], horizon=5.0)


def test_tail_fit_window():
    times = np.concatenate([np.linspace(0, 10, 100), [np.inf] * 5])
    cut = dg.tail_fit_window(times)
    assert 9.0 < cut <= 10.0


def test_invariant_estimate_linear_oracles():
    # Oracles: continuous stationary rate*Lambda/(2 alpha) = 1.0 and
    # embedded stationary Lambda/(1 - rho) = 2.0.
    preset = build_preset("linear_1d", {"alpha": 0.5, "rate": 1.0})
    summ = dg.invariant_estimate(preset.spec, 20.0, 6000, noise.Streams(11), dt=1.0)
    assert abs(summ.second_moment - 1.0) <= 3 * summ.second_moment_stderr + 0.03
    assert abs(summ.embedded_second_moment - 2.0) <= \
        3 * summ.embedded_second_moment_stderr + 0.06
    assert len(summ.histograms) == 1
    edges, mass = summ.histograms[0]
    assert abs(mass.sum() - 1.0) < 1e-12


def test_invariant_estimate_initial_condition_independent():
    preset = build_preset("linear_1d", {"alpha": 0.5, "rate": 1.0})
    s1 = dg.invariant_estimate(preset.spec, 20.0, 4000, noise.Streams(12), dt=1.0,
                               x0=[4.0])
    s2 = dg.invariant_estimate(preset.spec, 20.0, 4000, noise.Streams(13), dt=1.0,
                               x0=[-3.0])
    spread = 3 * np.hypot(s1.second_moment_stderr, s2.second_moment_stderr)
    assert abs(s1.second_moment - s2.second_moment) <= spread + 0.02
