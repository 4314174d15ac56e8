import numpy as np
import pytest
from scipy import stats

from jumpmix import noise


ALL_LAWS = [
    noise.isotropic_gaussian(1),
    noise.product_laplace(1),
    noise.gaussian_mixture(1),
]


def test_sample_path_jump_count():
    g = noise.stream(10, 0, "count")
    counts = [noise.sample_path(2.0, noise.isotropic_gaussian(3), 10.0, g).count
              for _ in range(400)]
    mean = np.mean(counts)
    se = np.std(counts, ddof=1) / np.sqrt(len(counts))
    assert abs(mean - 20.0) < 3 * se + 0.5


def test_waiting_times_exponential_ks():
    g = noise.stream(11, 0, "ks")
    lam = 1.7
    waits = []
    while len(waits) < 100_000:
        p = noise.sample_path(lam, noise.isotropic_gaussian(1), 200.0, g)
        waits.extend(p.waiting_times().tolist())
    waits = np.asarray(waits[:100_000])
    p_val = stats.kstest(waits, "expon", args=(0, 1 / lam)).pvalue
    assert p_val > 0.01


def test_second_moment_gaussian_3d():
    g = noise.stream(12, 0, "lam")
    law = noise.isotropic_gaussian(3)
    draws = law.sample(g, 100_000)
    sq = np.sum(draws ** 2, axis=1)
    se = sq.std(ddof=1) / np.sqrt(sq.size)
    assert abs(sq.mean() - 3.0) < 3 * se
    assert law.second_moment == 3.0


def test_waiting_jump_independence():
    g = noise.stream(13, 0, "indep")
    law = noise.isotropic_gaussian(2)
    waits, jumps = [], []
    while len(waits) < 100_000:
        p = noise.sample_path(1.0, law, 500.0, g)
        waits.extend(p.waiting_times().tolist())
        jumps.extend(p.jumps.tolist())
    waits = np.asarray(waits[:100_000])
    jumps = np.asarray(jumps[:100_000])
    for j in range(2):
        corr = np.corrcoef(waits, jumps[:, j])[0, 1]
        assert abs(corr) < 3.0 / np.sqrt(waits.size)


@pytest.mark.parametrize("law", ALL_LAWS, ids=lambda l: l.name)
def test_density_normalization_quadrature(law):
    grid = np.linspace(-30, 30, 20001)[:, None]
    mass = law.density(grid).sum() * (grid[1, 0] - grid[0, 0])
    assert 0.999 <= mass <= 1.001


def test_density_normalization_2d():
    law = noise.isotropic_gaussian(2)
    ax = np.linspace(-8, 8, 201)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    mass = law.density(pts).sum() * (ax[1] - ax[0]) ** 2
    assert 0.999 <= mass <= 1.001


@pytest.mark.parametrize("law", ALL_LAWS, ids=lambda l: l.name)
def test_density_strict_positivity(law):
    probe = np.linspace(-20, 20, 101)[:, None]
    assert np.all(law.density(probe) > 0)


@pytest.mark.parametrize("law", ALL_LAWS, ids=lambda l: l.name)
def test_sampler_matches_density(law):
    # Goodness of fit: KS against the CDF obtained by quadrature of the
    # declared density, fully independent of the sampler.
    g = noise.stream(14, 0, law.name)
    draws = law.sample(g, 50_000)[:, 0]
    grid = np.linspace(-40, 40, 160_001)
    pdf = law.density(grid[:, None])
    cdf = np.cumsum(pdf)
    cdf /= cdf[-1]
    p_val = stats.kstest(draws, lambda q: np.interp(q, grid, cdf)).pvalue
    assert p_val > 0.01


@pytest.mark.parametrize("law", ALL_LAWS, ids=lambda l: l.name)
def test_declared_second_moment(law):
    g = noise.stream(15, 0, "mom" + law.name)
    draws = law.sample(g, 200_000)
    sq = np.sum(draws ** 2, axis=1)
    se = sq.std(ddof=1) / np.sqrt(sq.size)
    assert abs(sq.mean() - law.second_moment) < 4 * se


def test_waiting_exp_moment_exact():
    assert noise.waiting_exp_moment(1.0, 0.0, 5) == 1.0
    assert noise.waiting_exp_moment(2.0, 1.0, 3) == 8.0
    with pytest.raises(ValueError):
        noise.waiting_exp_moment(2.0, 2.0, 1)
    with pytest.raises(ValueError):
        noise.waiting_exp_moment(1.0, 2.0, 1)


def test_waiting_exp_moment_monte_carlo():
    # Oracle: the closed form (lam/(lam-c))^k = 8 at lam=2, c=1, k=3.
    g = noise.stream(16, 0, "expmom")
    n = 1_000_000
    tau3 = g.exponential(0.5, size=(n, 3)).sum(axis=1)
    vals = np.exp(tau3)
    est = vals.mean()
    se = vals.std(ddof=1) / np.sqrt(n)
    assert abs(est - 8.0) < 3 * se


def test_density_product_examples():
    law = noise.isotropic_gaussian(1)
    assert noise.density_product(law, []) == 1.0
    val = noise.density_product(law, [[0.0], [0.0]])
    assert abs(val - 1.0 / (2 * np.pi)) < 1e-12


def test_log_density_sum_matches_product():
    g = noise.stream(17, 0, "logprod")
    for law in ALL_LAWS:
        xi = law.sample(g, 6)
        prod = noise.density_product(law, xi)
        logs = noise.log_density_sum(law, xi)
        assert abs(np.log(prod) - logs) < 1e-12


def test_streams_deterministic_and_split():
    a = noise.stream(42, 3, "x").normal(size=5)
    b = noise.stream(42, 3, "x").normal(size=5)
    assert np.array_equal(a, b)
    c = noise.stream(42, 4, "x").normal(size=5)
    d = noise.stream(42, 3, "y").normal(size=5)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
    s = noise.Streams(42)
    assert np.array_equal(s.replica(3, "x").normal(size=5), a)


def test_path_validation():
    with pytest.raises(ValueError):
        noise.CompoundPoissonPath(1.0, np.array([1.0, 0.5]), np.zeros((2, 1)), 2.0)
    with pytest.raises(ValueError):
        noise.CompoundPoissonPath(1.0, np.array([1.0, 3.0]), np.zeros((2, 1)), 2.0)
    p = noise.CompoundPoissonPath(1.0, np.array([0.5, 1.5]), np.ones((2, 1)), 2.0)
    assert p.count_at(0.4) == 0
    assert p.count_at(0.5) == 1
    assert p.count_at(2.0) == 2
