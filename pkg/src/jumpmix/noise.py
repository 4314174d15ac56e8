"""Compound Poisson paths, jump laws with evaluable densities, and RNG streams.

Jump laws are immutable; sampling always goes through an explicitly owned
generator, and the `Streams` factory hands out counter-based per-replica
streams so results never depend on worker scheduling.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "JumpLaw",
    "CompoundPoissonPath",
    "Streams",
    "stream",
    "isotropic_gaussian",
    "product_laplace",
    "gaussian_mixture",
    "sample_path",
    "waiting_exp_moment",
    "density_product",
    "log_density_sum",
]


def _tag_int(tag: str) -> int:
    # Stable across processes (the builtin hash is salted).
    return int.from_bytes(hashlib.blake2s(tag.encode(), digest_size=4).digest(), "little")


def stream(seed: int, replica: int = 0, tag: str = "") -> np.random.Generator:
    """Counter-based generator keyed by (master seed, replica index, purpose tag)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replica), _tag_int(tag)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Streams:
    """Splittable stream factory for a master seed."""

    seed: int

    def replica(self, index: int, tag: str = "") -> np.random.Generator:
        return stream(self.seed, index, tag)

    def single(self, tag: str = "") -> np.random.Generator:
        return stream(self.seed, 0, tag)


@dataclass(frozen=True)
class JumpLaw:
    """A jump distribution on R^n with sampler, density, and second moment.

    The density must be continuous and strictly positive on all of R^n and
    the sampler must draw from the same law (both are validated by the test
    suite, not at construction).  ``second_moment`` is E ||eta||^2.
    """

    dim: int
    sampler: Callable[[np.random.Generator, int], np.ndarray]  # (rng, size) -> (size, n)
    density: Callable[[np.ndarray], np.ndarray]                # (..., n) -> (...,)
    log_density: Callable[[np.ndarray], np.ndarray]
    second_moment: float
    name: str = "custom"

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        if size is None:
            return self.sampler(rng, 1)[0]
        return self.sampler(rng, size)


def isotropic_gaussian(n: int, sigma: float = 1.0) -> JumpLaw:
    """Centered isotropic Gaussian on R^n; E||eta||^2 = n sigma^2."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    c = -0.5 * n * np.log(2 * np.pi * sigma * sigma)

    def logd(x):
        x = np.asarray(x, dtype=float)
        return c - 0.5 * np.sum(x * x, axis=-1) / (sigma * sigma)

    return JumpLaw(
        dim=n,
        sampler=lambda rng, size: rng.normal(0.0, sigma, size=(size, n)),
        density=lambda x: np.exp(logd(x)),
        log_density=logd,
        second_moment=n * sigma * sigma,
        name=f"gaussian(sigma={sigma})",
    )


def product_laplace(n: int, scale: float = 1.0) -> JumpLaw:
    """Product of centered Laplace marginals; E||eta||^2 = 2 n scale^2."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    c = -n * np.log(2 * scale)

    def logd(x):
        x = np.asarray(x, dtype=float)
        return c - np.sum(np.abs(x), axis=-1) / scale

    return JumpLaw(
        dim=n,
        sampler=lambda rng, size: rng.laplace(0.0, scale, size=(size, n)),
        density=lambda x: np.exp(logd(x)),
        log_density=logd,
        second_moment=2 * n * scale * scale,
        name=f"laplace(scale={scale})",
    )


def gaussian_mixture(n: int, weight: float = 0.5, mean1=None, mean2=None,
                     sigma1: float = 1.0, sigma2: float = 0.5) -> JumpLaw:
    """Two-component isotropic Gaussian mixture (exercises non-log-concavity)."""
    if not 0 < weight < 1:
        raise ValueError("weight must lie in (0, 1)")
    m1 = np.zeros(n) if mean1 is None else np.asarray(mean1, dtype=float).reshape(n)
    m2 = np.full(n, 1.5) if mean2 is None else np.asarray(mean2, dtype=float).reshape(n)
    w = np.array([weight, 1.0 - weight])
    means = [m1, m2]
    sigmas = [sigma1, sigma2]
    norms = [(2 * np.pi * s * s) ** (-n / 2) for s in sigmas]

    def dens(x):
        x = np.asarray(x, dtype=float)
        out = 0.0
        for wi, mi, si, ci in zip(w, means, sigmas, norms):
            out = out + wi * ci * np.exp(-0.5 * np.sum((x - mi) ** 2, axis=-1) / (si * si))
        return out

    def sampler(rng, size):
        comp = rng.random(size) < weight
        out = np.empty((size, n))
        for i, flag in enumerate(comp):
            j = 0 if flag else 1
            out[i] = rng.normal(means[j], sigmas[j])
        return out

    lam2 = sum(wi * (mi @ mi + n * si * si) for wi, mi, si in zip(w, means, sigmas))
    return JumpLaw(
        dim=n,
        sampler=sampler,
        density=dens,
        log_density=lambda x: np.log(dens(x)),
        second_moment=float(lam2),
        name="gaussian_mixture",
    )


@dataclass(frozen=True)
class CompoundPoissonPath:
    """Jump times and jump vectors of a compound Poisson process on [0, horizon]."""

    rate: float
    jump_times: np.ndarray       # increasing, all <= horizon
    jumps: np.ndarray            # (k, n)
    horizon: float

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=float)
        js = np.atleast_2d(np.asarray(self.jumps, dtype=float)) if np.size(self.jumps) else \
            np.zeros((0, 1))
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        if jt.size != js.shape[0]:
            raise ValueError("jump_times and jumps must have equal length")
        if jt.size and (np.any(np.diff(jt) <= 0) or jt[0] <= 0):
            raise ValueError("waiting times must be strictly positive")
        if jt.size and jt[-1] > self.horizon:
            raise ValueError("jump times must not exceed the horizon")
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "jumps", js)

    @property
    def count(self) -> int:
        return int(self.jump_times.size)

    def waiting_times(self) -> np.ndarray:
        return np.diff(self.jump_times, prepend=0.0)

    def count_at(self, t: float) -> int:
        """N_t: number of jumps up to and including time t."""
        return int(np.searchsorted(self.jump_times, t, side="right"))


def sample_path(rate: float, law: JumpLaw, T: float, rng: np.random.Generator) -> CompoundPoissonPath:
    """Sample a compound Poisson path: Exp(rate) waiting times, i.i.d. jumps."""
    if rate <= 0 or T <= 0:
        raise ValueError("rate and horizon must be positive")
    times = []
    t = 0.0
    while True:
        # Draw waiting times in growing chunks to amortize generator calls.
        chunk = rng.exponential(1.0 / rate, size=max(8, int(1.2 * rate * max(T - t, 0)) + 1))
        for w in chunk:
            t += w
            if t > T:
                break
            times.append(t)
        if t > T:
            break
    k = len(times)
    jumps = law.sample(rng, k) if k else np.zeros((0, law.dim))
    return CompoundPoissonPath(rate, np.asarray(times), jumps, T)


def waiting_exp_moment(rate: float, c: float, k: int) -> float:
    """E exp(c tau_k) = (rate / (rate - c))^k for c < rate, exactly."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    if k < 0:
        raise ValueError("k must be a nonnegative integer")
    if c >= rate:
        raise ValueError(f"exponential moment infinite for c={c} >= rate={rate}")
    return float((rate / (rate - c)) ** k)


def density_product(law: JumpLaw, xi) -> float:
    """Product of per-jump densities over a block of jumps (empty product = 1)."""
    xi = np.asarray(xi, dtype=float)
    if xi.size == 0:
        return 1.0
    xi = xi.reshape(-1, law.dim)
    return float(np.prod(law.density(xi)))


def log_density_sum(law: JumpLaw, xi) -> float:
    """Sum of per-jump log densities (log of `density_product`)."""
    xi = np.asarray(xi, dtype=float)
    if xi.size == 0:
        return 0.0
    xi = xi.reshape(-1, law.dim)
    return float(np.sum(law.log_density(xi)))
