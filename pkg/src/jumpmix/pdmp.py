"""The piecewise-deterministic jump-flow process: trajectories, the embedded
chain at jump times, and the deterministic block maps with their Jacobians.

`simulate` and `f_block` share one step routine, so feeding `f_block` a
trajectory's own waiting times and jumps reproduces its post-jump states
bit for bit.  The ensemble helpers batch replicas through the rescaled-time
integrator in fixed-size batches: fast, and deterministic for a given
(seed, batch_size) regardless of how batches are distributed over workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import (DEFAULT_INTEGRATOR, IntegratorConfig, VectorField,
                       flow, flow_batch, flow_jacobian)
from .noise import CompoundPoissonPath, JumpLaw, Streams, sample_path

__all__ = [
    "SystemSpec",
    "Trajectory",
    "MomentReport",
    "simulate",
    "f_block",
    "f_block_states",
    "block_jacobian",
    "empirical_moment",
    "ensemble_embedded",
    "ensemble_states_at",
]

DEFAULT_BATCH = 4096


@dataclass(frozen=True)
class SystemSpec:
    """The tuple (f, B, rate, jump law, integrator) defining the jump-flow SDE."""

    f: VectorField
    B: np.ndarray
    rate: float
    law: JumpLaw
    integrator: IntegratorConfig = DEFAULT_INTEGRATOR

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if B.shape[0] != self.f.dim:
            raise ValueError(f"B has {B.shape[0]} rows, field dimension is {self.f.dim}")
        if B.shape[1] != self.law.dim:
            raise ValueError(f"B has {B.shape[1]} columns, jump law dimension is {self.law.dim}")
        if self.rate <= 0:
            raise ValueError("jump rate must be positive")
        object.__setattr__(self, "B", B)

    @property
    def dim(self) -> int:
        return self.f.dim

    @property
    def noise_dim(self) -> int:
        return self.law.dim


def _step(spec: SystemSpec, x: np.ndarray, s: float, xi: np.ndarray) -> np.ndarray:
    """One embedded-chain step: flow for s, then add B xi."""
    return flow(spec.f, x, s, spec.integrator) + spec.B @ xi


@dataclass(frozen=True)
class Trajectory:
    """A cadlag jump-flow trajectory: jump skeleton plus on-demand flows.

    Only post-jump states are stored; evaluation between jumps re-integrates
    the segment, so memory scales with the jump count.
    """

    spec: SystemSpec
    x0: np.ndarray
    path: CompoundPoissonPath
    post_jump_states: np.ndarray   # (k+1, d); row 0 is x0

    @property
    def horizon(self) -> float:
        return self.path.horizon

    def state_after_jump(self, k: int) -> np.ndarray:
        return self.post_jump_states[k]

    def jump_count(self, t: float) -> int:
        return self.path.count_at(t)

    def at(self, t: float) -> np.ndarray:
        """Evaluate the trajectory at time t in [0, horizon] (cadlag)."""
        if t < 0 or t > self.horizon + 1e-12:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        k = self.path.count_at(t)
        tau_k = 0.0 if k == 0 else self.path.jump_times[k - 1]
        return flow(self.spec.f, self.post_jump_states[k], t - tau_k, self.spec.integrator)

    def __call__(self, t: float) -> np.ndarray:
        return self.at(t)


def simulate(spec: SystemSpec, x0, T: float, rng: np.random.Generator) -> Trajectory:
    """Simulate the jump-flow process on [0, T]."""
    if T <= 0:
        raise ValueError("horizon must be positive")
    x0 = np.asarray(x0, dtype=float).reshape(spec.dim)
    path = sample_path(spec.rate, spec.law, T, rng)
    states = np.empty((path.count + 1, spec.dim))
    states[0] = x0
    waits = path.waiting_times()
    for k in range(path.count):
        states[k + 1] = _step(spec, states[k], waits[k], path.jumps[k])
    return Trajectory(spec, x0, path, states)


def trajectory_from_path(spec: SystemSpec, x0, path: CompoundPoissonPath) -> Trajectory:
    """Deterministically evolve an explicitly given jump path."""
    x0 = np.asarray(x0, dtype=float).reshape(spec.dim)
    states = f_block_states(spec, x0, path.waiting_times(), path.jumps)
    return Trajectory(spec, x0, path, states)


def f_block(spec: SystemSpec, x, s, xi) -> np.ndarray:
    """Deterministic block map: x after k flow-plus-jump steps (k = 0 gives x)."""
    return f_block_states(spec, x, s, xi)[-1]


def f_block_states(spec: SystemSpec, x, s, xi) -> np.ndarray:
    """All intermediate states of the block map, shape (k+1, d)."""
    x = np.asarray(x, dtype=float).reshape(spec.dim)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    xi = np.asarray(xi, dtype=float).reshape(-1, spec.noise_dim) if np.size(xi) else \
        np.zeros((0, spec.noise_dim))
    if s.size != xi.shape[0]:
        raise ValueError("waiting times and jumps must have equal length")
    out = np.empty((s.size + 1, spec.dim))
    out[0] = x
    for k in range(s.size):
        out[k + 1] = _step(spec, out[k], s[k], xi[k])
    return out


def block_jacobian(spec: SystemSpec, x, s, xi) -> np.ndarray:
    """Derivative of the block map in the stacked jump variables, d x (k n).

    Column block j is the product of the flow Jacobians of the later
    segments applied to B (variational equation through each segment).
    """
    x = np.asarray(x, dtype=float).reshape(spec.dim)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    xi = np.asarray(xi, dtype=float).reshape(-1, spec.noise_dim)
    k, d, n = s.size, spec.dim, spec.noise_dim
    if k == 0:
        return np.zeros((d, 0))
    phis = []
    z = x
    for i in range(k):
        z, M = flow_jacobian(spec.f, z, s[i], spec.integrator)
        z = z + spec.B @ xi[i]
        phis.append(M)
    J = np.empty((d, k * n))
    suffix = np.eye(d)                      # product Phi_k ... Phi_{j+2}
    for j in range(k - 1, -1, -1):
        J[:, j * n:(j + 1) * n] = suffix @ spec.B
        suffix = suffix @ phis[j]
    return J


# ---------------------------------------------------------------------------
# Ensemble drivers


def _replica_streams(rng, replicas: int, tag: str, offset: int = 0):
    if isinstance(rng, (int, np.integer)):
        rng = Streams(int(rng))
    if isinstance(rng, Streams):
        return [rng.replica(offset + i, tag) for i in range(replicas)]
    raise TypeError("ensemble drivers need a Streams factory or an integer seed")


def ensemble_embedded(spec: SystemSpec, x0, n_steps: int, replicas: int, rng,
                      batch_size: int = DEFAULT_BATCH, replica_offset: int = 0):
    """Embedded-chain states for many replicas, shape (replicas, n_steps+1, d).

    Also returns the waiting times, shape (replicas, n_steps).
    """
    x0 = np.asarray(x0, dtype=float).reshape(spec.dim)
    streams = _replica_streams(rng, replicas, "embedded", replica_offset)
    states = np.empty((replicas, n_steps + 1, spec.dim))
    waits = np.empty((replicas, n_steps))
    for lo in range(0, replicas, batch_size):
        hi = min(lo + batch_size, replicas)
        X = np.tile(x0, (hi - lo, 1))
        states[lo:hi, 0] = X
        for k in range(n_steps):
            sk = np.empty(hi - lo)
            xik = np.empty((hi - lo, spec.noise_dim))
            for i in range(hi - lo):
                g = streams[lo + i]
                sk[i] = g.exponential(1.0 / spec.rate)
                xik[i] = spec.law.sample(g)
            X = flow_batch(spec.f, X, sk, spec.integrator) + xik @ spec.B.T
            states[lo:hi, k + 1] = X
            waits[lo:hi, k] = sk
    return states, waits


def ensemble_states_at(spec: SystemSpec, x0, t_grid, replicas: int, rng,
                       batch_size: int = DEFAULT_BATCH, replica_offset: int = 0):
    """Process states at the given times for many replicas, (replicas, |grid|, d)."""
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if np.any(t_grid < 0):
        raise ValueError("grid times must be nonnegative")
    T = float(t_grid.max(initial=0.0))
    x0 = np.asarray(x0, dtype=float).reshape(spec.dim)
    streams = _replica_streams(rng, replicas, "grid", replica_offset)
    out = np.empty((replicas, t_grid.size, spec.dim))
    for lo in range(0, replicas, batch_size):
        hi = min(lo + batch_size, replicas)
        m = hi - lo
        # Per-replica jump skeletons on [0, T], evolved in lockstep over the
        # maximal jump count (rows past their own count flow with duration 0).
        paths = [sample_path(spec.rate, spec.law, T, streams[lo + i]) if T > 0 else None
                 for i in range(m)]
        kmax = max((p.count for p in paths if p is not None), default=0)
        X = np.tile(x0, (m, 1))
        # states[i][k] = post-jump state after jump k for replica i
        skeleton = np.empty((m, kmax + 1, spec.dim))
        skeleton[:, 0] = X
        for k in range(kmax):
            dur = np.zeros(m)
            add = np.zeros((m, spec.noise_dim))
            for i, p in enumerate(paths):
                if p is not None and k < p.count:
                    dur[i] = p.jump_times[k] - (p.jump_times[k - 1] if k else 0.0)
                    add[i] = p.jumps[k]
            X = flow_batch(spec.f, X, dur, spec.integrator) + add @ spec.B.T
            skeleton[:, k + 1] = X
        for j, t in enumerate(t_grid):
            ks = np.array([p.count_at(t) if p is not None else 0 for p in paths])
            taus = np.array([0.0 if ki == 0 else paths[i].jump_times[ki - 1]
                             for i, ki in enumerate(ks)])
            base = skeleton[np.arange(m), ks]
            out[lo:hi, j] = flow_batch(spec.f, base, t - taus, spec.integrator)
    return out


@dataclass(frozen=True)
class MomentReport:
    """Monte Carlo second-moment estimates with standard errors."""

    k: np.ndarray
    embedded: np.ndarray
    embedded_stderr: np.ndarray
    t: np.ndarray
    continuous: np.ndarray
    continuous_stderr: np.ndarray
    replicas: int


def empirical_moment(spec: SystemSpec, x0, k_max: int, t_grid, replicas: int, rng,
                     batch_size: int = DEFAULT_BATCH, replica_offset: int = 0) -> MomentReport:
    """Estimate E||X_{tau_k}||^2 for k <= k_max and E||X_t||^2 on t_grid."""
    if replicas < 100:
        raise ValueError("need at least 100 replicas for meaningful standard errors")
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")
    states, _ = ensemble_embedded(spec, x0, k_max, replicas, rng, batch_size, replica_offset)
    sq = np.sum(states ** 2, axis=2)                       # (replicas, k_max+1)
    emb = sq.mean(axis=0)
    emb_se = sq.std(axis=0, ddof=1) / np.sqrt(replicas)
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if t_grid.size:
        grid_states = ensemble_states_at(spec, x0, t_grid, replicas, rng, batch_size,
                                         replica_offset)
        gsq = np.sum(grid_states ** 2, axis=2)
        cont = gsq.mean(axis=0)
        cont_se = gsq.std(axis=0, ddof=1) / np.sqrt(replicas)
    else:
        cont = np.zeros(0)
        cont_se = np.zeros(0)
    return MomentReport(np.arange(k_max + 1), emb, emb_se, t_grid, cont, cont_se, replicas)
