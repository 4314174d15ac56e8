"""Maximal couplings, the three-branch block coupling of the embedded chain,
its continuous-time lift, and coalescence-time bookkeeping.

One block engine serves both the single-run API and the replica ensemble;
blocks are committed atomically and branch choices use the states at block
start only.  Waiting times are always shared between the two components.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import flow, flow_batch
from .noise import JumpLaw, Streams, log_density_sum
from .pdmp import SystemSpec, block_jacobian, f_block, f_block_states

__all__ = [
    "Density",
    "CouplingPolicy",
    "CouplingRecord",
    "CouplingBudgetError",
    "ShootOutcome",
    "lyapunov_radius",
    "maximal_coupling_sample",
    "tv_quadrature",
    "block_couple",
    "BlockResult",
    "shoot_match",
    "run_coupling",
    "couple_ensemble",
    "merge_results",
    "CoupleEnsembleResult",
]

BRANCH_NAMES = {0: "equal", 1: "hit", 2: "miss", 3: "far", -1: "idle"}


class CouplingBudgetError(RuntimeError):
    """Rejection budget exceeded (densities nearly singular w.r.t. each other)."""


@dataclass(frozen=True)
class Density:
    """A samplable distribution with an evaluable density."""

    sampler: Callable[[np.random.Generator], np.ndarray]
    density: Callable[[np.ndarray], float]

    def sample(self, rng):
        return np.atleast_1d(np.asarray(self.sampler(rng), dtype=float))

    @staticmethod
    def from_jump_law(law: JumpLaw) -> "Density":
        return Density(lambda rng: law.sample(rng), lambda x: float(law.density(x)))


def lyapunov_radius(alpha: float, beta: float, rate: float) -> float:
    """Default compact-return radius from the dissipativity constants."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return 2.0 * np.sqrt(max(beta, 0.0) / alpha * (1.0 + rate / (2.0 * alpha)))


@dataclass(frozen=True)
class CouplingPolicy:
    """Parameters of the block coupling.

    ``x_hat`` and ``r`` locate the hit-attempt ball, ``m`` is the block
    length in jumps, ``R`` the compact-return radius (floored to contain
    the hit ball), and ``hit_mode`` selects how in-ball blocks try to
    coalesce: "exact-density" (m = 1, square invertible forcing only),
    "shooting" (Gauss-Newton matching), or "independent" (no attempt).
    """

    x_hat: np.ndarray
    r: float
    m: int = 1
    hit_mode: str = "exact-density"
    R: Optional[float] = None
    shoot_iters: int = 20
    shoot_tol: float = 1e-8
    rejection_budget: int = 100_000

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("ball radius r must be positive")
        if self.m < 1:
            raise ValueError("block length m must be at least 1")
        if self.hit_mode not in ("exact-density", "shooting", "independent"):
            raise ValueError(f"unknown hit_mode {self.hit_mode!r}")
        object.__setattr__(self, "x_hat", np.atleast_1d(np.asarray(self.x_hat, dtype=float)))

    def effective_R(self) -> float:
        lo = float(np.linalg.norm(self.x_hat)) + self.r
        return max(self.R if self.R is not None else 0.0, lo)


@dataclass(frozen=True)
class CouplingRecord:
    """One coupling run: block-indexed hitting times and coalescence times.

    I, J, K count jumps (multiples of the block length, or inf when the run
    was censored at the horizon); tau_K and T are the coalescence times of
    the embedded chain and of the continuous lift.
    """

    I: float
    J: float
    K: float
    tau_K: float
    T: float
    branches: tuple
    horizon: float

    def __post_init__(self):
        finite = np.isfinite([self.I, self.J, self.K])
        if finite.all() and self.K > 0:
            if not (self.I <= self.J <= self.K):
                raise ValueError(f"hitting times out of order: I={self.I} J={self.J} K={self.K}")
        if np.isfinite(self.T) and self.T > self.tau_K + 1e-12:
            raise ValueError("lift coalescence time exceeds tau_K")

    @property
    def coalesced(self) -> bool:
        return bool(np.isfinite(self.K))

    @property
    def censored(self) -> dict:
        return {"I": not np.isfinite(self.I), "J": not np.isfinite(self.J),
                "K": not np.isfinite(self.K)}


def maximal_coupling_sample(p, q, rng: np.random.Generator, budget: int = 100_000):
    """Draw (x, y, hit) with marginals exactly p and q and P{x != y} = TV(p, q).

    Draws x from p and accepts y = x with probability min(1, q(x)/p(x));
    on rejection, y is drawn from the normalized positive part (q - p)_+ by
    rejection sampling from q.  Conditioned on a miss, x and y are
    independent samples of the normalized parts (p - q)_+ and (q - p)_+.
    """
    x = np.atleast_1d(np.asarray(p.sample(rng), dtype=float))
    px = float(p.density(x))
    qx = float(q.density(x))
    ratio = np.inf if px <= 0 else qx / px
    if rng.random() <= ratio:
        return x, x.copy(), True
    for _ in range(budget):
        y = np.atleast_1d(np.asarray(q.sample(rng), dtype=float))
        qy = float(q.density(y))
        if qy <= 0:
            continue
        if rng.random() > float(p.density(y)) / qy:
            return x, y, False
    raise CouplingBudgetError(f"no residual sample accepted in {budget} draws")


def tv_quadrature(p, q, grid) -> float:
    """Total variation 0.5 * integral |p - q| on a uniform tensor grid (dim <= 3).

    ``grid`` is one axis (1-D) or a sequence of up to three axes.  Raises if
    either density's grid mass misses 1 by more than 1e-3 (support not
    covered).
    """
    pf = p.density if hasattr(p, "density") else p
    qf = q.density if hasattr(q, "density") else q
    axes = [np.asarray(grid, dtype=float)] if np.ndim(grid) == 1 else \
        [np.asarray(a, dtype=float) for a in grid]
    if len(axes) > 3:
        raise ValueError("quadrature grids support dimension <= 3")
    steps = [float(a[1] - a[0]) for a in axes]
    for a, h in zip(axes, steps):
        if not np.allclose(np.diff(a), h, rtol=1e-9, atol=1e-12):
            raise ValueError("grid axes must be uniformly spaced")
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    vol = float(np.prod(steps))
    pv = np.array([pf(x) for x in pts]) if len(axes) > 1 else _vec_density(pf, pts)
    qv = np.array([qf(x) for x in pts]) if len(axes) > 1 else _vec_density(qf, pts)
    for name, mass in (("p", pv.sum() * vol), ("q", qv.sum() * vol)):
        if abs(mass - 1.0) > 1e-3:
            raise ValueError(f"grid mass deficit for {name}: integral = {mass:.6f}")
    return float(np.clip(0.5 * np.sum(np.abs(pv - qv)) * vol, 0.0, 1.0))


def _vec_density(fn, pts):
    try:
        out = np.asarray(fn(pts), dtype=float)
        if out.shape == (pts.shape[0],):
            return out
    except Exception:
        pass
    return np.array([float(fn(x)) for x in pts])


@dataclass(frozen=True)
class ShootOutcome:
    """Result of a Gauss-Newton jump-matching attempt."""

    xi: Optional[np.ndarray]     # accepted matched jumps, or None
    converged: bool
    singular: bool
    accepted: bool
    iterations: int
    residual: float


def shoot_match(spec: SystemSpec, z, zp, s, xi, rng: np.random.Generator,
                iters: int = 20, tol: float = 1e-8) -> ShootOutcome:
    """Match the block endpoint from zp to the endpoint from (z, xi).

    Minimum-norm Gauss-Newton on the stacked jumps starting from xi, then a
    Metropolis-style acceptance with ratio between the block jump densities.
    Returns xi' on success; None on rank-deficiency, non-convergence, or
    rejection (the caller falls back to an independent draw).
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    xi = np.asarray(xi, dtype=float).reshape(s.size, spec.noise_dim)
    target = f_block(spec, z, s, xi)
    xi_p = xi.copy()
    res = np.inf
    converged = False
    for it in range(iters + 1):
        r = f_block(spec, zp, s, xi_p) - target
        res = float(np.linalg.norm(r))
        if res <= tol:
            converged = True
            break
        if it == iters:
            break
        J = block_jacobian(spec, zp, s, xi_p)
        delta, _, rank, _ = np.linalg.lstsq(J, r, rcond=None)
        if rank < spec.dim:
            return ShootOutcome(None, False, True, False, it, res)
        xi_p = xi_p - delta.reshape(s.size, spec.noise_dim)
    if not converged:
        return ShootOutcome(None, False, False, False, iters, res)
    log_ratio = log_density_sum(spec.law, xi_p) - log_density_sum(spec.law, xi)
    if np.log(rng.random() + 1e-300) <= log_ratio:
        return ShootOutcome(xi_p, True, False, True, it, res)
    return ShootOutcome(None, True, False, False, it, res)


@dataclass(frozen=True)
class BlockResult:
    """One committed coupling block."""

    z_next: np.ndarray
    zp_next: np.ndarray
    branch: str
    states: np.ndarray       # (m+1, d) intra-block states of the first component
    states_p: np.ndarray
    jumps: np.ndarray        # (m, n)
    jumps_p: np.ndarray


def _exact_density_ctx(spec: SystemSpec, policy: CouplingPolicy):
    if policy.hit_mode != "exact-density":
        return None
    d, n = spec.dim, spec.noise_dim
    if policy.m != 1 or d != n:
        raise ValueError("exact-density mode needs block length 1 and a square forcing matrix")
    try:
        Binv = np.linalg.inv(spec.B)
    except np.linalg.LinAlgError:
        raise ValueError("exact-density mode needs an invertible forcing matrix")
    return Binv


def _exact_density_couple(spec, Binv, a, ap, rng, budget):
    """Maximal coupling of the one-step pushforwards, at the jump level.

    The pushforward densities are law(Binv (y - a)) and law(Binv (y - ap))
    up to a common Jacobian factor, so all ratios reduce to law ratios.
    """
    law = spec.law
    delta = Binv @ (a - ap)
    xi = law.sample(rng)
    log_ratio = float(law.log_density(xi + delta) - law.log_density(xi))
    y = a + spec.B @ xi
    if np.log(rng.random() + 1e-300) <= log_ratio:
        return y, y.copy(), xi, xi + delta, True
    for _ in range(budget):
        xi2 = law.sample(rng)
        log_r = float(law.log_density(xi2 - delta) - law.log_density(xi2))
        if np.log(rng.random() + 1e-300) > log_r:
            return y, ap + spec.B @ xi2, xi, xi2, False
    raise CouplingBudgetError("pushforward residual sampling exhausted its budget")


def block_couple(spec: SystemSpec, policy: CouplingPolicy, z, zp, s,
                 rng: np.random.Generator) -> BlockResult:
    """Advance one coupled block of policy.m jumps with shared waiting times s.

    Branches on the states at block start: equal components stay equal with
    shared jumps; distinct components both inside B(x_hat, r) attempt a
    coalescing jump draw per hit_mode; anything else evolves with
    independent jump vectors.
    """
    z = np.asarray(z, dtype=float).reshape(spec.dim)
    zp = np.asarray(zp, dtype=float).reshape(spec.dim)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if s.size != policy.m:
        raise ValueError(f"expected {policy.m} waiting times, got {s.size}")
    law = spec.law

    if np.array_equal(z, zp):
        xi = law.sample(rng, policy.m)
        states = f_block_states(spec, z, s, xi)
        return BlockResult(states[-1], states[-1].copy(), "equal",
                           states, states.copy(), xi, xi.copy())

    in_ball = (np.linalg.norm(z - policy.x_hat) <= policy.r
               and np.linalg.norm(zp - policy.x_hat) <= policy.r)

    if in_ball and policy.hit_mode == "exact-density":
        Binv = _exact_density_ctx(spec, policy)
        a = flow(spec.f, z, s[0], spec.integrator)
        ap = flow(spec.f, zp, s[0], spec.integrator)
        y, yp, xi, xi_p, hit = _exact_density_couple(spec, Binv, a, ap, rng,
                                                     policy.rejection_budget)
        return BlockResult(y, yp, "hit" if hit else "miss",
                           np.stack([z, y]), np.stack([zp, yp]),
                           xi[None, :], xi_p[None, :])

    if in_ball and policy.hit_mode == "shooting":
        xi = law.sample(rng, policy.m)
        states = f_block_states(spec, z, s, xi)
        out = shoot_match(spec, z, zp, s, xi, rng, policy.shoot_iters, policy.shoot_tol)
        if out.xi is not None:
            states_p = f_block_states(spec, zp, s, out.xi)
            states_p[-1] = states[-1]        # snap within the solver tolerance
            return BlockResult(states[-1], states[-1].copy(), "hit",
                               states, states_p, xi, out.xi)
        xi_p = law.sample(rng, policy.m)
        states_p = f_block_states(spec, zp, s, xi_p)
        return BlockResult(states[-1], states_p[-1], "miss", states, states_p, xi, xi_p)

    # Independent jump directions: in-ball blocks in "independent" mode are
    # misses by construction, everything else is the far branch.
    xi = law.sample(rng, policy.m)
    xi_p = law.sample(rng, policy.m)
    states = f_block_states(spec, z, s, xi)
    states_p = f_block_states(spec, zp, s, xi_p)
    tag = "miss" if in_ball else "far"
    return BlockResult(states[-1], states_p[-1], tag, states, states_p, xi, xi_p)


@dataclass
class CoupleEnsembleResult:
    """Vectorized coupling runs: per-replica records plus marginal snapshots."""

    I: np.ndarray
    J: np.ndarray
    K: np.ndarray
    tau_K: np.ndarray
    T: np.ndarray
    branch_codes: list
    horizon: float
    t_grid: np.ndarray
    grid_states: Optional[np.ndarray]     # (replicas, |grid|, d)
    grid_states_p: Optional[np.ndarray]
    block_states: dict                    # block ordinal -> (Z, Zp) arrays

    @property
    def replicas(self) -> int:
        return self.I.size

    def record(self, i: int) -> CouplingRecord:
        return CouplingRecord(
            I=float(self.I[i]), J=float(self.J[i]), K=float(self.K[i]),
            tau_K=float(self.tau_K[i]), T=float(self.T[i]),
            branches=tuple(BRANCH_NAMES[c] for c in self.branch_codes[i]),
            horizon=self.horizon,
        )

    def records(self):
        return [self.record(i) for i in range(self.replicas)]


def couple_ensemble(spec: SystemSpec, policy: CouplingPolicy, x, xp, horizon: float,
                    replicas: int, rng, t_grid=None, keep_blocks: Sequence[int] = (),
                    batch_size: int = 2048, replica_offset: int = 0) -> CoupleEnsembleResult:
    """Run many coupling replicas in lockstep blocks with batched flows.

    ``rng`` is a Streams factory or integer seed; each replica owns stream
    (seed, replica, "couple"), so outputs are independent of batching across
    workers as long as batch_size is fixed.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    x = np.asarray(x, dtype=float).reshape(spec.dim)
    xp = np.asarray(xp, dtype=float).reshape(spec.dim)
    if isinstance(rng, (int, np.integer)):
        rng = Streams(int(rng))
    rngs = [rng.replica(replica_offset + i, "couple") for i in range(replicas)]

    t_grid = np.zeros(0) if t_grid is None else np.atleast_1d(np.asarray(t_grid, dtype=float))
    keep_blocks = tuple(sorted(set(int(b) for b in keep_blocks)))
    out = None
    for lo in range(0, replicas, batch_size):
        hi = min(lo + batch_size, replicas)
        part = _couple_batch(spec, policy, x, xp, horizon, rngs[lo:hi], t_grid, keep_blocks)
        out = part if out is None else merge_results(out, part)
    return out


def run_coupling(spec: SystemSpec, policy: CouplingPolicy, x, xp, horizon: float,
                 rng: np.random.Generator) -> CouplingRecord:
    """One coupling run; censored stopping times are reported as inf."""
    x = np.asarray(x, dtype=float).reshape(spec.dim)
    xp = np.asarray(xp, dtype=float).reshape(spec.dim)
    res = _couple_batch(spec, policy, x, xp, horizon, [rng], np.zeros(0), ())
    return res.record(0)


def merge_results(a: CoupleEnsembleResult, b: CoupleEnsembleResult) -> CoupleEnsembleResult:
    cat = np.concatenate
    blocks = {k: (cat([a.block_states[k][0], b.block_states[k][0]]),
                  cat([a.block_states[k][1], b.block_states[k][1]]))
              for k in a.block_states}
    return CoupleEnsembleResult(
        cat([a.I, b.I]), cat([a.J, b.J]), cat([a.K, b.K]),
        cat([a.tau_K, b.tau_K]), cat([a.T, b.T]),
        a.branch_codes + b.branch_codes, a.horizon, a.t_grid,
        None if a.grid_states is None else cat([a.grid_states, b.grid_states]),
        None if a.grid_states_p is None else cat([a.grid_states_p, b.grid_states_p]),
        blocks,
    )


def _couple_batch(spec, policy, x, xp, horizon, rngs, t_grid, keep_blocks):
    n_pairs = len(rngs)
    d, m = spec.dim, policy.m
    law = spec.law
    R_eff = policy.effective_R()
    exact_Binv = _exact_density_ctx(spec, policy)
    min_blocks = max(keep_blocks, default=0)

    Z = np.tile(x, (n_pairs, 1))
    Zp = np.tile(xp, (n_pairs, 1))
    tau = np.zeros(n_pairs)
    I = np.full(n_pairs, np.inf)
    J = np.full(n_pairs, np.inf)
    K = np.full(n_pairs, np.inf)
    tau_K = np.full(n_pairs, np.inf)
    branch_codes = [[] for _ in range(n_pairs)]
    grid_Z = np.full((n_pairs, t_grid.size, d), np.nan) if t_grid.size else None
    grid_Zp = np.full((n_pairs, t_grid.size, d), np.nan) if t_grid.size else None
    block_states = {}

    j = 0
    while True:
        in_time = tau <= horizon
        eq = np.all(Z == Zp, axis=1)
        # Stopping-time bookkeeping at the block boundary k = j*m; boundaries
        # past the horizon stay censored (inf).
        boundary = float(j * m)
        both_R = in_time & (np.linalg.norm(Z, axis=1) <= R_eff) \
            & (np.linalg.norm(Zp, axis=1) <= R_eff)
        both_r = (np.linalg.norm(Z - policy.x_hat, axis=1) <= policy.r) \
            & (np.linalg.norm(Zp - policy.x_hat, axis=1) <= policy.r)
        I[both_R & ~np.isfinite(I)] = boundary
        new_J = in_time & both_r & ~np.isfinite(J)
        J[new_J] = boundary
        new_K = in_time & eq & ~np.isfinite(K)
        K[new_K] = boundary
        tau_K[new_K] = tau[new_K]
        if j in keep_blocks:
            block_states[j] = (Z.copy(), Zp.copy())

        evolving = in_time | (j < min_blocks)
        if not np.any(evolving):
            break

        # Per-replica draw order is fixed: the block's waiting times first,
        # then branch-dependent jump draws, so results are independent of
        # batch composition.
        s_blk = np.zeros((n_pairs, m))
        for i in np.flatnonzero(evolving):
            s_blk[i] = rngs[i].exponential(1.0 / spec.rate, size=m)

        ball = evolving & ~eq & both_r
        code = np.full(n_pairs, -1, dtype=int)
        code[evolving & eq] = 0
        code[evolving & ~eq & ~ball] = 3
        if policy.hit_mode == "independent":
            code[ball] = 2

        shoot_rows = np.flatnonzero(ball) if policy.hit_mode == "shooting" else \
            np.zeros(0, dtype=int)
        stepped = evolving.copy()
        stepped[shoot_rows] = False

        # Shooting blocks run per pair (Gauss-Newton needs sequential flows).
        for i in shoot_rows:
            res = block_couple(spec, policy, Z[i], Zp[i], s_blk[i], rngs[i])
            _collect_grid(spec, t_grid, grid_Z, grid_Zp, i, tau[i], s_blk[i],
                          res.states, res.states_p)
            Z[i], Zp[i] = res.z_next, res.zp_next
            code[i] = 1 if res.branch == "hit" else 2
            tau[i] += s_blk[i].sum()

        step_idx = np.flatnonzero(stepped)
        eq0 = eq.copy()
        ball0 = ball.copy()
        for i_step in range(m):
            dur = np.where(stepped, s_blk[:, i_step], 0.0)
            if t_grid.size and step_idx.size:
                _collect_grid_step(spec, t_grid, grid_Z, grid_Zp, step_idx,
                                   tau, dur, Z, Zp, eq0)
            A = flow_batch(spec.f, Z, dur, spec.integrator)
            Ap = flow_batch(spec.f, Zp, np.where(stepped & ~eq0, dur, 0.0), spec.integrator)
            for i in step_idx:
                g = rngs[i]
                if eq0[i]:
                    Z[i] = A[i] + spec.B @ law.sample(g)
                    Zp[i] = Z[i]
                elif ball0[i] and policy.hit_mode == "exact-density":
                    y, yp, _, _, hit = _exact_density_couple(
                        spec, exact_Binv, A[i], Ap[i], g, policy.rejection_budget)
                    Z[i], Zp[i] = y, yp
                    code[i] = 1 if hit else 2
                else:
                    Z[i] = A[i] + spec.B @ law.sample(g)
                    Zp[i] = Ap[i] + spec.B @ law.sample(g)
            tau = tau + dur
        for i in np.flatnonzero(evolving):
            branch_codes[i].append(int(code[i]))
        j += 1

    T = tau_K.copy()   # lift coalescence time equals tau_K (flows injective)
    return CoupleEnsembleResult(I, J, K, tau_K, T, branch_codes, horizon, t_grid,
                                grid_Z, grid_Zp, block_states)


def _collect_grid_step(spec, t_grid, grid_Z, grid_Zp, step_idx, tau, dur, Z, Zp, eq):
    """Fill grid states for grid times inside the current segments."""
    for jg, t in enumerate(t_grid):
        rows = step_idx[(tau[step_idx] <= t) & (t < tau[step_idx] + dur[step_idx])]
        if rows.size == 0:
            continue
        grid_Z[rows, jg] = flow_batch(spec.f, Z[rows], t - tau[rows], spec.integrator)
        ne = rows[~eq[rows]]
        if ne.size:
            grid_Zp[ne, jg] = flow_batch(spec.f, Zp[ne], t - tau[ne], spec.integrator)
        eqr = rows[eq[rows]]
        if eqr.size:
            grid_Zp[eqr, jg] = grid_Z[eqr, jg]


def _collect_grid(spec, t_grid, grid_Z, grid_Zp, i, tau0, s, states, states_p):
    """Grid states inside one per-pair block (shooting path)."""
    if grid_Z is None or t_grid.size == 0:
        return
    t_cum = tau0 + np.concatenate([[0.0], np.cumsum(s)])
    for jg, t in enumerate(t_grid):
        k = int(np.searchsorted(t_cum, t, side="right")) - 1
        if 0 <= k < s.size and t_cum[k] <= t < t_cum[k + 1]:
            grid_Z[i, jg] = flow(spec.f, states[k], t - t_cum[k], spec.integrator)
            grid_Zp[i, jg] = flow(spec.f, states_p[k], t - t_cum[k], spec.integrator)
