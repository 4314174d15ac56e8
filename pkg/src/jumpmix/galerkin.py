"""Spectral truncation of a parabolic equation on the torus: trigonometric
basis, dealiased pseudo-spectral nonlinearity, product subspace towers, and
constructive steering with the two-control scaling move.

Coefficient vectors are taken w.r.t. the L2-normalized trigonometric basis,
so the Euclidean norm of a coefficient vector equals the L2 norm of the
function and the dissipativity and coupling machinery apply verbatim.
Basis order: the constant mode first, then (cos, sin) pairs sorted by
l1 frequency; the first 2D+1 entries span the forcing space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations_with_replacement, product
from typing import Callable, Optional

import numpy as np

from .dynamics import (ControlSignal, FlowError, IntegratorConfig,
                       DEFAULT_INTEGRATOR, VectorField, flow)

__all__ = [
    "ScalarFn",
    "G_ZERO",
    "g_sin",
    "g_bump",
    "GalerkinSystem",
    "SubspaceTower",
    "build_field",
    "embedding_matrix",
    "project_function",
    "plain_coeffs",
    "subspace_tower",
    "scaling_control_endpoint",
    "synthesize_steering",
    "SteeringResult",
]


@dataclass(frozen=True)
class ScalarFn:
    """A smooth scalar function with optional exact derivatives.

    ``dk(u, k)`` returns the k-th derivative; when absent, fields built from
    this function fall back to finite differences for deep brackets.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    d1: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dk: Optional[Callable[[np.ndarray, int], np.ndarray]] = None
    name: str = "custom"


G_ZERO = ScalarFn(fn=lambda u: np.zeros_like(u), d1=lambda u: np.zeros_like(u),
                  dk=lambda u, k: np.zeros_like(u), name="zero")


def g_sin(amp: float = 1.0) -> ScalarFn:
    """g(u) = amp * sin(u); every derivative is a shifted sine."""
    return ScalarFn(
        fn=lambda u: amp * np.sin(u),
        d1=lambda u: amp * np.cos(u),
        dk=lambda u, k: amp * np.sin(u + k * np.pi / 2),
        name=f"sin(amp={amp})",
    )


def _psi(t):
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _psi_prime(t):
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos]) / t[pos] ** 2
    return out


def g_bump(a: float, p: int, inner: float = 0.5, outer: float = 1.0) -> ScalarFn:
    """g(u) = -a u^p chi(u) with a smooth cutoff, so a u^p + g(u) = 0 near 0.

    chi = 1 on [-inner, inner] and 0 outside [-outer, outer]; this is the
    degenerate case where the full nonlinearity vanishes in a ball.
    """
    if outer <= inner or inner <= 0:
        raise ValueError("need 0 < inner < outer")
    span = outer - inner

    def chi(u):
        t = (np.abs(u) - inner) / span
        s = np.clip(t, 0.0, 1.0)
        return 1.0 - _psi(s) / (_psi(s) + _psi(1.0 - s))

    def chi_prime(u):
        t = (np.abs(u) - inner) / span
        inside = (t > 0) & (t < 1)
        s = np.where(inside, t, 0.5)
        den = (_psi(s) + _psi(1.0 - s)) ** 2
        d = -(_psi_prime(s) * _psi(1.0 - s) + _psi(s) * _psi_prime(1.0 - s)) / den
        return np.where(inside, d * np.sign(u) / span, 0.0)

    return ScalarFn(
        fn=lambda u: -a * u ** p * chi(u),
        d1=lambda u: -a * (p * u ** (p - 1) * chi(u) + u ** p * chi_prime(u)),
        dk=None,
        name=f"bump(a={a},p={p})",
    )


def _representatives(D: int, N: int):
    """Nonzero l1-ball multi-indices up to sign, sorted by (|k|_1, lex)."""
    reps = []
    for k in product(range(-N, N + 1), repeat=D):
        if sum(abs(c) for c in k) == 0 or sum(abs(c) for c in k) > N:
            continue
        first = next(c for c in k if c != 0)
        if first < 0:
            continue
        reps.append(k)
    reps.sort(key=lambda k: (sum(abs(c) for c in k), k))
    return reps


@dataclass(frozen=True)
class GalerkinSystem:
    """Truncated spectral system on the D-torus.

    The state space is spanned by the constant mode and the (cos, sin)
    pairs with l1 frequency at most N; the nonlinearity a u^p + g(u) is
    evaluated on a quadrature grid with at least (p+1)N+1 points per
    dimension, which makes p-fold products alias-free.
    """

    D: int
    N: int
    nu: float
    a: float
    p: int
    g: ScalarFn = G_ZERO
    h: Optional[np.ndarray] = None
    grid_points: Optional[int] = None

    def __post_init__(self):
        if self.D < 1 or self.N < 1:
            raise ValueError("D and N must be positive integers")
        if self.nu <= 0 or self.a <= 0:
            raise ValueError("nu and a must be positive")
        if self.p < 3 or self.p % 2 == 0:
            raise ValueError("p must be an odd integer >= 3")
        M_min = (self.p + 1) * self.N + 1
        M = M_min if self.grid_points is None else int(self.grid_points)
        if M < M_min:
            raise ValueError(f"grid_points must be >= {M_min} for dealiasing")
        object.__setattr__(self, "grid_points", M)
        h = np.zeros(self.dim) if self.h is None else \
            np.asarray(self.h, dtype=float).reshape(self.dim)
        object.__setattr__(self, "h", h)

    @cached_property
    def modes(self):
        """Basis labels: ("c", 0-index) then ("c", k)/("s", k) per representative."""
        out = [("c", (0,) * self.D)]
        for k in _representatives(self.D, self.N):
            out.append(("c", k))
            out.append(("s", k))
        return out

    @property
    def dim(self) -> int:
        return len(self.modes)

    @property
    def forcing_dim(self) -> int:
        return 2 * self.D + 1

    @cached_property
    def grid(self) -> np.ndarray:
        """Quadrature nodes, shape (M^D, D)."""
        ax = np.arange(self.grid_points) * (2 * np.pi / self.grid_points)
        mesh = np.meshgrid(*([ax] * self.D), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def basis_matrix(self) -> np.ndarray:
        """Normalized basis functions on the grid, shape (M^D, dim)."""
        vol = (2 * np.pi) ** self.D
        cols = []
        for kind, k in self.modes:
            phase = self.grid @ np.asarray(k, dtype=float)
            if kind == "c" and not any(k):
                cols.append(np.full(self.grid.shape[0], vol ** -0.5))
            elif kind == "c":
                cols.append(np.cos(phase) / np.sqrt(vol / 2))
            else:
                cols.append(np.sin(phase) / np.sqrt(vol / 2))
        return np.stack(cols, axis=1)

    @cached_property
    def projection_matrix(self) -> np.ndarray:
        """Quadrature projection onto coefficients, shape (dim, M^D)."""
        cell = (2 * np.pi / self.grid_points) ** self.D
        return cell * self.basis_matrix.T

    @cached_property
    def laplacian_eigs(self) -> np.ndarray:
        return np.array([-float(sum(c * c for c in k)) for _, k in self.modes])

    def to_grid(self, u) -> np.ndarray:
        return np.asarray(u, dtype=float) @ self.basis_matrix.T

    def project_grid(self, values) -> np.ndarray:
        return np.asarray(values, dtype=float) @ self.projection_matrix.T


def project_function(sys: GalerkinSystem, fn) -> np.ndarray:
    """Coefficients of the projection of a callable on the torus."""
    vals = np.asarray([fn(x) for x in sys.grid], dtype=float)
    return sys.project_grid(vals)


def plain_coeffs(sys: GalerkinSystem, kind: str, k) -> np.ndarray:
    """Coefficients of the un-normalized basis function cos<k,x> or sin<k,x>."""
    k = np.asarray(k, dtype=float)
    if kind == "c":
        return project_function(sys, lambda x: np.cos(x @ k))
    return project_function(sys, lambda x: np.sin(x @ k))


def embedding_matrix(sys: GalerkinSystem) -> np.ndarray:
    """Natural embedding of the forcing space into the state space."""
    B = np.zeros((sys.dim, sys.forcing_dim))
    B[: sys.forcing_dim, :] = np.eye(sys.forcing_dim)
    return B


def build_field(sys: GalerkinSystem) -> VectorField:
    """Coefficient-space drift: diffusion + projected nonlinearity + forcing."""
    Phi = sys.basis_matrix
    P = sys.projection_matrix
    lap = sys.laplacian_eigs
    nu, a, p, g, h = sys.nu, sys.a, sys.p, sys.g, sys.h

    def eval_(u):
        ug = u @ Phi.T
        w = a * ug ** p + g.fn(ug)
        return nu * lap * u - w @ P.T + h

    def jac(u):
        ug = Phi @ u
        fp = a * p * ug ** (p - 1) + g.d1(ug)
        return nu * np.diag(lap) - P @ (fp[:, None] * Phi)

    deriv = None
    if g.d1 is not None and g.dk is not None:
        def deriv(u, dirs):
            k = len(dirs)
            ug = Phi @ np.asarray(u, dtype=float)
            prod_g = np.ones_like(ug)
            for v in dirs:
                prod_g = prod_g * (Phi @ np.asarray(v, dtype=float))
            fk = g.dk(ug, k)
            if k <= p:
                fk = fk + a * math.perm(p, k) * ug ** (p - k)
            out = -P @ (fk * prod_g)
            if k == 1:
                out = out + nu * lap * np.asarray(dirs[0], dtype=float)
            return out

    return VectorField(dim=sys.dim, eval=eval_,
                       jac=jac if g.d1 is not None else None,
                       deriv=deriv, vectorized=True)


@dataclass(frozen=True)
class SubspaceTower:
    """Nested product subspaces grown from the forcing space."""

    generations: tuple          # tuple of (d, dim_i) orthonormal bases, cumulative
    full_at: Optional[int]      # 1-based generation where the span fills, or None

    @property
    def dims(self):
        return tuple(g.shape[1] for g in self.generations)


def subspace_tower(sys: GalerkinSystem, max_gen: int = 12,
                   tol: float = 1e-10) -> SubspaceTower:
    """Iterate span closures under projected p-fold products of basis vectors."""
    d, p = sys.dim, sys.p
    Phi, P = sys.basis_matrix, sys.projection_matrix
    Q = embedding_matrix(sys)                       # orthonormal unit coordinates
    gens = [Q]
    full_at = 1 if Q.shape[1] == d else None
    for gen in range(2, max_gen + 1):
        if Q.shape[1] == d:
            break
        cols_grid = Phi @ Q                         # (G, dim_i) grid values
        cands = []
        for combo in combinations_with_replacement(range(Q.shape[1]), p):
            prod_g = np.ones(cols_grid.shape[0])
            for i in combo:
                prod_g = prod_g * cols_grid[:, i]
            cands.append(P @ prod_g)
        C = np.stack(cands, axis=1)
        scale = np.linalg.norm(C, 2)
        R = C - Q @ (Q.T @ C)
        U, s, _ = np.linalg.svd(R, full_matrices=False)
        keep = s > tol * max(scale, 1e-300)
        if not np.any(keep):
            break                                   # stalled
        Q, _ = np.linalg.qr(np.hstack([Q, U[:, keep]]))
        gens.append(Q)
        if Q.shape[1] == d:
            full_at = gen
            break
    return SubspaceTower(tuple(gens), full_at)


def _shifted_field(field: VectorField, shift, extra) -> VectorField:
    """u' = f(u + shift) + extra, for constant two-control integration."""
    shift = np.asarray(shift, dtype=float)
    extra = np.asarray(extra, dtype=float)
    return VectorField(field.dim, lambda u: field.eval(u + shift) + extra,
                       vectorized=field.vectorized)


def scaling_control_endpoint(sys: GalerkinSystem, u0, phi, psi, delta: float,
                             cfg: IntegratorConfig = DEFAULT_INTEGRATOR) -> np.ndarray:
    """Endpoint of the two-control scaling move on a horizon delta.

    The first control enters inside the diffusion and nonlinearity as a
    constant shift delta^{-1/p} phi; the second is the constant forcing
    delta^{-1} psi.  As delta -> 0 the endpoint approaches
    u0 + psi - Pn(phi^p).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    u0 = np.asarray(u0, dtype=float).reshape(sys.dim)
    phi = np.asarray(phi, dtype=float).reshape(sys.dim)
    psi = np.asarray(psi, dtype=float).reshape(sys.dim)
    field = build_field(sys)
    shifted = _shifted_field(field, delta ** (-1.0 / sys.p) * phi, psi / delta)
    try:
        return flow(shifted, u0, delta, cfg)
    except FlowError:
        return flow(shifted, u0, delta, cfg.tighter(10.0))


def projected_power(sys: GalerkinSystem, phi) -> np.ndarray:
    """Coefficients of Pn(phi^p)."""
    g = sys.to_grid(np.asarray(phi, dtype=float))
    return sys.project_grid(g ** sys.p)


@dataclass(frozen=True)
class SteeringResult:
    """Synthesized forcing-space control with its measured endpoint error."""

    control: ControlSignal
    achieved_error: float
    endpoint: np.ndarray
    passes: int


@dataclass(frozen=True)
class _Atom:
    """One realizable increment direction: coef * Pn(phi^p) detours."""

    vec: np.ndarray      # Pn(phi^p), the increment direction
    phi: np.ndarray      # generator, lies in the previous tower generation
    level: int


def _atom_dictionary(sys: GalerkinSystem, tower: SubspaceTower):
    """Power atoms spanning each tower generation above the forcing space.

    Polarization: products of p basis vectors are signed sums of p-th powers
    of subset sums, so powers of subset sums form a spanning dictionary.
    The dictionary is pruned to a well-conditioned subset by pivoted QR on
    the forcing-orthogonal parts.
    """
    n = sys.forcing_dim
    atoms = []
    seen = set()
    for level, Q in enumerate(tower.generations[:-1], start=2):
        for combo in combinations_with_replacement(range(Q.shape[1]), sys.p):
            for mask in range(1, 2 ** sys.p):
                phi = np.zeros(sys.dim)
                for pos in range(sys.p):
                    if mask >> pos & 1:
                        phi = phi + Q[:, combo[pos]]
                nrm = np.linalg.norm(phi)
                if nrm < 1e-12:
                    continue
                phi = phi / nrm
                key = (level, tuple(np.round(phi, 9)))
                if key in seen:
                    continue
                seen.add(key)
                vec = projected_power(sys, phi)
                if np.linalg.norm(vec[n:]) > 1e-10:
                    atoms.append(_Atom(vec, phi, level))
    if not atoms:
        return []
    # Keep one well-conditioned column per reachable perp direction.  Select
    # level by level so shallow atoms (cheap, non-recursive detours) cover
    # everything they can and deeper ones only fill the remaining directions.
    from scipy.linalg import qr as _qr
    chosen = []
    Q_span = np.zeros((sys.dim, 0))
    for level in sorted(set(a.level for a in atoms)):
        group = [a for a in atoms if a.level == level]
        M = np.stack([a.vec for a in group], axis=1)
        M[:n, :] = 0.0
        R_res = M - Q_span @ (Q_span.T @ M)
        _, R, piv = _qr(R_res, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        if diag.size == 0 or diag.max() < 1e-12:
            continue
        rank = int(np.sum(diag > 1e-8 * diag.max()))
        chosen.extend(group[i] for i in piv[:rank])
        cols = np.stack([a.vec for a in chosen], axis=1)
        cols[:n, :] = 0.0
        Q_span, _ = np.linalg.qr(cols)
    return chosen


class _SteerCtx:
    """Forkable accumulator of committed control segments."""

    __slots__ = ("state", "segs", "spent")

    def __init__(self, state, segs=None, spent=0.0):
        self.state = state
        self.segs = [] if segs is None else segs
        self.spent = spent

    def fork(self):
        return _SteerCtx(self.state.copy(), list(self.segs), self.spent)

    def adopt(self, other):
        self.state, self.segs, self.spent = other.state, other.segs, other.spent


def synthesize_steering(sys: GalerkinSystem, u0, target, eps: float,
                        time_budget: float,
                        cfg: IntegratorConfig = DEFAULT_INTEGRATOR,
                        max_passes: int = 48, verbose: bool = False) -> SteeringResult:
    """Compose a forcing-space control steering u0 toward target within eps.

    Increments inside the forcing space are realized by short constant
    bursts; increments outside it by add/drift/remove detours around the
    scaling move, one power atom at a time.  Every move is checked a
    posteriori and its horizon halved until the step lands (floor 1e-6,
    starting at 1e-2); the measured residual is re-decomposed and corrected
    in further passes until the tolerance or the time budget is exhausted.
    """
    if eps <= 0 or time_budget <= 0:
        raise ValueError("eps and time_budget must be positive")
    u0 = np.asarray(u0, dtype=float).reshape(sys.dim)
    target = np.asarray(target, dtype=float).reshape(sys.dim)
    n = sys.forcing_dim
    field = build_field(sys)
    B = embedding_matrix(sys)

    tower = subspace_tower(sys)
    if tower.full_at is None:
        raise ValueError("product tower does not fill the state space")
    atoms = _atom_dictionary(sys, tower)
    max_level = max((a.level for a in atoms), default=1)

    def run_segs(state, segs):
        for dur, val in segs:
            seg_field = VectorField(sys.dim, lambda y, v=val: field.eval(y) + B @ v,
                                    vectorized=True)
            state = flow(seg_field, state, dur, cfg)
        return state

    def budget_left(ctx):
        return time_budget - ctx.spent

    def append(ctx, segs):
        ctx.state = run_segs(ctx.state, segs)
        ctx.segs.extend(segs)
        ctx.spent += sum(d for d, _ in segs)

    def burst(ctx, v_forcing, tol_abs):
        """Add a forcing-space vector with a halved-horizon burst."""
        v = np.asarray(v_forcing, dtype=float)
        if np.linalg.norm(v) < 1e-14:
            return
        goal = ctx.state.copy()
        goal[:n] += v
        dt = 1e-3
        best = None
        while dt >= 1e-7:
            if dt <= budget_left(ctx):
                trial = ctx.fork()
                append(trial, [(dt, v / dt)])
                err = float(np.linalg.norm(trial.state - goal))
                if best is None or err < best[0]:
                    best = (err, trial)
                if err <= tol_abs:
                    break
            dt *= 0.5
        if best is not None:
            ctx.adopt(best[1])

    def realize_increment(ctx, incr, level_cap, tol_abs, depth):
        """Realize a full-space increment with atoms up to level_cap."""
        goal = ctx.state + incr
        if depth <= 3:
            r_perp = incr.copy()
            r_perp[:n] = 0.0
            usable = [a for a in atoms if a.level <= level_cap]
            if np.linalg.norm(r_perp) > 0.25 * tol_abs and usable:
                M = np.stack([a.vec for a in usable], axis=1)
                M[:n, :] = 0.0
                coefs, *_ = np.linalg.lstsq(M, r_perp, rcond=None)
                for idx in np.argsort(-np.abs(coefs)):
                    if abs(coefs[idx]) < 1e-12 or budget_left(ctx) <= 0:
                        break
                    detour(ctx, float(coefs[idx]), usable[idx],
                           max(0.08 * abs(coefs[idx]) * np.linalg.norm(usable[idx].vec),
                               0.1 * tol_abs), depth)
        burst(ctx, (goal - ctx.state)[:n], tol_abs)

    def run_detour(ctx, coef, atom, delta, tol_abs, depth):
        """One trial detour from ctx; returns the trial context or None."""
        t = -np.sign(coef) * abs(coef) ** (1.0 / sys.p)
        shift = delta ** (-1.0 / sys.p) * t * atom.phi
        trial = ctx.fork()
        if atom.level <= 2:
            dt_b = max(delta * 1e-2, 1e-7)
            if 3 * dt_b + delta > budget_left(trial):
                return None
            burst(trial, shift[:n], 0.02 * tol_abs)
            append(trial, [(delta, np.zeros(n))])
            burst(trial, -shift[:n], 0.02 * tol_abs)
        else:
            if delta >= budget_left(trial):
                return None
            sub_tol = max(0.02 * tol_abs, 1e-6)
            realize_increment(trial, shift, atom.level - 1, sub_tol, depth + 1)
            append(trial, [(delta, np.zeros(n))])
            realize_increment(trial, -shift, atom.level - 1, sub_tol, depth + 1)
        return trial

    def detour(ctx, coef, atom, tol_abs, depth):
        """Realize coef * Pn(phi^p): add the scaled generator, drift, remove it.

        The horizon is halved until the measured step error passes (floor
        1e-6), then the coefficient gets one secant adjustment cancelling
        the on-axis part of the remaining error.
        """
        if abs(coef) < 1e-14:
            return
        goal = ctx.state + coef * atom.vec
        delta = 1e-2
        best = None
        while delta >= 1e-6:
            trial = run_detour(ctx, coef, atom, delta, tol_abs, depth)
            if trial is not None:
                err = float(np.linalg.norm(trial.state - goal))
                if verbose:
                    print(f"    detour c={coef:+.4f} lvl={atom.level} delta={delta:.1e} "
                          f"err={err:.2e} tol={tol_abs:.2e}")
                if best is None or err < best[0]:
                    best = (err, trial, delta)
                if err <= tol_abs:
                    break
            delta *= 0.5
        if best is None:
            return
        err, trial, delta = best
        if err > tol_abs:
            # Secant step on the coefficient: cancel the achieved error's
            # component along the atom direction at the same horizon.
            e_vec = trial.state - goal
            adj = coef - float(e_vec @ atom.vec) / float(atom.vec @ atom.vec)
            if np.sign(adj) == np.sign(coef) and 0.1 * abs(coef) <= abs(adj) <= 3 * abs(coef):
                trial2 = run_detour(ctx, adj, atom, delta, tol_abs, depth)
                if trial2 is not None:
                    err2 = float(np.linalg.norm(trial2.state - goal))
                    if verbose:
                        print(f"    secant c={adj:+.4f} err={err2:.2e}")
                    if err2 < err:
                        trial = trial2
        ctx.adopt(trial)

    ctx = _SteerCtx(u0.copy())
    passes = 0
    for _ in range(max_passes):
        resid = target - ctx.state
        if verbose:
            print(f"  pass {passes}: |resid|={np.linalg.norm(resid):.3e} "
                  f"spent={ctx.spent:.3f}")
        if np.linalg.norm(resid) < 0.9 * eps or budget_left(ctx) <= 0:
            break
        passes += 1
        realize_increment(ctx, resid, max_level, 0.5 * eps, depth=0)

    achieved = float(np.linalg.norm(target - ctx.state))
    if ctx.segs:
        durations = [d for d, _ in ctx.segs]
        values = np.stack([v for _, v in ctx.segs])
        control = ControlSignal.from_segments(durations, values)
    else:
        control = ControlSignal.zero(n)
    return SteeringResult(control, achieved, ctx.state.copy(), passes)
