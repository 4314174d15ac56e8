"""Numeric certification of controllability-type hypotheses: Kalman rank,
iterated Lie brackets, the bracket tower at a point, and a sampled
full-rank surrogate for solid controllability.

All certificates are numeric rank statements with explicit tolerances;
a failed sampled certificate is inconclusive, never a disproof.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Optional

import numpy as np

from .dynamics import VectorField, directional_derivative, jacobian
from .pdmp import SystemSpec, block_jacobian

__all__ = [
    "RankCertificate",
    "kalman_rank",
    "lie_bracket",
    "hormander_tower",
    "solid_cert",
]

DEFAULT_RANK_TOL = 1e-8         # relative singular-value cutoff


@dataclass(frozen=True)
class RankCertificate:
    """Outcome of a rank test with its tolerance and singular values."""

    point: Optional[np.ndarray]
    dimension_reached: int
    target_dim: int
    generations_used: int
    singular_values: np.ndarray
    tolerance: float
    verdict: str                       # "pass" | "fail"
    generation_dims: tuple = ()
    note: str = ""
    best_probe: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dimension_reached > self.target_dim:
            raise ValueError("dimension_reached cannot exceed target_dim")

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {
            "point": None if self.point is None else np.asarray(self.point).tolist(),
            "dimension_reached": int(self.dimension_reached),
            "target_dim": int(self.target_dim),
            "generations_used": int(self.generations_used),
            "singular_values": np.asarray(self.singular_values).tolist(),
            "tolerance": float(self.tolerance),
            "verdict": self.verdict,
            "generation_dims": [int(v) for v in self.generation_dims],
            "note": self.note,
        }


def kalman_rank(A, B) -> RankCertificate:
    """Numeric rank of the controllability matrix [B, AB, ..., A^{d-1}B]."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    d = A.shape[0]
    if A.shape != (d, d) or B.shape[0] != d:
        raise ValueError("inconsistent shapes for the Kalman pair")
    blocks = [B]
    for _ in range(d - 1):
        blocks.append(A @ blocks[-1])
    C = np.hstack(blocks)
    svals = np.linalg.svd(C, compute_uv=False)
    tol = d * (svals[0] if svals.size else 0.0) * np.finfo(float).eps * 1e3
    rank = int(np.sum(svals > tol))
    return RankCertificate(
        point=None, dimension_reached=rank, target_dim=d, generations_used=d,
        singular_values=svals, tolerance=tol,
        verdict="pass" if rank == d else "fail",
    )


def lie_bracket(U: VectorField, V: VectorField, x) -> np.ndarray:
    """[U, V](x) = DV(x) U(x) - DU(x) V(x)."""
    if U.dim != V.dim:
        raise ValueError("fields must share a dimension")
    x = np.asarray(x, dtype=float).reshape(U.dim)
    return jacobian(V, x) @ U.eval(x) - jacobian(U, x) @ V.eval(x)


def constant_field(b, dim: Optional[int] = None) -> VectorField:
    """The constant vector field x -> b (all derivatives vanish)."""
    b = np.atleast_1d(np.asarray(b, dtype=float))
    d = dim or b.size
    return VectorField(
        dim=d,
        eval=lambda x, b=b: np.broadcast_to(b, np.shape(x)).copy(),
        jac=lambda x, d=d: np.zeros((d, d)),
        deriv=lambda x, dirs, d=d: np.zeros(d),
    )


def iterated_bracket(f: VectorField, dirs, x) -> np.ndarray:
    """[v_1, [v_2, ... [v_k, f] ...]](x) for constant directions v_i.

    Bracketing a constant field into f one level at a time telescopes to the
    mixed directional derivative D^k f(x)[v_k, ..., v_1].
    """
    return directional_derivative(f, x, list(reversed([np.asarray(v) for v in dirs])))


def _orth_extend(Q, C, rel_tol):
    """Extend the orthonormal basis Q by the numerically new directions of C."""
    if C.size == 0:
        return Q, np.zeros(0)
    scale = np.linalg.norm(C, 2)
    if scale <= 0 or not np.isfinite(scale):
        return Q, np.zeros(0)
    R = C - Q @ (Q.T @ C) if Q.shape[1] else C
    U, s, _ = np.linalg.svd(R, full_matrices=False)
    keep = s > rel_tol * scale
    if not np.any(keep):
        return Q, np.zeros(0)
    # Re-orthonormalize the extension to keep roundoff in check.
    Q_new, _ = np.linalg.qr(np.hstack([Q, U[:, keep]]))
    return Q_new, s[keep]


def hormander_tower(f: VectorField, B, x_hat, max_gen: int = 10,
                    tol: float = DEFAULT_RANK_TOL) -> RankCertificate:
    """Grow the bracket span at x_hat until it fills R^d or stalls.

    Generation 0 is the span of the forcing columns.  Generation g adds
    single brackets of the current basis vectors (as constant fields)
    against f, plus the depth-g towers of constant forcing directions
    bracketed into f.  Each generation is orthonormalized with an SVD
    truncated at the relative tolerance, so verdicts are invariant under
    rescaling of B.
    """
    if max_gen < 1:
        raise ValueError("max_gen must be at least 1")
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    d = f.dim
    x_hat = np.asarray(x_hat, dtype=float).reshape(d)

    U, s, _ = np.linalg.svd(B, full_matrices=False)
    s_ref = s[0] if s.size and s[0] > 0 else 1.0
    base = U[:, s > tol * s_ref]
    Q = base.copy()
    retained = list(s[s > tol * s_ref] / s_ref)
    gen_dims = [Q.shape[1]]
    gens_used = 0
    n0 = base.shape[1]

    for g in range(1, max_gen + 1):
        if Q.shape[1] == d or n0 == 0:
            break
        cands = [directional_derivative(f, x_hat, [Q[:, i]]) for i in range(Q.shape[1])]
        if g >= 2:
            # Depth-g towers of constant forcing directions; depth 1 is
            # already covered by the first loop.
            for combo in combinations_with_replacement(range(n0), g):
                cands.append(directional_derivative(f, x_hat, [base[:, i] for i in combo]))
        C = np.stack(cands, axis=1)
        Q, new_s = _orth_extend(Q, C, tol)
        retained.extend(new_s)
        gen_dims.append(Q.shape[1])
        gens_used = g

    reached = Q.shape[1]
    return RankCertificate(
        point=x_hat, dimension_reached=reached, target_dim=d,
        generations_used=gens_used, singular_values=np.asarray(retained),
        tolerance=tol, verdict="pass" if reached == d else "fail",
        generation_dims=tuple(gen_dims),
        note="" if reached == d else "span stalled below full dimension",
    )


def solid_cert(spec: SystemSpec, x_hat, m: int, s_hat, probes: int,
               rng: np.random.Generator, tol: float = DEFAULT_RANK_TOL) -> RankCertificate:
    """Sampled full-rank certificate for the block map's jump derivative.

    Draws `probes` jump blocks from the system's law and passes if any of
    them makes the d x (m n) block Jacobian numerically full rank at x_hat.
    A fail is inconclusive (the sampled points may simply be unlucky).
    """
    d, n = spec.dim, spec.noise_dim
    if m * n < d:
        raise ValueError(f"m*n = {m * n} cannot reach rank d = {d}")
    x_hat = np.asarray(x_hat, dtype=float).reshape(d)
    s_hat = np.atleast_1d(np.asarray(s_hat, dtype=float))
    if s_hat.size != m:
        raise ValueError("s_hat must supply one waiting time per block step")
    best_sigma = -np.inf
    best_svals = np.zeros(0)
    best_xi = None
    used = 0
    for i in range(probes):
        used = i + 1
        xi = spec.law.sample(rng, m)
        J = block_jacobian(spec, x_hat, s_hat, xi)
        svals = np.linalg.svd(J, compute_uv=False)
        sigma_d = svals[d - 1] if svals.size >= d else 0.0
        if sigma_d > best_sigma:
            best_sigma, best_svals, best_xi = sigma_d, svals, xi
        if svals.size >= d and sigma_d > tol * svals[0]:
            return RankCertificate(
                point=x_hat, dimension_reached=d, target_dim=d,
                generations_used=used, singular_values=svals, tolerance=tol,
                verdict="pass", best_probe=xi,
            )
    rank = int(np.sum(best_svals > tol * best_svals[0])) if best_svals.size else 0
    return RankCertificate(
        point=x_hat, dimension_reached=min(rank, d), target_dim=d,
        generations_used=used, singular_values=best_svals, tolerance=tol,
        verdict="fail", best_probe=best_xi,
        note="inconclusive: no sampled probe reached full rank",
    )
