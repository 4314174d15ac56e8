"""Statistical estimators tying simulation to mixing conclusions: histogram
total-variation estimates, exponential-rate fits of decay curves, survival
curves of coalescence times, and invariant-measure summaries.

Histogram TV is biased downward for continuous laws at finite bin counts;
estimates always ship with their bootstrap standard errors and bin counts,
never as ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import flow
from .noise import Streams, stream
from .pdmp import SystemSpec, simulate

__all__ = [
    "histogram_tv",
    "fd_bin_edges",
    "MixingReport",
    "mixing_fit",
    "survival_curve",
    "InvariantSummary",
    "invariant_estimate",
]


def fd_bin_edges(pooled: np.ndarray, max_bins: int = 200) -> list:
    """Freedman-Diaconis edges per coordinate over the pooled samples."""
    pooled = np.atleast_2d(pooled)
    edges = []
    for j in range(pooled.shape[1]):
        col = pooled[:, j]
        q75, q25 = np.percentile(col, [75, 25])
        iqr = max(q75 - q25, 1e-12)
        width = 2 * iqr / max(col.size, 1) ** (1 / 3)
        lo, hi = col.min(), col.max() + 1e-12
        nb = int(np.clip(np.ceil((hi - lo) / width), 1, max_bins))
        edges.append(np.linspace(lo, hi, nb + 1))
    return edges


def histogram_tv(samples_a, samples_b, bins=None, paired: bool = False,
                 bootstrap: int = 100, rng: Optional[np.random.Generator] = None):
    """Histogram estimate of the total variation between two sample laws.

    Shared Freedman-Diaconis bins by default (or pass per-coordinate edge
    arrays / an int bin count); returns (estimate, stderr) with the stderr
    bootstrapped over `bootstrap` resamples.  With ``paired`` the two sets
    are resampled with common indices, which is the right error model for
    coupled-pair marginals.
    """
    A = np.atleast_2d(np.asarray(samples_a, dtype=float))
    B = np.atleast_2d(np.asarray(samples_b, dtype=float))
    if A.ndim == 2 and A.shape[0] == 1 and np.asarray(samples_a).ndim == 1:
        A, B = A.T, B.T
    if A.shape[1] != B.shape[1]:
        raise ValueError("sample sets must share a dimension")
    if A.shape[1] > 3:
        raise ValueError("histogram TV supports dimension <= 3")
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("sample sets must be nonempty")
    if paired and A.shape[0] != B.shape[0]:
        raise ValueError("paired mode needs equally many samples")
    pooled = np.vstack([A, B])
    if bins is None:
        edges = fd_bin_edges(pooled)
    elif isinstance(bins, (int, np.integer)):
        edges = [np.linspace(pooled[:, j].min(), pooled[:, j].max() + 1e-12, int(bins) + 1)
                 for j in range(A.shape[1])]
    else:
        edges = [np.asarray(e, dtype=float) for e in bins]

    def tv_of(a, b):
        ha, _ = np.histogramdd(a, bins=edges)
        hb, _ = np.histogramdd(b, bins=edges)
        return 0.5 * np.abs(ha / a.shape[0] - hb / b.shape[0]).sum()

    est = float(tv_of(A, B))
    if bootstrap <= 1:
        return est, 0.0
    rng = rng if rng is not None else stream(0, 0, "bootstrap-tv")
    vals = np.empty(bootstrap)
    for i in range(bootstrap):
        if paired:
            idx = rng.integers(0, A.shape[0], A.shape[0])
            vals[i] = tv_of(A[idx], B[idx])
        else:
            ia = rng.integers(0, A.shape[0], A.shape[0])
            ib = rng.integers(0, B.shape[0], B.shape[0])
            vals[i] = tv_of(A[ia], B[ib])
    return est, float(vals.std(ddof=1))


@dataclass(frozen=True)
class MixingReport:
    """Exponential fit C exp(-c t) of a decay curve on the log scale."""

    t: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    C: float
    c: float
    r_squared: float
    n_used: int
    censoring_fraction: float
    mixing: bool                # c > 0 resolved by the fit

    def to_dict(self) -> dict:
        return {
            "t": self.t.tolist(),
            "values": self.values.tolist(),
            "stderr": self.stderr.tolist(),
            "C": self.C,
            "c": self.c,
            "r_squared": self.r_squared,
            "n_used": self.n_used,
            "censoring_fraction": self.censoring_fraction,
            "mixing": bool(self.mixing),
        }


def mixing_fit(t, values, stderr=None, censoring_fraction: float = 0.0) -> MixingReport:
    """Weighted least squares of log(value) against t.

    Only finite, strictly positive values enter the fit; weights come from
    the delta-method log-scale errors.  Needs at least 4 usable points.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    se = np.zeros_like(v) if stderr is None else np.asarray(stderr, dtype=float)
    use = np.isfinite(t) & np.isfinite(v) & (v > 0)
    if use.sum() < 4:
        raise ValueError("need at least 4 usable (positive, finite) points")
    tt, vv, ss = t[use], v[use], se[use]
    if np.any(ss > 0):
        sigma_log = np.where(ss > 0, ss / vv, np.nan)
        default = float(np.nanmedian(sigma_log))
        sigma_log = np.where(np.isfinite(sigma_log) & (sigma_log > 0), sigma_log, default)
        w = 1.0 / sigma_log ** 2
    else:
        w = np.ones_like(vv)
    y = np.log(vv)
    W = np.sum(w)
    tbar = np.sum(w * tt) / W
    ybar = np.sum(w * y) / W
    cov = np.sum(w * (tt - tbar) * (y - ybar))
    var = np.sum(w * (tt - tbar) ** 2)
    slope = cov / var
    intercept = ybar - slope * tbar
    resid = y - (intercept + slope * tt)
    ss_res = np.sum(w * resid ** 2)
    ss_tot = np.sum(w * (y - ybar) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    c = -slope
    return MixingReport(t=tt, values=vv, stderr=ss, C=float(np.exp(intercept)),
                        c=float(c), r_squared=float(r2), n_used=int(use.sum()),
                        censoring_fraction=float(censoring_fraction),
                        mixing=bool(c > 0))


def survival_curve(times, t_grid, horizon: Optional[float] = None):
    """Empirical P{time > t} with binomial standard errors.

    Censored samples (inf) count as surviving up to the horizon, matching
    runs that never coalesced.
    """
    times = np.asarray(times, dtype=float)
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    n = times.size
    surv = np.array([(times > t).mean() for t in t_grid])
    se = np.sqrt(surv * (1 - surv) / n)
    frac_censored = float(np.isinf(times).mean())
    if horizon is not None and np.any(t_grid > horizon):
        raise ValueError("survival grid extends past the horizon")
    return surv, se, frac_censored


def tail_fit_window(times, quantile: float = 0.95) -> float:
    """Largest time the tail fit should use: censoring-safe upper cut."""
    finite = np.asarray(times, dtype=float)
    finite = finite[np.isfinite(finite)]
    if finite.size == 0:
        raise ValueError("all samples are censored")
    return float(np.quantile(finite, quantile))


@dataclass(frozen=True)
class InvariantSummary:
    """Time-averaged summary of a long trajectory past burn-in."""

    second_moment: float
    second_moment_stderr: float
    embedded_second_moment: float
    embedded_second_moment_stderr: float
    n_grid: int
    n_jumps: int
    histograms: list            # per coordinate: (edges, probability masses)

    def to_dict(self) -> dict:
        return {
            "second_moment": self.second_moment,
            "second_moment_stderr": self.second_moment_stderr,
            "embedded_second_moment": self.embedded_second_moment,
            "embedded_second_moment_stderr": self.embedded_second_moment_stderr,
            "n_grid": self.n_grid,
            "n_jumps": self.n_jumps,
            "histograms": [
                {"edges": e.tolist(), "mass": m.tolist()} for e, m in self.histograms
            ],
        }


def _batch_means_stderr(x: np.ndarray, n_batches: int = 32) -> float:
    n = x.size
    nb = min(n_batches, max(2, n // 8))
    cut = (n // nb) * nb
    means = x[:cut].reshape(nb, -1).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(nb))


def invariant_estimate(spec: SystemSpec, burn_in: float, samples: int, rng,
                       dt: float = 1.0, x0=None) -> InvariantSummary:
    """Summarize the empirical invariant measure from one long trajectory.

    Walks a single path of horizon burn_in + samples*dt, records states on
    a uniform grid (continuous-time summary) and the embedded chain past
    burn-in; standard errors use batch means, honest under correlation.
    """
    if burn_in <= 0 or samples <= 0:
        raise ValueError("burn_in and samples must be positive")
    g = rng.single("invariant") if isinstance(rng, Streams) else rng
    T = burn_in + samples * dt
    x0 = np.zeros(spec.dim) if x0 is None else np.asarray(x0, dtype=float)
    traj = simulate(spec, x0, T, g)
    t_grid = burn_in + dt * np.arange(samples)

    # Walk jump segments and grid points together, flowing incrementally.
    grid_states = np.empty((samples, spec.dim))
    times = traj.path.jump_times
    x = x0.copy()
    t_cur = 0.0
    k = 0
    for i, t in enumerate(t_grid):
        while k < times.size and times[k] <= t:
            x = flow(spec.f, x, times[k] - t_cur, spec.integrator)
            x = x + spec.B @ traj.path.jumps[k]
            t_cur = times[k]
            k += 1
        x = flow(spec.f, x, t - t_cur, spec.integrator)
        t_cur = t
        grid_states[i] = x

    gsq = np.sum(grid_states ** 2, axis=1)
    emb_states = traj.post_jump_states[1:]
    emb_keep = emb_states[times > burn_in]
    esq = np.sum(emb_keep ** 2, axis=1)
    hists = []
    for j in range(spec.dim):
        edges = fd_bin_edges(grid_states[:, j:j + 1])[0]
        counts, _ = np.histogram(grid_states[:, j], bins=edges)
        hists.append((edges, counts / counts.sum()))
    return InvariantSummary(
        second_moment=float(gsq.mean()),
        second_moment_stderr=_batch_means_stderr(gsq),
        embedded_second_moment=float(esq.mean()),
        embedded_second_moment_stderr=_batch_means_stderr(esq),
        n_grid=samples,
        n_jumps=int(esq.size),
        histograms=hists,
    )
