"""Deterministic vector fields, ODE flows, controlled flows, and dissipativity probes.

Everything here is pure: fields and configs are immutable after construction and
flows may be evaluated concurrently from any number of workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "VectorField",
    "ControlSignal",
    "IntegratorConfig",
    "FlowError",
    "BlowupError",
    "StepLimitError",
    "flow",
    "flow_batch",
    "flow_jacobian",
    "controlled_flow",
    "jacobian",
    "directional_derivative",
    "check_dissipativity",
    "DissipativityReport",
]


class FlowError(RuntimeError):
    """Base class for integration failures."""


class BlowupError(FlowError):
    """State norm exceeded the guard radius, or became NaN/Inf.

    Signals an escaping trajectory (a violated dissipativity bound) rather
    than an integrator bug.
    """


class StepLimitError(FlowError):
    """Step budget exhausted: blow-up in progress or tolerance too tight."""


@dataclass(frozen=True)
class VectorField:
    """A smooth field on R^d.

    ``eval`` maps a length-d state to a length-d velocity and must accept
    stacked inputs of shape (m, d) when ``vectorized`` is true (the ensemble
    drivers rely on this).  ``jac`` optionally supplies the exact d x d
    Jacobian; ``deriv(x, dirs)`` optionally supplies the exact mixed
    directional derivative D^k f(x)[dirs[0], ..., dirs[k-1]] used by the
    bracket machinery.  Absent hooks fall back to central differences.
    """

    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    deriv: Optional[Callable[[np.ndarray, Sequence[np.ndarray]], np.ndarray]] = None
    vectorized: bool = True

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")

    def __call__(self, x):
        return self.eval(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class IntegratorConfig:
    """Integrator selection: embedded adaptive RK 5(4) pair or fixed-step RK4."""

    method: str = "rk45"
    rtol: float = 1e-8
    atol: float = 1e-10
    step: float = 1e-2           # rk4 only
    max_steps: int = 1_000_000
    blowup: float = 1e8          # abort when the state norm passes this

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise ValueError(f"unknown integrator method {self.method!r}")
        if self.rtol <= 0 or self.atol <= 0 or self.step <= 0:
            raise ValueError("tolerances and step must be positive")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")

    def tighter(self, factor: float = 100.0) -> "IntegratorConfig":
        return IntegratorConfig(self.method, self.rtol / factor, self.atol / factor,
                                self.step / factor, self.max_steps, self.blowup)


DEFAULT_INTEGRATOR = IntegratorConfig()

# Dormand-Prince 5(4) tableau.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_DP_A = [
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# b - b*: weights of the embedded error estimate (the 4th-order weights
# include a k7 term with coefficient 1/40).
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525])
_DP_E7 = -1 / 40


def _norm_guard(y, blowup):
    m = np.max(np.abs(y))
    if not np.isfinite(m) or m > blowup:
        raise BlowupError(f"state left the guard ball (max |x_i| = {m:.3e})")


def _rk45(fun, y0, t_end, cfg):
    """Integrate y' = fun(t, y) from t=0 to t_end, y of any shape."""
    t = 0.0
    y = y0
    f0 = fun(t, y)
    scale = cfg.atol + cfg.rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h = min(t_end, 0.01 * d0 / d1 if d1 > 1e-15 else t_end * 1e-3)
    h = max(h, t_end * 1e-12)

    k7 = f0
    for _ in range(cfg.max_steps):
        if t >= t_end:
            return y
        h = min(h, t_end - t)
        k = [k7]  # FSAL
        bad = False
        for i, a_row in enumerate(_DP_A):
            yi = y + h * sum(a * ki for a, ki in zip(a_row, k))
            ki = fun(t + _DP_C[i + 1] * h, yi)
            if not np.all(np.isfinite(ki)):
                bad = True
                break
            k.append(ki)
        if not bad:
            y_new = y + h * sum(b * ki for b, ki in zip(_DP_B, k))
            k7_new = fun(t + h, y_new)
            err = h * (sum(e * ki for e, ki in zip(_DP_E, k)) + _DP_E7 * k7_new)
            scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
            err_norm = np.sqrt(np.mean((err / scale) ** 2))
            bad = not np.isfinite(err_norm)
        if bad or err_norm > 1.0:
            if not bad and err_norm > 0:
                h *= max(0.2, 0.9 * err_norm ** -0.2)
            else:
                h *= 0.2
            if h < 1e-14 * max(t_end, 1.0):
                raise BlowupError("step size underflow (non-finite or stiff segment)")
            continue
        t += h
        y, k7 = y_new, k7_new
        _norm_guard(y, cfg.blowup)
        h *= min(5.0, max(0.2, 0.9 * (err_norm + 1e-16) ** -0.2))
    raise StepLimitError(f"integration exceeded {cfg.max_steps} steps over t={t_end}")


def _rk4(fun, y0, t_end, cfg):
    n = max(1, int(np.ceil(t_end / cfg.step)))
    if n > cfg.max_steps:
        raise StepLimitError(f"fixed-step count {n} exceeds max_steps")
    h = t_end / n
    t, y = 0.0, y0
    for _ in range(n):
        k1 = fun(t, y)
        k2 = fun(t + h / 2, y + h / 2 * k1)
        k3 = fun(t + h / 2, y + h / 2 * k2)
        k4 = fun(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
        _norm_guard(y, cfg.blowup)
    return y


def _integrate(fun, y0, t_end, cfg):
    if t_end == 0.0:
        return y0.copy()
    if cfg.method == "rk4":
        return _rk4(fun, y0, t_end, cfg)
    return _rk45(fun, y0, t_end, cfg)


def flow(f: VectorField, x, t: float, cfg: IntegratorConfig = DEFAULT_INTEGRATOR) -> np.ndarray:
    """Undriven flow S_t(x); the identity at t = 0."""
    if t < 0:
        raise ValueError("flow time must be nonnegative")
    x = np.asarray(x, dtype=float).reshape(f.dim)
    return _integrate(lambda _, y: f.eval(y), x, float(t), cfg)


def flow_batch(f: VectorField, X, s, cfg: IntegratorConfig = DEFAULT_INTEGRATOR) -> np.ndarray:
    """Flow a stack of states X (m, d) for per-row durations s (m,).

    The rows are integrated jointly on rescaled time with a shared adaptive
    step, so per-row results match `flow` only to integrator tolerance.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("durations must be nonnegative")
    if s.max(initial=0.0) == 0.0:
        return X.copy()
    if f.vectorized:
        fun = lambda _, Y: s[:, None] * f.eval(Y)
        return _integrate(fun, X, 1.0, cfg)
    return np.stack([flow(f, X[i], s[i], cfg) for i in range(X.shape[0])])


def flow_jacobian(f: VectorField, x, t: float, cfg: IntegratorConfig = DEFAULT_INTEGRATOR):
    """Return (S_t(x), DS_t(x)) via the variational equation."""
    d = f.dim
    x = np.asarray(x, dtype=float).reshape(d)

    def fun(_, y):
        xs, M = y[:d], y[d:].reshape(d, d)
        return np.concatenate([f.eval(xs), (jacobian(f, xs) @ M).ravel()])

    y0 = np.concatenate([x, np.eye(d).ravel()])
    y = _integrate(fun, y0, float(t), cfg)
    return y[:d], y[d:].reshape(d, d)


def controlled_flow(f: VectorField, B, x, zeta: "ControlSignal", T: float,
                    cfg: IntegratorConfig = DEFAULT_INTEGRATOR) -> np.ndarray:
    """Controlled flow S_T(x, zeta) of x' = f(x) + B zeta(t)."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    x = np.asarray(x, dtype=float).reshape(f.dim)
    if T < 0:
        raise ValueError("horizon must be nonnegative")
    if T > zeta.horizon + 1e-12:
        raise ValueError(f"control defined on [0, {zeta.horizon}], requested T={T}")
    if T == 0.0:
        return x.copy()
    # Integrate segment by segment so breakpoint kinks never sit inside a
    # step; the control value is pinned to the segment containing the
    # midpoint so stage times touching a boundary cannot read the neighbor.
    cuts = np.unique(np.clip(zeta.breakpoints, 0.0, T))
    cuts = np.concatenate([[0.0], cuts[(cuts > 0) & (cuts < T)], [T]])
    for a, b in zip(cuts[:-1], cuts[1:]):
        if zeta.mode == "pconst":
            v = zeta.value(0.5 * (a + b))
            fun = lambda tau, y, v=v: f.eval(y) + B @ v
        else:
            va, vb = zeta.value(a), zeta.value(b)
            fun = lambda tau, y, a=a, b=b, va=va, vb=vb: \
                f.eval(y) + B @ (va + (vb - va) * (min(max(tau, 0.0), b - a) / (b - a)))
        x = _integrate(fun, x, b - a, cfg)
    return x


@dataclass(frozen=True)
class ControlSignal:
    """A control [0, T] -> R^n as a breakpoint table.

    ``mode`` is "pconst" (values has one row per interval) or "plinear"
    (values has one row per breakpoint, linearly interpolated).
    """

    breakpoints: np.ndarray
    values: np.ndarray
    mode: str = "pconst"

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if bp.ndim != 1 or bp.size < 1 or bp[0] != 0.0:
            raise ValueError("breakpoints must start at 0")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if self.mode not in ("pconst", "plinear"):
            raise ValueError(f"unknown control mode {self.mode!r}")
        n_expected = bp.size - 1 if self.mode == "pconst" else bp.size
        if bp.size == 1:
            n_expected = 0
        if vals.shape[0] != n_expected and not (n_expected == 0 and vals.size == 0):
            raise ValueError(f"expected {n_expected} value rows, got {vals.shape[0]}")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def dim(self) -> int:
        return self.values.shape[1] if self.values.size else 1

    def value(self, t: float) -> np.ndarray:
        if self.breakpoints.size == 1 or self.values.size == 0:
            return np.zeros(self.dim)
        t = min(max(t, 0.0), self.horizon)
        if self.mode == "pconst":
            i = np.searchsorted(self.breakpoints, t, side="right") - 1
            i = min(i, self.values.shape[0] - 1)
            return self.values[i]
        out = np.empty(self.values.shape[1])
        for j in range(self.values.shape[1]):
            out[j] = np.interp(t, self.breakpoints, self.values[:, j])
        return out

    @staticmethod
    def constant(v, T: float) -> "ControlSignal":
        v = np.atleast_1d(np.asarray(v, dtype=float))
        return ControlSignal(np.array([0.0, T]), v[None, :], "pconst")

    @staticmethod
    def zero(n: int = 1) -> "ControlSignal":
        return ControlSignal(np.array([0.0]), np.zeros((0, n)), "pconst")

    @staticmethod
    def from_segments(durations, values) -> "ControlSignal":
        """Concatenate constant segments (durations d_i, values v_i)."""
        durations = np.asarray(durations, dtype=float)
        if durations.size == 0:
            return ControlSignal.zero(np.atleast_2d(values).shape[1] if np.size(values) else 1)
        bp = np.concatenate([[0.0], np.cumsum(durations)])
        return ControlSignal(bp, np.atleast_2d(values), "pconst")


def jacobian(f: VectorField, x) -> np.ndarray:
    """Df(x): the exact hook when supplied, else central differences."""
    x = np.asarray(x, dtype=float).reshape(f.dim)
    if f.jac is not None:
        return np.asarray(f.jac(x), dtype=float).reshape(f.dim, f.dim)
    d = f.dim
    J = np.empty((d, d))
    for j in range(d):
        h = 6e-6 * max(1.0, abs(x[j]))
        e = np.zeros(d)
        e[j] = h
        J[:, j] = (f.eval(x + e) - f.eval(x - e)) / (2 * h)
    return J


def directional_derivative(f: VectorField, x, dirs) -> np.ndarray:
    """Mixed directional derivative D^k f(x)[v_1, ..., v_k].

    Uses the exact ``deriv`` hook when present; otherwise nests central
    differences with per-level steps balancing truncation against the
    propagated evaluation error of the inner levels.
    """
    x = np.asarray(x, dtype=float).reshape(f.dim)
    dirs = [np.asarray(v, dtype=float).reshape(f.dim) for v in dirs]
    if not dirs:
        return f.eval(x)
    if f.deriv is not None:
        return np.asarray(f.deriv(x, dirs), dtype=float).reshape(f.dim)

    k_total = len(dirs)
    exact_first = f.jac is not None
    # Per-level central-difference steps: each level balances truncation h^2
    # against the inner level's propagated evaluation error eps/h.
    x_scale = max(1.0, float(np.linalg.norm(x)))
    steps = {}
    eps = 1e-15
    first_fd_level = 2 if exact_first else 1
    for lev in range(first_fd_level, k_total + 1):
        h = min(max(eps ** (1 / 3), 1e-6), 1e-2) * x_scale
        steps[lev] = h
        eps = h * h + eps / h

    def level(k):
        if k == 0:
            return lambda y: f.eval(y)
        if k == 1 and exact_first:
            return lambda y: jacobian(f, y) @ dirs[-1]
        inner = level(k - 1)
        v = dirs[-k]
        vn = max(float(np.linalg.norm(v)), 1e-30)
        h = steps[k]
        hv = (h / vn) * v
        return lambda y: (inner(y + hv) - inner(y - hv)) * (0.5 * vn / h)

    return level(k_total)(x)


@dataclass(frozen=True)
class DissipativityReport:
    """Sampled check of <f(y), y> <= -alpha ||y||^2 + beta."""

    alpha: float
    beta: float
    n_samples: int
    violations: np.ndarray      # indices of violating samples
    worst_margin: float         # max over samples of <f(y),y> + alpha||y||^2 - beta

    @property
    def passed(self) -> bool:
        return self.violations.size == 0

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "n_samples": self.n_samples,
            "n_violations": int(self.violations.size),
            "worst_margin": self.worst_margin,
            "passed": bool(self.passed),
        }


def check_dissipativity(f: VectorField, alpha: float, beta: float, samples) -> DissipativityReport:
    """Report every sample where <f(y), y> > -alpha ||y||^2 + beta."""
    pts = np.atleast_2d(np.asarray(samples, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("sample list must be nonempty")
    if f.vectorized:
        vel = np.atleast_2d(f.eval(pts))
    else:
        vel = np.stack([f.eval(p) for p in pts])
    margins = np.einsum("ij,ij->i", vel, pts) + alpha * np.einsum("ij,ij->i", pts, pts) - beta
    bad = np.flatnonzero(margins > 0)
    return DissipativityReport(alpha, beta, pts.shape[0], bad, float(margins.max()))
