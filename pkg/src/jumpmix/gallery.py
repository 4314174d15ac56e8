"""Named model presets shared by the CLI, the tests, and the docs.

Each preset bundles a system with the constants its certificates need
(dissipativity constants when known in closed form, the hit-ball center,
the linearization when the drift is linear).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import VectorField
from .noise import JumpLaw, gaussian_mixture, isotropic_gaussian, product_laplace
from .pdmp import SystemSpec
from . import galerkin as _galerkin
from . import network as _network

__all__ = ["Preset", "build_preset", "PRESETS", "make_law"]


@dataclass(frozen=True)
class Preset:
    name: str
    spec: SystemSpec
    x_hat: np.ndarray
    alpha: Optional[float] = None
    beta: Optional[float] = None
    linear_A: Optional[np.ndarray] = None
    galerkin_system: Optional[object] = None
    network_spec: Optional[object] = None
    notes: str = ""


def make_law(cfg: Optional[dict], default_dim: int) -> JumpLaw:
    """Jump-law selection from a config block."""
    cfg = dict(cfg or {})
    kind = cfg.pop("type", "gaussian")
    dim = int(cfg.pop("dim", default_dim))
    if kind == "gaussian":
        law = isotropic_gaussian(dim, float(cfg.pop("sigma", 1.0)))
    elif kind == "laplace":
        law = product_laplace(dim, float(cfg.pop("scale", 1.0)))
    elif kind == "mixture":
        law = gaussian_mixture(
            dim,
            weight=float(cfg.pop("weight", 0.5)),
            mean1=cfg.pop("mean1", None),
            mean2=cfg.pop("mean2", None),
            sigma1=float(cfg.pop("sigma1", 1.0)),
            sigma2=float(cfg.pop("sigma2", 0.5)),
        )
    else:
        raise ValueError(f"unknown jump law type {kind!r}")
    if cfg:
        raise ValueError(f"unknown jump law keys: {sorted(cfg)}")
    return law


def _pop(params, key, default):
    return params.pop(key, default)


def _linear_1d(params):
    alpha = float(_pop(params, "alpha", 0.5))
    rate = float(_pop(params, "rate", 1.0))
    law = make_law(_pop(params, "law", None), 1)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    A = np.array([[-alpha]])
    f = VectorField(1, lambda x: -alpha * x, jac=lambda x: A,
                    deriv=lambda x, dirs: (-alpha * dirs[0] if len(dirs) == 1
                                           else np.zeros(1)))
    spec = SystemSpec(f, np.eye(1), rate, law)
    return Preset("linear_1d", spec, np.zeros(1), alpha=alpha, beta=0.0, linear_A=A)


def _cubic_1d(params):
    rate = float(_pop(params, "rate", 1.0))
    law = make_law(_pop(params, "law", None), 1)
    f = VectorField(
        1, lambda x: -x - x ** 3,
        jac=lambda x: np.array([[-1.0 - 3.0 * float(np.asarray(x).ravel()[0]) ** 2]]),
    )
    spec = SystemSpec(f, np.eye(1), rate, law)
    return Preset("cubic_1d", spec, np.zeros(1), alpha=1.0, beta=0.0)


def _spiral_2d(params):
    # Degenerate forcing: one noise channel into the second coordinate of a
    # damped rotation; controllable through the drift only.
    rate = float(_pop(params, "rate", 1.0))
    law = make_law(_pop(params, "law", None), 1)
    A = np.array([[0.0, 1.0], [-1.0, -1.0]])
    f = VectorField(2, lambda x: x @ A.T, jac=lambda x: A)
    B = np.array([[0.0], [1.0]])
    spec = SystemSpec(f, B, rate, law)
    return Preset("spiral_2d", spec, np.zeros(2), alpha=None, beta=None, linear_A=A,
                  notes="damped rotation, forcing only in the momentum coordinate")


_G_CHOICES = {
    "zero": lambda params: _galerkin.G_ZERO,
    "sin": lambda params: _galerkin.g_sin(float(params.pop("g_amp", 1.0))),
    "bump": lambda params: _galerkin.g_bump(
        float(params.get("a", 1.0)), int(params.get("p", 3)),
        inner=float(params.pop("g_inner", 0.5)), outer=float(params.pop("g_outer", 1.0))),
}


def _galerkin_preset(params):
    D = int(_pop(params, "D", 1))
    N = int(_pop(params, "N", 2))
    nu = float(_pop(params, "nu", 1.0))
    g_name = str(_pop(params, "g", "zero"))
    if g_name not in _G_CHOICES:
        raise ValueError(f"unknown g gallery entry {g_name!r}")
    g = _G_CHOICES[g_name](params)
    a = float(_pop(params, "a", 1.0))
    p = int(_pop(params, "p", 3))
    rate = float(_pop(params, "rate", 1.0))
    h = _pop(params, "h", None)
    sys_ = _galerkin.GalerkinSystem(D=D, N=N, nu=nu, a=a, p=p, g=g,
                                    h=None if h is None else np.asarray(h, dtype=float))
    law = make_law(_pop(params, "law", None), sys_.forcing_dim)
    f = _galerkin.build_field(sys_)
    spec = SystemSpec(f, _galerkin.embedding_matrix(sys_), rate, law)
    return Preset("galerkin", spec, np.zeros(sys_.dim), alpha=nu, beta=None,
                  galerkin_system=sys_,
                  notes=f"D={D} N={N} p={p} g={g.name}")


_POTENTIALS = {
    "zero": lambda params: _network.ZERO_POTENTIAL,
    "cosine": lambda params: _network.cosine_potential(float(params.pop("u_amp", 1.0))),
    "bump": lambda params: _network.bump_potential(
        float(params.pop("u_amp", 1.0)), float(params.pop("u_radius", 1.0))),
}


def _chain(params, kind):
    driven = _pop(params, "driven", None)
    gamma = float(_pop(params, "gamma", 1.0))
    lam = float(_pop(params, "lambda", 0.1))
    pot_name = str(_pop(params, "potential", "zero"))
    if pot_name not in _POTENTIALS:
        raise ValueError(f"unknown potential {pot_name!r}")
    pot = _POTENTIALS[pot_name](params)
    rate = float(_pop(params, "rate", 1.0))
    adjacency = _pop(params, "adjacency", None)
    if adjacency is not None:
        if driven is None:
            raise ValueError("adjacency networks must name their driven vertices")
        nw = _network.network_from_adjacency(
            adjacency, driven, pinning=_pop(params, "pinning", 1.0),
            gamma=gamma, lam=lam, potential=pot)
    else:
        L = int(_pop(params, "L", 3))
        nw = _network.chain_network(L, driven=driven, gamma=gamma, lam=lam,
                                    potential=pot)
    law = make_law(_pop(params, "law", None), nw.n_driven)
    if kind == "langevin":
        spec = _network.build_langevin(nw, rate=rate, law=law)
        A = _network.langevin_matrices(nw)[0]
    else:
        spec = _network.build_semimarkov(nw, rate=rate, law=law)
        A = _network.semimarkov_matrices(nw)[0]
    lin = A if pot is _network.ZERO_POTENTIAL else None
    return Preset(f"chain_{kind}", spec, np.zeros(spec.dim), linear_A=lin,
                  network_spec=nw, notes=f"L={nw.size} driven={nw.driven}")


PRESETS = {
    "linear_1d": _linear_1d,
    "cubic_1d": _cubic_1d,
    "spiral_2d": _spiral_2d,
    "galerkin": _galerkin_preset,
    "chain_langevin": lambda p: _chain(p, "langevin"),
    "chain_semimarkov": lambda p: _chain(p, "semimarkov"),
}


def build_preset(name: str, params: Optional[dict] = None) -> Preset:
    """Instantiate a preset; unknown parameter keys are rejected."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    params = dict(params or {})
    preset = PRESETS[name](params)
    if params:
        raise ValueError(f"unknown parameters for preset {name!r}: {sorted(params)}")
    return preset
