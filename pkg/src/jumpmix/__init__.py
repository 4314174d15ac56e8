"""jumpmix: simulation and certification toolkit for SDEs driven by compound
Poisson noise.

Submodules: dynamics (fields and flows), noise (jump laws and paths), pdmp
(the jump-flow process and block maps), coupling (maximal and block
couplings), controllability (rank certificates), galerkin (spectral torus
systems and steering), network (oscillator models), diagnostics (TV and
mixing estimators), gallery (named presets), cli (batch driver).
"""

from . import (controllability, coupling, diagnostics, dynamics, galerkin,
               gallery, network, noise, pdmp)

__version__ = "0.1.0"
