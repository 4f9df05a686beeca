"""hillflow: spectral machinery for Hill operators and separable 2D potentials.

Subpackage map:

- ``lattice``     planar lattices, dual bases, fundamental directions
- ``hill1d``      monodromy shooting, band/gap/Dirichlet spectra, Galerkin oracle
- ``weierstrass`` one-gap potentials from elliptic functions, gap <-> tau
- ``finitegap``   torus coordinates, Dirichlet flows, squared eigenfunctions
- ``potential2d`` manifold points, directional realization, 2D assembly
- ``invariants``  quadrature invariants, closed forms, coupling-size selection
- ``jacobian``    finite-difference Jacobian, block structure, rigidity scan
- ``cli``         command-line front end
"""

from . import errors

__all__ = ["errors"]
__version__ = "0.1.0"
