"""Taylor-Hood Stokes and generalized Smagorinski solvers on tetrahedral meshes.

The package covers conforming tetrahedral meshes of the unit cube, P2/P1
velocity-pressure spaces, weighted Sobolev norms with Muckenhoupt-type
weight diagnostics, linear Stokes solves (including Dirac forcing and the
Stokes projection), monotone non-Newtonian solvers, and a refinement-study
harness with a command line front end.
"""

from wstokes._kernels import backend_name

__all__ = ["backend_name"]
__version__ = "0.1.0"
