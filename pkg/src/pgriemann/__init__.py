"""pgriemann: four-wave Riemann interaction solver for the pressure gradient system.

Self-similar two-dimensional flow is reduced, in polar coordinates on the
plane of similarity variables, to a free boundary problem: a degenerate
elliptic equation for the pressure inside the sonic circle of the high
pressure state, coupled to an ODE for the curved shock that closes the
subsonic region from below.  The package builds the far-field wave pattern
from the sector data, solves the free boundary problem by nested iteration
with elliptic regularization, recovers the transport velocities, and runs a
battery of structural checks (shock/sonic gaps, convexity, boundary
regularity, interior ellipticity) on the computed solution.

Modules
-------
riemann_setup    sector states, planar waves midfield geometry, anchors
geometry_grid    body-fitted polar grid, free-boundary curve, field containers
elliptic_core    cut-off linearized operator, assembly, sparse linear solve
shock_front      shock ODE right-hand side, oblique boundary coefficients,
                 curve update map
solver_driver    Picard / free-boundary / continuation loops
field_recovery   velocity reconstruction and composite point sampling
verify_report    structural checks and the machine-readable report
cli_io           configuration, CSV/JSON artifacts, command line interface
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
