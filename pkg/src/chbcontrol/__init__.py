"""Numerical toolkit for null-control synthesis and verification of a
one-dimensional Cahn-Hilliard system coupled to a linearized Burgers flow.

The package builds steady states, discretizes the coupled linearized
dynamics and its exact discrete adjoint, synthesizes penalized-HUM null
controls, assembles piecewise controls against time-weighted source terms,
closes the loop on the semilinear system with a fixed-point iteration, and
probes Carleman-type observability weights.
"""

__version__ = "0.1.0"
