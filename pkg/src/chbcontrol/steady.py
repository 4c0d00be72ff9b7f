"""Constant steady states, coupling constants and the steady Burgers flow.

Linearizing the concentration equation around a spatially constant state
phibar turns the quartic double-well nonlinearity into two constants,

    gamma1 = 4*phibar**3 - 4*phibar,
    gamma2 = -(12*phibar**2 - 4),

where gamma1 multiplies the concentration gradient feeding the fluid
equation and gamma2 the second-derivative (spinodal) term.  At
phibar in {0, +1, -1} the first constant vanishes and the fluid equation
decouples from the control; the solver keeps working there, but the
fluid component is then uncontrollable and retains a decay floor.

The background velocity ubar solves the steady viscous Burgers problem

    -gamma * ubar_xx + ubar * ubar_x = f_s,   ubar(0) = ubar(1) = 0,

by Picard iteration on the linear part.  The iteration converges for
small forcing; a doubling of the iterate norm is reported as a smallness
violation rather than iterated into overflow.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .mesh import Grid, assemble_operators, discrete_norms

#: Forcing amplitudes above ``SMALLNESS_FACTOR * gamma**2`` trigger a
#: smallness warning before the Picard iteration is attempted.  The
#: factor is an engineering default calibrated on the sine forcing
#: family, not a sharp constant.
SMALLNESS_FACTOR = 0.5


def coupling_constants(phibar):
    """Coupling constants (gamma1, gamma2) of the linearization at phibar.

    Parameters
    ----------
    phibar : float
        Constant concentration steady state.

    Returns
    -------
    (float, float)
        ``gamma1 = 4*phibar**3 - 4*phibar`` and
        ``gamma2 = -(12*phibar**2 - 4)``.
    """
    phibar = float(phibar)
    gamma1 = 4.0 * phibar**3 - 4.0 * phibar
    gamma2 = -(12.0 * phibar**2 - 4.0)
    return gamma1, gamma2


def is_decoupled(phibar, tol=1e-14):
    """True when gamma1 vanishes (phibar in {0, +1, -1}) and the fluid
    equation no longer sees the concentration field."""
    gamma1, _ = coupling_constants(phibar)
    return abs(gamma1) <= tol


class SmallnessViolation(RuntimeError):
    """Picard iteration for the steady flow diverged (forcing too large)."""


def solve_steady_burgers(grid, gamma, f_s, tol=1e-12, maxit=200):
    """Solve -gamma*u'' + u*u' = f_s with homogeneous Dirichlet ends.

    Picard iteration on the linear part: starting from u = 0, repeatedly
    solve ``-gamma * D2 u_{j+1} = f_s - u_j * D1 u_j`` on the interior
    nodes.  The iteration stops when successive iterates differ by less
    than ``tol`` in the weighted L2 norm.

    Parameters
    ----------
    grid : Grid
    gamma : float
        Viscosity, must be positive.
    f_s : numpy.ndarray, shape (n+1,) or (n-1,)
        Forcing profile on the full grid or on the interior nodes.
    tol : float
        Convergence tolerance on the iterate increment.
    maxit : int
        Maximum number of Picard sweeps.

    Returns
    -------
    ubar : numpy.ndarray, shape (n+1,)
        Steady velocity on all nodes (zeros at the ends).
    info : dict
        ``iterations`` and the final equation ``residual``.

    Raises
    ------
    SmallnessViolation
        If the iterate norm doubles from one sweep to the next, the
        standing smallness condition on the forcing is violated.
    RuntimeError
        If the iteration fails to reach ``tol`` within ``maxit`` sweeps.
    """
    if gamma <= 0.0:
        raise ValueError(f"viscosity gamma must be positive, got {gamma}")
    ops = assemble_operators(grid)
    norms = discrete_norms(grid, ops)

    f_s = np.asarray(f_s, dtype=float)
    if f_s.shape == (grid.n + 1,):
        f_int = f_s[1:-1]
    elif f_s.shape == (grid.n - 1,):
        f_int = f_s
    else:
        raise ValueError(f"forcing shape {f_s.shape} does not match grid n={grid.n}")

    f_norm = norms.l2(f_int)
    if f_norm > SMALLNESS_FACTOR * gamma**2:
        warnings.warn(
            f"forcing norm {f_norm:.3g} exceeds {SMALLNESS_FACTOR}*gamma^2 = "
            f"{SMALLNESS_FACTOR * gamma**2:.3g}; the Picard iteration may diverge",
            RuntimeWarning,
        )

    A = (-gamma * ops.D2_dir).tocsc()
    lu = spla.splu(A)

    u = np.zeros(grid.n - 1)
    prev_norm = 0.0
    for j in range(maxit):
        rhs = f_int - u * (ops.D1_dir @ u)
        u_next = lu.solve(rhs)
        delta = norms.l2(u_next - u)
        u_norm = norms.l2(u_next)
        if prev_norm > 0.0 and u_norm > 2.0 * prev_norm:
            raise SmallnessViolation(
                f"smallness violated: iterate norm grew {prev_norm:.3g} -> {u_norm:.3g} "
                f"at sweep {j + 1} (forcing norm {f_norm:.3g}, gamma={gamma})"
            )
        u = u_next
        prev_norm = u_norm
        if delta <= tol:
            residual = norms.l2(A @ u + u * (ops.D1_dir @ u) - f_int)
            ubar = np.zeros(grid.n + 1)
            ubar[1:-1] = u
            return ubar, {"iterations": j + 1, "residual": residual}
    raise RuntimeError(
        f"steady Burgers solve did not converge to {tol} in {maxit} Picard sweeps "
        f"(last increment {delta:.3g})"
    )


def derivative_full(grid, u):
    """Second-order derivative of a full-grid field, one-sided at the ends.

    Interior nodes use the centered stencil; the endpoints use the
    second-order one-sided stencils (-3u0 + 4u1 - u2)/(2dx) and its
    mirror, so the derivative is available on every node.
    """
    u = np.asarray(u, dtype=float)
    dx = grid.dx
    du = np.empty_like(u)
    du[1:-1] = (u[2:] - u[:-2]) / (2.0 * dx)
    du[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dx)
    du[-1] = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * dx)
    return du


def parse_forcing(spec, grid):
    """Build a steady-forcing profile from its config string.

    Accepted forms:

    * ``"zero"`` -- the zero profile;
    * ``"sine K AMP"`` -- ``AMP * sin(K * pi * x)``;
    * ``"csv:PATH:COLUMN"`` -- read COLUMN from a CSV file with an
      ``x`` column matching the grid nodes.
    """
    spec = spec.strip()
    if spec == "zero":
        return np.zeros(grid.n + 1)
    parts = spec.split()
    if parts[0] == "sine":
        if len(parts) != 3:
            raise ValueError(f"sine forcing needs 'sine K AMP', got {spec!r}")
        k, amp = int(parts[1]), float(parts[2])
        return amp * np.sin(k * np.pi * grid.x)
    if spec.startswith("csv:"):
        import csv

        try:
            _, path, column = spec.split(":")
        except ValueError:
            raise ValueError(f"csv forcing needs 'csv:PATH:COLUMN', got {spec!r}") from None
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or column not in rows[0]:
            raise ValueError(f"column {column!r} not found in {path}")
        vals = np.array([float(r[column]) for r in rows])
        if vals.shape != (grid.n + 1,):
            raise ValueError(
                f"forcing column {column!r} has {vals.size} rows, grid needs {grid.n + 1}"
            )
        return vals
    raise ValueError(f"unrecognized forcing spec {spec!r}")


@dataclass
class SystemParams:
    """Frozen description of one linearized problem instance.

    Attributes
    ----------
    grid : Grid
    gamma : float
        Viscosity of the fluid equation.
    phibar : float
        Constant concentration steady state used for the linearization.
    gamma1, gamma2 : float
        Coupling constants; derived from ``phibar`` unless supplied.
    ubar : numpy.ndarray, shape (n+1,)
        Steady velocity on all nodes.
    ubar_x : numpy.ndarray, shape (n+1,)
        Its derivative (one-sided second order at the ends).
    control_interval : (float, float)
        Open interval (a, b) where the concentration control acts.
    mask : numpy.ndarray, shape (n+1,)
        Node indicator of the control interval.
    """

    grid: Grid
    gamma: float
    phibar: float
    ubar: np.ndarray
    control_interval: tuple
    gamma1: float = None
    gamma2: float = None
    ubar_x: np.ndarray = None
    mask: np.ndarray = field(init=False)

    def __post_init__(self):
        g1, g2 = coupling_constants(self.phibar)
        if self.gamma1 is None:
            self.gamma1 = g1
        if self.gamma2 is None:
            self.gamma2 = g2
        self.ubar = np.asarray(self.ubar, dtype=float)
        if self.ubar.shape != (self.grid.n + 1,):
            raise ValueError(
                f"ubar shape {self.ubar.shape} does not match grid ({self.grid.n + 1},)"
            )
        if self.ubar_x is None:
            self.ubar_x = derivative_full(self.grid, self.ubar)
        self.mask = self.grid.control_mask(*self.control_interval)

    @property
    def decoupled(self):
        """True when the concentration no longer forces the fluid equation."""
        return abs(self.gamma1) <= 1e-14


def default_params(n=64, gamma=1.0, phibar=0.5, control_interval=(0.3, 0.7),
                   forcing="sine 1 0.1"):
    """Assemble the default problem instance used across the toolkit.

    The steady flow is solved from the given forcing spec (default
    ``0.1*sin(pi*x)``) at the given viscosity.
    """
    grid = Grid(n)
    f_s = parse_forcing(forcing, grid)
    ubar, _ = solve_steady_burgers(grid, gamma, f_s)
    return SystemParams(
        grid=grid, gamma=gamma, phibar=phibar, ubar=ubar,
        control_interval=control_interval,
    )
