"""Uniform grid, finite-difference operators and discrete norms on [0, 1].

Two families of unknowns live on the same uniform grid x_i = i/n:

* Dirichlet fields (the fluid perturbation w and its adjoint sigma) are
  stored on the n-1 interior nodes; the boundary values are identically
  zero and are eliminated from the linear algebra.
* Neumann-type fields (the concentration perturbation psi and its adjoint
  v, with psi_x = psi_xxx = 0 at both ends) are stored on all n+1 nodes.
  Boundary closures use even reflection across each endpoint
  (psi_{-j} = psi_j), which enforces the odd-derivative conditions and
  keeps the discrete cosine modes cos(k*pi*x) exact eigenvectors of the
  second- and fourth-derivative operators.

All operators are second-order central differences assembled once into
sparse matrices with bandwidth at most five.  Inner products and norms are
trapezoid-weighted, so the reflection-closed operators are exactly
self-adjoint (and the first-derivative operators exactly skew-adjoint on
interior rows) with respect to the discrete inner product.  That exactness
is what the discrete adjoint and Gramian machinery downstream relies on.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass
class Grid:
    """Uniform grid on [0, 1] with n cells (n+1 nodes, spacing dx = 1/n).

    Attributes
    ----------
    n : int
        Number of cells; must be at least 8 so every five-point stencil
        has room between the boundary closures.
    dx : float
        Grid spacing 1/n.
    x : numpy.ndarray, shape (n+1,)
        Node coordinates x_i = i*dx.
    quad_weights : numpy.ndarray, shape (n+1,)
        Trapezoid quadrature weights (dx/2 at the endpoints, dx inside).
        They sum to 1, the length of the domain.
    """

    n: int
    dx: float = field(init=False)
    x: np.ndarray = field(init=False)
    quad_weights: np.ndarray = field(init=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8:
            raise ValueError(
                f"grid needs n >= 8 cells for the five-point boundary closures, got n={self.n}"
            )
        self.n = int(self.n)
        self.dx = 1.0 / self.n
        self.x = np.linspace(0.0, 1.0, self.n + 1)
        w = np.full(self.n + 1, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        self.quad_weights = w

    @property
    def x_interior(self):
        """Coordinates of the n-1 interior (Dirichlet) nodes."""
        return self.x[1:-1]

    @property
    def interior_weights(self):
        """Quadrature weights of the interior nodes (all equal to dx)."""
        return np.full(self.n - 1, self.dx)

    def control_mask(self, a, b):
        """Indicator of the open control interval (a, b) on the full grid.

        Returns a float array of shape (n+1,) with 1.0 at nodes strictly
        inside (a, b) and 0.0 elsewhere.
        """
        if not (0.0 <= a < b <= 1.0):
            raise ValueError(f"control interval must satisfy 0 <= a < b <= 1, got ({a}, {b})")
        mask = ((self.x > a) & (self.x < b)).astype(float)
        if not mask.any():
            raise ValueError(
                f"control interval ({a}, {b}) contains no grid nodes at n={self.n}"
            )
        return mask


@dataclass
class SpatialOperators:
    """Sparse difference operators for one grid.

    ``*_dir`` operators act on interior-node (Dirichlet) fields of length
    n-1; ``*_neu`` operators act on full-grid (reflection-closed) fields
    of length n+1.
    """

    grid: Grid
    D1_dir: sp.csr_matrix
    D2_dir: sp.csr_matrix
    D1_neu: sp.csr_matrix
    D2_neu: sp.csr_matrix
    D4_neu: sp.csr_matrix


def assemble_operators(grid):
    """Build all difference operators for ``grid``.

    Dirichlet operators drop the (zero) boundary values; reflection-closed
    operators fold the ghost values psi_{-j} = psi_j into the boundary
    rows.  The resulting closures are

    * D2_neu row 0:  (2*psi_1 - 2*psi_0) / dx^2
    * D4_neu row 0:  (6*psi_0 - 8*psi_1 + 2*psi_2) / dx^4
    * D4_neu row 1:  (-4*psi_0 + 7*psi_1 - 4*psi_2 + psi_3) / dx^4
    * D1_neu rows 0 and n vanish identically (psi_1 - psi_{-1} = 0),

    mirrored at the right end.  All five matrices have bandwidth <= 5.

    Returns
    -------
    SpatialOperators
    """
    n, dx = grid.n, grid.dx
    m = n - 1  # number of interior nodes

    one = np.ones(m)
    D1_dir = sp.diags([-one[1:], one[:-1]], offsets=[-1, 1], shape=(m, m)) / (2.0 * dx)
    D2_dir = sp.diags([one[1:], -2.0 * one, one[:-1]], offsets=[-1, 0, 1], shape=(m, m)) / dx**2

    N = n + 1
    D1_neu = sp.lil_matrix((N, N))
    for i in range(1, n):
        D1_neu[i, i - 1] = -1.0
        D1_neu[i, i + 1] = 1.0
    D1_neu = (D1_neu / (2.0 * dx)).tocsr()

    D2_neu = sp.lil_matrix((N, N))
    D2_neu[0, 0], D2_neu[0, 1] = -2.0, 2.0
    for i in range(1, n):
        D2_neu[i, i - 1], D2_neu[i, i], D2_neu[i, i + 1] = 1.0, -2.0, 1.0
    D2_neu[n, n - 1], D2_neu[n, n] = 2.0, -2.0
    D2_neu = (D2_neu / dx**2).tocsr()

    D4_neu = sp.lil_matrix((N, N))
    D4_neu[0, 0], D4_neu[0, 1], D4_neu[0, 2] = 6.0, -8.0, 2.0
    D4_neu[1, 0], D4_neu[1, 1], D4_neu[1, 2], D4_neu[1, 3] = -4.0, 7.0, -4.0, 1.0
    for i in range(2, n - 1):
        for j, c in zip(range(i - 2, i + 3), (1.0, -4.0, 6.0, -4.0, 1.0)):
            D4_neu[i, j] = c
    D4_neu[n - 1, n], D4_neu[n - 1, n - 1], D4_neu[n - 1, n - 2], D4_neu[n - 1, n - 3] = (
        -4.0, 7.0, -4.0, 1.0,
    )
    D4_neu[n, n], D4_neu[n, n - 1], D4_neu[n, n - 2] = 6.0, -8.0, 2.0
    D4_neu = (D4_neu / dx**4).tocsr()

    return SpatialOperators(
        grid=grid, D1_dir=D1_dir.tocsr(), D2_dir=D2_dir.tocsr(),
        D1_neu=D1_neu, D2_neu=D2_neu, D4_neu=D4_neu,
    )


class DiscreteNorms:
    """Trapezoid-weighted norms and seminorms for grid fields.

    Fields of length n-1 are treated as Dirichlet (interior) fields and
    extended by zero; fields of length n+1 are treated as full-grid
    fields.  Seminorms apply the matching difference operator first.
    """

    def __init__(self, grid, ops=None):
        self.grid = grid
        self.ops = ops if ops is not None else assemble_operators(grid)

    def _weights_for(self, f):
        f = np.asarray(f)
        if f.shape[-1] == self.grid.n + 1:
            return self.grid.quad_weights
        if f.shape[-1] == self.grid.n - 1:
            return self.grid.interior_weights
        raise ValueError(
            f"field length {f.shape[-1]} matches neither interior ({self.grid.n - 1}) "
            f"nor full ({self.grid.n + 1}) layout"
        )

    def l2(self, f):
        """Weighted L2 norm of a field."""
        w = self._weights_for(f)
        return float(np.sqrt(np.sum(w * np.asarray(f) ** 2, axis=-1)))

    def inner(self, f, g):
        """Weighted L2 inner product of two same-layout fields."""
        w = self._weights_for(f)
        return float(np.sum(w * np.asarray(f) * np.asarray(g)))

    def _as_full(self, f):
        """Zero-extend an interior field to the full grid (no-op for full)."""
        f = np.asarray(f, dtype=float)
        if f.shape[-1] == self.grid.n - 1:
            full = np.zeros(f.shape[:-1] + (self.grid.n + 1,))
            full[..., 1:-1] = f
            return full
        if f.shape[-1] == self.grid.n + 1:
            return f
        raise ValueError(
            f"field length {f.shape[-1]} matches neither interior ({self.grid.n - 1}) "
            f"nor full ({self.grid.n + 1}) layout"
        )

    def h1_semi(self, f):
        """Weighted L2 norm of the discrete first derivative.

        The derivative is formed on every node (centered inside,
        one-sided second order at the ends) so the boundary cells
        contribute their quadrature share; interior fields are
        zero-extended first.
        """
        u = self._as_full(f)
        dx = self.grid.dx
        du = np.empty_like(u)
        du[1:-1] = (u[2:] - u[:-2]) / (2.0 * dx)
        du[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dx)
        du[-1] = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * dx)
        return float(np.sqrt(np.sum(self.grid.quad_weights * du**2)))

    def h2_semi(self, f):
        """Weighted L2 norm of the discrete second derivative.

        Full-grid fields use the reflection-closed operator (exact to
        second order for the even-derivative boundary class); interior
        fields are zero-extended and use one-sided second-order stencils
        at the two boundary nodes.
        """
        f = np.asarray(f, dtype=float)
        if f.shape[-1] == self.grid.n + 1:
            return self.l2(self.ops.D2_neu @ f)
        u = self._as_full(f)
        dx = self.grid.dx
        d2 = np.empty_like(u)
        d2[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / dx**2
        d2[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / dx**2
        d2[-1] = (2.0 * u[-1] - 5.0 * u[-2] + 4.0 * u[-3] - u[-4]) / dx**2
        return float(np.sqrt(np.sum(self.grid.quad_weights * d2**2)))

    def h21(self, f):
        """Norm ||f||_L2 + ||f_xx||_L2 used for the concentration field."""
        return self.l2(f) + self.h2_semi(f)


def discrete_norms(grid, ops=None):
    """Return the :class:`DiscreteNorms` bundle for ``grid``."""
    return DiscreteNorms(grid, ops)
