"""Singular-weight diagnostics for the adjoint system.

The observability argument behind the control synthesis rests on a
weighted energy inequality for the adjoint pair (sigma, v).  The
weights blow up at both ends of the time interval and are shaped in
space by an auxiliary function ``nu`` that is flat near the boundary
and peaks once inside the observation window.  This module builds
``nu`` in closed form, evaluates the weight pair (phi_m, xi_m) and the
combined factors exp(-2*s*phi_m)*xi_m**l, and probes the inequality

    s^3 l^4 |grad sigma|^2- and s^7 l^8 |v|^2-terms
        <=  C * s^39 l^40 |v|^2-term over the control window

on random adjoint samples.  At any admissible ``s`` the combined
factors are far below the smallest positive double, so every
accumulation here runs in log space (``scipy.special.logsumexp``);
linear values are reported as the exponential of the log result and
may legitimately round to zero.
"""

import numpy as np
from dataclasses import dataclass, field
from scipy.special import logsumexp

from .adjoint import solve_adjoint
from .dynamics import CoupledState
from .errors import ConfigurationError
from .steady import derivative_full

__all__ = [
    "NuFunction", "build_nu", "s_floor", "CarlemanWeights",
    "make_carleman_weights", "eval_carleman_weights", "WeightEval",
    "CarlemanProbe", "carleman_ratio", "probe_carleman", "ProbeSummary",
    "weight_derivative_constant",
]

# Exponents outside this band are clamped before exponentiation so
# direct evaluation degrades to 0.0 / inf instead of warning.
_EXP_CLAMP = 700.0


def _safe_exp(a):
    return np.exp(np.clip(a, -_EXP_CLAMP, _EXP_CLAMP))


def _exp_underflowing(a):
    """Exponential clamped above only: tiny exponents underflow honestly.

    Unlike :func:`_safe_exp` this keeps subnormal results (down to about
    exp(-745)) instead of flooring them, so a ratio of two astronomically
    small quantities is reported at its true magnitude whenever that
    magnitude is representable at all.
    """
    with np.errstate(under="ignore"):
        return np.exp(np.minimum(a, _EXP_CLAMP))


def _smoothstep(u, order=0):
    """The degree-7 step S with S(0)=0, S(1)=1 and three flat derivatives.

    ``order`` selects S itself, one of its first three derivatives, or
    (order=-1) its antiderivative vanishing at 0.  Flat third
    derivatives at both ends are what make the slope profile built from
    S three times differentiable, hence the integrated profile four
    times.
    """
    u = np.asarray(u, dtype=float)
    if order == -1:
        return u**5 * (7.0 - 14.0 * u + 10.0 * u**2 - 2.5 * u**3)
    if order == 0:
        return u**4 * (35.0 - 84.0 * u + 70.0 * u**2 - 20.0 * u**3)
    if order == 1:
        return 140.0 * u**3 * (1.0 - u) ** 3
    if order == 2:
        return 420.0 * u**2 * (1.0 - u) ** 2 * (1.0 - 2.0 * u)
    if order == 3:
        return 840.0 * u * (1.0 - u) * (5.0 * u**2 - 5.0 * u + 1.0)
    raise ValueError(f"unsupported smoothstep order {order}")


@dataclass(frozen=True)
class NuFunction:
    """Closed-form spatial profile for the singular weights.

    Piecewise definition on [0, 1]: slope ``+c_left`` up to ``p``,
    slope ``-c_right`` from ``q`` on, and a smooth monotone slope
    reversal on (p, q) that crosses zero exactly once.  The two plateau
    slopes are balanced so the profile returns to zero at x = 1, and
    the whole profile is scaled so its maximum is one.  Values and
    derivatives up to fourth order are available at arbitrary points;
    ``values`` through ``d4`` cache them on the construction grid.

    Attributes
    ----------
    a0, b0 : float
        Observation subwindow; the slope reversal happens strictly
        inside it, so the slope magnitude stays >= ``slope_floor``
        everywhere outside.
    p, q : float
        Endpoints of the reversal window.
    c_left, c_right : float
        Plateau slope magnitudes after normalization.
    x_peak : float
        The single interior maximum (zero of the slope).
    """

    a0: float
    b0: float
    p: float
    q: float
    c_left: float
    c_right: float
    x_peak: float
    slope_floor: float
    norm_inf: float
    values: np.ndarray = field(repr=False)
    d1: np.ndarray = field(repr=False)
    d2: np.ndarray = field(repr=False)
    d3: np.ndarray = field(repr=False)
    d4: np.ndarray = field(repr=False)

    def derivative(self, x, order=0):
        """Evaluate the profile (order 0) or one of its derivatives 1..4."""
        x = np.asarray(x, dtype=float)
        if np.any(x < -1e-12) or np.any(x > 1.0 + 1e-12):
            raise ConfigurationError("nu is defined on [0, 1] only")
        if order not in (0, 1, 2, 3, 4):
            raise ConfigurationError("nu carries derivatives up to order 4")
        p, q = self.p, self.q
        cl, cr = self.c_left, self.c_right
        width = q - p
        out = np.zeros_like(x)
        left = x <= p
        right = x >= q
        mid = ~(left | right)
        u = (x[mid] - p) / width
        if order == 0:
            out[left] = cl * x[left]
            out[right] = cr * (1.0 - x[right])
            out[mid] = cl * p + width * (
                cl * u - (cl + cr) * _smoothstep(u, order=-1))
        elif order == 1:
            out[left] = cl
            out[right] = -cr
            out[mid] = cl - (cl + cr) * _smoothstep(u, order=0)
        else:
            out[mid] = -(cl + cr) * _smoothstep(u, order=order - 1) / width ** (
                order - 1)
        return out if out.ndim else float(out)


def build_nu(window, grid, control_interval=None, delta_fraction=0.25):
    """Construct the spatial weight profile for an observation window.

    The slope is held at a constant positive value left of the window's
    interior, a constant negative value right of it, and reversed
    across the middle ``1 - 2*delta_fraction`` portion of the window by
    a smooth step, so that the slope vanishes exactly once.  The two
    plateau levels are balanced so the integrated profile vanishes at
    both ends, and the result is scaled to peak at one.  When the
    window is centered the two levels coincide and the zero slope falls
    at the exact midpoint of the reversal.

    Parameters
    ----------
    window : tuple of float
        Open interval (a0, b0), strictly inside (0, 1).
    grid : Grid
        Construction grid; values and derivatives are cached on it.
    control_interval : tuple of float, optional
        When given, the window must sit strictly inside it.
    delta_fraction : float, optional
        Fraction of the window kept at plateau slope on each side.

    Returns
    -------
    NuFunction

    Raises
    ------
    ConfigurationError
        If the window is not, strictly, an interior subinterval.
    """
    a0, b0 = float(window[0]), float(window[1])
    if not (0.0 < a0 < b0 < 1.0):
        raise ConfigurationError(
            f"observation window ({a0}, {b0}) must satisfy 0 < a0 < b0 < 1"
        )
    if control_interval is not None:
        a, b = control_interval
        if not (a < a0 and b0 < b):
            raise ConfigurationError(
                f"observation window ({a0}, {b0}) must sit strictly inside "
                f"the control interval ({a}, {b})"
            )
    if not (0.0 < delta_fraction < 0.5):
        raise ConfigurationError("delta_fraction must lie in (0, 0.5)")
    delta = delta_fraction * (b0 - a0)
    p, q = a0 + delta, b0 - delta
    x_mid = 0.5 * (p + q)
    # Slope levels balanced so the profile integrates to zero over [0, 1].
    r = x_mid / (1.0 - x_mid)
    # Peak location: the smooth step crosses the level 1/(1+r) once.
    target = 1.0 / (1.0 + r)
    lo, hi = 0.0, 1.0
    for _ in range(200):
        midu = 0.5 * (lo + hi)
        if _smoothstep(midu) < target:
            lo = midu
        else:
            hi = midu
    u_star = 0.5 * (lo + hi)
    x_peak = p + (q - p) * u_star
    peak = p + (q - p) * (u_star - (1.0 + r) * _smoothstep(u_star, order=-1))
    scale = 1.0 / peak
    cl, cr = scale, r * scale
    proto = NuFunction(
        a0=a0, b0=b0, p=p, q=q, c_left=cl, c_right=cr, x_peak=x_peak,
        slope_floor=min(cl, cr), norm_inf=1.0,
        values=np.zeros(0), d1=np.zeros(0), d2=np.zeros(0),
        d3=np.zeros(0), d4=np.zeros(0))
    tables = [proto.derivative(grid.x, order=o) for o in range(5)]
    return NuFunction(
        a0=a0, b0=b0, p=p, q=q, c_left=cl, c_right=cr, x_peak=x_peak,
        slope_floor=min(cl, cr), norm_inf=1.0,
        values=tables[0], d1=tables[1], d2=tables[2], d3=tables[3],
        d4=tables[4])


def s_floor(mu0, growth, T, m):
    """Smallest admissible weight strength for a horizon ``T``.

    ``mu0 * (exp(m*growth*T)*T**m + T**(2m-1) + T**(2m))`` with ``mu0``
    and ``growth`` free configuration constants.
    """
    return mu0 * (np.exp(m * growth * T) * T**m + T ** (2 * m - 1)
                  + T ** (2 * m))


@dataclass(frozen=True)
class CarlemanWeights:
    """Parameter bundle for the singular weight pair.

    ``phi(t, x) = (E - exp(lam*(k*|nu| + nu(x)))) / (t*(T-t))**m`` and
    ``xi(t, x) = exp(lam*(k*|nu| + nu(x))) / (t*(T-t))**m`` with
    ``E = exp(((m+1)/m)*lam*k*|nu|)``; ``k > m`` makes the numerator of
    ``phi`` positive for every x, so both weights are positive on the
    open time interval.
    """

    nu: NuFunction
    lam: float
    s: float
    k: int
    m: int
    T: float
    mu0: float
    growth: float
    s_min: float
    slope_floor: float


def make_carleman_weights(nu, T, lam=2.0, s=None, k=5, m=4, mu0=1.0,
                          growth=1.0):
    """Validate and freeze a weight parameter set.

    ``s`` defaults to the admissibility floor itself.  Rejections name
    the violated bound.
    """
    if not (isinstance(m, (int, np.integer)) and m > 3):
        raise ConfigurationError(f"m={m}: m must be an integer > 3")
    if not (isinstance(k, (int, np.integer)) and k > m):
        raise ConfigurationError(f"k={k}: k must be an integer > m={m}")
    if lam < 1.0:
        raise ConfigurationError(f"lambda={lam}: lambda must be >= 1")
    if T <= 0.0:
        raise ConfigurationError(f"T={T}: horizon must be positive")
    top_exponent = (m + 1) / m * lam * k * nu.norm_inf
    if top_exponent > 690.0:
        raise ConfigurationError(
            f"lam*k too large: exponent {top_exponent:.1f} overflows double "
            "precision; reduce lambda or k"
        )
    floor = float(s_floor(mu0, growth, T, m))
    if s is None:
        s = floor
    if s < floor * (1.0 - 1e-12):
        raise ConfigurationError(
            f"s={s} below the admissibility floor "
            f"mu0*(exp(m*C*T)*T^m + T^(2m-1) + T^(2m)) = {floor:.6g}"
        )
    return CarlemanWeights(nu=nu, lam=float(lam), s=float(s), k=int(k),
                           m=int(m), T=float(T), mu0=float(mu0),
                           growth=float(growth), s_min=floor,
                           slope_floor=nu.slope_floor)


@dataclass(frozen=True)
class WeightEval:
    """Weight pair and combined log factors at one time slice."""

    t: float
    phi: np.ndarray
    xi: np.ndarray
    log_xi: np.ndarray
    log_factors: dict


def _log_gap(t, T):
    return np.log(t) + np.log(T - t)


def eval_carleman_weights(weights, t, x=None, powers=(3,)):
    """Evaluate the weight pair and combined factors at one time.

    Parameters
    ----------
    weights : CarlemanWeights
    t : float
        Must lie strictly inside (0, T); the weights diverge at the
        ends and their combined factors vanish there in the limit.
    x : array_like, optional
        Evaluation points; defaults to the profile's construction grid
        values.
    powers : sequence of int, optional
        Exponents l for which ``log(exp(-2*s*phi) * xi**l)`` is
        returned.

    Returns
    -------
    WeightEval
        ``log_factors[l]`` holds the combined factor in log form; its
        exponential (clamped at +-700) is the direct value.
    """
    T, m, lam, k, s = (weights.T, weights.m, weights.lam, weights.k,
                       weights.s)
    if not (0.0 < t < T):
        raise ConfigurationError(
            f"t={t} outside the open horizon (0, {T}); the weights are "
            "singular at the ends"
        )
    nu_x = weights.nu.values if x is None else weights.nu.derivative(x, 0)
    bump = lam * (k * weights.nu.norm_inf + nu_x)
    top = np.exp((m + 1) / m * lam * k * weights.nu.norm_inf)
    log_g = m * _log_gap(t, T)
    gap = np.exp(log_g)
    phi = (top - np.exp(bump)) / gap
    log_xi = bump - log_g
    xi = _safe_exp(log_xi)
    factors = {int(l): -2.0 * s * phi + l * log_xi for l in powers}
    return WeightEval(t=float(t), phi=phi, xi=xi, log_xi=log_xi,
                      log_factors=factors)


@dataclass(frozen=True)
class CarlemanProbe:
    """Two-sided weighted energy accounting for one adjoint sample.

    Linear values are ``exp`` of the log results and may round to zero;
    the log fields are the authoritative outputs.
    """

    sample_id: int
    s: float
    lam: float
    lhs: float
    rhs: float
    ratio: float
    log_lhs: float
    log_rhs: float
    log_ratio: float
    degenerate: bool
    diagnostic: str


def carleman_ratio(prop, z_T, n_steps, weights, s=None, lam=None,
                   sample_id=0):
    """Probe the weighted adjoint inequality from one terminal sample.

    Solves the adjoint system backward from ``z_T``, then accumulates
    in log space

    - left side: ``s^3 lam^4`` times the weighted square of the fluid
      adjoint's spatial derivative with factor exp(-2s*phi)*xi^3, plus
      ``s^7 lam^8`` times the weighted square of the concentration
      adjoint with factor exp(-2s*phi)*xi^7;
    - right side: ``s^39 lam^40`` times the weighted square of the
      concentration adjoint over the control interval with factor
      exp(-2s*phi)*xi^39.

    The first and last time steps are excluded: the combined factors
    vanish there in the analytic limit.  The reported ratio lhs/rhs is
    an empirical lower bound for the constant of the inequality; it is
    invariant under scaling of ``z_T``.

    Parameters
    ----------
    prop : Propagator
    z_T : CoupledState or numpy.ndarray
    n_steps : int
    weights : CarlemanWeights
    s, lam : float, optional
        Override the bundled values; ``s`` must stay at or above the
        bundled admissibility floor.

    Returns
    -------
    CarlemanProbe
        With ``degenerate=True`` (and nan ratio) for ``z_T = 0``, and a
        "weight underflow" diagnostic when the right side rounds to
        zero in linear arithmetic while the left side does not.
    """
    s = weights.s if s is None else float(s)
    lam = weights.lam if lam is None else float(lam)
    if s < weights.s_min * (1.0 - 1e-12):
        raise ConfigurationError(
            f"s={s} below the admissibility floor {weights.s_min:.6g}"
        )
    if lam < 1.0:
        raise ConfigurationError(f"lambda={lam}: lambda must be >= 1")
    zv = z_T.as_vector() if isinstance(z_T, CoupledState) else np.asarray(
        z_T, dtype=float)
    dt = prop.dt
    T = n_steps * dt
    if abs(weights.T - T) > 1e-9 * max(T, 1.0):
        raise ConfigurationError(
            f"weights live on T={weights.T}, probe horizon is {T}"
        )
    if not np.any(zv):
        return CarlemanProbe(
            sample_id=sample_id, s=s, lam=lam, lhs=0.0, rhs=0.0,
            ratio=float("nan"), log_lhs=-np.inf, log_rhs=-np.inf,
            log_ratio=float("nan"), degenerate=True,
            diagnostic="zero terminal sample: both sides vanish")

    grid = prop.grid
    ni = grid.x_interior.size
    quad = grid.quad_weights
    mask = prop.params.mask
    adj = solve_adjoint(prop, zv, n_steps)

    rows_a, rows_lxi = [], []
    rows_b_sig, rows_b_v, rows_b_obs = [], [], []
    norm_inf = weights.nu.norm_inf
    bump = weights.lam * (weights.k * norm_inf + weights.nu.values)
    top = np.exp((weights.m + 1) / weights.m * weights.lam * weights.k
                 * norm_inf)
    for j in range(1, n_steps):
        t = j * dt
        log_g = weights.m * _log_gap(t, T)
        phi = (top - np.exp(bump)) / np.exp(log_g)
        log_xi = bump - log_g
        sigma = np.zeros(grid.x.size)
        sigma[1:-1] = adj.states[j][:ni]
        sigma_x = derivative_full(grid, sigma)
        v = adj.states[j][ni:]
        rows_a.append(-2.0 * s * phi)
        rows_lxi.append(log_xi)
        rows_b_sig.append(dt * quad * sigma_x**2)
        rows_b_v.append(dt * quad * v**2)
        rows_b_obs.append(dt * quad * mask * v**2)

    a = np.concatenate(rows_a)
    lxi = np.concatenate(rows_lxi)
    b_sig = np.concatenate(rows_b_sig)
    b_v = np.concatenate(rows_b_v)
    b_obs = np.concatenate(rows_b_obs)

    def _accumulate(l_power, b):
        if not np.any(b > 0.0):
            return -np.inf
        with np.errstate(divide="ignore"):
            return float(logsumexp(a + l_power * lxi, b=b))

    log_sig = 3.0 * np.log(s) + 4.0 * np.log(lam) + _accumulate(3, b_sig)
    log_v = 7.0 * np.log(s) + 8.0 * np.log(lam) + _accumulate(7, b_v)
    log_lhs = float(np.logaddexp(log_sig, log_v))
    log_rhs = 39.0 * np.log(s) + 40.0 * np.log(lam) + _accumulate(39, b_obs)
    log_ratio = log_lhs - log_rhs

    lhs = float(_exp_underflowing(log_lhs))
    rhs = float(_exp_underflowing(log_rhs))
    ratio = float(_exp_underflowing(log_ratio))
    diagnostic = ""
    if rhs == 0.0 and lhs > 0.0:
        diagnostic = ("weight underflow: right side rounds to zero in "
                      "linear arithmetic; use the log fields or a smaller s")
    if not np.isfinite(log_rhs):
        diagnostic = ("degenerate observation: the concentration adjoint "
                      "vanishes on the control interval")
    return CarlemanProbe(
        sample_id=sample_id, s=s, lam=lam, lhs=lhs, rhs=rhs, ratio=ratio,
        log_lhs=log_lhs, log_rhs=log_rhs, log_ratio=log_ratio,
        degenerate=False, diagnostic=diagnostic)


@dataclass(frozen=True)
class ProbeSummary:
    """Monte-Carlo probe outcome: per-sample rows and the empirical max."""

    rows: list
    max_ratio: float
    max_log_ratio: float

    @property
    def empirical_constant(self):
        """Largest observed ratio — the probe's lower bound estimate."""
        return self.max_ratio


def probe_carleman(prop, weights, n_steps, n_samples=20, seed=0):
    """Run the weighted-inequality probe on random terminal samples.

    Samples standard normal terminal data, probes each, and reports the
    largest ratio (and its log) as the empirical constant estimate.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_samples):
        z_T = rng.standard_normal(prop.dim)
        rows.append(carleman_ratio(prop, z_T, n_steps, weights,
                                   sample_id=i))
    finite = [r.log_ratio for r in rows if np.isfinite(r.log_ratio)]
    return ProbeSummary(
        rows=rows,
        max_ratio=max((r.ratio for r in rows if np.isfinite(r.ratio)),
                      default=float("nan")),
        max_log_ratio=max(finite) if finite else float("nan"))


def weight_derivative_constant(weights, power=3, n_times=9, refine=10):
    """Fit the constant in the spatial-derivative bound for a factor.

    For F = exp(-2s*phi)*xi**l the spatial derivative obeys
    ``|dF/dx| <= C * s*lam * F * xi`` with C controlled by the profile
    slope.  The fit differences log F on a refined grid and returns the
    largest observed quotient ``|d(log F)/dx| / (s*lam*xi)`` over the
    sampled interior points and a spread of interior times.
    """
    nu = weights.nu
    n_dense = refine * max(64, 2 * (len(nu.values) - 1)) + 1
    x = np.linspace(0.0, 1.0, n_dense)
    dx = x[1] - x[0]
    T, s, lam = weights.T, weights.s, weights.lam
    worst = 0.0
    for t in np.linspace(0.1 * T, 0.9 * T, n_times):
        ev = eval_carleman_weights(weights, float(t), x=x, powers=(power,))
        logf = ev.log_factors[power]
        dlogf = (logf[2:] - logf[:-2]) / (2.0 * dx)
        quotient = np.abs(dlogf) / (s * lam * _safe_exp(ev.log_xi[1:-1]))
        worst = max(worst, float(np.max(quotient)))
    return worst
