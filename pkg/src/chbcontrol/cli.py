"""Command-line experiment runner.

Seven subcommands cover the toolkit end to end: ``steady`` (background
flow), ``simulate`` (uncontrolled linear run), ``control`` (penalized
null-control solve), ``source-term`` (piecewise control against a
decaying source), ``nonlinear`` (fixed-point controller with closed-loop
verification), ``carleman`` (weighted adjoint inequality probe), and
``sweep`` (control cost across shrinking horizons).  Every subcommand
reads one sectioned config file, writes CSV tables plus rendered figures
into the output directory, and finishes with a plain-text manifest.
Identical config and seed give byte-identical CSV files.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .carleman import (build_nu, make_carleman_weights, probe_carleman,
                       weight_derivative_constant)
from .config import apply_overrides, load_config
from .dynamics import build_propagator, solve_forward, solve_nonlinear_forward
from .errors import ConfigurationError, SourceContractViolation
from .hum import control_cost_sweep, solve_null_control
from .mesh import Grid
from .nonlinear import fixed_point_control, make_nonlinearity, verify_closed_loop
from .report import plot_bars, plot_series, write_csv, write_manifest
from .source_term import (FactoredSource, make_source_weights, solve_with_source,
                          weighted_norms)
from .steady import default_params, derivative_full, parse_forcing, solve_steady_burgers

__all__ = ["main"]


def _build_params(cfg):
    pr = cfg["problem"]
    return default_params(n=pr["n"], gamma=pr["gamma"], phibar=pr["phibar"],
                          control_interval=(pr["control_a"], pr["control_b"]),
                          forcing=pr["forcing"])


def _build_prop(cfg, params):
    return build_propagator(params.grid, params, dt=cfg["time"]["dt"],
                            theta=cfg["time"]["theta"])


def _n_steps(cfg, T=None):
    dt = cfg["time"]["dt"]
    T = cfg["time"]["horizon"] if T is None else T
    n = int(round(T / dt))
    if n < 2 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigurationError(
            f"horizon T={T} is not a multiple (>= 2) of dt={dt}"
        )
    return n


def _initial_state(cfg, prop, amplitude=None):
    st = cfg["state"]
    grid = prop.grid
    w_amp = st["w_amplitude"] if amplitude is None else amplitude
    p_amp = st["psi_amplitude"] if amplitude is None else amplitude
    w = w_amp * np.sin(st["w_mode"] * np.pi * grid.x_interior)
    psi = p_amp * np.cos(st["psi_mode"] * np.pi * grid.x)
    return prop.join(w, psi)


def cmd_steady(cfg, out, seed):
    pr = cfg["problem"]
    grid = Grid(pr["n"])
    f_s = parse_forcing(pr["forcing"], grid)
    ubar, info = solve_steady_burgers(grid, pr["gamma"], f_s)
    ubar_x = derivative_full(grid, ubar)
    write_csv(out / "steady.csv", ["x", "ubar", "ubar_x", "forcing"],
              zip(grid.x, ubar, ubar_x, f_s))
    plot_series(out / "steady.png", grid.x,
                {"ubar": ubar, "forcing": f_s}, "x", "value",
                "steady background flow")
    return {"picard_iterations": info["iterations"],
            "residual": info["residual"],
            "max_ubar": float(np.max(np.abs(ubar)))}


def cmd_simulate(cfg, out, seed):
    params = _build_params(cfg)
    prop = _build_prop(cfg, params)
    n_steps = _n_steps(cfg)
    y0 = _initial_state(cfg, prop)
    traj = solve_forward(prop, y0, n_steps)
    quad = prop.grid.quad_weights
    rows = []
    for j in range(n_steps + 1):
        w, psi = prop.split(traj.states[j])
        rows.append((traj.times[j], prop.norms.l2(w), prop.norms.l2(psi),
                     prop.norm(traj.states[j]), float(np.sum(quad * psi))))
    write_csv(out / "evolution.csv",
              ["t", "w_norm", "psi_norm", "total_norm", "psi_mass"], rows)
    arr = np.array([(r[1], r[2], r[3]) for r in rows])
    plot_series(out / "evolution.png", [r[0] for r in rows],
                {"w": arr[:, 0], "psi": arr[:, 1], "total": arr[:, 2]},
                "t", "L2 norm", "uncontrolled linear evolution", logy=True)
    masses = np.array([r[4] for r in rows])
    return {"terminal_norm": rows[-1][3],
            "mass_drift": float(np.max(np.abs(masses - masses[0])))}


def cmd_control(cfg, out, seed):
    params = _build_params(cfg)
    prop = _build_prop(cfg, params)
    n_steps = _n_steps(cfg)
    y0 = _initial_state(cfg, prop)
    hum = cfg["hum"]
    res = solve_null_control(prop, y0, n_steps, epsilon=hum["epsilon"],
                             cg_tol=hum["cg_tol"], cg_maxit=hum["cg_maxit"])
    quad = prop.grid.quad_weights
    state_rows = [(res.trajectory.times[j], prop.norm(res.trajectory.states[j]))
                  for j in range(n_steps + 1)]
    control_rows = [(res.control.times[j],
                     float(np.sqrt(np.sum(quad * res.control.values[j] ** 2))))
                    for j in range(n_steps)]
    write_csv(out / "state_norms.csv", ["t", "state_norm"], state_rows)
    write_csv(out / "control_profile.csv", ["t", "control_l2"], control_rows)
    write_csv(out / "summary.csv",
              ["epsilon", "terminal_norm", "control_cost", "cg_iterations",
               "cg_residual", "identity_defect", "free_terminal_norm"],
              [(res.epsilon, res.terminal_norm, res.control_cost,
                res.cg_iterations, res.cg_residual, res.identity_defect,
                res.free_terminal_norm)])
    plot_series(out / "state_norms.png", [r[0] for r in state_rows],
                {"controlled state": [r[1] for r in state_rows]},
                "t", "L2 norm", "controlled decay", logy=True)
    plot_series(out / "control_profile.png", [r[0] for r in control_rows],
                {"control": [r[1] for r in control_rows]},
                "t", "L2 norm", "control effort over time")
    return {"terminal_norm": res.terminal_norm,
            "control_cost": res.control_cost,
            "cg_iterations": res.cg_iterations}


def _psi_profile_source(cfg, prop):
    st = cfg["source_term"]
    grid = prop.grid
    shape = np.concatenate([
        np.zeros(grid.x_interior.size),
        st["g_psi_amplitude"] * np.cos(st["g_psi_mode"] * np.pi * grid.x)])

    def g(t):
        return shape

    return g


def cmd_source_term(cfg, out, seed):
    params = _build_params(cfg)
    prop = _build_prop(cfg, params)
    n_steps = _n_steps(cfg)
    T = cfg["time"]["horizon"]
    st = cfg["source_term"]
    weights = make_source_weights(st["p"], st["q"], st["big_m"], st["m"], T)
    source = FactoredSource.from_g(_psi_profile_source(cfg, prop), weights)
    y0 = _initial_state(cfg, prop)
    res = solve_with_source(prop, y0, source, n_steps, epsilon=st["epsilon"],
                            tail_tol=st["tail_tol"], Kmax=st["kmax"])
    wn = weighted_norms(prop, res.trajectory, res.control, source)

    write_csv(out / "intervals.csv", ["k", "T_k", "a_norm", "h_norm", "f_l1"],
              [(r.k, r.T_k, r.a_norm, r.h_norm, r.f_l1)
               for r in res.schedule.records])
    t_grid = np.linspace(0.0, T, 1001)
    write_csv(out / "weights.csv", ["t", "log_rho0", "log_rhoF", "log_ratio"],
              zip(t_grid, weights.log_rho0(t_grid), weights.log_rhoF(t_grid),
                  weights.log_ratio(t_grid)))
    write_csv(out / "summary.csv",
              ["terminal_norm", "max_jump", "n_intervals", "log_Y_norm",
               "log_V_norm", "log_F_norm", "max_identity_defect"],
              [(res.terminal_norm, res.max_jump, res.n_intervals,
                wn["log_Y_norm"], wn["log_V_norm"], wn["log_F_norm"],
                float(np.max(res.schedule.identity_defects)))])
    plot_bars(out / "intervals.png",
              [r.k for r in res.schedule.records],
              [max(r.a_norm, 1e-300) for r in res.schedule.records],
              "interval", "incoming state norm",
              "interval-wise state decay", logy=True)
    finite = np.isfinite(weights.log_rho0(t_grid))
    plot_series(out / "weights.png", t_grid[finite],
                {"log rho_0": weights.log_rho0(t_grid)[finite],
                 "log rho_F": weights.log_rhoF(t_grid)[finite]},
                "t", "log weight", "decay envelopes")
    return {"terminal_norm": res.terminal_norm, "max_jump": res.max_jump,
            "n_intervals": res.n_intervals}


def cmd_nonlinear(cfg, out, seed):
    params = _build_params(cfg)
    prop = _build_prop(cfg, params)
    n_steps = _n_steps(cfg)
    nl = cfg["nonlinear"]
    st = cfg["source_term"]
    y0 = _initial_state(cfg, prop, amplitude=nl["amplitude"])
    res = fixed_point_control(
        prop, y0, n_steps, tol=nl["tol"], maxit=nl["maxit"], mu=nl["mu"],
        weights_M=nl["weights_big_m"], p=st["p"], q=st["q"], m=st["m"],
        epsilon=nl["epsilon"], tail_tol=st["tail_tol"], Kmax=st["kmax"])
    closed = verify_closed_loop(prop, y0, res.control,
                                reference=res.trajectory)
    free = solve_nonlinear_forward(prop, y0, n_steps,
                                   make_nonlinearity(prop.grid, params))
    free_terminal = prop.norm(free.states[-1])

    write_csv(out / "iterations.csv",
              ["iteration", "distance", "contraction_ratio", "terminal_norm"],
              [(r.iteration, r.distance, r.contraction_ratio, r.terminal_norm)
               for r in res.history])
    write_csv(out / "summary.csv",
              ["converged", "iterations", "max_ratio",
               "closed_loop_terminal", "resimulation_gap",
               "zero_control_terminal"],
              [(res.converged, res.iterations, res.max_ratio,
                closed.terminal_norm, closed.gap, free_terminal)])
    plot_series(out / "iterations.png",
                [r.iteration for r in res.history],
                {"iterate distance": [max(r.distance, 1e-300)
                                      for r in res.history]},
                "iteration", "trajectory distance",
                "fixed-point convergence", logy=True)
    return {"converged": res.converged, "iterations": res.iterations,
            "closed_loop_terminal": closed.terminal_norm}


def cmd_carleman(cfg, out, seed):
    params = _build_params(cfg)
    prop = _build_prop(cfg, params)
    n_steps = _n_steps(cfg)
    T = cfg["time"]["horizon"]
    ca = cfg["carleman"]
    pr = cfg["problem"]
    nu = build_nu((ca["window_a"], ca["window_b"]), prop.grid,
                  control_interval=(pr["control_a"], pr["control_b"]),
                  delta_fraction=ca["delta_fraction"])
    weights = make_carleman_weights(
        nu, T=T, lam=ca["lam"], s=None if ca["s"] <= 0.0 else ca["s"],
        k=ca["k"], m=ca["m"], mu0=ca["mu0"], growth=ca["growth"])
    summary = probe_carleman(prop, weights, n_steps,
                             n_samples=ca["n_samples"], seed=seed)
    bound_c = weight_derivative_constant(weights)

    write_csv(out / "probe.csv",
              ["sample_id", "s", "lambda", "lhs", "rhs", "ratio",
               "log_lhs", "log_rhs", "log_ratio"],
              [(r.sample_id, r.s, r.lam, r.lhs, r.rhs, r.ratio,
                r.log_lhs, r.log_rhs, r.log_ratio) for r in summary.rows])
    write_csv(out / "nu.csv", ["x", "nu", "d1", "d2", "d3", "d4"],
              zip(prop.grid.x, nu.values, nu.d1, nu.d2, nu.d3, nu.d4))
    write_csv(out / "summary.csv",
              ["s", "lambda", "max_ratio", "max_log_ratio",
               "derivative_bound_constant", "slope_floor"],
              [(weights.s, weights.lam, summary.max_ratio,
                summary.max_log_ratio, bound_c, weights.slope_floor)])
    plot_bars(out / "probe.png",
              [r.sample_id for r in summary.rows],
              [r.log_ratio for r in summary.rows],
              "sample", "log(lhs/rhs)", "weighted-inequality probe")
    plot_series(out / "nu.png", prop.grid.x, {"nu": nu.values, "nu'": nu.d1},
                "x", "value", "spatial weight profile")
    return {"max_log_ratio": summary.max_log_ratio,
            "derivative_bound_constant": bound_c, "s": weights.s}


def cmd_sweep(cfg, out, seed):
    params = _build_params(cfg)
    prop = _build_prop(cfg, params)
    sw = cfg["sweep"]
    hum = cfg["hum"]
    try:
        T_values = [float(v) for v in sw["t_values"].split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(
            f"[sweep] t_values = {sw['t_values']!r}: expected a "
            "comma-separated list of horizons"
        ) from exc
    y0 = _initial_state(cfg, prop)

    def make_prop(T):
        return prop, _n_steps(cfg, T)

    rows, fitted_M = control_cost_sweep(make_prop, y0, T_values,
                                        epsilon=sw["epsilon"], m=sw["m"],
                                        cg_tol=hum["cg_tol"],
                                        cg_maxit=hum["cg_maxit"])
    write_csv(out / "sweep.csv",
              ["T", "epsilon", "control_cost", "terminal_norm",
               "cg_iterations"],
              [(r.T, r.epsilon, r.control_cost, r.terminal_norm,
                r.cg_iterations) for r in rows])
    write_csv(out / "summary.csv", ["fitted_M", "cost_increases_as_T_shrinks"],
              [(fitted_M,
                all(a.control_cost < b.control_cost
                    for a, b in zip(rows, rows[1:])))])
    plot_series(out / "sweep.png", [r.T for r in rows],
                {"control cost": [r.control_cost for r in rows]},
                "T", "control cost", "cost blow-up for short horizons",
                logy=True)
    return {"fitted_M": fitted_M}


_HANDLERS = {
    "steady": cmd_steady,
    "simulate": cmd_simulate,
    "control": cmd_control,
    "source-term": cmd_source_term,
    "nonlinear": cmd_nonlinear,
    "carleman": cmd_carleman,
    "sweep": cmd_sweep,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, metavar="PATH",
                        help="sectioned INI config; defaults are built in")
    common.add_argument("--out", default=None, metavar="DIR",
                        help="output directory (default: out/<subcommand>)")
    common.add_argument("--seed", type=int, default=None, metavar="N",
                        help="random seed (default: [run] seed from config)")
    common.add_argument("--override", action="append", default=[],
                        metavar="SECTION.KEY=VALUE",
                        help="config override; may be repeated")
    parser = argparse.ArgumentParser(
        prog="chbcontrol",
        description="control-synthesis experiments for the coupled "
                    "fourth-order/second-order system")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler in _HANDLERS.items():
        sub.add_parser(name, parents=[common],
                       help=handler.__doc__ or name)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        cfg = load_config(args.config)
        apply_overrides(cfg, args.override)
        seed = cfg["run"]["seed"] if args.seed is None else args.seed
        out = Path(args.out) if args.out else Path("out") / args.command
        out.mkdir(parents=True, exist_ok=True)
        outcome = _HANDLERS[args.command](cfg, out, seed)
    except (ConfigurationError, SourceContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    manifest = dict(cfg)
    manifest["outcome"] = {key: str(value) for key, value in outcome.items()}
    write_manifest(out / "manifest.txt", args.command, manifest, seed,
                   time.perf_counter() - started)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
