"""Sectioned key/value configuration for the command-line experiments.

One INI file drives every subcommand.  Each section maps to one part of
the toolkit, every key has a shipped default, and unknown sections or
keys are rejected by name so a typo cannot silently fall back to a
default.  Values are coerced to the type of their default.
"""

import configparser
import io

from .errors import ConfigurationError

__all__ = ["DEFAULTS", "load_config", "apply_overrides",
           "default_config_text"]


# Every tunable the experiments read, with its default value.  The
# shipped default_config.ini is generated verbatim from this table.
DEFAULTS = {
    "problem": {
        "n": 64,
        "gamma": 1.0,
        "phibar": 0.5,
        "control_a": 0.3,
        "control_b": 0.7,
        "forcing": "sine 1 0.1",
    },
    "time": {
        "dt": 1e-3,
        "theta": 1.0,
        "horizon": 1.0,
    },
    "state": {
        "w_amplitude": 0.1,
        "w_mode": 1,
        "psi_amplitude": 0.1,
        "psi_mode": 1,
    },
    "hum": {
        "epsilon": 1e-6,
        "cg_tol": 1e-10,
        "cg_maxit": 500,
    },
    "source_term": {
        "p": 3.0,
        "q": 1.05,
        "m": 4,
        "big_m": 1e-6,
        "tail_tol": 1e-8,
        "kmax": 12,
        "epsilon": 1e-8,
        "g_psi_amplitude": 1.0,
        "g_psi_mode": 1,
    },
    "nonlinear": {
        "tol": 1e-10,
        "maxit": 20,
        "mu": 5e-2,
        "weights_big_m": 1e-10,
        "epsilon": 1e-8,
        "amplitude": 1e-2,
    },
    "carleman": {
        "window_a": 0.4,
        "window_b": 0.6,
        "delta_fraction": 0.25,
        "lam": 2.0,
        "k": 5,
        "m": 4,
        "mu0": 1.0,
        "growth": 1.0,
        "s": 0.0,
        "n_samples": 20,
    },
    "sweep": {
        "t_values": "1,0.5,0.25,0.125",
        "epsilon": 1e-6,
        "m": 4,
    },
    "run": {
        "seed": 0,
    },
}


def _coerce(section, key, raw, default):
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigurationError(
            f"[{section}] {key} = {raw!r}: expected a "
            f"{type(default).__name__}"
        ) from exc
    return raw


def load_config(path=None):
    """Read an INI file into a fully-defaulted nested dict.

    With ``path=None`` the shipped defaults are returned unchanged.
    Any section or key not present in the defaults table is collected
    and reported in a single error.
    """
    cfg = {sec: dict(keys) for sec, keys in DEFAULTS.items()}
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise ConfigurationError(f"config file not found: {path}")
    unknown = []
    for section in parser.sections():
        if section not in DEFAULTS:
            unknown.extend(f"[{section}] {key}" for key in parser[section])
            continue
        for key, raw in parser[section].items():
            if key not in DEFAULTS[section]:
                unknown.append(f"[{section}] {key}")
                continue
            cfg[section][key] = _coerce(section, key, raw,
                                        DEFAULTS[section][key])
    if unknown:
        raise ConfigurationError(
            "unknown configuration keys: " + ", ".join(sorted(unknown))
        )
    return cfg


def apply_overrides(cfg, assignments):
    """Apply ``section.key=value`` strings on top of a loaded config."""
    for item in assignments or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigurationError(
                f"override {item!r} is not of the form section.key=value"
            )
        target, raw = item.split("=", 1)
        section, key = target.split(".", 1)
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigurationError(
                f"unknown configuration keys: [{section}] {key}"
            )
        cfg[section][key] = _coerce(section, key, raw,
                                    DEFAULTS[section][key])
    return cfg


def default_config_text():
    """Render the defaults as INI text (the shipped default config)."""
    parser = configparser.ConfigParser()
    for section, keys in DEFAULTS.items():
        parser[section] = {key: repr(value) if isinstance(value, float)
                           else str(value) for key, value in keys.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
