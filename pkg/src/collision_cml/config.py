"""Experiment configuration: YAML sections with strict keys.

Unknown sections or keys are errors.  Every section is optional and falls
back to the defaults below.  A JSON output file written by the CLI can be
passed back as ``--config``; its embedded ``resolved_config`` is used.
"""
from __future__ import annotations

import copy
import logging
import re
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .lattice import CollisionSpec, LatticeGeometry
from .local_map import PiecewiseAffineMap, preset

log = logging.getLogger(__name__)


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot, like ``1e-10``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


class ConfigError(ValueError):
    """A configuration value violates a precondition."""


DEFAULTS: dict[str, dict[str, Any]] = {
    "map": {"preset": "decimal", "branches": None},
    "lattice": {"dimension": 1, "side_lengths": [64]},
    "collision": {"epsilon": 0.05, "placement": "default", "lows": None},
    "run": {"seed": 20240611, "steps": 100_000, "burn_in": 1000, "dither": True, "chunk_size": 8192},
    "ulam": {"sites": 2, "boundary": "periodic", "n_cells": 20, "tol": 1e-10, "max_iter": 100_000, "starts": 5},
    "verify": {
        "sites": 2,
        "boundary": "periodic",
        "n_cells": 20,
        "sample_size": 200,
        "decouple_site": 0,
        "epsilon_sweep": [0.0125, 0.025, 0.05],
        "sweep_n_cells": 80,
        "scaling_densities": 20,
    },
    "correlations": {
        "max_lag": 8,
        "offsets": [0, 1, 2, 3],
        "batches": 50,
        "kind": "centered_coordinate",
        "center": 0.5,
        "width": 0.25,
        "min_lags": 4,
        "replicas": 1,
    },
}


def _merge(user: dict) -> dict:
    if not isinstance(user, dict):
        raise ConfigError("configuration must be a mapping of sections")
    cfg = copy.deepcopy(DEFAULTS)
    for section, body in user.items():
        if section not in cfg:
            raise ConfigError(f"unknown config section {section!r}")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        for key, val in body.items():
            if key not in cfg[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            cfg[section][key] = val
    return cfg


def load(path: str | Path | None, seed: int | None = None) -> dict:
    """Read, merge with defaults, apply a seed override and validate."""
    raw: dict = {}
    if path is not None:
        try:
            raw = yaml.load(Path(path).read_text(), Loader=_Loader) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if isinstance(raw, dict) and "resolved_config" in raw:
            raw = raw["resolved_config"]
    cfg = _merge(raw)
    if seed is not None:
        cfg["run"]["seed"] = seed
    validate(cfg)
    return cfg


def _int(cfg: dict, section: str, key: str, lo: int | None = None) -> int:
    v = cfg[section][key]
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
        raise ConfigError(f"{section}.{key} must be an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{section}.{key} must be >= {lo}, got {v}")
    return int(v)


def _float(cfg: dict, section: str, key: str, positive: bool = False) -> float:
    v = cfg[section][key]
    if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
        raise ConfigError(f"{section}.{key} must be a number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{section}.{key} must be positive, got {v}")
    return float(v)


def validate(cfg: dict) -> None:
    _float(cfg, "collision", "epsilon")
    _float(cfg, "ulam", "tol", positive=True)
    _float(cfg, "correlations", "center")
    _float(cfg, "correlations", "width", positive=True)
    build_map(cfg)
    build_geometry(cfg)
    build_spec(cfg)
    for eps in cfg["verify"]["epsilon_sweep"] if isinstance(cfg["verify"]["epsilon_sweep"], list) else ():
        build_spec(cfg, epsilon=eps, dimension=1)
    seed = _int(cfg, "run", "seed", 0)
    if seed >= 2 ** 64:
        raise ConfigError("run.seed must fit in 64 unsigned bits")
    _int(cfg, "run", "steps", 0)
    _int(cfg, "run", "burn_in", 0)
    _int(cfg, "run", "chunk_size", 1)
    if not isinstance(cfg["run"]["dither"], bool):
        raise ConfigError("run.dither must be true or false")
    _int(cfg, "ulam", "n_cells", 2)
    _int(cfg, "ulam", "max_iter", 1)
    _int(cfg, "ulam", "starts", 1)
    if cfg["ulam"]["sites"] not in (1, 2, 3):
        raise ConfigError("ulam.sites must be 1, 2 or 3")
    if cfg["verify"]["sites"] not in (2, 3):
        raise ConfigError("verify.sites must be 2 or 3")
    for sec in ("ulam", "verify"):
        if cfg[sec]["boundary"] not in ("periodic", "open"):
            raise ConfigError(f"{sec}.boundary must be 'periodic' or 'open'")
    _int(cfg, "verify", "n_cells", 1)
    _int(cfg, "verify", "sample_size", 1)
    _int(cfg, "verify", "sweep_n_cells", 1)
    _int(cfg, "verify", "scaling_densities", 1)
    sweep = cfg["verify"]["epsilon_sweep"]
    if not isinstance(sweep, list) or len(sweep) < 2:
        raise ConfigError("verify.epsilon_sweep must list at least two values")
    _int(cfg, "correlations", "max_lag", 0)
    _int(cfg, "correlations", "batches", 2)
    _int(cfg, "correlations", "min_lags", 2)
    _int(cfg, "correlations", "replicas", 1)
    if not cfg["correlations"]["offsets"]:
        raise ConfigError("correlations.offsets must be nonempty")


def build_map(cfg: dict) -> PiecewiseAffineMap:
    m = cfg["map"]
    try:
        if m["branches"] is not None:
            return PiecewiseAffineMap.from_branches(m["branches"])
        return preset(m["preset"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"map: {exc}") from exc


def build_geometry(cfg: dict) -> LatticeGeometry:
    d = _int(cfg, "lattice", "dimension", 1)
    try:
        return LatticeGeometry(d, tuple(cfg["lattice"]["side_lengths"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"lattice: {exc}") from exc


def build_spec(cfg: dict, epsilon: float | None = None, dimension: int | None = None) -> CollisionSpec:
    c = cfg["collision"]
    d = dimension if dimension is not None else cfg["lattice"]["dimension"]
    eps = c["epsilon"] if epsilon is None else epsilon
    try:
        if c["placement"] == "default":
            return CollisionSpec.default(float(eps), d)
        if c["placement"] != "explicit":
            raise ValueError(f"placement must be 'default' or 'explicit', got {c['placement']!r}")
        lows = c["lows"]
        if not isinstance(lows, dict):
            raise ValueError("explicit placement needs collision.lows as a mapping like {'+1': 0.2, '-1': 0.7}")
        order = [f"{s}{k + 1}" for k in range(d) for s in "+-"]
        # small verification geometries are 1D and use only the +1/-1 entries
        wrong = set(order) - set(lows) if dimension is not None else set(order) ^ set(lows)
        if wrong:
            raise ValueError(f"collision.lows needs exactly the keys {order}")
        return CollisionSpec(float(eps), tuple(float(lows[k]) for k in order))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"collision: {exc}") from exc


def small_geometry(cfg: dict, section: str) -> LatticeGeometry:
    return LatticeGeometry.chain(int(cfg[section]["sites"]), cfg[section]["boundary"])


def replica_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    """Replica ``r`` uses ``SeedSequence(seed, spawn_key=(r,))``."""
    return [np.random.SeedSequence(seed, spawn_key=(r,)) for r in range(count)]


def theorem_check(cfg: dict) -> dict:
    """The expansion condition ``lambda > 4 + 4d`` and a positive interval gap."""
    tmap = build_map(cfg)
    spec = build_spec(cfg)
    d = int(cfg["lattice"]["dimension"])
    sig = (4 + 4 * d) / tmap.lambda_min
    warnings = []
    if sig >= 1:
        warnings.append(f"σ = {sig:g} ≥ 1: theorem hypotheses not satisfied (need λ > {4 + 4 * d})")
    return {
        "sigma": sig,
        "lambda_min": tmap.lambda_min,
        "dimension": d,
        "gap": spec.gap,
        "epsilon": spec.epsilon,
        "status": "pass" if not warnings else "warn",
        "warnings": warnings,
    }
