"""Command line entry point.

    collision-cml <subcommand> [--config FILE] [--out DIR] [--seed N] [--threads N]

Subcommands: simulate, ulam, verify-ly, verify-decouple, correlations,
hypothesis-check.  Exit status is 0 on pass, 1 on a precondition error and
2 on a verification failure.  Every output file carries the resolved
config; the only line that varies between identical runs is the timestamp.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import _accel, config
from .lattice import Simulation
from .measure_bv import (
    GridAlignmentError,
    decoupling_scaling,
    empirical_b0,
    empirical_b1,
    random_sample,
    uniform,
    verify_decoupling,
    verify_lasota_yorke,
)
from .stats import (
    InsufficientData,
    Observable,
    decreasing_until_floor,
    fit_exponential,
    space_time_correlation,
)
from .ulam import build_ulam_coupled, build_ulam_single, l1_distance, stationary_density

log = logging.getLogger("collision_cml")

EXIT_OK, EXIT_PRECONDITION, EXIT_FAILED = 0, 1, 2
B_UNIFORMITY = 0.2


class Outputs:
    """Files staged in memory and written only after the command succeeds."""

    def __init__(self, cfg: dict, command: str):
        self.cfg = cfg
        self.command = command
        self.stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        self.files: dict[str, str] = {}

    def json(self, name: str, payload: dict) -> None:
        doc = {
            "command": self.command,
            "resolved_config": self.cfg,
            "seed": self.cfg["run"]["seed"],
            "result": payload,
            "timestamp": self.stamp,
        }
        self.files[name] = json.dumps(_plain(doc), sort_keys=True, indent=2) + "\n"

    def _header(self) -> list[str]:
        cfg = json.dumps(_plain(self.cfg), sort_keys=True, separators=(",", ":"))
        return [f"# timestamp: {self.stamp}", f"# command: {self.command}", f"# resolved_config: {cfg}"]

    def csv(self, name: str, columns: list[str], rows: list[list]) -> None:
        lines = self._header() + [",".join(columns)]
        lines += [",".join(_cell(v) for v in r) for r in rows]
        self.files[name] = "\n".join(lines) + "\n"

    def text(self, name: str, body: str) -> None:
        self.files[name] = "\n".join(self._header()) + "\n" + body

    def commit(self, out: Path) -> None:
        out.mkdir(parents=True, exist_ok=True)
        staged = []
        try:
            for name, body in self.files.items():
                fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.")
                with os.fdopen(fd, "w") as fh:
                    fh.write(body)
                staged.append((tmp, out / name))
        except BaseException:
            for tmp, _ in staged:
                os.unlink(tmp)
            raise
        for tmp, dest in staged:
            os.replace(tmp, dest)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def _cell(v) -> str:
    if isinstance(v, tuple):
        return ";".join(str(int(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _rng(cfg: dict, stream: int) -> np.random.Generator:
    return np.random.default_rng(config.replica_seeds(cfg["run"]["seed"], stream + 1)[stream])


# --------------------------------------------------------------------------
# subcommands


def cmd_hypothesis_check(cfg: dict, out: Outputs) -> int:
    rep = config.theorem_check(cfg)
    print(f"σ = {rep['sigma']:g}  ℓ_ε = {rep['gap']:g}  ->  {rep['status']}")
    for w in rep["warnings"]:
        print(f"warning: {w}")
    out.json("hypothesis.json", rep)
    return EXIT_OK


def cmd_simulate(cfg: dict, out: Outputs) -> int:
    tmap, geom, spec = config.build_map(cfg), config.build_geometry(cfg), config.build_spec(cfg)
    run = cfg["run"]
    sim = Simulation(
        tmap, spec, geom, run["steps"], seed=config.replica_seeds(run["seed"], 1)[0],
        burn_in=run["burn_in"], dither=run["dither"], chunk_size=run["chunk_size"],
    )
    n_cells = cfg["ulam"]["n_cells"]
    hist = np.zeros(n_cells, dtype=np.int64)
    per_step = []
    final = None
    for _, states, codes in sim.chunks():
        per_step.append(np.count_nonzero(codes, axis=1) // 2)
        cells = np.minimum((states * n_cells).astype(np.int64), n_cells - 1)
        hist += np.bincount(cells.ravel(), minlength=n_cells)
        final = states[-1]
    counts = np.concatenate(per_step) if per_step else np.zeros(0, dtype=np.int64)
    trials = len(counts) * geom.n_sites * geom.dimension
    p = float(counts.sum()) / trials if trials else float("nan")
    se = float(np.sqrt(p * (1 - p) / trials)) if trials else float("nan")
    payload = {
        "steps": len(counts),
        "total_collisions": int(counts.sum()),
        "collision_rate": p,
        "collision_rate_stderr": se,
        "epsilon_squared": spec.epsilon ** 2,
        "max_collisions_in_a_step": int(counts.max()) if len(counts) else 0,
        "final_state": [] if final is None else final,
        "collision_intervals": spec.to_dict(),
        "backend": _accel.BACKEND,
    }
    out.json("simulate.json", payload)
    dens = hist / max(hist.sum(), 1) * n_cells
    out.csv("site_histogram.csv", ["cell", "lo", "hi", "density"],
            [[i, i / n_cells, (i + 1) / n_cells, float(v)] for i, v in enumerate(dens)])
    return EXIT_OK


def cmd_ulam(cfg: dict, out: Outputs) -> int:
    u = cfg["ulam"]
    tmap = config.build_map(cfg)
    n = u["n_cells"]
    if u["sites"] == 1:
        U = build_ulam_single(tmap, n)
    else:
        geom = config.small_geometry(cfg, "ulam")
        U = build_ulam_coupled(tmap, config.build_spec(cfg, dimension=1), geom, n)
    rep = stationary_density(U, tol=u["tol"], max_iter=u["max_iter"], seed=cfg["run"]["seed"])
    rng = _rng(cfg, 1)
    spread = 0.0
    for _ in range(u["starts"]):
        other = stationary_density(U, tol=u["tol"], max_iter=u["max_iter"], start=rng.random(U.dimension))
        spread = max(spread, l1_distance(rep.stationary, other.stationary))
    payload = rep.to_dict()
    payload.update(
        n_cells=n,
        sites=U.k,
        nnz=int(U.matrix.nnz),
        l1_from_uniform=l1_distance(rep.stationary, uniform(U.k, n)),
        multistart_max_l1=spread,
        multistart_count=u["starts"],
    )
    ok = rep.converged and rep.mixing
    payload["pass"] = ok
    out.json("ulam_spectrum.json", payload)
    out.text("ulam_matrix.coo", U.coo_text())
    return EXIT_OK if ok else EXIT_FAILED


def _verify_setup(cfg: dict):
    v = cfg["verify"]
    geom = config.small_geometry(cfg, "verify")
    return v, geom, config.build_map(cfg), config.build_spec(cfg, dimension=1)


def cmd_verify_ly(cfg: dict, out: Outputs) -> int:
    v, geom, tmap, spec = _verify_setup(cfg)
    rng = _rng(cfg, 0)
    sample = random_sample(geom.n_sites, v["n_cells"], v["sample_size"], rng)
    rep = verify_lasota_yorke(tmap, spec, geom, sample)
    b0, b0_ok = empirical_b0(tmap, random_sample(1, v["n_cells"], v["sample_size"], rng))
    b1, b1_ok = empirical_b1(spec, geom, sample)
    sweep_sample = random_sample(geom.n_sites, v["sweep_n_cells"], v["sample_size"], rng)
    sweep = []
    for eps in v["epsilon_sweep"]:
        r = verify_lasota_yorke(tmap, config.build_spec(cfg, epsilon=eps, dimension=1), geom, sweep_sample)
        sweep.append({"epsilon": eps, "gap": r.gap, "B_empirical": r.B_empirical, "pass": r.passed})
    bs = np.array([s["B_empirical"] for s in sweep])
    mean_b = float(bs.mean())
    spread = float(np.max(np.abs(bs - mean_b)) / mean_b) if mean_b > 0 else 0.0
    uniform_ok = bool(np.all(np.isfinite(bs))) and spread <= B_UNIFORMITY
    ok = rep.passed and b0_ok and b1_ok and all(s["pass"] for s in sweep) and uniform_ok
    payload = rep.to_dict()
    payload.update(
        B0_empirical=b0,
        B0_total_variation_ok=b0_ok,
        B1_empirical=b1,
        B1_total_variation_ok=b1_ok,
        epsilon_sweep=sweep,
        sweep_n_cells=v["sweep_n_cells"],
        B_relative_spread=spread,
        B_uniform=uniform_ok,
    )
    payload["pass"] = ok
    print(f"σ = {rep.sigma:g}  B = {rep.B_empirical:.6g}  B spread over ε sweep = {spread:.3f}  ->  {'pass' if ok else 'FAIL'}")
    out.json("lasota_yorke.json", payload)
    return EXIT_OK if ok else EXIT_FAILED


def cmd_verify_decouple(cfg: dict, out: Outputs) -> int:
    v, geom, _, spec = _verify_setup(cfg)
    rng = _rng(cfg, 0)
    site = v["decouple_site"]
    if not 0 <= site < geom.n_sites:
        raise config.ConfigError(f"verify.decouple_site must be in [0, {geom.n_sites})")
    sample = random_sample(geom.n_sites, v["n_cells"], v["sample_size"], rng)
    rep = verify_decoupling(spec, geom, site, sample)
    specs = [config.build_spec(cfg, epsilon=e, dimension=1) for e in v["epsilon_sweep"]]
    scaling = random_sample(geom.n_sites, v["sweep_n_cells"], v["scaling_densities"], rng)
    diffs, slopes = decoupling_scaling(specs, geom, site, scaling)
    finite = slopes[np.isfinite(slopes)]
    slope_ok = len(finite) > 0 and bool(np.all(finite >= 0.9))
    ok = rep.passed and slope_ok
    payload = rep.to_dict()
    payload.update(
        epsilon_sweep=v["epsilon_sweep"],
        sweep_n_cells=v["sweep_n_cells"],
        sweep_tv_diff=diffs,
        sweep_slopes=slopes,
        min_slope=float(finite.min()) if len(finite) else float("nan"),
        trivial_densities=int(np.count_nonzero(~np.isfinite(slopes))),
    )
    payload["pass"] = ok
    print(f"worst ratio to bound = {rep.worst_ratio:.4g}  min slope = {payload['min_slope']:.4g}  ->  {'pass' if ok else 'FAIL'}")
    out.json("decoupling.json", payload)
    return EXIT_OK if ok else EXIT_FAILED


def cmd_correlations(cfg: dict, out: Outputs) -> int:
    c, run = cfg["correlations"], cfg["run"]
    tmap, geom, spec = config.build_map(cfg), config.build_geometry(cfg), config.build_spec(cfg)
    obs = Observable(kind=c["kind"], center=c["center"], width=c["width"])
    phi = Observable(support=((0,) * geom.dimension,), kind=obs.kind, center=obs.center, width=obs.width)
    offsets = [(int(o),) + (0,) * (geom.dimension - 1) if np.isscalar(o) else tuple(int(x) for x in o)
               for o in c["offsets"]]
    per_replica = []
    for ss in config.replica_seeds(run["seed"], c["replicas"]):
        sim = Simulation(tmap, spec, geom, run["steps"], seed=ss, burn_in=run["burn_in"],
                         dither=run["dither"], chunk_size=run["chunk_size"])
        per_replica.append(space_time_correlation(sim, phi, phi, c["max_lag"], offsets, n_batches=c["batches"]))
    rows, fits = [], {}
    equal_time, equal_err = [], []
    for o in offsets:
        vals = np.mean([r[o].values for r in per_replica], axis=0)
        errs = np.sqrt(np.sum([r[o].stderr ** 2 for r in per_replica], axis=0)) / len(per_replica)
        series = type(per_replica[0][o])(per_replica[0][o].lags, vals, errs, sum(r[o].n_samples for r in per_replica), o)
        rows += [[o, int(n), float(v), float(e)] for n, v, e in zip(series.lags, vals, errs)]
        fits[";".join(map(str, o))] = fit_exponential(series, c["min_lags"]).to_dict()
        equal_time.append(float(vals[0]))
        equal_err.append(float(errs[0]))
    decreasing, floor = decreasing_until_floor(equal_time, equal_err)
    out.csv("correlations.csv", ["offset", "lag", "value", "stderr"], rows)
    out.json("correlations.json", {
        "fits": fits,
        "equal_time": {"offsets": [list(o) for o in offsets], "values": equal_time, "stderr": equal_err,
                       "decreasing_until_floor": decreasing, "floor_index": floor},
        "observable": phi.to_dict(),
        "replicas": c["replicas"],
    })
    for key, f in fits.items():
        msg = f"rate {f['rate']:.4g}, r² {f['r_squared']:.4g}, lags {f['lags_used']}" if f["ok"] else f["reason"]
        print(f"offset {key}: {msg}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "ulam": cmd_ulam,
    "verify-ly": cmd_verify_ly,
    "verify-decouple": cmd_verify_decouple,
    "correlations": cmd_correlations,
    "hypothesis-check": cmd_hypothesis_check,
}


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="collision-cml", description="Coupled map lattices with collision coupling.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="YAML config, or a JSON output of an earlier run")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: current)")
    p.add_argument("--seed", type=_seed, help="override run.seed")
    p.add_argument("--threads", type=int, help="worker threads for the compiled kernels")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    _accel.set_threads(args.threads)
    try:
        cfg = config.load(args.config, seed=args.seed)
        check = config.theorem_check(cfg)
        if args.command != "hypothesis-check":
            for w in check["warnings"]:
                print(f"warning: {w}", file=sys.stderr)
        out = Outputs(cfg, args.command)
        status = COMMANDS[args.command](cfg, out)
    except (config.ConfigError, GridAlignmentError, InsufficientData, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    out.commit(args.out)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
