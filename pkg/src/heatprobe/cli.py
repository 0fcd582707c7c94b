"""Experiment orchestration: JSON configs in, CSV + JSON reports out.

Every run echoes its config, emits one record per checked claim
({claim, paper_ref, measured, predicted, tolerance, verdict}) and writes
files atomically. Timestamps live in a sidecar so report bodies are
byte-identical across reruns and thread counts.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__

SCHEMA_VERSION = 1

KINDS = ("kernel-check", "simulate", "holder", "malliavin", "capacity",
         "hausdorff", "boxdim", "density", "collapse", "hit", "levelset",
         "dims", "sandwich")


class ConfigError(ValueError):
    """Schema violation; carries the offending field path."""


# ---------------------------------------------------------------------------
# Config validation. Field specs are (type, required, default); "num"
# accepts ints and floats. Unknown keys anywhere are rejected.

_GRID_FIELDS = {"nx": ("int", True, None), "T": ("num", True, None),
                "dt": ("num", False, None), "boundary": ("str", False, "neumann")}
_MODEL_FIELDS = {"family": ("str", True, None), "d": ("int", False, 1),
                 "sigma0": ("list", False, None), "b0": ("list", False, None)}

_PARAMS = {
    "kernel-check": {"nx": ("int", False, 100), "nt": ("int", False, 50),
                     "n_semigroup": ("int", False, 1000),
                     "boundary": ("str", False, "neumann")},
    "simulate": {"paths": ("int", False, 1), "retain_noise": ("bool", False, False),
                 "out_format": ("str", False, "csv")},
    "holder": {"paths": ("int", False, 500), "p": ("num", False, 2.0),
               "anchor": ("list", False, None), "time_lags": ("list", False, None),
               "space_lags": ("list", False, None)},
    "malliavin": {"paths": ("int", False, 200), "t0": ("num", False, 0.5),
                  "x0": ("num", False, 0.5), "ks": ("list", False, [2, 3, 4, 5, 6])},
    "capacity": {"shape": ("str", False, "interval"), "points_csv": ("str", False, None),
                 "n_points": ("int", False, 200), "beta": ("num", True, None),
                 "metric": ("str", False, "euclidean"), "cutoff": ("num", False, 0.0),
                 "tol": ("num", False, 1e-6)},
    "hausdorff": {"shape": ("str", False, "interval"), "points_csv": ("str", False, None),
                  "n_points": ("int", False, 1025), "beta": ("num", True, None),
                  "epsilon_ladder": ("list", True, None),
                  "metric": ("str", False, "euclidean")},
    "boxdim": {"shape": ("str", False, None), "points_csv": ("str", False, None),
               "n_points": ("int", False, 10000), "metric": ("str", False, "euclidean"),
               "scales": ("list", True, None), "expected": ("num", False, None),
               "tolerance": ("num", False, None)},
    "density": {"samples": ("int", False, 10000), "t_list": ("list", True, None),
                "x_list": ("list", True, None)},
    "collapse": {"samples": ("int", False, 4000), "t": ("num", True, None),
                 "x": ("num", True, None), "partners": ("list", True, None),
                 "ratio_bound": ("num", False, 2.0)},
    "hit": {"paths": ("int", False, 1000), "I": ("list", True, None),
            "J": ("list", True, None), "target": ("dict", True, None),
            "expect_nonpolar": ("bool", False, False)},
    "levelset": {"path_index": ("int", False, 0), "z": ("list", False, None),
                 "tol": ("num", True, None), "section_t": ("num", False, None),
                 "section_x": ("num", False, None)},
    "dims": {"which": ("str", True, None), "paths": ("int", False, 24),
             "z": ("list", False, None), "I": ("list", False, None),
             "J": ("list", False, None), "section_t": ("num", False, None),
             "section_x": ("num", False, None), "tolerance": ("num", False, 0.25)},
    "sandwich": {"paths": ("int", False, 1000), "I": ("list", True, None),
                 "J": ("list", True, None), "z": ("list", False, None),
                 "r_ladder": ("list", True, None), "mode": ("str", False, "space_time"),
                 "eta": ("num", False, 0.05)},
}

_NEEDS_GRID = {"simulate", "holder", "malliavin", "density", "collapse",
               "hit", "levelset", "dims", "sandwich"}

_TYPES = {"int": (int,), "num": (int, float), "str": (str,), "bool": (bool,),
          "list": (list,), "dict": (dict,)}


def _check_fields(obj: dict, fields: dict, path: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    for key in obj:
        if key not in fields:
            raise ConfigError(f"{path}.{key}: unknown key")
    out = {}
    for key, (typ, required, default) in fields.items():
        if key in obj and obj[key] is not None:
            val = obj[key]
            if typ == "int" and isinstance(val, bool):
                raise ConfigError(f"{path}.{key}: expected int, got bool")
            if not isinstance(val, _TYPES[typ]):
                raise ConfigError(f"{path}.{key}: expected {typ}, "
                                  f"got {type(val).__name__}")
            out[key] = val
        elif required:
            raise ConfigError(f"{path}.{key}: required key missing")
        else:
            out[key] = default
    return out


def validate_config(raw: dict) -> dict:
    top = {"schema_version": ("int", True, None), "kind": ("str", True, None),
           "seed": ("int", False, 0), "grid": ("dict", False, None),
           "model": ("dict", False, None), "params": ("dict", False, {}),
           "out_dir": ("str", False, None)}
    cfg = _check_fields(raw, top, "config")
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"config.schema_version: expected {SCHEMA_VERSION}")
    kind = cfg["kind"]
    if kind not in KINDS:
        raise ConfigError(f"config.kind: unknown kind {kind!r}")
    cfg["params"] = _check_fields(cfg["params"] or {}, _PARAMS[kind], "config.params")
    if kind in _NEEDS_GRID:
        if cfg["grid"] is None or cfg["model"] is None:
            raise ConfigError(f"config: kind {kind!r} requires grid and model")
        cfg["grid"] = _check_fields(cfg["grid"], _GRID_FIELDS, "config.grid")
        cfg["model"] = _check_fields(cfg["model"], _MODEL_FIELDS, "config.model")
    return cfg


def _build_grid(cfg):
    from .solver import GridSpec
    g = cfg["grid"]
    if g.get("dt"):
        return GridSpec(nx=g["nx"], T=g["T"], dt=g["dt"], boundary=g["boundary"])
    return GridSpec.stable(g["nx"], g["T"], boundary=g["boundary"])


def _build_model(cfg):
    from .solver import model_from_spec
    return model_from_spec(cfg["model"])


def _record(claim, ref, measured, predicted=None, tolerance=None, verdict="informational"):
    return {"claim": claim, "paper_ref": ref, "measured": measured,
            "predicted": predicted, "tolerance": tolerance, "verdict": verdict}


def _pf(ok: bool) -> str:
    return "pass" if ok else "fail"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return "nan"
        return format(float(v), ".12g")
    return str(v)


# ---------------------------------------------------------------------------
# Runners: each returns (records, csv_header, csv_rows).


def _run_kernel_check(cfg, threads):
    from .kernel import KernelConfig, kernel_check_rows
    p = cfg["params"]
    rows = kernel_check_rows(KernelConfig(boundary=p["boundary"]), nx=p["nx"],
                             nt=p["nt"], n_semigroup=p["n_semigroup"],
                             seed=cfg["seed"])
    records = []
    for r in rows:
        informational = "informational" in r["check"]
        records.append(_record(
            f"kernel/{r['check']}", "exact Green-kernel identities on [0,1]",
            r["value"], r["bound"] if not np.isnan(r["bound"]) else None, None,
            "informational" if informational else _pf(bool(r["pass"]))))
    header = ["check", "t", "x", "y", "value", "bound", "pass"]
    return records, header, [[_fmt(r[h]) for h in header] for r in rows]


def _run_simulate(cfg, threads):
    from .solver import RngSpec, simulate
    grid, model = _build_grid(cfg), _build_model(cfg)
    rng = RngSpec(master_seed=cfg["seed"])
    rows, payload = [], []
    stride = max(1, grid.nt // 64)
    for p in range(cfg["params"]["paths"]):
        traj = simulate(grid, model, rng, p)
        for n in range(0, grid.nt + 1, stride):
            for m in range(grid.nx + 1):
                for i in range(model.d):
                    rows.append([p, n, m, i, _fmt(traj.values[n, m, i])])
        if cfg["params"]["out_format"] == "json":
            payload.append({"path": p, "stride": stride,
                            "values": traj.values[::stride].tolist()})
    records = [_record("simulate/completed", "explicit scheme run",
                       cfg["params"]["paths"], verdict="informational")]
    if payload:
        records.append(_record("simulate/json-export", "trajectory values",
                               json.dumps(payload), verdict="informational"))
    return records, ["path", "n", "m", "component", "value"], rows


def _run_holder(cfg, threads):
    from .solver import RngSpec, AnchorValues, ensemble_run
    from ._fits import loglog_fit
    grid, model = _build_grid(cfg), _build_model(cfg)
    p = cfg["params"]
    anchor = tuple(p["anchor"]) if p["anchor"] else (0.75 * grid.T, 0.5)
    t_lags = p["time_lags"] or [grid.dt * 2 ** k for k in range(2, 7)]
    s_lags = p["space_lags"] or [grid.dx * 2 ** k for k in range(0, 4)]
    pairs = [anchor] + [(anchor[0] + v, anchor[1]) for v in t_lags] \
        + [(anchor[0], anchor[1] + v) for v in s_lags]
    obs = AnchorValues(pairs, name="anchors")
    res = ensemble_run(grid, model, RngSpec(master_seed=cfg["seed"]), p["paths"],
                       [obs], threads=threads)
    vals = res["anchors"]
    base = vals[:, 0, :]
    rows, fits = [], {}
    for mode, lags, off in (("time", t_lags, 1), ("space", s_lags, 1 + len(t_lags))):
        moms = []
        for k, lag in enumerate(lags):
            inc = vals[:, off + k, :] - base
            mom = float((np.linalg.norm(inc, axis=1) ** p["p"]).mean())
            moms.append(mom)
            rows.append([mode, _fmt(lag), _fmt(mom)])
        fits[mode] = loglog_fit(np.array(lags), np.array(moms))
    pexp = p["p"]
    records = [
        _record("holder/time-slope", "parabolic increment moments: E|du|^p <= C Delta^(p/2)",
                fits["time"].exponent, 0.25 * pexp, 0.05 * pexp,
                _pf(abs(fits["time"].exponent - 0.25 * pexp) <= 0.05 * pexp)),
        _record("holder/space-slope", "parabolic increment moments: E|du|^p <= C Delta^(p/2)",
                fits["space"].exponent, 0.5 * pexp, 0.075 * pexp,
                _pf(abs(fits["space"].exponent - 0.5 * pexp) <= 0.075 * pexp)),
    ]
    return records, ["mode", "lag", "moment"], rows


def _run_malliavin(cfg, threads):
    from .solver import RngSpec
    from .malliavin import make_anchor_ladder, two_point_scaling, bloc_scaling, eigen_scaling
    grid, model = _build_grid(cfg), _build_model(cfg)
    p = cfg["params"]
    ladder = make_anchor_ladder(grid, t0=p["t0"], x0=p["x0"], ks=tuple(p["ks"]))
    rep = two_point_scaling(model, grid, RngSpec(master_seed=cfg["seed"]),
                            p["paths"], ladder, threads=threads)
    bfits, _ = bloc_scaling(model, grid, None, report=rep)
    efits, _ = eigen_scaling(model, grid, None, report=rep)
    rows = []
    for (scale, cls), stats in sorted(rep.stats.items()):
        for stat, (mean, se) in stats.items():
            rows.append([_fmt(scale), cls, stat, _fmt(mean), _fmt(se)])
    ranges = {"bloc4": (1.0, 0.15), "bloc23": (0.5, 0.15), "bloc1": (0.0, 0.1),
              "lambda_min": (1.0, 0.2), "topd_product": (0.0, 0.15),
              "lambda_min_equal_time": (1.0, 0.2)}
    refs = {"bloc4": "increment bloc entries of order Delta",
            "bloc23": "cross bloc entries of order Delta^(1/2)",
            "bloc1": "base bloc entries of order one",
            "lambda_min": "smallest eigenvalue of order Delta",
            "topd_product": "d largest eigenvalues bounded below",
            "lambda_min_equal_time": "equal-time smallest eigenvalue of order |x-y|"}
    records = []
    for name, fit in {**bfits, **efits}.items():
        pred, tol = ranges[name]
        records.append(_record(f"malliavin/{name}", refs[name], fit.exponent,
                               pred, tol, _pf(abs(fit.exponent - pred) <= tol)))
    records.append(_record("malliavin/psd", "two-point matrices are Gram matrices",
                           rep.psd_violations, 0, 0, _pf(rep.psd_violations == 0)))
    scales, lam = rep.scale_means("lambda_min")
    _, topd = rep.scale_means("topd_product")
    eigen_rows = [[_fmt(s), _fmt(l), _fmt(tp)] for s, l, tp in zip(scales, lam, topd)]
    extra = {"malliavin_eigen": (["scale", "lambda_min_mean", "topd_product_mean"],
                                 eigen_rows)}
    return records, ["scale", "bloc", "statistic", "value", "stderr"], rows, extra


def _load_mesh(p, default_shape="interval"):
    from .potential import CompactSetMesh, interval_mesh, square_mesh, ball_mesh
    if p.get("points_csv"):
        pts = np.loadtxt(p["points_csv"], delimiter=",", skiprows=1, ndmin=2)
        spacing = float(np.linalg.norm(np.diff(np.unique(pts[:, 0]))[:1])) \
            if len(pts) > 1 else 1.0
        return CompactSetMesh(pts, cell_size=max(spacing, 1e-9),
                              metric=p.get("metric", "euclidean"))
    shape = p.get("shape") or default_shape
    n = p.get("n_points", 200)
    if shape == "interval":
        return interval_mesh(n=n)
    if shape == "square":
        return square_mesh(n=int(math.isqrt(n)))
    if shape == "ball":
        return ball_mesh([0.0, 0.0, 0.0], 1.0, n_per_axis=max(3, round(n ** (1 / 3))))
    raise ConfigError(f"unknown shape {shape!r}")


def _run_capacity(cfg, threads):
    from .potential import RieszKernelSpec, capacity
    p = cfg["params"]
    mesh = _load_mesh(p)
    spec = RieszKernelSpec(beta=p["beta"], cutoff_h=p["cutoff"])
    cap, eq, gap = capacity(mesh, spec, tol=p["tol"])
    energy_val = 1.0 / cap if cap > 0 else math.inf
    records = [
        _record("capacity/value", "capacity = reciprocal minimal energy",
                cap, verdict="informational"),
        _record("capacity/duality-gap", "simplex program solved to tolerance",
                gap, None, p["tol"] * max(energy_val, 1e-300),
                _pf(gap <= p["tol"] * max(energy_val, 1e-300))),
    ]
    rows = [[_fmt(p["beta"]), mesh.n_points, _fmt(cap), _fmt(energy_val), _fmt(gap)]]
    return records, ["beta", "n_points", "capacity", "energy", "gap"], rows


def _run_hausdorff(cfg, threads):
    from .potential import hausdorff_upper
    p = cfg["params"]
    mesh = _load_mesh(p, default_shape="interval")
    rows, values = [], []
    for eps in p["epsilon_ladder"]:
        rep = hausdorff_upper(mesh, p["beta"], eps)
        rows.append([_fmt(eps), _fmt(p["beta"]), _fmt(rep.value), rep.n_balls])
        values.append(rep.value)
    records = [_record("hausdorff/cover-values", "greedy cover upper bounds",
                       values[-1] if values else None, verdict="informational")]
    return records, ["epsilon", "beta", "value", "n_balls"], rows


def _run_boxdim(cfg, threads):
    from .potential import box_dimension, box_occupancy
    p = cfg["params"]
    if p.get("points_csv"):
        pts = np.loadtxt(p["points_csv"], delimiter=",", skiprows=1, ndmin=2)
    elif p["shape"] == "interval":
        pts = np.linspace(0, 1, p["n_points"])[:, None]
    elif p["shape"] == "square":
        rng = np.random.default_rng(cfg["seed"])
        pts = rng.random((p["n_points"], 2))
    else:
        raise ConfigError(f"boxdim needs points_csv or shape interval/square")
    fit = box_dimension(pts, p["metric"], p["scales"])
    counts = box_occupancy(pts, p["metric"], sorted(p["scales"], reverse=True))
    rows = [[_fmt(s), _fmt(c)] for s, c in zip(sorted(p["scales"], reverse=True), counts)]
    if p["expected"] is not None:
        tol = p["tolerance"] or 0.1
        records = [_record("boxdim/dimension", "box-counting exponent",
                           fit.exponent, p["expected"], tol,
                           _pf(abs(fit.exponent - p["expected"]) <= tol))]
    else:
        records = [_record("boxdim/dimension", "box-counting exponent",
                           fit.exponent, verdict="informational")]
    return records, ["scale", "count"], rows


def _run_density(cfg, threads):
    from .solver import RngSpec
    from .stats import density_bound_check
    grid, model = _build_grid(cfg), _build_model(cfg)
    p = cfg["params"]
    rep = density_bound_check(model, grid, RngSpec(master_seed=cfg["seed"]),
                              p["t_list"], p["x_list"], n_samples=p["samples"],
                              threads=threads)
    records = [
        _record("density/uniform-bound", "one-point density uniformly bounded",
                rep["measured_spread"], rep["predicted_spread"], None,
                _pf(rep["uniform_bound_ok"])),
        _record("density/lower-envelope", "Gaussian-type lower bound with c > 0",
                rep["c_lower"], None, None, _pf(rep["lower_envelope_ok"])),
    ]
    rows = [[_fmt(t), _fmt(x), _fmt(rep["sup_by_anchor"][(t, x)]),
             _fmt(rep["c_by_anchor"][(t, x)])]
            for t in p["t_list"] for x in p["x_list"]]
    return records, ["t", "x", "kde_sup", "c_envelope"], rows


def _run_collapse(cfg, threads):
    from .solver import RngSpec
    from .stats import increment_collapse
    grid, model = _build_grid(cfg), _build_model(cfg)
    p = cfg["params"]
    partners = [tuple(v) if isinstance(v, list) else v for v in p["partners"]]
    rep = increment_collapse(model, grid, RngSpec(master_seed=cfg["seed"]),
                             p["t"], p["x"], partners, n_samples=p["samples"],
                             ratio_bound=p["ratio_bound"], threads=threads)
    records = [_record("collapse/sup-ratio",
                       "rescaled increments have a bounded density",
                       rep["ratio"], 1.0, p["ratio_bound"], _pf(rep["collapsed"]))]
    rows = [[_fmt(s), _fmt(v)] for s, v in zip(rep["scales"], rep["sup_per_scale"])]
    return records, ["scale", "kde_sup"], rows


def _run_hit(cfg, threads):
    from .solver import RngSpec
    from .stats import hit_probability
    grid, model = _build_grid(cfg), _build_model(cfg)
    p = cfg["params"]
    rep = hit_probability(grid, model, RngSpec(master_seed=cfg["seed"]), p["paths"],
                          tuple(p["I"]), tuple(p["J"]), p["target"], threads=threads)
    records = [_record("hit/estimate", "hitting probability on grid nodes",
                       rep.estimate, verdict="informational")]
    if p["expect_nonpolar"]:
        records.append(_record("hit/nonpolar", "target set is hit with positive probability",
                               rep.ci_low, None, None, _pf(rep.ci_low > 0)))
    rows = [[_fmt(rep.estimate), _fmt(rep.ci_low), _fmt(rep.ci_high), rep.n_paths,
             _fmt(rep.noise_floor), _fmt(rep.below_floor)]]
    return records, ["estimate", "ci_low", "ci_high", "n_paths", "noise_floor",
                     "below_floor"], rows


def _run_levelset(cfg, threads):
    from .solver import RngSpec, simulate
    from .stats import level_set
    grid, model = _build_grid(cfg), _build_model(cfg)
    p = cfg["params"]
    traj = simulate(grid, model, RngSpec(master_seed=cfg["seed"]), p["path_index"])
    z = p["z"] or [0.0] * model.d
    ls = level_set(traj, z, p["tol"], section_t=p["section_t"], section_x=p["section_x"])
    records = [_record("levelset/count", "grid nodes within tol of the level",
                       len(ls.points), verdict="informational")]
    rows = [[_fmt(t), _fmt(x)] for t, x in ls.points]
    return records, ["t", "x"], rows


def _run_dims(cfg, threads):
    from .solver import RngSpec
    from .stats import dimension_report
    grid, model = _build_grid(cfg), _build_model(cfg)
    p = cfg["params"]
    rep = dimension_report(p["which"], model, grid, RngSpec(master_seed=cfg["seed"]),
                           p["paths"], z=p["z"], I=tuple(p["I"]) if p["I"] else None,
                           J=tuple(p["J"]) if p["J"] else None,
                           section_t=p["section_t"], section_x=p["section_x"],
                           threads=threads)
    tol = p["tolerance"]
    records = [
        _record(f"dims/{p['which']}", "dimension = ambient minus hitting codimension",
                rep.mean, rep.predicted, tol,
                _pf(abs(rep.mean - rep.predicted) <= tol) if rep.covered else "informational"),
        _record(f"dims/{p['which']}/codim-identity",
                "dimension + codimension = ambient dimension",
                rep.mean + rep.codim, rep.ambient, 0.3,
                _pf(rep.codim_identity_dev <= 0.3) if rep.covered else "informational"),
    ]
    rows = [[p["which"], _fmt(rep.mean), _fmt(rep.stderr), _fmt(rep.predicted),
             rep.n_empty, _fmt(rep.tol)]]
    return records, ["which", "mean_dim", "stderr", "predicted", "n_empty", "tol"], rows


def _run_sandwich(cfg, threads):
    from .solver import RngSpec
    from .stats import sandwich_experiment
    grid, model = _build_grid(cfg), _build_model(cfg)
    p = cfg["params"]
    z = p["z"] or [0.0] * model.d
    rep = sandwich_experiment(model, grid, RngSpec(master_seed=cfg["seed"]), p["paths"],
                              tuple(p["I"]), tuple(p["J"]), z, p["r_ladder"],
                              mode=p["mode"], eta=p["eta"], threads=threads)
    records = [_record("sandwich/min-over-max",
                       "capacity lower bound keeps hit probabilities bounded below",
                       rep["min_over_max"], None, 0.5, _pf(rep["min_over_max"] >= 0.5))]
    for nm in ("hit_slope", "capacity_slope", "cover_slope"):
        fit = rep[nm]
        records.append(_record(f"sandwich/{nm}", "log-log trend down the radius ladder",
                               fit.exponent if fit else None, verdict="informational"))
    rows = [[_fmt(r["r"]), _fmt(r["estimate"]), _fmt(r["ci"][0]), _fmt(r["ci"][1]),
             _fmt(r["capacity"]), _fmt(r["cover"]), _fmt(r["below_floor"])]
            for r in rep["rows"]]
    return records, ["r", "estimate", "ci_low", "ci_high", "capacity", "cover",
                     "below_floor"], rows


_RUNNERS = {
    "kernel-check": _run_kernel_check, "simulate": _run_simulate,
    "holder": _run_holder, "malliavin": _run_malliavin,
    "capacity": _run_capacity, "hausdorff": _run_hausdorff,
    "boxdim": _run_boxdim, "density": _run_density, "collapse": _run_collapse,
    "hit": _run_hit, "levelset": _run_levelset, "dims": _run_dims,
    "sandwich": _run_sandwich,
}


def _atomic_write(path: str, data: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def apply_paths_budget(cfg: dict, factor: float) -> dict:
    """Scale every path/sample count by ``factor`` (at least 1 remains)."""
    out = json.loads(json.dumps(cfg))
    for key in ("paths", "samples"):
        if key in out.get("params", {}) and out["params"][key]:
            out["params"][key] = max(1, int(out["params"][key] * factor))
    return out


def run(config: dict, out_dir: str = ".", threads: int = 1,
        paths_budget: int = 0) -> dict:
    """Validate, dispatch, and persist one experiment; returns the bundle.

    Output: <kind>.csv with the bulk rows, <kind>_summary.json with the
    claim records, <kind>_meta.json with timestamps. Raises ConfigError
    (exit 2 at the CLI) for schema problems.
    """
    cfg = validate_config(config)
    if paths_budget:
        requested = cfg["params"].get("paths") or cfg["params"].get("samples") or 0
        if requested > paths_budget:
            cfg = apply_paths_budget(cfg, paths_budget / requested)
    t0 = time.time()
    out = _RUNNERS[cfg["kind"]](cfg, threads)
    records, header, rows = out[:3]
    extra_files = out[3] if len(out) > 3 else {}
    bundle = {
        "config": cfg,
        "records": records,
        "provenance": {"seed": cfg["seed"], "version": __version__},
    }
    base = os.path.join(out_dir, cfg["kind"])
    _atomic_write(base + ".csv", _csv_text(header, rows))
    for name, (hdr, rws) in extra_files.items():
        _atomic_write(os.path.join(out_dir, name + ".csv"), _csv_text(hdr, rws))
    _atomic_write(base + "_summary.json",
                  json.dumps(bundle, indent=2, sort_keys=True, default=str) + "\n")
    _atomic_write(base + "_meta.json", json.dumps(
        {"started": t0, "finished": time.time(), "wall_seconds": time.time() - t0},
        indent=2) + "\n")
    return bundle


def _suite_child(args):
    cfg, out_dir, threads, budget = args
    try:
        return None, run(cfg, out_dir, threads, budget)
    except Exception as exc:  # recorded, suite continues
        return f"{type(exc).__name__}: {exc}", {"config": cfg, "records": []}


def suite(manifest: list, out_dir: str = ".", threads: int = 1,
          paths_budget: int = 0) -> dict:
    """Run a list of configs, aggregate verdicts into one summary table."""
    if not manifest:
        raise ConfigError("suite manifest is empty")
    configs = [validate_config(c) for c in manifest]
    budget_each = 0
    if paths_budget:
        total = sum(c["params"].get("paths") or c["params"].get("samples") or 0
                    for c in configs)
        if total > paths_budget:
            configs = [apply_paths_budget(c, paths_budget / total) for c in configs]
    jobs = [(c, os.path.join(out_dir, f"{i:02d}-{c['kind']}"), 1, budget_each)
            for i, c in enumerate(configs)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_suite_child, jobs))
    else:
        results = [_suite_child(j) for j in jobs]

    records, failures = [], []
    for (err, bundle), job in zip(results, jobs):
        if err is not None:
            failures.append(err)
            records.append(_record(f"{job[0]['kind']}/error", "child run failed",
                                   err, verdict="fail"))
        records.extend(bundle["records"])
    ids = [r["claim"] for r in records]
    dupes = sorted({c for c in ids if ids.count(c) > 1})
    if dupes:
        raise ConfigError(f"duplicate claim ids in suite: {', '.join(dupes)}")
    header = ["claim", "verdict", "measured", "predicted", "tolerance"]
    rows = [[r["claim"], r["verdict"], _fmt(r["measured"]), _fmt(r["predicted"]),
             _fmt(r["tolerance"])] for r in records]
    _atomic_write(os.path.join(out_dir, "suite_summary.csv"), _csv_text(header, rows))
    bundle = {"records": records, "n_configs": len(configs),
              "provenance": {"version": __version__}}
    _atomic_write(os.path.join(out_dir, "suite_summary.json"),
                  json.dumps(bundle, indent=2, sort_keys=True, default=str) + "\n")
    return bundle


def _threads_default() -> int:
    env = os.environ.get("HEATPROBE_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


# Convenience flags merged into the config per subcommand: (flag, section,
# key, type). Section "" targets the top level.
_FLAG_MAP = {
    "simulate": [("--nx", "grid", "nx", int), ("--dt", "grid", "dt", float),
                 ("--T", "grid", "T", float), ("--boundary", "grid", "boundary", str),
                 ("--d", "model", "d", int), ("--model", "model", "family", str),
                 ("--paths", "params", "paths", int),
                 ("--out", "params", "out_format", str)],
    "holder": [("--nx", "grid", "nx", int), ("--dt", "grid", "dt", float),
               ("--T", "grid", "T", float), ("--d", "model", "d", int),
               ("--model", "model", "family", str),
               ("--paths", "params", "paths", int)],
    "malliavin": [("--nx", "grid", "nx", int), ("--dt", "grid", "dt", float),
                  ("--T", "grid", "T", float), ("--d", "model", "d", int),
                  ("--model", "model", "family", str),
                  ("--paths", "params", "paths", int),
                  ("--anchors", "params", "ks", "intlist")],
    "capacity": [("--beta", "params", "beta", float),
                 ("--metric", "params", "metric", str),
                 ("--cutoff", "params", "cutoff", float),
                 ("--shape", "params", "shape", str),
                 ("--points-csv", "params", "points_csv", str)],
    "hausdorff": [("--beta", "params", "beta", float),
                  ("--metric", "params", "metric", str),
                  ("--shape", "params", "shape", str),
                  ("--points-csv", "params", "points_csv", str),
                  ("--epsilon-ladder", "params", "epsilon_ladder", "floatlist")],
    "boxdim": [("--metric", "params", "metric", str),
               ("--shape", "params", "shape", str),
               ("--points-csv", "params", "points_csv", str),
               ("--epsilon-ladder", "params", "scales", "floatlist")],
    "hit": [("--paths", "params", "paths", int)],
    "dims": [("--paths", "params", "paths", int)],
    "sandwich": [("--paths", "params", "paths", int)],
    "density": [("--samples", "params", "samples", int)],
    "collapse": [("--samples", "params", "samples", int)],
}


def _parse_listflag(kind, raw):
    conv = int if kind == "intlist" else float
    return [conv(v) for v in raw.split(",") if v.strip()]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="heatprobe",
        description="Simulation and numerical potential theory for systems of "
                    "stochastic heat equations")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--out-dir", default=".")
        sp.add_argument("--paths-budget", type=int, default=0)
        for flag, _sec, _key, typ in _FLAG_MAP.get(kind, []):
            sp.add_argument(flag, type=str if typ in ("intlist", "floatlist")
                            else typ, default=None)
    sp = sub.add_parser("suite")
    sp.add_argument("--config", required=True, help="JSON manifest: {configs: [...]}")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--threads", type=int, default=None)
    sp.add_argument("--out-dir", default=".")
    sp.add_argument("--paths-budget", type=int, default=0)
    args = parser.parse_args(argv)

    threads = args.threads if args.threads is not None else _threads_default()
    try:
        if args.command == "suite":
            with open(args.config) as f:
                manifest = json.load(f)
            if not isinstance(manifest, dict) or "configs" not in manifest:
                raise ConfigError("manifest must be an object with a 'configs' list")
            bundle = suite(manifest["configs"], out_dir=args.out_dir,
                           threads=threads, paths_budget=args.paths_budget)
        else:
            if args.config:
                with open(args.config) as f:
                    config = json.load(f)
            else:
                config = {"schema_version": SCHEMA_VERSION, "kind": args.command}
            if args.seed is not None:
                config["seed"] = args.seed
            for flag, sec, key, typ in _FLAG_MAP.get(args.command, []):
                val = getattr(args, flag.lstrip("-").replace("-", "_"))
                if val is None:
                    continue
                if typ in ("intlist", "floatlist"):
                    val = _parse_listflag(typ, val)
                config.setdefault(sec, {})[key] = val
            config.setdefault("kind", args.command)
            if config["kind"] != args.command:
                raise ConfigError(
                    f"config kind {config['kind']!r} does not match "
                    f"subcommand {args.command!r}")
            bundle = run(config, out_dir=args.out_dir, threads=threads,
                         paths_budget=args.paths_budget)
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    n_fail = sum(1 for r in bundle["records"] if r["verdict"] == "fail")
    for r in bundle["records"]:
        print(f"[{r['verdict']:>13s}] {r['claim']}: measured={_fmt(r['measured'])}"
              + (f" predicted={_fmt(r['predicted'])}" if r["predicted"] is not None else ""))
    return 0 if n_fail == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
