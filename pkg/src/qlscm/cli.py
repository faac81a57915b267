"""Command-line front end: ``qlscm {simulate, analyze, bootstrap-test, hill}``.

Every command writes a tidy CSV and a JSON bundle that echoes the resolved
configuration.  Both are byte-identical across reruns with the same
configuration; wall-clock timings go to a separate ``timing.json``.

Exit codes: 0 success, 2 usage or configuration error, 3 data or validation
error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import gpsim
from .distributions import derive_seed
from .estimators import EstimationError, spatial_ace, spatial_qpe
from .inference import BootstrapSpec, bootstrap_effect, hill_curve, zero_effect_verdicts
from .stgrid import Grid, PanelDataset, PanelSchema, cell_areas, load_panel_csv, load_region_map, validate_panel

CASES = ("case1", "case2", "case3", "example1")

DEFAULTS = {
    "case": "case1",
    "taus": [0.1, 0.5, 0.9],
    "reps": 1,
    "grid": "50x20",
    "m": None,            # 100 for the spatial cases, 50000 for example1
    "seed": 0,
    "input": None,
    "regions": None,
    "months": None,
    "bootstrap_reps": 250,
    "block": 5.0,
    "level": 0.99,
    "weights": "area",
    "out": "qlscm-out",
    "estimator": "qpe",
    "tau": 0.5,
    "k": None,
    "save_panels": False,
    "save_replicates": False,
    "y_col": None,        # column mapping of the input CSV; None = canonical names
    "x_cols": None,
    "w_cols": None,
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config

def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"not a comma-separated list of numbers: {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"not a comma-separated list of integers: {text!r}") from None


def parse_grid(text) -> Grid:
    try:
        nx, ny = (int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise UsageError(f"--grid expects NXxNY such as 50x20, got {text!r}") from None
    if nx < 1 or ny < 1:
        raise UsageError("grid dimensions must be positive")
    return Grid.regular(nx, ny)


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the JSON config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        for key, val in loaded.items():
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"unknown config key {key!r}")
            cfg[key] = val
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            cfg[key] = val
    # normalise list-valued entries that may arrive as strings
    if isinstance(cfg["taus"], str):
        cfg["taus"] = _floats(cfg["taus"])
    cfg["taus"] = [float(t) for t in cfg["taus"]]
    if isinstance(cfg["months"], str):
        cfg["months"] = _ints(cfg["months"])
    if isinstance(cfg["k"], str):
        cfg["k"] = _ints(cfg["k"])
    for key in ("x_cols", "w_cols"):
        if isinstance(cfg[key], str):
            cfg[key] = [c.strip() for c in cfg[key].split(",") if c.strip()]
    if isinstance(cfg["k"], int):
        cfg["k"] = [cfg["k"]]
    if cfg["m"] is None:
        cfg["m"] = 50_000 if cfg["case"] == "example1" else 100
    cfg["command"] = args.command
    _check_config(cfg)
    return cfg


def _check_config(cfg):
    if not cfg["taus"] or any(not 0 < t < 1 for t in cfg["taus"]):
        raise UsageError("taus must be probabilities strictly between 0 and 1")
    if not 0 < cfg["tau"] < 1:
        raise UsageError("tau must lie strictly between 0 and 1")
    if int(cfg["reps"]) < 1:
        raise UsageError("reps must be >= 1")
    if cfg["case"] not in CASES:
        raise UsageError(f"unknown case {cfg['case']!r}; choose from {', '.join(CASES)}")
    if cfg["estimator"] not in ("qpe", "ace"):
        raise UsageError("estimator must be qpe or ace")
    if cfg["weights"] not in ("area", "uniform", "coslat"):
        raise UsageError("weights must be area, uniform or coslat")
    if not 0 < cfg["level"] < 1:
        raise UsageError("level must lie strictly between 0 and 1")
    if cfg["block"] < 1:
        raise UsageError("block must be >= 1")
    b = int(cfg["bootstrap_reps"])
    if b == 1 or b < 0:
        raise UsageError("bootstrap-reps must be 0 (off) or >= 2")
    if cfg["months"] is not None and any(not 1 <= mo <= 12 for mo in cfg["months"]):
        raise UsageError("months must lie in 1..12")
    parse_grid(cfg["grid"])


# ---------------------------------------------------------------- output helpers

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_cell(v) for v in row])


def write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _weights(cfg):
    return None if cfg["weights"] == "area" else cfg["weights"]


def _threads():
    try:
        return max(1, int(os.environ.get("QLSCM_THREADS", "1")))
    except ValueError:
        return 1


def _ordered_map(fn, items):
    n = _threads()
    if n > 1:
        with ThreadPoolExecutor(n) as pool:
            return list(pool.map(fn, items))
    return [fn(v) for v in items]


def generate(cfg, seed) -> gpsim.SimOutput:
    case, m = cfg["case"], int(cfg["m"])
    if case == "example1":
        return gpsim.gen_example1(m, seed)
    grid = parse_grid(cfg["grid"])
    if case == "case1":
        return gpsim.gen_case1(grid, m, seed)
    if case == "case2":
        return gpsim.gen_case2(grid, m, seed)
    return gpsim.gen_case3(grid, m, seed, taus=tuple(cfg["taus"]))


def _estimation_panel(sim: gpsim.SimOutput) -> PanelDataset:
    # the tail-effect example is analysed conditioning on its (per-draw) hidden value
    return sim.hidden_as_confounders() if sim.case == "example1" else sim.data


def _truth(sim, kind, tau):
    if kind == "ace":
        return sim.mean_effect_truth
    if sim.case == "example1":
        return None   # no closed-form quantile truth
    return sim.truth.value(tau)


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg, out: Path) -> dict:
    """Repeat a simulation case ``reps`` times and score QPE/ACE against the truth."""
    taus, weights = cfg["taus"], _weights(cfg)
    seeds = [derive_seed(cfg["seed"], r) for r in range(int(cfg["reps"]))]
    if cfg["save_panels"]:
        (out / "panels").mkdir(exist_ok=True)

    def run(r):
        sim = generate(cfg, seeds[r])
        data = _estimation_panel(sim)
        if cfg["save_panels"]:
            gpsim.write_sim_output(sim, out / "panels" / f"rep{r:03d}.csv")
        rows = []
        for tau in taus:
            rows.append((r, seeds[r], "qpe", tau, spatial_qpe(data, tau, weights).slope, _truth(sim, "qpe", tau)))
        rows.append((r, seeds[r], "ace", None, spatial_ace(data, weights).slope, _truth(sim, "ace", None)))
        return rows, sim.truth.to_dict()

    results = _ordered_map(run, range(len(seeds)))
    rep_rows = []
    for rows, _ in results:
        for r, s, kind, tau, est, truth in rows:
            err = None if truth is None else est - truth
            lae = None if err is None else (math.log(abs(err)) if err != 0 else -math.inf)
            rep_rows.append([r, s, kind, tau, est, truth, err, lae])
    write_csv(out / "replicates.csv",
              ["rep", "seed", "estimator", "tau", "estimate", "truth", "error", "log_abs_error"], rep_rows)

    oracle_se = {}
    if cfg["case"] == "case3":
        _, se = gpsim.oracle_case3_curve(tuple(taus))
        oracle_se = dict(zip(taus, se.tolist()))
    summary = []
    for kind, tau in [("qpe", t) for t in taus] + [("ace", None)]:
        sel = [row for row in rep_rows if row[2] == kind and row[3] == tau]
        est = np.array([row[4] for row in sel])
        truth = sel[0][5]
        lae = [row[7] for row in sel if row[7] is not None]
        summary.append({
            "estimator": kind, "tau": tau, "n_reps": len(sel),
            "mean": float(est.mean()), "sd": float(est.std(ddof=1)) if len(sel) > 1 else None,
            "truth": truth, "oracle_se": oracle_se.get(tau) if kind == "qpe" else None,
            "median_log_abs_error": float(np.median(lae)) if lae else None,
        })
    cols = ["estimator", "tau", "n_reps", "mean", "sd", "truth", "oracle_se", "median_log_abs_error"]
    write_csv(out / "summary.csv", cols, [[s[c] for c in cols] for s in summary])
    return {"truth": results[0][1], "summary": summary, "files": ["replicates.csv", "summary.csv"]}


def _load_input(cfg):
    if not cfg["input"]:
        raise UsageError("--input is required for this command")
    stats = {}
    schema = PanelSchema(
        y=cfg["y_col"] or "y",
        x=tuple(cfg["x_cols"]) if cfg["x_cols"] else None,
        w=tuple(cfg["w_cols"]) if cfg["w_cols"] else None,
    )
    data = load_panel_csv(cfg["input"], schema, months=cfg["months"], stats=stats)
    data, report = validate_panel(data)
    if data.n_sites == 0:
        raise EstimationError("no usable sites after validation")
    info = {"rows_read": stats["rows_read"], "rows_kept": stats["rows_kept"],
            "dropped_records": len(report.dropped_records),
            "dropped_sites": [list(map(str, d)) if isinstance(d, tuple) else str(d) for d in report.dropped_sites],
            "n_sites": data.n_sites}
    return data, info


def cmd_analyze(cfg, out: Path) -> dict:
    """Per-region QPE (each tau) and ACE with stationary-bootstrap CIs."""
    data, info = _load_input(cfg)
    notes = []
    if cfg["regions"]:
        rmap = load_region_map(cfg["regions"])
        notes += [f"region map lists unknown site {sid!r}" for sid in sorted(set(rmap) - set(data.grid.ids))]
    else:
        rmap = {s.id: s.region for s in data.grid.sites if s.region}
    if not rmap:
        rmap = {sid: "all" for sid in data.grid.ids}
    members = {}
    for i, sid in enumerate(data.grid.ids):
        lab = rmap.get(sid)
        if lab:
            members.setdefault(lab, []).append(i)
    unlabeled = data.n_sites - sum(len(v) for v in members.values())
    if not members:
        raise EstimationError("no site carries a region label")

    weights = _weights(cfg)
    nboot = int(cfg["bootstrap_reps"])
    tasks = []
    for ri, lab in enumerate(sorted(members)):
        for j, tau in enumerate(list(cfg["taus"]) + [None]):
            tasks.append((ri, lab, j, tau))
    all_w = data.grid.areas if weights is None else cell_areas(data.grid, weights)

    def run(task):
        ri, lab, j, tau = task
        idx = members[lab]
        sub = data.subset(idx)
        sw = all_w[idx]
        kind = "ace" if tau is None else "qpe"
        eff = spatial_ace(sub, sw) if kind == "ace" else spatial_qpe(sub, tau, sw)
        res = None
        if nboot:
            spec = BootstrapSpec(nboot, cfg["block"], cfg["level"], derive_seed(cfg["seed"], ri, j))
            res = bootstrap_effect(sub, kind, tau, spec, sw, threads=1)
        return task, eff, res

    rows, regions = [], {}
    multi = data.d > 1
    for (ri, lab, j, tau), eff, res in _ordered_map(run, tasks):
        key = "ace" if tau is None else repr(tau)
        entry = regions.setdefault(lab, {"n_sites": len(members[lab]), "effects": {}})
        entry["effects"][key] = {"estimate": dict(zip(eff.exposure_names, map(float, eff.slopes))),
                                 "n_used": eff.n_used, "skipped": [list(s) for s in eff.skipped_sites]}
        if res is not None:
            entry["effects"][key]["bootstrap"] = res.summary(cfg["save_replicates"])
            notes += [f"{lab}/{key}: {w}" for w in res.warnings]
        for e, name in enumerate(eff.exposure_names):
            lo = hi = sig = None
            if res is not None:
                v = zero_effect_verdicts(res)[e]
                lo, hi, sig = v.ci_lower, v.ci_upper, v.reject
            row = [lab, "ace" if tau is None else tau, float(eff.slopes[e]), lo, hi, sig, eff.n_used]
            rows.append(([name] if multi else []) + row)
    header = (["exposure"] if multi else []) + ["region", "tau_or_ace", "estimate", "ci_lo", "ci_hi", "significant", "n_sites"]
    write_csv(out / "results.csv", header, rows)
    return {"input": info, "unlabeled_sites": unlabeled, "regions": regions,
            "warnings": notes, "files": ["results.csv"]}


def _panel_for(cfg):
    if cfg["input"]:
        data, info = _load_input(cfg)
        return data, info
    sim = generate(cfg, cfg["seed"])
    return _estimation_panel(sim), {"case": cfg["case"], "seed": cfg["seed"], "truth": sim.truth.to_dict()}


def cmd_bootstrap_test(cfg, out: Path) -> dict:
    """Bootstrap CI and zero-effect verdict for one estimator."""
    data, info = _panel_for(cfg)
    kind = cfg["estimator"]
    tau = None if kind == "ace" else cfg["tau"]
    nboot = int(cfg["bootstrap_reps"]) or DEFAULTS["bootstrap_reps"]
    spec = BootstrapSpec(nboot, cfg["block"], cfg["level"], cfg["seed"])
    res = bootstrap_effect(data, kind, tau, spec, _weights(cfg))
    verdicts = zero_effect_verdicts(res)
    write_csv(out / "bootstrap.csv", ["exposure", "estimator", "tau", "estimate", "ci_lo", "ci_hi", "reject_zero"],
              [[v.exposure, kind, tau, float(res.point[j]), v.ci_lower, v.ci_upper, v.reject]
               for j, v in enumerate(verdicts)])
    return {"data": info, "bootstrap": res.summary(cfg["save_replicates"]),
            "verdicts": [{"exposure": v.exposure, "reject_zero": v.reject, "ci": [v.ci_lower, v.ci_upper],
                          "level": v.level} for v in verdicts],
            "files": ["bootstrap.csv"]}


def cmd_hill(cfg, out: Path) -> dict:
    """Hill estimates of the pooled outcome over a k grid (1%..10% of the positives)."""
    data, info = _panel_for(cfg)
    y = np.concatenate(data.y)
    npos = int((y > 0).sum())
    if npos < 2:
        raise ValueError("the outcome has fewer than two positive values")
    ks, est = hill_curve(y, cfg["k"])
    write_csv(out / "hill.csv", ["k", "fraction", "estimate"],
              [[int(k), float(k) / npos, float(e)] for k, e in zip(ks, est)])
    return {"data": info, "n_positive": npos, "n_total": int(y.size),
            "all_positive": bool(np.all(est > 0)), "files": ["hill.csv"]}


COMMANDS = {"simulate": cmd_simulate, "analyze": cmd_analyze,
            "bootstrap-test": cmd_bootstrap_test, "hill": cmd_hill}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qlscm", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON file of settings; explicit flags override it")
    p.add_argument("--case", help="simulation design: " + ", ".join(CASES))
    p.add_argument("--taus", type=_floats, help="quantile levels, e.g. 0.1,0.5,0.9")
    p.add_argument("--tau", type=float, help="quantile level for bootstrap-test")
    p.add_argument("--estimator", help="qpe or ace (bootstrap-test)")
    p.add_argument("--reps", type=int, help="simulation replicates")
    p.add_argument("--grid", help="simulation grid NXxNY, e.g. 50x20")
    p.add_argument("--m", type=int, help="time points per site (draws for example1)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--input", help="panel CSV")
    p.add_argument("--regions", help="CSV with columns site_id,region")
    p.add_argument("--months", type=_ints, help="keep only these months, e.g. 6,7,8,9,10")
    p.add_argument("--bootstrap-reps", dest="bootstrap_reps", type=int, help="bootstrap replicates (0 = no CIs)")
    p.add_argument("--block", type=float, help="expected block length of the stationary bootstrap")
    p.add_argument("--level", type=float, help="confidence level")
    p.add_argument("--weights", help="area (from the input), uniform or coslat")
    p.add_argument("--y-col", dest="y_col", help="outcome column of the input (default y)")
    p.add_argument("--x-cols", dest="x_cols", help="comma-separated exposure columns (default x1, x2, ...)")
    p.add_argument("--w-cols", dest="w_cols", help="comma-separated confounder columns (default w1, w2, ...)")
    p.add_argument("--k", type=_ints, help="Hill k values (default: 1%%..10%% of the positives)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--save-panels", dest="save_panels", action="store_true", help="write simulated panels")
    p.add_argument("--save-replicates", dest="save_replicates", action="store_true",
                   help="include bootstrap replicate matrices in JSON")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        bundle = COMMANDS[args.command](cfg, out)
        elapsed = time.perf_counter() - t0
        bundle = {"command": args.command, "config": {k: cfg[k] for k in sorted(cfg)}, **bundle}
        write_json(out / f"{args.command}.json", bundle)
        write_json(out / "timing.json", {"command": args.command, "seconds": elapsed})
    except UsageError as exc:
        print(f"qlscm: usage error: {exc}", file=sys.stderr)
        return 2
    except (EstimationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"qlscm: numerical failure: {exc}", file=sys.stderr)
        return 4
    except (ValueError, OSError) as exc:
        print(f"qlscm: data error: {exc}", file=sys.stderr)
        return 3
    print(f"qlscm {args.command}: wrote {out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
