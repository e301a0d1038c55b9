"""
Command-line entry point: ``wavegauge <command> [--config PATH] [--out DIR] ...``.

Every command writes a CSV table and a JSON manifest into the output
directory.  File names embed a hash of the resolved configuration, and
neither file carries timestamps, so identical inputs give identical bytes.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 solver failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import os
import sys
import tempfile

import numpy as np

from . import forward as fw
from . import gauge as gg
from . import linearize as lz
from . import probes as pb
from . import recover as rc
from . import scenarios as sc
from . import suites as st
from .errors import ConfigurationError, ContractError, GaugeError, SolverError
from .mesh import Profile, TimeWindow, l2_sigma

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

DEFAULTS = {
    "grid": {"dim": 1, "nx": 101, "cfl": None, "T": sc.DEFAULT_T},
    "window": {"Tstar": 2.2, "t1": 2.5, "t2": 3.0},
    "spec": {"case": None, "n": 2, "scale": 1.0, "g_amplitude": 0.0, "h_amplitude": 0.0,
             "F_amplitude": 0.0},
    "gauge": {"amplitude": 0.2, "center": 0.5, "halfwidth": 0.35},
    "probe": {"centers": None, "taus": [8, 16, 32], "profile": None},
    "recover": {"lambdas": list(rc.DEFAULT_LAMBDAS), "tau": 32.0, "n_profiles": 8, "n_tests": 6},
    "battery": {"size": 5, "amplitude": 0.8},
    "dtn": {"input": 0},
    "linearize": {"order": 3, "n": 3},
    "forward": {"nxs": [51, 101, 201]},
    "seed": 0,
}


# -- configuration ------------------------------------------------------------


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise ConfigurationError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigurationError(f"config key {path + key!r} must be an object")
            out[key] = _merge(base[key], val, path + key + ".")
        else:
            out[key] = val
    return out


def load_config(path: str | None = None, nx: int | None = None, seed: int | None = None) -> dict:
    """Merge a JSON config over the defaults and validate the window."""
    user = {}
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigurationError("the config root must be an object")
    cfg = _merge(DEFAULTS, user)
    if nx is not None:
        cfg["grid"]["nx"] = nx
    if seed is not None:
        cfg["seed"] = seed
    w = cfg["window"]
    TimeWindow(float(w["Tstar"]), float(w["t1"]), float(w["t2"])).validate(
        float(cfg["grid"]["T"]), _diameter(cfg))
    return cfg


def _diameter(cfg) -> float:
    return float(np.sqrt(cfg["grid"]["dim"]))


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _grid(cfg, nx=None):
    g = cfg["grid"]
    return sc.default_grid(nx or g["nx"], g["dim"], g["T"], g["cfl"])


def _window(cfg) -> TimeWindow:
    w = cfg["window"]
    return TimeWindow(float(w["Tstar"]), float(w["t1"]), float(w["t2"]))


def _spec(cfg, grid, n=None):
    s = cfg["spec"]
    window = _window(cfg)
    if s["case"] is not None:
        spec = sc.catalogue_spec(int(s["case"]), grid, window)
    else:
        spec = sc.polynomial_spec(grid, window, n or s["n"], s["scale"])
    changes = {}
    shape = Profile(0.5, 0.49)(grid.x)
    if grid.dim == 2:
        shape = np.outer(shape, shape)
    if s["g_amplitude"]:
        changes["g"] = s["g_amplitude"] * shape
    if s["h_amplitude"]:
        changes["h"] = s["h_amplitude"] * shape
    if s["F_amplitude"]:
        changes["F"] = sc.bump_field(grid, window, s["F_amplitude"])
        changes["F_after_t1"] = True
    return spec.with_changes(**changes) if changes else spec


def _battery(cfg, grid):
    b = cfg["battery"]
    return sc.input_battery(grid, b["size"], b["amplitude"], cfg["seed"])


# -- output -------------------------------------------------------------------


def _atomic_write(path: str, text: str):
    folder = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return repr(x)
    return x


def _csv_text(rows: list) -> str:
    buf = io.StringIO()
    if rows:
        cols = list(rows[0])
        for r in rows[1:]:
            cols += [c for c in r if c not in cols]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _plain(v) for k, v in r.items()})
    return buf.getvalue()


def write_outputs(out_dir: str, name: str, cfg: dict, rows: list, checks: list,
                  extra: dict | None = None) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    h = config_hash(cfg)
    csv_name = f"{name}-{h}.csv"
    manifest = {
        "command": name,
        "config_hash": h,
        "config": cfg,
        "table": csv_name,
        "checks": [c.as_row() for c in checks],
        "passed": all(c.passed for c in checks),
    }
    if extra:
        manifest.update(extra)
    _atomic_write(os.path.join(out_dir, csv_name), _csv_text(rows))
    _atomic_write(os.path.join(out_dir, f"{name}-{h}.json"),
                  json.dumps(_plain(manifest), indent=2, sort_keys=True) + "\n")
    return manifest


# -- commands -----------------------------------------------------------------


def cmd_forward(cfg):
    rows = st.convergence_table(tuple(cfg["forward"]["nxs"]))
    checks = []
    if len(rows) >= 2:
        checks.append(st._check("convergence_ratio", rows[-1]["ratio"], "in", (3.4, 4.6)))
    grid = _grid(cfg)
    spec = _spec(cfg, grid)
    f = _battery(cfg, grid)[0]
    res = fw.picard(spec, f)
    floor = fw.spec_trace_error(spec, res.u)
    extra = {"configured_solve": {"iterations": res.iterations,
                                  "residual": fw.residual(spec, res.u),
                                  "trace_error_noise": floor.noise}}
    return rows, checks, extra


def cmd_dtn(cfg):
    grid = _grid(cfg)
    spec = _spec(cfg, grid)
    battery = _battery(cfg, grid)
    idx = cfg["dtn"]["input"]
    if not 0 <= idx < len(battery):
        raise ConfigurationError(f"dtn.input must be in [0, {len(battery)})")
    rec = fw.dtn(spec, battery[idx])
    rows = []
    for n, t in enumerate(grid.t):
        for face in range(grid.nfaces):
            for p in range(grid.face_points):
                rows.append({"t": float(t), "face": face, "point": p,
                             "dirichlet": float(rec.dirichlet[n, face, p]),
                             "neumann": float(rec.neumann[n, face, p])})
    return rows, [], {"input": idx}


def cmd_linearize(cfg):
    grid = _grid(cfg)
    lin_cfg = cfg["linearize"]
    spec = _spec(cfg, grid, n=lin_cfg["n"])
    order = int(lin_cfg["order"])
    if not 1 <= order <= lz.MAX_ORDER:
        raise ConfigurationError(f"linearize.order must be in [1, {lz.MAX_ORDER}]")
    dirs = sc.direction_battery(grid, order)
    f0 = sc.boundary_bump(grid, 1, 2.3, 0.6, 0.3)
    lin = lz.Linearizer(spec, f0, dirs)
    rows, checks = [], []
    for k in range(1, order + 1):
        direct = lin.trace(range(k))
        fd = lz.dtn_derivative_fd(spec, f0, dirs[:k])
        rel = l2_sigma(grid, direct - fd.neumann) / l2_sigma(grid, direct)
        rows.append({"order": k, "relative_error": rel, "richardson_gap": fd.gap,
                     "flagged": fd.flagged, "message": fd.message})
        checks.append(st._check(f"oracle_k{k}_relative_error", rel, "<=", 1e-3))
    return rows, checks, {}


def cmd_gauge_check(cfg):
    grid = _grid(cfg)
    window = _window(cfg)
    spec2 = _spec(cfg, grid)
    g = cfg["gauge"]
    base = gg.default_bump(grid, window)
    params = gg.BumpParams(base.t_center, base.t_halfwidth,
                           (float(g["center"]),) * grid.dim, (float(g["halfwidth"]),) * grid.dim)
    gau = gg.make_gauge(grid, window, g["amplitude"], params)
    spec1 = gg.transform_spec(spec2, gau)
    rep = gg.verify_dtn_invariance(spec1, spec2, _battery(cfg, grid))
    rows = [{"input": i, "l2_discrepancy": c.l2_discrepancy, "max_discrepancy": c.max_discrepancy,
             "floor": c.floor, "ratio": c.ratio} for i, c in enumerate(rep.comparisons)]
    checks = [st._check("gauge_max_ratio", rep.max_ratio, "<=", rep.tolerance)]
    return rows, checks, {"verdict": rep.verdict, "role": rep.role}


def cmd_probe_study(cfg):
    grid = _grid(cfg)
    window = _window(cfg)
    spec = _spec(cfg, grid)
    u0 = fw.solve_semilinear(spec, _battery(cfg, grid)[0])
    pot = np.broadcast_to(fw.eval_nonlinearity(spec.nonlinearity, u0, 1), grid.shape)
    p = cfg["probe"]
    centers = p["centers"] or pb.default_centers(grid)
    profile = Profile(*p["profile"]) if p["profile"] else None
    rows, checks = [], []
    for ci, x0 in enumerate(centers):
        prev = None
        for tau in p["taus"]:
            probe = pb.build_probe(grid, pot, x0, float(tau), 1, profile, window)
            norm = probe.remainder_norm()
            ratio = norm / prev if prev else float("nan")
            rows.append({"center": ci, "x0": list(probe.x0), "tau": float(tau),
                         "remainder_norm": norm, "ratio": ratio,
                         "residual": probe.residual(pot), "floor": probe.floor()})
            if prev:
                checks.append(st._check(f"center{ci}_tau{tau:g}_decay", ratio, "<", 0.8))
            prev = norm
    return rows, checks, {}


def cmd_recover(cfg):
    grid = _grid(cfg)
    window = _window(cfg)
    r = cfg["recover"]
    family = rc.ProbeFamily(tau=float(r["tau"]), n_profiles=int(r["n_profiles"]),
                            n_tests=int(r["n_tests"]))
    truth = rc.synthetic_truth(grid, window)
    oracle = rc.simulated_oracle(rc.quadratic_oracle_spec(grid, window, truth))
    res = rc.recover_top_coefficient(grid, window, oracle, family, tuple(r["lambdas"]), truth)
    checks = [st._check("relative_error", res.relative_error, "<=", 0.15)]
    extra = {"regularization": res.regularization, "effective_rank": res.effective_rank,
             "ill_conditioned": res.ill_conditioned, "noise": res.noise}
    return res.error_table(), checks, extra


COMMANDS = {
    "forward": cmd_forward,
    "dtn": cmd_dtn,
    "linearize": cmd_linearize,
    "gauge-check": cmd_gauge_check,
    "probe-study": cmd_probe_study,
    "recover": cmd_recover,
}


def _suite_rows(cfg, name):
    suite_cfg = {"nx": cfg["grid"]["nx"], "window_obj": _window(cfg)}
    checks = st.run_suite(name, suite_cfg)
    return [dict(c.as_row(), suite=name) for c in checks], checks


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavegauge", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["suite"]:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config merged over the defaults")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--nx", type=int, help="override grid.nx")
        p.add_argument("--seed", type=int, help="override the battery seed")
        p.add_argument("--quiet", action="store_true")
        if name == "suite":
            p.add_argument("--suite", required=True,
                           help="suite name or 'all': " + ", ".join(st.SUITES))
    return parser


def _say(quiet, msg):
    if not quiet:
        print(msg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.nx, args.seed)
        if args.command == "suite":
            names = list(st.SUITES) if args.suite == "all" else [args.suite]
            for n in names:
                if n not in st.SUITES:
                    raise ConfigurationError(f"unknown suite {n!r}; choose from {sorted(st.SUITES)}")
            ok = True
            for n in names:
                rows, checks = _suite_rows(cfg, n)
                man = write_outputs(args.out, f"suite-{n}", cfg, rows, checks)
                ok &= man["passed"]
                for c in checks:
                    _say(args.quiet, f"{'PASS' if c.passed else 'FAIL'} {n}.{c.name} "
                                     f"value={c.value:.4g} {c.relation} {c.threshold}")
            return EXIT_PASS if ok else EXIT_FAIL
        rows, checks, extra = COMMANDS[args.command](cfg)
        man = write_outputs(args.out, args.command, cfg, rows, checks, extra)
        for c in checks:
            _say(args.quiet, f"{'PASS' if c.passed else 'FAIL'} {c.name} "
                             f"value={c.value:.4g} {c.relation} {c.threshold}")
        _say(args.quiet, f"wrote {man['table']} to {args.out}")
        return EXIT_PASS if man["passed"] else EXIT_FAIL
    except (ConfigurationError, ContractError, GaugeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
