"""Command-line experiment runner.

Every subcommand writes ``results.csv`` or ``results.json`` plus
``manifest.json`` into ``--out`` (or prints the table when ``--out`` is not
given). Parameters may come from a flat ``key = value`` config file; flags on
the command line override it.

Exit codes: 0 success, 2 invalid parameters, 3 solver non-convergence,
4 resource cap exceeded.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import RootEvent
from .exceptions import ConvergenceError, InsufficientDataError, ResourceCapError
from .glauber import SimConfig, autocorrelation, frozen_probe, simulate
from .graph import Boundary, Family, GraphKind, ModelSpec, build_graph
from .northeast import estimate_p_ell, ne_bootstrap
from .spectral import DEFAULT_MAX_SITES, MonteCarlo, dirichlet_ratio, exact_gap, predicted_decay_rate
from .threshold import critical_density, ell_zero, frozen_fraction_unrooted, iterate_recursion, largest_fixed_point

EXIT_OK, EXIT_INVALID, EXIT_NO_CONVERGENCE, EXIT_RESOURCE = 0, 2, 3, 4
JOBS_ENV = "KCSM_JOBS"

REQUIRED = object()

_MODEL = {"k": (int, 2), "j": (int, 2), "p": (float, REQUIRED)}
_TREE = {"family": (str, "ofa"), "depth": (int, 2), "graph": (str, None), "boundary": (str, "free")}
_SIM = {"t_max": (float, 1000.0), "burn_in": (float, 0.0), "sample_interval": (float, 1.0), "replicas": (int, 8)}

# subcommand -> {parameter: (type, default)}
PARAMS = {
    "threshold": {"k": (int, 2), "j": (int, 2), "tol": (float, 1e-9)},
    "recursion": {**_MODEL, "n": (int, 10)},
    "fixed-point": {**_MODEL, "tol": (float, 1e-13)},
    "ell-zero": dict(_MODEL),
    "gap": {**_MODEL, **_TREE, "method": (str, "auto"), "max_sites": (int, DEFAULT_MAX_SITES)},
    "vbound": {**_MODEL, **_TREE, "samples": (int, 0)},
    "rate": dict(_MODEL),
    "simulate": {**_MODEL, **_TREE, **_SIM, "max_lag": (float, 0.0)},
    "frozen-probe": {
        **_MODEL,
        "family": (str, "ofa"),
        "depth": (int, 6),
        "boundary": (str, "filled"),
        "t_max": (float, 200.0),
        "trials": (int, 64),
        "inner": (int, 32),
    },
    "ne-bootstrap": {"side": (int, 5), "p": (float, 1.0), "samples": (int, 1)},
    "ne-pell": {"p": (float, REQUIRED), "ell": (int, REQUIRED), "side": (int, 200), "samples": (int, 10000)},
}
COMMON = {"seed": (int, 0), "format": (str, "csv"), "out": (str, None), "jobs": (int, None)}


class ValidationError(ValueError):
    pass


# --- helpers ----------------------------------------------------------------


def _spec(prm) -> ModelSpec:
    return ModelSpec(prm.get("family", "ofa").lower(), prm["k"], prm["j"], prm["p"])


def _graph(prm):
    fam = Family(prm.get("family", "ofa").lower())
    kind = prm.get("graph")
    if kind is None:
        kind = {Family.OFA: "rooted", Family.FA: "unrooted", Family.NE: "triangle"}[fam]
    return build_graph(GraphKind(kind), prm["k"], prm["depth"])


def _boundary(name):
    if name in (None, "free"):
        return None
    return Boundary[name.upper()]


def _require_p_c(prm, above: bool):
    """Check ``p`` against the critical density, counting the bisection bracket as critical."""
    rep = critical_density(prm["k"], prm["j"])
    p_c, half = rep.p_c, rep.bracket_width / 2
    if above and prm["p"] <= p_c + half:
        raise ValidationError(f"p must exceed p_c = {p_c!r}, got p = {prm['p']!r}")
    if not above and prm["p"] >= p_c - half:
        raise ValidationError(f"p must be below p_c = {p_c!r}, got p = {prm['p']!r}")
    return p_c


# --- subcommands ------------------------------------------------------------
# each returns a list of rows; a row is a flat dict and names its estimator


def cmd_threshold(prm):
    rep = critical_density(prm["k"], prm["j"], tol=prm["tol"])
    return [{"k": prm["k"], "j": prm["j"], "p_c": rep.p_c, "bracket_width": rep.bracket_width, "evaluations": rep.evaluations, "estimator": "exact"}]


def cmd_recursion(prm):
    k, j, p = prm["k"], prm["j"], prm["p"]
    vals = iterate_recursion(k, j, p, prm["n"])
    rows = []
    for m, v in enumerate(vals):
        unrooted = frozen_fraction_unrooted(k, j, p, m) if m >= 1 else p
        rows.append({"m": m, "p_m": float(v), "unrooted_occupied": unrooted, "estimator": "exact"})
    return rows


def cmd_fixed_point(prm):
    rep = largest_fixed_point(prm["k"], prm["j"], prm["p"], tol=prm["tol"])
    return [{"p": prm["p"], "p_inf": rep.p_inf, "derivative": rep.derivative_at_fp, "stable": rep.stable, "iterations": rep.iterations, "estimator": "exact"}]


def cmd_ell_zero(prm):
    p_c = _require_p_c(prm, above=False)
    return [{"p": prm["p"], "p_c": p_c, "ell_zero": ell_zero(prm["k"], prm["j"], prm["p"]), "estimator": "exact"}]


def cmd_gap(prm):
    spec, g = _spec(prm), _graph(prm)
    rep = exact_gap(spec, g, boundary=_boundary(prm["boundary"]), method=prm["method"], max_sites=prm["max_sites"])
    return [
        {
            "depth": prm["depth"],
            "p": prm["p"],
            "gap": rep.gap,
            "ergodic": rep.ergodic,
            "num_states": rep.num_states,
            "method": rep.method,
            "residual": rep.residual,
            "estimator": "exact",
        }
    ]


def cmd_vbound(prm):
    spec, g = _spec(prm), _graph(prm)
    mode = "exact" if prm["samples"] <= 0 else MonteCarlo(prm["samples"], prm["seed"])
    rep = dirichlet_ratio(spec, g, RootEvent(spec, g), mode, boundary=_boundary(prm["boundary"]))
    return [
        {
            "depth": prm["depth"],
            "p": prm["p"],
            "variance": rep.variance,
            "dirichlet": rep.dirichlet,
            "ratio": rep.ratio,
            "stderr_ratio": rep.stderr_ratio,
            "degenerate": rep.degenerate,
            "estimator": rep.estimator,
            "samples": rep.samples,
        }
    ]


def cmd_rate(prm):
    p_c = _require_p_c(prm, above=True)
    fp = largest_fixed_point(prm["k"], prm["j"], prm["p"])
    rate = predicted_decay_rate(prm["k"], prm["j"], prm["p"])
    return [{"p": prm["p"], "p_c": p_c, "p_inf": fp.p_inf, "derivative": fp.derivative_at_fp, "decay_rate": rate, "estimator": "exact"}]


def _sim_config(prm, t_max=None):
    return SimConfig(
        t_max=prm["t_max"] if t_max is None else t_max,
        burn_in=prm.get("burn_in", 0.0),
        sample_interval=prm.get("sample_interval", 1.0),
        replicas=prm.get("replicas", 1),
        seed=prm["seed"],
    )


def cmd_simulate(prm):
    spec, g = _spec(prm), _graph(prm)
    cfg = _sim_config(prm)
    stats = simulate(spec, g, "equilibrium", cfg, boundary=_boundary(prm["boundary"]), workers=prm["jobs"])
    dens, dens_se = stats.time_average("density")
    root, root_se = stats.time_average("root")
    row = {
        "depth": prm["depth"],
        "p": prm["p"],
        "density": dens,
        "density_se": dens_se,
        "root_occupancy": root,
        "root_occupancy_se": root_se,
        "events": int(stats.events.sum()),
        "blocked": int(stats.blocked.sum()),
        "replicas": cfg.replicas,
    }
    if prm["max_lag"] > 0:
        ac = autocorrelation(stats, "root", prm["max_lag"])
        row.update(decay_rate=ac.rate, decay_rate_se=ac.rate_stderr, tau_int=ac.tau_int, tau_int_se=ac.tau_int_stderr)
    row["estimator"] = "montecarlo"
    return [row]


def cmd_frozen_probe(prm):
    spec = _spec(prm)
    g = _graph({**prm, "graph": "rooted" if spec.family is not Family.NE else None})
    cfg = SimConfig(t_max=prm["t_max"], seed=prm["seed"])
    rep = frozen_probe(spec, g, cfg, prm["trials"], prm["inner"], boundary=_boundary(prm["boundary"]), workers=prm["jobs"])
    return [
        {
            "depth": prm["depth"],
            "p": prm["p"],
            "plateau": rep.plateau,
            "plateau_se": rep.stderr,
            "t_eval": rep.t_eval,
            "frozen_fraction": rep.frozen_fraction,
            "trials": rep.trials,
            "inner": rep.inner,
            "estimator": "montecarlo",
        }
    ]


def cmd_ne_bootstrap(prm):
    L, p = prm["side"], prm["p"]
    n = (L + 1) * (L + 2) // 2
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(prm["seed"])))
    rows = []
    for s in range(prm["samples"]):
        eta = (rng.random(n) < p).astype(np.uint8)
        res = ne_bootstrap(L, eta)
        rows.append(
            {
                "sample": s,
                "side": L,
                "occupied_initial": int(eta.sum()),
                "iterations": res.iterations_to_fixpoint,
                "occupied_final": int(res.final.sum()),
                "estimator": "exact" if p in (0.0, 1.0) else "montecarlo",
            }
        )
    return rows


def cmd_ne_pell(prm):
    rep = estimate_p_ell(prm["p"], prm["ell"], prm["side"], prm["samples"], prm["seed"])
    return [
        {
            "p": prm["p"],
            "ell": rep.ell,
            "p_ell": rep.p_ell,
            "stderr": rep.stderr,
            "delta": rep.delta,
            "condition_value": rep.condition_value,
            "passes": rep.passes,
            "estimator": "montecarlo",
            "samples": rep.samples,
        }
    ]


COMMANDS = {
    "threshold": cmd_threshold,
    "recursion": cmd_recursion,
    "fixed-point": cmd_fixed_point,
    "ell-zero": cmd_ell_zero,
    "gap": cmd_gap,
    "vbound": cmd_vbound,
    "rate": cmd_rate,
    "simulate": cmd_simulate,
    "frozen-probe": cmd_frozen_probe,
    "ne-bootstrap": cmd_ne_bootstrap,
    "ne-pell": cmd_ne_pell,
}


# --- configuration ----------------------------------------------------------


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _convert(name, typ, raw):
    if isinstance(raw, typ) and not isinstance(raw, bool):
        return raw
    try:
        if typ is int:
            f = float(raw)
            if f != int(f):
                raise ValueError
            return int(f)
        return typ(raw)
    except (TypeError, ValueError):
        raise ValidationError(f"parameter {name}: cannot read {raw!r} as {typ.__name__}") from None


def resolve(sub: str, file_cfg: dict, flags: dict, allow_grid: bool = False) -> dict:
    """Merge defaults, config file and flags (in that order of precedence)."""
    schema = {**PARAMS[sub], **COMMON}
    keys = {k.replace("-", "_") for k in schema}
    unknown = set(file_cfg) - keys - {"sub"}
    if unknown:
        raise ValidationError(f"unknown parameter(s) for {sub}: {', '.join(sorted(unknown))}")
    out = {}
    for name, (typ, default) in schema.items():
        key = name.replace("-", "_")
        raw = flags.get(key)
        if raw is None:
            raw = file_cfg.get(key, default)
        if raw is REQUIRED:
            raise ValidationError(f"missing required parameter --{name.replace('_', '-')}")
        if raw is None:
            out[key] = None
            continue
        if allow_grid and isinstance(raw, str) and (".." in raw or "," in raw):
            out[key] = [_convert(name, typ, v) for v in expand_grid(raw, typ)]
        else:
            out[key] = _convert(name, typ, raw)
    if out["jobs"] is None:
        out["jobs"] = _convert("jobs", int, os.environ.get(JOBS_ENV, "1"))
    if out["format"] not in ("csv", "json"):
        raise ValidationError("format must be csv or json")
    return out


def expand_grid(raw: str, typ) -> list:
    """``"1..3"`` -> ``[1, 2, 3]``; ``"0.3,0.5"`` -> ``[0.3, 0.5]``."""
    vals = []
    for part in raw.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..", 1)
            a, b = int(a), int(b)
            if b < a:
                raise ValidationError(f"empty range {part!r}")
            vals.extend(range(a, b + 1))
        elif part:
            vals.append(part)
    return vals


def validate(sub: str, prm: dict):
    """Check preconditions before any work starts."""
    for key in ("k", "j", "depth", "side", "samples", "trials", "inner", "replicas", "n", "ell"):
        v = prm.get(key)
        if v is not None and v < 0:
            raise ValidationError(f"{key} must be nonnegative")
    if "k" in prm and "j" in prm and not 1 <= prm["j"] <= prm["k"]:
        raise ValidationError(f"need 1 <= j <= k, got k={prm['k']}, j={prm['j']}")
    if prm.get("p") is not None and not 0.0 <= prm["p"] <= 1.0:
        raise ValidationError(f"p must lie in [0, 1], got {prm['p']}")
    if "family" in prm and prm["family"].lower() not in [f.value for f in Family]:
        raise ValidationError(f"unknown family {prm['family']!r}")
    if "graph" in prm and prm["graph"] is not None and prm["graph"] not in [k.value for k in GraphKind]:
        raise ValidationError(f"unknown graph {prm['graph']!r}")
    if "boundary" in prm and prm["boundary"] not in ("free", "filled", "empty"):
        raise ValidationError(f"unknown boundary {prm['boundary']!r}")
    if "t_max" in prm:
        SimConfig(prm["t_max"], prm.get("burn_in", 0.0), prm.get("sample_interval", 1.0), prm.get("replicas", 1) or 1)


# --- output -----------------------------------------------------------------


def fmt_real(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return "" if x is None else str(x)


def to_json(obj) -> str:
    """JSON with reals printed to 17 significant digits; NaN becomes null."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {to_json(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(to_json(v) for v in obj) + "]"
    if isinstance(obj, (float, np.floating)):
        return "null" if not math.isfinite(obj) else format(float(obj), ".17g")
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if obj is None:
        return "null"
    return json.dumps(str(obj), ensure_ascii=False)


def to_csv(rows: list[dict]) -> str:
    cols = []
    for r in rows:
        cols.extend(c for c in r if c not in cols)
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for r in rows:
        buf.write(",".join(fmt_real(r.get(c)) for c in cols) + "\n")
    return buf.getvalue()


def write_outputs(rows, manifest, prm):
    text = to_csv(rows) if prm["format"] == "csv" else to_json(rows) + "\n"
    if prm["out"] is None:
        sys.stdout.write(text)
        return
    out = Path(prm["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"results.{prm['format']}", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(to_json(manifest) + "\n")


# --- driver -----------------------------------------------------------------


def _stamp(rows, prm):
    for r in rows:
        r.setdefault("estimator", "exact")
        r.setdefault("samples", None)
        r["seed"] = prm["seed"]
    return rows


def run(sub: str, prm: dict) -> list[dict]:
    validate(sub, prm)
    return _stamp(COMMANDS[sub](prm), prm)


def run_sweep(target: str, prm: dict) -> list[dict]:
    axes = [k for k, v in prm.items() if isinstance(v, list)]
    grid = list(product(*(prm[a] for a in axes)))
    points = [{**prm, **dict(zip(axes, combo))} for combo in grid]
    for pt in points:
        validate(target, pt)

    def one(i):
        pt = points[i]
        rows = run(target, {**pt, "jobs": 1})
        return [{"grid_index": i, **{a: pt[a] for a in axes}, **r} for r in rows]

    jobs = max(1, prm["jobs"])
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            chunks = list(pool.map(one, range(len(points))))
    else:
        chunks = [one(i) for i in range(len(points))]
    return [r for c in chunks for r in c]


def _add_params(parser, schema):
    for name, (typ, _) in schema.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name.replace("-", "_"), default=None, metavar=typ.__name__.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kcsm", description="Kinetically constrained spin models on trees and the North-East lattice.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)
    for name in PARAMS:
        sp = subs.add_parser(name)
        sp.add_argument("--config", default=None, help="flat key = value parameter file")
        _add_params(sp, {**PARAMS[name], **COMMON})
    sw = subs.add_parser("sweep", help="map a grid of values (a..b or comma lists) over a subcommand")
    sw.add_argument("--sub", required=False, choices=sorted(PARAMS))
    sw.add_argument("--config", default=None)
    merged = dict(COMMON)
    for schema in PARAMS.values():
        merged.update(schema)
    _add_params(sw, merged)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    try:
        file_cfg = read_config(args.config) if args.config else {}
        flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "sub")}
        if args.command == "sweep":
            target = args.sub or file_cfg.get("sub")
            if target not in PARAMS:
                raise ValidationError("sweep needs --sub naming a subcommand")
            schema_keys = {k.replace("-", "_") for k in {**PARAMS[target], **COMMON}}
            stray = [k for k, v in flags.items() if v is not None and k not in schema_keys]
            if stray:
                raise ValidationError(f"{target} takes no parameter(s) {', '.join(stray)}")
            prm = resolve(target, file_cfg, flags, allow_grid=True)
            rows = run_sweep(target, prm)
        else:
            target = args.command
            prm = resolve(target, file_cfg, flags)
            rows = run(target, prm)
    except ResourceCapError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RESOURCE
    except ConvergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (ValueError, InsufficientDataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    manifest = {
        "command": args.command,
        "target": target,
        "config": prm,
        "version": __version__,
        "seed": prm["seed"],
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_clock_s": time.time() - started,
        "provenance": [{"row": i, "estimator": r["estimator"], "samples": r.get("samples")} for i, r in enumerate(rows)],
    }
    write_outputs(rows, manifest, prm)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
