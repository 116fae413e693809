"""Command-line runner: ``ucplab <command> [--config FILE] [--key value ...]``.

Exit status is 0 on success, 2 when the computed verdict is negative and 1 on
any error (bad configuration, failed precondition).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np

from . import __version__
from . import carleman_scan as cs
from . import cauchy
from . import config as cfg
from . import subellipticity as sub
from .expr import parse_field
from .fdgrid import BILAPLACIAN, FOURTH_SUM, build_grid
from .weights import parse_weight

EXIT_OK, EXIT_ERROR, EXIT_VERDICT = 0, 1, 2


@dataclass
class Outcome:
    """What a command produced: a JSON-able result, optional CSV tables and a verdict."""

    result: dict
    tables: dict[str, tuple[list[str], list[list[Any]]]] = field(default_factory=dict)
    ok: bool = True


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _grid(text: str):
    box, nodes = cfg.parse_grid(text)
    return build_grid(box, nodes)


def _coefficients(c: cfg.RunConfig, grid):
    dim = grid.dim
    A = None
    if c["A"]:
        if len(c["A"]) != dim:
            raise cfg.ConfigError(f"A needs {dim} components, got {len(c['A'])}")
        A = [parse_field(t, dim)(*grid.coords) for t in c["A"]]
    q = parse_field(c["q"], dim)(*grid.coords)
    return A, q


# -- commands ----------------------------------------------------------------


def cmd_identity(c: cfg.RunConfig) -> Outcome:
    certs = sub.certify_identities(c["dim"])
    res = {"dim": c["dim"], "certificates": [x.as_dict() for x in certs]}
    if c["dim"] >= 2:
        res["paraboloid_expansion"] = sub.paraboloid_expansion_check(c["dim"])
    ok = all(x.holds is not False for x in certs)
    rows = [[x.name, "" if x.holds is None else str(x.holds).lower(), x.detail] for x in certs]
    return Outcome(res, {"certificates": (["name", "holds", "detail"], rows)}, ok)


def cmd_bracket(c: cfg.RunConfig) -> Outcome:
    box = cfg.parse_box(c["box"])
    w = parse_weight(c["weight"], len(box))
    if w.dim != len(box):
        raise cfg.ConfigError("weight and box dimensions differ")
    rep = sub.check_subellipticity(w, box, c["count"], c["tol"], c.seed)
    res = {"bracket": rep.as_dict()}
    ok = rep.sign_condition_holds
    tables = {}
    if (c["bound_h"] is None) != (c["bound_eps"] is None):
        raise cfg.ConfigError("bound_h and bound_eps must be given together")
    if c["bound_h"] is not None:
        b = sub.check_convexified_bound(w, Fraction(c["bound_h"]), Fraction(c["bound_eps"]), box,
                                        c["count"], c["bound_tol"], c.seed, c["tol"])
        res["convexified_bound"] = b.as_dict()
        ok = ok and b.passed
        n = w.dim
        head = [f"x{j + 1}" for j in range(n)] + [f"eta{j + 1}" for j in range(n)] + \
            ["bracket", "decomposition", "bound", "residual", "margin"]
        rows = [r["x"] + r["eta"] + [r["bracket"], r["decomposition"], r["bound"], r["residual"], r["margin"]]
                for r in b.rows]
        tables["bound"] = (head, rows)
    return Outcome(res, tables, ok)


_OPS = {"fourth": (FOURTH_SUM,), "bilap": (BILAPLACIAN,), "both": (FOURTH_SUM, BILAPLACIAN)}
_NORMS = {"l2": "l2", "h1": "h1scl"}


def _scan_table(results: list[cs.ScanResult]):
    rows = []
    for r in results:
        for s in r.samples:
            rows.append([r.kind, s.h, s.sigma_min, str(s.converged).lower(), s.eps or ""])
    return ["op", "h", "sigma_min", "converged", "eps"], rows


def cmd_scan(c: cfg.RunConfig) -> Outcome:
    grid = _grid(c["grid"])
    w = parse_weight(c["weight"], grid.dim)
    results = [cs.scan(grid, w, kind, c["h"], _NORMS[c["norm"]], c["support"], c["tol"], c["max_iter"], c.seed)
               for kind in _OPS[c["op"]]]
    ok = all(r.fit is not None and all(s.converged for s in r.samples) for r in results)
    res = {"scans": [r.as_dict() for r in results]}
    return Outcome(res, {"scan": _scan_table(results)}, ok)


def cmd_compare(c: cfg.RunConfig) -> Outcome:
    grid = _grid(c["grid"])
    w = parse_weight(c["weight"], grid.dim)
    rep = cs.compare(grid, w, c["h"], margin=c["margin"], norm_mode=_NORMS[c["norm"]],
                     support=c["support"], tol=c["tol"], max_iter=c["max_iter"], seed=c.seed)
    return Outcome({"compare": rep.as_dict()}, {"scan": _scan_table([rep.first, rep.second])}, rep.passed)


def cmd_cauchy(c: cfg.RunConfig) -> Outcome:
    grid = _grid(c["grid"])
    w = parse_weight(c["weight"], grid.dim)
    A, q = _coefficients(c, grid)
    faces = cfg.parse_faces(c["gamma_faces"], grid.dim)
    u = parse_field(c["u_true"], grid.dim)
    p = cauchy.manufacture(grid, u, A, q, faces, w, c["delta"], data=c["data"])
    base = cauchy.solve(p, c["lambda"], c["gamma"])
    zero_err = cauchy.h1_norm(grid, base.u.values - p.u_true, p.omega_delta)
    fit = cauchy.stability_fit(p, c["noise"], c.seed, c["trials"], c["lambda"], c["gamma"])
    res = {"stability": fit.as_dict(), "zero_noise_error": zero_err, "zero_noise_converged": base.converged}
    rows = [[t.noise, t.index, t.F, t.M, t.error, str(t.converged).lower()] for t in fit.trials]
    ok = fit.theta_hat is not None and fit.theta_hat > 0
    return Outcome(res, {"trials": (["noise", "trial", "F", "M", "error", "converged"], rows)}, ok)


def cmd_caccioppoli(c: cfg.RunConfig) -> Outcome:
    grid = _grid(c["grid"])
    A, q = _coefficients(c, grid)
    u = parse_field(c["u_true"], grid.dim)
    rep = cauchy.caccioppoli_ratio(u, c["r"], c["rho"], grid, A, q, c["tol"])
    row = [[rep.lhs, rep.rhs, rep.ratio, rep.residual]]
    return Outcome({"caccioppoli": rep.as_dict()}, {"caccioppoli": (["lhs", "rhs", "ratio", "residual"], row)},
                   math.isfinite(rep.ratio))


def cmd_ucp(c: cfg.RunConfig) -> Outcome:
    grid = _grid(c["grid"])
    A, q = _coefficients(c, grid)
    mask = cauchy.box_mask(grid, cfg.parse_box(c["omega"]))
    gap = cauchy.ucp_gap(grid, mask, A, q)
    res = {"gap": gap, "omega_nodes": int(mask.sum())}
    return Outcome(res, {"ucp": (["omega_nodes", "gap"], [[int(mask.sum()), gap]])}, gap > 0)


COMMANDS = {
    "identity": cmd_identity, "bracket": cmd_bracket, "scan": cmd_scan, "compare": cmd_compare,
    "cauchy": cmd_cauchy, "caccioppoli": cmd_caccioppoli, "ucp": cmd_ucp,
}


# -- output --------------------------------------------------------------------


def csv_text(c: cfg.RunConfig, header: list[str], rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    buf.write(f"# config_sha256={c.sha256()}\n# seed={c.seed}\n# version={__version__}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def json_text(c: cfg.RunConfig, outcome: Outcome, timestamp: bool = True) -> str:
    doc = {
        "command": c.command,
        "config": c.to_text(),
        "config_sha256": c.sha256(),
        "seed": c.seed,
        "version": __version__,
        "verdict": "pass" if outcome.ok else "fail",
        "result": _jsonable(outcome.result),
    }
    if timestamp:
        doc["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def report(c: cfg.RunConfig, outcome: Outcome, out_dir: str | None = None) -> list[str]:
    """Write ``<command>.json`` and one ``<command>_<table>.csv`` per table; returns the paths."""
    out_dir = c.out if out_dir is None else out_dir
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from None
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"output directory {out_dir} is not writable")
    paths = []
    path = os.path.join(out_dir, f"{c.command}.json")
    with open(path, "w") as fh:
        fh.write(json_text(c, outcome))
    paths.append(path)
    for name, (head, rows) in outcome.tables.items():
        path = os.path.join(out_dir, f"{c.command}_{name}.csv")
        with open(path, "w", newline="") as fh:
            fh.write(csv_text(c, head, rows))
        paths.append(path)
    return paths


def run(c: cfg.RunConfig) -> tuple[int, Outcome]:
    outcome = COMMANDS[c.command](c)
    return (EXIT_OK if outcome.ok else EXIT_VERDICT), outcome


# -- argument handling -------------------------------------------------------------


def _overrides(extra: list[str]) -> dict[str, Any]:
    """Turn ``--key value`` pairs (or ``--key=value``) into raw config values."""
    out: dict[str, Any] = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise cfg.ConfigError(f"unexpected argument: {tok}")
        key, sep, val = tok[2:].partition("=")
        if not sep:
            if i + 1 >= len(extra):
                raise cfg.ConfigError(f"missing value for --{key}")
            val = extra[i + 1]
            i += 1
        out[key.replace("-", "_") if key != "max-iter" else "max_iter"] = cfg.parse_value(val)
        i += 1
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ucplab", description=__doc__.splitlines()[0], allow_abbrev=False)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="flat key = value config file")
    ap.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    ap.add_argument("--out", help="output directory for JSON and CSV")
    ap.add_argument("--json", action="store_true", help="also print the JSON report to stdout")
    ap.add_argument("--no-write", action="store_true", help="skip writing files")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args, extra = ap.parse_known_args(argv)
    try:
        text = ""
        if args.config:
            with open(args.config) as fh:
                text = fh.read()
        raw = cfg.parse_text(text)
        if "command" in raw and raw["command"] != args.command:
            raise cfg.ConfigError(f"config is for {raw['command']!r}, command line says {args.command!r}")
        raw["command"] = args.command
        raw.update(_overrides(extra))
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.out is not None:
            raw["out"] = args.out
        c = cfg.validate(raw)
        status, outcome = run(c)
        if not args.no_write:
            report(c, outcome)
        if args.json:
            sys.stdout.write(json_text(c, outcome))
        else:
            print(f"{c.command}: {'pass' if outcome.ok else 'fail'}")
        return status
    except (ValueError, OSError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
