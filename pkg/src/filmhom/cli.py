"""Command-line harness: ``filmhom {check,whom,table,membrane,gamma}``.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .cell import whom_estimate
from .config import apply_override, config_hash, load_config, validate
from .errors import BudgetExceeded, ConfigError, FilmHomError
from .film3d import MeshBuilder, gamma_experiment
from .homtable import CellWhom, SliceSpec, WHomCache, save_table, tabulate_slice
from .material import check_hypotheses, law_from_dict
from .membrane import AffineLoad, LoadSpec, MembraneMesh, reduce_loads, solve_membrane
from .optimize import MinimizeOptions

log = logging.getLogger("filmhom")

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2


class Run:
    """Resolved configuration plus output helpers shared by the subcommands."""

    def __init__(self, config):
        self.config = config
        self.hash = config_hash(config)
        self.out = config["out"]
        self.law = law_from_dict(config["law"])
        opt = config["optimizer"]
        self.opts = MinimizeOptions(grad_tol=opt["grad_tol"], max_iters=opt["max_iters"],
                                    memory=opt["memory"], multistart=opt["multistart"], seed=config["seed"])
        self.grid = config["grid"]

    def provenance(self):
        return {"tool": "filmhom", "version": __version__, "config_sha256": self.hash,
                "seed": self.config["seed"], "workers": self.config["workers"]}

    def path(self, name):
        os.makedirs(self.out, exist_ok=True)
        return os.path.join(self.out, name)

    def write_json(self, name, payload):
        payload = {"provenance": self.provenance(), **payload}
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")

    def write_csv(self, name, header, rows):
        buf = io.StringIO()
        buf.write(f"# filmhom {__version__} config_sha256={self.hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(buf.getvalue())

    def write_text(self, name, text):
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# filmhom {__version__} config_sha256={self.hash}\n")
            fh.write(text)

    def loads(self):
        block = self.config["loads"]
        return LoadSpec(*(AffineLoad(**block[k]) if k in block else None for k in ("f", "g_plus", "g_minus")))

    def membrane_cache(self):
        m = self.config["membrane"]
        return WHomCache(self.law, m["T_max"], m["rtol"], self.grid["n_per_unit"], self.grid["n_thick"],
                         self.opts, self.grid["max_nodes"])

    def membrane_mesh(self):
        m = self.config["membrane"]
        return MembraneMesh(m["n_x"], m["n_y"], tuple(tuple(r) for r in m["domain"]))


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return v


def cmd_check(run):
    report = check_hypotheses(run.law, run.config["check"]["sample_count"], run.config["seed"])
    run.write_json("check_report.json", report.to_dict())
    for name, ok in report.passed.items():
        log.info("%s: %s", name, "pass" if ok else f"FAIL witness={report.witnesses[name]}")
    return EXIT_OK if report.all_passed else EXIT_NUMERIC


def cmd_whom(run):
    w = run.config["whom"]
    xi_bar = np.array(w["xi_bar"], dtype=float).reshape(3, 2)
    try:
        est = whom_estimate(run.law, w["x_alpha"], xi_bar, w["T_max"], w["rtol"], run.opts,
                            run.grid["n_per_unit"], run.grid["n_thick"], run.grid["max_nodes"])
    except BudgetExceeded as exc:
        run.write_json("whom.json", {"error": f"BudgetExceeded: {exc}"})
        log.error("%s", exc)
        return EXIT_NUMERIC
    run.write_csv("whom_trace.csv", ["T", "value", "iterations", "grad_norm", "converged"],
                  [[r.T, r.value, r.iterations, r.grad_norm, r.converged] for r in est.trace])
    run.write_json("whom.json", {"value": est.value, "converged_in_T": est.converged_in_T,
                                 "converged_at_T": est.converged_at_T, "all_converged": est.all_converged,
                                 "x_alpha": list(w["x_alpha"]), "xi_bar": list(w["xi_bar"])})
    log.info("W_hom = %r (converged_in_T=%s)", est.value, est.converged_in_T)
    return EXIT_OK if est.converged_in_T and est.all_converged else EXIT_NUMERIC


def cmd_table(run):
    t = run.config["table"]
    spec = SliceSpec(t["base"], t["d1"], t["d2"], t["s_range"], t["t_range"], t["n"])
    table = tabulate_slice(run.law, t["x_alpha"], spec, t["T_max"], t["rtol"], run.grid["n_per_unit"],
                           run.grid["n_thick"], run.opts, run.config["workers"], run.grid["max_nodes"])
    table.metadata["provenance"] = run.provenance()
    save_table(table, run.path("table.json"))
    return EXIT_NUMERIC if table.failures or table.metadata["unconverged"] else EXIT_OK


def _membrane(run):
    loads = run.loads()
    reduced = reduce_loads(loads, run.config["loads"]["quadrature_n"])
    provider = CellWhom(run.membrane_cache())
    return solve_membrane(provider, run.membrane_mesh(), reduced, run.opts), loads


def cmd_membrane(run):
    state, _ = _membrane(run)
    run.write_json("membrane.json", state.to_dict())
    run.write_csv("membrane_energy.csv", ["energy", "load_work", "total", "iterations", "converged"],
                  [[state.energy, state.load_work, state.total, state.iterations, state.converged]])
    run.write_text("membrane_v3.csv", state.v3_csv())
    return EXIT_OK if state.converged else EXIT_NUMERIC


def cmd_gamma(run):
    g = run.config["gamma"]
    state, loads = _membrane(run)
    builder = MeshBuilder(g["n_x"], g["n_y"], g["nz_cap"], state.mesh.domain)
    report = gamma_experiment(run.law, g["eps_list"], builder, loads, state, run.opts, run.config["workers"])
    header = list(report.CSV_COLUMNS)
    run.write_csv("gamma.csv", header,
                  [[r.eps, r.min_total, r.gap_to_membrane, r.lp_distance, r.iterations, r.converged]
                   for r in report.rows])
    run.write_json("gamma.json", {"report": report.to_dict(), "membrane": {
        "total": state.total, "converged": state.converged, "iterations": state.iterations}})
    ok = state.converged and not report.failures and all(r.converged for r in report.rows)
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {"check": cmd_check, "whom": cmd_whom, "table": cmd_table, "membrane": cmd_membrane,
            "gamma": cmd_gamma}


def build_parser():
    parser = argparse.ArgumentParser(prog="filmhom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"filmhom {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--set", action="append", default=[], metavar="K=V",
                       help="override a config entry, dotted path (repeatable)")
        p.add_argument("--workers", type=int)
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, args.set)
        for key in ("workers", "out", "seed"):
            if getattr(args, key) is not None:
                apply_override(config, f"{key}={json.dumps(getattr(args, key))}")
        validate(config)
        run = Run(config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FilmHomError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
