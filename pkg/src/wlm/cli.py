"""``wlm`` command line: distances, oracle cross-checks, GNN audits, conversion.

Every run prints one JSON report to stdout (or CSV rows with ``--csv``) and a
short human summary to stderr. Exit codes: 0 success, 1 invalid input or
flags, 2 a check failed, 3 the instance exceeds a size cap.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import CapExceededError, LabelMetric, ValidationError, parse_graph
from .markov import induce_eps_normalized, induce_q_damped
from .transport import SLACKNESS_TOL, MARGINAL_TOL

EXIT_OK, EXIT_INVALID, EXIT_CHECK, EXIT_CAP = 0, 1, 2, 3
DEFAULT_K = 3
DEFAULT_Q = 0.5
DEFAULT_CAP = 10**5
ORACLE_TOL = 1e-8
VW_TOL = 1e-9
ZERO_TOL = 1e-10
CHAIN_TOL = 1e-12

logger = logging.getLogger("wlm")


class UsageError(ValidationError):
    """Command-line misuse; reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunReport:
    command: str | None
    argv: list
    seed: int | None = None
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    parameters: dict = field(default_factory=dict)
    results: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    payload: dict = field(default_factory=dict)
    status: str = "ok"
    exit_code: int = EXIT_OK
    message: str | None = None
    wall_time_s: float = 0.0

    def result(self, name, value, tolerance, note=None):
        row = {"name": name, "value": None if value is None else float(value), "tolerance": float(tolerance)}
        if note:
            row["note"] = note
        self.results.append(row)

    def check(self, name, passed, value, tolerance, detail=None):
        row = {"name": name, "passed": bool(passed), "value": None if value is None else float(value),
               "tolerance": float(tolerance)}
        if detail:
            row["detail"] = detail
        self.checks.append(row)
        if not passed and self.exit_code == EXIT_OK:
            self.status, self.exit_code = "check_failed", EXIT_CHECK

    def fail(self, status, code, message):
        self.status, self.exit_code, self.message = status, code, message

    def to_dict(self) -> dict:
        doc = {
            "schema_version": "1",
            "tool": "wlm",
            "version": __version__,
            "command": self.command,
            "argv": [str(a) for a in self.argv],
            "inputs": self.inputs,
            "parameters": self.parameters,
            "results": self.results,
            "checks": self.checks,
            "status": self.status,
            "exit_code": self.exit_code,
            "message": self.message,
            "wall_time_s": self.wall_time_s,
            "seed": self.seed,
        }
        if self.outputs:
            doc["outputs"] = self.outputs
        if self.payload:
            doc["payload"] = self.payload
        return doc

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["command", "kind", "name", "value", "tolerance", "passed"])
        for r in self.results:
            writer.writerow([self.command, "result", r["name"], _fmt(r["value"]), r["tolerance"], ""])
        for c in self.checks:
            writer.writerow([self.command, "check", c["name"], _fmt(c["value"]), c["tolerance"], c["passed"]])
        return buf.getvalue()


def _fmt(v):
    return "" if v is None else repr(v)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _read_graph(report: RunReport, role: str, path: str):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        report.inputs.append({"role": role, "path": path, "sha256": None})
        raise ValidationError(f"{role}: cannot read {path}: {exc.strerror}") from None
    report.inputs.append({"role": role, "path": path, "sha256": _sha256(data)})
    try:
        return parse_graph(data)
    except ValidationError as exc:
        raise ValidationError(f"{role} ({path}): {exc}") from None


def _chains(args, g1, g2):
    metric = LabelMetric.parse(args.metric)
    if args.eps is not None:
        return induce_eps_normalized(g1, args.eps, metric), induce_eps_normalized(g2, args.eps, metric)
    return induce_q_damped(g1, args.q, metric), induce_q_damped(g2, args.q, metric)


def _check_k(k):
    if k is not None and k < 0:
        raise ValidationError(f"--k must be >= 0, got {k}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_dist(args, report: RunReport) -> None:
    from .wl_distance import wl_distance

    _check_k(args.k)
    g1 = _read_graph(report, "graph1", args.graph1)
    g2 = _read_graph(report, "graph2", args.graph2)
    X, Y = _chains(args, g1, g2)
    res = wl_distance(X, Y, args.k)
    variant = f"eps={args.eps}" if args.eps is not None else f"q={args.q}"
    report.result("distance", res.distance, SLACKNESS_TOL, note=f"depth {args.k}, {variant}, metric {X.metric.value}")
    if args.coupling:
        report.payload["initial_coupling"] = {
            "rows": list(g1.vertices),
            "cols": list(g2.vertices),
            "probs": res.initial_coupling.probs.tolist(),
            "tolerance": MARGINAL_TOL,
        }
    logger.info("d^(%d) = %.12g", args.k, res.distance)


def cmd_oracle(args, report: RunReport) -> None:
    from .coupling_lab import _path_count, bicausal_lp, label_space_wl, v_full_history, v_w_deviation
    from .wl_distance import wl_distance, wl_distance_hierarchical

    _check_k(args.k)
    g1 = _read_graph(report, "graph1", args.graph1)
    g2 = _read_graph(report, "graph2", args.graph2)
    X, Y = _chains(args, g1, g2)
    need = _path_count(X, Y, args.k)
    if need > args.cap:
        raise CapExceededError(f"instance too large for oracle: {need} LP variables exceed the cap of {args.cap}")
    res = wl_distance(X, Y, args.k)
    values = {
        "wl_distance": res.distance,
        "wl_distance_hierarchical": wl_distance_hierarchical(X, Y, args.k),
        "bicausal_lp": bicausal_lp(X, Y, args.k, cap=args.cap),
    }
    try:
        values["label_space_wl"] = label_space_wl(X, Y, args.k, cap=args.cap)
    except ValidationError as exc:
        report.result("label_space_wl", None, ORACLE_TOL, note=f"skipped: {exc}")
    for name, v in values.items():
        report.result(name, v, ORACLE_TOL)
    vals = list(values.values())
    dev = max(abs(a - b) for a in vals for b in vals)
    report.check("max_pairwise_deviation", dev <= ORACLE_TOL, dev, ORACLE_TOL)
    vw = v_w_deviation(v_full_history(X, Y, args.k, cap=args.cap), res.tables)
    report.check("v_equals_w", vw <= VW_TOL, vw, VW_TOL)
    logger.info("oracle values %s; max deviation %.3g; V-W deviation %.3g", values, dev, vw)


def cmd_lipschitz(args, report: RunReport) -> None:
    from .gnn import MpgnnModel, lipschitz_audit

    g1 = _read_graph(report, "graph1", args.graph1)
    g2 = _read_graph(report, "graph2", args.graph2)
    try:
        data = Path(args.model).read_bytes()
    except OSError as exc:
        raise ValidationError(f"model: cannot read {args.model}: {exc.strerror}") from None
    report.inputs.append({"role": "model", "path": args.model, "sha256": _sha256(data)})
    model = MpgnnModel.from_json(data)
    _check_k(args.k)
    audit = lipschitz_audit(g1, g2, model, args.k, metric=args.metric, allow_estimated=args.allow_estimated)
    note = "conservative (power-iteration layer norms)" if audit.conservative else None
    report.result("lhs", audit.lhs, audit.tolerance)
    report.result("bound_constant", audit.bound_constant, 0.0 if not audit.conservative else 0.01, note=note)
    report.result("distance", audit.distance, SLACKNESS_TOL)
    report.check("lipschitz_bound", audit.satisfied, audit.slack, audit.tolerance,
                 detail="slack = bound_constant * distance - lhs")
    report.payload["audit"] = audit.to_dict()
    logger.info("|h1-h2| = %.6g <= %.6g * %.6g (slack %.3g)", audit.lhs, audit.bound_constant, audit.distance,
                audit.slack)


def cmd_wltest(args, report: RunReport) -> None:
    from .wl_distance import classic_wl_refinement, wl_distance

    _check_k(args.k)
    g1 = _read_graph(report, "graph1", args.graph1)
    g2 = _read_graph(report, "graph2", args.graph2)
    res = classic_wl_refinement(g1, g2, args.k)
    report.result("distinguishable", float(res.distinguishable), 0.0)
    report.result("first_round", None if res.first_round is None else float(res.first_round), 0.0)
    report.payload["partition"] = {
        "colors_1": res.partition.colors_1,
        "colors_2": res.partition.colors_2,
        "tolerance": 0.0,
    }
    if args.cross:
        X, Y = _chains(args, g1, g2)
        dist = wl_distance(X, Y, args.k).distance
        report.result("wl_distance", dist, SLACKNESS_TOL)
        positive = dist > ZERO_TOL
        report.result("agreement", float(positive == res.distinguishable), 0.0,
                      note="informational: edge-weight scaling can separate colors at distance zero")
        # the implication that must hold: equal refinements force distance zero
        report.check("indistinguishable_implies_zero", res.distinguishable or not positive, dist, ZERO_TOL)
    logger.info("distinguishable=%s first_round=%s", res.distinguishable, res.first_round)


def cmd_convert(args, report: RunReport) -> None:
    g = _read_graph(report, "graph", args.graph)
    metric = LabelMetric.parse(args.metric)
    if args.eps is not None:
        chain = induce_eps_normalized(g, args.eps, metric)
    else:
        chain = induce_q_damped(g, args.q, metric)
    text = chain.to_json()
    report.result("states", chain.n, 0.0)
    report.result("stationarity_residual", float(np.abs(chain.mu @ chain.kernel - chain.mu).max()), CHAIN_TOL)
    if args.out:
        Path(args.out).write_text(text + "\n")
        report.outputs.append({"role": "chain", "path": args.out, "sha256": _sha256((text + "\n").encode())})
    else:
        doc = chain.to_dict()
        doc["tolerance"] = CHAIN_TOL
        report.payload["chain"] = doc
    logger.info("converted %d vertices", chain.n)


COMMANDS = {
    "dist": cmd_dist,
    "oracle": cmd_oracle,
    "lipschitz": cmd_lipschitz,
    "wltest": cmd_wltest,
    "convert": cmd_convert,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed recorded in the report")
    common.add_argument("--csv", action="store_true", help="emit CSV rows instead of the JSON report")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")

    def chain_flags(p, *, exclusive_required=False):
        group = p.add_mutually_exclusive_group(required=exclusive_required)
        group.add_argument("--q", type=float, default=None, help=f"lazy self-probability (default {DEFAULT_Q})")
        group.add_argument("--eps", type=float, default=None, help="use the eps-normalized chain")
        p.add_argument("--metric", default="l1", choices=[m.value for m in LabelMetric])

    parser = _Parser(prog="wlm", description="Weisfeiler-Lehman distance toolkit for labeled graphs.")
    parser.add_argument("--version", action="version", version=f"wlm {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("dist", parents=[common], help="WL distance between two graphs")
    p.add_argument("graph1")
    p.add_argument("graph2")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    chain_flags(p)
    p.add_argument("--coupling", action="store_true", help="include the optimal initial coupling")

    p = sub.add_parser("oracle", parents=[common], help="cross-check all distance formulations")
    p.add_argument("graph1")
    p.add_argument("graph2")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    chain_flags(p)
    p.add_argument("--cap", type=int, default=DEFAULT_CAP, help="maximum number of LP variables")

    p = sub.add_parser("lipschitz", parents=[common], help="audit the GNN Lipschitz bound")
    p.add_argument("graph1")
    p.add_argument("graph2")
    p.add_argument("model")
    p.add_argument("--k", type=int, default=None, help="depth (defaults to the model's)")
    p.add_argument("--metric", default="l1", choices=[m.value for m in LabelMetric])
    p.add_argument("--allow-estimated", action="store_true", help="permit L2 power-iteration constants")

    p = sub.add_parser("wltest", parents=[common], help="classic WL color refinement")
    p.add_argument("graph1")
    p.add_argument("graph2")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--cross", action="store_true", help="compare with the WL distance")
    chain_flags(p)

    p = sub.add_parser("convert", parents=[common], help="write the chain induced by a graph")
    p.add_argument("graph")
    chain_flags(p, exclusive_required=True)
    p.add_argument("--out", default=None, help="output path (default: embed in the report)")
    return parser


def _parameters(args) -> dict:
    skip = {"command", "csv", "verbose", "seed", "graph", "graph1", "graph2", "model", "out"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    start = time.perf_counter()
    report = RunReport(command=None, argv=argv)
    as_csv = "--csv" in argv
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("wlm: %(message)s"))
    logger.handlers[:] = [handler]
    logger.propagate = False
    logger.setLevel(logging.DEBUG if ("-v" in argv or "--verbose" in argv) else logging.INFO)
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("wlm: a subcommand is required (dist, oracle, lipschitz, wltest, convert)")
        report.command = args.command
        report.seed = args.seed
        if hasattr(args, "q") and args.q is None and getattr(args, "eps", None) is None:
            args.q = DEFAULT_Q
        report.parameters = _parameters(args)
        COMMANDS[args.command](args, report)
    except CapExceededError as exc:
        report.fail("cap_exceeded", EXIT_CAP, str(exc))
    except ValidationError as exc:
        report.fail("validation_error", EXIT_INVALID, str(exc))
    report.wall_time_s = time.perf_counter() - start
    if report.message:
        logger.error("%s", report.message)
    for c in report.checks:
        if not c["passed"]:
            logger.error("check %s failed: %s (tolerance %s)", c["name"], c["value"], c["tolerance"])
    logger.info("status %s (exit %d) in %.2fs", report.status, report.exit_code, report.wall_time_s)
    sys.stdout.write(report.to_csv() if as_csv else json.dumps(report.to_dict(), indent=2) + "\n")
    return report.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
