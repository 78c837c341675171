"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 divergence of a simulation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .digraph import (
    build_augmented_laplacian_c1,
    build_augmented_laplacian_c2,
    has_spanning_tree,
    laplacian,
    partition_nodes,
    rank,
)
from .plant import NonFinite
from .refgen import RefDesign, RefError, build_transform, validate_lambda
from .sim import ConfigError, run_scenario, summary_text, write_csv
from .verify import PERTURB_J, run_suites, transform_check

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3
TRANSFORM_REPORT_TOL = 1e-10

log = logging.getLogger("backstep_consensus")


def _resolve(path: str) -> cfgmod.ScenarioConfig:
    p = Path(path)
    if not p.exists() and path in cfgmod.BUNDLED:
        p = cfgmod.bundled_config_path(path)
    return cfgmod.load_config(p)


def cmd_run(args) -> int:
    cfg = _resolve(args.config)
    scenario = cfgmod.build_scenario(cfg, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("running %s: %d agents, t_end=%g, dt=%g", scenario.name, scenario.n, scenario.t_end, scenario.dt)
    try:
        tr = run_scenario(scenario)
    except NonFinite as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    write_csv(tr, out / cfg.output.csv)
    text = summary_text(scenario, tr)
    (out / cfg.output.summary).write_text(text)
    print(text, end="")
    return EXIT_OK


def graph_report(cfg: cfgmod.ScenarioConfig) -> tuple[list[str], bool]:
    """Lines of the check-graph report and whether every rank claim held."""
    g = cfgmod.build_graph(cfg)
    n = g.n
    m = len(cfg.reference.lam)
    v1, v2 = partition_nodes(g)
    spanning = has_spanning_tree(g)
    ok = True
    lines = [
        f"nodes: {n}",
        "in-degrees: " + " ".join(f"d{i + 1}={d:g}" for i, d in enumerate(g.in_degrees())),
        "V1: " + (" ".join(str(i + 1) for i in v1) or "(empty)"),
        "V2: " + (" ".join(str(i + 1) for i in v2) or "(empty)"),
        f"spanning tree: {'yes' if spanning else 'no spanning tree'}",
    ]
    r_l = rank(laplacian(g))
    lines.append(f"rank L: {r_l} (n-1 = {n - 1})")
    if not spanning:
        return lines, ok
    ok &= r_l == n - 1
    roots = cfgmod.reference_roots(cfg)
    delta = np.tile(roots, (n, 1))
    if not v2:
        aug, want, label = build_augmented_laplacian_c1(g, delta, m), n * m - 1, "nm-1"
    else:
        aug, want, label = build_augmented_laplacian_c2(g, v2[0], delta, m), (n - 1) * m, "(n-1)m"
    got = rank(aug)
    ok &= got == want
    case = "C1" if not v2 else f"C2 (root {v2[0] + 1})"
    lines.append(f"case: {case}")
    lines.append(f"rank augmented L: {got} ({label} = {want}) {'ok' if got == want else 'MISMATCH'}")
    return lines, ok


def cmd_check_graph(args) -> int:
    cfg = _resolve(args.config)
    lines, ok = graph_report(cfg)
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_verify(args) -> int:
    names, seed = args.suite, args.seed
    if args.config:
        cfg = _resolve(args.config)
        names = names or cfg.verify.suites
        seed = cfg.verify.seed if seed is None else seed
    try:
        results = run_suites(names, seed=seed or 0, perturb_j=args.perturb_j)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_CONFIG
    for res in results:
        print(res.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def cmd_verify_transform(args) -> int:
    lam = tuple(_resolve(args.config).reference.lam) if args.config else (1.0, 2.0)
    try:
        design = RefDesign(lam, 1.0)
        roots = validate_lambda(lam)
    except RefError as exc:
        raise ConfigError(f"reference.lambda: {exc}") from None
    j, lam_mat = build_transform(design, roots)
    ident, corner, r = transform_check(design, roots, PERTURB_J if args.perturb_j else 0.0)
    with np.printoptions(precision=6, suppress=True):
        print(f"lambda: {list(lam)}")
        print(f"roots (ascending magnitude): {roots}")
        print(f"J =\n{j}")
        print(f"Lambda =\n{lam_mat}")
    print(f"max|JB - Lambda J|: {ident:.3e}")
    print(f"|j_mm + delta_m/lambda_1|: {corner:.3e}")
    print(f"rank J: {r}")
    ok = ident <= TRANSFORM_REPORT_TOL and corner <= TRANSFORM_REPORT_TOL and r == design.m
    print("transform identities: " + ("hold" if ok else "VIOLATED"))
    return EXIT_OK if ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="backstep-consensus",
                                     description="Distributed adaptive backstepping consensus simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write CSV plus summary")
    run.add_argument("--config", required=True, help="TOML file, or a bundled name such as example2")
    run.add_argument("--out-dir", default=".")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.set_defaults(func=cmd_run)

    chk = sub.add_parser("check-graph", help="report graph structure and rank claims")
    chk.add_argument("--config", required=True)
    chk.set_defaults(func=cmd_check_graph)

    ver = sub.add_parser("verify", help="run the randomized invariant suites")
    ver.add_argument("--config", default=None)
    ver.add_argument("--suite", action="append", default=None, help="repeatable; default all")
    ver.add_argument("--seed", type=int, default=None)
    ver.add_argument("--perturb-j", action="store_true", help="inject a fault into J (test hook)")
    ver.set_defaults(func=cmd_verify)

    vt = sub.add_parser("verify-transform", help="print J, Lambda and their identity residuals")
    vt.add_argument("--config", default=None)
    vt.add_argument("--perturb-j", action="store_true")
    vt.set_defaults(func=cmd_verify_transform)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
