"""Command-line front end.

Subcommands: ``embed`` (chordal embedding and clique tree of a pattern),
``solve`` (decompose and solve an SDPA sparse problem), ``generate``
(block-arrow or sensor-network instances) and ``report`` (figures from a
convergence log).

Exit codes: 0 success / Converged, 2 MaxIter, 1 error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .conversion import SEPARATOR, SINGLE, UnsupportedRow, convert, extend_pattern
from .io import (ParseError, read_pattern, read_sdpa, write_edm, write_sdpa, write_solution,
                 write_tree)
from .plotting import plot_convergence, plot_pattern
from .problems import BlockArrowSpec, build_edm_problem, gen_block_arrow, gen_sensor_network
from .proxqp import IPMConfig
from .sparsity import SparsityPattern, chordal_embed, clique_tree, merge_cliques
from .spingarn import (ProxFailure, SolveStatus, SpingarnConfig, read_log, solve_converted,
                       write_log)

log = logging.getLogger("chordsplit")

EXIT_OK, EXIT_ERROR, EXIT_MAXITER = 0, 1, 2


def embed_tree(pattern: SparsityPattern, heuristic: str = "mindegree", t_fill: int = 5,
               t_size: int = 5, merge: bool = True):
    """Chordal embedding, clique tree and (optionally) greedy merging."""
    filled, peo = chordal_embed(pattern, heuristic)
    tree = clique_tree(filled, peo)
    if merge:
        tree = merge_cliques(tree, t_fill, t_size)
    return tree


def tree_stats(base: SparsityPattern, tree) -> dict:
    sizes = [len(b) for b in tree.cliques]
    embedded = tree.pattern()
    return {
        "order": base.order,
        "cliques": len(sizes),
        "max_clique": max(sizes),
        "avg_clique": float(np.mean(sizes)),
        "fill": embedded.nnz - base.nnz,
        "nnz": embedded.nnz,
    }


def _load_pattern(path: str) -> SparsityPattern:
    if path.endswith(".dat-s"):
        return read_sdpa(path).pattern()
    return read_pattern(path)


def cmd_embed(args) -> int:
    base = _load_pattern(args.pattern)
    tree = embed_tree(base, args.ordering, args.t_fill, args.t_size, not args.no_merge)
    stats = tree_stats(base, tree)
    if args.out:
        write_tree(args.out, tree, stats)
    if args.spy:
        plot_pattern(tree.pattern(), args.spy, base=base)
    print(json.dumps(stats))
    return EXIT_OK


def _config(args) -> SpingarnConfig:
    ipm = IPMConfig(gap_tol=args.ipm_tol, feas_tol=args.ipm_tol)
    return SpingarnConfig(sigma0=args.sigma0, adaptive=args.adaptive, mu=args.mu, rho=args.rho,
                          eps_p=args.eps, eps_d=args.eps, max_iter=args.max_iter,
                          rescale=args.rescale, threads=args.threads, ipm=ipm)


def cmd_solve(args) -> int:
    t0 = time.perf_counter()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _config(args)
    lp = read_sdpa(args.problem).to_lp()
    if args.embed == "none":
        tree = clique_tree(lp.pattern)
    else:
        tree = embed_tree(lp.pattern, args.embed, args.t_fill, args.t_size, not args.no_merge)
        lp = extend_pattern(lp, tree.pattern())
    cp = convert(lp, tree, args.strategy)
    t1 = time.perf_counter()
    sol = solve_converted(cp, cfg)
    t2 = time.perf_counter()

    paths = {"solution": out / "solution.txt", "log": out / "log.csv",
             "summary": out / "summary.json", "tree": out / "tree.json",
             "manifest": out / "manifest.json"}
    write_solution(paths["solution"], lp.pattern, sol.x)
    write_log(paths["log"], sol.log)
    write_tree(paths["tree"], tree)
    summary = {"status": sol.status.value, "objective": sol.objective,
               "iterations": sol.iterations, "sigma": sol.sigma,
               "rel_rp": sol.log[-1].rel_rp if sol.log else None,
               "rel_rd": sol.log[-1].rel_rd if sol.log else None,
               "tail": [float(v) for v in sol.tail]}
    paths["summary"].write_text(json.dumps(summary, indent=2) + "\n")
    if args.plot:
        paths["figure"] = out / "convergence.png"
        plot_convergence(sol.log, paths["figure"], title=Path(args.problem).name, eps=args.eps)
    _manifest(paths["manifest"], args, {k: str(v) for k, v in paths.items()},
              {"setup_s": t1 - t0, "solve_s": t2 - t1},
              sol.status.value, cfg=cfg)
    print(f"{sol.status.value} iterations={sol.iterations} objective={sol.objective!r}")
    return EXIT_OK if sol.status is SolveStatus.CONVERGED else EXIT_MAXITER


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    outputs = {"problem": str(out)}
    if args.kind == "block-arrow":
        spec = BlockArrowSpec(args.l, args.d, args.w, args.s, args.seed)
        lp, _ = gen_block_arrow(spec, optimal=args.optimal, rank=args.rank)
        write_sdpa(out, lp, comment=f"block-arrow l={spec.l} d={spec.d} w={spec.w} s={spec.s} "
                                    f"seed={spec.seed}")
    else:
        inst = gen_sensor_network(args.nodes, dim=args.dim, knn=args.knn, seed=args.seed,
                                  noise=args.noise, t_fill=args.t_fill, t_size=args.t_size)
        write_sdpa(out, build_edm_problem(inst),
                   comment=f"edm nodes={args.nodes} dim={args.dim} knn={args.knn} seed={args.seed}")
        js = out.with_suffix(".json")
        write_edm(js, inst)
        outputs["instance"] = str(js)
    _manifest(out.with_name(out.stem + ".manifest.json"), args, outputs,
              {"generate_s": time.perf_counter() - t0}, "ok", deterministic=True)
    print(out)
    return EXIT_OK


def cmd_report(args) -> int:
    records = read_log(args.log)
    if not records:
        raise ValueError(f"{args.log}: empty log")
    plot_convergence(records, args.out, title=args.title, eps=args.eps)
    if args.pattern:
        base = _load_pattern(args.pattern)
        spy = Path(args.out).with_name(Path(args.out).stem + "_pattern.png")
        plot_pattern(base, spy)
    last = records[-1]
    print(f"iterations={last.iter} rel_rp={last.rel_rp!r} rel_rd={last.rel_rd!r} "
          f"objective={last.objective!r}")
    return EXIT_OK


def _manifest(path, args, outputs, timings, status, cfg=None, deterministic=False) -> None:
    conf = {k: v for k, v in vars(args).items() if k not in ("func", "argv")}
    doc = {"command": args.command, "version": __version__, "argv": args.argv,
           "config": conf, "seed": getattr(args, "seed", None), "outputs": outputs,
           "status": status}
    if cfg is not None:
        doc["ipm"] = {"gap_tol": cfg.ipm.gap_tol, "feas_tol": cfg.ipm.feas_tol,
                      "max_iter": cfg.ipm.max_iter}
    # timings would break byte-identical generator output
    if not deterministic:
        doc["timings"] = timings
    Path(path).write_text(json.dumps(doc, indent=2, default=str) + "\n")


def _embed_flags(p):
    p.add_argument("--t-fill", type=int, default=5, help="merge threshold on fill (default 5)")
    p.add_argument("--t-size", type=int, default=5, help="merge threshold on residual size (default 5)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chordsplit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="chordal embedding and clique tree of a pattern")
    p.add_argument("pattern", help="coordinate pattern file or SDPA sparse file (.dat-s)")
    p.add_argument("--out", help="clique-tree JSON output")
    p.add_argument("--spy", help="spy plot PNG of the embedding (fill in red)")
    p.add_argument("--ordering", choices=["mindegree", "mcs", "natural"], default="mindegree")
    p.add_argument("--no-merge", action="store_true", help="skip clique merging")
    _embed_flags(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("solve", help="solve an SDPA sparse problem by decomposition")
    p.add_argument("problem")
    p.add_argument("--out-dir", default=".", help="directory for solution, log and manifest")
    p.add_argument("--embed", choices=["mindegree", "mcs", "natural", "none"], default="mindegree",
                   help="chordal embedding ordering; 'none' requires a chordal pattern")
    p.add_argument("--no-merge", action="store_true")
    _embed_flags(p)
    p.add_argument("--sigma0", type=float, default=1.0)
    p.add_argument("--adaptive", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--rescale", action=argparse.BooleanOptionalAction, default=False,
                   help="rescale z when sigma changes")
    p.add_argument("--mu", type=float, default=2.0)
    p.add_argument("--rho", type=float, default=1.75)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--strategy", choices=[SINGLE, SEPARATOR], default=SINGLE)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--ipm-tol", type=float, default=1e-8, help="prox interior-point tolerance")
    p.add_argument("--plot", action="store_true", help="write convergence.png")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("generate", help="generate a test instance")
    p.add_argument("kind", choices=["block-arrow", "edm"])
    p.add_argument("--out", required=True, help="SDPA sparse output path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--l", type=int, default=4, help="block-arrow: number of cliques")
    p.add_argument("--d", type=int, default=3, help="block-arrow: diagonal block size")
    p.add_argument("--w", type=int, default=2, help="block-arrow: arrow width")
    p.add_argument("--s", type=int, default=2, help="block-arrow: constraints per clique")
    p.add_argument("--optimal", action="store_true", help="block-arrow: plant an optimal pair")
    p.add_argument("--rank", type=int, default=1, help="block-arrow: rank of the planted optimum")
    p.add_argument("--nodes", type=int, default=30, help="edm: number of nodes incl. reference")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--knn", type=int, default=5)
    p.add_argument("--noise", type=float, default=0.0)
    _embed_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("report", help="plot a convergence log")
    p.add_argument("log", help="CSV log written by 'solve'")
    p.add_argument("--out", required=True, help="PNG output")
    p.add_argument("--title")
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--pattern", help="also write a spy plot of this pattern file")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ParseError, UnsupportedRow, ProxFailure, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
