"""Command-line front end.

Exit codes: 0 success (all criteria passed), 1 numerical failure, 2 bad
configuration or usage.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .afem import AfemAborted, run_afem
from .eigensolve import SolverError
from .mesh import dump_mesh
from .studies import ConfigError, column_rates, load_config, read_table, run_study

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory")
    common.add_argument("--budget", type=int, help="override the DoF budget")
    common.add_argument("--quiet", action="store_true", help="only print results")
    p = argparse.ArgumentParser(prog="dpgeig", description="Adaptive DPG eigenvalue studies",
                                parents=[common])
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", parents=[common], help="run the study described by a config file")
    r.add_argument("config")
    r = sub.add_parser("reproduce", parents=[common], help="run an acceptance suite and check its criteria")
    r.add_argument("suite")
    r.add_argument("--scale", type=float, default=1.0, help="multiply all DoF budgets")
    r = sub.add_parser("rates", parents=[common], help="print the slopes of a .dat table")
    r.add_argument("datfile")
    r = sub.add_parser("dump-mesh", parents=[common],
                       help="print the initial mesh of a config (final mesh with --budget)")
    r.add_argument("config")
    return p


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "run":
            cfg = load_config(args.config)
            results = run_study(cfg, out=args.out, budget=args.budget)
            for res in results:
                last = res.records[-1]
                print(f"{res.name}: {len(res.records)} iterations, final DoF {last.dof}, "
                      f"lambda {last.lam_tracked:.15g}")
                for f in res.files:
                    print(f"  wrote {f}")
            return EXIT_OK
        if args.verb == "reproduce":
            from .suites import reproduce
            crit = reproduce(args.suite, out=args.out or "results", scale=args.scale)
            for c in crit:
                print(c.line())
            ok = all(c.passed for c in crit)
            print(f"{args.suite}: {'PASS' if ok else 'FAIL'}")
            return EXIT_OK if ok else EXIT_NUMERIC
        if args.verb == "rates":
            table = read_table(args.datfile)
            for name, slope in column_rates(table).items():
                print(f"{name} {slope:.6f}")
            return EXIT_OK
        if args.verb == "dump-mesh":
            cfg = load_config(args.config)
            if args.budget:
                meshes = []
                run_afem(replace(cfg.afem_config(), budget=args.budget),
                         callback=lambda s: meshes.append(s.mesh))
                mesh = meshes[-1]
            else:
                from .afem import initial_mesh
                mesh = initial_mesh(cfg.afem_config())
            text = dump_mesh(mesh)
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                path = Path(args.out) / f"{cfg.name}.mesh"
                path.write_text(text)
                print(f"wrote {path}")
            else:
                sys.stdout.write(text)
            return EXIT_OK
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, AfemAborted, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
