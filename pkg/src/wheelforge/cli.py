"""Command-line entry point: ``wheelforge <stage> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import ConfigInvalid, EmptyManifest, MissingPredecessor
from .pipeline import STAGES, run_stage

log = logging.getLogger("wheelforge")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="wheelforge",
        description="Synthesize a wheel design-performance dataset stage by stage.")
    p.add_argument("stage", choices=[*STAGES, "all"], help="stage to run ('all' runs every stage in order)")
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--force", action="store_true", help="redo designs whose outputs already exist")
    p.add_argument("--designs", type=int, help="number of designs (overrides the config)")
    p.add_argument("--seed", type=int, help="master random seed (overrides the config)")
    p.add_argument("--workers", type=int, help="worker processes (overrides the config)")
    p.add_argument("--output", dest="output_root", help="output directory (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, designs=args.designs, seed=args.seed,
                          workers=args.workers, output_root=args.output_root)
        cfg.output_root.mkdir(parents=True, exist_ok=True)
        stages = STAGES if args.stage == "all" else (args.stage,)
        for stage in stages:
            report = run_stage(stage, cfg, force=args.force)
            print(report.summary())
    except (ConfigInvalid, MissingPredecessor, EmptyManifest) as exc:
        print(f"wheelforge: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"wheelforge: system error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
