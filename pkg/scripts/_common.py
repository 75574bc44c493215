"""Shared helpers for the experiment scripts."""

import argparse
import csv
import sys
from pathlib import Path

from securedyn import ExperimentConfig, parse_config


def base_parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", type=Path, help="INI config with base settings")
    p.add_argument("--seeds", type=int, default=3, help="seeds 0..N-1")
    p.add_argument("--rounds", type=int, default=30)
    p.add_argument("--encrypt", action="store_true", help="use the encrypted path (slow)")
    p.add_argument("--out", type=Path, help="CSV output path (default: stdout)")
    return p


def base_config(args) -> ExperimentConfig:
    return parse_config(args.config, {"run.rounds": args.rounds, "run.encrypt": args.encrypt})


def write_rows(rows: list[dict], out: Path | None, cfg: ExperimentConfig) -> None:
    fh = sys.stdout if out is None else out.open("w", newline="")
    fh.write(f"# config: {cfg.to_json()}\n")
    w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if out is not None:
        fh.close()
