"""Command-line entry point: ``securedyn <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import crypto
from .config import ConfigError, ExperimentConfig, parse_config
from .data import class_histograms, partition, train_test_split
from .federation import load_dataset, provenance, run_experiment, stream

log = logging.getLogger("securedyn")


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI config file")
    p.add_argument("--seed", type=int, help="master seed (run.seed)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config key; repeatable")


def _run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rounds", type=int)
    p.add_argument("--attack", help="attack kind, e.g. same-model or flip-both")
    p.add_argument("--attack-ratio", type=float)
    p.add_argument("--no-encrypt", action="store_true", help="plaintext integer aggregation")
    p.add_argument("--no-audit", action="store_true", help="accept every update")
    p.add_argument("--out", type=Path, help="output directory (run.out_dir)")
    p.add_argument("--quiet", action="store_true", help="no per-round progress lines")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="securedyn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one federated experiment")
    _config_args(run)
    _run_args(run)

    kb = sub.add_parser("keygen-bench", help="crypto throughput per key size")
    kb.add_argument("--sizes", default="128,256,512,1024,2048", help="comma-separated prime sizes in bits")
    kb.add_argument("--min-seconds", type=float, default=0.3, help="timing budget per primitive")
    kb.add_argument("--seed", type=int, default=0)
    kb.add_argument("--out", type=Path, help="also write the table as CSV here")

    st = sub.add_parser("crypto-selftest", help="exhaustive checks on the n = 15 instance")
    st.add_argument("--seed", type=int, default=0)

    pp = sub.add_parser("partition-preview", help="print per-client class histograms")
    _config_args(pp)
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r}: expected SECTION.KEY=VALUE")
        out[key.strip()] = value.strip()
    flags = {
        "run.seed": args.seed,
        "run.rounds": getattr(args, "rounds", None),
        "attack.kind": getattr(args, "attack", None),
        "attack.ratio": getattr(args, "attack_ratio", None),
        "run.out_dir": None if getattr(args, "out", None) is None else str(args.out),
    }
    out.update({k: v for k, v in flags.items() if v is not None})
    if getattr(args, "no_encrypt", False):
        out["run.encrypt"] = False
    if getattr(args, "no_audit", False):
        out["run.audit"] = False
    return out


def _load(args) -> ExperimentConfig:
    return parse_config(args.config, _overrides(args))


def cmd_run(args) -> int:
    cfg = _load(args)

    def progress(m):
        if not args.quiet:
            print(f"round {m.round:3d}  acc {m.overall_acc:.4f}  f1 {m.f1:.4f}  asr {m.asr:.4f}  "
                  f"accepted {m.accepted} down {m.downweighted} rejected {m.rejected}  "
                  f"{m.wall_time:.2f}s", flush=True)

    result = run_experiment(cfg, progress=progress)
    out = result.write(cfg.run.out_dir)
    f = result.final
    print(f"final acc {f.overall_acc:.4f}  f1 {f.f1:.4f}  asr {f.asr:.4f}; artifacts in {out}")
    return 0


def cmd_keygen_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    rows = crypto.bench(sizes, args.min_seconds, args.seed)
    header = "bits,plaintext_prime_bits,keygen_s,encrypt_per_s,add_per_s,scalar_per_s,decrypt_per_s"
    lines = [f"{r.elgamal_bits},{r.plaintext_prime_bits},{r.keygen_seconds:.4f},{r.encrypt_per_sec:.1f},"
             f"{r.add_per_sec:.1f},{r.scalar_per_sec:.1f},{r.decrypt_per_sec:.1f}" for r in rows]
    print(header)
    print("\n".join(lines))
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(f"# seed: {args.seed}\n{header}\n" + "\n".join(lines) + "\n")
    rates = [r.encrypt_per_sec for r in rows]
    if any(b >= a for a, b in zip(rates, rates[1:])):
        print("warning: encryption throughput is not strictly decreasing in key size", file=sys.stderr)
    return 0


def cmd_crypto_selftest(args) -> int:
    n = crypto.selftest(args.seed)
    print(f"all {n} checks passed")
    return 0


def cmd_partition_preview(args) -> int:
    cfg = _load(args)
    ds = load_dataset(cfg)
    train, _ = train_test_split(ds, cfg.data.test_fraction, stream(cfg.run.seed, "split"))
    shards = partition(train, cfg.partition)
    hist = class_histograms(shards)
    for line in provenance(cfg):
        print(f"# {line}")
    print("client," + ",".join(ds.class_names) + ",total")
    for i, row in enumerate(hist):
        print(f"{i}," + ",".join(str(int(v)) for v in row) + f",{int(row.sum())}")
    return 0


COMMANDS = {
    "run": cmd_run,
    "keygen-bench": cmd_keygen_bench,
    "crypto-selftest": cmd_crypto_selftest,
    "partition-preview": cmd_partition_preview,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, OSError, ArithmeticError, crypto.CryptoError) as exc:
        print(f"securedyn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
