"""Final accuracy and ASR for every attack, with and without auditing.

    python scripts/attack_table.py --ratio 0.5 --seeds 3 --out attack_table.csv
"""

import sys

from _common import base_config, base_parser, write_rows

from securedyn import run_experiment
from securedyn.attacks import KINDS, NONE


def main() -> None:
    p = base_parser(__doc__)
    p.add_argument("--ratio", type=float, default=0.5)
    p.add_argument("--kinds", default=",".join(k for k in KINDS if k != NONE))
    args = p.parse_args()
    base = base_config(args)
    rows = []
    for kind in args.kinds.split(","):
        for audit in (False, True):
            for seed in range(args.seeds):
                cfg = base.replace(**{"attack.kind": kind, "attack.ratio": args.ratio, "run.audit": audit,
                                      "run.seed": seed, "run.clean_baseline": True})
                f = run_experiment(cfg).final
                rows.append({"attack": kind, "audit": int(audit), "seed": seed,
                             "overall_acc": f"{f.overall_acc:.4f}", "attack_class_acc": f"{f.attack_class_acc:.4f}",
                             "benign_class_acc": f"{f.benign_class_acc:.4f}", "f1": f"{f.f1:.4f}",
                             "asr": f"{f.asr:.4f}"})
                print(", ".join(f"{k}={v}" for k, v in rows[-1].items()), file=sys.stderr, flush=True)
    write_rows(rows, args.out, base)


if __name__ == "__main__":
    main()
