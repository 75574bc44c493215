"""Auditor ROC: per-trial post-warm-up AUC and the pooled ROC curve.

    python scripts/auditor_roc.py --attack model-scaling --ratio 0.3 --seeds 20 --rounds 10
"""

import sys

import numpy as np
from _common import base_config, base_parser, write_rows

from securedyn import run_experiment
from securedyn.metrics import roc_curve, auc


def main() -> None:
    p = base_parser(__doc__)
    p.add_argument("--attack", default="model-scaling")
    p.add_argument("--ratio", type=float, default=0.3)
    p.add_argument("--curve", help="also write the pooled ROC curve to this CSV path")
    args = p.parse_args()
    base = base_config(args)
    rows, scores, labels = [], [], []
    for seed in range(args.seeds):
        cfg = base.replace(**{"attack.kind": args.attack, "attack.ratio": args.ratio, "run.seed": seed})
        res = run_experiment(cfg)
        post = [m for m in res.rounds if m.round >= cfg.audit.warmup_rounds]
        for e in res.state.auditor.table.entries:
            if e.round >= cfg.audit.warmup_rounds:
                scores.append(e.score)
                labels.append(bool(e.is_adversary))
        rows.append({"seed": seed, "mean_auc": f"{np.nanmean([m.auditor_auc for m in post]):.4f}",
                     "min_auc": f"{np.nanmin([m.auditor_auc for m in post]):.4f}",
                     "final_acc": f"{res.final.overall_acc:.4f}"})
        print(", ".join(f"{k}={v}" for k, v in rows[-1].items()), file=sys.stderr, flush=True)
    write_rows(rows, args.out, base)
    fpr, tpr = roc_curve(scores, labels)
    print(f"pooled AUC over {len(scores)} client-rounds: {auc(fpr, tpr):.4f}", file=sys.stderr)
    if args.curve:
        with open(args.curve, "w") as fh:
            fh.write("fpr,tpr\n" + "".join(f"{f:.6g},{t:.6g}\n" for f, t in zip(fpr, tpr)))


if __name__ == "__main__":
    main()
