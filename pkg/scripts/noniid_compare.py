"""Clean-run accuracy per partition scenario, with and without auditing.

    python scripts/noniid_compare.py --seeds 3 --eta 0.1
"""

import sys

from _common import base_config, base_parser, write_rows

from securedyn import run_experiment
from securedyn.data import SCENARIOS


def main() -> None:
    p = base_parser(__doc__)
    p.add_argument("--eta", type=float, default=0.1)
    args = p.parse_args()
    base = base_config(args)
    rows = []
    for scenario in SCENARIOS:
        for audit in (False, True):
            for seed in range(args.seeds):
                cfg = base.replace(**{"partition.scenario": scenario, "partition.eta": args.eta,
                                      "run.audit": audit, "run.seed": seed})
                res = run_experiment(cfg)
                rows.append({"scenario": scenario, "audit": int(audit), "seed": seed,
                             "final_acc": f"{res.final.overall_acc:.4f}",
                             "rejected_total": sum(m.rejected for m in res.rounds)})
                print(", ".join(f"{k}={v}" for k, v in rows[-1].items()), file=sys.stderr, flush=True)
    write_rows(rows, args.out, base)


if __name__ == "__main__":
    main()
