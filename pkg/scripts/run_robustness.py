"""P@1 under knowledge-graph edge removal and multiplier-threshold scaling.

    python3 scripts/run_robustness.py --fraction 0.2 --graph-seeds 5
"""

import argparse

import numpy as np

from xmpc.evaluation import SuiteConfig, fit_suite_history, run_suite
from xmpc.scenarios import greenhouse_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--fraction", type=float, default=0.2)
    ap.add_argument("--op", choices=("remove", "flip"), default="remove")
    ap.add_argument("--graph-seeds", type=int, default=5)
    ap.add_argument("--scales", type=float, nargs="*", default=[0.5, 1.5])
    args = ap.parse_args()

    scenarios = greenhouse_suite(args.seed)
    temporal = fit_suite_history(args.seed)
    base = run_suite(scenarios, SuiteConfig(), temporal).aggregate["p_at_1"]
    print(f"unperturbed P@1 {base:.3f}")

    drops = []
    for k in range(args.graph_seeds):
        cfg = SuiteConfig(kg_op=args.op, kg_fraction=args.fraction, kg_seed=k)
        rep = run_suite(scenarios, cfg, temporal)
        drops.append(base - rep.aggregate["p_at_1"])
        missed = [r.id for r in rep.results if not r.success]
        print(f"{rep.config:32s} P@1 {rep.aggregate['p_at_1']:.3f}  drop {drops[-1]:+.3f}  missed {missed}")
    print(f"graph {args.op} {args.fraction:g}: mean drop {np.mean(drops):.3f}, worst {max(drops):.3f}")

    for scale in args.scales:
        rep = run_suite(scenarios, SuiteConfig(threshold_scale=scale), temporal)
        print(f"{rep.config:32s} P@1 {rep.aggregate['p_at_1']:.3f}  drop {base - rep.aggregate['p_at_1']:+.3f}")


if __name__ == "__main__":
    main()
