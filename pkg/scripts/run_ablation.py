"""Greenhouse suite under the full configuration and each evidence-source ablation.

    python3 scripts/run_ablation.py --seed 0
"""

import argparse
import time

from xmpc.evaluation import SuiteConfig, ablation_configs, fit_suite_history, run_suite
from xmpc.scenarios import greenhouse_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--per-scenario", action="store_true", help="print the selected hypothesis per scenario")
    args = ap.parse_args()

    scenarios = greenhouse_suite(args.seed)
    temporal = fit_suite_history(args.seed)
    configs = ablation_configs() + [SuiteConfig(drop_kg=True, drop_pcmci=True, drop_kkt=True)]
    reports = []
    print(f"{'config':24s} {'P@1':>6s} {'MRR':>6s} {'NDCG@3':>7s} {'faith':>6s} {'time':>6s}")
    for cfg in configs:
        t0 = time.perf_counter()
        rep = run_suite(scenarios, cfg, temporal)
        reports.append(rep)
        a = rep.aggregate
        print(f"{rep.config:24s} {a['p_at_1']:6.3f} {a['mrr']:6.3f} {a['ndcg_at_3']:7.3f} "
              f"{a['faithfulness']:6.3f} {time.perf_counter() - t0:5.1f}s")
    base = reports[0].aggregate["p_at_1"]
    print()
    for rep in reports[1:]:
        print(f"P@1 change {rep.config:24s} {rep.aggregate['p_at_1'] - base:+.3f}")
    if args.per_scenario:
        print()
        for i, s in enumerate(scenarios):
            cells = [f"{(r.results[i].selected or '-'):12s}" for r in reports]
            print(f"{s.id:20s} " + " ".join(cells))


if __name__ == "__main__":
    main()
