"""Hard-constrained testbed suites under the full configuration and each ablation.

    python3 scripts/run_testbeds.py
"""

import argparse

from xmpc.evaluation import ablation_configs, run_suite
from xmpc.greenhouse import TESTBEDS
from xmpc.scenarios import testbed_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--horizon", type=int, default=12)
    args = ap.parse_args()
    for kind in TESTBEDS:
        scenarios = testbed_suite(kind, args.seed, args.horizon)
        for cfg in ablation_configs():
            rep = run_suite(scenarios, cfg)
            a = rep.aggregate
            print(f"{kind:14s} {rep.config:12s} P@1 {a['p_at_1']:.3f}  MRR {a['mrr']:.3f}  "
                  f"faithfulness {a['faithfulness']:.3f}")


if __name__ == "__main__":
    main()
