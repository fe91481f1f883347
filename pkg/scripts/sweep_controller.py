"""Closed-loop metrics for controller settings across several trained models.

Each positional argument is a JSON object of MpcConfig overrides:

    python3 scripts/sweep_controller.py '{"r": 1000}' '{"r": 300, "bias_gain": 0.05}' --seeds 0 1 2
"""

import argparse
import json
import logging
from dataclasses import replace

import numpy as np

from slmctl.harness import ExperimentConfig, generate_campaign, pool_samples, run_closed_loop, train_from_samples


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("overrides", nargs="+", help="JSON objects of MpcConfig fields")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)
    base = ExperimentConfig()
    models = []
    for seed in args.seeds:
        cfg = base.with_seed(seed)
        models.append(train_from_samples(pool_samples(generate_campaign(cfg), cfg.train), cfg).model)
    for text in args.overrides:
        kw = json.loads(text)
        cfg = replace(base, mpc=replace(base.mpc, **kw))
        rows = []
        for model in models:
            m = run_closed_loop(cfg.test.plan(), model, cfg).metrics
            rows.append((m["overshoot_pct"], m["undershoot_pct"], m["rmse_pct"], sum(s > 0 for s in m["power_slopes_W_s"])))
        a = np.array(rows)
        print(kw, "overshoot", a[:, 0].round(1), "undershoot", a[:, 1].round(1), "rmse", a[:, 2].round(1), "slopes+", a[:, 3].astype(int), flush=True)


if __name__ == "__main__":
    main()
