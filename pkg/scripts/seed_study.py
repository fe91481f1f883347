"""Train one model per seed and report model quality and closed-loop metrics for each.

    python3 scripts/seed_study.py --seeds 0 1 2 3 4 5 --out runs/seeds
"""

import argparse
import json
import logging
from pathlib import Path

from slmctl.harness import ExperimentConfig, generate_campaign, pool_samples, rollout_check, run_closed_loop, run_open_loop, train_from_samples


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4, 5])
    ap.add_argument("--config", help="experiment config JSON (defaults otherwise)")
    ap.add_argument("--out", default="runs/seeds")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    base = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ol = run_open_loop(base).metrics
    print(f"open loop: overshoot {ol['overshoot_pct']:.1f}%  rmse {ol['rmse_pct']:.1f}%")
    rows = []
    for seed in args.seeds:
        cfg = base.with_seed(seed)
        campaign = generate_campaign(cfg)
        res = train_from_samples(pool_samples(campaign, cfg.train), cfg)
        res.model.save(out / f"model_seed{seed}.json")
        cl = run_closed_loop(cfg.test.plan(), res.model, cfg, out / f"closed_loop_seed{seed}.csv")
        m = cl.metrics
        row = {
            "seed": seed,
            "r2": res.metrics["r2"],
            "mae_pct": res.metrics["mae_pct"],
            "rollout_mae_pct": rollout_check(res.model, campaign[2])["mae_pct"],
            "overshoot_pct": m["overshoot_pct"],
            "overshoot_reduction": 1 - m["overshoot_pct"] / ol["overshoot_pct"],
            "undershoot_pct": m["undershoot_pct"],
            "rmse_pct": m["rmse_pct"],
            "positive_slopes": sum(s > 0 for s in m["power_slopes_W_s"]),
            "median_step_ms": cl.timing["median_s"] * 1e3,
        }
        rows.append(row)
        print("  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()), flush=True)
    (out / "seed_study.json").write_text(json.dumps({"open_loop": ol, "runs": rows}, indent=1) + "\n")


if __name__ == "__main__":
    main()
