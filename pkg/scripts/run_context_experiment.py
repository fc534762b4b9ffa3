"""Train GistNet and the fovea baseline on synthetic scenes and run every analysis.

    python3 scripts/run_context_experiment.py --fidelity 0.9 --out runs/context_rho0.9
"""

import argparse
import json
import logging
import time

from gistnet.experiments import context_run_config, run_experiments, train_pair


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fidelity", type=float, default=0.9)
    ap.add_argument("--epochs", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-train", type=int, default=10000)
    ap.add_argument("--n-test", type=int, default=2000)
    ap.add_argument("--cache", default=".acceptance_cache")
    ap.add_argument("--out", default="runs/context")
    ap.add_argument("--skip-analysis", action="store_true", help="only report accuracies")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = context_run_config(args.fidelity, args.seed, args.epochs, args.n_train, args.n_test, args.out)
    t0 = time.time()
    run = train_pair(cfg, args.cache)
    logging.info("training done in %.0f s (cache key %s)", time.time() - t0, run["cache_key"])
    (g, gp, _), (f, fp, _) = run["gistnet"], run["fovea"]
    ev = cfg.eval
    if args.skip_analysis:
        ev.blur_levels, ev.embed_samples, ev.saliency_samples = 1, 0, []
    summary = run_experiments(g, gp, f, fp, run["test"], ev, None if args.skip_analysis else cfg.out,
                              args.seed, cfg.train.margin)
    keep = {k: summary[k] for k in ("gistnet_topk", "fovea_topk", "probe", "tsne", "ratio_curve")
            if k in summary}
    keep["blur_sweep_ends"] = [summary["blur_sweep"]["accuracy"][0], summary["blur_sweep"]["accuracy"][-1]]
    print(json.dumps(keep, indent=1, default=float))


if __name__ == "__main__":
    main()
