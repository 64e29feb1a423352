"""Small random search over the hyperparameter ranges used for the shipped configs.

Selection is by best validation loss; test accuracy / MSE is printed for
information only. Example:

    python scripts/tune.py --dataset checkerboard --pe sh --nn siren --trials 12
"""
import argparse
import json
import time

import numpy as np

from geoharm import data
from geoharm.dfs import EmbeddingSpec
from geoharm.net import NetworkSpec
from geoharm.train import TrainConfig, fit, evaluate, default_loss


def sample(rng, pe_kind, nn_kind, fixed):
    pe = {"kind": pe_kind}
    if pe_kind == "sh":
        pe["L"] = int(rng.choice([10, 15, 20, 25, 30]))
    elif pe_kind not in ("direct", "cartesian3d", "wrap"):
        pe.update(S=int(rng.choice([16, 32, 48, 64])), r_min=float(rng.choice(np.arange(1, 91, 9))), r_max=360.0)
    nn = {"kind": nn_kind}
    if nn_kind != "linear":
        nn["hidden"] = int(rng.choice([32, 64, 96, 128]))
    if nn_kind == "siren":
        nn["layers"] = int(rng.choice([1, 2, 3]))
    tr = {
        "learning_rate": float(10 ** rng.uniform(-4, -1)),
        "weight_decay": float(10 ** rng.uniform(-8, -1)),
    }
    for k, v in fixed.items():
        if k in ("L", "S", "r_min", "r_max"):
            pe[k] = v
        elif k in ("hidden", "layers", "dropout", "omega0"):
            nn[k] = v
        elif k in ("learning_rate", "weight_decay", "batch_size", "max_epochs", "patience"):
            tr[k] = v
    return pe, nn, tr


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dataset", default="checkerboard", choices=["checkerboard", "landocean", "synthfield"])
    ap.add_argument("--pe", default="sh")
    ap.add_argument("--nn", default="siren")
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--fix", default="", help="comma list k=v forced on every trial")
    ap.add_argument("--max-epochs", type=int, default=150)
    args = ap.parse_args()

    fixed = {}
    for item in filter(None, args.fix.split(",")):
        k, v = item.split("=")
        fixed[k] = float(v) if "." in v or "e" in v else int(v)
    if args.dataset == "checkerboard":
        bundle = data.build_checkerboard(seed=args.seed)
    elif args.dataset == "landocean":
        bundle = data.build_landocean(data.bundled_land(), seed=args.seed)
    else:
        bundle = data.synth_field_bundle(seed=args.seed)[0]
    metric = "mse" if bundle.task.kind == "regression" else "accuracy"
    rng = np.random.default_rng(args.seed)
    for trial in range(args.trials):
        pe_kw, nn_kw, tr_kw = sample(rng, args.pe, args.nn, fixed)
        pe = EmbeddingSpec(**pe_kw)
        nn = NetworkSpec(nn_kw.pop("kind"), 1, 1, **nn_kw)
        tr_kw.setdefault("max_epochs", args.max_epochs)
        cfg = TrainConfig(loss_kind=default_loss(bundle.task), **tr_kw)
        t0 = time.perf_counter()
        try:
            res = fit(bundle, pe, nn, cfg)
        except ArithmeticError as exc:
            print(json.dumps({"trial": trial, "error": str(exc)}))
            continue
        score = evaluate(res.model, pe, bundle.test, bundle.task, metric)
        print(json.dumps({
            "trial": trial, "pe": str(pe), "nn": nn.short(), "lr": cfg.learning_rate, "wd": cfg.weight_decay,
            "val_loss": round(res.best_val_loss, 5), "best_epoch": res.best_epoch, metric: round(score, 4),
            "seconds": round(time.perf_counter() - t0, 1),
        }), flush=True)


if __name__ == "__main__":
    main()
