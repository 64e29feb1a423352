"""Command-line runner: datasets, fitting, prediction maps, band reports, sweeps, benchmarks.

Angles are degrees at this boundary and radians inside the library. Every
command writes into ``--out`` and finishes with a ``manifest.json`` listing
the artifacts and a hash of the effective configuration.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import data, dfs, geom, net, sphharm, train
from .dfs import EmbeddingSpec
from .net import NetworkSpec
from .train import TrainConfig

log = logging.getLogger("geoharm")

DATASETS = ("checkerboard", "landocean", "synthfield", "grid")
CONFIG_EXTRA_KEYS = ("pe", "nn", "dataset")
META_SUFFIX = ".meta.json"
PALETTE16 = np.array([
    [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48], [145, 30, 180],
    [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 212], [0, 128, 128], [220, 190, 255],
    [170, 110, 40], [255, 250, 200], [128, 0, 0], [170, 255, 195],
], dtype=np.uint8)


class CliError(Exception):
    """User-facing failure; the message is printed and the exit code is nonzero."""


# ---------------------------------------------------------------- helpers

def thread_count():
    raw = os.environ.get("GEOHARM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"GEOHARM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise CliError(f"GEOHARM_THREADS must be a positive integer, got {raw!r}")
    return n


def predict_parallel(model, pe, points, chunk=8192):
    """Eval-mode predictions, fanned out over GEOHARM_THREADS workers."""
    starts = range(0, len(points), chunk)
    work = lambda s: net.forward(model, dfs.embed(pe, points[s:s + chunk]))  # noqa: E731
    threads = thread_count()
    if threads == 1 or len(starts) == 1:
        parts = [work(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    return np.concatenate(parts, axis=0)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, artifacts):
    entries = []
    for p in artifacts:
        p = Path(p)
        entries.append({"path": os.path.relpath(p, out_dir), "bytes": p.stat().st_size, "sha256": sha256_file(p)})
    doc = {"command": command, "config": config, "config_hash": config_hash(config), "artifacts": entries}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([row[k] for k in header])


def read_csv(path):
    """Rows of an emitted CSV as dicts; numeric fields become floats."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for k, v in row.items():
                try:
                    parsed[k] = float(v)
                except ValueError:
                    parsed[k] = v
            out.append(parsed)
    return out


def write_pgm(path, img: np.ndarray):
    img = np.asarray(img, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(img.tobytes())


def write_ppm(path, img: np.ndarray):
    img = np.asarray(img, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(img.tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) with maxval 255, as written above."""
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    pos += 1
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise ValueError(f"{path}: unsupported image header")
    shape = (h, w) if magic == b"P5" else (h, w, 3)
    return np.frombuffer(raw, dtype=np.uint8, offset=pos).reshape(shape)


def class_palette(k):
    if k <= len(PALETTE16):
        return PALETTE16[:k]
    import colorsys

    return np.array([[int(255 * c) for c in colorsys.hsv_to_rgb(i / k, 0.8, 0.9)] for i in range(k)], dtype=np.uint8)


# ---------------------------------------------------------------- datasets

def dataset_descriptor(args) -> dict:
    name = args.dataset
    if name == "checkerboard":
        return {"name": name, "num_centers": args.num_centers, "num_classes": args.num_classes, "seed": args.data_seed}
    if name == "landocean":
        polys = str(Path(args.polygons).resolve()) if args.polygons else None
        return {"name": name, "polygons": polys, "seed": args.data_seed}
    if name == "synthfield":
        return {"name": name, "channels": args.channels, "L_truth": args.l_truth, "seed": args.data_seed}
    if name == "grid":
        if not args.grid:
            raise CliError("--dataset grid needs --grid FILE")
        return {"name": name, "path": str(Path(args.grid).resolve()), "train_frac": args.train_frac,
                "val_frac": args.val_frac, "seed": args.data_seed}
    raise CliError(f"unknown dataset {name!r}; expected one of {', '.join(DATASETS)}")


def build_dataset(desc: dict):
    """Bundle plus regression channel names (None for classification)."""
    name = desc["name"]
    if name == "checkerboard":
        return data.build_checkerboard(desc["num_centers"], desc["num_classes"], seed=desc["seed"]), None
    if name == "landocean":
        polys = data.load_polygons(desc["polygons"]) if desc.get("polygons") else data.bundled_land()
        return data.build_landocean(polys, seed=desc["seed"]), None
    if name == "synthfield":
        bundle, _ = data.synth_field_bundle(C=desc["channels"], L_truth=desc["L_truth"], seed=desc["seed"])
        return bundle, [f"c{i}" for i in range(desc["channels"])]
    if name == "grid":
        field = data.load_grid_field(desc["path"])
        bundle = data.grid_to_bundle(field, desc["train_frac"], desc["val_frac"], seed=desc["seed"])
        return bundle, list(field.channel_names)
    raise CliError(f"unknown dataset {name!r}")


def add_dataset_args(p, required=False):
    p.add_argument("--dataset", choices=DATASETS, required=required)
    p.add_argument("--num-centers", type=int, default=100)
    p.add_argument("--num-classes", type=int, default=16)
    p.add_argument("--polygons", help="land polygon JSON (default: bundled 1:110m land)")
    p.add_argument("--channels", type=int, default=8, help="synthfield channels")
    p.add_argument("--l-truth", type=int, default=5, help="synthfield harmonic degree bound")
    p.add_argument("--grid", help="GRDF1 file for --dataset grid")
    p.add_argument("--train-frac", type=float, default=0.01)
    p.add_argument("--val-frac", type=float, default=0.05)
    p.add_argument("--data-seed", type=int, default=0)


# ---------------------------------------------------------------- configs

def load_run_config(path):
    """TrainConfig keys plus optional pe / nn / dataset from a key=value file."""
    kv = train.read_kv_file(path) if path else {}
    extra = {k: kv.pop(k) for k in CONFIG_EXTRA_KEYS if k in kv}
    return kv, extra


def make_train_config(kv: dict, task, seed=None) -> TrainConfig:
    kv = dict(kv)
    kv.setdefault("loss_kind", train.default_loss(task))
    if seed is not None:
        kv["seed"] = seed
    return TrainConfig.from_dict(kv)


def checkpoint_meta_path(ckpt):
    return Path(str(ckpt) + META_SUFFIX)


def load_checkpoint_with_meta(path):
    path = Path(path)
    if not path.exists():
        raise CliError(f"checkpoint {path} not found")
    meta_path = checkpoint_meta_path(path)
    if not meta_path.exists():
        raise CliError(f"checkpoint metadata {meta_path} not found")
    model = net.load_checkpoint(path)
    meta = json.loads(meta_path.read_text())
    return model, meta


# ---------------------------------------------------------------- commands

def cmd_dataset(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    desc = dataset_descriptor(args)
    bundle, names = build_dataset(desc)
    bundle.to_csv_dir(out, channel_names=names)
    arts = [out / f"{k}.csv" for k in ("train", "val", "test")]
    write_manifest(out, "dataset", {"dataset": desc}, arts)
    print(f"wrote {', '.join(str(a) for a in arts)}")


def cmd_fit(args):
    kv, extra = load_run_config(args.config)
    if args.dataset is None:
        args.dataset = extra.get("dataset", "checkerboard")
    pe_text = args.pe or extra.get("pe")
    nn_text = args.nn or extra.get("nn")
    if not pe_text or not nn_text:
        raise CliError("need --pe and --nn (or pe / nn keys in --config)")
    if args.repeats < 1:
        raise CliError("--repeats must be positive")
    desc = dataset_descriptor(args)
    bundle, names = build_dataset(desc)
    task = bundle.task
    pe = EmbeddingSpec.parse(pe_text)
    nn = NetworkSpec.parse(nn_text, dfs.embed_dim(pe), task.num_outputs)
    base_seed = args.seed if args.seed is not None else int(kv.get("seed", 0))
    base_cfg = make_train_config(kv, task, base_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    emb = {k: dfs.embed(pe, s.points) for k, s in bundle.splits().items()}
    metric = "test_mse" if task.kind == "regression" else "test_accuracy"
    runs, arts = [], []
    for r in range(args.repeats):
        cfg = replace(base_cfg, seed=base_seed + r)
        t0 = time.perf_counter()
        res = train.fit(bundle, pe, nn, cfg, embeddings=emb)
        seconds = time.perf_counter() - t0
        outputs = net.forward(res.model, emb["test"])
        score = train.evaluate(res.model, pe, bundle.test, task, "mse" if task.kind == "regression" else "accuracy",
                               outputs=outputs)
        ckpt = out / f"model_seed{cfg.seed}.geoh"
        net.save_checkpoint(res.model, ckpt)
        meta = {
            "format": "geoharm-checkpoint-meta", "version": 1, "pe": str(pe), "nn": res.model.spec.short(),
            "task": {"kind": task.kind, "size": task.size}, "dataset": desc, "train_config": asdict(cfg),
            "channel_names": names,
        }
        if task.kind == "regression":
            meta["target_mean"] = np.asarray(bundle.meta["mean"]).tolist()
            meta["target_std"] = np.asarray(bundle.meta["std"]).tolist()
        checkpoint_meta_path(ckpt).write_text(json.dumps(meta, indent=2) + "\n")
        hist = out / f"history_seed{cfg.seed}.csv"
        res.write_history(hist)
        arts += [ckpt, checkpoint_meta_path(ckpt), hist]
        runs.append({"seed": cfg.seed, metric: score, "best_epoch": res.best_epoch, "epochs": len(res.history),
                     "best_val_loss": res.best_val_loss, "stopped_early": res.stopped_early,
                     "seconds": round(seconds, 3), "checkpoint": ckpt.name})
        log.info("seed %d: %s %.4f (best epoch %d, %.1fs)", cfg.seed, metric, score, res.best_epoch, seconds)
        print(f"seed {cfg.seed}: {metric} = {score:.4f} (best epoch {res.best_epoch}, {seconds:.1f}s)", flush=True)

    values = np.array([r[metric] for r in runs])
    std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    metrics = {"metric": metric, metric: float(values.mean()), "mean": float(values.mean()), "std": std,
               "values": values.tolist(), "repeats": args.repeats, "pe": str(pe), "nn": nn.short(),
               "dataset": desc, "runs": runs}
    mpath = out / "metrics.json"
    mpath.write_text(json.dumps(metrics, indent=2) + "\n")
    arts.append(mpath)
    config = {"dataset": desc, "pe": str(pe), "nn": nn.short(), "train": asdict(base_cfg), "repeats": args.repeats}
    write_manifest(out, "fit", config, arts)
    print(f"{metric}: {metrics['mean']:.4f} +- {std:.4f} over {args.repeats} run(s)")


def cmd_predict_grid(args):
    model, meta = load_checkpoint_with_meta(args.checkpoint)
    if args.resolution <= 0 or (360.0 / args.resolution) % 1 > 1e-9 or (180.0 / args.resolution) % 1 > 1e-9:
        raise CliError("--resolution must divide 180 degrees evenly")
    pe = EmbeddingSpec.parse(meta["pe"])
    task = data.Task(meta["task"]["kind"], meta["task"]["size"])
    grid = data.GridField.regular(args.resolution)
    _, rows, cols = grid.shape
    outputs = predict_parallel(model, pe, grid.cell_points())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    arts = []
    if task.kind == "multiclass":
        labels = np.argmax(outputs, axis=1).reshape(rows, cols)
        values, names = labels[None].astype(float), ("class",)
        north_up = labels[::-1]
        gray = np.round(north_up * (255.0 / max(task.size - 1, 1))).astype(np.uint8)
        write_ppm(out / "prediction.ppm", class_palette(task.size)[north_up])
        arts.append(out / "prediction.ppm")
    elif task.kind == "binary":
        prob = 1.0 / (1.0 + np.exp(-outputs.reshape(rows, cols)))
        values, names = prob[None], ("probability",)
        gray = np.round(prob[::-1] * 255.0).astype(np.uint8)
    else:
        chans = outputs.T.reshape(-1, rows, cols)
        if meta.get("target_mean") is not None and not args.standardized:
            chans = chans * np.asarray(meta["target_std"])[:, None, None] + np.asarray(meta["target_mean"])[:, None, None]
        values = chans
        names = tuple(meta.get("channel_names") or [f"c{i}" for i in range(len(chans))])
        first = chans[0][::-1]
        span = first.max() - first.min()
        gray = np.round((first - first.min()) / (span if span > 0 else 1.0) * 255.0).astype(np.uint8)
    field = data.GridField(grid.lon0, grid.dlon, grid.lat0, grid.dlat, values, names)
    data.save_grid_field(field, out / "prediction.grdf")
    write_pgm(out / "prediction.pgm", gray)
    arts = [out / "prediction.grdf", out / "prediction.pgm"] + arts
    write_manifest(out, "predict-grid", {"checkpoint": str(Path(args.checkpoint).resolve()),
                                         "resolution_deg": args.resolution, "meta": meta}, arts)
    print(f"wrote {cols}x{rows} grid to {out}")


def cmd_latitudinal(args):
    model, meta = load_checkpoint_with_meta(args.checkpoint)
    task = data.Task(meta["task"]["kind"], meta["task"]["size"])
    if not task.is_classification:
        raise CliError("latitudinal accuracy needs a classification checkpoint, got a regression model")
    bundle, _ = build_dataset(meta["dataset"])
    pe = EmbeddingSpec.parse(meta["pe"])
    outputs = predict_parallel(model, pe, bundle.test.points)
    rows = train.evaluate(model, pe, bundle.test, task, "banded_accuracy", band_deg=args.band_deg, outputs=outputs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, ["band_south_deg", "band_north_deg", "accuracy", "n_points"], rows)
    write_manifest(out.parent, "latitudinal", {"checkpoint": str(Path(args.checkpoint).resolve()),
                                               "band_deg": args.band_deg}, [out])
    for r in rows:
        print(f"[{r['band_south_deg']:+5.0f}, {r['band_north_deg']:+5.0f}]  {r['accuracy']:.4f}  n={r['n_points']}")


def parse_number_list(text, conv):
    try:
        return [conv(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"bad number list {text!r}") from None


def cmd_sweep_resolution(args):
    if bool(args.centers) == bool(args.spacing):
        raise CliError("give exactly one of --centers or --spacing")
    counts = (parse_number_list(args.centers, int) if args.centers
              else [data.centers_for_spacing(s) for s in parse_number_list(args.spacing, float)])
    runs = []
    for path in args.run:
        kv, extra = load_run_config(path)
        if "pe" not in extra or "nn" not in extra:
            raise CliError(f"{path}: sweep configs need pe and nn keys")
        runs.append((Path(path).name, kv, EmbeddingSpec.parse(extra["pe"]), extra["nn"]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = ["config", "pe", "nn", "num_centers", "mean_dist_deg", "test_accuracy", "best_epoch", "seed", "seconds"]
    rows = []
    for n_centers in counts:
        bundle = data.build_checkerboard(num_centers=n_centers, num_classes=args.num_classes,
                                         n_train=args.n_train, n_val=args.n_val, seed=args.data_seed)
        spacing = data.mean_center_spacing(n_centers)
        for name, kv, pe, nn_text in runs:
            nn = NetworkSpec.parse(nn_text, dfs.embed_dim(pe), bundle.task.num_outputs)
            seed = args.seed if args.seed is not None else int(kv.get("seed", 0))
            cfg = make_train_config(kv, bundle.task, seed)
            t0 = time.perf_counter()
            res = train.fit(bundle, pe, nn, cfg)
            acc = train.evaluate(res.model, pe, bundle.test, bundle.task, "accuracy")
            row = {"config": name, "pe": str(pe), "nn": nn.short(), "num_centers": n_centers,
                   "mean_dist_deg": round(spacing, 6), "test_accuracy": acc, "best_epoch": res.best_epoch,
                   "seed": seed, "seconds": round(time.perf_counter() - t0, 3)}
            rows.append(row)
            print(f"{name}: {n_centers} centers ({spacing:.2f} deg) -> accuracy {acc:.4f}", flush=True)
            write_csv(out, header, rows)  # keep partial results if a later run fails
    write_manifest(out.parent, "sweep-resolution", {"runs": [str(Path(p).resolve()) for p in args.run],
                                                    "num_centers": counts, "n_train": args.n_train,
                                                    "seed": args.seed, "data_seed": args.data_seed}, [out])


BENCH_KINDS = ("sh", "sh-closed") + tuple(k for k in dfs.KINDS if k != "sh")


def bench_once(kind, param, points, r_min, r_max):
    if kind == "sh":
        basis = sphharm.compile_basis(param)  # precompiled tables are built once, outside the timer
        t0 = time.perf_counter()
        sphharm.sh_embed(basis, points)
    elif kind == "sh-closed":
        t0 = time.perf_counter()
        sphharm.sh_embed_closed_form(param, points)
    else:
        spec = EmbeddingSpec(kind, S=param, r_min=r_min, r_max=r_max)
        t0 = time.perf_counter()
        dfs.embed(spec, points)
    return time.perf_counter() - t0


def cmd_bench_pe(args):
    kinds = [k.strip().lower() for k in args.kinds.split(",") if k.strip()]
    for k in kinds:
        if k not in BENCH_KINDS:
            raise CliError(f"unknown benchmark kind {k!r}; expected one of {', '.join(BENCH_KINDS)}")
    params = parse_number_list(args.params, int)
    if args.repeats < 1 or args.n_points < 1:
        raise CliError("--repeats and --n-points must be positive")
    points = geom.fibonacci_points(args.n_points)
    rows = []
    for kind in kinds:
        for p in params:
            times = [bench_once(kind, p, points, args.r_min, args.r_max) for _ in range(args.repeats)]
            rows.append({"kind": kind, "param": p, "median_seconds": float(np.median(times))})
            print(f"{kind:12s} {p:4d}  {rows[-1]['median_seconds']:.4f} s", flush=True)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, ["kind", "param", "median_seconds"], rows)
    write_manifest(out.parent, "bench-pe", {"kinds": kinds, "params": params, "n_points": args.n_points,
                                            "repeats": args.repeats}, [out])


# ---------------------------------------------------------------- entry point

def build_parser():
    ap = argparse.ArgumentParser(prog="geoharm", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="write train/val/test CSVs for a benchmark dataset")
    add_dataset_args(p, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("fit", help="train a location encoder, save checkpoints and metrics")
    add_dataset_args(p)
    p.add_argument("--pe", help="embedding, e.g. sh:L=20 or grid:S=16,rmin=1,rmax=360")
    p.add_argument("--nn", help="network, e.g. siren:H=128,N=2 or fcnet:H=256,dropout=0.5 or linear")
    p.add_argument("--config", help="key=value training config (may also set pe, nn, dataset)")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int, default=None, help="training seed of the first repeat")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict-grid", help="evaluate a checkpoint on a regular lon/lat grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--resolution", type=float, default=1.0, help="grid spacing in degrees")
    p.add_argument("--standardized", action="store_true", help="keep regression outputs in standardized units")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict_grid)

    p = sub.add_parser("latitudinal", help="test accuracy per latitude band")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--band-deg", type=float, default=20.0)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_latitudinal)

    p = sub.add_parser("sweep-resolution", help="checkerboard accuracy against center spacing")
    p.add_argument("--run", action="append", required=True, help="config file with pe, nn and training keys")
    p.add_argument("--centers", help="comma list of center counts")
    p.add_argument("--spacing", help="comma list of mean spacings in degrees")
    p.add_argument("--num-classes", type=int, default=16)
    # dense patterns need more than ~10 training points per cell
    p.add_argument("--n-train", type=int, default=40_000)
    p.add_argument("--n-val", type=int, default=10_000)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_sweep_resolution)

    p = sub.add_parser("bench-pe", help="embedding wall time on Fibonacci points")
    p.add_argument("--kinds", default="sh,sh-closed,spherecplus")
    p.add_argument("--params", default="10,20,30,40", help="L for sh kinds, S otherwise")
    p.add_argument("--n-points", type=int, default=10_000)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--r-min", type=float, default=1.0)
    p.add_argument("--r-max", type=float, default=360.0)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_bench_pe)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
