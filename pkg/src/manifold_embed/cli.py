"""Pipeline driver: prepare, cluster, train, evaluate, map, sweep,
loss-debug.

Every command reads one `key = value` config file, writes a canonical
snapshot of it into the output directory before doing anything else,
and refuses to reuse a directory whose snapshot differs unless --force
is given. Reruns with an identical config are byte-identical, so the
commands are safe to repeat.

Exit codes: 0 success, 2 input error, 3 numeric failure during
training, 4 config error.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from manifold_embed import config as configmod
from manifold_embed import network as net
from manifold_embed import training
from manifold_embed.config import ConfigError, RunConfig
from manifold_embed.dataset import (
    CubeFormatError,
    SplitError,
    SplitSpec,
    SyntheticSpec,
    band_statistics,
    extract_patches,
    load_cube,
    normalize_cube,
    split_indices,
    synthesize,
)
from manifold_embed.evaluation import (
    adjusted_rand_index,
    classification_map,
    default_palette,
    load_palette,
    mcnemar,
    metrics,
    metrics_csv,
    metrics_table,
)
from manifold_embed.losses import LossParams
from manifold_embed.manifold import (
    ManifoldParams,
    build_class_graph,
    geodesic_matrix,
    load_partition,
    model_manifolds,
    pairwise_euclidean,
    save_geodesic,
    save_partition,
)
from manifold_embed.seeding import derive_seed
from manifold_embed.training import NonFiniteLossError, TrainConfig

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_CONFIG = 4

_SNAPSHOT = "config.txt"


class InputError(RuntimeError):
    """User-facing data or filesystem problem (exit code 2)."""


def _resolve_out(cfg: RunConfig, cli_out: str | None) -> tuple[RunConfig, Path]:
    out = cli_out or cfg.out
    if not out:
        raise ConfigError("no output directory: set `out` in the config or pass --out")
    return replace(cfg, out=str(out)), Path(out)


def _write_snapshot(cfg: RunConfig, out: Path, force: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    snapshot = configmod.serialize(cfg).encode()
    existing = out / _SNAPSHOT
    if existing.is_file() and existing.read_bytes() != snapshot and not force:
        raise InputError(
            f"{out} already holds a run with a different configuration; "
            "pass --force to overwrite"
        )
    existing.write_bytes(snapshot)


def _load_array(out: Path, name: str) -> np.ndarray:
    path = out / name
    if not path.is_file():
        raise InputError(f"missing {path}; run the earlier pipeline stages first")
    return np.load(path)


def _write_meta(out: Path, meta: dict) -> None:
    lines = [f"{k} = {v}" for k, v in meta.items()]
    (out / "meta.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_meta(out: Path) -> dict:
    path = out / "meta.txt"
    if not path.is_file():
        raise InputError(f"missing {path}; run prepare first")
    meta = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    return meta


def cmd_prepare(cfg: RunConfig, out: Path) -> None:
    if cfg.source == "synthetic":
        spec = SyntheticSpec(
            num_classes=cfg.synthetic_classes,
            subclusters_per_class=cfg.synthetic_subclusters,
            samples_per_subcluster=cfg.synthetic_samples,
            ambient_dim=cfg.synthetic_dim,
            manifold=cfg.synthetic_manifold,
            noise_sigma=cfg.synthetic_noise,
            seed=derive_seed(cfg.seed, "synthesis"),
        )
        data = synthesize(spec)
        features = data.samples
        labels = data.class_labels
        np.save(out / "subclusters_gt.npy", data.subcluster_ids)
        num_classes = cfg.synthetic_classes
    else:
        cube_path = Path(cfg.cube_path)
        if not cube_path.is_file():
            raise InputError(f"cube file not found: {cube_path}")
        cube = load_cube(cube_path)
        means, stds = band_statistics(cube)
        np.save(out / "norm_stats.npy", np.stack([means, stds]))
        patches = extract_patches(normalize_cube(cube, means, stds), cfg.window)
        features = patches.flattened()
        labels = patches.labels
        np.save(out / "centers.npy", patches.centers)
        num_classes = cube.num_classes

    spec = SplitSpec(
        mode=cfg.split_mode,
        amount=int(cfg.split_amount) if cfg.split_mode == "count" else cfg.split_amount,
        seed=derive_seed(cfg.seed, "split"),
    )
    train_idx, test_idx = split_indices(labels, spec)

    np.save(out / "features.npy", features)
    np.save(out / "labels.npy", labels)
    np.save(out / "train_idx.npy", train_idx)
    np.save(out / "test_idx.npy", test_idx)
    _write_meta(out, {
        "source": cfg.source,
        "num_classes": num_classes,
        "input_dim": features.shape[1],
        "num_samples": len(labels),
    })
    print(f"prepared {len(labels)} samples "
          f"({len(train_idx)} train / {len(test_idx)} test), "
          f"{num_classes} classes, input dim {features.shape[1]}")


def cmd_cluster(cfg: RunConfig, out: Path) -> None:
    features = _load_array(out, "features.npy")
    labels = _load_array(out, "labels.npy")
    train_idx = _load_array(out, "train_idx.npy")
    params = ManifoldParams(k=cfg.k, b=cfg.b)
    partition = model_manifolds(
        features[train_idx], labels[train_idx], params, sample_ids=train_idx
    )
    save_partition(partition, out / "partition.txt")

    for cid in sorted(partition.classes):
        cls = partition.classes[cid]
        diameters = " ".join(f"{d:.4f}" for d in cls.subclass_diameters)
        note = " (fallback merge)" if cls.fallback_merged else ""
        print(f"class {cid}: {cls.num_subclasses} sub-classes, "
              f"{cls.component_count} graph components, "
              f"diameters [{diameters}]{note}")

    gt_path = out / "subclusters_gt.npy"
    if gt_path.is_file():
        gt = np.load(gt_path)
        width = int(max(gt.max(), cfg.k)) + 1
        truth = labels[train_idx] * width + gt[train_idx]
        tags = partition.tags()
        found = np.array([
            tags[int(i)][0] * width + tags[int(i)][1] for i in train_idx
        ])
        print(f"ARI vs planted subclusters: "
              f"{adjusted_rand_index(truth, found):.4f}")

    if cfg.dump_geodesics:
        train_labels = labels[train_idx]
        train_features = features[train_idx]
        for cid in sorted(partition.classes):
            members = np.flatnonzero(train_labels == cid)
            if len(members) < 2:
                continue
            dist = pairwise_euclidean(train_features[members])
            graph = build_class_graph(train_features[members], cfg.b, dist=dist)
            save_geodesic(geodesic_matrix(graph), out / f"geodesic_class_{cid}.bin")


def _network_spec(cfg: RunConfig, input_dim: int, num_classes: int) -> net.NetworkSpec:
    return net.NetworkSpec(
        input_dim=input_dim,
        num_classes=num_classes,
        hidden_dims=cfg.hidden_dims,
        feature_dim=cfg.feature_dim,
        init_seed=derive_seed(cfg.seed, "init"),
    )


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        lr=cfg.lr,
        iterations=cfg.iterations,
        batch_size=cfg.batch_size,
        dmem_weight=cfg.dmem_weight,
        loss_params=LossParams(delta=cfg.delta, beta=cfg.beta, hinge=cfg.hinge),
        manifold_params=ManifoldParams(k=cfg.k, b=cfg.b),
        seed=cfg.seed,
        log_every=cfg.log_every,
        wall_clock=cfg.wall_clock,
    )


def cmd_train(cfg: RunConfig, out: Path) -> None:
    features = _load_array(out, "features.npy")
    labels = _load_array(out, "labels.npy")
    train_idx = _load_array(out, "train_idx.npy")
    meta = _read_meta(out)
    partition = None
    partition_path = out / "partition.txt"
    if partition_path.is_file():
        partition = load_partition(partition_path)
    elif cfg.dmem_weight > 0:
        raise InputError(f"missing {partition_path}; run cluster first")

    spec = _network_spec(cfg, features.shape[1], int(meta["num_classes"]))
    train_cfg = _train_config(cfg)
    try:
        params, log = training.train(
            features[train_idx], labels[train_idx], partition, spec, train_cfg,
            sample_ids=train_idx,
        )
    except NonFiniteLossError as err:
        (out / "divergence.txt").write_text(err.diagnostics(), encoding="utf-8")
        np.save(out / "divergence_batch.npy", features[train_idx][err.indices])
        raise
    net.save_checkpoint(params, spec, out / "checkpoint.dmem")
    log.write(out / "train_log.csv")
    last = log.rows[-1]
    print(f"trained {cfg.iterations} iterations: "
          f"ce {last.ce:.4f}, l0 {last.l0:.4f}, ld {last.ld:.4f}, "
          f"total {last.total:.4f}")


def _predict_chunks(params: net.ModelParams, features: np.ndarray,
                    chunk: int = 4096) -> np.ndarray:
    parts = [
        net.predict(params, features[i:i + chunk])
        for i in range(0, len(features), chunk)
    ]
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(parts)


def cmd_evaluate(cfg: RunConfig, out: Path) -> None:
    features = _load_array(out, "features.npy")
    labels = _load_array(out, "labels.npy")
    test_idx = _load_array(out, "test_idx.npy")
    ckpt_path = out / "checkpoint.dmem"
    if not ckpt_path.is_file():
        raise InputError(f"missing {ckpt_path}; run train first")
    params, spec = net.load_checkpoint(ckpt_path)
    if spec.input_dim != features.shape[1]:
        raise InputError(
            f"checkpoint expects input dim {spec.input_dim}, "
            f"store has {features.shape[1]}"
        )
    preds = _predict_chunks(params, features[test_idx])
    m = metrics(preds, labels[test_idx], num_classes=spec.num_classes)
    np.save(out / "predictions.npy", preds)
    (out / "metrics.csv").write_bytes(metrics_csv(m).encode())
    print(metrics_table(m))

    if cfg.against:
        other = Path(cfg.against)
        other_preds_path = other / "predictions.npy"
        if not other_preds_path.is_file():
            raise InputError(f"missing {other_preds_path}; evaluate that run first")
        other_idx = np.load(other / "test_idx.npy")
        if not np.array_equal(test_idx, other_idx):
            raise InputError(
                f"{other} was evaluated on a different test split; "
                "pair runs that share the same split seed"
            )
        result = mcnemar(preds, np.load(other_preds_path), labels[test_idx])
        verdict = "significant" if result.significant else "not significant"
        print(f"mcnemar vs {other}: statistic {result.statistic:.4f} "
              f"(f_ij={result.f_ij}, f_ji={result.f_ji}, {verdict})")
        (out / "mcnemar.csv").write_bytes(
            (
                "f_ij,f_ji,statistic,significant\n"
                f"{result.f_ij},{result.f_ji},{result.statistic!r},"
                f"{str(result.significant).lower()}\n"
            ).encode()
        )


def cmd_map(cfg: RunConfig, out: Path) -> None:
    if cfg.source != "cube":
        raise InputError("map requires a cube source; synthetic data has no image")
    cube_path = Path(cfg.cube_path)
    if not cube_path.is_file():
        raise InputError(f"cube file not found: {cube_path}")
    cube = load_cube(cube_path)
    stats = _load_array(out, "norm_stats.npy")
    ckpt_path = out / "checkpoint.dmem"
    if not ckpt_path.is_file():
        raise InputError(f"missing {ckpt_path}; run train first")
    params, spec = net.load_checkpoint(ckpt_path)

    patches = extract_patches(normalize_cube(cube, stats[0], stats[1]), cfg.window)
    flattened = patches.flattened()
    if spec.input_dim != flattened.shape[1]:
        raise InputError(
            f"checkpoint expects input dim {spec.input_dim}, "
            f"window {cfg.window} gives {flattened.shape[1]}"
        )
    preds = _predict_chunks(params, flattened)
    if cfg.palette:
        palette = load_palette(cfg.palette)
    else:
        palette = default_palette(max(cube.num_classes, int(preds.max())))
    (out / "classification_map.ppm").write_bytes(
        classification_map(cube, preds, palette)
    )
    print(f"wrote classification map for {len(preds)} labelled pixels")


def cmd_loss_debug(cfg: RunConfig, out: Path) -> None:
    """Short diagnostic run dumping per-step loss terms as CSV."""
    features = _load_array(out, "features.npy")
    labels = _load_array(out, "labels.npy")
    train_idx = _load_array(out, "train_idx.npy")
    meta = _read_meta(out)
    partition = None
    if cfg.dmem_weight > 0:
        partition = load_partition(out / "partition.txt") \
            if (out / "partition.txt").is_file() else None
        if partition is None:
            raise InputError(f"missing {out / 'partition.txt'}; run cluster first")

    spec = _network_spec(cfg, features.shape[1], int(meta["num_classes"]))
    train_cfg = replace(_train_config(cfg), log_every=1)
    _, log = training.train(
        features[train_idx], labels[train_idx], partition, spec, train_cfg,
        sample_ids=train_idx,
    )
    lines = ["step,l0,ld,ce,total,grad_norm"]
    for r in log.rows:
        lines.append(f"{r.iteration},{r.l0!r},{r.ld!r},{r.ce!r},"
                     f"{r.total!r},{r.grad_norm!r}")
    (out / "loss_debug.csv").write_bytes(("\n".join(lines) + "\n").encode())
    print(f"dumped {len(log.rows)} steps to {out / 'loss_debug.csv'}")


def _run_cell(args: tuple[str, str, bool]) -> tuple[str, float, float, float, str]:
    """Sweep worker: full pipeline in one output directory. Returns
    (cell name, oa, aa, kappa, error message or empty)."""
    cfg_text, cell_dir, force = args
    cell = Path(cell_dir)
    try:
        cfg = configmod.parse(cfg_text)
        _write_snapshot(cfg, cell, force)
        cmd_prepare(cfg, cell)
        cmd_cluster(cfg, cell)
        cmd_train(cfg, cell)
        cmd_evaluate(cfg, cell)
        import csv

        with (cell / "metrics.csv").open() as fh:
            rows = {r["metric"]: float(r["value"]) for r in csv.DictReader(fh)
                    if r["metric"] in ("oa", "aa", "kappa")}
        return cell.name, rows["oa"], rows["aa"], rows["kappa"], ""
    except Exception as exc:  # noqa: BLE001 - cell failures must not kill the sweep
        return cell.name, float("nan"), float("nan"), float("nan"), str(exc)


def _pool_width(n_cells: int) -> int:
    raw = os.environ.get("MANIFOLD_EMBED_THREADS", "0")
    try:
        width = int(raw)
    except ValueError:
        raise ConfigError(f"MANIFOLD_EMBED_THREADS must be an integer, got {raw!r}")
    if width < 0:
        raise ConfigError("MANIFOLD_EMBED_THREADS must be non-negative")
    if width == 0:
        width = os.cpu_count() or 1
    return max(1, min(width, n_cells))


def cmd_sweep(cfg: RunConfig, out: Path, force: bool = False) -> None:
    ks = cfg.sweep_k or (cfg.k,)
    bs = cfg.sweep_b or (cfg.b,)
    deltas = cfg.sweep_delta or (cfg.delta,)
    lambdas = cfg.sweep_lambda or (cfg.dmem_weight,)
    seeds = cfg.sweep_seeds or (cfg.seed,)

    jobs = []
    for k, b, delta, lam, seed in itertools.product(ks, bs, deltas, lambdas, seeds):
        name = f"cell_k{k}_b{b}_d{delta:g}_l{lam:g}_s{seed}"
        cell_cfg = replace(
            cfg, k=k, b=b, delta=delta, dmem_weight=lam, seed=seed,
            out=str(out / name), against=None,
            sweep_k=None, sweep_b=None, sweep_delta=None, sweep_lambda=None,
            sweep_seeds=None,
        )
        jobs.append((configmod.serialize(cell_cfg), str(out / name), force))

    width = _pool_width(len(jobs))
    if width == 1:
        results = [_run_cell(job) for job in jobs]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=width) as pool:
            results = list(pool.map(_run_cell, jobs))

    by_cell = {name: (oa, aa, kappa, err) for name, oa, aa, kappa, err in results}
    failures = [(name, err) for name, *_rest, err in results if err]
    if failures:
        text = "".join(f"{name}: {err}\n" for name, err in failures)
        (out / "failures.txt").write_text(text, encoding="utf-8")
        for name, err in failures:
            print(f"cell failed: {name}: {err}", file=sys.stderr)

    lines = ["k,b,delta,lambda,runs,failures,oa_mean,oa_sd,aa_mean,aa_sd,"
             "kappa_mean,kappa_sd"]
    for k, b, delta, lam in itertools.product(ks, bs, deltas, lambdas):
        cells = [f"cell_k{k}_b{b}_d{delta:g}_l{lam:g}_s{seed}" for seed in seeds]
        rows = [by_cell[c][:3] for c in cells if not by_cell[c][3]]
        failed = len(cells) - len(rows)
        if rows:
            arr = np.asarray(rows, dtype=np.float64)
            mean = [float(v) for v in arr.mean(axis=0)]
            sd = [float(v) for v in
                  (arr.std(axis=0, ddof=1) if len(rows) > 1 else np.zeros(3))]
            stats = (f"{mean[0]!r},{sd[0]!r},{mean[1]!r},{sd[1]!r},"
                     f"{mean[2]!r},{sd[2]!r}")
        else:
            stats = "nan,nan,nan,nan,nan,nan"
        lines.append(f"{k},{b},{delta!r},{lam!r},{len(rows)},{failed},{stats}")
    (out / "sweep.csv").write_bytes(("\n".join(lines) + "\n").encode())
    print(f"swept {len(jobs)} cells ({len(failures)} failed); "
          f"aggregate in {out / 'sweep.csv'}")


_COMMANDS = {
    "prepare": cmd_prepare,
    "cluster": cmd_cluster,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "map": cmd_map,
    "loss-debug": cmd_loss_debug,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="manifold-embed",
        description="Sub-class manifold embedding pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*_COMMANDS, "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key = value config file")
        p.add_argument("--out", help="output directory (overrides config `out`)")
        p.add_argument("--force", action="store_true",
                       help="overwrite a differing config snapshot")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = configmod.load(args.config)
        cfg.validate()
        cfg, out = _resolve_out(cfg, args.out)
        if args.command == "sweep":
            _write_snapshot(cfg, out, args.force)
            cmd_sweep(cfg, out, force=args.force)
        else:
            _write_snapshot(cfg, out, args.force)
            _COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLossError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, FileNotFoundError, CubeFormatError, SplitError,
            ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
