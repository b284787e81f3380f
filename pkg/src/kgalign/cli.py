"""Command-line surface: generate, train, eval, analyze-bias, sinkhorn.

Option precedence is flags > config file > defaults. Config files are
line-oriented ``key=value`` (keys match the flag names with underscores).
Every run writes a manifest with the resolved configuration and input
digests; ``train --from-manifest`` replays a recorded run byte-identically.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import _kernels
from .encoder import TrainConfig, encode, init_params
from .kg import DatasetError, KgPair, ingest_dataset, load_alignment_file, write_alignments, write_features
from .manifest import RunManifest, sha256_file
from .metrics import hit_at_k, mrr, precision_recall_f1
from .pipeline import PipelineConfig, run_naive_baseline, run_pipeline
from .synthetic import DATASET_FILES, SynthConfig, generate_pair, write_dataset
from .transport import SinkhornConfig, load_matrix, save_matrix, selection_threshold, sinkhorn
from .neighborhood import CostMatrix

_THREAD_ENV = "KGALIGN_THREADS"

TRAIN_DEFAULTS: dict[str, tuple] = {
    # name: (caster, default)
    "strategy": (str, "ot"),
    "models": (int, 3),
    "iterations": (int, 9),
    "ensemble_mode": (str, "intersection"),
    "rectify_weight": (float, 10.0),
    "margin": (float, 1.0),
    "negatives": (int, 125),
    "dim": (int, 300),
    "layers": (int, 2),
    "epochs": (int, 10),
    "batch_size": (int, 256),
    "learning_rate": (float, 1e-3),
    "ot_reg": (float, 0.5),
    "ot_max_iterations": (int, 500),
    "ot_tolerance": (float, 1e-6),
    "naive_threshold": (float, None),
    "seed": (int, 0),
    "threads": (int, None),
    "repeats": (int, 1),
}


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DatasetError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _resolve_options(args: argparse.Namespace) -> dict:
    file_values = _read_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for name, (caster, default) in TRAIN_DEFAULTS.items():
        flag = getattr(args, name, None)
        if flag is not None:
            resolved[name] = flag
        elif name in file_values:
            resolved[name] = caster(file_values[name])
        else:
            resolved[name] = default
    if resolved["threads"] is None:
        resolved["threads"] = int(os.environ.get(_THREAD_ENV, "1"))
    return resolved


def _pipeline_config(opts: dict) -> PipelineConfig:
    return PipelineConfig(
        models=opts["models"],
        iterations=opts["iterations"],
        ensemble_mode=opts["ensemble_mode"],
        rectify_weight=opts["rectify_weight"],
        train=TrainConfig(
            margin=opts["margin"],
            negatives=opts["negatives"],
            dim=opts["dim"],
            layers=opts["layers"],
            epochs=opts["epochs"],
            batch_size=opts["batch_size"],
            learning_rate=opts["learning_rate"],
            rng_seed=opts["seed"],
        ),
        sinkhorn=SinkhornConfig(
            regularization=opts["ot_reg"],
            max_iterations=opts["ot_max_iterations"],
            tolerance=opts["ot_tolerance"],
        ),
        master_seed=opts["seed"],
        threads=opts["threads"],
    )


def _dataset_paths(dataset_dir: str) -> dict[str, Path]:
    root = Path(dataset_dir)
    paths = {name: root / fname for name, fname in DATASET_FILES.items()}
    missing = [
        str(p) for name, p in paths.items() if name != "truth" and not p.exists()
    ]
    if missing:
        raise DatasetError(f"dataset files missing: {', '.join(missing)}")
    return paths


def _load_pair(paths: dict[str, Path]) -> KgPair:
    return ingest_dataset(
        paths["triplets1"],
        paths["triplets2"],
        paths["seeds"],
        paths["test"],
        paths["features1"],
        paths["features2"],
    )


def _load_truth(pair: KgPair, truth_path: Path) -> set[tuple[int, int]]:
    left_of = {lab: i for i, lab in enumerate(pair.g1.entity_labels)}
    right_of = {lab: i for i, lab in enumerate(pair.g2.entity_labels)}
    truth = set()
    for a, b in load_alignment_file(truth_path):
        if a not in left_of or b not in right_of:
            raise DatasetError(f"{truth_path}: unknown entity in truth pair ({a},{b})")
        truth.add((left_of[a], right_of[b]))
    return truth


def _default_naive_threshold(pair: KgPair, cfg: PipelineConfig) -> float:
    """Distance quantile of the cold-start embeddings admitting about twice
    as many cross pairs as could ever be one-to-one; reproduces the
    overselecting regime a fixed naive threshold lands in."""
    params = init_params(cfg.train, pair.feature_dim, cfg.master_seed)
    table = encode(params, pair)
    dists = _kernels.pairwise_l1(
        table.g1()[pair.unaligned1], table.g2()[pair.unaligned2]
    )
    target = min(1.0, 2.0 * min(dists.shape) / dists.size)
    return float(np.quantile(dists, target))


def _write_metrics(out_dir: Path, final: dict[str, float]) -> None:
    with open(out_dir / "metrics.txt", "w", encoding="utf-8") as fh:
        for key, value in final.items():
            fh.write(f"{key}={value!r}\n")
    with open(out_dir / "metrics.csv", "w", encoding="utf-8") as fh:
        fh.write(",".join(final.keys()) + "\n")
        fh.write(",".join(repr(v) for v in final.values()) + "\n")


def _run_train_once(
    pair: KgPair,
    truth: set | None,
    opts: dict,
    out_dir: Path,
) -> dict[str, float]:
    cfg = _pipeline_config(opts)
    if opts["strategy"] == "naive":
        threshold = opts["naive_threshold"]
        if threshold is None:
            threshold = _default_naive_threshold(pair, cfg)
            opts["naive_threshold"] = threshold
        result = run_naive_baseline(pair, cfg, threshold, truth)
    elif opts["strategy"] == "ot":
        result = run_pipeline(pair, cfg, truth)
    else:
        raise ValueError(f"unknown strategy {opts['strategy']!r} (expected ot or naive)")

    out_dir.mkdir(parents=True, exist_ok=True)
    result.report.to_csv(out_dir / "report.csv")
    with open(out_dir / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write(result.report.summary() + "\n")
    _write_metrics(out_dir, result.report.final)

    labels1 = result.pair.g1.entity_labels
    labels2 = result.pair.g2.entity_labels
    write_features(out_dir / "embeddings1.tsv", labels1, result.table.g1())
    write_features(out_dir / "embeddings2.tsv", labels2, result.table.g2())
    with open(out_dir / "working_set.tsv", "w", encoding="utf-8") as fh:
        for (l, r), prov in sorted(result.pair.alignments.items()):
            fh.write(f"{labels1[l]}\t{labels2[r]}\t{prov}\n")
    write_alignments(
        out_dir / "predictions.tsv",
        ((labels1[l], labels2[r]) for l, r in result.inference.predictions),
    )
    with open(out_dir / "ranks.tsv", "w", encoding="utf-8") as fh:
        for (l, r), rank in zip(result.inference.test_pairs, result.inference.ranks):
            fh.write(f"{labels1[l]}\t{labels2[r]}\t{rank}\n")
    return result.report.final


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = SynthConfig(
        n_entities=args.entities,
        n_relations=args.relations,
        avg_degree=args.avg_degree,
        edge_perturbation=args.perturbation,
        feature_dim=args.feature_dim,
        feature_noise=args.feature_noise,
        seed_fraction=args.seed_fraction,
        rng_seed=args.seed,
    )
    pair, truth = generate_pair(cfg)
    paths = write_dataset(args.out, pair, truth)
    manifest = RunManifest(
        command="generate",
        config={k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
        kernel_backend=_kernels.active_backend(),
    )
    manifest.outputs = {name: str(p) for name, p in paths.items()}
    for name, p in paths.items():
        manifest.inputs[name] = {"path": str(p), "sha256": sha256_file(p)}
    manifest.save(Path(args.out) / "manifest.json")
    print(f"wrote {len(paths)} dataset files to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    if args.from_manifest:
        manifest = RunManifest.load(args.from_manifest)
        manifest.verify_inputs()
        opts = dict(manifest.config)
        dataset_inputs = {
            name: Path(entry["path"]) for name, entry in manifest.inputs.items()
        }
        truth_path = dataset_inputs.get("truth")
    else:
        if not args.dataset:
            raise DatasetError("either --dataset or --from-manifest is required")
        opts = _resolve_options(args)
        dataset_inputs = _dataset_paths(args.dataset)
        truth_path = Path(args.truth) if args.truth else dataset_inputs.get("truth")
        if truth_path is not None and not Path(truth_path).exists():
            truth_path = None

    pair = _load_pair(dataset_inputs)
    truth = _load_truth(pair, truth_path) if truth_path else None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    repeats = int(opts.get("repeats", 1))
    base_seed = int(opts["seed"])
    all_finals: list[dict[str, float]] = []
    for run_idx in range(repeats):
        run_opts = dict(opts)
        run_opts["seed"] = base_seed + run_idx
        run_dir = out_dir if repeats == 1 else out_dir / f"run{run_idx}"
        final = _run_train_once(pair, truth, run_opts, run_dir)
        if run_idx == 0:
            opts["naive_threshold"] = run_opts["naive_threshold"]
        all_finals.append(final)

    if repeats > 1:
        keys = list(all_finals[0].keys())
        with open(out_dir / "repeats.csv", "w", encoding="utf-8") as fh:
            fh.write("run,seed," + ",".join(keys) + "\n")
            for run_idx, final in enumerate(all_finals):
                fh.write(
                    f"{run_idx},{base_seed + run_idx},"
                    + ",".join(repr(final.get(k, float('nan'))) for k in keys)
                    + "\n"
                )
            means = [
                sum(f.get(k, 0.0) for f in all_finals) / len(all_finals) for k in keys
            ]
            fh.write("mean,," + ",".join(repr(m) for m in means) + "\n")

    manifest = RunManifest(
        command="train",
        config=opts,
        kernel_backend=_kernels.active_backend(),
    )
    for name, path in dataset_inputs.items():
        if Path(path).exists():
            manifest.add_input(name, path)
    manifest.outputs = {
        "report": "report.csv",
        "summary": "summary.txt",
        "metrics": "metrics.txt",
        "embeddings1": "embeddings1.tsv",
        "embeddings2": "embeddings2.tsv",
        "working_set": "working_set.tsv",
        "predictions": "predictions.tsv",
        "ranks": "ranks.tsv",
    }
    manifest.save(out_dir / "manifest.json")
    for key, value in all_finals[0].items():
        print(f"{key}={value!r}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    test_pairs = set(map(tuple, load_alignment_file(args.test)))
    if not test_pairs:
        raise DatasetError(f"{args.test}: empty test file")
    final: dict[str, float] = {}

    if args.ranks:
        ranks = []
        with open(args.ranks, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 3:
                    raise DatasetError(f"{args.ranks}:{lineno}: expected 3 fields")
                ranks.append(int(fields[2]))
        if not ranks:
            raise DatasetError(f"{args.ranks}: no ranks found")
        final["hit@1"] = hit_at_k(ranks, 1)
        final["hit@10"] = hit_at_k(ranks, 10)
        final["mrr"] = mrr(ranks)
    elif args.embeddings1 and args.embeddings2:
        ranks = _ranks_from_embeddings(args, test_pairs)
        final["hit@1"] = hit_at_k(ranks, 1)
        final["hit@10"] = hit_at_k(ranks, 10)
        final["mrr"] = mrr(ranks)

    if args.predictions:
        pred = set(map(tuple, load_alignment_file(args.predictions)))
        if not pred:
            print("warning: empty prediction file", file=sys.stderr)
        p, r, f1 = precision_recall_f1(pred, test_pairs)
        final["precision"] = p
        final["recall"] = r
        final["f1"] = f1

    if not final:
        raise DatasetError(
            "nothing to evaluate: pass --predictions, --ranks, or embeddings"
        )
    for key, value in final.items():
        print(f"{key}={value!r}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_metrics(out_dir, final)
        manifest = RunManifest(
            command="eval", config={}, kernel_backend=_kernels.active_backend()
        )
        manifest.add_input("test", args.test)
        for name in ("predictions", "ranks", "embeddings1", "embeddings2"):
            value = getattr(args, name)
            if value:
                manifest.add_input(name, value)
        manifest.save(out_dir / "manifest.json")
    return 0


def _ranks_from_embeddings(args: argparse.Namespace, test_pairs: set) -> list[int]:
    """Rank test counterparts by plain L1 distance between exported
    embeddings; candidate pool excludes seed-consumed entities if given."""
    from .kg import _load_features  # same parser as feature ingestion

    labels1, vec1 = _load_features(Path(args.embeddings1))
    labels2, vec2 = _load_features(Path(args.embeddings2))
    index1 = {lab: i for i, lab in enumerate(labels1)}
    index2 = {lab: i for i, lab in enumerate(labels2)}
    excluded = set()
    if args.seeds:
        excluded = {b for _, b in load_alignment_file(args.seeds)}
    pool_labels = [lab for lab in labels2 if lab not in excluded]
    pool_rows = np.array([index2[lab] for lab in pool_labels], dtype=np.int64)
    order = np.argsort(np.array(pool_labels, dtype=object), kind="stable")
    pool_labels = [pool_labels[i] for i in order]
    pool_rows = pool_rows[order]
    ranks = []
    for a, b in sorted(test_pairs):
        if a not in index1 or b not in index2:
            raise DatasetError(f"test pair ({a},{b}) missing from embeddings")
        row = np.abs(vec2[pool_rows] - vec1[index1[a]][None, :]).sum(axis=1)
        try:
            target = pool_labels.index(b)
        except ValueError as exc:
            raise DatasetError(f"test counterpart {b!r} excluded from pool") from exc
        c = row[target]
        better = int((row < c).sum())
        ties = int(sum(1 for t in np.nonzero(row == c)[0] if pool_labels[t] < b))
        ranks.append(1 + better + ties)
    return ranks


def cmd_analyze_bias(args: argparse.Namespace) -> int:
    dataset_inputs = _dataset_paths(args.dataset)
    truth_path = Path(args.truth) if args.truth else dataset_inputs.get("truth")
    if truth_path is None or not Path(truth_path).exists():
        raise DatasetError("analyze-bias requires a truth file")
    pair = _load_pair(dataset_inputs)
    truth = _load_truth(pair, truth_path)
    opts = _resolve_options(args)
    cfg = _pipeline_config(opts)
    threshold = opts["naive_threshold"]
    if threshold is None:
        threshold = _default_naive_threshold(pair, cfg)
        opts["naive_threshold"] = threshold

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ot_result = run_pipeline(pair, cfg, truth)
    naive_result = run_naive_baseline(pair, cfg, threshold, truth)
    ot_result.report.to_csv(out_dir / "bias_ot.csv")
    naive_result.report.to_csv(out_dir / "bias_naive.csv")
    with open(out_dir / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write(ot_result.report.summary() + "\n\n")
        fh.write(naive_result.report.summary() + "\n")
    manifest = RunManifest(
        command="analyze-bias", config=opts, kernel_backend=_kernels.active_backend()
    )
    for name, path in dataset_inputs.items():
        if Path(path).exists():
            manifest.add_input(name, path)
    manifest.outputs = {
        "ot_report": "bias_ot.csv",
        "naive_report": "bias_naive.csv",
        "summary": "summary.txt",
    }
    manifest.save(out_dir / "manifest.json")
    ot_conf = [r.conflicted for r in ot_result.report.records]
    naive_conf = [r.conflicted for r in naive_result.report.records]
    print(f"ot conflicted per iteration: {ot_conf}")
    print(f"naive conflicted per iteration: {naive_conf}")
    print(f"ot hit@1: {ot_result.report.final.get('hit@1')!r}")
    print(f"naive hit@1: {naive_result.report.final.get('hit@1')!r}")
    return 0


def cmd_sinkhorn(args: argparse.Namespace) -> int:
    values = load_matrix(args.cost)
    cfg = SinkhornConfig(
        regularization=args.reg,
        max_iterations=args.max_iterations,
        tolerance=args.tolerance,
    )
    coupling = sinkhorn(CostMatrix.from_array(values), cfg)
    save_matrix(args.out_coupling, coupling.matrix)
    pairs = [
        (int(coupling.row_entities[i]), int(coupling.col_entities[j]))
        for i, j in np.argwhere(coupling.matrix > coupling.threshold)
    ]
    write_alignments(args.out_pairs, sorted(pairs))
    manifest = RunManifest(
        command="sinkhorn",
        config={
            "reg": args.reg,
            "max_iterations": args.max_iterations,
            "tolerance": args.tolerance,
        },
        kernel_backend=_kernels.active_backend(),
    )
    manifest.add_input("cost", args.cost)
    manifest.outputs = {"coupling": str(args.out_coupling), "pairs": str(args.out_pairs)}
    manifest.save(str(args.out_coupling) + ".manifest.json")
    print(
        f"rows={values.shape[0]} cols={values.shape[1]} iterations={coupling.iterations} "
        f"violation={coupling.max_violation!r} converged={coupling.converged} "
        f"selected={len(pairs)} threshold={selection_threshold(*values.shape)!r}"
    )
    return 0


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategy", choices=("ot", "naive"), default=None)
    p.add_argument("--models", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--ensemble-mode", dest="ensemble_mode",
                   choices=("intersection", "majority"), default=None)
    p.add_argument("--rectify-weight", dest="rectify_weight", type=float, default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--negatives", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--ot-reg", dest="ot_reg", type=float, default=None)
    p.add_argument("--ot-max-iterations", dest="ot_max_iterations", type=int, default=None)
    p.add_argument("--ot-tolerance", dest="ot_tolerance", type=float, default=None)
    p.add_argument("--naive-threshold", dest="naive_threshold", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--config", default=None, help="key=value config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgalign", description="Entity alignment across knowledge graphs"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--entities", type=int, default=100)
    g.add_argument("--relations", type=int, default=10)
    g.add_argument("--avg-degree", dest="avg_degree", type=float, default=4.0)
    g.add_argument("--perturbation", type=float, default=0.0)
    g.add_argument("--feature-dim", dest="feature_dim", type=int, default=32)
    g.add_argument("--feature-noise", dest="feature_noise", type=float, default=0.0)
    g.add_argument("--seed-fraction", dest="seed_fraction", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="run the pseudo-labeling training pipeline")
    t.add_argument("--dataset", default=None, help="dataset directory")
    t.add_argument("--truth", default=None, help="truth alignment file (optional)")
    t.add_argument("--out", required=True)
    t.add_argument("--repeats", type=int, default=None)
    t.add_argument("--from-manifest", dest="from_manifest", default=None)
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="compute metrics from run artifacts")
    e.add_argument("--test", required=True)
    e.add_argument("--predictions", default=None)
    e.add_argument("--ranks", default=None)
    e.add_argument("--embeddings1", default=None)
    e.add_argument("--embeddings2", default=None)
    e.add_argument("--seeds", default=None)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("analyze-bias", help="paired error analysis of both strategies")
    b.add_argument("--dataset", required=True)
    b.add_argument("--truth", default=None)
    b.add_argument("--out", required=True)
    _add_train_flags(b)
    b.set_defaults(func=cmd_analyze_bias)

    s = sub.add_parser("sinkhorn", help="solve one transport problem from a cost file")
    s.add_argument("--cost", required=True)
    s.add_argument("--reg", type=float, default=0.5)
    s.add_argument("--max-iterations", dest="max_iterations", type=int, default=500)
    s.add_argument("--tolerance", type=float, default=1e-6)
    s.add_argument("--out-coupling", dest="out_coupling", required=True)
    s.add_argument("--out-pairs", dest="out_pairs", required=True)
    s.set_defaults(func=cmd_sinkhorn)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
