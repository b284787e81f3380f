"""Iterative pseudo-label training: M models, ensembling, seed augmentation.

Each pseudo-labeling iteration trains every model on the current working
alignment set (warm-started from the previous iteration), lets each model
select conflict-free pairs via optimal transport, ensembles the selections,
and augments the working set with the consensus. Models are fully
independent: they share only the immutable KG pair and the working-set
snapshot taken at the start of the iteration.

A naive thresholding baseline with the same loop shape is provided for the
pseudo-labeling error analysis; it accepts every cross pair whose embedding
distance falls below a fixed threshold, conflicts included.
"""

from __future__ import annotations

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .encoder import EmbeddingTable, EncoderTrainer, TrainConfig, encode
from .kg import AlignmentConflictError, AlignmentSet, KgPair, augment_seeds
from .metrics import decompose_errors, hit_at_k, mrr, precision_recall_f1
from .neighborhood import CostMatrix, NeighborhoodContext, match_score_matrix
from .transport import SinkhornConfig, pseudo_label, select_alignments, sinkhorn

__all__ = [
    "PipelineConfig",
    "IterationRecord",
    "RunReport",
    "PipelineResult",
    "InferenceResult",
    "ensemble",
    "run_pipeline",
    "run_naive_baseline",
    "final_inference",
]

ENSEMBLE_MODES = ("intersection", "majority")


@dataclass(frozen=True)
class PipelineConfig:
    """All pipeline hyperparameters, defaults as used throughout the tests."""

    models: int = 3
    iterations: int = 9
    ensemble_mode: str = "intersection"
    rectify_weight: float = 10.0
    train: TrainConfig = field(default_factory=TrainConfig)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    master_seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.models < 1:
            raise ValueError("models must be at least 1")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.ensemble_mode not in ENSEMBLE_MODES:
            raise ValueError(f"ensemble_mode must be one of {ENSEMBLE_MODES}")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")


@dataclass
class IterationRecord:
    iteration: int
    working_size: int
    model_selected: list[int]
    ensembled: int
    correct: int | None
    conflicted: int | None
    one_to_one: int | None
    mean_loss: float | None
    sinkhorn_iterations: int
    sinkhorn_violation: float
    subset_ok: bool


@dataclass
class RunReport:
    strategy: str
    models: int
    records: list[IterationRecord]
    final: dict[str, float]

    def csv_lines(self) -> list[str]:
        cols = ["iteration", "working_size", "ensembled"]
        cols += [f"model{m + 1}_selected" for m in range(self.models)]
        cols += [
            "correct",
            "conflicted",
            "one_to_one",
            "mean_loss",
            "sinkhorn_iterations",
            "sinkhorn_violation",
            "subset_ok",
        ]
        lines = [",".join(cols)]
        for rec in self.records:
            row = [str(rec.iteration), str(rec.working_size), str(rec.ensembled)]
            row += [str(n) for n in rec.model_selected]
            row += [""] * (self.models - len(rec.model_selected))
            row += [
                "" if rec.correct is None else str(rec.correct),
                "" if rec.conflicted is None else str(rec.conflicted),
                "" if rec.one_to_one is None else str(rec.one_to_one),
                "" if rec.mean_loss is None else repr(rec.mean_loss),
                str(rec.sinkhorn_iterations),
                repr(rec.sinkhorn_violation),
                "1" if rec.subset_ok else "0",
            ]
            lines.append(",".join(row))
        return lines

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.csv_lines()) + "\n")

    def summary(self) -> str:
        lines = [f"strategy={self.strategy} models={self.models} iterations={len(self.records)}"]
        for rec in self.records:
            err = (
                f" correct={rec.correct} conflicted={rec.conflicted} one_to_one={rec.one_to_one}"
                if rec.correct is not None
                else ""
            )
            loss = f" loss={rec.mean_loss:.4f}" if rec.mean_loss is not None else ""
            lines.append(
                f"  iter {rec.iteration}: |S|={rec.working_size} selected={rec.model_selected}"
                f" ensembled={rec.ensembled}{err}{loss}"
            )
        for key, value in self.final.items():
            lines.append(f"{key}={value}")
        return "\n".join(lines)


@dataclass
class InferenceResult:
    """Final-inference outputs over the non-seed candidate pools."""

    test_pairs: list[tuple[int, int]]
    ranks: list[int]
    predictions: list[tuple[int, int]]
    pool1: np.ndarray | None = None
    pool2: np.ndarray | None = None
    cost: np.ndarray | None = None


@dataclass
class PipelineResult:
    table: EmbeddingTable
    pair: KgPair
    report: RunReport
    inference: InferenceResult


def ensemble(sets: list, mode: str = "intersection") -> list[tuple[int, int]]:
    """Combine per-model pseudo-label sets into a one-to-one consensus set.

    Intersection keeps pairs present in every set. Majority keeps pairs in
    more than half the sets, then sweeps conflicts greedily, preferring more
    votes and breaking ties by lower left id then right id.
    """
    if not sets:
        raise ValueError("ensemble requires at least one selection set")
    if mode == "intersection":
        common = set(sets[0])
        for s in sets[1:]:
            common &= set(s)
        return sorted(common)
    if mode == "majority":
        votes = Counter(p for s in sets for p in set(s))
        need = len(sets) / 2.0
        candidates = sorted(
            (p for p, v in votes.items() if v > need),
            key=lambda p: (-votes[p], p[0], p[1]),
        )
        kept: list[tuple[int, int]] = []
        used_left: set[int] = set()
        used_right: set[int] = set()
        for l, r in candidates:
            if l not in used_left and r not in used_right:
                kept.append((l, r))
                used_left.add(l)
                used_right.add(r)
        return sorted(kept)
    raise ValueError(f"unknown ensemble mode {mode!r}")


def _model_seeds(master_seed: int, count: int) -> list[tuple[int, int]]:
    """Independent (init, shuffle) seeds per model from one master seed."""
    root = np.random.SeedSequence(master_seed)
    out = []
    for child in root.spawn(count):
        init_ss, shuffle_ss = child.spawn(2)
        out.append(
            (int(init_ss.generate_state(1)[0]), int(shuffle_ss.generate_state(1)[0]))
        )
    return out


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _ranks_from_cost(
    cost: np.ndarray,
    pool1: np.ndarray,
    pool2: np.ndarray,
    test_pairs: list[tuple[int, int]],
) -> list[int]:
    """Rank of each test pair's true counterpart, ascending cost, ties by id."""
    row_of = {int(e): i for i, e in enumerate(pool1)}
    col_of = {int(e): j for j, e in enumerate(pool2)}
    ranks = []
    for l, r in test_pairs:
        if l not in row_of or r not in col_of:
            raise ValueError(f"test pair ({l},{r}) is not inside the candidate pools")
        row = cost[row_of[l]]
        c = row[col_of[r]]
        rank = 1 + int((row < c).sum()) + int(((row == c) & (pool2 < r)).sum())
        ranks.append(rank)
    return ranks


def _candidate_pools(pair: KgPair) -> tuple[np.ndarray, np.ndarray]:
    seeds = pair.seeds
    pool1 = np.array(
        sorted(set(range(pair.g1.n_entities)) - seeds.lefts()), dtype=np.int64
    )
    pool2 = np.array(
        sorted(set(range(pair.g2.n_entities)) - seeds.rights()), dtype=np.int64
    )
    return pool1, pool2


def final_inference(
    table: EmbeddingTable,
    pair: KgPair,
    rectify_weight: float,
    sinkhorn_cfg: SinkhornConfig,
    ctx: NeighborhoodContext | None = None,
    rectify: bool = True,
) -> InferenceResult:
    """Rank candidates and select a final alignment set from the learned
    embeddings.

    Candidates are all entities not consumed by seed pairs. Ranking sorts
    rectified cost ascending (ties by entity id); the predicted pair set is
    the conflict-free transport selection over the same cost matrix.
    """
    pool1, pool2 = _candidate_pools(pair)
    test_pairs = sorted(pair.test)
    if pool1.size == 0 or pool2.size == 0:
        return InferenceResult(test_pairs, [], [])
    cost = _kernels.pairwise_l1(table.g1()[pool1], table.g2()[pool2])
    if rectify and rectify_weight != 0.0 and len(pair.alignments) > 0:
        if ctx is None:
            ctx = NeighborhoodContext.build(pair)
        cost = cost - rectify_weight * match_score_matrix(
            pool1, pool2, pair.alignments, ctx.idx1, ctx.idx2, ctx.relation_map
        )
    ranks = _ranks_from_cost(cost, pool1, pool2, test_pairs)
    coupling = sinkhorn(CostMatrix(cost, pool1, pool2), sinkhorn_cfg)
    predictions = select_alignments(coupling)
    return InferenceResult(test_pairs, ranks, predictions)


def _final_metrics(inference: InferenceResult) -> dict[str, float]:
    out: dict[str, float] = {}
    if inference.ranks:
        out["hit@1"] = hit_at_k(inference.ranks, 1)
        out["hit@10"] = hit_at_k(inference.ranks, 10)
        out["mrr"] = mrr(inference.ranks)
    if inference.test_pairs:
        p, r, f1 = precision_recall_f1(inference.predictions, inference.test_pairs)
        out["precision"] = p
        out["recall"] = r
        out["f1"] = f1
    out["predicted"] = float(len(inference.predictions))
    out["test_size"] = float(len(inference.test_pairs))
    return out


def run_pipeline(
    pair: KgPair, cfg: PipelineConfig, truth: AlignmentSet | set | None = None
) -> PipelineResult:
    """Run the full training loop and return model 1's embeddings, the final
    working set, and the per-iteration report.

    Seeds may be empty: the first iteration then pseudo-labels directly from
    the cold (input-feature driven) embeddings. Terminates early when an
    iteration selects nothing or the unaligned sets are exhausted.
    """
    ctx = NeighborhoodContext.build(pair)
    trainers = [
        EncoderTrainer(cfg.train, pair.feature_dim, init_seed, shuffle_seed)
        for init_seed, shuffle_seed in _model_seeds(cfg.master_seed, cfg.models)
    ]
    truth_set = set(truth) if truth is not None else None
    current = pair
    records: list[IterationRecord] = []

    def train_and_label(m: int):
        losses = trainers[m].train(current)
        table_m = encode(trainers[m].params, current)
        result = pseudo_label(current, table_m, cfg.rectify_weight, cfg.sinkhorn, ctx)
        return losses, result

    for t in range(1, cfg.iterations + 1):
        if current.unaligned1.size == 0 or current.unaligned2.size == 0:
            break
        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=min(cfg.threads, cfg.models)) as pool:
                outcomes = list(pool.map(train_and_label, range(cfg.models)))
        else:
            outcomes = [train_and_label(m) for m in range(cfg.models)]
        sets = [out[1].pairs for out in outcomes]
        consensus = ensemble(sets, cfg.ensemble_mode)
        if not AlignmentSet.from_pairs(consensus, "check").is_one_to_one():
            raise AlignmentConflictError("ensembled pseudo-labels are not one-to-one")
        subset_ok = all(set(consensus) <= set(s) for s in sets)
        dec = decompose_errors(consensus, truth_set) if truth_set is not None else None
        losses = [loss for out in outcomes for loss in out[0]]
        records.append(
            IterationRecord(
                iteration=t,
                working_size=len(current.alignments),
                model_selected=[len(s) for s in sets],
                ensembled=len(consensus),
                correct=dec.correct if dec else None,
                conflicted=dec.conflicted if dec else None,
                one_to_one=dec.one_to_one if dec else None,
                mean_loss=_mean(losses),
                sinkhorn_iterations=max(out[1].iterations for out in outcomes),
                sinkhorn_violation=max(out[1].max_violation for out in outcomes),
                subset_ok=subset_ok,
            )
        )
        if not consensus:
            break
        current = augment_seeds(current, consensus, t)

    table = encode(trainers[0].params, current)
    inference = final_inference(
        table, current, cfg.rectify_weight, cfg.sinkhorn, ctx, rectify=True
    )
    report = RunReport("ot", cfg.models, records, _final_metrics(inference))
    return PipelineResult(table, current, report, inference)


def run_naive_baseline(
    pair: KgPair,
    cfg: PipelineConfig,
    threshold: float,
    truth: AlignmentSet | set | None = None,
) -> PipelineResult:
    """Distance-threshold pseudo-labeling with the same loop shape.

    All cross pairs of unaligned entities with embedding distance below the
    threshold are accepted each iteration, conflicts included; used for the
    pseudo-labeling error comparison. Inference ranks by plain embedding
    distance and predicts by the same threshold rule.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    init_seed, shuffle_seed = _model_seeds(cfg.master_seed, 1)[0]
    trainer = EncoderTrainer(cfg.train, pair.feature_dim, init_seed, shuffle_seed)
    truth_set = set(truth) if truth is not None else None
    working = dict(pair.alignments.items())
    current = pair
    records: list[IterationRecord] = []

    for t in range(1, cfg.iterations + 1):
        if current.unaligned1.size == 0 or current.unaligned2.size == 0:
            break
        losses = trainer.train(current)
        table = encode(trainer.params, current)
        dists = _kernels.pairwise_l1(
            table.g1()[current.unaligned1], table.g2()[current.unaligned2]
        )
        hits = np.argwhere(dists < threshold)
        selected = sorted(
            (int(current.unaligned1[i]), int(current.unaligned2[j])) for i, j in hits
        )
        dec = decompose_errors(selected, truth_set) if truth_set is not None else None
        records.append(
            IterationRecord(
                iteration=t,
                working_size=len(current.alignments),
                model_selected=[len(selected)],
                ensembled=len(selected),
                correct=dec.correct if dec else None,
                conflicted=dec.conflicted if dec else None,
                one_to_one=dec.one_to_one if dec else None,
                mean_loss=_mean(losses),
                sinkhorn_iterations=0,
                sinkhorn_violation=0.0,
                subset_ok=True,
            )
        )
        if not selected:
            break
        prov = f"pseudo:{t}"
        for p in selected:
            working.setdefault(p, prov)
        current = KgPair(
            pair.g1,
            pair.g2,
            pair.features1,
            pair.features2,
            AlignmentSet(working),
            pair.test,
        )

    table = encode(trainer.params, current)
    pool1, pool2 = _candidate_pools(current)
    test_pairs = sorted(current.test)
    if pool1.size and pool2.size:
        cost = _kernels.pairwise_l1(table.g1()[pool1], table.g2()[pool2])
        ranks = _ranks_from_cost(cost, pool1, pool2, test_pairs)
        hits = np.argwhere(cost < threshold)
        predictions = sorted((int(pool1[i]), int(pool2[j])) for i, j in hits)
    else:
        ranks, predictions = [], []
    inference = InferenceResult(test_pairs, ranks, predictions)
    report = RunReport("naive", 1, records, _final_metrics(inference))
    return PipelineResult(table, current, report, inference)
