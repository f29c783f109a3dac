"""
Generalized CZSL evaluation
Calibration-bias sweep over a score matrix, seen/unseen accuracy curve, AUC, best harmonic
mean and attribute/object accuracy on unseen pairs.

Correctness at bias b is defined through score differences so that every
comparison is exact: for a row whose true pair is unseen, a seen column beats
it when (s_j - s_true) > b; for a row whose true pair is seen, an unseen
column beats it when (s_true - s_j) <= b. Columns in the same group as the
true pair compare by raw score, ties going to the lower column index.
"""

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, ContractError, ProtocolError

logger = logging.getLogger(__name__)

Pair = Tuple[str, str]


@dataclass
class ScoreMatrix:
    scores: np.ndarray      # (N, P)
    seen: np.ndarray        # (P,) bool, column is a training pair
    truth: np.ndarray       # (N,) column index of each row's true pair
    pairs: List[Pair] = field(default_factory=list)
    sample_ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.seen = np.asarray(self.seen, dtype=bool)
        self.truth = np.asarray(self.truth, dtype=np.int64)
        if self.scores.ndim != 2 or self.scores.shape[1] != self.seen.shape[0]:
            raise ContractError(f"score matrix {self.scores.shape} does not match {self.seen.shape[0]} column flags")
        if self.truth.shape[0] != self.scores.shape[0]:
            raise ContractError("every row needs a true column")
        if self.truth.size and (self.truth.min() < 0 or self.truth.max() >= self.scores.shape[1]):
            raise ContractError("true pair is not a column of the score matrix")
        if not np.all(np.isfinite(self.scores)):
            raise ContractError("score matrix has non-finite entries")

    @property
    def seen_rows(self) -> np.ndarray:
        return self.seen[self.truth]

    def true_scores(self) -> np.ndarray:
        return self.scores[np.arange(len(self.truth)), self.truth]


@dataclass
class BiasSweepResult:
    biases: np.ndarray
    seen_accuracy: np.ndarray
    unseen_accuracy: np.ndarray
    k: int = 1

    def points(self) -> List[Tuple[float, float, float]]:
        return list(zip(self.biases.tolist(), self.seen_accuracy.tolist(), self.unseen_accuracy.tolist()))


@dataclass
class MetricsReport:
    split: str
    auc: Dict[int, float]
    hm: float
    seen: float
    unseen: float
    attr: float
    obj: float
    best_bias: float
    num_samples: int = 0
    num_pairs: int = 0

    def to_json(self) -> dict:
        pct = lambda x: round(100.0 * float(x), 4)  # noqa: E731
        return {
            "split": self.split,
            "auc": {str(k): pct(v) for k, v in sorted(self.auc.items())},
            "best_hm": pct(self.hm),
            "best_seen": pct(self.seen),
            "best_unseen": pct(self.unseen),
            "attr_acc": pct(self.attr),
            "obj_acc": pct(self.obj),
            "best_bias": _bias_json(self.best_bias),
            "num_samples": self.num_samples,
            "num_pairs": self.num_pairs,
        }


def _bias_json(bias: float):
    if math.isinf(bias):
        return "inf" if bias > 0 else "-inf"
    return float(bias)


def _check_protocol(sm: ScoreMatrix) -> None:
    seen_rows = sm.seen_rows
    if not seen_rows.any() or seen_rows.all():
        raise ProtocolError("evaluation needs rows with seen and rows with unseen true pairs")
    if not sm.seen.any() or sm.seen.all():
        raise ProtocolError("evaluation needs both seen and unseen candidate columns")


def candidate_biases(sm: ScoreMatrix) -> np.ndarray:
    """-inf, the sorted unique (best seen score - true score) over unseen-true rows, +inf."""
    _check_protocol(sm)
    rows = np.flatnonzero(~sm.seen_rows)
    diff = sm.scores[rows][:, sm.seen] - sm.true_scores()[rows][:, None]
    gaps = np.unique(diff.max(axis=1))
    return np.concatenate([[-np.inf], gaps, [np.inf]])


def _same_group_beaters(sm: ScoreMatrix) -> np.ndarray:
    n, p = sm.scores.shape
    true = sm.true_scores()[:, None]
    cols = np.arange(p)[None, :]
    same = sm.seen[None, :] == sm.seen_rows[:, None]
    beats = (sm.scores > true) | ((sm.scores == true) & (cols < sm.truth[:, None]))
    return (beats & same).sum(axis=1)


def _row_thresholds(sm: ScoreMatrix, k: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Per-row bias thresholds for top-k correctness.

    Unseen-true rows are correct iff bias >= threshold; seen-true rows iff
    bias < threshold. Rows that can never be correct get `never`; seen rows
    that are correct at every bias get threshold +inf and `always`.
    """
    n = len(sm.truth)
    fixed = _same_group_beaters(sm)
    room = k - fixed
    never = room <= 0
    always = np.zeros(n, dtype=bool)
    threshold = np.full(n, np.inf)
    diff = sm.scores - sm.true_scores()[:, None]
    seen_cols, unseen_cols = np.flatnonzero(sm.seen), np.flatnonzero(~sm.seen)
    for i in range(n):
        if never[i]:
            continue
        r = int(room[i])
        if sm.seen[sm.truth[i]]:
            margins = np.sort(-diff[i, unseen_cols])
            if len(margins) < r:
                always[i] = True
            else:
                threshold[i] = margins[r - 1]
        else:
            margins = np.sort(diff[i, seen_cols])[::-1]
            threshold[i] = -np.inf if len(margins) < r else margins[r - 1]
    return threshold, never, always


def bias_sweep(sm: ScoreMatrix, k: int = 1, biases: Optional[np.ndarray] = None) -> BiasSweepResult:
    """Seen/unseen top-k accuracy at every candidate bias (the k=1 construction unless given)."""
    if k <= 0:
        raise ConfigError(f"top-k must be positive, got {k}")
    if biases is None:
        biases = candidate_biases(sm)
    else:
        _check_protocol(sm)
    threshold, never, always = _row_thresholds(sm, k)
    seen_rows = sm.seen_rows

    s_thr = np.sort(threshold[seen_rows & ~never & ~always])
    u_thr = np.sort(threshold[~seen_rows & ~never])
    n_seen, n_unseen = int(seen_rows.sum()), int((~seen_rows).sum())
    n_always = int((seen_rows & always).sum())

    # seen rows correct iff b < threshold; unseen rows iff b >= threshold
    seen_correct = n_always + (len(s_thr) - np.searchsorted(s_thr, biases, side="right"))
    unseen_correct = np.searchsorted(u_thr, biases, side="right")
    return BiasSweepResult(
        biases=np.asarray(biases, dtype=np.float64),
        seen_accuracy=seen_correct / n_seen,
        unseen_accuracy=unseen_correct / n_unseen,
        k=k,
    )


def auc(curve: BiasSweepResult) -> float:
    """Trapezoidal area under unseen (y) vs seen (x), closed to (0, max unseen) and (max seen, 0)."""
    if len(curve.biases) == 0:
        raise ContractError("cannot integrate an empty curve")
    order = np.argsort(curve.biases, kind="stable")[::-1]
    x = curve.seen_accuracy[order]
    y = curve.unseen_accuracy[order]
    x = np.concatenate([[0.0], x, [x.max()]])
    y = np.concatenate([[y.max()], y, [0.0]])
    return float(np.trapezoid(y, x))


def best_harmonic_mean(curve: BiasSweepResult) -> Tuple[float, float]:
    s, u = curve.seen_accuracy, curve.unseen_accuracy
    total = s + u
    hm = np.divide(2.0 * s * u, total, out=np.zeros_like(total, dtype=np.float64), where=total > 0)
    best = int(np.argmax(hm))
    return float(hm[best]), float(curve.biases[best])


def top_predictions(sm: ScoreMatrix, bias: float, n: int = 1) -> np.ndarray:
    """(N, n) column indices ranked at `bias`: unseen column u precedes seen column s iff s_s - s_u <= bias."""
    seen_cols, unseen_cols = np.flatnonzero(sm.seen), np.flatnonzero(~sm.seen)
    n = min(n, sm.scores.shape[1])
    out = np.zeros((len(sm.truth), n), dtype=np.int64)
    for i, row in enumerate(sm.scores):
        seen_order = seen_cols[np.lexsort((seen_cols, -row[seen_cols]))]
        unseen_order = unseen_cols[np.lexsort((unseen_cols, -row[unseen_cols]))]
        a = b = 0
        for slot in range(n):
            if b < len(unseen_order) and (a >= len(seen_order) or row[seen_order[a]] - row[unseen_order[b]] <= bias):
                out[i, slot] = unseen_order[b]
                b += 1
            else:
                out[i, slot] = seen_order[a]
                a += 1
    return out


def attr_obj_accuracy(sm: ScoreMatrix, bias: float) -> Tuple[float, float]:
    """Top-1 attribute and object accuracy over rows whose true pair is unseen."""
    rows = np.flatnonzero(~sm.seen_rows)
    if rows.size == 0:
        raise ProtocolError("no rows with unseen true pairs")
    predicted = top_predictions(sm, bias, 1)[rows, 0]
    attr_hits = sum(sm.pairs[p][0] == sm.pairs[t][0] for p, t in zip(predicted, sm.truth[rows]))
    obj_hits = sum(sm.pairs[p][1] == sm.pairs[t][1] for p, t in zip(predicted, sm.truth[rows]))
    return attr_hits / rows.size, obj_hits / rows.size


def evaluate(sm: ScoreMatrix, ks: Sequence[int] = (1, 3, 5), split: str = "val") -> Tuple[MetricsReport, List[BiasSweepResult]]:
    """AUC for every k on the shared candidate biases; HM and attribute/object accuracy from top-1."""
    if not ks or any(k <= 0 or k > sm.scores.shape[1] for k in ks):
        raise ConfigError(f"eval.ks must be positive and at most {sm.scores.shape[1]}, got {list(ks)}")
    biases = candidate_biases(sm)
    curves = [bias_sweep(sm, k, biases) for k in sorted(set(ks))]
    top1 = bias_sweep(sm, 1, biases)
    hm, best_bias = best_harmonic_mean(top1)
    attr_acc, obj_acc = attr_obj_accuracy(sm, best_bias)
    report = MetricsReport(
        split=split,
        auc={c.k: auc(c) for c in curves},
        hm=hm,
        seen=float(top1.seen_accuracy.max()),
        unseen=float(top1.unseen_accuracy.max()),
        attr=attr_acc,
        obj=obj_acc,
        best_bias=best_bias,
        num_samples=len(sm.truth),
        num_pairs=sm.scores.shape[1],
    )
    logger.info(
        f"Evaluated {split}: " + " ".join(f"AUC@{k}={v:.4f}" for k, v in report.auc.items())
        + f" HM={hm:.4f} attr={attr_acc:.4f} obj={obj_acc:.4f}"
    )
    return report, curves


def build_score_matrix(model, store, split_spec, split: str = "val", workers: int = 1,
                       batch_size: int = 256) -> ScoreMatrix:
    """Main-branch scores of every sample in `split` against the split's candidate pairs."""
    pairs, seen = split_spec.candidate_pairs(split)
    column = {p: j for j, p in enumerate(pairs)}
    ids = list(split_spec.sample_ids(split))
    truth = np.array([column[split_spec.labels[s]] for s in ids], dtype=np.int64)
    anchors = model.pair_anchors(pairs)
    batches = [ids[i:i + batch_size] for i in range(0, len(ids), batch_size)]

    def score(batch: List[str]) -> np.ndarray:
        return model.forward_infer(store.stack(batch), pairs, anchors=anchors)

    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(score, batches))
    else:
        parts = [score(b) for b in batches]
    scores = np.concatenate(parts, axis=0) if parts else np.zeros((0, len(pairs)))
    logger.info(f"Scored {len(ids)} {split} samples against {len(pairs)} pairs with {workers} worker(s)")
    return ScoreMatrix(scores, np.array(seen), truth, list(pairs), ids)


def write_report(path: Union[str, Path], reports: Sequence[MetricsReport]) -> None:
    payload = {r.split: r.to_json() for r in reports}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_curves(path: Union[str, Path], curves: Sequence[BiasSweepResult], split: str) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "k", "bias", "seen", "unseen"])
        for curve in curves:
            for bias, s, u in curve.points():
                writer.writerow([split, curve.k, repr(bias), repr(s), repr(u)])


def write_predictions(path: Union[str, Path], sm: ScoreMatrix, bias: float, top: int = 3) -> None:
    ranked = top_predictions(sm, bias, top)
    name = lambda j: f"{sm.pairs[j][0]} {sm.pairs[j][1]}"  # noqa: E731
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "truth"] + [f"pred{i + 1}" for i in range(ranked.shape[1])])
        for sid, t, row in zip(sm.sample_ids, sm.truth, ranked):
            writer.writerow([sid, name(t)] + [name(j) for j in row])
