"""Point-level (AUROC, FPR@95, AP) and object-level (RecallQ, SQ, RQ, PQ,
UQ) evaluation.

Point-level metrics are threshold-free ranking statistics over per-point
anomaly scores, with ignore-masked points excluded. Object-level metrics
binarize scores at a decision threshold gamma, cluster the flagged points
with DBSCAN, and match predicted clusters to ground-truth anomaly instances
by point-set IoU (a match requires IoU strictly greater than 0.5).
Predictions lying wholly inside ignore regions are not penalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cluster import dbscan
from .core import ContractError, LabelMap, PointCloud, Role, ScoreField
from .scoring import classify

__all__ = [
    "EvalConfig", "MatchResult",
    "auroc", "fpr_at_95_tpr", "average_precision",
    "cluster_predictions", "match_instances", "panoptic_scores",
    "evaluate_scenes", "threshold_at_tpr", "write_report", "read_report",
]

IOU_THRESHOLD = 0.5  # protocol constant


@dataclass(frozen=True)
class EvalConfig:
    gamma: float = 0.0
    dbscan_eps: float = 0.5
    dbscan_min_pts: int = 5
    iou_threshold: float = IOU_THRESHOLD

    def __post_init__(self):
        if self.iou_threshold != IOU_THRESHOLD:
            raise ContractError("the instance-matching IoU threshold is fixed at 0.5")


@dataclass(frozen=True, eq=False)
class MatchResult:
    """Outcome of matching predicted clusters to ground-truth instances.

    tp holds (pred index, gt instance id, IoU) triples; fp holds unmatched
    pred indices; fn holds unmatched gt instance ids. Each prediction and
    each gt instance appears in at most one of the three."""

    tp: tuple[tuple[int, int, float], ...]
    fp: tuple[int, ...]
    fn: tuple[int, ...]


def _validated(scores: ScoreField, is_ood, ignore) -> tuple[np.ndarray, np.ndarray]:
    s = scores.scores
    is_ood = np.asarray(is_ood, dtype=bool)
    if ignore is None:
        ignore = np.zeros_like(is_ood)
    ignore = np.asarray(ignore, dtype=bool)
    if not (s.shape == is_ood.shape == ignore.shape):
        raise ContractError("scores, is_ood, and ignore must have equal length")
    keep = ~ignore
    return s[keep], is_ood[keep]


def auroc(scores: ScoreField, is_ood, ignore=None) -> float:
    """Probability that an OOD point outscores an ID point, ties counting
    half (Mann-Whitney rank statistic)."""
    s, pos = _validated(scores, is_ood, ignore)
    n_pos = int(pos.sum())
    n_neg = int(pos.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ContractError("AUROC undefined: need at least one OOD and one ID point")

    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    # average 1-based ranks over tie blocks
    breaks = np.flatnonzero(np.diff(s_sorted) != 0)
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks, [s.size - 1]])
    avg_rank = 0.5 * (starts + ends) + 1.0
    block_of = np.repeat(np.arange(starts.size), ends - starts + 1)
    ranks = np.empty(s.size, dtype=np.float64)
    ranks[order] = avg_rank[block_of]
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def fpr_at_95_tpr(scores: ScoreField, is_ood, ignore=None, tpr: float = 0.95) -> float:
    """False-positive rate at the largest threshold reaching the target TPR.

    Candidate thresholds are the unique score values (scanned descending)
    plus -inf; a point is flagged when its score strictly exceeds the
    threshold."""
    s, pos = _validated(scores, is_ood, ignore)
    n_pos = int(pos.sum())
    n_neg = int(pos.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ContractError("FPR@TPR undefined: need at least one OOD and one ID point")

    tp_above, fp_above = _counts_above_candidates(s, pos)
    hit = np.flatnonzero(tp_above / n_pos >= tpr)[0]
    return float(fp_above[hit] / n_neg)


def _counts_above_candidates(s: np.ndarray, pos: np.ndarray):
    """For candidate thresholds at the unique score values (descending) plus
    -inf, the number of positives / negatives strictly above each."""
    order = np.argsort(-s, kind="stable")
    pos_sorted = pos[order]
    s_sorted = s[order]
    breaks = np.flatnonzero(np.diff(s_sorted) != 0)
    starts = np.concatenate([[0], breaks + 1])  # block start per unique value
    cum_tp = np.concatenate([[0], np.cumsum(pos_sorted)])
    tp_above = np.concatenate([cum_tp[starts], [int(pos.sum())]]).astype(np.float64)
    n_above = np.concatenate([starts, [s.size]]).astype(np.float64)
    return tp_above, n_above - tp_above


def average_precision(scores: ScoreField, is_ood, ignore=None) -> float:
    """Step-interpolated area under the precision-recall curve.

    Thresholds sweep the unique score values descending; tied scores are
    processed as one block."""
    s, pos = _validated(scores, is_ood, ignore)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ContractError("AP undefined: need at least one OOD point")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    pos_sorted = pos[order]
    # block boundaries where the sorted score changes
    boundary = np.flatnonzero(np.diff(s_sorted) != 0)
    ends = np.concatenate([boundary, [s.size - 1]])

    cum_tp = np.cumsum(pos_sorted)
    tp = cum_tp[ends].astype(np.float64)
    precision = tp / (ends + 1)
    recall = tp / n_pos
    return float(np.sum(np.diff(recall, prepend=0.0) * precision))


def threshold_at_tpr(scores: ScoreField, is_ood, ignore=None, tpr: float = 0.95) -> float:
    """Largest gamma whose strict-> classification reaches the target TPR."""
    s, pos = _validated(scores, is_ood, ignore)
    if not pos.any():
        raise ContractError("threshold calibration needs at least one OOD point")
    candidates = np.concatenate([np.unique(s)[::-1], [-np.inf]])
    tp_above, _ = _counts_above_candidates(s, pos)
    hit = np.flatnonzero(tp_above / pos.sum() >= tpr)[0]
    return float(candidates[hit])


def cluster_predictions(
    scores: ScoreField, cloud: PointCloud, cfg: EvalConfig
) -> list[np.ndarray]:
    """Binarize at cfg.gamma, DBSCAN the flagged points, and return one
    original-index array per non-noise cluster. Noise points are discarded."""
    flagged = np.flatnonzero(classify(scores, cfg.gamma))
    if flagged.size == 0:
        return []
    assign = dbscan(cloud.points[flagged], eps=cfg.dbscan_eps, min_pts=cfg.dbscan_min_pts)
    return [flagged[assign.cluster_id == cid] for cid in range(assign.num_clusters)]


def _gt_instances(gt: LabelMap) -> dict[int, np.ndarray]:
    ood = np.isin(gt.role, (Role.AUX_OOD, Role.REAL_OOD))
    out: dict[int, np.ndarray] = {}
    for inst in np.unique(gt.instance[ood]):
        out[int(inst)] = np.flatnonzero(ood & (gt.instance == inst))
    return out


def match_instances(
    pred_instances: list[np.ndarray], gt: LabelMap, ignore=None
) -> MatchResult:
    """Greedy one-to-one matching of predicted clusters to gt anomaly
    instances in descending IoU order (ties by ascending gt then pred id);
    pairs with IoU > 0.5 become true positives.

    Ignore-masked points are removed from both sides before IoU. Unmatched
    predictions lying wholly inside the ignore mask are dropped; other
    unmatched predictions are false positives, and unmatched gt instances
    are false negatives."""
    if ignore is None:
        ignore = gt.role == Role.IGNORE
    ignore = np.asarray(ignore, dtype=bool)

    preds = [np.asarray(p)[~ignore[np.asarray(p)]] for p in pred_instances]
    gt_sets = {g: idx[~ignore[idx]] for g, idx in _gt_instances(gt).items()}
    gt_sets = {g: idx for g, idx in gt_sets.items() if idx.size}

    pairs = []
    for pi, p in enumerate(preds):
        if p.size == 0:
            continue
        pset = set(p.tolist())
        for g, gidx in gt_sets.items():
            inter = len(pset.intersection(gidx.tolist()))
            if inter == 0:
                continue
            union = p.size + gidx.size - inter
            pairs.append((inter / union, g, pi))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))

    tp = []
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    for iou, g, pi in pairs:
        if iou <= IOU_THRESHOLD:
            break
        if pi in used_pred or g in used_gt:
            continue
        tp.append((pi, g, float(iou)))
        used_pred.add(pi)
        used_gt.add(g)

    fp = tuple(pi for pi, p in enumerate(preds) if pi not in used_pred and p.size > 0)
    fn = tuple(g for g in gt_sets if g not in used_gt)
    return MatchResult(tp=tuple(tp), fp=fp, fn=fn)


def panoptic_scores(match: MatchResult) -> dict[str, float]:
    """SQ, RQ, PQ, RecallQ, UQ from one match result; 0/0 counts as 0."""
    n_tp, n_fp, n_fn = len(match.tp), len(match.fp), len(match.fn)
    sq = float(np.mean([iou for _, _, iou in match.tp])) if n_tp else 0.0
    denom_rq = n_tp + 0.5 * n_fp + 0.5 * n_fn
    rq = n_tp / denom_rq if denom_rq > 0 else 0.0
    recall_q = n_tp / (n_tp + n_fn) if (n_tp + n_fn) > 0 else 0.0
    return {
        "SQ": sq,
        "RQ": rq,
        "PQ": sq * rq,
        "RecallQ": recall_q,
        "UQ": sq * recall_q,
    }


def evaluate_scenes(
    scenes: list[tuple[PointCloud, LabelMap, ScoreField]], cfg: EvalConfig
) -> dict[str, float]:
    """Point-level metrics pooled over all scenes; object-level matches
    aggregated (TP/FP/FN summed) before the panoptic scores."""
    all_scores, all_pos, all_ignore = [], [], []
    tp: list[tuple[int, int, float]] = []
    n_fp = n_fn = 0
    for cloud, labels, scores in scenes:
        if not (cloud.count == labels.count == scores.count):
            raise ContractError("scene cloud/labels/scores lengths disagree")
        all_scores.append(scores.scores)
        all_pos.append(np.isin(labels.role, (Role.AUX_OOD, Role.REAL_OOD)))
        all_ignore.append(labels.role == Role.IGNORE)
        preds = cluster_predictions(scores, cloud, cfg)
        match = match_instances(preds, labels)
        tp.extend(match.tp)
        n_fp += len(match.fp)
        n_fn += len(match.fn)

    pooled = ScoreField(scores=np.concatenate(all_scores))
    pos = np.concatenate(all_pos)
    ignore = np.concatenate(all_ignore)
    merged = MatchResult(tp=tuple(tp), fp=tuple(range(n_fp)), fn=tuple(range(n_fn)))

    out = {
        "AUROC": auroc(pooled, pos, ignore),
        "FPR@95": fpr_at_95_tpr(pooled, pos, ignore),
        "AP": average_precision(pooled, pos, ignore),
    }
    out.update(panoptic_scores(merged))
    return out


# --------------------------------------------------------------------------
# report: canonical key-sorted "key = value" text
# --------------------------------------------------------------------------

def write_report(metrics: dict, config: dict, path) -> None:
    """Deterministic, key-sorted report containing every metric and every
    config/provenance value."""
    entries: dict[str, str] = {}
    for k, v in metrics.items():
        entries[f"metric.{k}"] = _fmt(v)
    for k, v in config.items():
        entries[f"config.{k}"] = _fmt(v)
    lines = [f"{k} = {entries[k]}" for k in sorted(entries)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_report(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition(" = ")
            out[key] = value
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)
