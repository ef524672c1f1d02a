"""CLEAR multi-object tracking metrics.

Per frame, existing ground-truth/prediction correspondences from the
previous frame are kept while still inside the IoU gate; the remainder are
matched fresh by maximum-IoU Hungarian matching.  Unmatched predictions are
false positives, unmatched ground truth boxes false negatives, and a ground
truth identity re-matched to a different prediction id than its most recent
one is an identity switch.

Trajectory-level statistics follow benchmark conventions: a ground-truth
trajectory is mostly tracked when at least 80% of its frames are covered,
mostly lost at 20% or less, and fragmentations count covered-to-uncovered
transitions inside its covered span.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assignment import solve_lap
from .data import GtBox, ResultRow
from .geometry import pairwise_iou

__all__ = ["SequenceMetrics", "ClearReport", "evaluate", "evaluate_many"]

DEFAULT_IOU_GATE = 0.5
MT_COVERAGE = 0.8
ML_COVERAGE = 0.2


@dataclass
class SequenceMetrics:
    name: str = ""
    num_gt_boxes: int = 0
    num_gt_trajectories: int = 0
    num_matches: int = 0
    sum_match_iou: float = 0.0
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    frag: int = 0
    mostly_tracked: int = 0
    mostly_lost: int = 0

    @property
    def mota(self) -> float:
        denom = max(self.num_gt_boxes, 1)
        return 1.0 - (self.fn + self.fp + self.idsw) / denom

    @property
    def motp(self) -> float:
        return self.sum_match_iou / self.num_matches if self.num_matches else 0.0

    @property
    def mt_percent(self) -> float:
        denom = max(self.num_gt_trajectories, 1)
        return 100.0 * self.mostly_tracked / denom

    @property
    def ml_percent(self) -> float:
        denom = max(self.num_gt_trajectories, 1)
        return 100.0 * self.mostly_lost / denom

    def merged_with(self, other: "SequenceMetrics", name: str) -> "SequenceMetrics":
        return SequenceMetrics(
            name=name,
            num_gt_boxes=self.num_gt_boxes + other.num_gt_boxes,
            num_gt_trajectories=self.num_gt_trajectories + other.num_gt_trajectories,
            num_matches=self.num_matches + other.num_matches,
            sum_match_iou=self.sum_match_iou + other.sum_match_iou,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            idsw=self.idsw + other.idsw,
            frag=self.frag + other.frag,
            mostly_tracked=self.mostly_tracked + other.mostly_tracked,
            mostly_lost=self.mostly_lost + other.mostly_lost,
        )


@dataclass
class ClearReport:
    sequences: list[SequenceMetrics] = field(default_factory=list)

    @property
    def overall(self) -> SequenceMetrics:
        total = SequenceMetrics(name="OVERALL")
        for seq in self.sequences:
            total = total.merged_with(seq, "OVERALL")
        return total

    def as_table(self) -> str:
        headers = [
            "Sequence", "MOTA", "MOTP", "MT%", "ML%", "FP", "FN", "IDSW", "Frag", "GT",
        ]
        rows = [headers]
        for m in [*self.sequences, self.overall]:
            rows.append(
                [
                    m.name,
                    f"{m.mota:.4f}",
                    f"{m.motp:.4f}",
                    f"{m.mt_percent:.1f}",
                    f"{m.ml_percent:.1f}",
                    str(m.fp),
                    str(m.fn),
                    str(m.idsw),
                    str(m.frag),
                    str(m.num_gt_boxes),
                ]
            )
        widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)

    def as_keyvalues(self) -> str:
        lines = []
        for m in [*self.sequences, self.overall]:
            for key, value in (
                ("mota", f"{m.mota:.6f}"),
                ("motp", f"{m.motp:.6f}"),
                ("mt_percent", f"{m.mt_percent:.6f}"),
                ("ml_percent", f"{m.ml_percent:.6f}"),
                ("fp", m.fp),
                ("fn", m.fn),
                ("idsw", m.idsw),
                ("frag", m.frag),
                ("gt_boxes", m.num_gt_boxes),
                ("gt_trajectories", m.num_gt_trajectories),
            ):
                lines.append(f"{m.name}.{key}={value}")
        return "\n".join(lines) + "\n"


def evaluate(
    predictions: list[ResultRow],
    ground_truth: dict[int, list[GtBox]],
    iou_gate: float = DEFAULT_IOU_GATE,
    name: str = "",
) -> SequenceMetrics:
    """Score one sequence's predictions against its ground truth."""
    preds_by_frame: dict[int, list[ResultRow]] = {}
    for row in predictions:
        preds_by_frame.setdefault(row.frame, []).append(row)

    frames = sorted(set(ground_truth) | set(preds_by_frame))
    metrics = SequenceMetrics(name=name)
    last_match: dict[int, int] = {}  # gt id -> most recent matched pred id
    prev_pairs: dict[int, int] = {}  # gt id -> pred id matched in prev frame
    gt_frames: dict[int, list[int]] = {}
    covered: dict[int, set[int]] = {}

    for frame in frames:
        gts = ground_truth.get(frame, [])
        preds = preds_by_frame.get(frame, [])
        metrics.num_gt_boxes += len(gts)
        for g in gts:
            gt_frames.setdefault(g.target_id, []).append(frame)

        if gts and preds:
            gt_boxes = np.array([g.box.to_array() for g in gts])
            pred_boxes = np.array([p.box.to_array() for p in preds])
            iou = pairwise_iou(gt_boxes, pred_boxes)
        else:
            iou = np.zeros((len(gts), len(preds)))

        pred_index = {p.target_id: j for j, p in enumerate(preds)}
        matched_g: dict[int, int] = {}
        used_p: set[int] = set()

        # Keep still-valid pairs from the previous frame.
        for gi, g in enumerate(gts):
            pid = prev_pairs.get(g.target_id)
            if pid is None or pid not in pred_index:
                continue
            pj = pred_index[pid]
            if pj in used_p:
                continue
            if iou[gi, pj] >= iou_gate:
                matched_g[gi] = pj
                used_p.add(pj)

        # Hungarian over the remainder, gated on IoU.
        free_g = [gi for gi in range(len(gts)) if gi not in matched_g]
        free_p = [pj for pj in range(len(preds)) if pj not in used_p]
        if free_g and free_p:
            sub = iou[np.ix_(free_g, free_p)]
            for ri, cj in solve_lap(sub, iou_gate):
                gi, pj = free_g[ri], free_p[cj]
                matched_g[gi] = pj
                used_p.add(pj)

        prev_pairs = {}
        for gi, pj in matched_g.items():
            g = gts[gi]
            pid = preds[pj].target_id
            metrics.num_matches += 1
            metrics.sum_match_iou += float(iou[gi, pj])
            if g.target_id in last_match and last_match[g.target_id] != pid:
                metrics.idsw += 1
            last_match[g.target_id] = pid
            prev_pairs[g.target_id] = pid
            covered.setdefault(g.target_id, set()).add(frame)

        metrics.fp += len(preds) - len(matched_g)
        metrics.fn += len(gts) - len(matched_g)

    metrics.num_gt_trajectories = len(gt_frames)
    for gt_id, present in gt_frames.items():
        hit = covered.get(gt_id, set())
        ratio = len(hit) / len(present)
        if ratio >= MT_COVERAGE:
            metrics.mostly_tracked += 1
        if ratio <= ML_COVERAGE:
            metrics.mostly_lost += 1
        if hit:
            first, last = min(hit), max(hit)
            span = [f for f in present if first <= f <= last]
            for a, b in zip(span, span[1:]):
                if a in hit and b not in hit:
                    metrics.frag += 1
    return metrics


def evaluate_many(
    per_sequence: dict[str, tuple[list[ResultRow], dict[int, list[GtBox]]]],
    iou_gate: float = DEFAULT_IOU_GATE,
) -> ClearReport:
    report = ClearReport()
    for seq_name in sorted(per_sequence):
        predictions, ground_truth = per_sequence[seq_name]
        report.sequences.append(
            evaluate(predictions, ground_truth, iou_gate, name=seq_name)
        )
    return report
