"""End-to-end training of the assignment model against tracking ground truth.

Labels come from a two-stage construction per frame: active targets are
Hungarian-matched to ground-truth boxes (gated), giving each target a
reference box (its matched ground-truth box when matched, its own motion
prediction otherwise); each detection is then labeled with the most similar
reference box above a gate, or with the null column.  The model's score
matrix is trained against these one-hot rows with a size-normalized
cross-entropy.

Tracker state between frames evolves from a per-detection mix of label- and
model-derived assignments; the mixing probability follows a sigmoid schedule
over epochs so early training sees clean label-driven state and late
training runs on the model's own decisions.  Gradients accumulate over a
fixed number of frames to simulate a batch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .assignment import solve_lap
from .data import SequenceBundle
from .geometry import normalize, pairwise_similarity
from .model import TadnModel, decide_assignments
from .tracker import Decision, Tracker, make_feature_provider

__all__ = [
    "TrainingConfig",
    "DEFAULT_GATES",
    "compute_lam",
    "assignment_loss",
    "p_choice",
    "lam_decisions",
    "EpochStats",
    "train_epoch",
    "train",
    "run_oracle_sequence",
]

DEFAULT_GATES = {"ulbr1": -0.13, "iou": 0.3}


@dataclass
class TrainingConfig:
    metric: str = "ulbr1"
    target_gate: float | None = None  # target-to-ground-truth match gate
    detection_gate: float | None = None  # detection-to-reference label gate
    e_min: int = 2
    e_max: int = 20
    curriculum_scale: float = 12.0
    learning_rate: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_decay_epoch: int | None = None
    accumulation_size: int = 64
    epochs: int = 30
    checkpoint_every: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.metric not in DEFAULT_GATES:
            raise ValueError(f"metric must be one of {sorted(DEFAULT_GATES)}")
        if self.detection_gate is None:
            self.detection_gate = DEFAULT_GATES[self.metric]
        if self.target_gate is None:
            self.target_gate = self.detection_gate
        if self.e_min >= self.e_max:
            raise ValueError("e_min must be < e_max")
        if self.accumulation_size < 1:
            raise ValueError("accumulation_size must be >= 1")


def compute_lam(
    tgt_boxes: np.ndarray,
    gt_boxes: np.ndarray,
    det_boxes: np.ndarray,
    cfg: TrainingConfig,
) -> np.ndarray:
    """One-hot (N, M+1) label matrix for one frame.

    ``tgt_boxes`` are the targets' predicted boxes, ``gt_boxes`` the frame's
    ground truth, ``det_boxes`` the detections, all as corner arrays in one
    coordinate frame.  The last column is the null label; with M = 0 every
    detection is labeled null.
    """
    tgt_boxes = np.asarray(tgt_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    n, m = det_boxes.shape[0], tgt_boxes.shape[0]
    lam = np.zeros((n, m + 1), dtype=np.float64)
    if n == 0:
        return lam
    if m == 0:
        lam[:, 0] = 1.0
        return lam

    reference = tgt_boxes.copy()
    if gt_boxes.shape[0] > 0:
        sim = pairwise_similarity(tgt_boxes, gt_boxes, cfg.metric)
        for ti, gj in solve_lap(sim, cfg.target_gate):
            reference[ti] = gt_boxes[gj]

    sim_det = pairwise_similarity(det_boxes, reference, cfg.metric)
    for i in range(n):
        row = sim_det[i]
        eligible = row >= cfg.detection_gate
        if eligible.any():
            # Lowest column wins ties (argmax over a -inf-masked row).
            j = int(np.argmax(np.where(eligible, row, -np.inf)))
            lam[i, j] = 1.0
        else:
            lam[i, m] = 1.0
    return lam


def assignment_loss(asm: torch.Tensor, lam: torch.Tensor | np.ndarray) -> torch.Tensor:
    """Row-softmax cross-entropy, normalized by N * (M+1)."""
    lam_t = torch.as_tensor(lam, dtype=asm.dtype, device=asm.device)
    if lam_t.shape != asm.shape:
        raise ValueError(
            f"label matrix shape {tuple(lam_t.shape)} does not match score "
            f"matrix shape {tuple(asm.shape)}"
        )
    n, m1 = asm.shape
    log_probs = torch.log_softmax(asm, dim=1)
    return -(lam_t * log_probs).sum() / (n * m1)


def p_choice(epoch: int, cfg: TrainingConfig) -> float:
    """Probability of evolving tracker state from the model's own decision.

    Sigmoid in the epoch index between ``e_min`` and ``e_max``, clamped to
    its ``e_min`` value before the window and exactly 1 after it.
    """
    if epoch > cfg.e_max:
        return 1.0
    e = max(float(epoch), float(cfg.e_min))
    c = cfg.curriculum_scale
    z = -c / 2.0 + c * (e - cfg.e_min) / (cfg.e_max - cfg.e_min)
    return 1.0 / (1.0 + math.exp(-z))


def lam_decisions(lam: np.ndarray) -> list[Decision]:
    """Decisions encoded by a one-hot label matrix.

    Scores are +inf so label-derived assignments always win duplicate
    filtering against model-derived ones when the two are mixed.
    """
    n, m1 = lam.shape
    out: list[Decision] = []
    for i in range(n):
        j = int(np.argmax(lam[i]))
        out.append((None if j == m1 - 1 else j, math.inf))
    return out


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    assignment_accuracy: float
    p_choice: float
    frames: int
    learning_rate: float


def _gt_boxes_normalized(bundle: SequenceBundle, frame: int) -> np.ndarray:
    rows = bundle.gt_for(frame)
    w, h = bundle.image_width, bundle.image_height
    return np.array(
        [normalize(g.box, w, h).to_array() for g in rows], dtype=np.float64
    ).reshape(-1, 4)


def _normalized_detections(bundle: SequenceBundle, frame: int):
    dets = bundle.detections_for(frame)
    w, h = bundle.image_width, bundle.image_height
    boxes_px = [d.box for d in dets]
    boxes = np.array(
        [normalize(b, w, h).to_array() for b in boxes_px], dtype=np.float64
    ).reshape(-1, 4)
    return boxes_px, boxes


def train_sequence(
    model: TadnModel,
    tracker: Tracker,
    bundle: SequenceBundle,
    epoch: int,
    cfg: TrainingConfig,
    optimizer: torch.optim.Optimizer,
    rng: np.random.Generator,
) -> tuple[float, int, int, int]:
    """One pass over one sequence; returns (loss_sum, frames, agree, dets)."""
    if bundle.ground_truth is None:
        raise ValueError(f"{bundle.name}: training requires ground truth")
    provider = None
    if tracker.needs_appearance:
        provider = make_feature_provider(bundle, model.config.appearance_dim)
    p_model = p_choice(epoch, cfg)
    dtype = next(model.parameters()).dtype
    w, h = bundle.image_width, bundle.image_height

    loss_sum = 0.0
    frames_with_loss = 0
    agree = 0
    total_dets = 0
    pending = 0

    for frame in bundle.frames:
        boxes_px, det_boxes = _normalized_detections(bundle, frame)
        features = None
        if provider is not None:
            features = provider.features_for_frame(frame, boxes_px)
        warp = bundle.warp_for(frame).rescaled(1.0 / w, 1.0 / h)
        ctx = tracker.begin_frame(frame, det_boxes, features, warp)

        if ctx.num_detections == 0:
            tracker.commit(ctx, [])
            continue

        gt_boxes = _gt_boxes_normalized(bundle, frame)
        lam = compute_lam(ctx.tgt_boxes, gt_boxes, ctx.det_boxes, cfg)

        det_pos, det_app, tgt_pos, tgt_app = tracker.frame_tensors(ctx, dtype)
        asm = model.compute_scores(det_pos, det_app, tgt_pos, tgt_app)
        loss = assignment_loss(asm, lam)
        (loss / cfg.accumulation_size).backward()
        pending += 1
        if pending == cfg.accumulation_size:
            optimizer.step()
            optimizer.zero_grad()
            pending = 0

        model_dec = decide_assignments(asm)
        label_dec = lam_decisions(lam)
        merged = [
            model_dec[i] if rng.random() < p_model else label_dec[i]
            for i in range(ctx.num_detections)
        ]
        tracker.commit(ctx, merged)

        loss_sum += float(loss.detach())
        frames_with_loss += 1
        total_dets += ctx.num_detections
        agree += sum(
            1 for md, ld in zip(model_dec, label_dec) if md[0] == ld[0]
        )

    # Flush the remainder as a smaller step; no state leaks across sequences.
    if pending:
        optimizer.step()
        optimizer.zero_grad()
    return loss_sum, frames_with_loss, agree, total_dets


def train_epoch(
    model: TadnModel,
    optimizer: torch.optim.Optimizer,
    bundles: list[SequenceBundle],
    epoch: int,
    cfg: TrainingConfig,
    rng: np.random.Generator,
    tracker_factory,
) -> EpochStats:
    """Train over all sequences once (epochs are 1-based)."""
    model.train()
    loss_sum = 0.0
    frames = 0
    agree = 0
    dets = 0
    order = rng.permutation(len(bundles))
    for idx in order:
        bundle = bundles[int(idx)]
        tracker = tracker_factory()
        s_loss, s_frames, s_agree, s_dets = train_sequence(
            model, tracker, bundle, epoch, cfg, optimizer, rng
        )
        loss_sum += s_loss
        frames += s_frames
        agree += s_agree
        dets += s_dets
    model.eval()
    return EpochStats(
        epoch=epoch,
        mean_loss=loss_sum / frames if frames else 0.0,
        assignment_accuracy=agree / dets if dets else 1.0,
        p_choice=p_choice(epoch, cfg),
        frames=frames,
        learning_rate=optimizer.param_groups[0]["lr"],
    )


def train(
    model: TadnModel,
    bundles: list[SequenceBundle],
    cfg: TrainingConfig,
    tracker_factory,
    checkpoint_dir: str | Path | None = None,
    log_path: str | Path | None = None,
    progress=None,
) -> list[EpochStats]:
    """Full training loop with step learning-rate decay and checkpoints."""
    from .checkpoint import save_checkpoint

    rng = np.random.default_rng(cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    history: list[EpochStats] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            lr = cfg.learning_rate
            if cfg.lr_decay_epoch is not None and epoch > cfg.lr_decay_epoch:
                lr *= cfg.lr_decay_factor
            for group in optimizer.param_groups:
                group["lr"] = lr

            stats = train_epoch(
                model, optimizer, bundles, epoch, cfg, rng, tracker_factory
            )
            history.append(stats)
            if log_fh is not None:
                log_fh.write(json.dumps(stats.__dict__) + "\n")
                log_fh.flush()
            if progress is not None:
                progress(stats)
            if checkpoint_dir is not None and (
                epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs
            ):
                save_checkpoint(checkpoint_dir / f"epoch_{epoch:04d}.npz", model)
    finally:
        if log_fh is not None:
            log_fh.close()
    return history


def run_oracle_sequence(
    tracker: Tracker, bundle: SequenceBundle, cfg: TrainingConfig
):
    """Track a sequence with label-derived assignments instead of a model.

    This is the training strategy driving the tracker directly from ground
    truth; it bounds what a trained model can reach under the same labels.
    Returns MOT result rows in pixel coordinates.
    """
    from .data import ResultRow
    from .geometry import BBox, denormalize

    if bundle.ground_truth is None:
        raise ValueError(f"{bundle.name}: oracle tracking requires ground truth")
    w, h = bundle.image_width, bundle.image_height
    for frame in bundle.frames:
        _, det_boxes = _normalized_detections(bundle, frame)
        warp = bundle.warp_for(frame).rescaled(1.0 / w, 1.0 / h)
        ctx = tracker.begin_frame(frame, det_boxes, None, warp)
        if ctx.num_detections == 0:
            tracker.commit(ctx, [])
            continue
        gt_boxes = _gt_boxes_normalized(bundle, frame)
        lam = compute_lam(ctx.tgt_boxes, gt_boxes, ctx.det_boxes, cfg)
        tracker.commit(ctx, lam_decisions(lam))
    return [
        ResultRow(frame, target_id, denormalize(box, w, h))
        for frame, target_id, box in tracker.results
    ]
