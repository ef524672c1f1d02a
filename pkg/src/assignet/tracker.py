"""Online tracking loop.

Per frame: warp existing targets for camera motion, predict their boxes,
run the assignment model over (detections, targets), resolve duplicate
assignments by score, then update, terminate and spawn targets.

Targets are never revived: once terminated a trajectory is final, and ids
are never reused.  The tolerated number of consecutive missed frames grows
with a target's hit count -- young tracks die fast, established ones may
coast on motion prediction.

The tracker operates in [0, 1]-normalized coordinates; callers normalize
detections and rescale warps (see :func:`run_sequence`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .appearance import AppearanceState, PatchHistogramProvider, PrecomputedFeatureProvider
from .data import InputError, ResultRow, SequenceBundle
from .geometry import BBox, Warp2D, denormalize, normalize
from .model import TadnModel, decide_assignments
from .motion import KalmanParams, make_motion_model

__all__ = [
    "LifecycleConfig",
    "TrackerConfig",
    "Target",
    "FrameContext",
    "Tracker",
    "termination_threshold",
    "filter_duplicates",
    "run_sequence",
    "make_feature_provider",
]

Decision = tuple[int | None, float]
ValidAssignment = tuple[int, int | None, float]


@dataclass
class LifecycleConfig:
    """Target spawn/termination knobs."""

    min_miss_tolerance: float = 3.0
    max_miss_tolerance: float = 30.0
    hits_for_max_tolerance: int = 100
    confidence_floor: float = 0.3

    def __post_init__(self) -> None:
        if self.min_miss_tolerance > self.max_miss_tolerance:
            raise ValueError("min_miss_tolerance must be <= max_miss_tolerance")
        if self.hits_for_max_tolerance < 1:
            raise ValueError("hits_for_max_tolerance must be >= 1")


@dataclass
class TrackerConfig:
    motion_model: str = "kalman"
    cmc_enabled: bool = True
    write_unassigned: bool = True
    lifecycle: LifecycleConfig = field(default_factory=LifecycleConfig)
    kalman: KalmanParams = field(default_factory=KalmanParams)


def termination_threshold(hits: int, cfg: LifecycleConfig) -> float:
    """Miss tolerance as a smooth function of lifetime hits.

    Transitions from the minimum to the maximum tolerance as hits go from 0
    to ``hits_for_max_tolerance``; hits outside that range are clamped.
    """
    if hits < 0:
        raise ValueError(f"hits must be >= 0, got {hits}")
    h_max = cfg.hits_for_max_tolerance
    h = min(max(float(hits), 0.0), float(h_max))
    span = cfg.max_miss_tolerance - cfg.min_miss_tolerance
    z = 15.0 * (h / h_max - 0.5)
    return cfg.min_miss_tolerance + span / (1.0 + math.exp(-z))


class Target:
    """One tracked object and its full per-run history."""

    __slots__ = (
        "target_id",
        "motion",
        "appearance",
        "hits",
        "misses",
        "active",
        "spawn_frame",
        "trajectory",
    )

    def __init__(
        self,
        target_id: int,
        motion,
        appearance: AppearanceState | None,
        spawn_frame: int,
    ) -> None:
        self.target_id = target_id
        self.motion = motion
        self.appearance = appearance
        self.hits = 1
        self.misses = 0
        self.active = True
        self.spawn_frame = spawn_frame
        self.trajectory: list[tuple[int, BBox]] = []


@dataclass
class FrameContext:
    """Inputs assembled for one frame, shared by inference and training."""

    frame_id: int
    det_boxes: np.ndarray  # (N, 4) normalized corners
    det_features: np.ndarray | None  # (N, F) or None
    targets: list[Target]  # active targets, local index order
    tgt_boxes: np.ndarray  # (M, 4) predicted normalized corners
    tgt_features: np.ndarray | None  # (M, F) or None

    @property
    def num_detections(self) -> int:
        return self.det_boxes.shape[0]

    @property
    def num_targets(self) -> int:
        return len(self.targets)


def filter_duplicates(decisions: list[Decision]) -> list[ValidAssignment]:
    """Resolve per-target conflicts by keeping the highest-scoring detection.

    Null decisions never conflict and all survive.  Losing detections are
    discarded entirely (they neither update a target nor spawn).  Score ties
    keep the lowest detection index.
    """
    best: dict[int, ValidAssignment] = {}
    valid: list[ValidAssignment] = []
    for det_idx, (tgt_idx, score) in enumerate(decisions):
        if tgt_idx is None:
            valid.append((det_idx, None, score))
        elif tgt_idx not in best or score > best[tgt_idx][2]:
            best[tgt_idx] = (det_idx, tgt_idx, score)
    valid.extend(best.values())
    valid.sort()
    return valid


class Tracker:
    """Tracks one sequence; construct a fresh instance per sequence."""

    def __init__(self, model: TadnModel | None, config: TrackerConfig | None = None):
        self.model = model
        self.config = config or TrackerConfig()
        self.targets: list[Target] = []
        self.results: list[tuple[int, int, BBox]] = []
        self._next_id = 1

    @property
    def needs_appearance(self) -> bool:
        return self.model is not None and self.model.config.uses_appearance

    @property
    def active_targets(self) -> list[Target]:
        return [t for t in self.targets if t.active]

    def begin_frame(
        self,
        frame_id: int,
        det_boxes: np.ndarray,
        det_features: np.ndarray | None,
        warp: Warp2D | None = None,
    ) -> FrameContext:
        """Warp and predict all active targets; bundle the frame inputs."""
        det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
        n = det_boxes.shape[0]
        if self.needs_appearance:
            if det_features is None:
                raise InputError(
                    f"frame {frame_id}: appearance features required but missing"
                )
            det_features = np.asarray(det_features, dtype=np.float64)
            if det_features.shape[0] != n:
                raise InputError(
                    f"frame {frame_id}: {n} detections but "
                    f"{det_features.shape[0]} feature rows"
                )

        active = self.active_targets
        if warp is not None and self.config.cmc_enabled and not warp.is_identity():
            for t in active:
                t.motion.apply_cmc(warp)

        tgt_boxes = np.zeros((len(active), 4), dtype=np.float64)
        for i, t in enumerate(active):
            tgt_boxes[i] = t.motion.predict().to_array()
        tgt_features = None
        if self.needs_appearance:
            width = self.model.config.appearance_dim
            tgt_features = np.zeros((len(active), width), dtype=np.float64)
            for i, t in enumerate(active):
                tgt_features[i] = t.appearance.step()

        return FrameContext(
            frame_id=frame_id,
            det_boxes=det_boxes,
            det_features=det_features,
            targets=active,
            tgt_boxes=tgt_boxes,
            tgt_features=tgt_features,
        )

    def frame_tensors(
        self, ctx: FrameContext, dtype: torch.dtype = torch.float32
    ) -> tuple[torch.Tensor, torch.Tensor | None, torch.Tensor, torch.Tensor | None]:
        """Frame inputs as model-ready tensors (det_pos, det_app, tgt_pos, tgt_app)."""
        det_pos = torch.as_tensor(ctx.det_boxes, dtype=dtype)
        tgt_pos = torch.as_tensor(ctx.tgt_boxes, dtype=dtype)
        det_app = tgt_app = None
        if self.needs_appearance:
            det_app = torch.as_tensor(ctx.det_features, dtype=dtype)
            tgt_app = torch.as_tensor(ctx.tgt_features, dtype=dtype)
        return det_pos, det_app, tgt_pos, tgt_app

    def decide(self, ctx: FrameContext) -> list[Decision]:
        """Model decisions for the frame; empty frames bypass the model."""
        if ctx.num_detections == 0:
            return []
        if self.model is None:
            raise ValueError("tracker has no model; supply decisions explicitly")
        dtype = next(self.model.parameters()).dtype
        det_pos, det_app, tgt_pos, tgt_app = self.frame_tensors(ctx, dtype)
        with torch.no_grad():
            asm = self.model.compute_scores(det_pos, det_app, tgt_pos, tgt_app)
        return decide_assignments(asm)

    def commit(self, ctx: FrameContext, decisions: list[Decision]) -> None:
        """Apply decisions: update, terminate, spawn, record output boxes."""
        if len(decisions) != ctx.num_detections:
            raise ValueError(
                f"frame {ctx.frame_id}: {len(decisions)} decisions for "
                f"{ctx.num_detections} detections"
            )
        valid = filter_duplicates(decisions)
        assigned: dict[int, int] = {}
        spawners: list[int] = []
        for det_idx, tgt_idx, _score in valid:
            if tgt_idx is None:
                spawners.append(det_idx)
            else:
                if tgt_idx < 0 or tgt_idx >= ctx.num_targets:
                    raise ValueError(
                        f"frame {ctx.frame_id}: decision references target index "
                        f"{tgt_idx} out of {ctx.num_targets}"
                    )
                assigned[tgt_idx] = det_idx

        lifecycle = self.config.lifecycle
        output: list[tuple[Target, BBox]] = []
        for local, target in enumerate(ctx.targets):
            if local in assigned:
                det_idx = assigned[local]
                box = BBox.from_array(ctx.det_boxes[det_idx])
                target.motion.update(box)
                if target.appearance is not None and ctx.det_features is not None:
                    target.appearance.update(ctx.det_features[det_idx])
                target.hits += 1
                target.misses = 0
                output.append((target, box))
            else:
                # predict() in begin_frame already advanced the state
                target.misses += 1
                if target.misses > termination_threshold(target.hits, lifecycle):
                    target.active = False
                elif self.config.write_unassigned:
                    output.append((target, BBox.from_array(ctx.tgt_boxes[local])))

        for det_idx in spawners:
            box = BBox.from_array(ctx.det_boxes[det_idx])
            appearance = None
            if self.needs_appearance:
                appearance = AppearanceState(ctx.det_features[det_idx])
            target = Target(
                self._next_id,
                make_motion_model(self.config.motion_model, box, self.config.kalman),
                appearance,
                ctx.frame_id,
            )
            self._next_id += 1
            self.targets.append(target)
            output.append((target, box))

        for target, box in output:
            if target.active:
                target.trajectory.append((ctx.frame_id, box))
                self.results.append((ctx.frame_id, target.target_id, box))

    def step_frame(
        self,
        frame_id: int,
        det_boxes: np.ndarray,
        det_features: np.ndarray | None,
        warp: Warp2D | None = None,
    ) -> list[Decision]:
        ctx = self.begin_frame(frame_id, det_boxes, det_features, warp)
        decisions = self.decide(ctx)
        self.commit(ctx, decisions)
        return decisions


def make_feature_provider(bundle: SequenceBundle, expected_width: int):
    """Pick a feature source for a sequence: precomputed file, else images."""
    if bundle.features is not None:
        if bundle.features.width != expected_width:
            raise InputError(
                f"{bundle.name}: feature file width {bundle.features.width} does "
                f"not match the model's appearance width {expected_width}"
            )
        return PrecomputedFeatureProvider(bundle.features.records, bundle.features.width)
    if bundle.img_dir is not None:
        provider = PatchHistogramProvider(bundle.img_dir)
        if provider.width != expected_width:
            raise InputError(
                f"{bundle.name}: built-in histogram width {provider.width} does "
                f"not match the model's appearance width {expected_width}"
            )
        return provider
    raise InputError(
        f"{bundle.name}: no feature file and no image directory; appearance "
        "features are unavailable"
    )


def run_sequence(
    tracker: Tracker,
    bundle: SequenceBundle,
    feature_provider=None,
) -> list[ResultRow]:
    """Track a whole sequence and return MOT-style result rows (pixels)."""
    w, h = bundle.image_width, bundle.image_height
    needs_app = tracker.needs_appearance
    if needs_app and feature_provider is None:
        feature_provider = make_feature_provider(
            bundle, tracker.model.config.appearance_dim
        )
    for frame in bundle.frames:
        dets = bundle.detections_for(frame)
        boxes_px = [d.box for d in dets]
        boxes = np.array(
            [normalize(b, w, h).to_array() for b in boxes_px], dtype=np.float64
        ).reshape(-1, 4)
        features = None
        if needs_app:
            features = feature_provider.features_for_frame(frame, boxes_px)
        warp = bundle.warp_for(frame).rescaled(1.0 / w, 1.0 / h)
        tracker.step_frame(frame, boxes, features, warp)
    return [
        ResultRow(frame, target_id, denormalize(box, w, h))
        for frame, target_id, box in tracker.results
    ]
