"""File formats and sequence loading.

A sequence lives in a MOTChallenge-style directory:

    <name>/
      seqinfo.ini         [Sequence] name/imWidth/imHeight/seqLength
      det/det.txt         frame,id,x,y,w,h,conf,...      (id is -1)
      gt/gt.txt           frame,id,x,y,w,h,flag,class,visibility  (optional)
      warps.txt           frame,a,b,c,d,e,f              (optional)
      features.bin        binary per-detection features  (optional)

Coordinates in files are pixels, top-left + size; they are converted to
corner form here and normalized at the tracker boundary.  Detections are
confidence-filtered at load time.  Within a frame, detections are
canonicalized by sorting on (x, y, w, h, conf); feature records address
detections by index in that canonical order, so loading is independent of
row order in the files.

Result files are written as ``frame,id,x,y,w,h,conf,-1,-1,-1`` with all
floats formatted to two decimal places, rows sorted by (frame, id).
"""

from __future__ import annotations

import configparser
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BBox, Warp2D

__all__ = [
    "InputError",
    "Detection",
    "GtBox",
    "ResultRow",
    "FeatureTable",
    "SequenceBundle",
    "read_mot_rows",
    "read_results",
    "write_results",
    "read_warps",
    "write_warps",
    "read_features",
    "write_features",
    "read_seqinfo",
    "write_seqinfo",
    "load_sequence",
    "DEFAULT_CONFIDENCE_FLOOR",
]

DEFAULT_CONFIDENCE_FLOOR = 0.3

FEATURE_MAGIC = b"ANFT"
FEATURE_VERSION = 1


class InputError(Exception):
    """Malformed or inconsistent input data (maps to CLI exit code 1)."""


@dataclass(frozen=True)
class Detection:
    box: BBox
    confidence: float


@dataclass(frozen=True)
class GtBox:
    target_id: int
    box: BBox
    confidence: float = 1.0
    class_id: int = 1
    visibility: float = 1.0


@dataclass(frozen=True)
class ResultRow:
    frame: int
    target_id: int
    box: BBox
    confidence: float = 1.0


@dataclass
class FeatureTable:
    """Per-detection feature vectors keyed by (frame, detection index)."""

    width: int
    records: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def add(self, frame: int, index: int, feature: np.ndarray) -> None:
        feature = np.asarray(feature, dtype=np.float32)
        if feature.shape != (self.width,):
            raise InputError(
                f"feature for frame {frame}, detection {index} has shape "
                f"{feature.shape}, expected ({self.width},)"
            )
        self.records[(int(frame), int(index))] = feature


@dataclass
class SequenceBundle:
    """Everything known about one sequence, canonicalized by frame."""

    name: str
    image_width: int
    image_height: int
    num_frames: int
    detections: dict[int, list[Detection]] = field(default_factory=dict)
    ground_truth: dict[int, list[GtBox]] | None = None
    warps: dict[int, Warp2D] = field(default_factory=dict)
    features: FeatureTable | None = None
    img_dir: Path | None = None

    def detections_for(self, frame: int) -> list[Detection]:
        return self.detections.get(frame, [])

    def gt_for(self, frame: int) -> list[GtBox]:
        if self.ground_truth is None:
            return []
        return self.ground_truth.get(frame, [])

    def warp_for(self, frame: int) -> Warp2D:
        return self.warps.get(frame, Warp2D.identity())

    @property
    def frames(self) -> range:
        return range(1, self.num_frames + 1)


def _parse_floats(parts: list[str], path: Path, lineno: int) -> list[float]:
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise InputError(f"{path}:{lineno}: non-numeric field ({exc})") from None


def _iter_rows(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            yield lineno, line.split(",")


def read_mot_rows(
    path: str | Path,
    kind: str,
    confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR,
) -> dict[int, list]:
    """Load a MOT-format detections or ground-truth file.

    Detections (``kind="detections"``) below the confidence floor are
    dropped at load time; ground-truth rows (``kind="gt"``) with a zero
    flag field are skipped (benchmark "ignore" convention).
    """
    if kind not in ("detections", "gt"):
        raise ValueError(f"kind must be 'detections' or 'gt', got {kind!r}")
    path = Path(path)
    per_frame: dict[int, list] = {}
    for lineno, parts in _iter_rows(path):
        if len(parts) < 7:
            raise InputError(
                f"{path}:{lineno}: expected at least 7 fields, got {len(parts)}"
            )
        values = _parse_floats(parts, path, lineno)
        frame = int(values[0])
        if frame < 1:
            raise InputError(f"{path}:{lineno}: frame index must be >= 1")
        x, y, w, h = values[2:6]
        if w <= 0 or h <= 0:
            raise InputError(f"{path}:{lineno}: non-positive box size {w}x{h}")
        box = BBox.from_xywh(x, y, w, h)
        conf = values[6]
        if kind == "detections":
            if conf < confidence_floor:
                continue
            per_frame.setdefault(frame, []).append(Detection(box, conf))
        else:
            if conf == 0:
                continue
            class_id = int(values[7]) if len(values) > 7 else 1
            visibility = values[8] if len(values) > 8 else 1.0
            per_frame.setdefault(frame, []).append(
                GtBox(int(values[1]), box, conf, class_id, visibility)
            )
    for frame, rows in per_frame.items():
        if kind == "detections":
            rows.sort(
                key=lambda d: (
                    d.box.x_min,
                    d.box.y_min,
                    d.box.x_max,
                    d.box.y_max,
                    d.confidence,
                )
            )
        else:
            rows.sort(key=lambda g: g.target_id)
    return per_frame


def read_results(path: str | Path) -> list[ResultRow]:
    path = Path(path)
    rows = []
    for lineno, parts in _iter_rows(path):
        if len(parts) < 7:
            raise InputError(
                f"{path}:{lineno}: expected at least 7 fields, got {len(parts)}"
            )
        values = _parse_floats(parts, path, lineno)
        x, y, w, h = values[2:6]
        if w <= 0 or h <= 0:
            raise InputError(f"{path}:{lineno}: non-positive box size {w}x{h}")
        rows.append(
            ResultRow(int(values[0]), int(values[1]), BBox.from_xywh(x, y, w, h), values[6])
        )
    rows.sort(key=lambda r: (r.frame, r.target_id))
    return rows


def write_results(path: str | Path, rows: list[ResultRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(rows, key=lambda r: (r.frame, r.target_id))
    with open(path, "w", encoding="utf-8") as fh:
        for r in ordered:
            x, y, w, h = r.box.to_xywh()
            fh.write(
                f"{r.frame},{r.target_id},{x:.2f},{y:.2f},{w:.2f},{h:.2f},"
                f"{r.confidence:.2f},-1,-1,-1\n"
            )


def read_warps(path: str | Path) -> dict[int, Warp2D]:
    """Per-frame affine warps; frames absent from the file mean identity."""
    path = Path(path)
    warps: dict[int, Warp2D] = {}
    for lineno, parts in _iter_rows(path):
        if len(parts) != 7:
            raise InputError(
                f"{path}:{lineno}: expected 'frame,a,b,c,d,e,f', got "
                f"{len(parts)} fields"
            )
        values = _parse_floats(parts, path, lineno)
        frame = int(values[0])
        if frame in warps:
            raise InputError(f"{path}:{lineno}: duplicate warp for frame {frame}")
        warps[frame] = Warp2D(*values[1:])
    return warps


def write_warps(path: str | Path, warps: dict[int, Warp2D]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for frame in sorted(warps):
            m = warps[frame].matrix().ravel()
            fh.write(f"{frame}," + ",".join(repr(float(v)) for v in m) + "\n")


def read_features(path: str | Path) -> FeatureTable:
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(20)
        if len(header) < 20:
            raise InputError(f"{path}: truncated feature file header")
        magic, version, width, count = struct.unpack("<4sIIQ", header)
        if magic != FEATURE_MAGIC:
            raise InputError(f"{path}: not a feature file (bad magic {magic!r})")
        if version != FEATURE_VERSION:
            raise InputError(f"{path}: unsupported feature file version {version}")
        table = FeatureTable(width=width)
        record_size = 8 + 4 * width
        for i in range(count):
            blob = fh.read(record_size)
            if len(blob) < record_size:
                raise InputError(f"{path}: truncated feature record {i}")
            frame, index = struct.unpack_from("<II", blob)
            vec = np.frombuffer(blob, dtype="<f4", count=width, offset=8)
            table.records[(frame, index)] = vec.astype(np.float32)
    return table


def write_features(path: str | Path, table: FeatureTable) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(
            struct.pack(
                "<4sIIQ", FEATURE_MAGIC, FEATURE_VERSION, table.width, len(table.records)
            )
        )
        for (frame, index) in sorted(table.records):
            vec = np.asarray(table.records[(frame, index)], dtype="<f4")
            fh.write(struct.pack("<II", frame, index))
            fh.write(vec.tobytes())


def read_seqinfo(path: str | Path) -> tuple[str, int, int, int]:
    path = Path(path)
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise InputError(f"cannot read sequence info: {path}")
    if "Sequence" not in parser:
        raise InputError(f"{path}: missing [Sequence] section")
    sec = parser["Sequence"]
    try:
        return (
            sec.get("name", path.parent.name),
            sec.getint("imWidth"),
            sec.getint("imHeight"),
            sec.getint("seqLength"),
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad sequence info ({exc})") from None


def write_seqinfo(
    path: str | Path, name: str, width: int, height: int, num_frames: int
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    parser = configparser.ConfigParser()
    parser["Sequence"] = {
        "name": name,
        "imWidth": str(width),
        "imHeight": str(height),
        "seqLength": str(num_frames),
    }
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def load_sequence(
    seq_dir: str | Path,
    confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR,
    warps_path: str | Path | None = None,
    features_path: str | Path | None = None,
    require_gt: bool = False,
) -> SequenceBundle:
    """Assemble a :class:`SequenceBundle` from a sequence directory.

    Warps and features default to ``warps.txt`` / ``features.bin`` inside the
    directory when present; explicit paths override.
    """
    seq_dir = Path(seq_dir)
    info_path = seq_dir / "seqinfo.ini"
    if not info_path.exists():
        raise InputError(f"missing seqinfo.ini in {seq_dir}")
    name, width, height, num_frames = read_seqinfo(info_path)

    det_path = seq_dir / "det" / "det.txt"
    if not det_path.exists():
        raise InputError(f"missing detections file: {det_path}")
    detections = read_mot_rows(det_path, "detections", confidence_floor)

    gt_path = seq_dir / "gt" / "gt.txt"
    ground_truth = None
    if gt_path.exists():
        ground_truth = read_mot_rows(gt_path, "gt")
    elif require_gt:
        raise InputError(f"missing ground truth file: {gt_path}")

    if warps_path is None:
        candidate = seq_dir / "warps.txt"
        warps_path = candidate if candidate.exists() else None
    warps = read_warps(warps_path) if warps_path is not None else {}

    if features_path is None:
        candidate = seq_dir / "features.bin"
        features_path = candidate if candidate.exists() else None
    features = read_features(features_path) if features_path is not None else None

    img_dir = seq_dir / "img1"
    return SequenceBundle(
        name=name,
        image_width=width,
        image_height=height,
        num_frames=num_frames,
        detections=detections,
        ground_truth=ground_truth,
        warps=warps,
        features=features,
        img_dir=img_dir if img_dir.is_dir() else None,
    )
