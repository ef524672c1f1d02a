"""The assignment decision model.

Detections and currently tracked targets enter as two feature sets, get
linearly embedded to a common width, and pass through one or two transformer
branches.  The scaled dot product of the two output sets is an (N, M+1)
score matrix whose last column is a learned "assign to nothing" row appended
to the target stream; a row-wise argmax turns scores into per-detection
assignment decisions without any combinatorial solve.

Feature streams:

* positional -- the box as a normalized (x_min, y_min, x_max, y_max) vector.
* appearance -- a fixed-width descriptor supplied by the appearance provider.

With ``feature_mode="both"`` each stream has its own projection and the two
embeddings are concatenated to ``d_model``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor, nn

from .transformer import Decoder, Encoder, init_linear_

__all__ = [
    "FEATURE_MODES",
    "BRANCH_MODES",
    "TadnConfig",
    "TadnModel",
    "compute_asm",
    "decide_assignments",
]

FEATURE_MODES = ("positional", "appearance", "both")
BRANCH_MODES = ("single", "dual")

POSITIONAL_DIM = 4


@dataclass
class TadnConfig:
    """Architecture knobs; the defaults are the reference configuration."""

    branch_mode: str = "dual"
    d_model: int = 128
    num_heads: int = 2
    num_encoder_layers: int = 2
    num_decoder_layers: int = 2
    feature_mode: str = "both"
    positional_width: int = 64
    appearance_width: int = 64
    appearance_dim: int = 24
    dim_feedforward: int | None = None
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.branch_mode not in BRANCH_MODES:
            raise ValueError(f"branch_mode must be one of {BRANCH_MODES}")
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"feature_mode must be one of {FEATURE_MODES}")
        if self.d_model % self.num_heads != 0:
            raise ValueError("d_model must be divisible by num_heads")
        if self.feature_mode == "both" and (
            self.positional_width + self.appearance_width != self.d_model
        ):
            raise ValueError(
                "positional_width + appearance_width must equal d_model "
                f"({self.positional_width} + {self.appearance_width} != {self.d_model})"
            )
        if self.feature_mode != "positional" and self.appearance_dim <= 0:
            raise ValueError("appearance_dim must be positive when appearance is used")

    @property
    def uses_appearance(self) -> bool:
        return self.feature_mode in ("appearance", "both")

    def to_dict(self) -> dict:
        return {
            "branch_mode": self.branch_mode,
            "d_model": self.d_model,
            "num_heads": self.num_heads,
            "num_encoder_layers": self.num_encoder_layers,
            "num_decoder_layers": self.num_decoder_layers,
            "feature_mode": self.feature_mode,
            "positional_width": self.positional_width,
            "appearance_width": self.appearance_width,
            "appearance_dim": self.appearance_dim,
            "dim_feedforward": self.dim_feedforward,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TadnConfig":
        return cls(**d)


class _StreamEmbed(nn.Module):
    """Projects one input stream (detections or targets) to d_model."""

    def __init__(self, cfg: TadnConfig, stream: str) -> None:
        super().__init__()
        self.stream = stream
        self.mode = cfg.feature_mode
        if cfg.feature_mode == "positional":
            self.pos = init_linear_(nn.Linear(POSITIONAL_DIM, cfg.d_model))
        elif cfg.feature_mode == "appearance":
            self.app = init_linear_(nn.Linear(cfg.appearance_dim, cfg.d_model))
        else:
            self.pos = init_linear_(nn.Linear(POSITIONAL_DIM, cfg.positional_width))
            self.app = init_linear_(nn.Linear(cfg.appearance_dim, cfg.appearance_width))

    def forward(self, pos: Tensor, app: Tensor | None) -> Tensor:
        if pos.ndim != 2 or pos.shape[1] != POSITIONAL_DIM:
            raise ValueError(
                f"{self.stream} positional features must have shape "
                f"(*, {POSITIONAL_DIM}), got {tuple(pos.shape)}"
            )
        if self.mode == "positional":
            return self.pos(pos)
        if app is None:
            raise ValueError(f"{self.stream} appearance features are required")
        if app.ndim != 2 or app.shape[1] != self.app.in_features:
            raise ValueError(
                f"{self.stream} appearance features must have shape "
                f"(*, {self.app.in_features}), got {tuple(app.shape)}"
            )
        if app.shape[0] != pos.shape[0]:
            raise ValueError(
                f"{self.stream} positional/appearance row counts differ: "
                f"{pos.shape[0]} vs {app.shape[0]}"
            )
        if self.mode == "appearance":
            return self.app(app)
        return torch.cat([self.pos(pos), self.app(app)], dim=1)


class _Branch(nn.Module):
    """One full transformer: encode one set, decode the other against it."""

    def __init__(self, cfg: TadnConfig) -> None:
        super().__init__()
        self.encoder = Encoder(
            cfg.d_model,
            cfg.num_heads,
            cfg.num_encoder_layers,
            cfg.dim_feedforward,
            cfg.dropout,
        )
        self.decoder = Decoder(
            cfg.d_model,
            cfg.num_heads,
            cfg.num_decoder_layers,
            cfg.dim_feedforward,
            cfg.dropout,
        )

    def forward(self, enc_in: Tensor, dec_in: Tensor) -> Tensor:
        return self.decoder(dec_in, self.encoder(enc_in))


class TadnModel(nn.Module):
    def __init__(self, config: TadnConfig) -> None:
        super().__init__()
        self.config = config
        self.embed_detections = _StreamEmbed(config, "detection")
        self.embed_targets = _StreamEmbed(config, "target")
        self.null_target = nn.Parameter(torch.empty(config.d_model))
        nn.init.normal_(self.null_target, mean=0.0, std=0.02)
        if config.branch_mode == "single":
            self.encoder = Encoder(
                config.d_model,
                config.num_heads,
                config.num_encoder_layers,
                config.dim_feedforward,
                config.dropout,
            )
            self.decoder = Decoder(
                config.d_model,
                config.num_heads,
                config.num_decoder_layers,
                config.dim_feedforward,
                config.dropout,
            )
        else:
            self.branch_d = _Branch(config)
            self.branch_t = _Branch(config)

    def embed_inputs(
        self,
        det_pos: Tensor,
        det_app: Tensor | None,
        tgt_pos: Tensor,
        tgt_app: Tensor | None,
    ) -> tuple[Tensor, Tensor]:
        """Project both streams and append the null row to the target side.

        Returns (N, d_model) detections and (M+1, d_model) targets; with
        M = 0 the target embedding is exactly the single null row.
        """
        d_in = self.embed_detections(det_pos, det_app)
        t_in = self.embed_targets(tgt_pos, tgt_app)
        null_row = self.null_target.unsqueeze(0).to(t_in.dtype)
        return d_in, torch.cat([t_in, null_row], dim=0)

    def forward(self, d_in: Tensor, t_in: Tensor) -> tuple[Tensor, Tensor]:
        """Run the configured branch layout; shapes are preserved.

        In single mode the detection output depends only on the detection
        input (pure self-attention); in dual mode both outputs attend to
        both inputs.  Frames without detections must be short-circuited by
        the caller -- an empty detection set is rejected here.
        """
        if d_in.shape[0] == 0:
            raise ValueError("forward requires at least one detection row")
        if self.config.branch_mode == "single":
            d_out = self.encoder(d_in)
            t_out = self.decoder(t_in, d_out)
        else:
            d_out = self.branch_d(enc_in=t_in, dec_in=d_in)
            t_out = self.branch_t(enc_in=d_in, dec_in=t_in)
        return d_out, t_out

    def compute_scores(
        self,
        det_pos: Tensor,
        det_app: Tensor | None,
        tgt_pos: Tensor,
        tgt_app: Tensor | None,
    ) -> Tensor:
        """Embed, transform and score in one call; returns (N, M+1) logits."""
        d_in, t_in = self.embed_inputs(det_pos, det_app, tgt_pos, tgt_app)
        d_out, t_out = self.forward(d_in, t_in)
        return compute_asm(d_out, t_out, self.config.d_model)

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def compute_asm(d_out: Tensor, t_out: Tensor, d_model: int) -> Tensor:
    """Scaled dot product of the two output sets: (N, M+1) score logits."""
    if d_out.shape[1] != d_model or t_out.shape[1] != d_model:
        raise ValueError(
            f"output widths must equal d_model ({d_model}), got "
            f"{d_out.shape[1]} and {t_out.shape[1]}"
        )
    return d_out @ t_out.transpose(0, 1) / math.sqrt(d_model)


def decide_assignments(asm: Tensor | np.ndarray) -> list[tuple[int | None, float]]:
    """Row-wise argmax decisions.

    Returns one (target_index, score) pair per detection where
    ``target_index`` is None when the null column wins.  Ties break toward
    the lowest column index.
    """
    if isinstance(asm, Tensor):
        scores = asm.detach().cpu().numpy()
    else:
        scores = np.asarray(asm)
    if scores.ndim != 2 or scores.shape[1] < 1:
        raise ValueError(f"score matrix must be (N, M+1), got {scores.shape}")
    null_col = scores.shape[1] - 1
    decisions: list[tuple[int | None, float]] = []
    for row in scores:
        col = int(np.argmax(row))
        decisions.append((None if col == null_col else col, float(row[col])))
    return decisions
