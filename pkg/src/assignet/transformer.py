"""Transformer building blocks for set-to-set association.

Inputs are unordered sets carried as 2-D tensors of shape (rows, d_model),
one row per element, no batch axis.  There are deliberately no positional
encodings and no causal masks anywhere: encoder and decoder stacks are
permutation-equivariant in their primary input and the decoder is
permutation-invariant in its memory, which is exactly what an unordered
detection/target set needs.

Sublayers use the post-layer-norm order (sublayer -> residual add -> norm).
Gradients flow through torch autograd; parameters initialize with uniform
Xavier weights and zero biases.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

__all__ = [
    "row_softmax",
    "MultiHeadAttention",
    "FeedForward",
    "EncoderLayer",
    "DecoderLayer",
    "Encoder",
    "Decoder",
    "init_linear_",
]


def init_linear_(layer: nn.Linear) -> nn.Linear:
    """Uniform Xavier weights, zero bias, in place."""
    nn.init.xavier_uniform_(layer.weight)
    if layer.bias is not None:
        nn.init.zeros_(layer.bias)
    return layer


def row_softmax(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, stabilized by max subtraction."""
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D tensor, got shape {tuple(x.shape)}")
    if x.shape[1] == 0:
        raise ValueError("row_softmax needs at least one column")
    return torch.softmax(x, dim=1)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with ``num_heads`` parallel heads.

    Row i of the output depends on query row i and every key/value row, so
    the module is permutation-equivariant in queries and permutation-
    invariant in (jointly permuted) keys/values.
    """

    def __init__(self, d_model: int, num_heads: int) -> None:
        super().__init__()
        if d_model % num_heads != 0:
            raise ValueError(
                f"d_model ({d_model}) must be divisible by num_heads ({num_heads})"
            )
        self.d_model = d_model
        self.num_heads = num_heads
        self.d_head = d_model // num_heads
        self.wq = init_linear_(nn.Linear(d_model, d_model))
        self.wk = init_linear_(nn.Linear(d_model, d_model))
        self.wv = init_linear_(nn.Linear(d_model, d_model))
        self.wo = init_linear_(nn.Linear(d_model, d_model))

    def forward(self, queries: Tensor, keys: Tensor, values: Tensor) -> Tensor:
        if keys.shape[0] != values.shape[0]:
            raise ValueError(
                f"keys ({keys.shape[0]} rows) and values ({values.shape[0]} rows) "
                "must have the same number of rows"
            )
        if keys.shape[0] == 0:
            raise ValueError("attention over zero key rows is undefined")
        for name, t in (("queries", queries), ("keys", keys), ("values", values)):
            if t.ndim != 2 or t.shape[1] != self.d_model:
                raise ValueError(
                    f"{name} must have shape (*, {self.d_model}), "
                    f"got {tuple(t.shape)}"
                )

        n, m = queries.shape[0], keys.shape[0]
        # (rows, d_model) -> (heads, rows, d_head)
        q = self.wq(queries).view(n, self.num_heads, self.d_head).transpose(0, 1)
        k = self.wk(keys).view(m, self.num_heads, self.d_head).transpose(0, 1)
        v = self.wv(values).view(m, self.num_heads, self.d_head).transpose(0, 1)

        scores = q @ k.transpose(1, 2) / self.d_head**0.5
        attn = torch.softmax(scores, dim=2)
        out = (attn @ v).transpose(0, 1).reshape(n, self.d_model)
        return self.wo(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, dim_feedforward: int) -> None:
        super().__init__()
        self.lin1 = init_linear_(nn.Linear(d_model, dim_feedforward))
        self.lin2 = init_linear_(nn.Linear(dim_feedforward, d_model))

    def forward(self, x: Tensor) -> Tensor:
        return self.lin2(torch.relu(self.lin1(x)))


class EncoderLayer(nn.Module):
    """Self-attention and feed-forward, each with residual add + layer norm."""

    def __init__(
        self, d_model: int, num_heads: int, dim_feedforward: int, dropout: float
    ) -> None:
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, num_heads)
        self.ff = FeedForward(d_model, dim_feedforward)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm1(x + self.dropout(self.self_attn(x, x, x)))
        x = self.norm2(x + self.dropout(self.ff(x)))
        return x


class DecoderLayer(nn.Module):
    """Self-attention over targets, cross-attention into memory, feed-forward."""

    def __init__(
        self, d_model: int, num_heads: int, dim_feedforward: int, dropout: float
    ) -> None:
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, num_heads)
        self.cross_attn = MultiHeadAttention(d_model, num_heads)
        self.ff = FeedForward(d_model, dim_feedforward)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.norm3 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, target: Tensor, memory: Tensor) -> Tensor:
        x = self.norm1(target + self.dropout(self.self_attn(target, target, target)))
        x = self.norm2(x + self.dropout(self.cross_attn(x, memory, memory)))
        x = self.norm3(x + self.dropout(self.ff(x)))
        return x


class Encoder(nn.Module):
    def __init__(
        self,
        d_model: int,
        num_heads: int,
        num_layers: int,
        dim_feedforward: int | None = None,
        dropout: float = 0.0,
    ) -> None:
        super().__init__()
        dim_feedforward = dim_feedforward or 4 * d_model
        self.d_model = d_model
        self.layers = nn.ModuleList(
            EncoderLayer(d_model, num_heads, dim_feedforward, dropout)
            for _ in range(num_layers)
        )

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.d_model:
            raise ValueError(
                f"encoder input must have shape (*, {self.d_model}), "
                f"got {tuple(x.shape)}"
            )
        if x.shape[0] == 0:
            return x
        for layer in self.layers:
            x = layer(x)
        return x


class Decoder(nn.Module):
    def __init__(
        self,
        d_model: int,
        num_heads: int,
        num_layers: int,
        dim_feedforward: int | None = None,
        dropout: float = 0.0,
    ) -> None:
        super().__init__()
        dim_feedforward = dim_feedforward or 4 * d_model
        self.d_model = d_model
        self.layers = nn.ModuleList(
            DecoderLayer(d_model, num_heads, dim_feedforward, dropout)
            for _ in range(num_layers)
        )

    def forward(self, target: Tensor, memory: Tensor) -> Tensor:
        for name, t in (("target", target), ("memory", memory)):
            if t.ndim != 2 or t.shape[1] != self.d_model:
                raise ValueError(
                    f"decoder {name} must have shape (*, {self.d_model}), "
                    f"got {tuple(t.shape)}"
                )
        if memory.shape[0] == 0:
            raise ValueError("decoder memory must have at least one row")
        if target.shape[0] == 0:
            return target
        x = target
        for layer in self.layers:
            x = layer(x, memory)
        return x
