"""Context-aware attention for one modality.

Given textual hidden states H (n x d) and an aligned modality context
C (n x d_c), this layer runs scaled dot-product attention whose keys and
values are per-position convex mixtures of textual content and projected
context:

    Q = H W_q          K = H W_k          V = H W_v
    gate_k = logistic(K w_kt + (C U_k) w_kc)        (n x 1)
    gate_v = logistic(V w_vt + (C U_v) w_vc)        (n x 1)
    K' = (1 - gate_k) * K + gate_k * (C U_k)
    V' = (1 - gate_v) * V + gate_v * (C U_v)
    out = softmax(Q K'^T / sqrt(d_k)) V'

The gates are scalars per sequence position, broadcast across feature
columns, so each position decides how much of its key/value content is
replaced by modality context. With the gate weights at zero every gate
is exactly 0.5; pinning the gates to zero recovers plain self-attention
over (Q, K, V), pinning them to one attends purely over projected context.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import (
    Tensor,
    add,
    concat_last,
    glorot_uniform,
    matmul,
    mul,
    scale,
    sigmoid,
    slice_cols,
    softmax_rows,
    sub,
    transpose,
    zeros,
)

__all__ = ["Mca2Params", "AttentionTrace", "project_qkv", "gate_lambda", "condition_kv", "attend", "mca2_forward"]


@dataclass
class Mca2Params:
    """Parameters of one context-aware attention block (9 learned matrices).

    w_q, w_k, w_v        d x d      query/key/value projections of the text
    ctx_k, ctx_v         d_c x d    context projections into key/value space
    gate_k_text          d x 1      gate contribution from the textual key
    gate_k_ctx           d x 1      gate contribution from the projected context
    gate_v_text, gate_v_ctx         same, for the value gate

    ``heads`` splits attention into column blocks of width d // heads; the
    single-head default uses d_k = d in the attention scale.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    ctx_k: Tensor
    ctx_v: Tensor
    gate_k_text: Tensor
    gate_k_ctx: Tensor
    gate_v_text: Tensor
    gate_v_ctx: Tensor
    d: int
    d_c: int
    heads: int = 1

    @property
    def d_k(self) -> int:
        return self.d // self.heads

    @classmethod
    def init(cls, d: int, d_c: int, rng: np.random.Generator, heads: int = 1) -> "Mca2Params":
        """Fan-balanced projections; gate weights start at zero (gates 0.5)."""
        if d <= 0 or d_c <= 0:
            raise ContractError(f"widths must be positive, got d={d}, d_c={d_c}")
        if heads < 1 or d % heads != 0:
            raise ContractError(f"heads must divide d, got d={d}, heads={heads}")
        return cls(
            w_q=glorot_uniform(rng, d, d),
            w_k=glorot_uniform(rng, d, d),
            w_v=glorot_uniform(rng, d, d),
            ctx_k=glorot_uniform(rng, d_c, d),
            ctx_v=glorot_uniform(rng, d_c, d),
            gate_k_text=zeros(d, 1, requires_grad=True),
            gate_k_ctx=zeros(d, 1, requires_grad=True),
            gate_v_text=zeros(d, 1, requires_grad=True),
            gate_v_ctx=zeros(d, 1, requires_grad=True),
            d=d,
            d_c=d_c,
            heads=heads,
        )

    def named(self, prefix: str = ""):
        for name in ("w_q", "w_k", "w_v", "ctx_k", "ctx_v",
                     "gate_k_text", "gate_k_ctx", "gate_v_text", "gate_v_ctx"):
            yield f"{prefix}{name}", getattr(self, name)


@dataclass
class AttentionTrace:
    """Intermediate values of one forward pass, for tests and diagnostics.

    ``weights`` holds one n x n attention matrix per head (a 1-tuple in the
    single-head default).
    """

    q: Tensor
    k: Tensor
    v: Tensor
    gate_k: Tensor
    gate_v: Tensor
    k_mixed: Tensor
    v_mixed: Tensor
    weights: tuple[Tensor, ...]
    output: Tensor


def _check_h(h: Tensor, params: Mca2Params) -> None:
    if h.data.ndim != 2 or h.shape[1] != params.d:
        raise ShapeError(f"hidden states must be n x {params.d}, got {h.shape}")


def _check_c(c: Tensor, n: int, params: Mca2Params) -> None:
    if c.data.ndim != 2 or c.shape != (n, params.d_c):
        raise ShapeError(f"context must be {n} x {params.d_c} (aligned), got {c.shape}")


def project_qkv(h: Tensor, params: Mca2Params) -> tuple[Tensor, Tensor, Tensor]:
    """Project hidden states into query, key and value matrices (each n x d)."""
    _check_h(h, params)
    return matmul(h, params.w_q), matmul(h, params.w_k), matmul(h, params.w_v)


def gate_lambda(k: Tensor, v: Tensor, c: Tensor, params: Mca2Params) -> tuple[Tensor, Tensor]:
    """Per-position mixing gates in (0, 1), shape n x 1 each.

    Each gate is a logistic over two scalar summaries: one of the textual
    key (or value) row, one of the projected context row.
    """
    n = k.shape[0]
    if v.shape != k.shape:
        raise ShapeError(f"key/value row counts disagree: {k.shape} vs {v.shape}")
    _check_c(c, n, params)
    ctx_k = matmul(c, params.ctx_k)
    ctx_v = matmul(c, params.ctx_v)
    gate_k = sigmoid(add(matmul(k, params.gate_k_text), matmul(ctx_k, params.gate_k_ctx)))
    gate_v = sigmoid(add(matmul(v, params.gate_v_text), matmul(ctx_v, params.gate_v_ctx)))
    return gate_k, gate_v


def condition_kv(
    k: Tensor,
    v: Tensor,
    c: Tensor,
    gate_k: Tensor,
    gate_v: Tensor,
    params: Mca2Params,
) -> tuple[Tensor, Tensor]:
    """Convex per-position mix of textual keys/values with projected context.

    The n x 1 gates broadcast across the d feature columns:
    K' = (1 - gate_k) * K + gate_k * (C ctx_k), likewise for V'.
    """
    n = k.shape[0]
    _check_c(c, n, params)
    for name, g in (("gate_k", gate_k), ("gate_v", gate_v)):
        if g.shape != (n, 1):
            raise ShapeError(f"{name} must be {n} x 1, got {g.shape}")
    one = Tensor(np.ones((n, 1)))
    k_mixed = add(mul(sub(one, gate_k), k), mul(gate_k, matmul(c, params.ctx_k)))
    v_mixed = add(mul(sub(one, gate_v), v), mul(gate_v, matmul(c, params.ctx_v)))
    return k_mixed, v_mixed


def attend(q: Tensor, k: Tensor, v: Tensor, d_k: int) -> Tensor:
    """Scaled dot-product attention: softmax(Q K^T / sqrt(d_k)) V."""
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"query/key widths disagree: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"key/value row counts disagree: {k.shape} vs {v.shape}")
    if d_k <= 0:
        raise ContractError(f"d_k must be positive, got {d_k}")
    logits = scale(matmul(q, transpose(k)), 1.0 / np.sqrt(float(d_k)))
    return matmul(softmax_rows(logits), v)


def _pinned_gates(n: int, value: float) -> tuple[Tensor, Tensor]:
    g = Tensor(np.full((n, 1), float(value)))
    return g, g


def mca2_forward(
    h: Tensor,
    c: Tensor,
    params: Mca2Params,
    *,
    gate_override: float | None = None,
    return_trace: bool = False,
):
    """Full block: project, gate, condition, attend. Output is n x d.

    ``gate_override`` pins both gates to a constant (bypassing the learned
    gate path); 0.0 collapses the block to plain self-attention over
    (Q, K, V), 1.0 attends purely over projected context. Intended for
    tests and ablations, not training.
    """
    _check_h(h, params)
    _check_c(c, h.shape[0], params)
    q, k, v = project_qkv(h, params)
    if gate_override is None:
        gate_k, gate_v = gate_lambda(k, v, c, params)
    else:
        gate_k, gate_v = _pinned_gates(h.shape[0], gate_override)
    k_mixed, v_mixed = condition_kv(k, v, c, gate_k, gate_v, params)

    heads, d_k = params.heads, params.d_k
    if heads == 1:
        logits = scale(matmul(q, transpose(k_mixed)), 1.0 / np.sqrt(float(d_k)))
        weights = softmax_rows(logits)
        out = matmul(weights, v_mixed)
        weight_list = (weights,)
    else:
        outs, ws = [], []
        for i in range(heads):
            lo, hi = i * d_k, (i + 1) * d_k
            logits = scale(
                matmul(slice_cols(q, lo, hi), transpose(slice_cols(k_mixed, lo, hi))),
                1.0 / np.sqrt(float(d_k)),
            )
            w = softmax_rows(logits)
            ws.append(w)
            outs.append(matmul(w, slice_cols(v_mixed, lo, hi)))
        out = outs[0]
        for o in outs[1:]:
            out = concat_last(out, o)
        weight_list = tuple(ws)

    if not return_trace:
        return out
    return AttentionTrace(
        q=q, k=k, v=v, gate_k=gate_k, gate_v=gate_v,
        k_mixed=k_mixed, v_mixed=v_mixed, weights=weight_list, output=out,
    )
