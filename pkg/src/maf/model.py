"""Small transformer encoder-decoder host with a multimodal fusion adapter.

The encoder reads the flattened dialogue (speaker tokens interleaved with
utterance tokens, padded to a fixed length); an adapter inserted before a
configurable encoder layer fuses aligned audio/video context into the
hidden states; the decoder generates the explanation autoregressively.

Adapter variants, selected by ``ModelConfig.variant``:

    MAF       context-aware attention per modality + gated fusion
    Concat1   per-modality [text | context] linear reprojection + gated fusion
    Concat2   single [text | audio | video] linear layer, nothing else
    DPA       plain cross-attention onto projected context + gated fusion
    NoGIF     context-aware attention, streams merged by plain addition
    TextOnly  adapter bypassed entirely
    TA / TV   single-modality forms (the absent gate term is dropped)

Everything is deterministic given ``ModelConfig.seed``: parameter init,
data order, and therefore every loss value and generated token.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import DialogueInstance
from .errors import ConfigError, ContractError, ParseError, ShapeError, TrainingDivergedError
from .gif import GifParams, gif_fuse, gif_fuse_single
from .mca2 import Mca2Params, mca2_forward
from .tensor import (
    Tensor,
    add,
    backward,
    concat_last,
    cross_entropy_rows,
    gather_rows,
    glorot_uniform,
    layer_norm_rows,
    matmul,
    relu,
    scale,
    slice_cols,
    softmax_rows,
    transpose,
    zeros,
)
from .text import Vocabulary, tokenize

__all__ = [
    "VARIANTS",
    "ModelConfig",
    "TrainConfig",
    "ModelParams",
    "TrainedModel",
    "AdapterOverrides",
    "init_model_params",
    "named_parameters",
    "align_temporal",
    "encode",
    "decode_logits",
    "decode_greedy",
    "train",
    "generate_explanation",
    "instance_token_ids",
    "instance_target_ids",
    "build_vocabulary",
    "save_checkpoint",
    "load_checkpoint",
    "Adam",
]

VARIANTS = ("MAF", "Concat1", "Concat2", "DPA", "NoGIF", "TextOnly", "TA", "TV")
_USES_AUDIO = {"MAF", "Concat1", "Concat2", "DPA", "NoGIF", "TA"}
_USES_VIDEO = {"MAF", "Concat1", "Concat2", "DPA", "NoGIF", "TV"}


# ---- configuration ---------------------------------------------------------


@dataclass
class ModelConfig:
    """Architecture and fusion settings. ``vocab_size`` is bound by train()."""

    vocab_size: int | None = None
    d: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    ffn: int = 128
    heads: int = 2
    fusion_layer_index: int = 2   # adapter runs before this encoder layer, 1-based
    d_c_audio: int = 16
    d_c_video: int = 32
    audio_raw_dim: int = 16
    video_raw_dim: int = 32
    max_text_len: int = 32
    max_target_len: int = 16
    max_frames: int = 512
    max_windows: int = 512
    variant: str = "MAF"
    seed: int = 1
    mca2_heads: int = 1
    sigmoid_gates: bool = False
    post_fusion_norm: bool = False

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}', expected one of {VARIANTS}")
        for name in ("d", "encoder_layers", "decoder_layers", "ffn", "heads", "d_c_audio",
                     "d_c_video", "audio_raw_dim", "video_raw_dim", "max_text_len",
                     "max_frames", "max_windows", "mca2_heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.max_target_len < 2:
            raise ConfigError(f"max_target_len must be >= 2, got {self.max_target_len}")
        if self.d % self.heads != 0:
            raise ConfigError(f"heads must divide d: d={self.d}, heads={self.heads}")
        if self.d % self.mca2_heads != 0:
            raise ConfigError(f"mca2_heads must divide d: d={self.d}, mca2_heads={self.mca2_heads}")
        if not (1 <= self.fusion_layer_index <= self.encoder_layers):
            raise ConfigError(
                f"fusion_layer_index must lie in 1..{self.encoder_layers}, "
                f"got {self.fusion_layer_index}"
            )
        if self.vocab_size is not None and self.vocab_size < 5:
            raise ConfigError(f"vocab_size must cover the four specials plus content, got {self.vocab_size}")

    def uses_audio(self) -> bool:
        return self.variant in _USES_AUDIO

    def uses_video(self) -> bool:
        return self.variant in _USES_VIDEO


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 10
    batch_size: int = 16
    grad_clip: float = 1.0

    def validate(self) -> None:
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be > 0, got {self.grad_clip}")


# ---- parameter containers ---------------------------------------------------


@dataclass
class AttentionParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> "AttentionParams":
        return cls(*(glorot_uniform(rng, d, d) for _ in range(4)))

    def named(self, prefix: str):
        for n in ("w_q", "w_k", "w_v", "w_o"):
            yield f"{prefix}{n}", getattr(self, n)


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor

    @classmethod
    def init(cls, d: int) -> "LayerNormParams":
        return cls(gain=Tensor(np.ones((1, d)), requires_grad=True),
                   bias=zeros(1, d, requires_grad=True))

    def named(self, prefix: str):
        yield f"{prefix}gain", self.gain
        yield f"{prefix}bias", self.bias


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, d: int, hidden: int, rng: np.random.Generator) -> "FeedForwardParams":
        return cls(
            w1=glorot_uniform(rng, d, hidden),
            b1=zeros(1, hidden, requires_grad=True),
            w2=glorot_uniform(rng, hidden, d),
            b2=zeros(1, d, requires_grad=True),
        )

    def named(self, prefix: str):
        for n in ("w1", "b1", "w2", "b2"):
            yield f"{prefix}{n}", getattr(self, n)


@dataclass
class EncoderLayerParams:
    attn: AttentionParams
    ln1: LayerNormParams
    ffn: FeedForwardParams
    ln2: LayerNormParams

    @classmethod
    def init(cls, d: int, hidden: int, rng: np.random.Generator) -> "EncoderLayerParams":
        return cls(
            attn=AttentionParams.init(d, rng),
            ln1=LayerNormParams.init(d),
            ffn=FeedForwardParams.init(d, hidden, rng),
            ln2=LayerNormParams.init(d),
        )

    def named(self, prefix: str):
        yield from self.attn.named(f"{prefix}attn.")
        yield from self.ln1.named(f"{prefix}ln1.")
        yield from self.ffn.named(f"{prefix}ffn.")
        yield from self.ln2.named(f"{prefix}ln2.")


@dataclass
class DecoderLayerParams:
    self_attn: AttentionParams
    ln1: LayerNormParams
    cross_attn: AttentionParams
    ln2: LayerNormParams
    ffn: FeedForwardParams
    ln3: LayerNormParams

    @classmethod
    def init(cls, d: int, hidden: int, rng: np.random.Generator) -> "DecoderLayerParams":
        return cls(
            self_attn=AttentionParams.init(d, rng),
            ln1=LayerNormParams.init(d),
            cross_attn=AttentionParams.init(d, rng),
            ln2=LayerNormParams.init(d),
            ffn=FeedForwardParams.init(d, hidden, rng),
            ln3=LayerNormParams.init(d),
        )

    def named(self, prefix: str):
        yield from self.self_attn.named(f"{prefix}self_attn.")
        yield from self.ln1.named(f"{prefix}ln1.")
        yield from self.cross_attn.named(f"{prefix}cross_attn.")
        yield from self.ln2.named(f"{prefix}ln2.")
        yield from self.ffn.named(f"{prefix}ffn.")
        yield from self.ln3.named(f"{prefix}ln3.")


@dataclass
class ModalityEncoderParams:
    """Input projection to the context width plus one self-attention layer
    over the frame/window axis. Temporal alignment to the text length is
    parameter-free (bucket mean pooling)."""

    in_proj: Tensor
    in_bias: Tensor
    layer: EncoderLayerParams
    d_c: int

    @classmethod
    def init(cls, raw_dim: int, d_c: int, rng: np.random.Generator) -> "ModalityEncoderParams":
        return cls(
            in_proj=glorot_uniform(rng, raw_dim, d_c),
            in_bias=zeros(1, d_c, requires_grad=True),
            layer=EncoderLayerParams.init(d_c, 2 * d_c, rng),
            d_c=d_c,
        )

    def named(self, prefix: str):
        yield f"{prefix}in_proj", self.in_proj
        yield f"{prefix}in_bias", self.in_bias
        yield from self.layer.named(f"{prefix}layer.")


@dataclass
class AdapterParams:
    """Fusion parameters, populated per variant (unused slots stay None)."""

    mca2_audio: Mca2Params | None = None
    mca2_video: Mca2Params | None = None
    gif: GifParams | None = None
    concat_audio: Tensor | None = None
    concat_audio_bias: Tensor | None = None
    concat_video: Tensor | None = None
    concat_video_bias: Tensor | None = None
    concat_tri: Tensor | None = None
    concat_tri_bias: Tensor | None = None
    post_norm: LayerNormParams | None = None

    def named(self, prefix: str):
        if self.mca2_audio is not None:
            yield from self.mca2_audio.named(f"{prefix}mca2_audio.")
        if self.mca2_video is not None:
            yield from self.mca2_video.named(f"{prefix}mca2_video.")
        if self.gif is not None:
            yield from self.gif.named(f"{prefix}gif.")
        for n in ("concat_audio", "concat_audio_bias", "concat_video",
                  "concat_video_bias", "concat_tri", "concat_tri_bias"):
            t = getattr(self, n)
            if t is not None:
                yield f"{prefix}{n}", t
        if self.post_norm is not None:
            yield from self.post_norm.named(f"{prefix}post_norm.")


@dataclass
class ModelParams:
    embedding: Tensor
    enc_layers: list[EncoderLayerParams]
    dec_layers: list[DecoderLayerParams]
    out_proj: Tensor
    out_bias: Tensor
    audio_enc: ModalityEncoderParams | None
    video_enc: ModalityEncoderParams | None
    adapter: AdapterParams


def init_model_params(cfg: ModelConfig) -> ModelParams:
    """Deterministic init from cfg.seed.

    The host stack (embeddings, encoder/decoder layers, output head) draws
    from one seed stream and the adapter side (modality encoders, fusion
    parameters) from a second, so every variant shares bit-identical host
    weights at a given seed.
    """
    cfg.validate()
    if cfg.vocab_size is None:
        raise ConfigError("vocab_size must be bound before parameter init")
    host_ss, adapter_ss, _ = np.random.SeedSequence(cfg.seed).spawn(3)
    host = np.random.default_rng(host_ss)
    adapter_rng = np.random.default_rng(adapter_ss)

    d, v = cfg.d, cfg.vocab_size
    embedding = glorot_uniform(host, v, d)
    enc_layers = [EncoderLayerParams.init(d, cfg.ffn, host) for _ in range(cfg.encoder_layers)]
    dec_layers = [DecoderLayerParams.init(d, cfg.ffn, host) for _ in range(cfg.decoder_layers)]
    out_proj = glorot_uniform(host, d, v)
    out_bias = zeros(1, v, requires_grad=True)

    audio_enc = video_enc = None
    if cfg.uses_audio():
        audio_enc = ModalityEncoderParams.init(cfg.audio_raw_dim, cfg.d_c_audio, adapter_rng)
    if cfg.uses_video():
        video_enc = ModalityEncoderParams.init(cfg.video_raw_dim, cfg.d_c_video, adapter_rng)

    ad = AdapterParams()
    variant = cfg.variant
    if variant in ("MAF", "DPA", "NoGIF"):
        ad.mca2_audio = Mca2Params.init(d, cfg.d_c_audio, adapter_rng, heads=cfg.mca2_heads)
        ad.mca2_video = Mca2Params.init(d, cfg.d_c_video, adapter_rng, heads=cfg.mca2_heads)
        if variant != "NoGIF":
            ad.gif = GifParams.zero_init(d)
    elif variant == "TA":
        ad.mca2_audio = Mca2Params.init(d, cfg.d_c_audio, adapter_rng, heads=cfg.mca2_heads)
        ad.gif = GifParams.zero_init(d)
    elif variant == "TV":
        ad.mca2_video = Mca2Params.init(d, cfg.d_c_video, adapter_rng, heads=cfg.mca2_heads)
        ad.gif = GifParams.zero_init(d)
    elif variant == "Concat1":
        ad.concat_audio = glorot_uniform(adapter_rng, d + cfg.d_c_audio, d)
        ad.concat_audio_bias = zeros(1, d, requires_grad=True)
        ad.concat_video = glorot_uniform(adapter_rng, d + cfg.d_c_video, d)
        ad.concat_video_bias = zeros(1, d, requires_grad=True)
        ad.gif = GifParams.zero_init(d)
    elif variant == "Concat2":
        ad.concat_tri = glorot_uniform(adapter_rng, d + cfg.d_c_audio + cfg.d_c_video, d)
        ad.concat_tri_bias = zeros(1, d, requires_grad=True)
    if cfg.post_fusion_norm and variant != "TextOnly":
        ad.post_norm = LayerNormParams.init(d)

    return ModelParams(
        embedding=embedding,
        enc_layers=enc_layers,
        dec_layers=dec_layers,
        out_proj=out_proj,
        out_bias=out_bias,
        audio_enc=audio_enc,
        video_enc=video_enc,
        adapter=ad,
    )


def named_parameters(params: ModelParams) -> list[tuple[str, Tensor]]:
    """All learnable tensors in a stable order (checkpoints, optimizer)."""
    out: list[tuple[str, Tensor]] = [("embedding", params.embedding)]
    for i, layer in enumerate(params.enc_layers):
        out.extend(layer.named(f"enc.{i}."))
    for i, layer in enumerate(params.dec_layers):
        out.extend(layer.named(f"dec.{i}."))
    out.append(("out_proj", params.out_proj))
    out.append(("out_bias", params.out_bias))
    if params.audio_enc is not None:
        out.extend(params.audio_enc.named("audio_enc."))
    if params.video_enc is not None:
        out.extend(params.video_enc.named("video_enc."))
    out.extend(params.adapter.named("adapter."))
    return out


# ---- constant caches --------------------------------------------------------

_POS_CACHE: dict[tuple[int, int], Tensor] = {}
_MASK_CACHE: dict[int, Tensor] = {}
_POOL_CACHE: dict[tuple[int, int], Tensor] = {}


def sinusoidal_positions(n: int, d: int) -> Tensor:
    key = (n, d)
    if key not in _POS_CACHE:
        pos = np.arange(n, dtype=np.float64)[:, None]
        i = np.arange(d, dtype=np.float64)[None, :]
        angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / d)
        pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
        _POS_CACHE[key] = Tensor(pe)
    return _POS_CACHE[key]


def _causal_mask(n: int) -> Tensor:
    # additive mask: large negative above the diagonal
    if n not in _MASK_CACHE:
        m = np.triu(np.full((n, n), -1e9), k=1)
        _MASK_CACHE[n] = Tensor(m)
    return _MASK_CACHE[n]


def _bucket_sizes(total: int, groups: int) -> list[int]:
    base, rem = divmod(total, groups)
    return [base + 1] * rem + [base] * (groups - rem)


def _pool_matrix(f: int, n: int) -> Tensor:
    """n x f bucket-mean matrix. Contiguous buckets, larger buckets first;
    with fewer frames than rows, each output row repeats its nearest frame."""
    key = (f, n)
    if key not in _POOL_CACHE:
        p = np.zeros((n, f))
        if f >= n:
            start = 0
            for i, size in enumerate(_bucket_sizes(f, n)):
                p[i, start:start + size] = 1.0 / size
                start += size
        else:
            start = 0
            for j, size in enumerate(_bucket_sizes(n, f)):
                p[start:start + size, j] = 1.0
                start += size
        _POOL_CACHE[key] = Tensor(p)
    return _POOL_CACHE[key]


def align_temporal(features: Tensor, n: int) -> Tensor:
    """Map f frame rows to exactly n rows by uniform bucket averaging.

    f >= n: contiguous buckets of near-equal size (larger buckets first),
    one mean per output row. f < n: rows repeat their nearest frame, so
    every output row is still the mean of at least one frame. f == n is
    the identity. Differentiable (a constant matrix multiply).
    """
    if not isinstance(features, Tensor):
        features = Tensor(features)
    f = features.shape[0]
    if f < 1 or n < 1:
        raise ContractError(f"align_temporal needs f >= 1 and n >= 1, got f={f}, n={n}")
    return matmul(_pool_matrix(f, n), features)


# ---- forward pieces -----------------------------------------------------------


def _headed_attend(q: Tensor, k: Tensor, v: Tensor, heads: int, mask: Tensor | None) -> Tensor:
    d = q.shape[1]
    d_k = d // heads
    if heads == 1:
        logits = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_k))
        if mask is not None:
            logits = add(logits, mask)
        return matmul(softmax_rows(logits), v)
    outs = []
    for i in range(heads):
        lo, hi = i * d_k, (i + 1) * d_k
        logits = scale(
            matmul(slice_cols(q, lo, hi), transpose(slice_cols(k, lo, hi))),
            1.0 / math.sqrt(d_k),
        )
        if mask is not None:
            logits = add(logits, mask)
        outs.append(matmul(softmax_rows(logits), slice_cols(v, lo, hi)))
    out = outs[0]
    for o in outs[1:]:
        out = concat_last(out, o)
    return out


def _attention(q_in: Tensor, kv_in: Tensor, p: AttentionParams, heads: int,
               mask: Tensor | None = None) -> Tensor:
    q = matmul(q_in, p.w_q)
    k = matmul(kv_in, p.w_k)
    v = matmul(kv_in, p.w_v)
    return matmul(_headed_attend(q, k, v, heads, mask), p.w_o)


def _ffn(x: Tensor, p: FeedForwardParams) -> Tensor:
    return add(matmul(relu(add(matmul(x, p.w1), p.b1)), p.w2), p.b2)


def _ln(x: Tensor, p: LayerNormParams) -> Tensor:
    return layer_norm_rows(x, p.gain, p.bias)


def _encoder_layer(x: Tensor, p: EncoderLayerParams, heads: int) -> Tensor:
    h = _ln(add(x, _attention(x, x, p.attn, heads)), p.ln1)
    return _ln(add(h, _ffn(h, p.ffn)), p.ln2)


def _decoder_layer(x: Tensor, enc_out: Tensor, p: DecoderLayerParams, heads: int,
                   mask: Tensor) -> Tensor:
    h = _ln(add(x, _attention(x, x, p.self_attn, heads, mask)), p.ln1)
    h = _ln(add(h, _attention(h, enc_out, p.cross_attn, heads)), p.ln2)
    return _ln(add(h, _ffn(h, p.ffn)), p.ln3)


def _modality_context(features, p: ModalityEncoderParams, n: int, label: str,
                      max_len: int) -> Tensor:
    if not isinstance(features, Tensor):
        features = Tensor(features)
    f = features.shape[0]
    if features.data.size == 0 or f < 1:
        raise ContractError(
            f"{label}: zero-frame modality; represent a silent modality as one all-zero frame"
        )
    if f > max_len:
        raise ContractError(f"{label}: {f} frames exceed the configured cap of {max_len}")
    raw = p.in_proj.shape[0]
    if features.shape[1] != raw:
        raise ShapeError(f"{label}: feature width {features.shape[1]} does not match "
                         f"the configured raw width {raw}")
    x = add(matmul(features, p.in_proj), p.in_bias)
    x = _encoder_layer(x, p.layer, 1)
    return align_temporal(x, n)


@dataclass
class AdapterOverrides:
    """Test/diagnostic pins: constants for the attention gates and the
    fusion gates. Not used by training."""

    mca2_gate: float | None = None
    gif_gate: float | None = None


def _apply_adapter(h: Tensor, ctx_a: Tensor | None, ctx_v: Tensor | None,
                   cfg: ModelConfig, params: ModelParams,
                   ov: AdapterOverrides | None) -> Tensor:
    ad = params.adapter
    variant = cfg.variant
    ov = ov or AdapterOverrides()
    n = h.shape[0]

    def gif_gates():
        if ov.gif_gate is None:
            return None
        g = Tensor(np.full((n, cfg.d), float(ov.gif_gate)))
        return (g, g)

    if variant == "TextOnly":
        return h
    if variant in ("MAF", "NoGIF"):
        h_a = mca2_forward(h, ctx_a, ad.mca2_audio, gate_override=ov.mca2_gate)
        h_v = mca2_forward(h, ctx_v, ad.mca2_video, gate_override=ov.mca2_gate)
        if variant == "NoGIF":
            fused = add(h, add(h_a, h_v))
        else:
            fused = gif_fuse(h, h_a, h_v, ad.gif, sigmoid_gates=cfg.sigmoid_gates,
                             gates=gif_gates())
    elif variant == "DPA":
        # plain cross-attention: keys/values come purely from projected context
        pa, pv = ad.mca2_audio, ad.mca2_video
        h_a = _headed_attend(matmul(h, pa.w_q), matmul(ctx_a, pa.ctx_k),
                             matmul(ctx_a, pa.ctx_v), pa.heads, None)
        h_v = _headed_attend(matmul(h, pv.w_q), matmul(ctx_v, pv.ctx_k),
                             matmul(ctx_v, pv.ctx_v), pv.heads, None)
        fused = gif_fuse(h, h_a, h_v, ad.gif, sigmoid_gates=cfg.sigmoid_gates,
                         gates=gif_gates())
    elif variant == "Concat1":
        h_a = add(matmul(concat_last(h, ctx_a), ad.concat_audio), ad.concat_audio_bias)
        h_v = add(matmul(concat_last(h, ctx_v), ad.concat_video), ad.concat_video_bias)
        fused = gif_fuse(h, h_a, h_v, ad.gif, sigmoid_gates=cfg.sigmoid_gates,
                         gates=gif_gates())
    elif variant == "Concat2":
        fused = add(matmul(concat_last(concat_last(h, ctx_a), ctx_v), ad.concat_tri),
                    ad.concat_tri_bias)
    elif variant == "TA":
        h_a = mca2_forward(h, ctx_a, ad.mca2_audio, gate_override=ov.mca2_gate)
        fused = gif_fuse_single(h, h_a, ad.gif.w_audio, ad.gif.b_audio,
                                sigmoid_gates=cfg.sigmoid_gates)
    elif variant == "TV":
        h_v = mca2_forward(h, ctx_v, ad.mca2_video, gate_override=ov.mca2_gate)
        fused = gif_fuse_single(h, h_v, ad.gif.w_video, ad.gif.b_video,
                                sigmoid_gates=cfg.sigmoid_gates)
    else:  # pragma: no cover - guarded by cfg.validate()
        raise ConfigError(f"unknown variant '{variant}'")

    if ad.post_norm is not None:
        fused = _ln(fused, ad.post_norm)
    return fused


# ---- encode / decode ------------------------------------------------------------


def encode(text_ids: Sequence[int], audio, video, cfg: ModelConfig, params: ModelParams,
           overrides: AdapterOverrides | None = None) -> Tensor:
    """Run the encoder stack with the fusion adapter inserted before layer
    ``cfg.fusion_layer_index``. Returns the n x d encoder output.

    ``text_ids`` must be non-empty and at most ``max_text_len`` long; it is
    padded to that length with the padding id. Modality features are only
    consulted for variants that use them.
    """
    n, d = cfg.max_text_len, cfg.d
    ids = list(text_ids)
    if not ids:
        raise ContractError("encode: empty token sequence")
    if len(ids) > n:
        raise ContractError(f"encode: {len(ids)} tokens exceed max_text_len={n}")
    ids = ids + [Vocabulary.PAD_ID] * (n - len(ids))

    x = add(scale(gather_rows(params.embedding, ids), math.sqrt(d)), sinusoidal_positions(n, d))

    ctx_a = ctx_v = None
    fuse_at = cfg.fusion_layer_index - 1 if cfg.variant != "TextOnly" else None
    for i, layer in enumerate(params.enc_layers):
        if fuse_at is not None and i == fuse_at:
            if cfg.uses_audio():
                ctx_a = _modality_context(audio, params.audio_enc, n, "audio", cfg.max_frames)
            if cfg.uses_video():
                ctx_v = _modality_context(video, params.video_enc, n, "video", cfg.max_windows)
            x = _apply_adapter(x, ctx_a, ctx_v, cfg, params, overrides)
        x = _encoder_layer(x, layer, cfg.heads)
    return x


def decode_logits(enc_out: Tensor, target_in_ids: Sequence[int], cfg: ModelConfig,
                  params: ModelParams) -> Tensor:
    """Teacher-forced decoder pass; returns one logit row per input token."""
    ids = list(target_in_ids)
    if not ids:
        raise ContractError("decode_logits: empty target input")
    if len(ids) > cfg.max_target_len + 1:
        raise ContractError(
            f"decode_logits: {len(ids)} target tokens exceed max_target_len={cfg.max_target_len}"
        )
    length, d = len(ids), cfg.d
    x = add(scale(gather_rows(params.embedding, ids), math.sqrt(d)),
            sinusoidal_positions(length, d))
    mask = _causal_mask(length)
    for layer in params.dec_layers:
        x = _decoder_layer(x, enc_out, layer, cfg.heads, mask)
    return add(matmul(x, params.out_proj), params.out_bias)


def decode_greedy(enc_out: Tensor, cfg: ModelConfig, params: ModelParams,
                  max_len: int | None = None) -> list[int]:
    """Greedy argmax decoding from the begin sentinel until the end sentinel
    or the length cap. Returns generated content ids (sentinels stripped)."""
    limit = cfg.max_target_len if max_len is None else max_len
    ids = [Vocabulary.BOS_ID]
    out: list[int] = []
    for _ in range(limit):
        logits = decode_logits(enc_out, ids, cfg, params)
        nxt = int(np.argmax(logits.data[-1]))
        if nxt == Vocabulary.EOS_ID:
            break
        out.append(nxt)
        ids.append(nxt)
    return out


# ---- instances to token ids -------------------------------------------------------


def instance_texts(inst: DialogueInstance) -> Iterable[str]:
    for u in inst.utterances:
        yield u.speaker
        yield u.text
    yield inst.explanation


def build_vocabulary(instances: Sequence[DialogueInstance]) -> Vocabulary:
    def texts():
        for inst in instances:
            yield from instance_texts(inst)

    return Vocabulary.from_texts(texts())


def instance_token_ids(inst: DialogueInstance, vocab: Vocabulary) -> list[int]:
    toks: list[str] = []
    for u in inst.utterances:
        toks.extend(tokenize(u.speaker))
        toks.extend(tokenize(u.text))
    return vocab.encode(toks)


def instance_target_ids(inst: DialogueInstance, vocab: Vocabulary) -> list[int]:
    return vocab.encode(tokenize(inst.explanation))


# ---- training ---------------------------------------------------------------------


@dataclass
class TrainedModel:
    config: ModelConfig
    vocab: Vocabulary
    params: ModelParams
    epoch_losses: list[float] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)


class Adam:
    """Adam with bias correction and global-norm gradient clipping.

    Nothing is updated in place on arrays a recorded graph might still
    reference; parameter ``data`` is replaced between steps.
    """

    def __init__(self, named: Sequence[tuple[str, Tensor]], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 grad_clip: float | None = 1.0):
        self.named = list(named)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.grad_clip = grad_clip
        self.t = 0
        self._m = {name: np.zeros_like(t.data) for name, t in self.named}
        self._v = {name: np.zeros_like(t.data) for name, t in self.named}

    def zero_grad(self) -> None:
        for _, t in self.named:
            t.zero_grad()

    def step(self) -> None:
        self.t += 1
        grads = {name: t.grad for name, t in self.named if t.grad is not None}
        if not grads:
            return
        factor = 1.0
        if self.grad_clip is not None:
            total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.grad_clip:
                factor = self.grad_clip / total
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, t in self.named:
            g = grads.get(name)
            if g is None:
                continue
            if factor != 1.0:
                g = g * factor
            m = self._m[name] = b1 * self._m[name] + (1.0 - b1) * g
            v = self._v[name] = b2 * self._v[name] + (1.0 - b2) * (g * g)
            t.data = t.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _instance_loss(src_ids, audio, video, tgt_ids, cfg, params) -> Tensor:
    enc_out = encode(src_ids, audio, video, cfg, params)
    dec_in = [Vocabulary.BOS_ID] + tgt_ids
    dec_target = tgt_ids + [Vocabulary.EOS_ID]
    logits = decode_logits(enc_out, dec_in, cfg, params)
    return cross_entropy_rows(logits, dec_target, np.ones(len(dec_target)))


def train(instances: Sequence[DialogueInstance], cfg: ModelConfig,
          tcfg: TrainConfig | None = None) -> TrainedModel:
    """Teacher-forced training on explanation targets.

    The vocabulary is built from ``instances`` (pass the training split
    only). Deterministic given cfg.seed: shuffling, init, and every loss.
    Raises TrainingDivergedError naming the step if the loss goes
    non-finite.
    """
    tcfg = tcfg or TrainConfig()
    tcfg.validate()
    if not instances:
        raise ContractError("train: empty training set")
    vocab = build_vocabulary(instances)
    cfg = replace(cfg, vocab_size=len(vocab))
    cfg.validate()
    params = init_model_params(cfg)

    prepared = []
    for inst in instances:
        src = instance_token_ids(inst, vocab)
        tgt = instance_target_ids(inst, vocab)
        if len(src) > cfg.max_text_len:
            raise ContractError(
                f"instance '{inst.id}': {len(src)} text tokens exceed max_text_len={cfg.max_text_len}"
            )
        if len(tgt) + 1 > cfg.max_target_len:
            raise ContractError(
                f"instance '{inst.id}': explanation length {len(tgt)} exceeds "
                f"max_target_len={cfg.max_target_len}"
            )
        audio = Tensor(inst.audio_features) if cfg.uses_audio() else None
        video = Tensor(inst.video_features) if cfg.uses_video() else None
        prepared.append((src, audio, video, tgt))

    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
    opt = Adam(named_parameters(params), lr=tcfg.lr, grad_clip=tcfg.grad_clip)

    step = 0
    epoch_losses: list[float] = []
    step_losses: list[float] = []
    n = len(prepared)
    for _epoch in range(tcfg.epochs):
        order = shuffle_rng.permutation(n)
        epoch_total = 0.0
        for lo in range(0, n, tcfg.batch_size):
            batch = order[lo:lo + tcfg.batch_size]
            opt.zero_grad()
            batch_total = 0.0
            inv = 1.0 / len(batch)
            for idx in batch:
                src, audio, video, tgt = prepared[idx]
                loss = _instance_loss(src, audio, video, tgt, cfg, params)
                batch_total += loss.item()
                backward(scale(loss, inv))
            step += 1
            mean_loss = batch_total / len(batch)
            if not math.isfinite(mean_loss):
                raise TrainingDivergedError(f"non-finite loss at step {step}")
            step_losses.append(mean_loss)
            epoch_total += batch_total
            opt.step()
        epoch_losses.append(epoch_total / n)
    return TrainedModel(config=cfg, vocab=vocab, params=params,
                        epoch_losses=epoch_losses, step_losses=step_losses)


def generate_explanation(tm: TrainedModel, inst: DialogueInstance) -> str:
    """Greedy explanation for one instance, as a token string."""
    cfg = tm.config
    ids = instance_token_ids(inst, tm.vocab)
    audio = inst.audio_features if cfg.uses_audio() else None
    video = inst.video_features if cfg.uses_video() else None
    enc_out = encode(ids, audio, video, cfg, tm.params)
    out_ids = decode_greedy(enc_out, cfg, tm.params)
    return " ".join(tm.vocab.decode(out_ids))


# ---- checkpoints --------------------------------------------------------------------

_CKPT_FORMAT = "maf-checkpoint"
_CKPT_VERSION = 1


def save_checkpoint(tm: TrainedModel, path: str | Path) -> None:
    """One JSON header line (version, config, vocab, shape table) followed by
    row-major float64 little-endian blobs, one per parameter in header order.
    Byte-deterministic for a given model."""
    named = named_parameters(tm.params)
    header = {
        "format": _CKPT_FORMAT,
        "version": _CKPT_VERSION,
        "config": asdict(tm.config),
        "vocab": tm.vocab.tokens,
        "params": [{"name": n, "rows": t.shape[0], "cols": t.shape[1]} for n, t in named],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, t in named:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes(order="C"))


def load_checkpoint(path: str | Path) -> TrainedModel:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except ValueError:  # bad JSON, or bytes that do not even decode
            raise ParseError(f"'{path}' does not start with a checkpoint header") from None
        if header.get("format") != _CKPT_FORMAT:
            raise ParseError(f"'{path}' is not a model checkpoint")
        if header.get("version") != _CKPT_VERSION:
            raise ParseError(f"unsupported checkpoint version {header.get('version')}")
        cfg = ModelConfig(**header["config"])
        vocab = Vocabulary.from_tokens(header["vocab"])
        params = init_model_params(cfg)
        named = dict(named_parameters(params))
        listed = [entry["name"] for entry in header["params"]]
        if sorted(listed) != sorted(named):
            raise ParseError(f"'{path}' parameter table does not match the configured architecture")
        for entry in header["params"]:
            rows, cols = entry["rows"], entry["cols"]
            blob = fh.read(rows * cols * 8)
            if len(blob) != rows * cols * 8:
                raise ParseError(f"'{path}' is truncated at parameter '{entry['name']}'")
            t = named[entry["name"]]
            if t.shape != (rows, cols):
                raise ParseError(
                    f"parameter '{entry['name']}' has shape {t.shape}, file says {(rows, cols)}"
                )
            t.data = np.frombuffer(blob, dtype="<f8").reshape(rows, cols).astype(np.float64)
        if fh.read(1):
            raise ParseError(f"'{path}' has trailing bytes after the last parameter")
    return TrainedModel(config=cfg, vocab=vocab, params=params)
