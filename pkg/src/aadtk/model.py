"""Dual-encoder attention classifier.

An EEG window and each candidate speech window are encoded into a shared
latent space (spatial attention + residual CNN on the EEG side, a 2-layer
CNN on the speech side). Latents are feature-weighted, flattened, and
compared by cosine similarity; a temperature softmax over the similarity
scores yields the class probabilities.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as tt
from .data import FeatureTensor, read_feature_file, write_feature_file
from .tensor import Tape, Tensor


@dataclass(frozen=True)
class ModelConfig:
    eeg_channels: int = 32
    latent_dim: int = 64        # F; equals the speech feature dimension
    virtual_channels: int = 64  # D, rows of the spatial attention
    n_res_blocks: int = 5
    kernel_size: int = 3
    temperature: float = 0.05

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.kernel_size}")
        for name in ("eeg_channels", "latent_dim", "virtual_channels", "n_res_blocks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ConvParams:
    kernels: Tensor  # (Cout, Cin, K)
    bias: Tensor     # (Cout,)


@dataclass
class NormParams:
    scale: Tensor
    shift: Tensor


@dataclass
class ResBlockParams:
    norm1: NormParams
    conv1: ConvParams
    norm2: NormParams
    conv2: ConvParams


@dataclass
class ModelParams:
    config: ModelConfig
    attn_logits: Tensor       # (D, C)
    eeg_in: ConvParams        # D -> F
    blocks: list              # n_res_blocks of ResBlockParams, F -> F
    speech_conv1: ConvParams  # F -> F
    speech_norm: NormParams
    speech_conv2: ConvParams  # F -> F
    w: Tensor                 # (F,) shared feature weight

    def named_parameters(self) -> list:
        out = [("attn_logits", self.attn_logits)]
        out += [("eeg_in.kernels", self.eeg_in.kernels), ("eeg_in.bias", self.eeg_in.bias)]
        for i, blk in enumerate(self.blocks):
            p = f"block{i}"
            out += [
                (f"{p}.norm1.scale", blk.norm1.scale),
                (f"{p}.norm1.shift", blk.norm1.shift),
                (f"{p}.conv1.kernels", blk.conv1.kernels),
                (f"{p}.conv1.bias", blk.conv1.bias),
                (f"{p}.norm2.scale", blk.norm2.scale),
                (f"{p}.norm2.shift", blk.norm2.shift),
                (f"{p}.conv2.kernels", blk.conv2.kernels),
                (f"{p}.conv2.bias", blk.conv2.bias),
            ]
        out += [
            ("speech_conv1.kernels", self.speech_conv1.kernels),
            ("speech_conv1.bias", self.speech_conv1.bias),
            ("speech_norm.scale", self.speech_norm.scale),
            ("speech_norm.shift", self.speech_norm.shift),
            ("speech_conv2.kernels", self.speech_conv2.kernels),
            ("speech_conv2.bias", self.speech_conv2.bias),
            ("w", self.w),
        ]
        return out

    def tensors(self) -> list:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.zero_grad()

    def assert_finite(self) -> None:
        for name, t in self.named_parameters():
            if not np.all(np.isfinite(t.data)):
                raise tt.NonFiniteError(f"parameter {name} contains non-finite values")

    def copy(self) -> "ModelParams":
        """Deep copy with detached gradients (for checkpoint snapshots)."""

        def ct(t: Tensor) -> Tensor:
            return Tensor(t.data.copy(), requires_grad=t.requires_grad)

        def cc(c: ConvParams) -> ConvParams:
            return ConvParams(ct(c.kernels), ct(c.bias))

        def cn(n: NormParams) -> NormParams:
            return NormParams(ct(n.scale), ct(n.shift))

        return ModelParams(
            config=self.config,
            attn_logits=ct(self.attn_logits),
            eeg_in=cc(self.eeg_in),
            blocks=[ResBlockParams(cn(b.norm1), cc(b.conv1), cn(b.norm2), cc(b.conv2)) for b in self.blocks],
            speech_conv1=cc(self.speech_conv1),
            speech_norm=cn(self.speech_norm),
            speech_conv2=cc(self.speech_conv2),
            w=ct(self.w),
        )


def init_params(cfg: ModelConfig, seed=0, dtype=np.float32) -> ModelParams:
    """Fresh trainable parameters.

    Attention logits start at zero (uniform attention over channels),
    conv kernels uniform in +-sqrt(1/(Cin*K)) with zero biases, norms at
    scale 1 / shift 0, and the feature weight vector at all ones.
    """
    rng = np.random.default_rng(seed)
    c, f, d, k = cfg.eeg_channels, cfg.latent_dim, cfg.virtual_channels, cfg.kernel_size

    def conv(cout, cin):
        bound = np.sqrt(1.0 / (cin * k))
        kern = rng.uniform(-bound, bound, size=(cout, cin, k)).astype(dtype)
        return ConvParams(
            kernels=Tensor(kern, requires_grad=True),
            bias=Tensor(np.zeros(cout, dtype=dtype), requires_grad=True),
        )

    def norm():
        return NormParams(
            scale=Tensor(np.ones(f, dtype=dtype), requires_grad=True),
            shift=Tensor(np.zeros(f, dtype=dtype), requires_grad=True),
        )

    return ModelParams(
        config=cfg,
        attn_logits=Tensor(np.zeros((d, c), dtype=dtype), requires_grad=True),
        eeg_in=conv(f, d),
        blocks=[ResBlockParams(norm(), conv(f, f), norm(), conv(f, f)) for _ in range(cfg.n_res_blocks)],
        speech_conv1=conv(f, f),
        speech_norm=norm(),
        speech_conv2=conv(f, f),
        w=Tensor(np.ones(f, dtype=dtype), requires_grad=True),
    )


# ---------------------------------------------------------------------------
# forward passes; every op takes an optional tape, None means inference


def spatial_attention(e: Tensor, attn_logits: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Mix EEG channels into virtual channels: each row of the logit
    matrix becomes a softmax distribution over the C input channels."""
    if e.shape[-2] != attn_logits.shape[1]:
        raise tt.ShapeError(
            f"spatial_attention: {attn_logits.shape[1]}-channel attention vs input {e.shape}"
        )
    a = tt.softmax(attn_logits, temperature=1.0, axis=-1, tape=tape)
    return tt.matmul(a, e, tape)


def eeg_encode(e: Tensor, params: ModelParams, tape: Optional[Tape] = None) -> Tensor:
    """Spatial attention, input conv + GELU, then pre-activation residual
    blocks: h + conv(gelu(norm(conv(gelu(norm(h)))))). Time length is
    preserved throughout."""
    h = spatial_attention(e, params.attn_logits, tape)
    h = tt.gelu(tt.conv1d(h, params.eeg_in.kernels, params.eeg_in.bias, tape), tape)
    for blk in params.blocks:
        r = tt.channel_norm(h, blk.norm1.scale, blk.norm1.shift, tape)
        r = tt.gelu(r, tape)
        r = tt.conv1d(r, blk.conv1.kernels, blk.conv1.bias, tape)
        r = tt.channel_norm(r, blk.norm2.scale, blk.norm2.shift, tape)
        r = tt.gelu(r, tape)
        r = tt.conv1d(r, blk.conv2.kernels, blk.conv2.bias, tape)
        h = tt.add(h, r, tape)
    return h


def speech_encode(s: Tensor, params: ModelParams, tape: Optional[Tape] = None) -> Tensor:
    h = tt.conv1d(s, params.speech_conv1.kernels, params.speech_conv1.bias, tape)
    h = tt.channel_norm(h, params.speech_norm.scale, params.speech_norm.shift, tape)
    h = tt.gelu(h, tape)
    return tt.conv1d(h, params.speech_conv2.kernels, params.speech_conv2.bias, tape)


def weight_and_flatten(z: Tensor, w: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Scale latent row i by w[i], then flatten row-major to a vector
    (or to (B, F*T) for batched input)."""
    zt = tt.scale_features(z, w, tape)
    if z.ndim == 2:
        return tt.reshape(zt, (z.shape[0] * z.shape[1],), tape)
    return tt.reshape(zt, (z.shape[0], z.shape[1] * z.shape[2]), tape)


def stream_scores(
    e: Tensor, streams: Sequence[Tensor], params: ModelParams, tape: Optional[Tape] = None
) -> Tensor:
    """Cosine similarity of the encoded EEG against each encoded stream.
    Returns (N,) scores, or (B, N) for batched input."""
    v_e = weight_and_flatten(eeg_encode(e, params, tape), params.w, tape)
    scores = [
        tt.cosine_similarity(
            v_e, weight_and_flatten(speech_encode(s, params, tape), params.w, tape), tape
        )
        for s in streams
    ]
    return tt.stack(scores, tape)


def classify(
    e: Tensor,
    s1: Tensor,
    s2: Tensor,
    params: ModelParams,
    temperature: Optional[float] = None,
):
    """Probabilities for the two candidate streams and the predicted index.

    Returns (p1, p2, yhat); batched input gives arrays and an int vector.
    Exact ties resolve to index 1.
    """
    tau = params.config.temperature if temperature is None else temperature
    scores = stream_scores(e, [s1, s2], params)
    p = tt.softmax(scores, temperature=tau).data
    if p.ndim == 1:
        yhat = 1 if p[0] >= p[1] else 2
        return float(p[0]), float(p[1]), yhat
    yhat = np.where(p[:, 0] >= p[:, 1], 1, 2)
    return p[:, 0], p[:, 1], yhat


def loss(
    scores: Tensor,
    labels,
    temperature: float,
    tape: Optional[Tape] = None,
) -> Tensor:
    """-log of the labeled stream's probability, mean over the batch;
    computed from the scores via log-sum-exp."""
    return tt.cross_entropy(scores, labels, temperature, tape)


# ---------------------------------------------------------------------------
# serialization: directory of feature files plus a JSON config


def _to_2d(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 1:
        return arr[None, :]
    if arr.ndim == 3:
        return arr.reshape(arr.shape[0], -1)
    return arr


def save_params(dir_path, params: ModelParams) -> None:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"format": 1, "config": asdict(params.config), "config_hash": params.config.hash()}
    (d / "config.json").write_text(json.dumps(meta, indent=1))
    for name, t in params.named_parameters():
        fname = name.replace(".", "_") + ".ftf"
        write_feature_file(d / fname, FeatureTensor(_to_2d(t.data), 0.0, source=name))


def load_params(dir_path) -> ModelParams:
    d = Path(dir_path)
    meta = json.loads((d / "config.json").read_text())
    cfg = ModelConfig(**meta["config"])
    if meta.get("config_hash") != cfg.hash():
        raise ValueError(f"{d}: config hash mismatch, file edited or version skew")
    params = init_params(cfg, seed=0)
    for name, t in params.named_parameters():
        fname = name.replace(".", "_") + ".ftf"
        arr = read_feature_file(d / fname).data
        t.data = np.ascontiguousarray(arr.reshape(t.data.shape), dtype=t.data.dtype)
    return params
