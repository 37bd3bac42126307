"""Dense tensor kernels for the spatiotemporal adapter.

Feature tensors are (T, H, W, C) arrays indexed time, height, width,
channel. Parameters are stored as 32-bit floats; all arithmetic promotes
to 64-bit, reductions accumulate in 64-bit, and results come back as
float64 so downstream tolerances are limited by the math, not the
storage width. Convolution uses the cross-correlation convention (no
kernel flip) with "same" padding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError

PADDING_MODES = ("zero", "edge")


def check_feature_tensor(x: np.ndarray) -> np.ndarray:
    """Validate a (T, H, W, C) feature tensor and return it as float64."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 4 or min(arr.shape) < 1:
        raise DimensionMismatchError(f"expected a (T, H, W, C) tensor, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("feature tensor contains non-finite values")
    return arr


@dataclass(frozen=True)
class DepthwiseKernel3D:
    """Per-channel (k_t, k_h, k_w) coefficients with optional per-channel bias.

    ``coeffs`` has shape (C, k_t, k_h, k_w); extents must be odd so that
    "same" padding is symmetric.
    """

    coeffs: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float32)
        if coeffs.ndim != 4:
            raise ValueError(f"kernel coeffs must be (C, k_t, k_h, k_w), got {coeffs.shape}")
        if any(k % 2 == 0 for k in coeffs.shape[1:]):
            raise ValueError(f"kernel extents must be odd, got {coeffs.shape[1:]}")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        if self.bias is not None:
            bias = np.asarray(self.bias, dtype=np.float32)
            if bias.shape != (coeffs.shape[0],):
                raise ValueError(f"bias must have shape ({coeffs.shape[0]},), got {bias.shape}")
            bias.setflags(write=False)
            object.__setattr__(self, "bias", bias)

    @property
    def channels(self) -> int:
        return self.coeffs.shape[0]

    @property
    def extent(self) -> tuple[int, int, int]:
        return self.coeffs.shape[1], self.coeffs.shape[2], self.coeffs.shape[3]

    def param_count(self) -> int:
        return int(self.coeffs.size + (0 if self.bias is None else self.bias.size))


def depthwise_conv3d(
    x: np.ndarray,
    kernel: DepthwiseKernel3D,
    padding: str = "zero",
) -> np.ndarray:
    """Channel-independent 3-D cross-correlation with "same" output size.

    ``padding`` selects how out-of-range samples are produced: ``zero``
    (the default) pads with zeros; ``edge`` replicates the border sample,
    which makes the convolution boundary-free for signals that are
    constant along the padded axis.
    """
    arr = check_feature_tensor(x)
    if kernel.channels != arr.shape[3]:
        raise DimensionMismatchError(
            f"kernel has {kernel.channels} channels but tensor has {arr.shape[3]}"
        )
    if padding not in PADDING_MODES:
        raise ValueError(f"padding must be one of {PADDING_MODES}, got {padding!r}")
    k_t, k_h, k_w = kernel.extent
    p_t, p_h, p_w = k_t // 2, k_h // 2, k_w // 2
    mode = "constant" if padding == "zero" else "edge"
    padded = np.pad(arr, ((p_t, p_t), (p_h, p_h), (p_w, p_w), (0, 0)), mode=mode)

    t, h, w, _ = arr.shape
    out = np.zeros_like(arr)
    coeffs = kernel.coeffs.astype(np.float64)
    # Accumulation over kernel offsets in lexicographic order.
    for dt in range(k_t):
        for dh in range(k_h):
            for dw in range(k_w):
                window = padded[dt : dt + t, dh : dh + h, dw : dw + w, :]
                out += window * coeffs[:, dt, dh, dw]
    if kernel.bias is not None:
        out += kernel.bias.astype(np.float64)
    return out


def pointwise_project(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Map each position's channel vector through a (C_in, C_out) matrix."""
    arr = check_feature_tensor(x)
    w = np.asarray(weight, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != arr.shape[3]:
        raise DimensionMismatchError(
            f"projection expects ({arr.shape[3]}, C_out) weights, got {w.shape}"
        )
    return arr @ w


def flatten_positions(x: np.ndarray) -> np.ndarray:
    """Flatten (T, H, W, C) to a ((T*H*W), C) sequence in (t, h, w) order."""
    arr = check_feature_tensor(x)
    return arr.reshape(-1, arr.shape[3])


def unflatten_positions(seq: np.ndarray, dims: tuple[int, int, int]) -> np.ndarray:
    """Inverse of :func:`flatten_positions` for the given (T, H, W)."""
    arr = np.asarray(seq, dtype=np.float64)
    t, h, w = dims
    if arr.ndim != 2 or arr.shape[0] != t * h * w:
        raise DimensionMismatchError(
            f"expected a ({t * h * w}, C) sequence for dims {dims}, got shape {arr.shape}"
        )
    return arr.reshape(t, h, w, arr.shape[1])


@dataclass(frozen=True)
class AttentionParams:
    """Multi-head attention projections over a model width that the head
    count must divide; scores are scaled by ``1 / sqrt(head_dim)``."""

    heads: int
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray

    def __post_init__(self):
        mats = {}
        width = None
        for name in ("w_q", "w_k", "w_v", "w_o"):
            m = np.asarray(getattr(self, name), dtype=np.float32)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"{name} must be square, got shape {m.shape}")
            if width is None:
                width = m.shape[0]
            elif m.shape[0] != width:
                raise ValueError("attention projections disagree on width")
            m.setflags(write=False)
            mats[name] = m
        if self.heads < 1 or width % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide the width ({width})")
        for name, m in mats.items():
            object.__setattr__(self, name, m)

    @property
    def width(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    def param_count(self) -> int:
        return int(self.w_q.size + self.w_k.size + self.w_v.size + self.w_o.size)


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for overflow safety."""
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def multi_head_attention(
    query_seq: np.ndarray,
    key_seq: np.ndarray,
    value_seq: np.ndarray,
    params: AttentionParams,
    return_weights: bool = False,
):
    """Scaled dot-product attention over (L, C) sequences.

    Per head: ``softmax(Q Kᵀ / sqrt(head_dim)) V``; the heads are
    concatenated and passed through the output projection. Key and value
    sequences must have equal length. With ``return_weights`` the per-head
    attention matrices (heads, L_q, L_k) are returned as well, which is
    the probe hook invariant tests use to check that rows sum to 1.
    """
    q_in = np.asarray(query_seq, dtype=np.float64)
    k_in = np.asarray(key_seq, dtype=np.float64)
    v_in = np.asarray(value_seq, dtype=np.float64)
    c = params.width
    for name, seq in (("query", q_in), ("key", k_in), ("value", v_in)):
        if seq.ndim != 2 or seq.shape[1] != c:
            raise DimensionMismatchError(
                f"{name} sequence must have shape (L, {c}), got {seq.shape}"
            )
    if k_in.shape[0] != v_in.shape[0]:
        raise DimensionMismatchError(
            f"key length {k_in.shape[0]} != value length {v_in.shape[0]}"
        )

    d = params.head_dim
    q = q_in @ params.w_q.astype(np.float64)
    k = k_in @ params.w_k.astype(np.float64)
    v = v_in @ params.w_v.astype(np.float64)

    l_q, l_k = q.shape[0], k.shape[0]
    heads_out = np.empty((l_q, c), dtype=np.float64)
    weights = np.empty((params.heads, l_q, l_k), dtype=np.float64)
    for head in range(params.heads):
        cols = slice(head * d, (head + 1) * d)
        scores = q[:, cols] @ k[:, cols].T / math.sqrt(d)
        w = softmax_rows(scores)
        weights[head] = w
        heads_out[:, cols] = w @ v[:, cols]
    out = heads_out @ params.w_o.astype(np.float64)
    return (out, weights) if return_weights else out


def save_tensors(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays as flat little-endian float32 plus a JSON header.

    ``path`` names the JSON header; the payload goes to the same name with
    a ``.bin`` suffix.
    """
    path = Path(path)
    header: dict = {"format": "flat-le-f32", "arrays": {}}
    payload = bytearray()
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        header["arrays"][name] = {
            "shape": list(data.shape),
            "offset": len(payload),
        }
        payload.extend(data.tobytes())
    path.with_suffix(".bin").write_bytes(bytes(payload))
    path.write_text(json.dumps(header, sort_keys=True, indent=2), encoding="utf-8")


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    """Read arrays written by :func:`save_tensors`."""
    path = Path(path)
    header = json.loads(path.read_text(encoding="utf-8"))
    if header.get("format") != "flat-le-f32":
        raise ValueError(f"unrecognized tensor bundle format in {path}")
    payload = path.with_suffix(".bin").read_bytes()
    out = {}
    for name, meta in header["arrays"].items():
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=meta["offset"])
        out[name] = arr.reshape(shape).copy()
    return out
