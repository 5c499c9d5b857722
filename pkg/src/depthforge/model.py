"""The toy depth regressor, its frozen feature twin, AdamW, and checkpoints.

The regressor is deliberately small: patchify, two linear layers into a
per-patch feature row, and a linear-sigmoid decoder back to pixels. It
stands in for a real backbone so the training mechanics around it (losses,
perturbation, self-training) can be exercised end to end with exact
gradients. One forward implementation serves both training and inference:
inference wraps parameters in constant graph leaves and reads values back.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DomainError
from .maps import array_checksum
from .validation import check_image

ParamSet = dict[str, np.ndarray]
"""Named trainable tensors; the name prefix (enc_/dec_) is the group."""

ENCODER_PREFIX = "enc_"
DECODER_PREFIX = "dec_"

CHECKPOINT_MAGIC = b"DFTENS01"


def _patch_permutation(h: int, w: int, p: int) -> np.ndarray:
    """Flat indices turning a (3,H,W) image into (G, 3*P*P) patch rows."""
    gh, gw = h // p, w // p
    idx = np.arange(3 * h * w).reshape(3, gh, p, gw, p)
    return idx.transpose(1, 3, 0, 2, 4).reshape(gh * gw, 3 * p * p)


def _unpatch_permutation(h: int, w: int, p: int) -> np.ndarray:
    """Flat indices turning per-patch (G, P*P) predictions into (H, W)."""
    gh, gw = h // p, w // p
    idx = np.arange(gh * gw * p * p).reshape(gh, gw, p, p)
    return idx.transpose(0, 2, 1, 3).reshape(h, w)


def _check_divisible(h: int, w: int, p: int) -> None:
    if h % p or w % p:
        raise DomainError(f"image {h}x{w} not divisible by patch size {p}")


def init_params(patch_size: int, feature_dim: int, rng: np.random.Generator) -> ParamSet:
    """Fresh uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights and biases."""
    d_in = 3 * patch_size * patch_size
    d_out = patch_size * patch_size
    layers = (
        ("enc_w1", (d_in, feature_dim), d_in),
        ("enc_b1", (feature_dim,), d_in),
        ("enc_w2", (feature_dim, feature_dim), feature_dim),
        ("enc_b2", (feature_dim,), feature_dim),
        ("dec_w", (feature_dim, d_out), feature_dim),
        ("dec_b", (d_out,), feature_dim),
    )
    params: ParamSet = {}
    for name, shape, fan_in in layers:
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def param_nodes(params: ParamSet) -> dict[str, ad.Node]:
    return {name: ad.Node(tensor) for name, tensor in params.items()}


def params_checksum(params: ParamSet) -> str:
    return array_checksum(*(params[name] for name in sorted(params)))


def encoder_graph(nodes: dict[str, ad.Node], image: np.ndarray, patch_size: int) -> ad.Node:
    """Feature grid (G, C): the decoder's input and the alignment target."""
    image = check_image(image, "image")
    _, h, w = image.shape
    _check_divisible(h, w, patch_size)
    perm = _patch_permutation(h, w, patch_size)
    patches = ad.reshape(ad.take(ad.Node(image), perm.ravel()), perm.shape)
    hidden = ad.relu(ad.add(ad.matmul(patches, nodes["enc_w1"]), nodes["enc_b1"]))
    return ad.add(ad.matmul(hidden, nodes["enc_w2"]), nodes["enc_b2"])


def forward_graph(
    nodes: dict[str, ad.Node], image: np.ndarray, patch_size: int
) -> tuple[ad.Node, ad.Node]:
    """Disparity (H, W) and features (G, C) as graph nodes."""
    features = encoder_graph(nodes, image, patch_size)
    per_patch = ad.sigmoid(ad.add(ad.matmul(features, nodes["dec_w"]), nodes["dec_b"]))
    _, h, w = np.shape(image)
    unperm = _unpatch_permutation(h, w, patch_size)
    disparity = ad.reshape(ad.take(per_patch, unperm.ravel()), (h, w))
    return disparity, features


@dataclass
class ToyDepthModel:
    """Patch encoder + sigmoid decoder predicting normalized disparity."""

    params: ParamSet
    patch_size: int = 8
    feature_dim: int = 32

    @classmethod
    def initialize(cls, rng: np.random.Generator, patch_size: int = 8, feature_dim: int = 32):
        return cls(init_params(patch_size, feature_dim, rng), patch_size, feature_dim)

    def forward(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Plain-array forward: (disparity H×W in (0,1), features G×C)."""
        disparity, features = forward_graph(param_nodes(self.params), image, self.patch_size)
        return disparity.value, features.value

    def predict_disparity(self, image: np.ndarray) -> np.ndarray:
        return self.forward(image)[0]

    def checksum(self) -> str:
        return params_checksum(self.params)


@dataclass(frozen=True)
class FrozenEncoder:
    """The alignment target: same encoder stack, parameters never updated.

    A seeded random network rather than anything pre-trained; the losses
    that consume it only care that it is fixed, deterministic, and shares
    the student's feature dimension.
    """

    params: ParamSet
    patch_size: int = 8
    feature_dim: int = 32

    @classmethod
    def from_rng(cls, rng: np.random.Generator, patch_size: int = 8, feature_dim: int = 32):
        params = init_params(patch_size, feature_dim, rng)
        encoder_only = {k: v for k, v in params.items() if k.startswith(ENCODER_PREFIX)}
        for tensor in encoder_only.values():
            tensor.setflags(write=False)
        return cls(encoder_only, patch_size, feature_dim)

    def encode(self, image: np.ndarray) -> np.ndarray:
        """Feature grid as a constant array; nothing to backpropagate into."""
        return encoder_graph(param_nodes(self.params), image, self.patch_size).value

    def checksum(self) -> str:
        return params_checksum(self.params)


# ---------------------------------------------------------------------------
# Optimization


@dataclass
class AdamWState:
    """First/second moment estimates plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(
    params: ParamSet,
    grads: dict[str, np.ndarray],
    state: AdamWState,
    lr,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> ParamSet:
    """One decoupled-weight-decay Adam update; returns new parameters.

    ``lr`` is a float applied to every tensor, or a mapping from parameter
    name to rate (how the decoder gets its 10x group rate). ``state`` is
    advanced in place.
    """
    b1, b2 = betas
    state.t += 1
    t = state.t
    updated: ParamSet = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.m[name] = m
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m[...] = b1 * m + (1.0 - b1) * g
        v[...] = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        rate = lr[name] if isinstance(lr, dict) else float(lr)
        updated[name] = p - rate * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p)
    return updated


def linear_schedule(base_lr: float, step: int, total_steps: int) -> float:
    """lr(step) = base*(1 - step/total); hits exactly 0 at step == total."""
    if total_steps <= 0:
        raise DomainError("linear_schedule: total_steps must be positive")
    if step < 0 or step > total_steps:
        raise DomainError(f"linear_schedule: step {step} outside [0, {total_steps}]")
    return base_lr * (1.0 - step / total_steps)


def group_rates(params: ParamSet, encoder_lr: float) -> dict[str, float]:
    """Per-tensor rates: encoder at the base rate, decoder at exactly 10x."""
    decoder_lr = encoder_lr * 10.0
    return {
        name: decoder_lr if name.startswith(DECODER_PREFIX) else encoder_lr
        for name in params
    }


# ---------------------------------------------------------------------------
# Checkpoint format
#
# magic | uint64 LE manifest length | JSON manifest | float64 LE payload.
# The manifest lists tensors sorted by name with payload-relative offsets,
# plus the model geometry, so a file fully describes the model it stores.


def save_checkpoint(path, params: ParamSet, patch_size: int, feature_dim: int) -> None:
    names = sorted(params)
    entries = []
    offset = 0
    blobs = []
    for name in names:
        tensor = np.ascontiguousarray(params[name], dtype="<f8")
        entries.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        blobs.append(tensor.tobytes())
        offset += tensor.nbytes
    manifest = {
        "tensors": entries,
        "meta": {"patch_size": int(patch_size), "feature_dim": int(feature_dim)},
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[ParamSet, int, int]:
    """Read a checkpoint back as (params, patch_size, feature_dim)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DomainError("not a checkpoint file (bad magic)")
    return _parse_checkpoint(raw)


def _parse_checkpoint(raw: bytes) -> tuple[ParamSet, int, int]:
    base = len(CHECKPOINT_MAGIC)
    if len(raw) < base + 8:
        raise DomainError("checkpoint truncated before manifest length")
    (header_len,) = struct.unpack_from("<Q", raw, base)
    header_start = base + 8
    payload_start = header_start + header_len
    if len(raw) < payload_start:
        raise DomainError("checkpoint truncated inside manifest")
    try:
        manifest = json.loads(raw[header_start:payload_start].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DomainError(f"checkpoint manifest unreadable: {exc}") from None
    params: ParamSet = {}
    for entry in manifest["tensors"]:
        shape = tuple(int(v) for v in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = payload_start + int(entry["offset"])
        end = start + count * 8
        if end > len(raw):
            raise DomainError(f"checkpoint truncated inside tensor {entry['name']!r}")
        data = np.frombuffer(raw[start:end], dtype="<f8").reshape(shape)
        params[entry["name"]] = data.astype(np.float64)
    meta = manifest["meta"]
    return params, int(meta["patch_size"]), int(meta["feature_dim"])
