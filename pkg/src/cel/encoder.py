"""Trainable front-end encoder with hand-written backpropagation.

A per-frame affine+ReLU stack, temporal pooling (mean, or mean plus
standard deviation), a final affine projection, and L2 normalization onto
the unit hypersphere. Gradients are exact reverse-mode, including the
normalization Jacobian. Optimization is bias-corrected Adam with a stepwise
multiplicative learning-rate decay, all in plain numpy for verifiability.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .embedding import NORM_FLOOR
from .errors import (
    CheckpointMismatchError,
    InvalidParamError,
    NormalizationDegenerateError,
    ShapeMismatchError,
    StaleCacheError,
)

VAR_EPS = 1e-10


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of the desk-scale encoder."""

    input_dim: int = 40
    hidden_dims: tuple[int, ...] = (64, 64)
    embedding_dim: int = 64
    pooling: str = "mean"

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise InvalidParamError(f"input_dim must be positive, got {self.input_dim}")
        if len(self.hidden_dims) < 1 or any(h < 1 for h in self.hidden_dims):
            raise InvalidParamError(
                f"need at least one positive hidden width, got {self.hidden_dims}"
            )
        if self.embedding_dim < 2:
            raise InvalidParamError(
                f"embedding_dim must be at least 2, got {self.embedding_dim}"
            )
        if self.pooling not in ("mean", "mean_std"):
            raise InvalidParamError(
                f"pooling must be 'mean' or 'mean_std', got {self.pooling!r}"
            )

    @property
    def pooled_dim(self) -> int:
        factor = 2 if self.pooling == "mean_std" else 1
        return self.hidden_dims[-1] * factor

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "embedding_dim": self.embedding_dim,
            "pooling": self.pooling,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EncoderConfig":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(d["hidden_dims"]),
            embedding_dim=int(d["embedding_dim"]),
            pooling=str(d["pooling"]),
        )


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


@dataclass
class ForwardCache:
    params: Mapping[str, np.ndarray]
    layer_inputs: list[np.ndarray]
    relu_masks: list[np.ndarray]
    pooled: np.ndarray
    last_hidden: np.ndarray
    mean: np.ndarray
    std: np.ndarray | None
    pre_norm: np.ndarray
    norm: float
    embedding: np.ndarray


@dataclass
class ForwardResult:
    embedding: np.ndarray
    cache: ForwardCache


@dataclass
class BackwardResult:
    param_grads: dict[str, np.ndarray]
    input_grad: np.ndarray


class Encoder:
    """Maps a bands-by-frames feature matrix to a unit embedding."""

    def __init__(self, config: EncoderConfig) -> None:
        self.config = config

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        dims = (self.config.input_dim, *self.config.hidden_dims)
        shapes: dict[str, tuple[int, ...]] = {}
        for i in range(len(self.config.hidden_dims)):
            shapes[f"w{i}"] = (dims[i + 1], dims[i])
            shapes[f"b{i}"] = (dims[i + 1],)
        shapes["w_out"] = (self.config.embedding_dim, self.config.pooled_dim)
        shapes["b_out"] = (self.config.embedding_dim,)
        return shapes

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        params: dict[str, np.ndarray] = {}
        for name, shape in self.param_shapes().items():
            if name.startswith("w"):
                params[name] = xavier_uniform(rng, shape[0], shape[1])
            else:
                params[name] = np.zeros(shape)
        return params

    def forward(
        self, params: Mapping[str, np.ndarray], features: np.ndarray
    ) -> ForwardResult:
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.config.input_dim:
            raise ShapeMismatchError(
                f"features must be ({self.config.input_dim}, T), got {feats.shape}"
            )
        h = feats.T  # (T, input_dim)
        layer_inputs = []
        relu_masks = []
        for i in range(len(self.config.hidden_dims)):
            layer_inputs.append(h)
            z = h @ params[f"w{i}"].T + params[f"b{i}"]
            mask = z > 0
            h = z * mask
            relu_masks.append(mask)

        mean = h.mean(axis=0)
        if self.config.pooling == "mean_std":
            std = np.sqrt(np.mean((h - mean) ** 2, axis=0) + VAR_EPS)
            pooled = np.concatenate([mean, std])
        else:
            std = None
            pooled = mean

        v = params["w_out"] @ pooled + params["b_out"]
        norm = float(np.linalg.norm(v))
        if norm <= NORM_FLOOR:
            raise NormalizationDegenerateError(
                f"pre-normalization output has norm {norm:.3e}; "
                f"cannot project onto the unit sphere"
            )
        e = v / norm
        cache = ForwardCache(
            params=params,
            layer_inputs=layer_inputs,
            relu_masks=relu_masks,
            pooled=pooled,
            last_hidden=h,
            mean=mean,
            std=std,
            pre_norm=v,
            norm=norm,
            embedding=e,
        )
        return ForwardResult(embedding=e, cache=cache)

    def backward(
        self,
        params: Mapping[str, np.ndarray],
        cache: ForwardCache,
        upstream: np.ndarray,
    ) -> BackwardResult:
        if cache.params is not params:
            raise StaleCacheError(
                "cache was produced by a different parameter set; "
                "rerun forward before backward"
            )
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != cache.embedding.shape:
            raise ShapeMismatchError(
                f"upstream gradient shape {g.shape} does not match "
                f"embedding shape {cache.embedding.shape}"
            )
        e = cache.embedding
        # Normalization Jacobian: (I - e e^T) / |v| applied to the upstream.
        g_v = (g - np.dot(g, e) * e) / cache.norm

        grads: dict[str, np.ndarray] = {}
        grads["w_out"] = np.outer(g_v, cache.pooled)
        grads["b_out"] = g_v
        g_pooled = params["w_out"].T @ g_v

        h = cache.last_hidden
        t = h.shape[0]
        d = h.shape[1]
        if self.config.pooling == "mean_std":
            g_mean_direct = g_pooled[:d]
            g_std = g_pooled[d:]
            centered = h - cache.mean
            # std_j = sqrt(mean_t centered^2 + eps):
            # d std_j / d h_tj = centered_tj / (T std_j); the mean shift
            # contributes zero because sum_t centered_tj = 0.
            g_h = g_mean_direct / t + g_std * centered / (t * cache.std)
        else:
            g_h = np.broadcast_to(g_pooled / t, h.shape).copy()

        for i in reversed(range(len(self.config.hidden_dims))):
            g_z = g_h * cache.relu_masks[i]
            grads[f"w{i}"] = g_z.T @ cache.layer_inputs[i]
            grads[f"b{i}"] = g_z.sum(axis=0)
            g_h = g_z @ params[f"w{i}"]

        return BackwardResult(param_grads=grads, input_grad=g_h.T)


@dataclass(frozen=True)
class LrSchedule:
    """Stepwise multiplicative decay: a fixed fraction every fixed period."""

    initial_lr: float = 0.001
    decay_fraction: float = 0.05
    period_epochs: int = 10

    def __post_init__(self) -> None:
        if self.initial_lr <= 0:
            raise InvalidParamError(f"initial lr must be positive, got {self.initial_lr}")
        if not 0 < self.decay_fraction < 1:
            raise InvalidParamError(
                f"decay fraction must be in (0, 1), got {self.decay_fraction}"
            )
        if self.period_epochs < 1:
            raise InvalidParamError(
                f"decay period must be at least 1 epoch, got {self.period_epochs}"
            )

    def to_dict(self) -> dict:
        return {
            "initial_lr": self.initial_lr,
            "decay_fraction": self.decay_fraction,
            "period_epochs": self.period_epochs,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LrSchedule":
        return cls(
            initial_lr=float(d["initial_lr"]),
            decay_fraction=float(d["decay_fraction"]),
            period_epochs=int(d["period_epochs"]),
        )


PRETRAIN_SCHEDULE = LrSchedule(initial_lr=0.001, decay_fraction=0.05, period_epochs=10)
FINETUNE_SCHEDULE = LrSchedule(initial_lr=0.001, decay_fraction=0.10, period_epochs=10)


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise InvalidParamError(f"epoch must be nonnegative, got {epoch}")
    return schedule.initial_lr * (1.0 - schedule.decay_fraction) ** (
        epoch // schedule.period_epochs
    )


@dataclass(frozen=True)
class OptimizerState:
    """Adam accumulators; updates return a new state, nothing mutates."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optimizer(params: Mapping[str, np.ndarray], lr: float) -> OptimizerState:
    if lr <= 0:
        raise InvalidParamError(f"learning rate must be positive, got {lr}")
    return OptimizerState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
        step=0,
        lr=lr,
    )


def adam_step(
    state: OptimizerState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    lr: float | None = None,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One bias-corrected Adam update over every named parameter."""
    for name, p in params.items():
        if name not in state.m or state.m[name].shape != np.shape(p):
            raise ShapeMismatchError(
                f"optimizer state does not match parameter {name!r}"
            )
        if name not in grads or np.shape(grads[name]) != np.shape(p):
            raise ShapeMismatchError(
                f"gradient missing or mis-shaped for parameter {name!r}"
            )
    step = state.step + 1
    rate = state.lr if lr is None else lr
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    c1 = 1.0 - state.beta1**step
    c2 = 1.0 - state.beta2**step
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        new_params[name] = np.asarray(p) - rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, OptimizerState(
        m=new_m, v=new_v, step=step, lr=rate,
        beta1=state.beta1, beta2=state.beta2, eps=state.eps,
    )


MAGIC = b"CELCKPT1"


def save_checkpoint(
    path: str | Path,
    config: Mapping,
    params: Mapping[str, np.ndarray],
    meta: Mapping | None = None,
) -> None:
    """Versioned binary container: magic, JSON header, float64 LE blocks."""
    names = sorted(params)
    header = {
        "config": json.loads(json.dumps(dict(config))),
        "params": [
            {"name": n, "shape": list(np.shape(params[n]))} for n in names
        ],
        "meta": dict(meta or {}),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for n in names:
            f.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_checkpoint(
    path: str | Path, expected_config: Mapping | None = None
) -> tuple[dict, dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns (config, params, meta)."""
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointMismatchError(
            f"{path}: not a checkpoint file (bad magic {blob[:8]!r})"
        )
    (head_len,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + head_len].decode("utf-8"))
    config = header["config"]
    if expected_config is not None:
        want = json.loads(json.dumps(dict(expected_config)))
        if want != config:
            raise CheckpointMismatchError(
                f"{path}: checkpoint config {config} does not match expected {want}"
            )
    params: dict[str, np.ndarray] = {}
    offset = 12 + head_len
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        block = blob[offset : offset + 8 * count]
        if len(block) != 8 * count:
            raise CheckpointMismatchError(f"{path}: truncated parameter block")
        params[entry["name"]] = np.frombuffer(block, dtype="<f8").reshape(shape).copy()
        offset += 8 * count
    if offset != len(blob):
        raise CheckpointMismatchError(f"{path}: trailing bytes after parameter blocks")
    return config, params, header["meta"]
