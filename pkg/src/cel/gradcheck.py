"""Finite-difference verification of every analytic gradient.

The harness treats a loss as a black-box scalar function of named arrays,
perturbs one coordinate at a time with central differences, and compares
against the gradients the loss reports. The same machinery backs both the
test suite and the ``gradcheck`` CLI command.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import losses
from .embedding import EmbeddingBatch, SimilarityParams
from .finetune import (
    AdaCosState,
    LabeledBatch,
    MarginConfig,
    adacos_loss,
    arcface_loss,
    cosface_loss,
    ge2e_loss,
)
from .rng import derive_rng

DEFAULT_STEP = 1e-5

# Relative-error denominator floor: keeps coordinates whose true gradient
# is ~0 from amplifying central-difference noise into spurious failures,
# while still catching any real formula error (those show up at O(1)).
REL_FLOOR = 1e-4


def finite_difference(
    f: Callable[[Mapping[str, np.ndarray]], float],
    arrays: Mapping[str, np.ndarray],
    step: float = DEFAULT_STEP,
) -> dict[str, np.ndarray]:
    """Central-difference gradient of f with respect to every array entry."""
    work = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
    out: dict[str, np.ndarray] = {}
    for name, arr in work.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f(work)
            flat[i] = orig - step
            f_minus = f(work)
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * step)
        out[name] = g
    return out


def relative_errors(
    analytic: Mapping[str, np.ndarray], numeric: Mapping[str, np.ndarray]
) -> dict[str, np.ndarray]:
    errs = {}
    for name, a in analytic.items():
        n = numeric[name]
        a = np.asarray(a, dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
        errs[name] = np.abs(a - n) / denom
    return errs


@dataclass
class CheckResult:
    name: str
    instances: int
    max_rel_err: float
    worst_param: str
    worst_coord: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < 1e-5

    def row(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"{self.name:<10s} {self.instances:>4d} "
            f"{self.max_rel_err:>12.3e}  {self.worst_param}[{self.worst_coord}]  {status}"
        )


def compare(
    f: Callable[[Mapping[str, np.ndarray]], float],
    arrays: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    step: float = DEFAULT_STEP,
) -> tuple[float, str, int]:
    """Max relative error over all checked coordinates, with its location."""
    numeric = finite_difference(f, arrays, step)
    errs = relative_errors(analytic, numeric)
    worst = (0.0, "", -1)
    for name, e in errs.items():
        if e.size == 0:
            continue
        i = int(np.argmax(e.reshape(-1)))
        m = float(e.reshape(-1)[i])
        if m >= worst[0]:
            worst = (m, name, i)
    return worst


def _random_unit_rows(rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    x = rng.standard_normal((n, m))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _pair_batch(arrays: Mapping[str, np.ndarray]) -> EmbeddingBatch:
    return EmbeddingBatch(view1=arrays["view1"], view2=arrays["view2"])


def _sim_params(arrays: Mapping[str, np.ndarray]) -> SimilarityParams:
    return SimilarityParams(float(arrays["scale"]), float(arrays["bias"]))


def _check_pair_loss(name: str, seed: int) -> CheckResult:
    kernel = losses.KernelParam(t=2.0)
    weights = losses.CelWeights(uniformity_weight=1.0)

    def make_output(arrays: Mapping[str, np.ndarray]) -> losses.LossOutput:
        batch = _pair_batch(arrays)
        if name == "unif":
            return losses.uniformity_loss(batch, kernel)
        if name == "aprot":
            return losses.aprot_loss(batch, _sim_params(arrays))
        if name == "acont":
            return losses.acont_loss(batch, _sim_params(arrays))
        if name == "total":
            return losses.total_loss(batch, kernel, _sim_params(arrays), weights)
        raise ValueError(name)

    worst = (0.0, "", -1)
    count = 0
    rng = derive_rng(seed, "gradcheck", name)
    for k in (2, 3, 5, 8):
        for m in (3, 8, 16):
            for _ in range(2):
                arrays = {
                    "view1": _random_unit_rows(rng, k, m),
                    "view2": _random_unit_rows(rng, k, m),
                }
                if name != "unif":
                    arrays["scale"] = np.array(float(rng.uniform(0.5, 10.0)))
                    arrays["bias"] = np.array(float(rng.uniform(-5.0, 1.0)))
                out = make_output(arrays)
                analytic = {k2: out.grads[k2] for k2 in arrays}
                res = compare(lambda a: make_output(a).value, arrays, analytic)
                count += 1
                if res[0] >= worst[0]:
                    worst = res
    return CheckResult(name, count, *worst)


def _check_finetune_loss(name: str, seed: int) -> CheckResult:
    worst = (0.0, "", -1)
    count = 0
    rng = derive_rng(seed, "gradcheck", name)
    shapes = [(2, 2, 3), (4, 3, 8), (6, 4, 16), (12, 6, 8), (8, 5, 3)]
    for n, c, m in shapes:
        for _ in range(4):
            if name == "ge2e":
                spk, utt = c, max(2, n // c)
                arrays = {
                    "embeddings": _random_unit_rows(rng, spk * utt, m),
                    "scale": np.array(float(rng.uniform(0.5, 10.0))),
                    "bias": np.array(float(rng.uniform(-5.0, 1.0))),
                }

                def make_output(a, spk=spk, utt=utt):
                    batch = LabeledBatch.grouped(a["embeddings"], spk, utt)
                    return ge2e_loss(batch, _sim_params(a))

            else:
                labels = rng.integers(0, c, size=n)
                cfg = MarginConfig(margin=0.2, scale=8.0)
                arrays = {
                    "embeddings": _random_unit_rows(rng, n, m),
                    "weights": _random_unit_rows(rng, c, m),
                }

                def make_output(a, labels=labels, cfg=cfg, c=c):
                    batch = LabeledBatch(a["embeddings"], labels, c)
                    if name == "cosface":
                        return cosface_loss(batch, a["weights"], cfg)
                    if name == "arcface":
                        return arcface_loss(batch, a["weights"], cfg)
                    if name == "adacos":
                        state = AdaCosState(scale=float(cfg.scale))
                        return adacos_loss(
                            batch, a["weights"], state, update_scale=False
                        )
                    raise ValueError(name)

            out = make_output(arrays)
            analytic = {k2: out.grads[k2] for k2 in arrays}
            res = compare(lambda a: make_output(a).value, arrays, analytic)
            count += 1
            if res[0] >= worst[0]:
                worst = res
    return CheckResult(name, count, *worst)


def _check_encoder(seed: int) -> CheckResult:
    from .encoder import Encoder, EncoderConfig

    worst = (0.0, "", -1)
    count = 0
    for rep in range(3):
        rng = derive_rng(seed, "gradcheck", "encoder", rep)
        cfg = EncoderConfig(input_dim=6, hidden_dims=(5, 4), embedding_dim=4,
                            pooling="mean" if rep % 2 == 0 else "mean_std")
        enc = Encoder(cfg)
        # Jitter off the zero-bias init: frames that die in layer 0 would
        # otherwise sit exactly on the next layer's ReLU kink, where central
        # differences and any one-sided subgradient legitimately disagree.
        params = {
            k: v + 0.05 * rng.standard_normal(v.shape)
            for k, v in enc.init_params(rng).items()
        }
        feats = rng.standard_normal((6, 7))
        upstream = rng.standard_normal(cfg.embedding_dim)

        def run(arrays: Mapping[str, np.ndarray]) -> float:
            res = enc.forward(dict(arrays), feats)
            return float(np.dot(upstream, res.embedding))

        res_fwd = enc.forward(params, feats)
        back = enc.backward(params, res_fwd.cache, upstream)
        res = compare(run, params, back.param_grads)
        count += 1
        if res[0] >= worst[0]:
            worst = res
    return CheckResult("encoder", count, *worst)


ALL_SCOPES: Sequence[str] = (
    "unif", "aprot", "acont", "total", "ge2e", "cosface", "arcface", "adacos",
    "encoder",
)


def run_suite(scopes: Sequence[str] | None = None, seed: int = 7) -> list[CheckResult]:
    """Run the finite-difference suite; one result row per loss."""
    scopes = list(scopes) if scopes else list(ALL_SCOPES)
    results = []
    for scope in scopes:
        if scope in ("unif", "aprot", "acont", "total"):
            results.append(_check_pair_loss(scope, seed))
        elif scope in ("ge2e", "cosface", "arcface", "adacos"):
            results.append(_check_finetune_loss(scope, seed))
        elif scope == "encoder":
            results.append(_check_encoder(seed))
        else:
            raise ValueError(f"unknown gradcheck scope: {scope!r}")
    return results
