"""Run configuration: one schema-validated document covering every module.

The document is a nested mapping with a fixed key set; every field has a
default, unknown keys are rejected by dotted path, and the effective
configuration is echoed to JSON alongside run outputs so any result can be
reproduced from its echo plus the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .encoder import EncoderConfig, LrSchedule
from .errors import SchemaError
from .features import FeatureConfig
from .trainer import FinetuneConfig, PretrainConfig


@dataclass(frozen=True)
class CorpusConfig:
    n_speakers: int = 32
    utterances_per_speaker: int = 6
    duration_s: float = 4.0
    seed: int = 100


@dataclass(frozen=True)
class BankConfig:
    n_each: int = 2
    noise_duration_s: float = 5.0
    rir_count: int = 4


@dataclass(frozen=True)
class EvalConfig:
    eval_speakers: int = 8
    nontarget_per_target: int = 3
    # Trial utterances get one fixed random noise/reverb condition each,
    # so verification is scored under test-time degradation.
    augment_trials: bool = True
    c_miss: float = 1.0
    c_fa: float = 1.0
    p_target: float = 0.05


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    bank: BankConfig = field(default_factory=BankConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def with_seed(self, seed: int) -> "RunConfig":
        """Thread one seed through every stage that consumes randomness."""
        return replace(
            self,
            seed=seed,
            pretrain=replace(self.pretrain, seed=seed),
            finetune=replace(self.finetune, seed=seed),
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "corpus": _plain_dict(self.corpus),
            "features": _plain_dict(self.features),
            "encoder": self.encoder.to_dict(),
            "bank": _plain_dict(self.bank),
            "pretrain": {
                **_plain_dict(self.pretrain, skip=("schedule", "snr_range")),
                "snr_range": list(self.pretrain.snr_range),
                "schedule": self.pretrain.schedule.to_dict(),
            },
            "finetune": {
                **_plain_dict(self.finetune, skip=("schedule",)),
                "schedule": self.finetune.schedule.to_dict(),
            },
            "evaluation": _plain_dict(self.evaluation),
        }


def _plain_dict(obj, skip: tuple[str, ...] = ()) -> dict:
    import dataclasses

    out = {}
    for f in dataclasses.fields(obj):
        if f.name in skip:
            continue
        out[f.name] = getattr(obj, f.name)
    return out


def _check_keys(d: Mapping, allowed: set[str], path: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise SchemaError(f"unknown config key '{path}{unknown[0]}'")


def _take(d: Mapping, defaults, path: str):
    """Build a flat dataclass from a mapping, rejecting unknown keys."""
    import dataclasses

    names = {f.name for f in dataclasses.fields(defaults)}
    _check_keys(d, names, path)
    return dataclasses.replace(defaults, **dict(d))


def _schedule_from(d: Mapping, defaults: LrSchedule, path: str) -> LrSchedule:
    _check_keys(d, {"initial_lr", "decay_fraction", "period_epochs"}, path)
    merged = {**defaults.to_dict(), **dict(d)}
    return LrSchedule.from_dict(merged)


def config_from_dict(doc: Mapping) -> RunConfig:
    """Validate and build a RunConfig; unknown keys fail with a dotted path."""
    if not isinstance(doc, Mapping):
        raise SchemaError(f"config document must be a mapping, got {type(doc).__name__}")
    base = RunConfig()
    _check_keys(
        doc,
        {"seed", "corpus", "features", "encoder", "bank", "pretrain", "finetune",
         "evaluation"},
        "",
    )
    seed = doc.get("seed", base.seed)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise SchemaError(f"config key 'seed' must be an integer, got {seed!r}")

    corpus = _take(doc.get("corpus", {}), base.corpus, "corpus.")
    features = _take(doc.get("features", {}), base.features, "features.")
    bank = _take(doc.get("bank", {}), base.bank, "bank.")
    evaluation = _take(doc.get("evaluation", {}), base.evaluation, "evaluation.")

    enc_doc = dict(doc.get("encoder", {}))
    _check_keys(enc_doc, {"input_dim", "hidden_dims", "embedding_dim", "pooling"}, "encoder.")
    enc_merged = {**base.encoder.to_dict(), **enc_doc}
    encoder = EncoderConfig.from_dict(enc_merged)

    pre_doc = dict(doc.get("pretrain", {}))
    pre_names = {
        "k", "uniformity_weight", "kernel_t", "similarity_kind", "epochs", "seed",
        "frames", "snr_range", "schedule", "init_scale", "init_bias", "save_every",
    }
    _check_keys(pre_doc, pre_names, "pretrain.")
    pre_schedule = _schedule_from(
        pre_doc.pop("schedule", {}), base.pretrain.schedule, "pretrain.schedule."
    )
    if "snr_range" in pre_doc:
        pre_doc["snr_range"] = tuple(float(x) for x in pre_doc["snr_range"])
    pretrain = replace(base.pretrain, schedule=pre_schedule, **pre_doc)

    fin_doc = dict(doc.get("finetune", {}))
    fin_names = {
        "objective", "margin", "margin_scale", "speakers_per_batch",
        "utterances_per_speaker", "frames", "epochs", "seed", "schedule",
        "init_checkpoint", "init_scale", "init_bias", "save_every",
    }
    _check_keys(fin_doc, fin_names, "finetune.")
    fin_schedule = _schedule_from(
        fin_doc.pop("schedule", {}), base.finetune.schedule, "finetune.schedule."
    )
    finetune = replace(base.finetune, schedule=fin_schedule, **fin_doc)

    return RunConfig(
        seed=seed,
        corpus=corpus,
        features=features,
        encoder=encoder,
        bank=bank,
        pretrain=pretrain,
        finetune=finetune,
        evaluation=evaluation,
    )


def load_config(path: str | Path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def desk_profile(seed: int = 0) -> RunConfig:
    """Small, fast configuration for single-core desk experiments."""
    base = RunConfig(
        corpus=CorpusConfig(n_speakers=32, utterances_per_speaker=6, duration_s=4.0),
        encoder=EncoderConfig(input_dim=40, hidden_dims=(48, 48), embedding_dim=32),
        pretrain=PretrainConfig(
            k=8,
            epochs=40,
            frames=180,
            schedule=LrSchedule(initial_lr=0.002, decay_fraction=0.05, period_epochs=10),
        ),
        finetune=FinetuneConfig(epochs=8, speakers_per_batch=8, frames=300),
    )
    return base.with_seed(seed)


def fullscale_profile(seed: int = 0) -> RunConfig:
    """Full-scale hyperparameters; data and encoder stay desk-scale stand-ins."""
    base = RunConfig(
        pretrain=PretrainConfig(k=200, uniformity_weight=1.0, kernel_t=2.0, epochs=500),
        finetune=FinetuneConfig(epochs=250, margin=0.2, margin_scale=30.0),
    )
    return base.with_seed(seed)
