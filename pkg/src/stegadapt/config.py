"""One JSON config file drives every CLI command.

Sections: ``data`` (domain corpora and generation knobs), ``encoder``,
``head``, ``train``, ``schedule`` (pseudo-label expansion), and ``eval``.
Every knob has the package default baked in; unknown sections or keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .adapt import TrainConfig
from .encoder import EncoderConfig
from .head import HeadConfig

_SECTIONS = ("data", "encoder", "head", "train", "schedule", "eval")


@dataclass(frozen=True)
class DataConfig:
    domains: Mapping[str, str] = field(default_factory=dict)
    dataset_dirs: Mapping[str, str] = field(default_factory=dict)
    lm_order: int = 2
    alpha: float = 0.5
    min_freq: int = 2
    max_len: int = 64
    train: int = 2000
    val: int = 200
    test: int = 200
    bpw: int = 1
    coding: str = "flc"
    payload_bits: tuple[int, int] = (16, 48)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "domains", dict(self.domains))
        object.__setattr__(self, "dataset_dirs", dict(self.dataset_dirs))
        object.__setattr__(self, "payload_bits", tuple(self.payload_bits))
        if not self.domains and not self.dataset_dirs:
            raise ValueError("config needs data.domains (corpus files) or data.dataset_dirs")

    @property
    def sizes(self) -> dict[str, int]:
        return {"train": self.train, "val": self.val, "test": self.test}

    def domain_tags(self) -> list[str]:
        return sorted(set(self.domains) | set(self.dataset_dirs))


@dataclass(frozen=True)
class EvalConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ValueError("eval.seeds must be nonempty")


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig
    encoder: EncoderConfig
    head: HeadConfig
    train: TrainConfig
    eval: EvalConfig
    features_path: str | None = None

    def data_fingerprint(self) -> dict:
        return {
            "domains": dict(sorted(self.data.domains.items())),
            "dataset_dirs": dict(sorted(self.data.dataset_dirs.items())),
            "lm_order": self.data.lm_order,
            "alpha": self.data.alpha,
            "min_freq": self.data.min_freq,
            "max_len": self.data.max_len,
            "sizes": self.data.sizes,
            "bpw": self.data.bpw,
            "coding": self.data.coding,
            "payload_bits": list(self.data.payload_bits),
            "seed": self.data.seed,
        }


def _take(section: str, raw: Mapping, allowed: Mapping[str, object]) -> dict:
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ValueError(f"unknown key(s) in config section '{section}': {sorted(unknown)}")
    merged = dict(allowed)
    merged.update(raw)
    return merged


def config_from_dict(raw: Mapping) -> ExperimentConfig:
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config section(s): {sorted(unknown)}")

    data_kwargs = _take(
        "data",
        raw.get("data", {}),
        {
            "domains": {},
            "dataset_dirs": {},
            "lm_order": 2,
            "alpha": 0.5,
            "min_freq": 2,
            "max_len": 64,
            "train": 2000,
            "val": 200,
            "test": 200,
            "bpw": 1,
            "coding": "flc",
            "payload_bits": (16, 48),
            "seed": 0,
        },
    )
    data = DataConfig(**data_kwargs)

    enc_kwargs = _take(
        "encoder",
        raw.get("encoder", {}),
        {"kind": "builtin", "d_h": 64, "freeze_policy": "after_pretrain", "features_path": None},
    )
    features_path = enc_kwargs.pop("features_path")
    encoder = EncoderConfig(seed=0, **enc_kwargs)

    head_kwargs = _take(
        "head",
        raw.get("head", {}),
        {"hidden": 32, "layers": 1, "dropout_keep": 0.5},
    )
    head = HeadConfig(d_h=encoder.d_h, **head_kwargs)

    train_kwargs = _take(
        "train",
        raw.get("train", {}),
        {
            "lr": 5e-5,
            "batch_size": 16,
            "pretrain_epochs": 50,
            "finetune_rounds": 10,
            "eval_batch_size": 256,
            "selection_metric": "acc",
        },
    )
    schedule_kwargs = _take("schedule", raw.get("schedule", {}), {"p": 0.1, "reestimate": True})
    train = TrainConfig(
        expansion=schedule_kwargs["p"],
        reestimate_pseudo_labels=schedule_kwargs["reestimate"],
        seed=0,
        **train_kwargs,
    )

    eval_kwargs = _take("eval", raw.get("eval", {}), {"seeds": (0, 1, 2, 3, 4)})
    return ExperimentConfig(
        data=data,
        encoder=encoder,
        head=head,
        train=train,
        eval=EvalConfig(**eval_kwargs),
        features_path=features_path,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError("config file must contain a JSON object")
    return config_from_dict(raw)
