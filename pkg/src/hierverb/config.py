"""Flat key-value run configuration with dataset presets.

Precedence, lowest first: built-in defaults, ``--preset``, config file,
``HIERVERB_SEED``, command-line flags.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .losses import LossConfig

# hidden size of the 110M encoder the method was designed around; the
# reference encoder defaults to something far smaller
BERT_BASE_HIDDEN = 768

DEFAULTS: dict[str, Any] = {
    "hierarchy": "hierarchy.json",
    "dataset": "dataset.jsonl",
    "test": "",
    "out_dir": "run",
    "k": 1,
    "seed": 0,
    "epochs": 20,
    "batch_size": 5,
    "lr": 5e-5,
    "verbalizer_lr": 1e-4,
    "warmup_steps": 0,
    "patience": 10,
    "early_stop_metric": "micro_f1",
    "mode": "single_path",
    "truncate_length": 512,
    "decode.threshold": 0.5,
    "encoder.r": 32,
    "encoder.dropout": 0.1,
    "loss.lambda1": 1.0,
    "loss.lambda2": 1e-2,
    "loss.alpha": 1.0,
    "loss.beta": 1.0,
    "loss.fhc_variant": "as_written",
    "loss.hcc_source": "raw",
    "loss.fhc_include_self": True,
    "loss.tau": 0.05,
    "sample.order": "asc",
    "synth.branching": [3, 4],
    "synth.docs_per_path": 5,
    "synth.tokens_per_doc": 8,
    "synth.signal": 1.0,
    "synth.noise_vocab": 40,
    "gradcheck.r": 8,
    "gradcheck.depth": 3,
    "gradcheck.batch": 4,
    "gradcheck.step": 1e-5,
    "gradcheck.tol": 1e-4,
}

_WOS = {
    "epochs": 20,
    "lr": 5e-5,
    "verbalizer_lr": 1e-4,
    "mode": "single_path",
    "loss.lambda1": 1.0,
    "loss.lambda2": 1e-2,
    "loss.alpha": 1.0,
    "loss.beta": 1.0,
}

PRESETS: dict[str, dict[str, Any]] = {
    "wos": _WOS,
    "dbpedia": dict(_WOS),
    "rcv1": {
        "epochs": 1000,
        "lr": 3e-5,
        "verbalizer_lr": 3e-5,
        "patience": 10,
        "mode": "multi_path",
        "loss.lambda1": 1.0,
        "loss.lambda2": 1e-4,
        "loss.alpha": 1.0,
        "loss.beta": 1e-2,
    },
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or int(value) != value:
            raise ConfigError(f"{key} must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if isinstance(default, list):
        return [int(v) for v in value]
    return str(value)


def merge(*layers: Mapping[str, Any]) -> dict[str, Any]:
    out = dict(DEFAULTS)
    for layer in layers:
        for key, value in layer.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            out[key] = _coerce(key, value)
    return out


def load_config_file(path: str | Path | None) -> dict[str, Any]:
    if not path:
        return {}
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict) or any(isinstance(v, dict) for v in data.values()):
        raise ConfigError("config file must be a flat JSON object")
    return data


def resolve(
    config_path: str | Path | None = None,
    preset: str | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> "RunConfig":
    environ = os.environ if environ is None else environ
    layers: list[Mapping[str, Any]] = []
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        layers.append(PRESETS[preset])
    layers.append(load_config_file(config_path))
    if environ.get("HIERVERB_SEED"):
        layers.append({"seed": int(environ["HIERVERB_SEED"])})
    layers.append({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(merge(*layers))


@dataclass
class RunConfig:
    values: dict[str, Any]

    def __post_init__(self):
        v = self.values
        if v["batch_size"] < 1:
            raise ConfigError("batch_size must be >= 1")
        if v["epochs"] < 1:
            raise ConfigError("epochs must be >= 1")
        if v["k"] < 1:
            raise ConfigError("k must be >= 1")
        self.loss  # validates the loss block

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def with_overrides(self, **changes: Any) -> "RunConfig":
        return RunConfig(merge(self.values, {k.replace("__", "."): v for k, v in changes.items()}))

    @property
    def loss(self) -> LossConfig:
        v = self.values
        return LossConfig(
            lambda1=v["loss.lambda1"],
            lambda2=v["loss.lambda2"],
            alpha=v["loss.alpha"],
            beta=v["loss.beta"],
            mode=v["mode"],
            fhc_variant=v["loss.fhc_variant"],
            hcc_source=v["loss.hcc_source"],
            fhc_include_self=v["loss.fhc_include_self"],
            tau=v["loss.tau"],
        )

    @property
    def out_dir(self) -> Path:
        return Path(self.values["out_dir"])

    def to_json(self) -> str:
        return json.dumps(self.values, indent=2, sort_keys=True) + "\n"
