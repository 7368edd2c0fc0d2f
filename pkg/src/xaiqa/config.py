"""Pipeline configuration: one JSON file, environment overrides, full echo.

Precedence: built-in defaults < config file < XAIQA_<SECTION>_<KEY>
environment variables < explicit CLI flags. Values in environment
variables are parsed as JSON when possible, else taken as strings.

The fully resolved configuration is echoed into every artifact's sidecar
metadata, and deterministic run ids are derived from it, so a pipeline
rerun from the same config and inputs reproduces artifacts byte for byte.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .classifier import TrainConfig
from .embedder import EmbedderConfig
from .errors import ConfigError, XaiqaError
from .explainer import MspConfig
from .generator import DEFAULT_TEMPLATE, DEFAULT_TOP_R
from .hardness import QcloConfig, STOPWORDS_VERSION
from .promptkit import DEFAULT_NUM_EXAMPLES, DEFAULT_WINDOW_RADIUS, PromptBudget

ENV_PREFIX = "XAIQA"

DEFAULTS: dict[str, dict[str, Any]] = {
    "paths": {"corpus": "corpus.jsonl", "vocab": "vocab.jsonl", "output_dir": "out"},
    "classifier": {"learning_rate": 1.0, "epochs": 80, "batch_size": 16, "weight_decay": 0.01, "seed": 0},
    "explainer": {
        "num_iterations": 100,
        "mask_probability": 0.1,
        "mask_token": "[MASK]",
        "seed": 0,
        "min_count_guard": 5,
    },
    "embedder": {"provider": "builtin_hash_tfidf", "dim": 256, "endpoint": None, "seed": 0},
    "generation": {"method": "xaiqa", "template": DEFAULT_TEMPLATE, "top_r": DEFAULT_TOP_R, "ratio": [1, 1], "seed": 0},
    "hardness": {"apply_stemming": True, "fractions": [0.05, 0.10, 0.25, 0.50], "stopword_version": STOPWORDS_VERSION},
    "metrics": {"bootstrap_iterations": 1000, "bootstrap_level": 0.95, "seed": 0},
    "prompt": {
        "max_units": 8000,
        "unit": "approx_tokens",
        "chars_per_token": 4.0,
        "num_examples": DEFAULT_NUM_EXAMPLES,
        "window_radius": DEFAULT_WINDOW_RADIUS,
        "seed": 0,
    },
    "runtime": {"workers": 0},  # 0 = use available parallelism
}


def _overlay(base: dict[str, dict[str, Any]], extra: dict[str, Any], origin: str, problems: list[str]) -> None:
    for section, values in extra.items():
        if section not in base:
            problems.append(f"{origin}: unknown config section {section!r}")
            continue
        if not isinstance(values, dict):
            problems.append(f"{origin}: section {section!r} must be an object")
            continue
        for key, value in values.items():
            if key not in base[section]:
                problems.append(f"{origin}: unknown key {section}.{key}")
                continue
            base[section][key] = value


def _env_overrides(environ: dict[str, str]) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    for section, values in DEFAULTS.items():
        for key in values:
            name = f"{ENV_PREFIX}_{section}_{key}".upper()
            if name in environ:
                raw = environ[name]
                try:
                    value = json.loads(raw)
                except json.JSONDecodeError:
                    value = raw
                out.setdefault(section, {})[key] = value
    return out


@dataclass(frozen=True)
class PipelineConfig:
    sections: dict[str, dict[str, Any]] = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def echo(self) -> dict[str, Any]:
        return copy.deepcopy(self.sections)

    @property
    def paths(self) -> dict[str, Any]:
        return self.sections["paths"]

    @property
    def workers(self) -> int:
        return int(self.sections["runtime"]["workers"])

    def train_config(self) -> TrainConfig:
        c = self.sections["classifier"]
        return TrainConfig(
            learning_rate=float(c["learning_rate"]),
            epochs=int(c["epochs"]),
            batch_size=int(c["batch_size"]),
            weight_decay=float(c["weight_decay"]),
            seed=int(c["seed"]),
        )

    def msp_config(self) -> MspConfig:
        c = self.sections["explainer"]
        return MspConfig(
            num_iterations=int(c["num_iterations"]),
            mask_probability=float(c["mask_probability"]),
            mask_token=str(c["mask_token"]),
            seed=int(c["seed"]),
            min_count_guard=int(c["min_count_guard"]),
        )

    def embedder_config(self) -> EmbedderConfig:
        c = self.sections["embedder"]
        return EmbedderConfig(
            provider=str(c["provider"]),
            dim=int(c["dim"]),
            endpoint=c["endpoint"],
            seed=int(c["seed"]),
        )

    def qclo_config(self) -> QcloConfig:
        return QcloConfig(apply_stemming=bool(self.sections["hardness"]["apply_stemming"]))

    def prompt_budget(self) -> PromptBudget:
        c = self.sections["prompt"]
        return PromptBudget(
            max_units=int(c["max_units"]),
            unit=str(c["unit"]),
            chars_per_token=float(c["chars_per_token"]),
        )

    def override_seed(self, seed: int) -> None:
        for section in ("classifier", "explainer", "embedder", "generation", "metrics", "prompt"):
            self.sections[section]["seed"] = seed


def load_config(path: str | Path | None = None, environ: dict[str, str] | None = None) -> PipelineConfig:
    """Resolve configuration from defaults, an optional file and environment.

    All validation problems are collected and reported together.
    """
    environ = os.environ if environ is None else environ
    merged = copy.deepcopy(DEFAULTS)
    problems: list[str] = []
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}")
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        _overlay(merged, raw, str(path), problems)
    _overlay(merged, _env_overrides(dict(environ)), "environment", problems)

    config = PipelineConfig(sections=merged)
    for build in (config.train_config, config.msp_config, config.embedder_config, config.qclo_config, config.prompt_budget):
        try:
            build()
        except (XaiqaError, TypeError, ValueError) as exc:
            problems.append(str(exc))
    gen = merged["generation"]
    if "{X}" not in str(gen["template"]):
        problems.append("generation.template must contain the placeholder {X}")
    if int(gen["top_r"]) < 1:
        problems.append("generation.top_r must reach at least 1")
    ratio = gen["ratio"]
    if not (isinstance(ratio, (list, tuple)) and len(ratio) == 2):
        problems.append("generation.ratio must be a [base, synthetic] pair")
    if problems:
        raise ConfigError("; ".join(problems))
    return config
