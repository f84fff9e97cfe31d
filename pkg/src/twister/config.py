"""Run configuration: defaults, file loading and pre-flight validation."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .imputer import VARIANTS
from .linegraph import ITEM, USER, USER_WEIGHTED
from .teg import MASK_PROTOCOLS

BASELINES = ("Blank", "Random", "Mean", "KNN", "MF")
ALL_VARIANTS = BASELINES + tuple(VARIANTS)
DATASET_FORMATS = ("synthetic", "amazon", "goodreads", "jsonl")
EMBEDDERS = ("hashing", "remote")
GENERATORS = ("mock", "chat")
JUDGES = ("mock", "chat", "none")
JUDGE_TEMPLATES = ("amazon", "goodreads")
KNOWN_VIEWS = (USER, ITEM, USER_WEIGHTED)


class ConfigError(ValueError):
    pass


def _default_synthetic() -> dict:
    return {"n_users": 100, "n_items": 200, "density": 0.06, "n_blocks": 4, "in_block": 0.85, "review_prob": 1.0}


@dataclass
class RunConfig:
    dataset_format: str = "synthetic"
    dataset_name: str = ""
    dataset_path: str | None = None
    metadata_path: str | None = None
    synthetic: dict = field(default_factory=_default_synthetic)
    rating_scale: list = field(default_factory=lambda: [1.0, 5.0])
    k_core: int = 0
    ego_seeds: int = 0
    split_ratios: list = field(default_factory=lambda: [0.7, 0.1, 0.2])
    mask_protocol: str = "uniform"
    mask_ratio: float = 0.5
    variants: list = field(default_factory=lambda: list(ALL_VARIANTS))
    views: list = field(default_factory=lambda: list(KNOWN_VIEWS))
    embedder: str = "hashing"
    embed_dim: int = 64
    generator: str = "mock"
    judge: str = "mock"
    judge_template: str = "amazon"
    judge_seeds: list = field(default_factory=lambda: [0, 1, 2])
    judge_limit: int = 50
    templates_path: str | None = None
    seed: int = 0
    knn_k: int = 5
    mf_rank: int = 16
    mf_epochs: int = 50
    mf_lr: float = 0.05
    scorer_rank: int = 16
    scorer_epochs: int = 30
    scorer_lr: float = 0.05
    scorer_review_scale: float = 100.0
    n_negatives: int = 9
    top_k: int = 10
    neighbor_cap: int = 10
    payload_tokens: int = 60
    max_new_tokens: int = 250
    parallelism: int = 1
    output_dir: str = "runs/default"

    @property
    def name(self) -> str:
        return self.dataset_name or (
            "synthetic" if self.dataset_format == "synthetic" else os.path.basename(self.dataset_path or "dataset")
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "RunConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.dataset_format in DATASET_FORMATS, f"dataset_format must be one of {DATASET_FORMATS}")
        if self.dataset_format != "synthetic":
            need(bool(self.dataset_path), f"dataset_format {self.dataset_format!r} needs dataset_path")
        unknown_syn = set(self.synthetic) - set(_default_synthetic())
        need(not unknown_syn, f"unknown synthetic key(s) {sorted(unknown_syn)}")
        need(len(self.rating_scale) == 2 and self.rating_scale[0] < self.rating_scale[1], "rating_scale must be [lo, hi]")
        need(self.k_core >= 0 and self.ego_seeds >= 0, "k_core and ego_seeds must be >= 0")
        need(len(self.split_ratios) == 3 and abs(sum(self.split_ratios) - 1) < 1e-9, "split_ratios must be three numbers summing to 1")
        need(self.mask_protocol in MASK_PROTOCOLS, f"mask_protocol must be one of {MASK_PROTOCOLS}")
        need(0.0 <= self.mask_ratio <= 1.0, "mask_ratio must lie in [0, 1]")
        need(bool(self.variants), "variants must not be empty")
        bad = [v for v in self.variants if v not in ALL_VARIANTS]
        need(not bad, f"unknown variant(s) {bad}; expected from {list(ALL_VARIANTS)}")
        need(len(set(self.variants)) == len(self.variants), "variants must not repeat")
        bad = [v for v in self.views if v not in KNOWN_VIEWS]
        need(not bad, f"unknown view(s) {bad}; expected from {list(KNOWN_VIEWS)}")
        # the weighted user view can stand in for the plain one
        have = set(self.views) | ({USER} if USER_WEIGHTED in self.views else set())
        for v in self.variants:
            if v in VARIANTS:
                missing = [k for k in VARIANTS[v].required_views if k not in have]
                need(not missing, f"variant {v} needs view(s) {missing}, which the config does not provide")
        need(self.embedder in EMBEDDERS, f"embedder must be one of {EMBEDDERS}")
        need(self.generator in GENERATORS, f"generator must be one of {GENERATORS}")
        need(self.judge in JUDGES, f"judge must be one of {JUDGES}")
        need(self.judge_template in JUDGE_TEMPLATES, f"judge_template must be one of {JUDGE_TEMPLATES}")
        need(bool(self.judge_seeds), "judge_seeds must not be empty")
        need(self.n_negatives >= self.top_k - 1, "n_negatives must be >= top_k - 1")
        for key in ("embed_dim", "knn_k", "mf_rank", "scorer_rank", "top_k", "neighbor_cap", "payload_tokens", "max_new_tokens", "parallelism"):
            need(getattr(self, key) >= 1, f"{key} must be >= 1")
        return self


FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def from_dict(data: dict) -> RunConfig:
    unknown = set(data) - FIELDS
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)}")
    data = dict(data)
    if "synthetic" in data:
        data["synthetic"] = {**_default_synthetic(), **(data["synthetic"] or {})}
    return RunConfig(**data).validate()


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON/YAML file, then ``overrides``; validated before returning."""
    data: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
        if str(path).endswith((".yaml", ".yml")):
            import yaml

            data = yaml.safe_load(raw) or {}
        else:
            data = json.loads(raw)
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return from_dict(data)
