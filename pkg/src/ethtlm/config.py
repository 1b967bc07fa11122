"""Layered run configuration: defaults < YAML file < environment < command-line overrides."""
from __future__ import annotations

import copy
import os
from dataclasses import replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import InvalidConfig

ENV_PREFIX = "ETHTLM_"

DEFAULTS: dict[str, dict[str, Any]] = {
    "run": {"seed": 0, "out_dir": "runs/latest"},
    "ingest": {"dataset": "", "format": "csv", "drop_failed": False, "n_accounts": 500,
               "anomaly_rate": 0.05, "split": [0.7, 0.1, 0.2]},
    "mask": {"tau": 0.1, "variant": "bm25l", "z1": 1.2, "b": 0.75, "delta": 0.5, "plain_rate": 0.15},
    "model": {"max_len": 512, "vocab_size": 1000, "layers": 2, "heads": 4, "dim": 64, "ff_dim": 256,
              "gnn_layers": 2, "rel_dim": 16, "max_nodes": 100, "score": "rotate"},
    "train": {"epochs": 20, "batch_size": 16, "lr": 1e-3, "negatives": 4, "gamma": 6.0,
              "loss_form": "logsigmoid", "bmp_weight": 1.0, "tlp_weight": 1.0, "max_triples": 8,
              "variant": "full", "ft_epochs": 15, "ft_lr": 3e-4, "ft_batch_size": 16,
              "freeze_encoder": False},
    "eval": {"runs": 5, "suite": "full,w/o-BMP,w/o-TKG,w/o-Expert,w/o-MiAS"},
}


def _coerce(key: str, raw: Any, like: Any) -> Any:
    if isinstance(raw, str) and not isinstance(like, str):
        try:
            raw = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise InvalidConfig(f"{key}: cannot parse {raw!r}") from None
    if isinstance(like, bool):
        if not isinstance(raw, bool):
            raise InvalidConfig(f"{key}: expected true/false, got {raw!r}")
        return raw
    if isinstance(like, int):
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise InvalidConfig(f"{key}: expected an integer, got {raw!r}")
        return raw
    if isinstance(like, float):
        if isinstance(raw, str):
            # YAML 1.1 reads "1e-4" as a string
            try:
                raw = float(raw)
            except ValueError:
                pass
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise InvalidConfig(f"{key}: expected a number, got {raw!r}")
        return float(raw)
    if isinstance(like, list):
        if not isinstance(raw, list):
            raise InvalidConfig(f"{key}: expected a list, got {raw!r}")
        return [float(x) for x in raw]
    return "" if raw is None else str(raw)


class RunConfig:
    """Namespaced settings (``section.key``); unknown keys are rejected."""

    def __init__(self, values: Mapping[str, Mapping[str, Any]] | None = None):
        self.values = copy.deepcopy(DEFAULTS)
        if values:
            self.update(values)

    def get(self, dotted: str) -> Any:
        sec, key = self._split(dotted)
        return self.values[sec][key]

    def __getitem__(self, dotted: str) -> Any:
        return self.get(dotted)

    def set(self, dotted: str, raw: Any) -> None:
        sec, key = self._split(dotted)
        self.values[sec][key] = _coerce(dotted, raw, DEFAULTS[sec][key])

    def update(self, nested: Mapping[str, Any]) -> None:
        if not isinstance(nested, Mapping):
            raise InvalidConfig("configuration must be a mapping of sections")
        for sec, body in nested.items():
            if sec not in DEFAULTS:
                raise InvalidConfig(f"unknown config section {sec!r}")
            if not isinstance(body, Mapping):
                raise InvalidConfig(f"section {sec!r} must be a mapping")
            for key, raw in body.items():
                self.set(f"{sec}.{key}", raw)

    @staticmethod
    def _split(dotted: str) -> tuple[str, str]:
        sec, _, key = dotted.partition(".")
        if sec not in DEFAULTS or key not in DEFAULTS[sec]:
            raise InvalidConfig(f"unknown config key {dotted!r}")
        return sec, key

    def to_dict(self) -> dict:
        return copy.deepcopy(self.values)


def load_config(path=None, env: Mapping[str, str] | None = None,
                overrides: list[str] | tuple = ()) -> RunConfig:
    """Resolve the layered configuration.

    ``path`` may also be a run manifest written by a previous run.
    Environment keys look like ``ETHTLM_TRAIN__EPOCHS=3``; overrides are
    ``section.key=value`` strings.
    """
    cfg = RunConfig()
    if path:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as e:
            raise InvalidConfig(f"{path}: {e}") from None
        if isinstance(doc, Mapping) and "config_hash" in doc and "config" in doc:
            doc = doc["config"]  # a run manifest: replay its resolved config
        cfg.update(doc)
    env = os.environ if env is None else env
    for name in sorted(env):
        if name.startswith(ENV_PREFIX) and "__" in name:
            sec, _, key = name[len(ENV_PREFIX):].partition("__")
            cfg.set(f"{sec.lower()}.{key.lower()}", env[name])
    for item in overrides:
        if "=" not in item:
            raise InvalidConfig(f"override {item!r} is not of the form section.key=value")
        k, _, v = item.partition("=")
        cfg.set(k.strip(), v.strip())
    return cfg


def pipeline_config(cfg: RunConfig):
    """Translate a RunConfig into the pipeline's dataclasses."""
    from .pipeline import PipelineConfig
    from .training import FinetuneConfig, PretrainConfig

    t = cfg.values["train"]
    m = cfg.values["model"]
    k = cfg.values["mask"]
    pre = PretrainConfig(epochs=t["epochs"], batch_size=t["batch_size"], lr=t["lr"], tau=k["tau"],
                         negatives=t["negatives"], score=m["score"], seed=cfg["run.seed"],
                         bmp_weight=t["bmp_weight"], tlp_weight=t["tlp_weight"], gamma=t["gamma"],
                         loss_form=t["loss_form"], max_triples=t["max_triples"])
    ft = FinetuneConfig(epochs=t["ft_epochs"], batch_size=t["ft_batch_size"], lr=t["ft_lr"],
                        seed=cfg["run.seed"], freeze_encoder=t["freeze_encoder"])
    base = PipelineConfig(max_len=m["max_len"], vocab_size=m["vocab_size"], layers=m["layers"],
                          heads=m["heads"], dim=m["dim"], ff_dim=m["ff_dim"], gnn_layers=m["gnn_layers"],
                          rel_dim=m["rel_dim"], max_nodes=m["max_nodes"], bm25_variant=k["variant"],
                          z1=k["z1"], b=k["b"], delta=k["delta"], plain_mask_rate=k["plain_rate"])
    return replace(base, pretrain=pre, finetune=ft)


def example_config_path() -> Path:
    return Path(__file__).parent / "data" / "example_config.yaml"
