"""Adversarial self-attention lab."""

from __future__ import annotations

import json
from os import PathLike
from typing import Any, Mapping

from . import _asa_core
from ._asa_core import ConfigError, binary_concrete, grad_reverse_vjp, softmax

__all__ = [
    "ConfigError",
    "binary_concrete",
    "bench",
    "evaluate",
    "export_attention",
    "grad_reverse_vjp",
    "normalize_config",
    "report_masks",
    "softmax",
    "spurious_dataset",
    "train",
]

Config = Mapping[str, Any]


def _dump(config: Config | str) -> str:
    return config if isinstance(config, str) else json.dumps(config)


def normalize_config(config: Config | str) -> dict:
    """Validated config with every default filled in."""
    return json.loads(_asa_core.normalize_config(_dump(config)))


def train(config: Config | str, out_dir: str | PathLike, write_checkpoint: bool = True) -> dict:
    """Runs training to completion and returns the run summary."""
    return json.loads(_asa_core.train(_dump(config), out_dir, write_checkpoint))


def evaluate(checkpoint: str | PathLike, out_dir: str | PathLike) -> dict:
    return json.loads(_asa_core.evaluate(checkpoint, out_dir))


def bench(config: Config | str, seq_lens, steps: int = 50, embed_at_k=(1, 2)) -> list[dict]:
    return _asa_core.bench(_dump(config), list(seq_lens), steps, list(embed_at_k))


def report_masks(metrics_path: str | PathLike, tail: float = 0.2) -> dict:
    return _asa_core.report_masks(metrics_path, tail)


def export_attention(checkpoint: str | PathLike, tokens, layer: int = 0, head: int = 0, seed: int = 0) -> dict:
    return _asa_core.export_attention(checkpoint, list(tokens), layer, head, seed)


def spurious_dataset(config: Config | str) -> dict:
    return _asa_core.spurious_dataset(_dump(config))
