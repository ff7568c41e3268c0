from __future__ import annotations

import configparser
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .trace import NoiseModel

CONFIG_VERSION = 1


@dataclass(frozen=True)
class Defaults:
    noise: NoiseModel
    seed: int
    queries: int
    runs: int
    per_arch_n: int
    folds: int
    decoy_rate: float
    k_blocks: int
    config_version: int = CONFIG_VERSION


def load_defaults(path: str | Path | None = None) -> Defaults:
    cp = configparser.ConfigParser()
    if path is None:
        cp.read_string(resources.files("archleak").joinpath("defaults.cfg").read_text(encoding="utf-8"))
    else:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    version = cp.getint("meta", "config_version")
    if version != CONFIG_VERSION:
        raise ValueError(f"unsupported config_version {version}")
    noise = NoiseModel(cp.getfloat("noise", "p_miss"), NoiseModel.parse_rates(cp.get("noise", "rates")))
    return Defaults(
        noise=noise,
        seed=cp.getint("run", "seed"),
        queries=cp.getint("run", "queries"),
        runs=cp.getint("run", "runs"),
        per_arch_n=cp.getint("fingerprint", "per_arch_n"),
        folds=cp.getint("fingerprint", "folds"),
        decoy_rate=cp.getfloat("defense", "decoy_rate"),
        k_blocks=cp.getint("defense", "k_blocks"),
        config_version=version,
    )


def calibrated_noise() -> NoiseModel:
    return load_defaults().noise
