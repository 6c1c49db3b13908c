"""Flat key=value run configuration with CLI overrides.

Every field has a documented default; unknown keys are rejected. Files hold
one ``key = value`` entry per line (``#`` comments allowed); ``--set``
overrides from the command line win over the file.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .data import SplitSpec, TaskSpec, split_for_dataset
from .errors import ConfigError
from .flow import FlowConfig, TrainConfig
from .operator import OperatorHyper


@dataclass
class RunConfig:
    # data
    dataset_path: str = ""
    dataset_name: str = ""          # defaults to the file stem
    datetime_column: str = "date"
    fill_policy: str = "reject"     # reject | ffill
    split: str = "auto"             # auto | "train,val,test" fractions
    # task
    task: str = "cft"               # cft | tssr | crtl
    history_len: int = 96           # S, in model-input samples
    horizon: int = 96               # L
    decimation: int = 1
    phase: int = 0
    stride: int = 1                 # training/validation window stride
    test_stride: int = 1
    # operator
    k: int = 16
    topk: int = 5
    m_max: int = 32
    hidden: int = 128
    eps_norm: float = 1e-5
    # flow
    sigma_path: float = 0.0
    n_steps: int = 4
    reparameterized: bool = True
    integrator: str = "euler"
    velocity_mode: str = "source"
    # training
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 5
    val_n_steps: int = 1
    # run
    variant: str = "full"
    seed: int = 0
    out_dir: str = "runs/run"

    def task_spec(self) -> TaskSpec:
        return TaskSpec(kind=self.task, S=self.history_len, L=self.horizon,
                        decimation_factor=self.decimation, phase=self.phase)

    def flow_config(self) -> FlowConfig:
        return FlowConfig(sigma_path=self.sigma_path, n_steps=self.n_steps,
                          reparameterized=self.reparameterized,
                          integrator=self.integrator,
                          velocity_mode=self.velocity_mode)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                           adam_eps=self.adam_eps, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, patience=self.patience,
                           seed=self.seed, val_n_steps=self.val_n_steps)

    def model_kw(self) -> dict:
        return dict(k=self.k, topk=self.topk, m_max=self.m_max,
                    hidden=self.hidden, eps_norm=self.eps_norm)

    def operator_hyper(self, channels: int) -> OperatorHyper:
        return OperatorHyper(history_len=self.history_len, horizon=self.horizon,
                             channels=channels, **self.model_kw())

    def split_spec(self, dataset_name: str) -> SplitSpec:
        if self.split == "auto":
            return split_for_dataset(dataset_name)
        try:
            tr, va, te = (float(x) for x in self.split.split(","))
        except ValueError:
            raise ConfigError(f"config: split must be 'auto' or three comma-"
                              f"separated fractions, got {self.split!r}") from None
        return SplitSpec(tr, va, te)

    def resolved_name(self) -> str:
        return self.dataset_name or Path(self.dataset_path).stem or "dataset"


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    f = _FIELDS[key]
    raw = raw.strip()
    if f.type in ("int", int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"config: {key} expects an integer, got {raw!r}") from None
    if f.type in ("float", float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"config: {key} expects a number, got {raw!r}") from None
    if f.type in ("bool", bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"config: {key} expects a boolean, got {raw!r}")
    return raw


def apply_entry(cfg: RunConfig, key: str, raw: str) -> None:
    key = key.strip()
    if key not in _FIELDS:
        raise ConfigError(f"config: unknown key {key!r}")
    setattr(cfg, key, _parse_value(key, raw))


def load_config(path: str | Path | None = None,
                overrides: list[str] | None = None,
                seed: int | None = None, out_dir: str | None = None) -> RunConfig:
    """Resolve a config from file plus ``key=value`` overrides (flags win)."""
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config: no such file: {p}")
        for lineno, line in enumerate(p.read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config: {p}:{lineno}: expected key=value, "
                                  f"got {line!r}")
            key, raw = line.split("=", 1)
            apply_entry(cfg, key, raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        apply_entry(cfg, key, raw)
    if seed is not None:
        cfg.seed = seed
    if out_dir is not None:
        cfg.out_dir = out_dir
    return cfg


def resolved_text(cfg: RunConfig) -> str:
    """Canonical echo of the full configuration; reloading it reproduces the run."""
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"
