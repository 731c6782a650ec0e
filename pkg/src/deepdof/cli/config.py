"""Experiment configuration, stored as JSON."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..bounds import REGIMES
from ..erm import TrainConfig
from ..netcore import Activation, NormBudget
from ..teacher import InputLaw, TeacherNetwork, sample_teacher


@dataclass
class TeacherSpec:
    """How to obtain the teacher: load ``file`` if given, otherwise generate it."""

    L: int = 3
    resolutions: list = field(default_factory=lambda: [512, 512])
    d_x: int = 4
    activation: dict = field(default_factory=lambda: {"kind": "tanh"})
    budget: dict = field(default_factory=lambda: {"R": 32.0, "R_b": 8.0, "D_x": 1.0, "delta": 0.1})
    decay_s: float | None = 0.5
    profile_exponent: float = 0.6
    input_law: dict = field(default_factory=lambda: {"kind": "uniform"})
    seed: int = 0
    file: str | None = None

    def build(self) -> TeacherNetwork:
        if self.file is not None:
            return TeacherNetwork.load(self.file)
        return sample_teacher(self.L, self.resolutions, self.d_x, NormBudget.from_dict(self.budget),
                              Activation.from_dict(self.activation), seed=self.seed, decay_s=self.decay_s,
                              input_law=InputLaw.from_dict(self.input_law),
                              profile_exponent=self.profile_exponent)


@dataclass
class ExperimentConfig:
    """Everything a sweep needs; see the README for the JSON schema."""

    teacher: TeacherSpec = field(default_factory=TeacherSpec)
    n_grid: list = field(default_factory=lambda: [256, 512, 1024, 2048, 4096, 8192])
    seeds: int = 5
    regimes: list = field(default_factory=lambda: list(REGIMES))
    sigma: float = 1.0
    delta: float = 0.1
    n_fit: int = 4096
    n_eval: int = 8192
    train: dict = field(default_factory=dict)
    m_grid: list = field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64, 128, 256])
    n_bv: int = 1024
    master_seed: int = 0
    out_dir: str = "runs"

    def __post_init__(self):
        if isinstance(self.teacher, dict):
            self.teacher = TeacherSpec(**self.teacher)
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError(f"n_grid must be strictly increasing, got {self.n_grid}")
        if any(n < 2 for n in self.n_grid):
            raise ValueError("every n must be at least 2")
        if self.seeds < 1:
            raise ValueError("seeds must be at least 1")
        for r in self.regimes:
            if r not in REGIMES:
                raise ValueError(f"unknown regime {r!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.teacher.file is not None and not Path(self.teacher.file).exists():
            raise FileNotFoundError(f"teacher file {self.teacher.file} does not exist")
        self.train_config()  # validates the training block

    def train_config(self, seed: int | None = None) -> TrainConfig:
        d = dict(self.train)
        if seed is not None:
            d["seed"] = seed
        return TrainConfig.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())
