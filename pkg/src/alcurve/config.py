"""Experiment configuration files (JSON, strict schema)."""

import json
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .agent import AgentConfig, TrainConfig
from .driver import STRATEGIES, ALConfig, TableConfig
from .oracle import TaskConfig, TaskConfigError


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TaskSection(_Strict):
    n_pool: int = 1000
    n_eval: int = 1000
    dim: int = 32
    n_classes: int = 5
    n_cells: int = 50
    spread: float = 1.0
    class_sep: float = 0.8
    anchor_spread: float = 1.0
    imbalance: Optional[Tuple[float, ...]] = None
    cell_weighting: Literal["uniform", "zipf", "inverse_size", "inverse_class"] = "uniform"
    cell_skew: float = 1.0
    coverage_min: int = 1
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        try:
            self.to_task_config()
        except TaskConfigError as exc:
            raise ValueError(str(exc)) from None
        return self

    def to_task_config(self):
        return TaskConfig(**self.model_dump(exclude={"seed"}))


class ALSection(_Strict):
    initial_labeled: int = Field(50, ge=0)
    budget: int = Field(25, ge=1)
    cycles: int = Field(5, ge=0)
    oracle: Literal["coverage", "prototype"] = "coverage"
    inference_passes: int = Field(1, ge=1)
    warm_start: bool = False


class AgentSection(_Strict):
    hidden_dim: int = Field(64, ge=1)
    decoder_hidden: int = Field(32, ge=1)
    temperature: float = Field(1.0, gt=0)
    init_scale: float = Field(0.1, ge=0)


class TrainSection(_Strict):
    iterations: int = Field(500, ge=0)
    lr: float = Field(3.5e-4, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    baseline_lambda: float = Field(0.5, ge=0, le=1)
    baseline_mode: Literal["standard-ema", "paper-literal"] = "standard-ema"
    baseline_init: Union[Literal["first"], float] = "first"
    clip_norm: Optional[float] = Field(5.0, gt=0)


class TableSection(_Strict):
    M: int = Field(50, ge=1)
    Q: int = Field(64, ge=1)
    k: int = Field(5, ge=1)
    eps_w: float = Field(1e-9, gt=0)
    tau_mult: float = 1.0
    append_fallback: bool = True


class ExperimentConfig(_Strict):
    task: TaskSection = TaskSection()
    al: ALSection = ALSection()
    agent: AgentSection = AgentSection()
    train: TrainSection = TrainSection()
    table: TableSection = TableSection()
    strategy: Literal["mgral", "random", "entropy", "coreset"] = "random"
    seeds: List[int] = Field(default_factory=lambda: [0])
    out_dir: Optional[str] = None

    @model_validator(mode="after")
    def _check_sizes(self):
        need = self.al.initial_labeled + self.al.cycles * self.al.budget
        if need > self.task.n_pool:
            raise ValueError(
                f"al.initial_labeled + al.cycles * al.budget = {need} exceeds task.n_pool "
                f"= {self.task.n_pool}"
            )
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        return self

    def task_config(self):
        return self.task.to_task_config()

    def al_config(self, strategy=None, seed=None, workers=1):
        strategy = self.strategy if strategy is None else strategy
        if strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {strategy!r}; valid: {', '.join(STRATEGIES)}")
        return ALConfig(
            initial_labeled=self.al.initial_labeled, budget=self.al.budget,
            cycles=self.al.cycles, strategy=strategy, oracle=self.al.oracle,
            agent=AgentConfig(feat_dim=self.task.dim, budget=self.al.budget,
                              **self.agent.model_dump()),
            train=TrainConfig(**self.train.model_dump()),
            table=TableConfig(**self.table.model_dump()),
            seed=self.seeds[0] if seed is None else seed,
            inference_passes=self.al.inference_passes, warm_start=self.al.warm_start,
            workers=workers,
        )


def parse_config(doc):
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return parse_config(doc)
