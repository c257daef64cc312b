"""Experiment configuration: validation, JSON round-trip and a stable hash."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ParameterError

DATASETS = ("synthetic", "mnist")
STRATEGIES = ("cafed", "unbiased")
SCHEDULES = ("constant", "inv_sqrt")

# fields that never change results, so they stay out of the hash
_UNHASHED = ("workers", "output_dir", "mnist_path")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "synthetic"
    n_clients: int = 24
    rounds: int = 500
    seeds: tuple[int, ...] = (0, 1, 2)
    strategy: str = "cafed"
    lr_local: float = 1e-2
    lr_server: float = 1.0
    lr_schedule: str = "constant"
    local_steps: int = 5
    batch_size: int | None = 32
    # population
    g: float = 0.4
    nu: float = 0.9
    eps: float = 1e-2
    # CA-Fed
    tau: float = 0.0
    beta: float = 0.2
    kappa_bar_sq: float = 1.0
    prior_n: float = 1.0
    prior_m: float = 1.0
    transition_prior: float = 1.0
    oracle_availability: bool = True
    # data and model
    d: int = 10
    samples_per_client: int = 150
    n_train: int = 120
    ridge: float = 1e-2
    radius: float = 100.0
    mnist_path: str | None = None
    # execution
    workers: int = 1
    output_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def validate(self) -> "ExperimentConfig":
        problems = []
        if self.dataset not in DATASETS:
            problems.append(f"dataset must be one of {DATASETS}")
        if self.strategy not in STRATEGIES:
            problems.append(f"strategy must be one of {STRATEGIES}")
        if self.lr_schedule not in SCHEDULES:
            problems.append(f"lr_schedule must be one of {SCHEDULES}")
        if self.n_clients < 2:
            problems.append("n_clients must be >= 2")
        if self.rounds < 0:
            problems.append("rounds must be >= 0")
        if not self.seeds:
            problems.append("at least one seed is required")
        if self.lr_local < 0 or self.lr_server <= 0:
            problems.append("lr_local must be >= 0 and lr_server > 0")
        if self.local_steps < 1:
            problems.append("local_steps must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            problems.append("batch_size must be positive")
        if not 0.0 <= self.g < 0.5:
            problems.append("g must lie in [0, 1/2)")
        if not -1.0 < self.nu < 1.0:
            problems.append("nu must lie in (-1, 1)")
        if self.eps < 0:
            problems.append("eps must be >= 0")
        if self.tau < 0 or not 0 < self.beta <= 1 or self.kappa_bar_sq <= 0:
            problems.append("need tau >= 0, beta in (0, 1], kappa_bar_sq > 0")
        if min(self.prior_n, self.prior_m, self.transition_prior) <= 0:
            problems.append("priors must be positive")
        if self.d < 1 or self.samples_per_client < 1 or not 0 < self.n_train <= self.samples_per_client:
            problems.append("need d >= 1 and 0 < n_train <= samples_per_client")
        if self.ridge <= 0 or self.radius <= 0:
            problems.append("ridge and radius must be positive")
        if self.dataset == "mnist" and not self.mnist_path:
            problems.append("the mnist dataset needs mnist_path")
        if self.workers < 1:
            problems.append("workers must be >= 1")
        if problems:
            raise ParameterError("invalid config: " + "; ".join(problems))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def config_hash(self) -> str:
        """First 16 hex digits of SHA-256 over the result-relevant fields."""
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)
