"""Assemble population, trace, data, model and strategy from one config and seed."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .availability import AvailabilityTrace, PopulationSpec, build_population, sample_trace
from .cafed import CaFedConfig, CaFedStrategy
from .config import ExperimentConfig
from .data import FederationData, generate_synthetic, load_mnist, make_mnist_federation
from .engine import AggregationStrategy, UnbiasedStrategy
from .model import LinearModel


@dataclass
class RunSetup:
    population: PopulationSpec
    trace: AvailabilityTrace
    federation: FederationData
    model: LinearModel
    strategy: AggregationStrategy


@lru_cache(maxsize=2)
def _mnist(path: str):
    return load_mnist(path)


def build_population_for(config: ExperimentConfig, seed: int) -> PopulationSpec:
    return build_population(config.n_clients, config.g, config.nu, config.eps, seed)


def build_federation(config: ExperimentConfig, seed: int, population: PopulationSpec) -> FederationData:
    groups = population.group_ids
    if config.dataset == "synthetic":
        return generate_synthetic(
            config.n_clients,
            config.d,
            config.samples_per_client,
            seed,
            n_train=config.n_train,
            groups=groups,
        )
    return make_mnist_federation(_mnist(str(config.mnist_path)), config.n_clients, seed, groups=groups)


def build_strategy(config: ExperimentConfig, federation: FederationData, population: PopulationSpec):
    alpha = federation.alpha
    if config.strategy == "unbiased":
        return UnbiasedStrategy(alpha, population.pi_active)
    cfg = CaFedConfig(
        config.tau,
        config.beta,
        config.kappa_bar_sq,
        config.prior_n,
        config.prior_m,
        config.transition_prior,
    )
    if config.oracle_availability:
        return CaFedStrategy(alpha, cfg, population.pi_active, population.lambda2)
    return CaFedStrategy(alpha, cfg)


def build_run(config: ExperimentConfig, seed: int) -> RunSetup:
    population = build_population_for(config, seed)
    trace = sample_trace(population, config.rounds, seed)
    federation = build_federation(config, seed, population)
    model = LinearModel.zeros(
        federation.n_features, federation.n_classes, ridge_coeff=config.ridge, radius=config.radius
    )
    return RunSetup(population, trace, federation, model, build_strategy(config, federation, population))
