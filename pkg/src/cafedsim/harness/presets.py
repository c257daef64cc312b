"""Ready-made experiment configurations and the learning-rate grid."""

from __future__ import annotations

import itertools

import numpy as np

from ..config import ExperimentConfig

LR_LOCAL_GRID = tuple(float(10.0**e) for e in (-3.0, -2.5, -2.0, -1.5, -1.0))
LR_SERVER_GRID = tuple(float(10.0**e) for e in (-2.0, -1.5, -1.0, -0.5, 0.0))

# (lr_local, lr_server) maximising the seed-averaged time-average test
# accuracy over the grid for the synthetic preset (see `cafedsim sweep`).
TUNED_SYNTHETIC = {
    "cafed": (LR_LOCAL_GRID[4], LR_SERVER_GRID[3]),
    "unbiased": (LR_LOCAL_GRID[4], LR_SERVER_GRID[1]),
}


def learning_rate_grid(local=LR_LOCAL_GRID, server=LR_SERVER_GRID) -> list[tuple[float, float]]:
    return list(itertools.product(local, server))


def preset_synthetic(strategy: str = "cafed", **overrides) -> ExperimentConfig:
    """24 clients, g = 0.4, nu = 0.9, eps = 1e-2, ridge 1e-2, tau = 0, beta = 0.2, 3 seeds."""
    lr, lr_s = TUNED_SYNTHETIC[strategy]
    cfg = ExperimentConfig(
        dataset="synthetic",
        n_clients=24,
        rounds=500,
        seeds=(0, 1, 2),
        strategy=strategy,
        lr_local=lr,
        lr_server=lr_s,
        local_steps=5,
        batch_size=32,
        g=0.4,
        nu=0.9,
        eps=1e-2,
        tau=0.0,
        beta=0.2,
        ridge=1e-2,
        d=10,
        samples_per_client=150,
        n_train=120,
    )
    return cfg.with_(**overrides).validate()


def preset_mnist(mnist_path: str, strategy: str = "cafed", **overrides) -> ExperimentConfig:
    """The synthetic preset's population and algorithm settings on label-swapped MNIST."""
    base = preset_synthetic(strategy)
    return base.with_(dataset="mnist", mnist_path=str(mnist_path), **overrides).validate()


PRESETS = {"synthetic": preset_synthetic, "mnist": preset_mnist}


def best_learning_rates(rows) -> tuple[float, float]:
    """Pick (lr_local, lr_server) with the highest mean accuracy; ties go to the first row."""
    rows = list(rows)
    scores = np.array([r["mean_accuracy"] for r in rows])
    best = rows[int(np.argmax(scores))]
    return best["lr_local"], best["lr_server"]
