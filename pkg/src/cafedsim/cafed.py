"""CA-Fed: correlation-aware client exclusion and aggregation.

The server keeps smoothed loss estimates, their running minima and Bayesian
estimates of each client's availability and temporal correlation.  Each round
it starts from q = alpha / pi_hat and greedily zeroes weights, first scanning
clients by decreasing correlation and then by increasing availability,
whenever that lowers the error proxy

    <F_hat - F_hat*, pi_hat (.)~ q> + kappa_bar^2 * d_TV(alpha, pi_hat (.)~ q)^2 * Gamma'_hat

by at least ``tau``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .engine import AggregationStrategy
from .errors import DegenerateWeightsError, ParameterError, ProtocolError


@dataclass(frozen=True)
class CaFedConfig:
    tau: float = 0.0
    beta: float = 0.2
    kappa_bar_sq: float = 1.0
    prior_n: float = 1.0
    prior_m: float = 1.0
    transition_prior: float = 1.0

    def __post_init__(self):
        if self.tau < 0:
            raise ParameterError("tau must be >= 0")
        if not 0.0 < self.beta <= 1.0:
            raise ParameterError("beta must lie in (0, 1]")
        if not self.kappa_bar_sq > 0:
            raise ParameterError("kappa_bar_sq must be positive")
        if self.prior_n <= 0 or self.prior_m <= 0 or self.transition_prior <= 0:
            raise ParameterError("priors must be positive")


@dataclass
class EstimatorState:
    """Server-side running estimates.  NaN losses mean "never reported"."""

    n_clients: int
    prior_n: float = 1.0
    prior_m: float = 1.0
    transition_prior: float = 1.0
    f_hat: np.ndarray = field(init=False)
    f_star_hat: np.ndarray = field(init=False)
    active_counts: np.ndarray = field(init=False)
    transitions: np.ndarray = field(init=False)
    rounds: int = field(init=False, default=0)
    prev_active: np.ndarray | None = field(init=False, default=None)

    def __post_init__(self):
        n = self.n_clients
        self.f_hat = np.full(n, np.nan)
        self.f_star_hat = np.full(n, np.nan)
        self.active_counts = np.zeros(n, dtype=np.int64)
        self.transitions = np.zeros((n, 2, 2), dtype=np.int64)

    @classmethod
    def from_config(cls, n_clients: int, config: CaFedConfig) -> "EstimatorState":
        return cls(n_clients, config.prior_n, config.prior_m, config.transition_prior)

    @property
    def gaps(self) -> np.ndarray:
        """F_hat - F_hat*, with never-reported clients contributing 0."""
        return np.nan_to_num(self.f_hat - self.f_star_hat, nan=0.0)

    @property
    def gamma_prime_hat(self) -> float:
        return float(self.gaps.max()) if self.n_clients else 0.0

    @property
    def pi_hat(self) -> np.ndarray:
        return (self.active_counts + self.prior_n) / (self.rounds + self.prior_n + self.prior_m)

    @property
    def transition_hat(self) -> tuple[np.ndarray, np.ndarray]:
        """Posterior-mean stay probabilities (active, inactive)."""
        c = self.transitions
        a = self.transition_prior
        stay_a = (c[:, 1, 1] + a) / (c[:, 1, 1] + c[:, 1, 0] + 2 * a)
        stay_i = (c[:, 0, 0] + a) / (c[:, 0, 0] + c[:, 0, 1] + 2 * a)
        return stay_a, stay_i

    @property
    def lambda2_hat(self) -> np.ndarray:
        stay_a, stay_i = self.transition_hat
        return stay_a + stay_i - 1.0

    def snapshot(self) -> dict:
        return {
            "f_hat": self.f_hat.tolist(),
            "f_star_hat": self.f_star_hat.tolist(),
            "pi_hat": self.pi_hat.tolist(),
            "lambda2_hat": self.lambda2_hat.tolist(),
            "gamma_prime_hat": self.gamma_prime_hat,
        }


def update_loss_estimates(state: EstimatorState, active, losses, beta: float) -> EstimatorState:
    """Auto-regressive loss filter on active clients plus running minima.

    ``losses`` is a length-N vector holding a finite value exactly for the
    active clients.  A client's first report initialises its estimate.
    """
    active = np.asarray(active, dtype=bool)
    losses = np.asarray(losses, dtype=float)
    reported = np.isfinite(losses)
    if np.any(reported & ~active):
        raise ProtocolError(f"loss reported by inactive clients {np.flatnonzero(reported & ~active).tolist()}")
    if np.any(active & ~reported):
        raise ProtocolError(f"missing loss for active clients {np.flatnonzero(active & ~reported).tolist()}")
    first = active & np.isnan(state.f_hat)
    again = active & ~first
    state.f_hat[first] = losses[first]
    state.f_hat[again] = (1.0 - beta) * state.f_hat[again] + beta * losses[again]
    state.f_star_hat[active] = np.fmin(state.f_star_hat[active], state.f_hat[active])
    return state


def update_availability_estimates(state: EstimatorState, active) -> EstimatorState:
    """Count activity and state transitions for the Bayesian estimators."""
    active = np.asarray(active, dtype=bool)
    if state.prev_active is not None:
        idx = np.arange(state.n_clients)
        state.transitions[idx, state.prev_active.astype(np.int64), active.astype(np.int64)] += 1
    state.active_counts += active
    state.rounds += 1
    state.prev_active = active.copy()
    return state


def estimates_from_trace(trace, prior_n=1.0, prior_m=1.0, transition_prior=1.0) -> EstimatorState:
    """Availability estimates after observing a whole trace (batch form)."""
    active = np.asarray(trace.active if hasattr(trace, "active") else trace, dtype=bool)
    state = EstimatorState(active.shape[1], prior_n, prior_m, transition_prior)
    state.active_counts = active.sum(axis=0).astype(np.int64)
    state.transitions = kernels.transition_counts(active)
    state.rounds = active.shape[0]
    state.prev_active = active[-1].copy() if active.shape[0] else None
    return state


def normalized_importance(pi, q) -> np.ndarray:
    w = np.asarray(pi, dtype=float) * np.asarray(q, dtype=float)
    s = w.sum()
    if not s > 0:
        raise DegenerateWeightsError("sum_h pi_h q_h must be positive")
    return w / s


def error_proxy(f_hat, f_star_hat, gamma_prime_hat, pi_hat, q, alpha, kappa_bar_sq=1.0) -> float:
    gap = np.nan_to_num(np.asarray(f_hat, float) - np.asarray(f_star_hat, float), nan=0.0)
    p = normalized_importance(pi_hat, q)
    tv = 0.5 * float(np.abs(np.asarray(alpha, float) - p).sum())
    return float(gap @ p) + kappa_bar_sq * tv * tv * gamma_prime_hat


def descending_order(rho) -> np.ndarray:
    """Indices by decreasing rho; ties keep client index order."""
    return np.argsort(-np.asarray(rho, dtype=float), kind="stable").astype(np.int64)


def exclusion_pass(
    q, alpha, f_hat, f_star_hat, gamma_prime_hat, pi_hat, rho, tau, kappa_bar_sq=1.0
) -> np.ndarray:
    """One ``get`` scan: zero q_k in decreasing-rho order while the proxy drops by >= tau."""
    q = np.asarray(q, dtype=float)
    if np.any(q < 0) or not np.any(q > 0):
        raise ParameterError("q must be non-negative with non-empty support")
    gap = np.nan_to_num(np.asarray(f_hat, float) - np.asarray(f_star_hat, float), nan=0.0)
    pi_hat = np.asarray(pi_hat, dtype=float)
    if not (pi_hat * q).sum() > 0:
        raise DegenerateWeightsError("sum_h pi_h q_h must be positive")
    out, _ = kernels.greedy_exclusion(
        q,
        np.asarray(alpha, dtype=float),
        gap,
        float(gamma_prime_hat),
        pi_hat,
        descending_order(rho),
        float(tau),
        float(kappa_bar_sq),
    )
    return out


def cafed_policy(state: EstimatorState, config: CaFedConfig, alpha, pi=None, lambda2=None) -> np.ndarray:
    """Full-population q after both exclusion passes (before masking by A_t).

    ``pi`` / ``lambda2`` replace the estimates when an availability oracle is
    available.
    """
    alpha = np.asarray(alpha, dtype=float)
    pi_hat = state.pi_hat if pi is None else np.asarray(pi, dtype=float)
    lam_hat = state.lambda2_hat if lambda2 is None else np.asarray(lambda2, dtype=float)
    q = alpha / pi_hat
    args = (alpha, state.f_hat, state.f_star_hat, state.gamma_prime_hat, pi_hat)
    q = exclusion_pass(q, *args, lam_hat, config.tau, config.kappa_bar_sq)
    q = exclusion_pass(q, *args, -pi_hat, config.tau, config.kappa_bar_sq)
    return q


def cafed_strategy(state, config, alpha, t, active, pi=None, lambda2=None) -> np.ndarray:
    """CA-Fed aggregation weights for round t, zero outside the active set."""
    q = cafed_policy(state, config, alpha, pi, lambda2)
    return np.where(np.asarray(active, dtype=bool), q, 0.0)


class CaFedStrategy(AggregationStrategy):
    name = "cafed"
    needs_losses = True

    def __init__(self, alpha, config: CaFedConfig | None = None, pi=None, lambda2=None):
        self.alpha = np.asarray(alpha, dtype=float)
        self.config = config or CaFedConfig()
        self.state = EstimatorState.from_config(self.alpha.size, self.config)
        self.oracle_pi = None if pi is None else np.asarray(pi, dtype=float)
        self.oracle_lambda2 = None if lambda2 is None else np.asarray(lambda2, dtype=float)
        self.policy = self.alpha.copy()

    def observe(self, t, active, losses):
        update_availability_estimates(self.state, active)
        update_loss_estimates(self.state, active, losses, self.config.beta)

    def weights(self, t, active):
        self.policy = cafed_policy(self.state, self.config, self.alpha, self.oracle_pi, self.oracle_lambda2)
        return np.where(active, self.policy, 0.0)

    @property
    def excluded(self) -> np.ndarray:
        return np.flatnonzero(self.policy == 0)

    def snapshot(self) -> dict:
        snap = self.state.snapshot()
        snap["excluded"] = self.excluded.tolist()
        return snap
