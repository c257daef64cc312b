"""Federated training loop: availability-gated rounds with pluggable aggregation."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .availability import AvailabilityTrace
from .data import FederationData
from .errors import DegenerateWeightsError, ParameterError
from .model import LinearModel, _project, _residual_and_ce, local_sgd, predict

_LOSS_REPORT, _LOCAL_SGD = 0, 1
_TRAIN_TAG = 0x7EA1


class AggregationStrategy:
    """Maps (round, active set, server estimates) to aggregation weights q >= 0.

    ``observe`` is called first with the active mask and the loss reported by
    every active client (NaN elsewhere); ``weights`` then returns a length-N
    vector.  Entries for inactive clients are ignored by the engine.
    """

    name = "base"
    needs_losses = False

    def observe(self, t: int, active: np.ndarray, losses: np.ndarray) -> None:
        pass

    def weights(self, t: int, active: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def snapshot(self) -> dict | None:
        return None


class UnbiasedStrategy(AggregationStrategy):
    """Every active client participates with weight alpha_k / pi_k."""

    name = "unbiased"

    def __init__(self, alpha, pi):
        alpha = np.asarray(alpha, dtype=float)
        pi = np.asarray(pi, dtype=float)
        if alpha.shape != pi.shape:
            raise ParameterError("alpha and pi must have equal length")
        if np.any(pi <= 0):
            raise ParameterError("availability pi_k must be positive for every client")
        self.q_full = alpha / pi

    def weights(self, t, active):
        return np.where(active, self.q_full, 0.0)


def unbiased_strategy(alpha, pi) -> UnbiasedStrategy:
    return UnbiasedStrategy(alpha, pi)


def biased_importance(pi, q) -> np.ndarray:
    """p_k = pi_k q_k / sum_h pi_h q_h, the importance a client effectively gets."""
    w = np.asarray(pi, dtype=float) * np.asarray(q, dtype=float)
    s = w.sum()
    if not s > 0:
        raise DegenerateWeightsError("sum_h pi_h q_h must be positive")
    return w / s


@dataclass
class RoundLog:
    round: int
    active: np.ndarray
    weights: np.ndarray
    reported_losses: np.ndarray
    test_accuracy: float
    test_loss: float
    estimates: dict | None = None

    @property
    def participating(self) -> np.ndarray:
        return self.active & (self.weights > 0)

    @property
    def idle(self) -> bool:
        return not self.participating.any()


def evaluate(model: LinearModel, federation: FederationData, split: str = "test") -> tuple[float, float]:
    """alpha-weighted accuracy and loss over the clients' ``split`` sets.

    Clients sharing one feature array (the common MNIST test set) are scored
    with a single forward pass.
    """
    alpha = federation.alpha
    ridge_term = 0.5 * model.ridge_coeff * float(np.vdot(model.weights, model.weights))
    cache: dict[int, tuple] = {}
    acc = 0.0
    lss = 0.0
    for k, part in enumerate(federation.clients):
        ds = getattr(part, split)
        if ds is None or len(ds) == 0:
            continue
        key = id(ds.features)
        if key not in cache:
            cache[key] = predict(model, ds.features)
        acc += alpha[k] * float(np.mean(cache[key] == ds.labels))
        ce, _ = _residual_and_ce(model.weights, ds.features, ds.labels, model.fit_intercept)
        lss += alpha[k] * (float(ce.mean()) + ridge_term)
    return acc, lss


def client_rng(seed: int, t: int, k: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, _TRAIN_TAG, t, k, purpose])


def _report_loss(model: LinearModel, data, batch_size, rng) -> float:
    n = len(data)
    if batch_size is None or batch_size >= n:
        x, y = data.features, data.labels
    else:
        idx = rng.choice(n, size=batch_size, replace=False)
        x, y = data.features[idx], data.labels[idx]
    ce, _ = _residual_and_ce(model.weights, x, y, model.fit_intercept)
    return float(ce.mean()) + 0.5 * model.ridge_coeff * float(np.vdot(model.weights, model.weights))


def run_round(
    model: LinearModel,
    federation: FederationData,
    active: np.ndarray,
    strategy: AggregationStrategy,
    lr_local: float,
    lr_server: float,
    e_steps: int,
    batch_size: int | None = 32,
    *,
    seed: int = 0,
    t: int = 1,
    workers: int = 1,
    evaluate_split: str | None = "test",
) -> tuple[LinearModel, RoundLog]:
    """One communication round.

    Active clients report a one-batch loss of the current model, the strategy
    picks q, clients with q_k > 0 run local SGD and the server applies
    ``w <- Proj_W(w + lr_server * sum_k q_k delta_k)``.  With no participant the
    model is left untouched.  Client randomness is derived from
    (seed, t, client) so results do not depend on ``workers``.
    """
    active = np.asarray(active, dtype=bool)
    n = federation.n_clients
    losses = np.full(n, np.nan)
    if strategy.needs_losses:
        for k in np.flatnonzero(active):
            rng = client_rng(seed, t, int(k), _LOSS_REPORT)
            losses[k] = _report_loss(model, federation.clients[k].train, batch_size, rng)
    strategy.observe(t, active, losses)
    q = np.where(active, np.asarray(strategy.weights(t, active), dtype=float), 0.0)
    if np.any(q < 0):
        raise ParameterError(f"strategy {strategy.name} returned negative weights")
    participants = [int(k) for k in np.flatnonzero(q > 0)]

    def work(k):
        rng = client_rng(seed, t, k, _LOCAL_SGD)
        return local_sgd(model, federation.clients[k].train, e_steps, lr_local, batch_size, rng)

    if participants:
        if workers > 1 and len(participants) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                deltas = list(pool.map(work, participants))
        else:
            deltas = [work(k) for k in participants]
        step = np.zeros_like(model.weights)
        for k, delta in zip(participants, deltas):  # fixed summation order
            step += q[k] * delta
        model = model.with_weights(_project(model.weights + lr_server * step, model.radius))

    if evaluate_split is not None:
        acc, lss = evaluate(model, federation, evaluate_split)
    else:
        acc = lss = math.nan
    log = RoundLog(t, active, q, losses, acc, lss, strategy.snapshot())
    return model, log


def learning_rate(base: float, t: int, schedule: str) -> float:
    if schedule == "constant":
        return base
    if schedule == "inv_sqrt":
        return base / math.sqrt(t)
    raise ParameterError(f"unknown learning-rate schedule {schedule!r}")


def realized_importance(weights_history) -> np.ndarray:
    """Time-averaged normalised importance from per-round (active-masked) weights."""
    w = np.asarray(weights_history, dtype=float)
    tot = w.sum()
    if not tot > 0:
        raise DegenerateWeightsError("no client ever received weight")
    return w.sum(axis=0) / tot


def replay_weights(strategy: AggregationStrategy, trace: AvailabilityTrace) -> np.ndarray:
    """Run a loss-free strategy over a trace without training; returns masked q per round."""
    if strategy.needs_losses:
        raise ParameterError("replay_weights needs a strategy that ignores losses")
    out = np.zeros(trace.active.shape)
    nan = np.full(trace.n_clients, np.nan)
    for t in range(trace.n_rounds):
        a = trace[t]
        strategy.observe(t + 1, a, nan)
        out[t] = np.where(a, strategy.weights(t + 1, a), 0.0)
    return out


@dataclass
class RunResult:
    logs: list[RoundLog]
    metrics: "RunMetrics"
    model: LinearModel
    federation: FederationData
    population: object
    trace: AvailabilityTrace
    extras: dict = field(default_factory=dict)


def run_experiment(config, seed: int | None = None, *, keep_models: bool = False):
    """Build everything from ``config`` and one seed, train, return (logs, metrics).

    ``seed`` defaults to the first configured seed.  With ``keep_models`` the
    full :class:`RunResult` (including the per-round weight snapshots in
    ``extras['weights']``) is returned instead of the pair.
    """
    from .build import build_run
    from .harness.metrics import compute_metrics

    config.validate()
    if config.rounds < 2:
        raise ParameterError("at least two rounds are required for run metrics")
    seed = config.seeds[0] if seed is None else seed
    run = build_run(config, seed)
    model = run.model
    logs = []
    snapshots = []
    for t in range(1, config.rounds + 1):
        lr = learning_rate(config.lr_local, t, config.lr_schedule)
        model, log = run_round(
            model,
            run.federation,
            run.trace[t - 1],
            run.strategy,
            lr,
            config.lr_server,
            config.local_steps,
            config.batch_size,
            seed=seed,
            t=t,
            workers=config.workers,
        )
        logs.append(log)
        if keep_models:
            snapshots.append(model.weights.copy())
    metrics = compute_metrics([g.test_accuracy for g in logs])
    if not keep_models:
        return logs, metrics
    return RunResult(
        logs, metrics, model, run.federation, run.population, run.trace, {"weights": snapshots}
    )
