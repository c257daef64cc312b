"""Ridge-regularised linear classifier: loss, gradient, local SGD and oracles.

Weights have shape ``(d + 1, K)`` with the bias in the last row (``d`` rows
when ``fit_intercept`` is off).  ``K == 1`` is the binary logistic head; any
``K >= 3`` is a multinomial softmax head.  The bias takes part in the ridge
penalty, so every objective here is ``ridge_coeff``-strongly convex.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import ClientDataset, FederationData
from .errors import ConvergenceError, DataError, ParameterError, ShapeError


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    ridge_coeff: float = 1e-2
    radius: float = 100.0
    fit_intercept: bool = True

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2:
            raise ShapeError("weights must be a (rows, heads) matrix")
        if self.ridge_coeff < 0 or self.radius <= 0:
            raise ParameterError("ridge_coeff must be >= 0 and radius > 0")
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, n_features: int, n_classes: int, **kw) -> "LinearModel":
        heads = 1 if n_classes == 2 else n_classes
        rows = n_features + (1 if kw.get("fit_intercept", True) else 0)
        return cls(np.zeros((rows, heads)), **kw)

    @property
    def n_classes(self) -> int:
        k = self.weights.shape[1]
        return 2 if k == 1 else k

    @property
    def binary(self) -> bool:
        return self.weights.shape[1] == 1

    @property
    def n_features(self) -> int:
        return self.weights.shape[0] - (1 if self.fit_intercept else 0)

    def with_weights(self, w: np.ndarray) -> "LinearModel":
        return replace(self, weights=w)

    def norm(self) -> float:
        return float(np.linalg.norm(self.weights))

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "d": self.n_features,
            "n_classes": self.n_classes,
            "ridge_coeff": self.ridge_coeff,
            "radius": self.radius,
            "fit_intercept": self.fit_intercept,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        m = cls(
            np.asarray(d["weights"], dtype=float),
            float(d["ridge_coeff"]),
            float(d["radius"]),
            bool(d.get("fit_intercept", True)),
        )
        if m.n_features != int(d["d"]) or m.n_classes != int(d["n_classes"]):
            raise ShapeError("checkpoint metadata does not match weight shape")
        return m


# ---------------------------------------------------------------------------
# core evaluation on raw arrays


def _scores(w: np.ndarray, x: np.ndarray, intercept: bool) -> np.ndarray:
    if intercept:
        return x @ w[:-1] + w[-1]
    return x @ w


def _check(w: np.ndarray, x: np.ndarray, y: np.ndarray, intercept: bool):
    if x.shape[0] == 0:
        raise DataError("empty batch")
    expected = w.shape[0] - (1 if intercept else 0)
    if x.shape[1] != expected:
        raise ShapeError(f"batch has {x.shape[1]} features, model expects {expected}")
    n_classes = 2 if w.shape[1] == 1 else w.shape[1]
    if y.max() >= n_classes:
        raise ShapeError(f"label {y.max()} out of range for {n_classes} classes")


def _residual_and_ce(w, x, y, intercept):
    """Per-sample cross-entropy and dCE/dscores."""
    z = _scores(w, x, intercept)
    if w.shape[1] == 1:
        z = z[:, 0]
        ce = np.logaddexp(0.0, z) - y * z
        r = (0.5 * (1.0 + np.tanh(0.5 * z)) - y)[:, None]
    else:
        zmax = z.max(axis=1, keepdims=True)
        ez = np.exp(z - zmax)
        tot = ez.sum(axis=1, keepdims=True)
        lse = (np.log(tot) + zmax)[:, 0]
        ce = lse - z[np.arange(z.shape[0]), y]
        r = ez / tot
        r[np.arange(z.shape[0]), y] -= 1.0
    return ce, r


def weighted_loss_grad(w, x, y, sample_weights, ridge, intercept):
    """sum_i s_i CE_i + ridge/2 |w|^2 and its gradient (s need not be uniform)."""
    ce, r = _residual_and_ce(w, x, y, intercept)
    rs = r * sample_weights[:, None]
    g = np.empty_like(w)
    if intercept:
        g[:-1] = x.T @ rs
        g[-1] = rs.sum(axis=0)
    else:
        g[:] = x.T @ rs
    g += ridge * w
    val = float(sample_weights @ ce) + 0.5 * ridge * float(np.vdot(w, w))
    return val, g


# ---------------------------------------------------------------------------
# public operations


def loss(model: LinearModel, batch: ClientDataset) -> float:
    """Mean cross-entropy over ``batch`` plus (ridge/2) |w|^2."""
    _check(model.weights, batch.features, batch.labels, model.fit_intercept)
    ce, _ = _residual_and_ce(model.weights, batch.features, batch.labels, model.fit_intercept)
    return float(ce.mean()) + 0.5 * model.ridge_coeff * float(np.vdot(model.weights, model.weights))


def gradient(model: LinearModel, batch: ClientDataset) -> np.ndarray:
    x, y = batch.features, batch.labels
    _check(model.weights, x, y, model.fit_intercept)
    s = np.full(x.shape[0], 1.0 / x.shape[0])
    return weighted_loss_grad(model.weights, x, y, s, model.ridge_coeff, model.fit_intercept)[1]


def project(model: LinearModel) -> LinearModel:
    """Euclidean projection onto the ball of radius ``model.radius``."""
    return model.with_weights(_project(model.weights, model.radius))


def _project(w: np.ndarray, radius: float) -> np.ndarray:
    nrm = float(np.linalg.norm(w))
    if nrm <= radius:
        return w
    return w * (radius / nrm)


def local_sgd(
    model: LinearModel,
    client_data: ClientDataset,
    e_steps: int,
    lr: float,
    batch_size: int | None,
    rng: np.random.Generator,
) -> np.ndarray:
    """Run ``e_steps`` SGD steps from ``model`` and return the weight delta.

    Each step draws a fresh batch without replacement; a ``batch_size`` of
    ``None`` or at least the dataset size means full-batch steps (and no
    randomness is consumed).
    """
    if e_steps < 1:
        raise ParameterError("e_steps must be >= 1")
    n = len(client_data)
    if n == 0:
        raise DataError("client has no training data")
    x, y = client_data.features, client_data.labels
    _check(model.weights, x, y, model.fit_intercept)
    w0 = model.weights
    w = w0.copy()
    full = batch_size is None or batch_size >= n
    m = n if full else batch_size
    s = np.full(m, 1.0 / m)
    for _ in range(e_steps):
        if full:
            xb, yb = x, y
        else:
            idx = rng.choice(n, size=batch_size, replace=False)
            xb, yb = x[idx], y[idx]
        _, g = weighted_loss_grad(w, xb, yb, s, model.ridge_coeff, model.fit_intercept)
        w -= lr * g
    return w - w0


def accuracy(model: LinearModel, dataset: ClientDataset) -> float:
    """Fraction of correct predictions; ties go to the lowest class index."""
    if len(dataset) == 0:
        raise DataError("empty dataset")
    return float(np.mean(predict(model, dataset.features) == dataset.labels))


def predict(model: LinearModel, x: np.ndarray) -> np.ndarray:
    z = _scores(model.weights, x, model.fit_intercept)
    if model.binary:
        return (z[:, 0] > 0).astype(np.int64)
    return np.argmax(z, axis=1)


def smoothness_constant(
    datasets: Sequence[ClientDataset] | FederationData,
    n_classes: int = 2,
    ridge_coeff: float = 1e-2,
    fit_intercept: bool = True,
) -> float:
    """Upper bound L on the gradient Lipschitz constant of every local objective.

    L = c * max_k lambda_max(X_k^T X_k / |D_k|) + ridge, where X_k includes the
    bias column when ``fit_intercept``; c = 1/4 (logistic) or 1/2 (softmax).
    """
    if isinstance(datasets, FederationData):
        n_classes = datasets.n_classes
        datasets = datasets.train_sets()
    c = 0.25 if n_classes == 2 else 0.5
    worst = 0.0
    for ds in datasets:
        x = ds.features
        if fit_intercept:
            x = np.hstack([x, np.ones((x.shape[0], 1))])
        if x.shape[0] == 0:
            continue
        gram = x.T @ x / x.shape[0]
        worst = max(worst, float(np.linalg.eigvalsh(gram)[-1]))
    return c * worst + ridge_coeff


# ---------------------------------------------------------------------------
# full-batch oracle


class WeightedObjective:
    """sum_k weights_k F_k over a list of client datasets, as one stacked problem."""

    def __init__(self, datasets: Sequence[ClientDataset], weights, ridge: float, intercept: bool):
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (len(datasets),):
            raise ShapeError("one weight per dataset required")
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ParameterError("weights must be non-negative with positive sum")
        weights = weights / weights.sum()
        keep = [k for k in range(len(datasets)) if weights[k] > 0]
        for k in keep:
            if len(datasets[k]) == 0:
                raise DataError(f"dataset {k} has positive weight but no samples")
        self.x = np.vstack([datasets[k].features for k in keep])
        self.y = np.concatenate([datasets[k].labels for k in keep])
        self.s = np.concatenate([np.full(len(datasets[k]), weights[k] / len(datasets[k])) for k in keep])
        self.ridge = ridge
        self.intercept = intercept

    def __call__(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        return weighted_loss_grad(w, self.x, self.y, self.s, self.ridge, self.intercept)

    def value(self, w: np.ndarray) -> float:
        ce, _ = _residual_and_ce(w, self.x, self.y, self.intercept)
        return float(self.s @ ce) + 0.5 * self.ridge * float(np.vdot(w, w))


def minimize_weighted(
    federation: FederationData | Sequence[ClientDataset],
    weights,
    tol: float = 1e-8,
    *,
    template: LinearModel | None = None,
    start: np.ndarray | None = None,
    max_iter: int = 100_000,
) -> tuple[LinearModel, float]:
    """Minimise sum_k weights_k F_k over the ball W to gradient-mapping norm <= tol.

    Deterministic accelerated projected gradient descent with backtracking and
    function-value restarts.  ``template`` supplies ridge, radius, intercept
    and the head shape; ``start`` the initial weights (zeros by default).
    """
    if isinstance(federation, FederationData):
        datasets = federation.train_sets()
        n_classes = federation.n_classes
    else:
        datasets = list(federation)
        n_classes = 2
    if template is None:
        template = LinearModel.zeros(datasets[0].n_features, n_classes)
    obj = WeightedObjective(datasets, weights, template.ridge_coeff, template.fit_intercept)
    radius = template.radius
    lip = smoothness_constant(
        [ClientDataset(obj.x, obj.y)], template.n_classes, template.ridge_coeff, template.fit_intercept
    )
    # the stacked problem is a weighted mean, so per-client L bounds it too; the
    # stacked gram is used as a cheap starting estimate and backtracking fixes it
    step = 1.0 / lip
    x = _project(np.zeros_like(template.weights) if start is None else np.array(start, float), radius)
    fx, gx = obj(x)
    y, fy, gy = x, fx, gx
    mom = 1.0
    gm_norm = np.inf
    for _ in range(max_iter):
        while True:
            x_new = _project(y - step * gy, radius)
            d = x_new - y
            f_new, g_new = obj(x_new)
            slack = 1e-13 * max(1.0, abs(fy))
            if f_new <= fy + float(np.vdot(gy, d)) + float(np.vdot(d, d)) / (2 * step) + slack:
                break
            step *= 0.5
        gm = (x_new - _project(x_new - step * g_new, radius)) / step
        gm_norm = float(np.linalg.norm(gm))
        if gm_norm <= tol:
            return template.with_weights(x_new), f_new
        if f_new > fx:
            # restart momentum
            mom = 1.0
            y, fy, gy = x_new, f_new, g_new
        else:
            mom_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * mom * mom))
            y = _project(x_new + ((mom - 1.0) / mom_next) * (x_new - x), radius)
            fy, gy = obj(y)
            mom = mom_next
        x, fx = x_new, f_new
    raise ConvergenceError(f"minimize_weighted did not reach tol={tol} in {max_iter} iterations", gm_norm)


def weighted_value(
    model: LinearModel, datasets: Sequence[ClientDataset], weights
) -> float:
    """sum_k weights_k F_k(model) with weights normalised to sum 1."""
    obj = WeightedObjective(datasets, weights, model.ridge_coeff, model.fit_intercept)
    return obj.value(model.weights)
