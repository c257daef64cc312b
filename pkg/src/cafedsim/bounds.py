"""Error decompositions, problem constants and the aggregation-weight optimiser.

The two total-error decompositions bound ``F(w) - F*`` by an optimisation
term on the biased objective plus a bias term driven either by the chi-square
divergence (with heterogeneity ``Gamma``) or by the squared total variation
(with ``Gamma'``).  The convergence bound for the biased objective is a
quadratic-over-linear function of the aggregation weights; its minimiser over
``{q >= 0, sum q = Q}`` is computed in closed form by :func:`kkt_solution`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .availability import compute_Jt
from .data import ClientDataset, FederationData
from .errors import ParameterError, ShapeError, SolverError
from .model import LinearModel, gradient, loss, minimize_weighted

# ---------------------------------------------------------------------------
# divergences


def _prob_pair(alpha, p):
    a = np.asarray(alpha, dtype=float)
    b = np.asarray(p, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("alpha and p must be vectors of equal length")
    return a, b


def chi_square_divergence(alpha, p) -> float:
    """sum_k (alpha_k - p_k)^2 / p_k; ``inf`` when alpha charges a client with p_k = 0."""
    a, b = _prob_pair(alpha, p)
    if np.any((b == 0) & (a > 0)):
        return math.inf
    m = b > 0
    return float(np.sum((a[m] - b[m]) ** 2 / b[m]))


def total_variation(alpha, p) -> float:
    a, b = _prob_pair(alpha, p)
    return 0.5 * float(np.abs(a - b).sum())


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class ProblemConstants:
    """Constants entering the bounds.

    ``h_mix`` is the H inside the mixing lag J_t (default 1); ``H`` is the
    loss-range bound over W.  ``M`` is the size of the joint availability
    state space (2^N for N two-state clients).
    """

    L: float
    mu: float
    D: float = 0.0
    G: float = 0.0
    H: float = 0.0
    sigma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    Gamma: float = 0.0
    Gamma_prime: float = 0.0
    c_p: float = 1.0
    t_p: int = 1
    h_mix: float = 1.0
    E: int = 1
    Q: float = 1.0
    M: float = 2.0
    lambda_p: float = 0.5
    w0_dist_sq: float = 0.0

    def __post_init__(self):
        if not (self.L > 0 and self.mu > 0):
            raise ParameterError("L and mu must be positive")
        if self.L < self.mu:
            raise ParameterError(f"L={self.L} < mu={self.mu}: kappa must be >= 1")
        if self.Gamma < 0 or self.Gamma_prime < 0:
            raise ParameterError("Gamma and Gamma' must be non-negative")
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))

    @property
    def kappa(self) -> float:
        return self.L / self.mu

    def with_(self, **changes) -> "ProblemConstants":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["sigma"] = self.sigma.tolist()
        d["kappa"] = self.kappa
        return d


def lemma1_constants(
    datasets: Sequence[ClientDataset], template: LinearModel, sigma_max: float = 0.0
) -> tuple[float, float, float]:
    """Bounds (D, G, H) valid on the whole ball W.

    Per-sample gradients are bounded by ``c * |x~| + mu * R`` with
    ``c = 1`` (logistic) or ``sqrt(2)`` (softmax) since the residual
    ``softmax - onehot`` has norm at most sqrt(2).  That bound is D;
    G^2 = D^2 + max sigma_k^2 and H = 2 R D (mean value theorem on a set of
    diameter 2R).
    """
    c = 1.0 if template.binary else math.sqrt(2.0)
    worst = 0.0
    for ds in datasets:
        if len(ds) == 0:
            continue
        sq = np.einsum("ij,ij->i", ds.features, ds.features)
        if template.fit_intercept:
            sq = sq + 1.0
        worst = max(worst, float(np.sqrt(sq.max())))
    D = c * worst + template.ridge_coeff * template.radius
    G = math.sqrt(D * D + sigma_max**2)
    H = 2.0 * template.radius * D
    return D, G, H


def estimate_sigma(
    datasets: Sequence[ClientDataset],
    model: LinearModel,
    batch_size: int | None,
    draws: int = 100,
    seed: int = 0,
) -> np.ndarray:
    """Per-client sqrt(E |grad(w, B) - grad F_k(w)|^2) from ``draws`` minibatches at ``model``."""
    out = np.zeros(len(datasets))
    for k, ds in enumerate(datasets):
        n = len(ds)
        if batch_size is None or batch_size >= n:
            continue
        rng = np.random.default_rng([seed, 0x5167, k])
        full = gradient(model, ds)
        acc = 0.0
        for _ in range(draws):
            idx = rng.choice(n, size=batch_size, replace=False)
            g = gradient(model, ds.subset(idx))
            acc += float(np.sum((g - full) ** 2))
        out[k] = math.sqrt(acc / draws)
    return out


@dataclass
class HeterogeneityReport:
    gamma: float
    gamma_prime: float
    f_star: float
    w_star: LinearModel
    client_minima: np.ndarray
    f_b_star: float
    w_b_star: LinearModel


def heterogeneity(
    federation: FederationData | Sequence[ClientDataset],
    template: LinearModel,
    p=None,
    tol: float = 1e-10,
    alpha=None,
) -> HeterogeneityReport:
    """Gamma, Gamma' and the minimisers they are built from."""
    if isinstance(federation, FederationData):
        datasets = federation.train_sets()
        alpha = federation.alpha if alpha is None else alpha
    else:
        datasets = list(federation)
        if alpha is None:
            raise ParameterError("alpha is required when passing raw datasets")
    alpha = np.asarray(alpha, dtype=float)
    n = len(datasets)
    w_star, f_star = minimize_weighted(datasets, alpha, tol, template=template)
    minima = np.empty(n)
    for k in range(n):
        onehot = np.zeros(n)
        onehot[k] = 1.0
        minima[k] = minimize_weighted(datasets, onehot, tol, template=template)[1]
    at_star = client_values(w_star, datasets)
    gamma = max(0.0, float(np.max(at_star - minima)))
    if p is None:
        w_b, f_b = w_star, f_star
        gamma_p = gamma
    else:
        w_b, f_b = minimize_weighted(datasets, p, tol, template=template)
        gamma_p = max(0.0, float(np.max(client_values(w_b, datasets) - minima)))
    return HeterogeneityReport(gamma, gamma_p, f_star, w_star, minima, f_b, w_b)


def gamma_heterogeneity(federation, template: LinearModel, p=None, tol: float = 1e-10) -> tuple[float, float]:
    """(Gamma, Gamma') from full-batch oracles; Gamma' uses the minimiser of sum_k p_k F_k."""
    r = heterogeneity(federation, template, p, tol)
    return r.gamma, r.gamma_prime


def client_values(model: LinearModel, datasets: Sequence[ClientDataset]) -> np.ndarray:
    """F_k(model) for every client."""
    return np.array([loss(model, ds) for ds in datasets])


# ---------------------------------------------------------------------------
# total-error decompositions


def theorem1_bound(consts: ProblemConstants, f_b_gap: float, alpha, p) -> float:
    """2 kappa^2 (F_B - F_B*) + 2 kappa^4 chi^2(alpha || p) Gamma."""
    if f_b_gap < 0:
        raise ParameterError("F_B gap must be non-negative")
    k2 = consts.kappa**2
    chi2 = chi_square_divergence(alpha, p)
    bias = 0.0 if consts.Gamma == 0 and chi2 == math.inf else 2 * k2 * k2 * chi2 * consts.Gamma
    return 2 * k2 * f_b_gap + bias


def theorem3_bound(consts: ProblemConstants, f_b_gap: float, alpha, p) -> float:
    """2 kappa^2 (F_B - F_B*) + 8 kappa^4 d_TV(alpha, p)^2 Gamma'."""
    if f_b_gap < 0:
        raise ParameterError("F_B gap must be non-negative")
    k2 = consts.kappa**2
    tv = total_variation(alpha, p)
    return 2 * k2 * f_b_gap + 8 * k2 * k2 * tv * tv * consts.Gamma_prime


# ---------------------------------------------------------------------------
# convergence bound for the biased objective


def eta_schedule(base: float, T: int, kind: str = "inv_sqrt") -> np.ndarray:
    """Step sizes eta_1..eta_T."""
    t = np.arange(1, T + 1, dtype=float)
    if kind == "constant":
        return np.full(T, float(base))
    if kind == "inv_sqrt":
        return base / np.sqrt(t)
    if kind == "inv":
        return base / t
    raise ParameterError(f"unknown schedule {kind!r}")


@dataclass(frozen=True)
class Theorem2Terms:
    quad: float
    upsilon: float
    psi: float
    phi: float
    sum_eta: float
    value: float


def lag_sum(consts: ProblemConstants, etas) -> float:
    """sum_t ln(2 C_P H t) eta_{t - J_t}^2, with eta_0 taken equal to eta_1."""
    etas = np.asarray(etas, dtype=float)
    eta_ext = np.concatenate([etas[:1], etas])
    total = 0.0
    for ti in range(1, etas.size + 1):
        j = compute_Jt(ti, consts.lambda_p, consts.c_p, consts.t_p, consts.h_mix)
        total += math.log(2.0 * consts.c_p * consts.h_mix * ti) * eta_ext[ti - j] ** 2
    return total


def theorem2_terms(consts: ProblemConstants, q, pi, etas, lag: float | None = None) -> Theorem2Terms:
    """All pieces of the convergence bound for horizon T = len(etas).

    Sums over t are truncated at T.  ``lag`` is :func:`lag_sum`, which does
    not depend on q and may be passed in when evaluating many weight vectors.
    """
    q = np.asarray(q, dtype=float)
    pi = np.asarray(pi, dtype=float)
    etas = np.asarray(etas, dtype=float)
    if q.shape != pi.shape:
        raise ShapeError("q and pi must have equal length")
    if np.any(q < 0):
        raise ParameterError("q must be non-negative")
    if not 0.0 < consts.lambda_p < 1.0:
        raise ParameterError(f"lambda(P)={consts.lambda_p} must lie in (0, 1)")
    T = etas.size
    if T < 1:
        raise ParameterError("need at least one step size")
    denom = float(pi @ q)
    if not denom > 0:
        raise ParameterError("pi^T q must be positive")
    sigma = consts.sigma if consts.sigma.size else np.zeros(q.size)
    if sigma.shape != q.shape:
        raise ShapeError("one sigma per client required")
    t = np.arange(1, T + 1, dtype=float)
    sum_eta2 = float(np.sum(etas**2))
    Qsum = float(q.sum())
    E = consts.E
    sig_diag = sigma**2 * pi * sum_eta2
    quad = 0.5 * float(np.sum(sig_diag * q * q))
    upsilon = (2.0 / E) * consts.w0_dist_sq + 0.25 * consts.M * Qsum * float(np.sum(etas**2 + 1.0 / t**2))
    psi = 4.0 * consts.L * (E * Qsum + 2.0) * consts.Gamma * sum_eta2 + (2.0 / 3.0) * (E - 1) * (
        2 * E - 1
    ) * consts.G**2 * sum_eta2
    if lag is None:
        lag = lag_sum(consts, etas)
    phi = 2.0 * E * consts.D * consts.G * Qsum * lag
    value = (quad + upsilon) / denom + psi + phi / math.log(1.0 / consts.lambda_p)
    return Theorem2Terms(quad, upsilon, psi, phi, float(etas.sum()), value)


def theorem2_numerator(consts: ProblemConstants, q, pi, etas, *, full: bool = False, lag: float | None = None) -> float:
    """(q^T Sigma q / 2 + upsilon) / (pi^T q) + psi + phi / ln(1/lambda(P)).

    With ``full`` the value is divided by sum_t eta_t, giving the bound on
    the expected optimisation error of the biased objective.
    """
    terms = theorem2_terms(consts, q, pi, etas, lag)
    return terms.value / terms.sum_eta if full else terms.value


def composite_objective(consts: ProblemConstants, alpha, pi, etas) -> Callable[[np.ndarray], float]:
    """q -> eps_opt(q) + eps_bias(q): the chi-square decomposition with the
    full convergence bound as the optimisation term."""
    alpha = np.asarray(alpha, dtype=float)
    pi = np.asarray(pi, dtype=float)
    k2 = consts.kappa**2
    lag = lag_sum(consts, etas)

    def f(q):
        q = np.asarray(q, dtype=float)
        opt = 2 * k2 * theorem2_numerator(consts, q, pi, etas, full=True, lag=lag)
        p = pi * q / float(pi @ q)
        return opt + 2 * k2 * k2 * chi_square_divergence(alpha, p) * consts.Gamma

    return f


def optimization_term_coefficients(consts: ProblemConstants, pi, etas, Q: float):
    """(A_diag, B) of the quadratic-over-linear part of the convergence bound for sum q = Q.

    The bound reads ((q^T A q)/2 + B)/(pi^T q) + const on that slice; B
    collects upsilon, which only depends on q through sum q.
    """
    pi = np.asarray(pi, dtype=float)
    etas = np.asarray(etas, dtype=float)
    T = etas.size
    t = np.arange(1, T + 1, dtype=float)
    sum_eta2 = float(np.sum(etas**2))
    A = consts.sigma**2 * pi * sum_eta2
    B = (2.0 / consts.E) * consts.w0_dist_sq + 0.25 * consts.M * Q * float(np.sum(etas**2 + 1.0 / t**2))
    return A, B


# ---------------------------------------------------------------------------
# minimiser of (q^T diag(a) q / 2 + B) / (pi^T q) on {q >= 0, sum q = Q}


def ratio_objective(a, B, pi, q) -> float:
    a, pi, q = (np.asarray(v, dtype=float) for v in (a, pi, q))
    den = float(pi @ q)
    if not den > 0:
        return math.inf
    return (0.5 * float(np.sum(a * q * q)) + B) / den


@dataclass(frozen=True)
class KktSolution:
    q: np.ndarray
    threshold: float  # r: q_k > 0 iff pi_k > r
    scale: float  # c: q_k = c (pi_k - r)^+ / a_k
    objective: float
    support: np.ndarray


def _validate_kkt_inputs(a, B, pi, Q):
    a = np.asarray(a, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if a.ndim != 1 or a.shape != pi.shape or a.size == 0:
        raise ShapeError("a and pi must be non-empty vectors of equal length")
    if np.any(~np.isfinite(a)) or np.any(a <= 0):
        raise SolverError(f"diagonal entries must be positive and finite, got min {a.min()}")
    if np.any(~np.isfinite(pi)) or np.any(pi <= 0):
        raise SolverError(f"availabilities must be positive, got min {pi.min()}")
    if not (math.isfinite(B) and B >= 0):
        raise SolverError(f"B must be finite and >= 0, got {B}")
    if not (math.isfinite(Q) and Q > 0):
        raise SolverError(f"Q must be positive, got {Q}")
    return a, pi


def kkt_solution(a, B: float, pi, Q: float) -> KktSolution:
    """Closed-form KKT point.

    Stationarity gives q_k = c (pi_k - r)^+ / a_k, so the support is a set
    of the most available clients.  For a candidate support S, with
    S0 = sum 1/a, S1 = sum pi/a, S2 = sum pi^2/a, the constraint sum q = Q
    fixes c = Q / (S1 - r S0) and self-consistency of c with the objective
    value gives

        -(Q^2 S0 + 2 B S0^2) r^2 + 4 B S0 S1 r + (Q^2 S2 - 2 B S1^2) = 0,

    whose smaller root is the only one with c > 0.  A support is accepted
    when r < min_{S} pi and r >= max_{not S} pi.
    """
    a, pi = _validate_kkt_inputs(a, B, pi, Q)
    order = np.argsort(-pi, kind="stable")
    inv_a = 1.0 / a[order]
    ps = pi[order]
    c0 = np.cumsum(inv_a)
    c1 = np.cumsum(ps * inv_a)
    c2 = np.cumsum(ps * ps * inv_a)
    best = None
    tried = []
    for m in range(1, a.size + 1):
        S0, S1, S2 = c0[m - 1], c1[m - 1], c2[m - 1]
        qa = -(Q * Q * S0 + 2 * B * S0 * S0)
        qb = 4 * B * S0 * S1
        qc = Q * Q * S2 - 2 * B * S1 * S1
        disc = qb * qb - 4 * qa * qc
        if disc < 0:
            disc = 0.0  # only reachable by rounding: disc >= 0 by Cauchy-Schwarz
        # smaller root of a concave quadratic (qa < 0), cancellation-free form
        sq = math.sqrt(disc)
        tmp = -0.5 * (qb + math.copysign(sq, qb))
        r = 0.0 if tmp == 0.0 else min(tmp / qa, qc / tmp)
        c = Q / (S1 - r * S0)
        lo = ps[m - 1]
        hi = ps[m] if m < a.size else -math.inf
        slack = 1e-12 * max(1.0, abs(r))
        ok = c > 0 and r < lo and r >= hi - slack
        tried.append((m, r, c, ok))
        if not ok:
            continue
        q = np.zeros(a.size)
        q_sorted = c * np.maximum(ps[:m] - r, 0.0) * inv_a[:m]
        q_sorted *= Q / q_sorted.sum()  # exact primal feasibility
        q[order[:m]] = q_sorted
        obj = ratio_objective(a, B, pi, q)
        if best is None or obj < best.objective:
            best = KktSolution(q, float(r), float(c), obj, np.sort(order[:m]))
    if best is None:
        raise SolverError(f"no consistent support found; candidates (size, r, c, valid): {tried}")
    return best


def optimize_weights_kkt(sigma_diag, B: float, pi, Q: float) -> np.ndarray:
    """Minimiser q* of (q^T diag(sigma_diag) q / 2 + B) / (pi^T q) with q >= 0, sum q = Q."""
    return kkt_solution(sigma_diag, B, pi, Q).q


def kkt_residuals(a, B: float, pi, Q: float, q) -> dict:
    """Stationarity, primal feasibility, dual feasibility and complementary slackness.

    With g = grad f(q) and the multiplier of sum q = Q estimated as
    nu = -mean_{q_k > 0} g_k, the slack multipliers are mu_k = g_k + nu.
    """
    a, pi = _validate_kkt_inputs(a, B, pi, Q)
    q = np.asarray(q, dtype=float)
    den = float(pi @ q)
    num = 0.5 * float(np.sum(a * q * q)) + B
    g = (a * q * den - num * pi) / (den * den)
    sup = q > 0
    nu = -float(np.mean(g[sup]))
    mu = g + nu
    return {
        "stationarity": float(np.max(np.abs(mu[sup]))),
        "primal": max(abs(float(q.sum()) - Q), float(np.max(np.maximum(-q, 0.0)))),
        "dual": float(np.max(np.maximum(-mu[~sup], 0.0))) if np.any(~sup) else 0.0,
        "complementarity": float(np.max(np.abs(mu * q))),
    }


def project_scaled_simplex(v, Q: float) -> np.ndarray:
    """Euclidean projection onto {q >= 0, sum q = Q} (sort-and-threshold)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - Q
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def pgd_weights(a, B: float, pi, Q: float, tol: float = 1e-8, max_iter: int = 20_000) -> np.ndarray:
    """Accelerated projected gradient with backtracking and restarts on the scaled simplex.

    Independent of :func:`kkt_solution`; used as a reference solver.  Stops
    when the gradient-mapping norm falls below ``tol * max(1, |f|)``.
    """
    a, pi = _validate_kkt_inputs(a, B, pi, Q)
    f = lambda q: ratio_objective(a, B, pi, q)  # noqa: E731

    def grad(q):
        den = float(pi @ q)
        num = 0.5 * float(np.sum(a * q * q)) + B
        return (a * q * den - num * pi) / (den * den)

    x = np.full(a.size, Q / a.size)
    fx = f(x)
    y, fy = x, fx
    mom = 1.0
    step = 1.0
    for _ in range(max_iter):
        g = grad(y)
        while True:
            cand = project_scaled_simplex(y - step * g, Q)
            d = cand - y
            fc = f(cand)
            if fc <= fy + float(g @ d) + float(d @ d) / (2 * step):
                break
            step *= 0.5
            if step < 1e-30:
                return x
        if float(np.linalg.norm(d)) / step <= tol * max(1.0, abs(fc)):
            return cand
        if fc > fx:
            mom = 1.0
            y, fy = x, fx
            continue
        mom_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * mom * mom))
        y = project_scaled_simplex(cand + ((mom - 1.0) / mom_next) * (cand - x), Q)
        fy = f(y)
        x, fx, mom = cand, fc, mom_next
        step *= 1.5
    return x


# ---------------------------------------------------------------------------
# midpoint convexity


@dataclass(frozen=True)
class ConvexityReport:
    trials: int
    violations: int
    worst_gap: float
    passed: bool


def convexity_check(
    objective: Callable[[np.ndarray], float],
    n: int,
    Q: float = 1.0,
    trials: int = 10_000,
    seed: int = 0,
    tol: float = 1e-9,
) -> ConvexityReport:
    """Midpoint test on random pairs of the scaled simplex.

    A pair violates convexity when ``f(mid) - (f(q1) + f(q2)) / 2`` exceeds
    ``tol * max(1, |(f(q1) + f(q2)) / 2|)``; the relative part keeps the test
    meaningful for objectives whose values are far above 1.
    """
    rng = np.random.default_rng([seed, 0xC0E7])
    violations = 0
    worst = -math.inf
    for _ in range(trials):
        q1 = Q * rng.dirichlet(np.ones(n))
        q2 = Q * rng.dirichlet(np.ones(n))
        avg = 0.5 * (objective(q1) + objective(q2))
        gap = objective(0.5 * (q1 + q2)) - avg
        rel = gap / max(1.0, abs(avg))
        worst = max(worst, rel)
        if rel > tol:
            violations += 1
    return ConvexityReport(trials, violations, float(worst), violations == 0)
