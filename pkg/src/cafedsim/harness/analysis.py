"""Bound evaluation for concrete runs: constants from data and error checkpoints."""

from __future__ import annotations

import numpy as np

from ..availability import PopulationSpec, product_chain_lambda
from ..bounds import (
    ProblemConstants,
    chi_square_divergence,
    client_values,
    estimate_sigma,
    heterogeneity,
    lemma1_constants,
    theorem1_bound,
    theorem3_bound,
    total_variation,
)
from ..data import FederationData
from ..engine import realized_importance
from ..model import LinearModel, smoothness_constant


def problem_constants(
    federation: FederationData,
    template: LinearModel,
    population: PopulationSpec,
    *,
    q=None,
    p=None,
    E: int = 5,
    batch_size: int | None = 32,
    tol: float = 1e-10,
    sigma_draws: int = 100,
    seed: int = 0,
):
    """Constants for one federation and weight choice.

    ``q`` defaults to alpha / pi (the unbiased weights); ``p`` to the
    importance those weights induce.  Returns ``(ProblemConstants,
    HeterogeneityReport)``.
    """
    alpha = federation.alpha
    pi = population.pi_active
    q = alpha / pi if q is None else np.asarray(q, dtype=float)
    if p is None:
        w = pi * q
        p = w / w.sum()
    datasets = federation.train_sets()
    het = heterogeneity(federation, template, p, tol)
    sigma = estimate_sigma(datasets, template, batch_size, sigma_draws, seed)
    D, G, H = lemma1_constants(datasets, template, float(sigma.max(initial=0.0)))
    included = q > 0
    consts = ProblemConstants(
        L=smoothness_constant(federation, ridge_coeff=template.ridge_coeff, fit_intercept=template.fit_intercept),
        mu=template.ridge_coeff,
        D=D,
        G=G,
        H=H,
        sigma=sigma,
        Gamma=het.gamma,
        Gamma_prime=het.gamma_prime,
        E=E,
        Q=float(q.sum()),
        M=2.0 ** int(included.sum()),
        lambda_p=product_chain_lambda(population.chains, included),
        w0_dist_sq=float(np.sum((template.weights - het.w_star.weights) ** 2)),
    )
    return consts, het


def bound_checkpoints(run, tol: float = 1e-10, every: int = 1) -> list[dict]:
    """Measured error and both decompositions at logged rounds of a finished run.

    ``run`` is a :class:`~cafedsim.engine.RunResult` built with
    ``keep_models=True``.  The biased importance is the realized one,
    p_k proportional to sum_t q_k^(t) 1[k in A_t].
    """
    federation = run.federation
    template = run.model.with_weights(np.zeros_like(run.model.weights))
    datasets = federation.train_sets()
    alpha = federation.alpha
    p = realized_importance([g.weights for g in run.logs])
    consts, het = problem_constants(federation, template, run.population, p=p, tol=tol, sigma_draws=1)
    rows = []
    for idx in range(0, len(run.logs), every):
        w = template.with_weights(run.extras["weights"][idx])
        vals = client_values(w, datasets)
        eps = float(alpha @ vals) - het.f_star
        f_b_gap = max(0.0, float(p @ vals) - het.f_b_star)
        rows.append(
            {
                "round": run.logs[idx].round,
                "epsilon": eps,
                "f_b_gap": f_b_gap,
                "theorem1": theorem1_bound(consts, f_b_gap, alpha, p),
                "theorem3": theorem3_bound(consts, f_b_gap, alpha, p),
                "chi2": chi_square_divergence(alpha, p),
                "d_tv": total_variation(alpha, p),
            }
        )
    return rows
