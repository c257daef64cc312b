import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cafedsim import availability as av
from cafedsim.errors import DegenerateChainError, ParameterError, SizeError


def chain(a, i):
    return av.ClientChain(a, i)


# -- oracles -----------------------------------------------------------------


def exact_deviation(p_a, p_i, t):
    """max_ij |P^t - 1 pi| in rational arithmetic."""
    P = [[Fraction(p_a), 1 - Fraction(p_a)], [1 - Fraction(p_i), Fraction(p_i)]]
    leave_a, leave_i = 1 - Fraction(p_a), 1 - Fraction(p_i)
    pi = [leave_i / (leave_a + leave_i), leave_a / (leave_a + leave_i)]
    M = [[Fraction(1), Fraction(0)], [Fraction(0), Fraction(1)]]
    for _ in range(t):
        M = [[sum(M[r][k] * P[k][c] for k in range(2)) for c in range(2)] for r in range(2)]
    return max(abs(M[r][c] - pi[c]) for r in range(2) for c in range(2))


def power_iteration_pi(c):
    return np.linalg.matrix_power(c.matrix, 4096)[0]


# -- chain construction ------------------------------------------------------


def test_chain_from_pi_lambda_iid_symmetric():
    c = av.chain_from_pi_lambda(0.5, 0.0)
    assert (c.p_stay_active, c.p_stay_inactive) == (0.5, 0.5)


@pytest.mark.parametrize("pi,lam,pa,pi_", [(0.9, 0.9, 0.99, 0.91), (0.1, 0.9, 0.91, 0.99)])
def test_chain_from_pi_lambda_persistent(pi, lam, pa, pi_):
    c = av.chain_from_pi_lambda(pi, lam)
    assert c.p_stay_active == pytest.approx(pa, abs=1e-12)
    assert c.p_stay_inactive == pytest.approx(pi_, abs=1e-12)
    # detailed balance for a two-state chain
    assert pi * (1 - c.p_stay_active) == pytest.approx((1 - pi) * (1 - c.p_stay_inactive), abs=1e-15)


@pytest.mark.parametrize("pi,lam", [(0.9, -0.9), (0.0, 0.5), (1.0, 0.1), (0.5, 1.0), (0.5, -1.0)])
def test_chain_from_pi_lambda_rejects(pi, lam):
    with pytest.raises(ParameterError):
        av.chain_from_pi_lambda(pi, lam)


def test_chain_rejects_non_probability():
    with pytest.raises(ParameterError):
        chain(1.2, 0.5)
    with pytest.raises(ParameterError):
        chain(float("nan"), 0.5)


def test_matrix_rows_sum_to_one_exactly():
    c = chain(0.37, 0.81)
    assert np.all(c.matrix.sum(axis=1) == 1.0)


# -- stationary law and spectrum --------------------------------------------


@pytest.mark.parametrize("pa,pi_,expected", [(0.5, 0.5, (0.5, 0.5)), (0.99, 0.91, (0.9, 0.1))])
def test_stationary_distribution(pa, pi_, expected):
    c = chain(pa, pi_)
    got = av.stationary_distribution(c)
    assert got == pytest.approx(expected, abs=1e-12)
    assert power_iteration_pi(c) == pytest.approx(expected, abs=1e-9)


def test_flip_chain_has_stationary_law_but_is_not_ergodic():
    c = chain(0.0, 0.0)
    assert av.stationary_distribution(c) == (0.5, 0.5)
    assert not c.is_ergodic


def test_absorbing_chain_raises():
    with pytest.raises(DegenerateChainError):
        av.stationary_distribution(chain(1.0, 1.0))


@pytest.mark.parametrize("pa,pi_,lam", [(0.99, 0.91, 0.90), (0.5, 0.5, 0.0), (1.0, 1.0, 1.0)])
def test_second_eigenvalue(pa, pi_, lam):
    c = chain(pa, pi_)
    assert av.second_eigenvalue(c) == pytest.approx(lam, abs=1e-12)
    ev = sorted(np.linalg.eigvals(c.matrix).real)
    assert ev[0] == pytest.approx(lam, abs=1e-12)


def test_reducible_chain_flagged():
    assert not chain(1.0, 1.0).is_ergodic
    assert chain(0.99, 0.91).is_ergodic


@pytest.mark.parametrize("lam2,expected", [(0.9, 0.95), (0.0, 0.5), (-0.4, 0.7)])
def test_lambda_param(lam2, expected):
    assert av.lambda_param(lam2) == pytest.approx(expected, abs=1e-15)


# -- product chain ------------------------------------------------------------


def three_chains():
    # lambda values 0.95, 0.7, 0.5 <=> lambda_2 values 0.9, 0.4, 0.0
    return [av.chain_from_pi_lambda(0.6, 0.9), av.chain_from_pi_lambda(0.3, 0.4), av.chain_from_pi_lambda(0.5, 0.0)]


def test_product_chain_lambda_is_max():
    assert av.product_chain_lambda(three_chains()) == pytest.approx(0.95, abs=1e-12)


def test_product_chain_lambda_after_exclusion():
    assert av.product_chain_lambda(three_chains(), [False, True, True]) == pytest.approx(0.7, abs=1e-12)


def test_product_chain_lambda_single():
    assert av.product_chain_lambda([av.chain_from_pi_lambda(0.5, 0.2)]) == pytest.approx(0.6)


def test_product_chain_lambda_empty_mask():
    with pytest.raises(ParameterError):
        av.product_chain_lambda(three_chains(), [False, False, False])


def test_kron_oracle_two_chains():
    cs = [av.chain_from_pi_lambda(0.7, 0.9), av.chain_from_pi_lambda(0.2, 0.3)]
    assert av.kron_product_oracle(cs) == pytest.approx(0.95, abs=1e-10)


def test_kron_oracle_single_matches_closed_form():
    c = chain(0.8, 0.6)
    assert av.kron_product_oracle([c]) == pytest.approx(av.lambda_param(av.second_eigenvalue(c)), abs=1e-12)


def test_kron_oracle_iid_chains():
    cs = [av.chain_from_pi_lambda(p, 0.0) for p in (0.2, 0.5, 0.9)]
    assert av.kron_product_oracle(cs) == pytest.approx(0.5, abs=1e-10)


def test_kron_oracle_size_limit():
    with pytest.raises(SizeError):
        av.kron_product_oracle([chain(0.5, 0.5)] * 5)


stay_probs = st.tuples(st.floats(0.02, 0.98), st.floats(0.02, 0.98))


def _feasible(pl):
    pi, lam = pl
    return lam >= 0 or min(pi, 1 - pi) * (1 - lam) + lam >= 0.0025


# (pi_active, lambda_2) pairs whose chain has both stay-probabilities >= 0.0025
chain_params = st.tuples(st.floats(0.05, 0.95), st.floats(-0.95, 0.95)).filter(_feasible)


@given(st.lists(stay_probs, min_size=1, max_size=4))
def test_product_lambda_matches_kron_oracle(params):
    cs = [chain(a, i) for a, i in params]
    assert av.product_chain_lambda(cs) == pytest.approx(av.kron_product_oracle(cs), abs=1e-9)


@given(st.lists(stay_probs, min_size=2, max_size=8))
def test_excluding_most_correlated_never_increases_lambda(params):
    cs = [chain(a, i) for a, i in params]
    full = av.product_chain_lambda(cs)
    mask = np.ones(len(cs), dtype=bool)
    mask[int(np.argmax([abs(c.lambda2) for c in cs]))] = False
    assert av.product_chain_lambda(cs, mask) <= full


@given(chain_params)
def test_roundtrip_pi_and_lambda(params):
    pi, lam = params
    c = av.chain_from_pi_lambda(pi, lam)
    assert abs(av.stationary_distribution(c)[0] - pi) <= 1e-12
    assert abs(av.second_eigenvalue(c) - lam) <= 1e-12


# -- mixing ------------------------------------------------------------------


def test_mixing_deviation_iid_is_zero():
    assert av.mixing_deviation(av.chain_from_pi_lambda(0.3, 0.0), 1) == pytest.approx(0.0, abs=1e-15)


def test_mixing_deviation_one_step():
    # the inactive row carries the largest deviation: |0.09 - 0.9| = 0.81
    c = chain(0.99, 0.91)
    assert av.mixing_deviation(c, 1) == pytest.approx(float(exact_deviation(0.99, 0.91, 1)), rel=1e-12)
    assert av.mixing_deviation(c, 1) == pytest.approx(0.81, rel=1e-12)


def test_mixing_deviation_fifty_steps():
    c = chain(0.99, 0.91)
    expected = float(exact_deviation(0.99, 0.91, 50))
    assert av.mixing_deviation(c, 50) == pytest.approx(expected, rel=1e-10)
    assert av.mixing_deviation(c, 50) == pytest.approx(0.81 * 0.9**49, rel=1e-10)


def test_mixing_deviation_rejects_t0():
    with pytest.raises(ParameterError):
        av.mixing_deviation(chain(0.5, 0.5), 0)


@given(chain_params, st.integers(1, 60))
def test_mixing_geometric_decay(params, t):
    pi, lam = params
    c = av.chain_from_pi_lambda(pi, lam)
    d1 = av.mixing_deviation(c, 1)
    dt = av.mixing_deviation(c, t)
    assert dt <= abs(lam) ** (t - 1) * d1 * (1 + 1e-12) + 1e-300
    if lam >= 0:
        assert av.mixing_deviation(c, t + 1) <= dt * (1 + 1e-12)


# -- J_t -----------------------------------------------------------------------


@pytest.mark.parametrize(
    "t,lam,tp,expected", [(10, 0.95, 1, 10), (1000, 0.5, 1, 11), (5, 0.5, 7, 5)]
)
def test_compute_Jt(t, lam, tp, expected):
    assert av.compute_Jt(t, lam, 1.0, tp, 1.0) == expected


def test_compute_Jt_unclamped_value():
    # ln(400) = 5.9915 and 117 * ln(1/0.95) = 6.0013 > 5.9915 > 116 * ln(1/0.95)
    assert av.compute_Jt(200, 0.95) == 117


def test_compute_Jt_rejects_lambda_one():
    with pytest.raises(ParameterError):
        av.compute_Jt(10, 1.0)


# -- populations ---------------------------------------------------------------


def test_population_availability_classes():
    spec = av.build_population(24, g=0.4, seed=3)
    pis = np.round(spec.pi_active, 12)
    assert np.sum(pis == 0.9) == 12 and np.sum(pis == 0.1) == 12


def test_population_correlated_class():
    spec = av.build_population(24, nu=0.9, seed=3)
    assert np.sum(np.isclose(spec.lambda2, 0.9, atol=1e-12)) == 12
    weak = [c.chain.lambda2 for c in spec.clients if c.correlation_class == "weak"]
    assert len(weak) == 12 and max(abs(w) for w in weak) < 0.1


def test_population_zero_gap_is_all_half():
    spec = av.build_population(4, g=0.0, seed=0)
    assert np.allclose(spec.pi_active, 0.5)


def test_population_cells_partition():
    spec = av.build_population(24, seed=11)
    cells = {}
    for c in spec.clients:
        key = (c.group_id, c.availability_class, c.correlation_class)
        cells[key] = cells.get(key, 0) + 1
    assert len(cells) == 8 and set(cells.values()) == {3}
    assert np.sum(spec.group_ids == 1) == 12


def test_population_uneven_split_goes_to_first_class():
    spec = av.build_population(5, seed=0)
    assert np.sum(spec.group_ids == 1) == 3
    g1 = [c for c in spec.clients if c.group_id == 1]
    assert sum(c.availability_class == "more" for c in g1) == 2


def test_population_is_seeded():
    a, b = av.build_population(24, seed=5), av.build_population(24, seed=5)
    assert a.to_dict() == b.to_dict()
    assert a.to_dict() != av.build_population(24, seed=6).to_dict()


@pytest.mark.parametrize("kw", [{"g": 0.5}, {"g": -0.1}, {"nu": 1.0}, {"eps": -1.0}, {"n": 0}])
def test_population_rejects_bad_params(kw):
    args = {"n": 8, **kw}
    with pytest.raises(ParameterError):
        av.build_population(**args)


def test_population_json_roundtrip():
    spec = av.build_population(10, seed=2)
    back = av.PopulationSpec.from_dict(spec.to_dict())
    assert back == spec


# -- traces ----------------------------------------------------------------------


def test_trace_is_reproducible():
    spec = av.build_population(12, seed=1)
    assert av.sample_trace(spec, 200, 9) == av.sample_trace(spec, 200, 9)
    assert av.sample_trace(spec, 200, 9) != av.sample_trace(spec, 200, 10)


def test_trace_client_streams_are_independent_of_population_size():
    cs = [av.chain_from_pi_lambda(0.4, 0.5), av.chain_from_pi_lambda(0.8, 0.2)]
    full = av.sample_chains(cs, 100, 4)
    alone = av.sample_chains(cs[:1], 100, 4)
    assert np.array_equal(full.active[:, 0], alone.active[:, 0])


def test_always_active_test_mode():
    tr = av.sample_chains([chain(1.0, 0.3)], 50, 0, allow_degenerate=True)
    assert tr.active.all()
    with pytest.raises(DegenerateChainError):
        av.sample_chains([chain(1.0, 0.3)], 50, 0)


def test_trace_long_run_frequency():
    c = av.chain_from_pi_lambda(0.9, 0.9)
    tr = av.sample_chains([c], 100_000, 0)
    assert tr.active.mean() == pytest.approx(0.9, abs=0.01)


def test_trace_persistence_frequency():
    c = av.chain_from_pi_lambda(0.9, 0.9)
    a = av.sample_chains([c], 100_000, 1).active[:, 0]
    stay = np.sum(a[1:] & a[:-1]) / np.sum(a[:-1])
    assert stay == pytest.approx(0.99, abs=0.005)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_trace_frequency_within_three_standard_errors(seed):
    rng = np.random.default_rng(seed)
    pi, lam = rng.uniform(0.1, 0.9), rng.uniform(-0.5, 0.9)
    a = av.sample_chains([av.chain_from_pi_lambda(pi, lam)], 100_000, seed).active[:, 0]
    # asymptotic variance of the time average of a two-state chain
    se = math.sqrt(pi * (1 - pi) * (1 + lam) / (1 - lam) / a.size)
    assert abs(a.mean() - pi) <= 3 * se


def test_trace_json_roundtrip():
    tr = av.sample_trace(av.build_population(7, seed=0), 30, 0)
    d = tr.to_dict()
    assert all(set(r) <= {"0", "1"} for r in d["rows"])
    assert av.AvailabilityTrace.from_dict(d) == tr


def test_trace_from_dict_rejects_malformed():
    with pytest.raises(ParameterError):
        av.AvailabilityTrace.from_dict({"n_rounds": 1, "n_clients": 2, "rows": ["0x"]})
