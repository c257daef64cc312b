"""Two-state client availability chains and their product-chain spectra.

Every client alternates between *active* and *inactive* according to an
independent, time-homogeneous two-state Markov chain.  A chain is fully
described by the probabilities of staying in each state; its stationary
active-probability and second eigenvalue follow in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DegenerateChainError, ParameterError, SizeError

ACTIVE, INACTIVE = "active", "inactive"


@dataclass(frozen=True)
class ClientChain:
    """Transition law of one client.

    The implied transition matrix (state order: active, inactive) is::

        [[p_stay_active,       1 - p_stay_active  ],
         [1 - p_stay_inactive, p_stay_inactive    ]]

    Construction only checks that both entries are probabilities.  Whether the
    chain is fit for training is reported by :attr:`is_ergodic`; populations
    and trace sampling refuse non-ergodic chains unless explicitly allowed.
    """

    p_stay_active: float
    p_stay_inactive: float

    def __post_init__(self):
        for name in ("p_stay_active", "p_stay_inactive"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0) or math.isnan(v):
                raise ParameterError(f"{name}={v} is not a probability")

    @property
    def matrix(self) -> np.ndarray:
        a, i = self.p_stay_active, self.p_stay_inactive
        return np.array([[a, 1.0 - a], [1.0 - i, i]])

    @property
    def is_ergodic(self) -> bool:
        # irreducible: neither state absorbing; aperiodic: not the 0/0 flip chain
        irreducible = self.p_stay_active < 1.0 and self.p_stay_inactive < 1.0
        aperiodic = self.p_stay_active > 0.0 or self.p_stay_inactive > 0.0
        return irreducible and aperiodic

    @property
    def pi_active(self) -> float:
        return stationary_distribution(self)[0]

    @property
    def lambda2(self) -> float:
        return second_eigenvalue(self)

    def to_dict(self) -> dict:
        return {"p_stay_active": self.p_stay_active, "p_stay_inactive": self.p_stay_inactive}

    @classmethod
    def from_dict(cls, d: dict) -> "ClientChain":
        return cls(float(d["p_stay_active"]), float(d["p_stay_inactive"]))


def chain_from_pi_lambda(pi_active: float, lambda2: float) -> ClientChain:
    """Build the unique two-state chain with the given stationary law and spectrum."""
    if not 0.0 < pi_active < 1.0:
        raise ParameterError(f"pi_active={pi_active} must lie in (0, 1)")
    if not -1.0 < lambda2 < 1.0:
        raise ParameterError(f"lambda2={lambda2} must lie in (-1, 1)")
    p_a = lambda2 + (1.0 - lambda2) * pi_active
    p_i = lambda2 + (1.0 - lambda2) * (1.0 - pi_active)
    if not (0.0 <= p_a <= 1.0 and 0.0 <= p_i <= 1.0):
        raise ParameterError(
            f"(pi_active={pi_active}, lambda2={lambda2}) gives transition "
            f"probabilities ({p_a}, {p_i}) outside [0, 1]"
        )
    return ClientChain(p_a, p_i)


def stationary_distribution(chain: ClientChain) -> tuple[float, float]:
    """Return ``(pi_active, pi_inactive)``.

    Raises :class:`DegenerateChainError` when both states are absorbing, the
    only two-state case without a unique stationary law.  The periodic flip
    chain (both stay-probabilities zero) still has the stationary law (1/2, 1/2).
    """
    leave_a = 1.0 - chain.p_stay_active
    leave_i = 1.0 - chain.p_stay_inactive
    denom = leave_a + leave_i
    if denom == 0.0:
        raise DegenerateChainError("both states absorbing: stationary law is not unique")
    pi_a = leave_i / denom
    return pi_a, leave_a / denom


def second_eigenvalue(chain: ClientChain) -> float:
    """lambda_2 = trace - 1 for a 2x2 stochastic matrix (signed)."""
    return chain.p_stay_active + chain.p_stay_inactive - 1.0


def lambda_param(lambda2: float) -> float:
    """Correlation parameter (|lambda_2| + 1) / 2 governing the mixing bound."""
    return (abs(lambda2) + 1.0) / 2.0


def product_chain_lambda(chains: Sequence[ClientChain], included=None) -> float:
    """lambda of the Kronecker product of the included chains.

    The spectrum of a Kronecker product is the set of pairwise products, so the
    largest non-unit modulus is the largest |lambda_2| among the factors.
    """
    if included is None:
        included = np.ones(len(chains), dtype=bool)
    included = np.asarray(included, dtype=bool)
    if included.shape != (len(chains),):
        raise ParameterError("mask length does not match number of chains")
    if not included.any():
        raise ParameterError("at least one chain must be included")
    return max(lambda_param(second_eigenvalue(c)) for c, m in zip(chains, included) if m)


def kron_product_oracle(chains: Sequence[ClientChain], max_n: int = 4) -> float:
    """Brute-force check of :func:`product_chain_lambda` via a dense eigensolve."""
    n = len(chains)
    if n == 0:
        raise ParameterError("need at least one chain")
    if n > max_n:
        raise SizeError(f"{n} chains exceed the brute-force limit of {max_n}")
    big = np.ones((1, 1))
    for c in chains:
        big = np.kron(big, c.matrix)
    moduli = np.sort(np.abs(np.linalg.eigvals(big)))[::-1]
    lam2 = moduli[1] if moduli.size > 1 else 0.0
    return (lam2 + 1.0) / 2.0


def mixing_deviation(chain: ClientChain, t: int) -> float:
    """max_{i,j} |[P^t]_{ij} - pi_j| for t >= 1.

    Computed as the t-th power of the deviation matrix ``P - 1 pi``, which
    equals ``P^t - 1 pi`` for every t >= 1.  The deviation matrix is formed
    in its factored form ``lambda_2 * [[pi_i, -pi_i], [-pi_a, pi_a]]`` so that
    its entries keep full relative precision even when ``lambda_2`` is tiny;
    subtracting ``pi`` from ``P`` would leave an absolute error floor of
    about 1e-16.
    """
    if t < 1:
        raise ParameterError("t must be >= 1")
    pi_a, pi_i = stationary_distribution(chain)
    dev = second_eigenvalue(chain) * np.array([[pi_i, -pi_i], [-pi_a, pi_a]])
    return float(np.max(np.abs(np.linalg.matrix_power(dev, t))))


def compute_Jt(t: int, lambda_p: float, c_p: float = 1.0, t_p: int = 1, h: float = 1.0) -> int:
    """Mixing lag min{max{ceil(ln(2 C_P H t) / ln(1/lambda)), T_P}, t}."""
    if not 0.0 < lambda_p < 1.0:
        raise ParameterError(f"lambda_p={lambda_p} must lie in (0, 1)")
    if t < 1:
        raise ParameterError("t must be >= 1")
    lag = math.ceil(math.log(2.0 * c_p * h * t) / math.log(1.0 / lambda_p))
    return int(min(max(lag, t_p), t))


@dataclass(frozen=True)
class ClientProfile:
    group_id: int
    availability_class: str  # "more" | "less"
    correlation_class: str  # "correlated" | "weak"
    chain: ClientChain

    def to_dict(self) -> dict:
        return {
            "group_id": self.group_id,
            "availability_class": self.availability_class,
            "correlation_class": self.correlation_class,
            "chain": self.chain.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClientProfile":
        return cls(
            int(d["group_id"]),
            str(d["availability_class"]),
            str(d["correlation_class"]),
            ClientChain.from_dict(d["chain"]),
        )


@dataclass(frozen=True)
class PopulationSpec:
    clients: tuple[ClientProfile, ...]
    params: dict = field(default_factory=dict)

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def chains(self) -> list[ClientChain]:
        return [c.chain for c in self.clients]

    @property
    def group_ids(self) -> np.ndarray:
        return np.array([c.group_id for c in self.clients], dtype=np.int64)

    @property
    def pi_active(self) -> np.ndarray:
        return np.array([c.chain.pi_active for c in self.clients])

    @property
    def lambda2(self) -> np.ndarray:
        return np.array([c.chain.lambda2 for c in self.clients])

    def to_dict(self) -> dict:
        return {
            "n_clients": self.n_clients,
            "params": dict(self.params),
            "clients": [c.to_dict() for c in self.clients],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationSpec":
        clients = tuple(ClientProfile.from_dict(c) for c in d["clients"])
        if int(d.get("n_clients", len(clients))) != len(clients):
            raise ParameterError("n_clients does not match the number of client entries")
        return cls(clients, dict(d.get("params", {})))


def _split(n: int) -> tuple[int, int]:
    # floor for the second part, remainder to the first
    second = n // 2
    return n - second, second


def build_population(
    n: int,
    g: float = 0.4,
    nu: float = 0.9,
    eps: float = 1e-2,
    seed: int = 0,
) -> PopulationSpec:
    """Two data groups x two availability classes x two correlation classes.

    Clients are shuffled under ``seed`` and dealt into the eight cells.
    "More available" clients have pi_active = 1/2 + g, "less available"
    1/2 - g; "correlated" clients have lambda_2 = nu, "weak" ones draw
    lambda_2 from N(0, eps^2) clamped into (-1, 1).  When a level cannot be
    split evenly the first class gets the extra client.
    """
    if n < 1:
        raise ParameterError("n must be positive")
    if not 0.0 <= g < 0.5:
        raise ParameterError(f"g={g} must lie in [0, 1/2)")
    if not -1.0 < nu < 1.0:
        raise ParameterError(f"nu={nu} must lie in (-1, 1)")
    if eps < 0:
        raise ParameterError("eps must be non-negative")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA5A1]))
    order = rng.permutation(n)
    bound = np.nextafter(1.0, 0.0)

    cells = []
    groups = _split(n)
    for gi, n_group in enumerate(groups, start=1):
        for avail, n_avail in zip(("more", "less"), _split(n_group)):
            for corr, n_corr in zip(("correlated", "weak"), _split(n_avail)):
                cells.extend([(gi, avail, corr)] * n_corr)

    profiles: list[ClientProfile | None] = [None] * n
    for slot, client in enumerate(order):
        gi, avail, corr = cells[slot]
        pi_a = 0.5 + g if avail == "more" else 0.5 - g
        if corr == "correlated":
            lam = nu
        else:
            lam = float(np.clip(rng.normal(0.0, eps), -bound, bound))
        profiles[client] = ClientProfile(gi, avail, corr, chain_from_pi_lambda(pi_a, lam))
    params = {"n": n, "g": g, "nu": nu, "eps": eps, "seed": seed}
    return PopulationSpec(tuple(profiles), params)


@dataclass(frozen=True)
class AvailabilityTrace:
    """Boolean (n_rounds, n_clients) matrix; row t is the active set A_t."""

    active: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.active, dtype=bool)
        if a.ndim != 2:
            raise ParameterError("trace must be two-dimensional")
        object.__setattr__(self, "active", a)

    @property
    def n_rounds(self) -> int:
        return self.active.shape[0]

    @property
    def n_clients(self) -> int:
        return self.active.shape[1]

    def __getitem__(self, t: int) -> np.ndarray:
        return self.active[t]

    def __eq__(self, other) -> bool:
        return isinstance(other, AvailabilityTrace) and np.array_equal(self.active, other.active)

    def to_dict(self) -> dict:
        rows = ["".join("1" if b else "0" for b in row) for row in self.active]
        return {"n_rounds": self.n_rounds, "n_clients": self.n_clients, "rows": rows}

    @classmethod
    def from_dict(cls, d: dict) -> "AvailabilityTrace":
        n_rounds, n_clients = int(d["n_rounds"]), int(d["n_clients"])
        arr = np.zeros((n_rounds, n_clients), dtype=bool)
        rows = d["rows"]
        if len(rows) != n_rounds:
            raise ParameterError("row count does not match n_rounds")
        for t, row in enumerate(rows):
            if len(row) != n_clients or set(row) - {"0", "1"}:
                raise ParameterError(f"malformed trace row {t}")
            arr[t] = np.frombuffer(row.encode(), dtype=np.uint8) == ord("1")
        return cls(arr)


def client_uniforms(n_rounds: int, n_clients: int, seed: int) -> np.ndarray:
    """Per-client uniform streams, each derived only from (seed, client id)."""
    u = np.empty((n_rounds, n_clients))
    for k in range(n_clients):
        u[:, k] = np.random.default_rng([seed, k]).random(n_rounds)
    return u


def sample_chains(
    chains: Sequence[ClientChain],
    n_rounds: int,
    seed: int,
    allow_degenerate: bool = False,
) -> AvailabilityTrace:
    """Sample independent trajectories; initial states are stationary draws."""
    if n_rounds < 0:
        raise ParameterError("n_rounds must be non-negative")
    if not allow_degenerate:
        bad = [k for k, c in enumerate(chains) if not c.is_ergodic]
        if bad:
            raise DegenerateChainError(f"non-ergodic chains for clients {bad}")
    p_a = np.array([c.p_stay_active for c in chains], dtype=float)
    p_i = np.array([c.p_stay_inactive for c in chains], dtype=float)
    pi_a = np.empty(len(chains))
    for k, c in enumerate(chains):
        try:
            pi_a[k] = stationary_distribution(c)[0]
        except DegenerateChainError:
            # only reachable with allow_degenerate: start active
            pi_a[k] = 1.0
    u = client_uniforms(n_rounds, len(chains), seed)
    return AvailabilityTrace(kernels.markov_walk(u, p_a, p_i, pi_a))


def sample_trace(
    spec: PopulationSpec, n_rounds: int, seed: int, allow_degenerate: bool = False
) -> AvailabilityTrace:
    return sample_chains(spec.chains, n_rounds, seed, allow_degenerate=allow_degenerate)
