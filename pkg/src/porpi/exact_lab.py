"""Tabular preference iteration over internal coverings of small POMDPs.

Implements the exact backup operator, its synchronous and asynchronous
sampled counterparts, softmax policies, covering-projected policy
evaluation, a dense belief-grid value-iteration oracle, and the closed-form
convergence bounds used to check the schemes against theory.
"""
from __future__ import annotations

import itertools
import math
import time

import numpy as np

from .environments.discrete import DiscretePomdp

_PROB_TOL = 1e-14


class BudgetExceededError(Exception):
    """Reachable-belief enumeration outgrew its node budget."""


class NumericError(Exception):
    """Fixed-point iteration failed to converge."""


def d1(x: np.ndarray, y: np.ndarray) -> float:
    """1-norm distance between belief vectors."""
    return float(np.sum(np.abs(np.asarray(x) - np.asarray(y))))


def enumerate_reachable_beliefs(
    model: DiscretePomdp,
    horizon: int,
    dedup_tol: float = 1e-10,
    node_budget: int = 10**6,
) -> list:
    """BFS over exact belief updates from b0, to the given depth, keeping
    one representative per 1-norm ball of radius ``dedup_tol``."""
    b0 = model.initial_belief.copy()
    kept = [b0]
    stack = np.array([b0])
    frontier = [b0]
    expanded = 0
    for _ in range(horizon):
        new_frontier = []
        for b in frontier:
            for a in range(model.n_actions):
                probs = model.obs_probs(b, a)
                for o in range(model.n_observations):
                    if probs[o] <= _PROB_TOL:
                        continue
                    expanded += 1
                    if expanded > node_budget:
                        raise BudgetExceededError(
                            f"belief enumeration exceeded {node_budget} expansions"
                        )
                    nb = model.tau(b, a, o)
                    if np.min(np.abs(stack - nb).sum(axis=1)) > dedup_tol:
                        kept.append(nb)
                        stack = np.vstack([stack, nb])
                        new_frontier.append(nb)
        if not new_frontier:
            break
        frontier = new_frontier
    return kept


def default_horizon(model: DiscretePomdp, tail_fraction: float = 0.01) -> int:
    """Depth at which gamma^H Vmax drops below tail_fraction * Vmax."""
    return max(1, math.ceil(math.log(tail_fraction) / math.log(model.discount)))


class CoveringSet:
    """Well-ordered set of beliefs acting simultaneously as a 1-norm
    delta-packing and an internal delta-covering of its source set."""

    def __init__(self, beliefs, delta: float) -> None:
        self.beliefs = np.asarray(beliefs, dtype=float)
        if self.beliefs.ndim != 2 or len(self.beliefs) == 0:
            raise ValueError("covering needs a nonempty 2-D belief array")
        self.delta = float(delta)
        self._dynamics: dict = {}

    def __len__(self) -> int:
        return len(self.beliefs)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.beliefs[i]

    def project(self, b) -> tuple:
        """(index, distance) of the nearest member; ties break to the
        lowest index by the well-ordering."""
        dists = np.abs(self.beliefs - np.asarray(b)).sum(axis=1)
        idx = int(np.argmin(dists))
        return idx, float(dists[idx])


def build_internal_covering(beliefs, delta: float) -> CoveringSet:
    """Greedy farthest-point pass in enumeration order: keep a belief iff it
    is strictly more than delta from everything kept so far."""
    kept = []
    for b in beliefs:
        b = np.asarray(b, dtype=float)
        if not kept or min(d1(b, k) for k in kept) > delta:
            kept.append(b)
    return CoveringSet(np.array(kept), delta)


def nearest_belief(cover: CoveringSet, b, a: int, o: int, model: DiscretePomdp) -> int:
    """Index of the covering member closest (1-norm) to tau(b, a, o)."""
    return cover.project(model.tau(b, a, o))[0]


class _CoverDynamics:
    """Exact rewards, observation probabilities and covering projections for
    every (member, action) pair; computed once per (cover, model)."""

    def __init__(self, cover: CoveringSet, model: DiscretePomdp) -> None:
        nb = len(cover)
        na = model.n_actions
        no = model.n_observations
        self.rewards = cover.beliefs @ model.reward_table
        self.obs_probs = np.zeros((nb, na, no))
        self.proj = np.zeros((nb, na, no), dtype=int)
        for i in range(nb):
            b = cover.beliefs[i]
            for a in range(na):
                probs = model.obs_probs(b, a)
                self.obs_probs[i, a] = probs
                for o in range(no):
                    if probs[o] > _PROB_TOL:
                        self.proj[i, a, o] = cover.project(model.tau(b, a, o))[0]
                    else:
                        self.proj[i, a, o] = -1
        self.mask = self.obs_probs > _PROB_TOL


def cover_dynamics(cover: CoveringSet, model: DiscretePomdp) -> _CoverDynamics:
    dyn = cover._dynamics.get(id(model))
    if dyn is None:
        dyn = _CoverDynamics(cover, model)
        cover._dynamics[id(model)] = dyn
    return dyn


class PreferenceTable:
    """Preference values over cover x actions plus the pooled Monte-Carlo
    sample counts the sampled schemes accumulate."""

    def __init__(
        self,
        values: np.ndarray,
        k: int = 0,
        visits: np.ndarray | None = None,
        state_counts: np.ndarray | None = None,
        proj_counts: np.ndarray | None = None,
        vmax: float | None = None,
    ) -> None:
        self.values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("preferences must be finite")
        if vmax is not None and np.max(np.abs(self.values)) > vmax + 1e-12:
            raise ValueError("initial preferences must satisfy sup-norm <= vmax")
        self.k = k
        nb, na = self.values.shape
        self.visits = visits if visits is not None else np.zeros((nb, na), dtype=int)
        self.state_counts = state_counts
        self.proj_counts = proj_counts

    @staticmethod
    def zeros(cover: CoveringSet, model: DiscretePomdp) -> "PreferenceTable":
        nb, na = len(cover), model.n_actions
        return PreferenceTable(
            np.zeros((nb, na)),
            visits=np.zeros((nb, na), dtype=int),
            state_counts=np.zeros((nb, na, model.n_states), dtype=int),
            proj_counts=np.zeros((nb, na, nb), dtype=int),
            vmax=model.vmax,
        )

    def copy(self) -> "PreferenceTable":
        return PreferenceTable(
            self.values.copy(),
            k=self.k,
            visits=self.visits.copy(),
            state_counts=None if self.state_counts is None else self.state_counts.copy(),
            proj_counts=None if self.proj_counts is None else self.proj_counts.copy(),
        )


def lse_rows(values: np.ndarray, eta: float) -> np.ndarray:
    """Row-wise (1/eta) log sum exp(eta * v), max-shift stabilised."""
    a = eta * values
    m = a.max(axis=-1, keepdims=True)
    return ((m + np.log(np.exp(a - m).sum(axis=-1, keepdims=True))) / eta)[..., 0]


def exact_dpp_backup(
    table: PreferenceTable, cover: CoveringSet, model: DiscretePomdp, eta: float
) -> PreferenceTable:
    """One exact sweep: psi' = psi - L(psi) + R + gamma * E_o[L(psi)(proj)],
    with every expectation summed exactly."""
    dyn = cover_dynamics(cover, model)
    L = lse_rows(table.values, eta)
    l_proj = np.where(dyn.mask, L[dyn.proj], 0.0)
    next_term = (dyn.obs_probs * l_proj).sum(axis=2)
    new_values = table.values - L[:, None] + dyn.rewards + model.discount * next_term
    return PreferenceTable(
        new_values,
        k=table.k + 1,
        visits=table.visits.copy(),
        state_counts=None if table.state_counts is None else table.state_counts.copy(),
        proj_counts=None if table.proj_counts is None else table.proj_counts.copy(),
    )


def _sampled_terms(
    table: PreferenceTable, dyn: _CoverDynamics, model: DiscretePomdp,
    i: int, a: int, L: np.ndarray,
) -> tuple:
    n = table.state_counts[i, a].sum()
    m = table.proj_counts[i, a].sum()
    reward = float(table.state_counts[i, a] @ model.reward_table[:, a]) / n
    next_val = float(table.proj_counts[i, a] @ L) / m
    return reward, next_val


def _extend_pools(
    table: PreferenceTable, dyn: _CoverDynamics, model: DiscretePomdp,
    cover: CoveringSet, i: int, a: int, n_target: int, m_target: int,
    rng: np.random.Generator,
) -> None:
    have_n = int(table.state_counts[i, a].sum())
    if n_target > have_n:
        table.state_counts[i, a] += rng.multinomial(
            n_target - have_n, cover.beliefs[i]
        )
    have_m = int(table.proj_counts[i, a].sum())
    if m_target > have_m:
        draws = rng.multinomial(m_target - have_m, dyn.obs_probs[i, a])
        for o, cnt in enumerate(draws):
            if cnt:
                table.proj_counts[i, a, dyn.proj[i, a, o]] += cnt


def synchronous_update(
    table: PreferenceTable,
    cover: CoveringSet,
    model: DiscretePomdp,
    eta: float,
    n_k: int | None = None,
    m_k: int | None = None,
    rng: np.random.Generator | None = None,
) -> PreferenceTable:
    """One synchronous sweep. With ``n_k``/``m_k`` set, every pair's reward
    and next-value expectations are replaced by Monte-Carlo means over
    sample pools grown to those sizes (samples are reused across sweeps);
    with both None the exact sums are used, reproducing the exact backup
    bit for bit."""
    if n_k is None and m_k is None:
        return exact_dpp_backup(table, cover, model, eta)
    if rng is None:
        raise ValueError("sampled synchronous update needs an rng")
    n_k = int(n_k if n_k is not None else m_k)
    m_k = int(m_k if m_k is not None else n_k)
    dyn = cover_dynamics(cover, model)
    new = table.copy()
    L = lse_rows(table.values, eta)
    nb, na = table.values.shape
    gamma = model.discount
    for i in range(nb):
        for a in range(na):
            _extend_pools(new, dyn, model, cover, i, a, n_k, m_k, rng)
            reward, next_val = _sampled_terms(new, dyn, model, i, a, L)
            new.values[i, a] = table.values[i, a] - L[i] + reward + gamma * next_val
            new.visits[i, a] += 1
    new.k = table.k + 1
    return new


def asynchronous_update(
    table: PreferenceTable,
    cover: CoveringSet,
    model: DiscretePomdp,
    eta: float,
    pair: tuple,
    rng: np.random.Generator,
) -> PreferenceTable:
    """Visit one (belief, action) pair: grow its pools by one sample each so
    the pool size equals its cumulative visit count, then update that entry
    alone."""
    i, a = pair
    dyn = cover_dynamics(cover, model)
    new = table.copy()
    new.visits[i, a] += 1
    n = int(new.visits[i, a])
    _extend_pools(new, dyn, model, cover, i, a, n, n, rng)
    L = lse_rows(table.values, eta)
    reward, next_val = _sampled_terms(new, dyn, model, i, a, L)
    new.values[i, a] = table.values[i, a] - L[i] + reward + model.discount * next_val
    new.k = table.k + 1
    return new


def policy_from_prefs(table_or_values, eta: float) -> np.ndarray:
    """Row-wise softmax policy; each row sums to 1."""
    values = table_or_values.values if isinstance(table_or_values, PreferenceTable) else table_or_values
    a = eta * np.asarray(values, dtype=float)
    a = a - a.max(axis=1, keepdims=True)
    w = np.exp(a)
    return w / w.sum(axis=1, keepdims=True)


def evaluate_policy_on_cover(
    policy: np.ndarray,
    cover: CoveringSet,
    model: DiscretePomdp,
    gamma: float | None = None,
    tol: float = 1e-10,
    max_iter: int = 200000,
) -> np.ndarray:
    """Fixed point of the covering-projected policy evaluation recursion:
    Q(b,a) = R(b,a) + gamma * sum_o P(o|a,b) * V_pi(proj(b,a,o))."""
    if gamma is None:
        gamma = model.discount
    dyn = cover_dynamics(cover, model)
    nb, na = dyn.rewards.shape
    q = np.zeros((nb, na))
    for _ in range(max_iter):
        v_pol = (policy * q).sum(axis=1)
        v_proj = np.where(dyn.mask, v_pol[dyn.proj], 0.0)
        q_new = dyn.rewards + gamma * (dyn.obs_probs * v_proj).sum(axis=2)
        if np.max(np.abs(q_new - q)) <= tol:
            return q_new
        q = q_new
    raise NumericError(f"policy evaluation did not reach {tol} in {max_iter} sweeps")


# -- dense-grid oracle ------------------------------------------------------

def simplex_grid(n_states: int, resolution: float) -> np.ndarray:
    """Regular grid over the probability simplex with the given spacing."""
    n = round(1.0 / resolution)
    pts = []
    for comp in itertools.combinations_with_replacement(range(n_states), n):
        counts = np.bincount(comp, minlength=n_states)
        pts.append(counts / n)
    return np.array(sorted({tuple(p) for p in pts}))


class BeliefGridOracle:
    """Q* from value iteration over a dense regular belief grid."""

    def __init__(self, grid: np.ndarray, q: np.ndarray) -> None:
        self.grid = grid
        self.q = q
        self.v = q.max(axis=1)

    def nearest(self, b) -> int:
        return int(np.argmin(np.abs(self.grid - np.asarray(b)).sum(axis=1)))

    def q_at(self, b) -> np.ndarray:
        return self.q[self.nearest(b)]

    def value_at(self, b) -> float:
        return float(self.v[self.nearest(b)])

    def q_on(self, beliefs) -> np.ndarray:
        return np.array([self.q_at(b) for b in beliefs])


def oracle_qstar(
    model: DiscretePomdp,
    resolution: float | None = None,
    tol: float = 1e-10,
    max_iter: int = 200000,
) -> BeliefGridOracle:
    """Brute-force ground truth: value iteration on the belief MDP
    discretised to a regular simplex grid (spacing 0.01 for two states,
    0.05 for three)."""
    if model.n_states > 4:
        raise ValueError("oracle is intended for models with at most 4 states")
    if resolution is None:
        resolution = 0.01 if model.n_states == 2 else 0.05
    grid = simplex_grid(model.n_states, resolution)
    g = len(grid)
    na = model.n_actions
    no = model.n_observations
    rewards = grid @ model.reward_table
    obs_probs = np.zeros((g, na, no))
    proj = np.zeros((g, na, no), dtype=int)
    for i in range(g):
        for a in range(na):
            probs = model.obs_probs(grid[i], a)
            obs_probs[i, a] = probs
            for o in range(no):
                if probs[o] > _PROB_TOL:
                    nb = model.tau(grid[i], a, o)
                    proj[i, a, o] = int(np.argmin(np.abs(grid - nb).sum(axis=1)))
                else:
                    proj[i, a, o] = -1
    mask = obs_probs > _PROB_TOL
    gamma = model.discount
    v = np.zeros(g)
    for _ in range(max_iter):
        v_proj = np.where(mask, v[proj], 0.0)
        q = rewards + gamma * (obs_probs * v_proj).sum(axis=2)
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) <= tol:
            return BeliefGridOracle(grid, q)
        v = v_new
    raise NumericError(f"oracle value iteration did not reach {tol} in {max_iter} sweeps")


# -- closed-form bounds -----------------------------------------------------

def _check_common(gamma: float, eta: float, n_actions: int, vmax: float) -> None:
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must be strictly inside (0, 1)")
    if eta <= 0:
        raise ValueError("eta must be > 0")
    if n_actions < 1:
        raise ValueError("need at least one action")
    if vmax <= 0:
        raise ValueError("vmax must be positive")


def theorem1_bound(
    k: int,
    gamma: float,
    eta: float,
    n_actions: int,
    vmax: float,
    e_sup_sequence=None,
) -> float:
    """Performance-loss bound of the iterative scheme after k steps, driven
    by the discounted average of the cumulative approximation errors
    ||E_j||_inf (all zero for the exact scheme)."""
    _check_common(gamma, eta, n_actions, vmax)
    if k < 0:
        raise ValueError("k must be >= 0")
    err_sum = 0.0
    if e_sup_sequence is not None:
        seq = list(e_sup_sequence)
        if len(seq) < k + 1:
            raise ValueError("need ||E_j|| for every j <= k")
        err_sum = sum(gamma ** (k - j) * seq[j] for j in range(k + 1))
    lead = 2.0 / ((1.0 - gamma) * (k + 1))
    inner = gamma * (4.0 * vmax + math.log(n_actions) / eta) / (1.0 - gamma)
    return lead * (inner + err_sum)


def theorem2_constants(
    gamma: float, eta: float, n_actions: int, vmax: float, n_cover: int, alpha: float
) -> tuple:
    """K1 and K2 of the high-probability bound for the sampled schemes."""
    _check_common(gamma, eta, n_actions, vmax)
    if n_cover < 1:
        raise ValueError("covering number must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be strictly inside (0, 1)")
    log_a = math.log(n_actions)
    k1 = (2.0 * gamma / (1.0 - gamma) ** 2) * (log_a / eta + 4.0 * vmax)
    k2 = (
        4.0 * gamma * log_a / (eta * (1.0 - gamma) ** 3)
        + 2.0 * vmax / (1.0 - gamma)
    ) * math.sqrt(2.0 * math.log(2.0 * n_actions * n_cover / alpha))
    return k1, k2


def theorem2_bound(
    k: int,
    gamma: float,
    eta: float,
    n_actions: int,
    vmax: float,
    delta: float,
    n_cover: int,
    alpha: float,
    kappa_k: int | None = None,
) -> float:
    """High-probability error bound after k synchronous sweeps (or kappa_k
    asynchronous visits of the tracked pairs): K1/(k+1) + K2/sqrt(k+1) +
    gamma * delta * vmax / (1 - gamma)."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    k1, k2 = theorem2_constants(gamma, eta, n_actions, vmax, n_cover, alpha)
    steps = k if kappa_k is None else kappa_k
    if steps < 0:
        raise ValueError("iteration count must be >= 0")
    return (
        k1 / (steps + 1)
        + k2 / math.sqrt(steps + 1)
        + gamma * delta * vmax / (1.0 - gamma)
    )


def theorem_bounds(
    k: int,
    kappa_k: int | None,
    gamma: float,
    eta: float,
    n_actions: int,
    vmax: float,
    delta: float,
    n_cover: int,
    alpha: float,
    e_sup_sequence=None,
) -> tuple:
    """(iterative-scheme bound, high-probability sampled bound)."""
    t1 = theorem1_bound(k, gamma, eta, n_actions, vmax, e_sup_sequence)
    t2 = theorem2_bound(k, gamma, eta, n_actions, vmax, delta, n_cover, alpha, kappa_k)
    return t1, t2


class ErrorLedger:
    """Tracks per-iteration deviations eps_k = psi_k - exact_backup(psi_{k-1})
    and their running sums E_k, in sup norm."""

    def __init__(self, shape: tuple) -> None:
        self._cum = np.zeros(shape)
        self.eps_sup = [0.0]
        self.e_sup = [0.0]

    def record(self, new_values: np.ndarray, exact_values: np.ndarray) -> None:
        eps = np.asarray(new_values) - np.asarray(exact_values)
        self._cum += eps
        self.eps_sup.append(float(np.max(np.abs(eps))))
        self.e_sup.append(float(np.max(np.abs(self._cum))))


# -- convergence studies ------------------------------------------------------

def convergence_run(
    model: DiscretePomdp,
    delta: float,
    eta: float,
    k_max: int,
    scheme: str = "exact",
    rng: np.random.Generator | None = None,
    horizon: int | None = None,
    oracle_resolution: float | None = None,
    alpha: float = 0.05,
    eval_every: int = 1,
    track_errors: bool = False,
) -> list:
    """Iterate a scheme against the dense-grid oracle; one row per evaluated
    k with the measured sup-norm error and both closed-form bounds."""
    if horizon is None:
        horizon = default_horizon(model)
    if rng is None:
        rng = np.random.default_rng(0)
    reachable = enumerate_reachable_beliefs(model, horizon)
    cover = build_internal_covering(reachable, delta)
    oracle = oracle_qstar(model, oracle_resolution)
    q_star = oracle.q_on(cover.beliefs)
    table = PreferenceTable.zeros(cover, model)
    ledger = ErrorLedger(table.values.shape) if track_errors else None
    vmax = model.vmax
    n_actions = model.n_actions
    gamma = model.discount
    rows = []
    start = time.perf_counter()

    def evaluate(k: int, tbl: PreferenceTable) -> None:
        policy = policy_from_prefs(tbl, eta)
        q_pi = evaluate_policy_on_cover(policy, cover, model)
        err = float(np.max(np.abs(q_star - q_pi)))
        e_seq = ledger.e_sup[: k + 1] if ledger is not None else None
        t1 = theorem1_bound(k, gamma, eta, n_actions, vmax, e_seq)
        t2 = theorem2_bound(k, gamma, eta, n_actions, vmax, delta, len(cover), alpha)
        rows.append(
            {
                "k": k,
                "error": err,
                "thm1_bound": t1,
                "thm2_bound": t2,
                "projection_term": gamma * delta * vmax / (1.0 - gamma),
                "wall_time_s": time.perf_counter() - start,
            }
        )

    evaluate(0, table)
    for k in range(1, k_max + 1):
        if scheme == "exact":
            table = exact_dpp_backup(table, cover, model, eta)
        elif scheme == "sync":
            exact_next = exact_dpp_backup(table, cover, model, eta) if track_errors else None
            table = synchronous_update(table, cover, model, eta, n_k=k, m_k=k, rng=rng)
            if ledger is not None:
                ledger.record(table.values, exact_next.values)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        if k % eval_every == 0 or k == k_max:
            evaluate(k, table)
    return rows
