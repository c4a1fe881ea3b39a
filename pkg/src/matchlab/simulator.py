"""Event-driven continuous-time simulation of search on a platform.

Two aggregate exponential clocks drive a replication: pair-meeting calls at
rate ``rho / 2`` per included agent and divorces at rate ``alpha`` per
standing match.  A meeting call picks a caller uniformly over all included
agents; a matched caller misses the call.  An unmatched caller draws a
partner node from their kernel row and meets a uniform *unmatched* agent of
that node (the caller never meets itself); the meeting fails when no such
agent exists.  The match forms exactly when output covers both reservation
wages.  Drawing partners from the unmatched pool is what makes the per-node
steady state solve the flow-balance condition ``alpha (1 - u) = rho u`` on
assortative platforms exactly, with no population-size bias; an availability
lottery over all agents would instead equate divorce inflow with a
quadratic-in-``u`` outflow.

While matched, an agent of node ``i`` paired with node ``j`` accrues flow
``(f(x_i, x_j) + w_i - w_j) / 2``; unmatched agents accrue nothing.
Statistics are collected after ``burn_in``: time-weighted unmatched
fractions per node, tallies, and the discounted payoff
``r * integral e^{-r (t - burn_in)} flow dt`` per agent.

Replications run sequentially on seeds spawned from the master seed via
``numpy.random.SeedSequence(seed).spawn(replications)``; identical seed and
config reproduce the event stream bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    EmptyMarketError,
    Platform,
    ProductionFunction,
    SearchParams,
)

__all__ = ["SimConfig", "SimOutcome", "PayoffCheck", "simulate", "payoff_check"]


@dataclass(frozen=True)
class SimConfig:
    """Population size, time window and replication plan for one experiment."""

    agents_per_node: int = 100
    horizon: float = 500.0
    burn_in: float = 50.0
    seed: int = 12345
    replications: int = 1
    collect_events: bool = False

    def __post_init__(self):
        if self.agents_per_node < 1:
            raise ValueError("agents_per_node must be at least 1")
        if not 0.0 <= self.burn_in < self.horizon:
            raise ValueError("need horizon > burn_in >= 0")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")


@dataclass(frozen=True, eq=False)
class SimOutcome:
    """Replication-averaged statistics of a simulation run.

    Standard errors are across replications (zero for a single replication).
    Tallies are totals over all replications and count only the post-burn-in
    window; every meeting call is tallied once per participant.
    """

    unmatched_fraction_by_node: np.ndarray
    se_unmatched_by_node: np.ndarray
    mean_discounted_payoff_by_node: np.ndarray
    se_payoff_by_node: np.ndarray
    match_formation_count: int
    divorce_count: int
    meeting_count: int
    failed_meeting_count: int
    rejected_meeting_count: int
    seed: int
    replications: int
    event_log: tuple = ()


class _Draws:
    """Buffered random streams; list access beats numpy scalar indexing."""

    def __init__(self, rng: np.random.Generator, block: int = 1 << 16):
        self._rng = rng
        self._block = block
        self._uniforms: list = []
        self._exps: list = []
        self._iu = 0
        self._ie = 0

    def uniform(self) -> float:
        if self._iu == len(self._uniforms):
            self._uniforms = self._rng.random(self._block).tolist()
            self._iu = 0
        value = self._uniforms[self._iu]
        self._iu += 1
        return value

    def exponential(self) -> float:
        if self._ie == len(self._exps):
            self._exps = self._rng.standard_exponential(self._block).tolist()
            self._ie = 0
        value = self._exps[self._ie]
        self._ie += 1
        return value


def simulate(platform: Platform, f: ProductionFunction, params: SearchParams,
             w: np.ndarray, cfg: SimConfig) -> SimOutcome:
    """Run the event simulation and collect steady-state statistics.

    ``w`` is the equilibrium wage vector of the platform (full grid length);
    it fixes the acceptance rule and the matched flow split.  The discount
    window must satisfy ``r * (horizon - burn_in) >= 7`` so that tail
    truncation biases discounted payoffs by less than one part in a thousand.
    """
    if not platform.is_consistent:
        raise ValueError(
            f"platform is not consistent (defect {platform.consistency_defect():g})")
    grid = platform.grid
    n, k = grid.n, platform.cutoff
    m = n - k
    if m == 0:
        raise EmptyMarketError("no included types to simulate")
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"wage vector must have length {n}")
    window = cfg.horizon - cfg.burn_in
    if params.r * window < 7.0:
        raise ValueError(
            f"r * (horizon - burn_in) = {params.r * window:g} < 7; "
            "discounted payoffs would carry a truncation bias above 1e-3")

    x = grid.nodes
    Fb = f.values(grid)[k:, k:]
    wb = w[k:]
    accept = (Fb - wb[:, None] - wb[None, :]) >= 0.0
    flow = 0.5 * (Fb + wb[:, None] - wb[None, :])
    accept_rows = [row.tolist() for row in accept]
    flow_rows = [row.tolist() for row in flow]

    G = platform.kernel
    identity_kernel = (np.count_nonzero(G) == np.count_nonzero(np.diagonal(G)))
    cum_rows = None if identity_kernel else [np.cumsum(row) for row in G]

    apn = cfg.agents_per_node
    reps = cfg.replications
    seeds = np.random.SeedSequence(cfg.seed).spawn(reps)

    u_hat = np.ones((reps, n))
    payoff_hat = np.zeros((reps, n))
    tallies = np.zeros(5, dtype=np.int64)  # matches, divorces, meetings, failed, rejected
    event_log: list = []

    for rep in range(reps):
        rep_u, rep_pay, rep_tallies = _run_replication(
            m, apn, cum_rows, accept_rows, flow_rows, params, cfg,
            np.random.default_rng(seeds[rep]),
            event_log if cfg.collect_events else None)
        u_hat[rep, k:] = rep_u
        payoff_hat[rep, k:] = rep_pay
        tallies += rep_tallies

    mean_u = u_hat.mean(axis=0)
    mean_p = payoff_hat.mean(axis=0)
    if reps > 1:
        se_u = u_hat.std(axis=0, ddof=1) / math.sqrt(reps)
        se_p = payoff_hat.std(axis=0, ddof=1) / math.sqrt(reps)
    else:
        se_u = np.zeros(n)
        se_p = np.zeros(n)

    return SimOutcome(
        unmatched_fraction_by_node=mean_u,
        se_unmatched_by_node=se_u,
        mean_discounted_payoff_by_node=mean_p,
        se_payoff_by_node=se_p,
        match_formation_count=int(tallies[0]),
        divorce_count=int(tallies[1]),
        meeting_count=int(tallies[2]),
        failed_meeting_count=int(tallies[3]),
        rejected_meeting_count=int(tallies[4]),
        seed=cfg.seed,
        replications=reps,
        event_log=tuple(event_log),
    )


def _run_replication(m, apn, cum_rows, accept_rows, flow_rows, params, cfg, rng, log):
    """One event timeline; returns per-node (u_hat, payoff_hat) and tallies."""
    rho, alpha, r = params.rho, params.alpha, params.r
    T, burn = cfg.horizon, cfg.burn_in
    n_agents = m * apn
    draws = _Draws(rng)
    identity_kernel = cum_rows is None

    node_of = [a // apn for a in range(n_agents)]
    partner = [-1] * n_agents
    pools = [list(range(nd * apn, (nd + 1) * apn)) for nd in range(m)]
    pos = list(range(apn)) * m
    pairs_a: list = []
    pairs_b: list = []

    # lazily accumulated per-node unmatched time and per-agent discounted flow
    ucount = [apn] * m
    utime = [0.0] * m
    ulast = [0.0] * m
    seg_flow = [0.0] * n_agents
    seg_start = [0.0] * n_agents
    payoff = [0.0] * n_agents

    matches = divorces = meetings = failed = rejected = 0
    rate_meet = 0.5 * rho * n_agents
    t = 0.0
    exp = math.exp
    next_exp = draws.exponential
    next_uniform = draws.uniform

    def accrue_node(nd, now):
        lo = ulast[nd] if ulast[nd] > burn else burn
        hi = now if now < T else T
        if hi > lo:
            utime[nd] += ucount[nd] * (hi - lo)
        ulast[nd] = now

    def accrue_agent(a, now):
        lo = seg_start[a] if seg_start[a] > burn else burn
        hi = now if now < T else T
        if hi > lo:
            payoff[a] += seg_flow[a] * (exp(-r * (lo - burn)) - exp(-r * (hi - burn))) / r

    def remove_from_pool(a):
        pool = pools[node_of[a]]
        p = pos[a]
        last = pool[-1]
        pool[p] = last
        pos[last] = p
        pool.pop()
        pos[a] = -1

    def add_to_pool(a):
        nd = node_of[a]
        pos[a] = len(pools[nd])
        pools[nd].append(a)

    while True:
        n_matches = len(pairs_a)
        total_rate = rate_meet + alpha * n_matches
        t += next_exp() / total_rate
        if t >= T:
            break
        in_window = t >= burn

        # one uniform selects the event type; its conditional remainder is
        # itself uniform and reused to pick the caller / the dissolving match
        v = next_uniform() * total_rate
        if v < rate_meet:
            if in_window:
                meetings += 2
            caller = int(v / rate_meet * n_agents)
            if caller >= n_agents:  # guards the one-ulp rounding corner
                caller = n_agents - 1
            if partner[caller] >= 0:
                if in_window:
                    failed += 1
                if log is not None:
                    log.append((t, "miss", caller, -1))
                continue
            ni = node_of[caller]
            if identity_kernel:
                nj = ni
            else:
                cum = cum_rows[ni]
                nj = int(np.searchsorted(cum, next_uniform() * cum[-1]))
                if nj >= m:
                    nj = m - 1
            pool = pools[nj]
            avail = len(pool) - 1 if nj == ni else len(pool)
            if avail <= 0:
                if in_window:
                    failed += 1
                if log is not None:
                    log.append((t, "fail", caller, -1))
                continue
            idx = int(next_uniform() * avail)
            if nj == ni and idx >= pos[caller]:
                idx += 1
            other = pool[idx]
            if not accept_rows[ni][nj]:
                if in_window:
                    rejected += 1
                if log is not None:
                    log.append((t, "reject", caller, other))
                continue
            # match forms
            remove_from_pool(caller)
            remove_from_pool(other)
            partner[caller] = other
            partner[other] = caller
            pairs_a.append(caller)
            pairs_b.append(other)
            accrue_node(ni, t)
            ucount[ni] -= 1
            accrue_node(nj, t)
            ucount[nj] -= 1
            seg_flow[caller] = flow_rows[ni][nj]
            seg_flow[other] = flow_rows[nj][ni]
            seg_start[caller] = t
            seg_start[other] = t
            if in_window:
                matches += 1
            if log is not None:
                log.append((t, "match", caller, other))
        else:
            idx = int((v - rate_meet) / (total_rate - rate_meet) * n_matches)
            if idx >= n_matches:
                idx = n_matches - 1
            a = pairs_a[idx]
            b = pairs_b[idx]
            pairs_a[idx] = pairs_a[-1]
            pairs_b[idx] = pairs_b[-1]
            pairs_a.pop()
            pairs_b.pop()
            accrue_agent(a, t)
            accrue_agent(b, t)
            seg_flow[a] = 0.0
            seg_flow[b] = 0.0
            partner[a] = -1
            partner[b] = -1
            add_to_pool(a)
            add_to_pool(b)
            na, nb = node_of[a], node_of[b]
            accrue_node(na, t)
            ucount[na] += 1
            accrue_node(nb, t)
            ucount[nb] += 1
            if in_window:
                divorces += 1
            if log is not None:
                log.append((t, "divorce", a, b))

    for nd in range(m):
        accrue_node(nd, T)
    for a in range(n_agents):
        if seg_flow[a]:
            accrue_agent(a, T)

    window = T - burn
    rep_u = np.array(utime) / (apn * window)
    rep_pay = r * np.array(payoff).reshape(m, apn).mean(axis=1)
    return rep_u, rep_pay, np.array([matches, divorces, meetings, failed, rejected],
                                    dtype=np.int64)


@dataclass(frozen=True, eq=False)
class PayoffCheck:
    """Per-node comparison of simulated discounted payoffs against a wage."""

    passed: bool
    node_ok: np.ndarray
    deviations: np.ndarray
    tol_se: float


def payoff_check(outcome: SimOutcome, w: np.ndarray, tol_se: float = 4.0) -> PayoffCheck:
    """Check that simulated payoffs sit within ``tol_se`` standard errors of ``w``.

    Nodes with a zero standard error (degenerate flows or one replication)
    pass only on exact agreement.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != outcome.mean_discounted_payoff_by_node.shape:
        raise ValueError("wage vector length does not match the outcome")
    dev = outcome.mean_discounted_payoff_by_node - w
    se = outcome.se_payoff_by_node
    node_ok = np.where(se > 0, np.abs(dev) <= tol_se * se, dev == 0.0)
    return PayoffCheck(passed=bool(np.all(node_ok)), node_ok=node_ok,
                       deviations=dev, tol_se=tol_se)
