"""Closed-loop simulation of N agents sharing a slotted network.

Per step ``k`` the loop is:

1. apply scheduled dynamics/noise changes (and, for the adaptive policy,
   re-evaluate which scheduler has the smaller worst-case bound);
2. compute the sensor-side errors ``e(k) = x(k) - x_hat(k)``;
3. allocate the round's slots with the active scheduler;
4. granted agents transmit iff ``||e(k)||^2 >= delta``;
5. estimators propagate, adopting the delivered states;
6. true states advance with process noise.

Replicates are simulated together as a batch; every agent of every
replicate draws from its own counter-based stream.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from .bounds import AssumptionError, SchemeChoice, check_assumption, choose_scheme
from .dynamics import NoiseModel, SystemModel, agent_streams, spectral_norm
from .scheduling import SlotBudget, round_robin_allocate
from .types import Policy

__all__ = [
    "ASampling",
    "AgentSpec",
    "ScenarioConfig",
    "ScenarioEvent",
    "SimulationError",
    "SimulationTrace",
    "adaptive_policy_step",
    "aggregate_replicates",
    "mean_quadratic_error",
    "realize_models",
    "run_replicates",
    "run_simulation",
]

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ASampling:
    """Recipe for random state matrices with i.i.d. entries.

    ``normalize="spectral"`` rescales each draw to unit spectral norm;
    ``normalize="orthogonal"`` replaces it by the orthogonal factor of its
    polar decomposition (all singular values one).  With
    ``shared=True`` one matrix is drawn per replicate and used by every agent.
    """

    dist: str = "uniform"
    low: float = -1.0
    high: float = 1.0
    normalize: str | None = None
    shared: bool = False
    max_resample: int = 10_000

    def __post_init__(self):
        if self.dist != "uniform":
            raise ValueError(f"unsupported a_sampling dist {self.dist!r}")
        if not self.low < self.high:
            raise ValueError("a_sampling needs low < high")
        if self.normalize not in (None, "spectral", "orthogonal"):
            raise ValueError(f"unsupported a_sampling normalize {self.normalize!r}")

    def draw(self, rng: np.random.Generator, dim: int) -> NDArray[np.float64]:
        a = rng.uniform(self.low, self.high, (dim, dim))
        if self.normalize == "spectral":
            nrm = spectral_norm(a)
            if nrm > 0:
                a = a / nrm
        elif self.normalize == "orthogonal":
            u, _, vt = np.linalg.svd(a)
            a = u @ vt
        return a


@dataclass(frozen=True)
class AgentSpec:
    """Initial dynamics of one agent: an explicit matrix or a sampling recipe."""

    noise: NoiseModel
    a_matrix: NDArray[np.float64] | None = None
    a_sampling: ASampling | None = None

    def __post_init__(self):
        if (self.a_matrix is None) == (self.a_sampling is None):
            raise ValueError("give exactly one of a_matrix and a_sampling")
        if self.a_matrix is not None:
            a = np.array(self.a_matrix, dtype=float)
            if a.shape != (self.dim, self.dim):
                raise ValueError(f"a_matrix shape {a.shape} does not match noise dim {self.dim}")
            a.setflags(write=False)
            object.__setattr__(self, "a_matrix", a)

    @property
    def dim(self) -> int:
        return self.noise.dim


@dataclass(frozen=True)
class ScenarioEvent:
    """Change applied at ``step`` to the listed agents (1-based ids).

    ``a_matrix`` replaces the true dynamics; ``a_estimate`` is what the
    estimators adopt (a re-identified matrix) and defaults to ``a_matrix``.
    """

    step: int
    agents: tuple[int, ...]
    noise: NoiseModel | None = None
    a_matrix: NDArray[np.float64] | None = None
    a_estimate: NDArray[np.float64] | None = None

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(int(a) for a in self.agents))
        if not self.agents:
            raise ValueError(f"event at step {self.step} lists no agents")
        if self.a_estimate is not None and self.a_matrix is None:
            raise ValueError(f"event at step {self.step}: a_estimate without a_matrix")
        for name in ("a_matrix", "a_estimate"):
            val = getattr(self, name)
            if val is not None:
                val = np.array(val, dtype=float)
                val.setflags(write=False)
                object.__setattr__(self, name, val)

    @property
    def estimate(self) -> NDArray[np.float64] | None:
        return self.a_matrix if self.a_estimate is None else self.a_estimate


@dataclass(frozen=True)
class ScenarioConfig:
    n_agents: int
    horizon: int
    delta: float
    budget: SlotBudget
    policy: Policy
    agents: tuple[AgentSpec, ...]
    events: tuple[ScenarioEvent, ...] = ()
    seed: int = 0
    replicates: int = 1
    name: str = ""
    agent_deltas: tuple[float, ...] | None = None
    reid_lag: int = 0
    inclusive_bound: bool = False
    initial_state: tuple[float, ...] | None = None
    initial_error: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy(self.policy))
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "events", tuple(self.events))
        if self.n_agents < 1 or self.horizon < 1 or self.replicates < 1:
            raise ValueError("n_agents, horizon and replicates must be positive")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if len(self.agents) != self.n_agents:
            raise ValueError(f"{len(self.agents)} agent specs for n_agents={self.n_agents}")
        dims = {spec.dim for spec in self.agents}
        if len(dims) != 1:
            raise ValueError(f"all agents must share one state dimension, got {sorted(dims)}")
        if self.budget.k_per > self.n_agents:
            raise ValueError(f"k_per ({self.budget.k_per}) exceeds n_agents ({self.n_agents})")
        if self.reid_lag < 0:
            raise ValueError("reid_lag must be non-negative")
        steps = [ev.step for ev in self.events]
        if steps != sorted(steps):
            raise ValueError("events must be sorted by step")
        n = self.dim
        for ev in self.events:
            if not 0 <= ev.step < self.horizon:
                raise ValueError(f"event step {ev.step} outside horizon {self.horizon}")
            bad = [a for a in ev.agents if not 1 <= a <= self.n_agents]
            if bad:
                raise ValueError(f"event at step {ev.step} names unknown agents {bad}")
            if ev.noise is not None and ev.noise.dim != n:
                raise ValueError(f"event at step {ev.step}: noise dimension {ev.noise.dim} != {n}")
            for mat in (ev.a_matrix, ev.a_estimate):
                if mat is not None and mat.shape != (n, n):
                    raise ValueError(f"event at step {ev.step}: matrix shape {mat.shape} != {(n, n)}")
        if self.agent_deltas is not None:
            deltas = tuple(float(d) for d in self.agent_deltas)
            if len(deltas) != self.n_agents or min(deltas) <= 0:
                raise ValueError("agent_deltas needs one positive threshold per agent")
            object.__setattr__(self, "agent_deltas", deltas)
        if self.initial_state is not None and len(self.initial_state) != n:
            raise ValueError(f"initial_state must have length {n}")
        if self.initial_error is not None:
            if len(self.initial_error) != self.n_agents:
                raise ValueError("initial_error needs one vector per agent")
            for i, e in enumerate(self.initial_error):
                e = np.asarray(e, dtype=float)
                if e.shape != (n,):
                    raise ValueError(f"initial_error of agent {i + 1} must have length {n}")
                if float(e @ e) >= self.thresholds[i]:
                    raise ValueError(
                        f"initial_error of agent {i + 1} has squared norm >= its threshold"
                    )

    @property
    def dim(self) -> int:
        return self.agents[0].dim

    @property
    def thresholds(self) -> NDArray[np.float64]:
        if self.agent_deltas is None:
            return np.full(self.n_agents, float(self.delta))
        return np.asarray(self.agent_deltas, dtype=float)

    def with_policy(self, policy: Policy | str) -> ScenarioConfig:
        return replace(self, policy=Policy(policy))


@dataclass
class SimulationTrace:
    """Per-step, per-agent record of one replicate (agent axis is 0-based)."""

    error_sq: NDArray[np.float64]  # (horizon, N)
    gamma: NDArray[np.int8]
    granted: NDArray[np.bool_]
    policy: tuple[Policy, ...]  # active scheduler per step
    decisions: list[tuple[int, SchemeChoice]] = field(default_factory=list)
    resample_counts: tuple[int, ...] = ()
    replicate: int = 0

    @property
    def horizon(self) -> int:
        return self.error_sq.shape[0]

    @property
    def n_agents(self) -> int:
        return self.error_sq.shape[1]

    @property
    def mean_error_sq(self) -> NDArray[np.float64]:
        return self.error_sq.mean(axis=1)


def _models_for(
    a: NDArray[np.float64], covs: Sequence[NDArray[np.float64]]
) -> list[SystemModel]:
    return [SystemModel(a[i], covs[i]) for i in range(len(covs))]


def realize_models(config: ScenarioConfig, replicate: int) -> tuple[NDArray[np.float64], list[int]]:
    """Initial state matrices ``(N, n, n)`` for one replicate and the per-agent resample counts.

    Sampled matrices are redrawn until the error-growth assumption holds.
    """
    n = config.dim
    mats = np.empty((config.n_agents, n, n))
    counts = [0] * config.n_agents
    shared: tuple[NDArray[np.float64], int] | None = None
    for i, spec in enumerate(config.agents):
        if spec.a_matrix is not None:
            mats[i] = spec.a_matrix
            continue
        recipe = spec.a_sampling
        if recipe.shared and shared is not None:
            mats[i], counts[i] = shared
            continue
        stream_agent = 0 if recipe.shared else i
        _, rng = agent_streams(config.seed, replicate, stream_agent)
        for attempt in range(recipe.max_resample + 1):
            a = recipe.draw(rng, n)
            if check_assumption(SystemModel(a, spec.noise.cov)):
                break
        else:
            raise SimulationError(
                f"agent {i + 1}: no admissible state matrix after {recipe.max_resample} redraws"
            )
        mats[i], counts[i] = a, attempt
        if recipe.shared:
            shared = (a, attempt)
    return mats, counts


def adaptive_policy_step(
    current: Policy,
    event_fired: bool,
    models: Sequence[SystemModel],
    delta: float,
    budget: SlotBudget,
    inclusive: bool = False,
) -> tuple[Policy, SchemeChoice | None]:
    """Re-decide the scheduler at a dynamics change; hold it otherwise."""
    if not event_fired:
        return current, None
    choice = choose_scheme(models, delta, budget, inclusive=inclusive)
    return choice.chosen, choice


def run_simulation(config: ScenarioConfig, replicate: int = 0) -> SimulationTrace:
    return run_replicates(config, [replicate])[0]


def run_replicates(
    config: ScenarioConfig, replicates: Sequence[int] | None = None
) -> list[SimulationTrace]:
    """Simulate the given replicate ids (default ``range(config.replicates)``)."""
    reps = list(range(config.replicates) if replicates is None else replicates)
    return _simulate_batch(config, reps)


def _simulate_batch(config: ScenarioConfig, reps: list[int]) -> list[SimulationTrace]:
    n_rep, n_ag, n, horizon = len(reps), config.n_agents, config.dim, config.horizon
    budget = config.budget
    thresholds = config.thresholds

    # true and estimator matrices per replicate and agent
    realized = [realize_models(config, r) for r in reps]
    a_true = np.stack([m for m, _ in realized])
    a_est = a_true.copy()

    noises = [spec.noise for spec in config.agents]
    factors = np.stack([nm.factor() for nm in noises])
    z = np.empty((n_rep, n_ag, horizon, n))
    for ri, r in enumerate(reps):
        for i in range(n_ag):
            rng, _ = agent_streams(config.seed, r, i)
            z[ri, i] = rng.standard_normal((horizon, n))

    x = np.zeros((n_rep, n_ag, n))
    if config.initial_state is not None:
        x[:] = np.asarray(config.initial_state, dtype=float)
    x_hat = x.copy()
    if config.initial_error is not None:
        x_hat -= np.asarray(config.initial_error, dtype=float)

    err_rec = np.empty((n_rep, horizon, n_ag))
    gamma_rec = np.zeros((n_rep, horizon, n_ag), dtype=np.int8)
    grant_rec = np.zeros((n_rep, horizon, n_ag), dtype=bool)
    predictive = np.full(n_rep, config.policy is Policy.PREDICTIVE)
    pol_rec = np.empty((n_rep, horizon), dtype=bool)
    decisions: list[list[tuple[int, SchemeChoice]]] = [[] for _ in reps]

    events_at: dict[int, list[ScenarioEvent]] = {}
    for ev in config.events:
        events_at.setdefault(ev.step, []).append(ev)
    adoptions: dict[int, list[ScenarioEvent]] = {}
    for ev in config.events:
        adoptions.setdefault(ev.step + config.reid_lag, []).append(ev)
    known_covs = [nm.cov for nm in noises]

    for k in range(horizon):
        # 1. scheduled changes
        for ev in events_at.get(k, ()):
            idx = [a - 1 for a in ev.agents]
            if ev.a_matrix is not None:
                a_true[:, idx] = ev.a_matrix
            if ev.noise is not None:
                for i in idx:
                    noises[i] = ev.noise
                factors[idx] = ev.noise.factor()
        adopted = adoptions.get(k, ())
        for ev in adopted:
            idx = [a - 1 for a in ev.agents]
            if ev.a_matrix is not None:
                a_est[:, idx] = ev.estimate
            if ev.noise is not None:
                for i in idx:
                    known_covs[i] = ev.noise.cov
        if config.policy is Policy.ADAPTIVE and (k == 0 or adopted):
            for ri in range(n_rep):
                models = _models_for(a_est[ri], known_covs)
                try:
                    chosen, choice = adaptive_policy_step(
                        Policy.PREDICTIVE if predictive[ri] else Policy.PERIODIC,
                        True,
                        models,
                        config.delta,
                        budget,
                        inclusive=config.inclusive_bound,
                    )
                except AssumptionError as exc:
                    raise SimulationError(f"step {k}, replicate {reps[ri]}: {exc}") from exc
                predictive[ri] = chosen is Policy.PREDICTIVE
                decisions[ri].append((k, choice))

        # 2. sensor-side errors
        e = x - x_hat
        err_sq = np.einsum("rni,rni->rn", e, e)
        if not np.all(np.isfinite(err_sq)):
            ri, i = np.argwhere(~np.isfinite(err_sq))[0]
            raise SimulationError(
                f"step {k}, replicate {reps[ri]}, agent {i + 1}: non-finite estimation error"
            )
        err_rec[:, k] = err_sq
        pol_rec[:, k] = predictive

        # 3. slot allocation
        granted = np.zeros((n_rep, n_ag), dtype=bool)
        if not predictive.all():
            rr = [a - 1 for a in round_robin_allocate(k, n_ag, budget.k_per).granted]
            granted[np.ix_(~predictive, rr)] = True
        if predictive.any():
            # stable sort of -priority: ties go to the smaller id
            top = np.argsort(-err_sq[predictive], axis=1, kind="stable")[:, : budget.k_pred]
            sub = np.zeros((int(predictive.sum()), n_ag), dtype=bool)
            np.put_along_axis(sub, top, True, axis=1)
            granted[predictive] = sub
        grant_rec[:, k] = granted

        # 4. trigger check on granted slots
        gamma = granted & (err_sq >= thresholds)
        gamma_rec[:, k] = gamma
        limit = np.where(predictive, budget.k_pred, budget.k_per)
        if np.any(gamma.sum(axis=1) > limit):
            raise SimulationError(f"step {k}: more transmissions than slots")

        # 5. estimator update (one-step-delayed delivery)
        base = np.where(gamma[..., None], x, x_hat)
        x_hat = np.matmul(a_est, base[..., None])[..., 0]

        # 6. truth update
        means = np.stack([nm.mean_at(k) for nm in noises])
        v = means + np.matmul(factors, z[:, :, k, :, None])[..., 0]
        x = np.matmul(a_true, x[..., None])[..., 0] + v

    traces = []
    for ri, r in enumerate(reps):
        traces.append(
            SimulationTrace(
                error_sq=err_rec[ri],
                gamma=gamma_rec[ri],
                granted=grant_rec[ri],
                policy=tuple(Policy.PREDICTIVE if p else Policy.PERIODIC for p in pol_rec[ri]),
                decisions=decisions[ri],
                resample_counts=tuple(realized[ri][1]),
                replicate=r,
            )
        )
    return traces


def mean_quadratic_error(trace: SimulationTrace, window: tuple[int, int] | range | None = None) -> float:
    """Mean over the window's steps of the across-agent mean squared error."""
    if window is None:
        start, stop = 0, trace.horizon
    elif isinstance(window, range):
        start, stop = window.start, window.stop
    else:
        start, stop = window
    if not 0 <= start < stop <= trace.horizon:
        raise ValueError(f"window [{start}, {stop}) is empty or outside horizon {trace.horizon}")
    return float(trace.mean_error_sq[start:stop].mean())


def aggregate_replicates(
    traces: Sequence[SimulationTrace],
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Pointwise mean and standard error of the per-step mean error across replicates."""
    if not traces:
        raise ValueError("no traces to aggregate")
    horizons = {t.horizon for t in traces}
    if len(horizons) != 1:
        raise ValueError(f"traces have mixed horizons {sorted(horizons)}")
    per_step = np.stack([t.mean_error_sq for t in traces])
    mean = per_step.mean(axis=0)
    if len(traces) == 1:
        return mean, np.zeros_like(mean)
    return mean, per_step.std(axis=0, ddof=1) / np.sqrt(len(traces))
