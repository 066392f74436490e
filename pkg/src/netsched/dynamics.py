"""Linear time-invariant agent dynamics, process noise and matrix primitives.

Each agent evolves as ``x(k+1) = A x(k) + v(k)`` with ``v(k) ~ N(mean, cov)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "AgentState",
    "ConvergenceError",
    "DimensionError",
    "IdentificationError",
    "NoiseModel",
    "SystemModel",
    "agent_streams",
    "identify_lti",
    "matrix_power_norm",
    "sample_noise",
    "spectral_norm",
    "step_system",
]

_PSD_TOL = 1e-9
_CHOL_JITTER = 1e-12


class DimensionError(ValueError):
    """Raised when vector or matrix shapes do not agree."""


class ConvergenceError(RuntimeError):
    """Raised when power iteration fails to reach its tolerance."""

    def __init__(self, message: str, gap: float):
        super().__init__(message)
        self.gap = gap


class IdentificationError(ValueError):
    """Raised when the least-squares regressor is rank deficient."""

    def __init__(self, message: str, rank: int):
        super().__init__(message)
        self.rank = rank


def _as_matrix(m, name: str) -> NDArray[np.float64]:
    m = np.array(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class SystemModel:
    """State transition matrix and process noise covariance of one agent."""

    a_matrix: NDArray[np.float64]
    noise_cov: NDArray[np.float64]
    dim: int = field(default=0)

    def __post_init__(self):
        a = _as_matrix(self.a_matrix, "a_matrix")
        cov = _as_matrix(self.noise_cov, "noise_cov")
        dim = self.dim or a.shape[0]
        if a.shape[0] != dim or cov.shape[0] != dim:
            raise DimensionError(
                f"a_matrix {a.shape} and noise_cov {cov.shape} must both be {dim}x{dim}"
            )
        if not np.allclose(cov, cov.T, atol=_PSD_TOL, rtol=0.0):
            raise ValueError("noise_cov is not symmetric")
        if dim and np.linalg.eigvalsh(cov).min() < -_PSD_TOL:
            raise ValueError("noise_cov is not positive semi-definite")
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "noise_cov", cov)
        object.__setattr__(self, "dim", int(dim))

    @property
    def noise_trace(self) -> float:
        return float(np.trace(self.noise_cov))


@dataclass(frozen=True)
class AgentState:
    x: NDArray[np.float64]
    k: int = 0

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        if self.k < 0:
            raise ValueError("time index must be non-negative")


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian process noise, optionally with a (sinusoidally varying) mean.

    The mean at step ``k`` is ``mean + sine_amplitude * sin(2*pi*sine_freq*k + sine_phase)``.
    A zero amplitude gives the constant-mean (load disturbance) case.
    """

    cov: NDArray[np.float64]
    mean: NDArray[np.float64] | None = None
    sine_amplitude: NDArray[np.float64] | None = None
    sine_freq: float = 0.0
    sine_phase: float = 0.0

    def __post_init__(self):
        cov = _as_matrix(self.cov, "cov")
        n = cov.shape[0]
        if not np.allclose(cov, cov.T, atol=_PSD_TOL, rtol=0.0):
            raise ValueError("noise covariance is not symmetric")
        if n and np.linalg.eigvalsh(cov).min() < -_PSD_TOL:
            raise ValueError("noise covariance is not positive semi-definite")
        object.__setattr__(self, "cov", cov)
        for name in ("mean", "sine_amplitude"):
            vec = getattr(self, name)
            vec = np.zeros(n) if vec is None else np.array(vec, dtype=float).reshape(-1)
            if vec.shape != (n,):
                raise DimensionError(f"{name} has length {vec.size}, expected {n}")
            vec.setflags(write=False)
            object.__setattr__(self, name, vec)

    @property
    def dim(self) -> int:
        return self.cov.shape[0]

    @property
    def has_sine(self) -> bool:
        return bool(np.any(self.sine_amplitude != 0.0))

    def mean_at(self, k: int) -> NDArray[np.float64]:
        if not self.has_sine:
            return self.mean
        return self.mean + self.sine_amplitude * np.sin(
            2.0 * np.pi * self.sine_freq * k + self.sine_phase
        )

    def factor(self) -> NDArray[np.float64]:
        """Lower-triangular ``L`` with ``L @ L.T`` equal to ``cov`` (up to jitter)."""
        return _cholesky_factor(self.cov)


def _cholesky_factor(cov: NDArray[np.float64]) -> NDArray[np.float64]:
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(cov + _CHOL_JITTER * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise ValueError("noise covariance is not positive semi-definite") from exc


def step_system(
    state: AgentState, model: SystemModel, noise, agent: int | None = None
) -> AgentState:
    """Advance one step: ``x' = A x + v``."""
    v = np.asarray(noise, dtype=float).reshape(-1)
    if state.x.shape != (model.dim,) or v.shape != (model.dim,):
        who = "" if agent is None else f"agent {agent}: "
        raise DimensionError(
            f"{who}state length {state.x.size} and noise length {v.size} "
            f"do not match model dimension {model.dim}"
        )
    return AgentState(model.a_matrix @ state.x + v, state.k + 1)


def agent_streams(seed: int, replicate: int, agent: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent counter-based generators for one agent of one replicate.

    Returns ``(noise_stream, model_stream)``.  Streams are keyed by
    ``(seed, replicate, agent)`` only, so changing the number of agents or the
    scheduler never changes another agent's draws.
    """
    root = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replicate), int(agent)))
    noise_ss, model_ss = root.spawn(2)
    return np.random.Generator(np.random.Philox(noise_ss)), np.random.Generator(
        np.random.Philox(model_ss)
    )


def sample_noise(noise: NoiseModel, rng: np.random.Generator, k: int = 0) -> NDArray[np.float64]:
    """Draw ``mean(k) + L z`` with ``z`` standard normal from ``rng``."""
    z = rng.standard_normal(noise.dim)
    return noise.mean_at(k) + noise.factor() @ z


def spectral_norm(m, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value of ``m`` by power iteration on ``m.T @ m``.

    Iteration continues past ``tol`` until the estimate stops changing at
    machine precision; :class:`ConvergenceError` is raised only if the
    relative change is still above ``tol`` after ``max_iter`` iterations.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if m.size == 0 or not np.any(m):
        return 0.0
    gram = m.T @ m
    # fixed, generic start vector; never orthogonal to the dominant direction in practice
    v = np.random.default_rng(0x5EED).uniform(0.5, 1.5, gram.shape[0])
    v /= np.linalg.norm(v)
    lam = float(v @ gram @ v)
    gap = np.inf
    for _ in range(max_iter):
        w = gram @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector fell in the null space; restart on a canonical axis
            v = np.eye(gram.shape[0])[np.argmax(np.diag(gram))]
            continue
        v = w / nw
        new = float(v @ gram @ v)
        gap = abs(new - lam) / max(abs(new), np.finfo(float).tiny)
        lam = new
        if gap <= 4 * np.finfo(float).eps:
            break
    if gap > tol:
        raise ConvergenceError(
            f"power iteration did not converge in {max_iter} iterations (gap {gap:.3e})", gap
        )
    return float(np.sqrt(max(lam, 0.0)))


def matrix_power_norm(m, p: int) -> float:
    """Spectral norm of ``m**p``; ``m**0`` is the identity."""
    if p < 0:
        raise ValueError("power must be non-negative")
    m = np.asarray(m, dtype=float)
    if p == 0:
        return 1.0
    return spectral_norm(np.linalg.matrix_power(m, p))


def identify_lti(states, inputs_excluded: bool = True) -> NDArray[np.float64]:
    """Least-squares estimate of ``A`` from a trajectory ``x(0), ..., x(T)``.

    Minimises ``sum_k ||x(k+1) - A x(k)||^2`` with a QR-based solver.  Only
    the autonomous model is supported, so ``inputs_excluded`` must be true.
    """
    if not inputs_excluded:
        raise NotImplementedError("identification with inputs is not supported")
    x = np.atleast_2d(np.asarray(states, dtype=float))
    if x.shape[0] == 1 and len(np.shape(states)) == 1:
        x = x.T
    n = x.shape[1]
    regressors, targets = x[:-1], x[1:]
    rank = int(np.linalg.matrix_rank(regressors)) if len(regressors) else 0
    if rank < n:
        raise IdentificationError(
            f"regressor matrix has rank {rank} < {n}; need a longer or richer trajectory",
            rank,
        )
    q, r = np.linalg.qr(regressors)
    # regressors @ A.T ~= targets
    a_t = np.linalg.solve(r, q.T @ targets)
    return a_t.T
