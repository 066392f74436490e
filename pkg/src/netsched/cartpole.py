"""Linearized cart-pole ensemble with a mid-run cart-mass change.

State is ``[cart position, cart velocity, pole angle, pole angular velocity]``
with the angle measured from upright.  The plant is linearized about the
upright equilibrium, discretized with a zero-order hold and closed with a
fixed state-feedback gain ``u = -K x``.  A sinusoidal force on the cart input
enters the estimation model as a time-varying noise mean, and white input
force noise enters through the same channel.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import expm

from .bounds import AssumptionError, check_assumption
from .dynamics import NoiseModel, SystemModel, identify_lti
from .scheduling import SlotBudget
from .simulator import AgentSpec, ScenarioConfig, ScenarioEvent
from .types import Policy

__all__ = [
    "CartPoleParams",
    "DEFAULT_GAINS",
    "build_cartpole_scenario",
    "closed_loop",
    "linearize",
]

# discrete LQR gain for the default plant at dt = 0.01 (Q = I, R = 1000)
DEFAULT_GAINS = (
    -0.030150829016365864,
    -0.26643634503535313,
    -22.19163969767479,
    -4.788778061472117,
)


@dataclass(frozen=True)
class CartPoleParams:
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_length: float = 0.5
    gravity: float = 9.81

    def __post_init__(self):
        for name in ("cart_mass", "pole_mass", "pole_length", "gravity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def linearize(params: CartPoleParams, dt: float) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Zero-order-hold discretization ``(A_d, B_d)`` of the upright linearization."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    big_m, m, l, g = params.cart_mass, params.pole_mass, params.pole_length, params.gravity
    a_c = np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, -m * g / big_m, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, (big_m + m) * g / (big_m * l), 0.0],
        ]
    )
    b_c = np.array([[0.0], [1.0 / big_m], [0.0], [-1.0 / (big_m * l)]])
    aug = np.zeros((5, 5))
    aug[:4, :4] = a_c
    aug[:4, 4:] = b_c
    phi = expm(aug * dt)
    return phi[:4, :4], phi[:4, 4:]


def closed_loop(params: CartPoleParams, dt: float, gains: Sequence[float]) -> tuple[NDArray, NDArray]:
    """Closed-loop transition matrix ``A_d - B_d K`` and the input column ``B_d``."""
    a_d, b_d = linearize(params, dt)
    k = np.asarray(gains, dtype=float).reshape(1, 4)
    return a_d - b_d @ k, b_d[:, 0]


def _noise(
    b: NDArray, input_std: float, state_std: float, amp: float, freq: float, phase: float = 0.0
) -> NoiseModel:
    cov = input_std**2 * np.outer(b, b) + state_std**2 * np.eye(4)
    return NoiseModel(cov, sine_amplitude=amp * b, sine_freq=freq, sine_phase=phase)


def build_cartpole_scenario(
    params: CartPoleParams | None = None,
    dt: float = 0.01,
    gains: Sequence[float] = DEFAULT_GAINS,
    *,
    n_agents: int = 20,
    changed_agents: Sequence[int] = (16, 17, 18, 19, 20),
    mass_divisor: float = 3.0,
    event_step: int | None = 100,
    horizon: int = 300,
    input_noise_std: float = 0.4,
    state_noise_std: float = 1e-3,
    sine_amplitude: float = 0.3,
    sine_freq: float = 0.05,
    sine_phase_spread: bool = False,
    delta: float = 0.01,
    k_per: int = 5,
    k_pred: int = 4,
    policy: Policy | str = Policy.ADAPTIVE,
    seed: int = 0,
    replicates: int = 20,
    identification_length: int = 20,
) -> ScenarioConfig:
    """Twenty identical closed-loop cart-poles; at ``event_step`` the listed carts get lighter.

    The estimators adopt a least-squares re-identification of the new
    closed-loop matrix from a noise-free rollout.  ``event_step=None`` builds
    the homogeneous ensemble without the change.  ``sine_freq`` is in cycles
    per step.
    """
    params = params or CartPoleParams()
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    a_cl, b = closed_loop(params, dt, gains)
    phases = [
        2.0 * np.pi * i / n_agents if sine_phase_spread else 0.0 for i in range(n_agents)
    ]
    noise = [
        _noise(b, input_noise_std, state_noise_std, sine_amplitude, sine_freq, ph) for ph in phases
    ]
    if not check_assumption(SystemModel(a_cl, noise[0].cov)):
        raise AssumptionError(list(range(1, n_agents + 1)))
    agents = [AgentSpec(nm, a_matrix=a_cl) for nm in noise]

    events = []
    if event_step is not None:
        light = replace(params, cart_mass=params.cart_mass / mass_divisor)
        a_new, b_new = closed_loop(light, dt, gains)
        noise_new = [
            _noise(b_new, input_noise_std, state_noise_std, sine_amplitude, sine_freq, phases[i - 1])
            for i in changed_agents
        ]
        if not check_assumption(SystemModel(a_new, noise_new[0].cov)):
            raise AssumptionError(list(changed_agents))
        # generic start; the rollout must excite all four modes
        x = [np.array([0.3, -0.2, 0.05, 0.1])]
        for _ in range(identification_length):
            x.append(a_new @ x[-1])
        a_hat = identify_lti(np.array(x))
        for i, nm in zip(changed_agents, noise_new):
            events.append(ScenarioEvent(event_step, (i,), noise=nm, a_matrix=a_new, a_estimate=a_hat))

    return ScenarioConfig(
        n_agents=n_agents,
        horizon=horizon,
        delta=delta,
        budget=SlotBudget.from_slots(k_per, k_pred),
        policy=Policy(policy),
        agents=tuple(agents),
        events=tuple(events),
        seed=seed,
        replicates=replicates,
        name="cartpole",
    )
