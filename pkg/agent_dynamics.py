"""
Agent and Reference Model Dynamics

Each follower is x' = A x + (b + f(x) b/|b|) u with an unknown state-dependent
input-gain perturbation f; the leader is the stable reference model
x_m' = A_m x_m + b_m r(t).

Features:
- Third-order vehicle longitudinal models (position, velocity, acceleration)
- Reference models from explicit matrices or by pole placement on a vehicle
- Picklable reference signals and uncertainty functions
- Least-squares solution of the model-matching conditions with residuals
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import signal as sp_signal

from config import DEFAULT_POLES, MATCHING_TOLERANCE
from lyapunov_solver import is_hurwitz
from sync_errors import DimensionMismatch, ModelError, NotHurwitz, ZeroTau

logger = logging.getLogger(__name__)


# =============================================================================
# Signals and uncertainties
# =============================================================================

@dataclass(frozen=True)
class ReferenceSignal:
    """Scalar command r(t): 'constant' (r = amplitude) or 'sine'"""
    kind: str = 'constant'
    amplitude: float = 0.0
    omega: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ('constant', 'sine'):
            raise ModelError(f"unknown reference signal kind '{self.kind}'")

    def __call__(self, t: float) -> float:
        if self.kind == 'sine':
            return self.amplitude * np.sin(self.omega * t + self.phase)
        return self.amplitude


@dataclass(frozen=True)
class ZeroUncertainty:
    bound: float = 0.0

    def __call__(self, x: np.ndarray) -> float:
        return 0.0


@dataclass(frozen=True)
class SinusoidalUncertainty:
    """f(x) = amplitude * sin(x[component]); last state (acceleration) by default"""
    amplitude: float
    component: int = -1

    @property
    def bound(self) -> float:
        return abs(self.amplitude)

    def __call__(self, x: np.ndarray) -> float:
        return self.amplitude * np.sin(x[self.component])


def sinusoidal_uncertainty(amplitude: float, component: int = -1):
    if amplitude == 0:
        return ZeroUncertainty()
    return SinusoidalUncertainty(amplitude=float(amplitude), component=component)


# =============================================================================
# Models
# =============================================================================

def _readonly(array) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class AgentModel:
    A: np.ndarray
    b: np.ndarray
    uncertainty: object = field(default_factory=ZeroUncertainty)
    tau: Optional[float] = None

    def __post_init__(self):
        A = _readonly(np.atleast_2d(self.A))
        b = _readonly(np.atleast_1d(self.b))
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if b.shape != (A.shape[0],):
            raise DimensionMismatch(f"b has shape {b.shape}, expected ({A.shape[0]},)")
        norm = np.linalg.norm(b)
        if norm == 0:
            raise ModelError("input vector b must be nonzero")
        object.__setattr__(self, 'A', A)
        object.__setattr__(self, 'b', b)
        object.__setattr__(self, 'b_direction', _readonly(b / norm))

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True, eq=False)
class ReferenceModel:
    A_m: np.ndarray
    b_m: np.ndarray
    signal: ReferenceSignal = field(default_factory=ReferenceSignal)

    def __post_init__(self):
        A_m = _readonly(np.atleast_2d(self.A_m))
        b_m = _readonly(np.atleast_1d(self.b_m))
        if A_m.ndim != 2 or A_m.shape[0] != A_m.shape[1] or b_m.shape != (A_m.shape[0],):
            raise DimensionMismatch(f"A_m {A_m.shape} and b_m {b_m.shape} are inconsistent")
        if not is_hurwitz(A_m):
            raise NotHurwitz(f"reference A_m has eigenvalues {np.round(np.linalg.eigvals(A_m), 6)}")
        object.__setattr__(self, 'A_m', A_m)
        object.__setattr__(self, 'b_m', b_m)

    @property
    def state_dim(self) -> int:
        return self.A_m.shape[0]


def vehicle_matrices(tau: float) -> Tuple[np.ndarray, np.ndarray]:
    if tau == 0:
        raise ZeroTau("engine time constant tau must be nonzero")
    A = np.array([[0.0, 1.0, 0.0],
                  [0.0, 0.0, 1.0],
                  [0.0, 0.0, -1.0 / tau]])
    b = np.array([0.0, 0.0, 1.0 / tau])
    return A, b


def make_vehicle_model(tau: float, uncertainty=None) -> AgentModel:
    """Longitudinal vehicle with engine time constant tau"""
    A, b = vehicle_matrices(tau)
    return AgentModel(A=A, b=b, uncertainty=uncertainty or ZeroUncertainty(), tau=float(tau))


def reference_from_vehicle(tau: float, poles: Sequence[float] = DEFAULT_POLES,
                           b_m: Optional[Sequence[float]] = None,
                           signal: Optional[ReferenceSignal] = None) -> ReferenceModel:
    """
    Stabilize a (possibly unstable) vehicle by state feedback A_m = A - b K.

    b_m defaults to the last unit vector so the command enters as a jerk input.
    """
    A, b = vehicle_matrices(tau)
    placed = sp_signal.place_poles(A, b.reshape(-1, 1), np.asarray(poles, dtype=float))
    A_m = A - b.reshape(-1, 1) @ np.real(placed.gain_matrix)
    if b_m is None:
        b_m = np.zeros(A.shape[0])
        b_m[-1] = 1.0
    logger.debug(f"Reference model from tau={tau}: poles {np.round(np.linalg.eigvals(A_m), 6)}")
    return ReferenceModel(A_m=A_m, b_m=np.asarray(b_m, dtype=float), signal=signal or ReferenceSignal())


def pad_initial_state(x0: Sequence[float], n: int) -> np.ndarray:
    """Zero-pad a short initial condition (e.g. position and velocity only)"""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape[0] > n:
        raise DimensionMismatch(f"initial state has {x0.shape[0]} components, model has {n}")
    padded = np.zeros(n)
    padded[:x0.shape[0]] = x0
    return padded


# =============================================================================
# Evaluation
# =============================================================================

def eval_agent(model: AgentModel, x: np.ndarray, u: float) -> np.ndarray:
    """x' = A x + (b + f(x) b/|b|) u"""
    if x.shape != (model.state_dim,):
        raise DimensionMismatch(f"state has shape {x.shape}, expected ({model.state_dim},)")
    return model.A @ x + (model.b + model.uncertainty(x) * model.b_direction) * u


def eval_reference(reference: ReferenceModel, x_m: np.ndarray, t: float) -> np.ndarray:
    if x_m.shape != (reference.state_dim,):
        raise DimensionMismatch(f"reference state has shape {x_m.shape}, expected ({reference.state_dim},)")
    return reference.A_m @ x_m + reference.b_m * reference.signal(t)


# =============================================================================
# Model matching
# =============================================================================

@dataclass(frozen=True, eq=False)
class MatchedGains:
    """Gains (k, k_r) with target_A = A + b k^T and target_b = b k_r"""
    k: np.ndarray
    k_r: float
    residual: float

    @property
    def exact(self) -> bool:
        return self.residual <= MATCHING_TOLERANCE


def solve_state_gain(target_A: np.ndarray, A: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, float]:
    """Least-squares k for target_A = A + b k^T; returns (k, Frobenius residual)"""
    n = A.shape[0]
    gap = np.asarray(target_A, dtype=float) - A
    # row-major vec(b k^T) = kron(b, I) k
    system = np.kron(b.reshape(-1, 1), np.eye(n))
    k, *_ = np.linalg.lstsq(system, gap.flatten(), rcond=None)
    residual = float(np.linalg.norm(gap - np.outer(b, k), 'fro'))
    return k, residual


def solve_input_gain(target_b: np.ndarray, b: np.ndarray) -> Tuple[float, float]:
    """Least-squares scalar k_r for target_b = b k_r"""
    solution, *_ = np.linalg.lstsq(b.reshape(-1, 1), np.asarray(target_b, dtype=float), rcond=None)
    k_r = float(solution[0])
    return k_r, float(np.linalg.norm(target_b - b * k_r))


def _matching(target_A, target_b, A, b) -> MatchedGains:
    if np.shape(target_A) != A.shape or np.shape(target_b) != b.shape:
        raise DimensionMismatch(f"cannot match {np.shape(target_A)} model against {A.shape}")
    k, state_residual = solve_state_gain(target_A, A, b)
    k_r, input_residual = solve_input_gain(target_b, b)
    return MatchedGains(k=k, k_r=k_r, residual=float(np.hypot(state_residual, input_residual)))


def solve_feedback_matching(reference: ReferenceModel, agent: AgentModel) -> MatchedGains:
    """A_m = A_i + b_i k_m*^T, b_m = b_i k_r*"""
    return _matching(reference.A_m, reference.b_m, agent.A, agent.b)


def solve_coupling_matching(agent_i: AgentModel, agent_j: AgentModel) -> MatchedGains:
    """A_i = A_j + b_j k_ij*^T, b_i = b_j k_rij*"""
    return _matching(agent_i.A, agent_i.b, agent_j.A, agent_j.b)
