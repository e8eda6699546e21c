"""
Distributed Adaptive Synchronization Laws

Every follower i computes its input from its own state and the states and
inputs of its in-neighbors only:

    a_bar u_i = sum_j a_ij (k_ij . z_ij + k_rij u_j) + k_mi . Xi_i - theta . phi(x_i)
    Xi_i      = a_bar x_i - sum_j a_ij x_j

where z_ij is x_i ('own' regressor) or x_j ('neighbor' regressor) and u_0 = r.

Three protocols share the gain laws for k_ij, k_rij and k_mi:
- aocm: optimal-control-modification update of theta over a fixed basis
- nn:   theta over a sigmoid hidden layer whose inner weights W also adapt
- ie:   the neighbor input u_j is replaced by an adapted estimate u_hat_ji

Features:
- Pure control/update functions per protocol on typed parameter views
- Flat parameter-block layout for integration inside one ODE state
- Single-pass input and rate evaluation on that block for the integrator
- Ideal matching gains per edge and a composite Lyapunov value for diagnostics
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from agent_dynamics import AgentModel, ReferenceModel, solve_input_gain, solve_state_gain
from config import MATCHING_TOLERANCE, NN_INIT_SCALE, NN_STEEPNESS
from lyapunov_solver import optimal_modification_coefficient
from sync_errors import ModelError, NoNeighbors

logger = logging.getLogger(__name__)

PROTOCOLS = ('aocm', 'nn', 'ie')
REGRESSORS = ('own', 'neighbor')


# =============================================================================
# Basis functions
# =============================================================================

@dataclass(frozen=True)
class SineBasis:
    """phi(x) = [1, sin(x[component])]"""
    component: int = 2

    size = 2
    bound = float(np.sqrt(2.0))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.array([1.0, np.sin(x[self.component])])


@dataclass(frozen=True)
class ConstantBasis:
    size = 1
    bound = 1.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.ones(1)


BASES = {'sine': SineBasis, 'constant': ConstantBasis}


def make_basis(name: str):
    if name not in BASES:
        raise ModelError(f"unknown basis '{name}', expected one of {sorted(BASES)}")
    return BASES[name]()


def sigmoid(z, steepness: float = NN_STEEPNESS):
    return expit(steepness * np.asarray(z, dtype=float))


def nn_basis(W: np.ndarray, x: np.ndarray, steepness: float = NN_STEEPNESS) -> np.ndarray:
    """phi = [1, sigma(W^T x_bar)] with x_bar = [1, x]"""
    x_bar = np.concatenate(([1.0], x))
    return np.concatenate(([1.0], sigmoid(W.T @ x_bar, steepness)))


# =============================================================================
# Neighbor data and hyper-parameters
# =============================================================================

@dataclass(eq=False)
class NeighborData:
    """States, inputs and weights of agent i's in-neighbors, one row per edge"""
    states: np.ndarray
    inputs: np.ndarray
    weights: np.ndarray
    available: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.available is None:
            self.available = np.ones(len(self.weights), dtype=bool)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def aggregate(self, x_i: np.ndarray) -> np.ndarray:
        """Xi_i = a_bar x_i - sum_j a_ij x_j"""
        return self.total_weight * x_i - self.weights @ self.states

    def regressors(self, x_i: np.ndarray, regressor: str) -> np.ndarray:
        if regressor == 'own':
            return np.broadcast_to(x_i, self.states.shape)
        return self.states

    def feedforward_inputs(self) -> np.ndarray:
        """Neighbor inputs with disconnected edges zeroed"""
        return np.where(self.available, self.inputs, 0.0)


@dataclass(frozen=True, eq=False)
class AdaptiveHyper:
    """Per-agent adaptation constants"""
    gamma: float
    v: float
    sign_kr: int
    P: np.ndarray
    A_m: np.ndarray
    b_m: np.ndarray
    b_i: np.ndarray
    basis: object = field(default_factory=SineBasis)
    regressor: str = 'own'
    adapt: bool = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ModelError(f"adaptation rate gamma must be positive, got {self.gamma}")
        if self.v < 0:
            raise ModelError(f"modification weight v must be non-negative, got {self.v}")
        if self.sign_kr not in (-1, 1):
            raise ModelError(f"sign_kr must be +1 or -1, got {self.sign_kr}")
        if self.regressor not in REGRESSORS:
            raise ModelError(f"unknown regressor '{self.regressor}'")
        object.__setattr__(self, 'Pb_m', self.P @ self.b_m)
        object.__setattr__(self, 'Pb_i', self.P @ self.b_i)
        object.__setattr__(self, 'modification', optimal_modification_coefficient(self.b_i, self.P, self.A_m))


# =============================================================================
# Parameter states
# =============================================================================

@dataclass(eq=False)
class AocmState:
    k_edges: np.ndarray
    k_r_edges: np.ndarray
    k_m: np.ndarray
    theta: np.ndarray


@dataclass(eq=False)
class NnState:
    k_edges: np.ndarray
    k_r_edges: np.ndarray
    k_m: np.ndarray
    theta: np.ndarray
    W: np.ndarray
    V_bias: np.ndarray
    steepness: float = NN_STEEPNESS


@dataclass(eq=False)
class IeState:
    k_edges: np.ndarray
    u_hat: np.ndarray
    k_m: np.ndarray
    theta: np.ndarray


@dataclass(eq=False)
class GainRates:
    """Time derivatives of one agent's adaptive parameters"""
    k_edges: np.ndarray
    k_m: np.ndarray
    theta: np.ndarray
    k_r_edges: Optional[np.ndarray] = None
    u_hat: Optional[np.ndarray] = None
    W: Optional[np.ndarray] = None


def _check_neighbors(nb: NeighborData):
    if len(nb.weights) == 0 or nb.total_weight <= 0:
        raise NoNeighbors("agent has no in-neighbors")


def _tracking_drive(hyper: AdaptiveHyper, xi: np.ndarray) -> float:
    """sgn(k_r*) gamma b_m^T P Xi, the common factor of every k-gain law"""
    return hyper.sign_kr * hyper.gamma * float(hyper.Pb_m @ xi)


def _k_gain_rates(hyper: AdaptiveHyper, x_i: np.ndarray, nb: NeighborData, xi: np.ndarray):
    drive = _tracking_drive(hyper, xi)
    k_edges_dot = -drive * nb.regressors(x_i, hyper.regressor)
    k_m_dot = -drive * xi
    return drive, np.array(k_edges_dot), k_m_dot


def _frozen(rates: GainRates) -> GainRates:
    for name in ('k_edges', 'k_m', 'theta', 'k_r_edges', 'u_hat', 'W'):
        value = getattr(rates, name)
        if value is not None:
            setattr(rates, name, np.zeros_like(value))
    return rates


def _theta_modification_rate(hyper: AdaptiveHyper, theta: np.ndarray, phi: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """gamma (phi Xi^T P b_i + v phi phi^T theta b_i^T P A_m^-1 b_i)"""
    return hyper.gamma * (phi * float(xi @ hyper.Pb_i) + hyper.v * phi * float(phi @ theta) * hyper.modification)


# =============================================================================
# AOCM
# =============================================================================

def aocm_control(state: AocmState, hyper: AdaptiveHyper, x_i: np.ndarray, nb: NeighborData) -> float:
    _check_neighbors(nb)
    xi = nb.aggregate(x_i)
    z = nb.regressors(x_i, hyper.regressor)
    coupling = nb.weights @ (np.einsum('jn,jn->j', state.k_edges, z) + state.k_r_edges * nb.feedforward_inputs())
    total = coupling + state.k_m @ xi - state.theta @ hyper.basis(x_i)
    return float(total / nb.total_weight)


def aocm_update(state: AocmState, hyper: AdaptiveHyper, x_i: np.ndarray, nb: NeighborData) -> GainRates:
    _check_neighbors(nb)
    xi = nb.aggregate(x_i)
    drive, k_edges_dot, k_m_dot = _k_gain_rates(hyper, x_i, nb, xi)
    rates = GainRates(
        k_edges=k_edges_dot,
        k_m=k_m_dot,
        theta=_theta_modification_rate(hyper, state.theta, hyper.basis(x_i), xi),
        k_r_edges=-drive * nb.feedforward_inputs(),
    )
    return rates if hyper.adapt else _frozen(rates)


# =============================================================================
# Neural network
# =============================================================================

def nn_control(state: NnState, hyper: AdaptiveHyper, x_i: np.ndarray, nb: NeighborData) -> float:
    _check_neighbors(nb)
    xi = nb.aggregate(x_i)
    z = nb.regressors(x_i, hyper.regressor)
    coupling = nb.weights @ (np.einsum('jn,jn->j', state.k_edges, z) + state.k_r_edges * nb.feedforward_inputs())
    phi = nn_basis(state.W, x_i, state.steepness)
    return float((coupling + state.k_m @ xi - state.theta @ phi) / nb.total_weight)


def nn_update(state: NnState, hyper: AdaptiveHyper, x_i: np.ndarray, nb: NeighborData) -> GainRates:
    _check_neighbors(nb)
    xi = nb.aggregate(x_i)
    drive, k_edges_dot, k_m_dot = _k_gain_rates(hyper, x_i, nb, xi)
    x_bar = np.concatenate(([1.0], x_i))
    hidden = sigmoid(state.W.T @ x_bar, state.steepness)
    phi = np.concatenate(([1.0], hidden))
    error_projection = float(xi @ hyper.Pb_i)
    rates = GainRates(
        k_edges=k_edges_dot,
        k_m=k_m_dot,
        theta=hyper.gamma * phi * error_projection,
        k_r_edges=-drive * nb.feedforward_inputs(),
        W=hyper.gamma * error_projection * np.outer(x_bar, state.V_bias * hidden),
    )
    return rates if hyper.adapt else _frozen(rates)


# =============================================================================
# Input estimation
# =============================================================================

def ie_control(state: IeState, hyper: AdaptiveHyper, x_i: np.ndarray, nb: NeighborData) -> float:
    """Uses u_hat_ji on every edge; neighbor inputs are never read"""
    _check_neighbors(nb)
    xi = nb.aggregate(x_i)
    z = nb.regressors(x_i, hyper.regressor)
    coupling = nb.weights @ (np.einsum('jn,jn->j', state.k_edges, z) + state.u_hat)
    total = coupling + state.k_m @ xi - state.theta @ hyper.basis(x_i)
    return float(total / nb.total_weight)


def ie_update(state: IeState, hyper: AdaptiveHyper, x_i: np.ndarray, nb: NeighborData) -> GainRates:
    _check_neighbors(nb)
    xi = nb.aggregate(x_i)
    drive, k_edges_dot, k_m_dot = _k_gain_rates(hyper, x_i, nb, xi)
    rates = GainRates(
        k_edges=k_edges_dot,
        k_m=k_m_dot,
        theta=_theta_modification_rate(hyper, state.theta, hyper.basis(x_i), xi),
        u_hat=np.full(len(nb.weights), -drive),
    )
    return rates if hyper.adapt else _frozen(rates)


# =============================================================================
# Diagnostics
# =============================================================================

def epsilon_diagnostic(theta: np.ndarray, basis, x: np.ndarray, uncertainty) -> float:
    """Approximation error theta^T phi(x) - f(x)"""
    return float(theta @ basis(x) - uncertainty(x))


def theta_drive_bound(hyper: AdaptiveHyper, xi: np.ndarray, theta: np.ndarray) -> float:
    """Upper bound on |theta'| for the optimal-control-modification law"""
    phi_max = hyper.basis.bound
    return hyper.gamma * (phi_max * np.linalg.norm(xi) * np.linalg.norm(hyper.Pb_i)
                          + hyper.v * phi_max ** 2 * np.linalg.norm(theta) * abs(hyper.modification))


# =============================================================================
# Ideal gains
# =============================================================================

@dataclass(frozen=True, eq=False)
class IdealGains:
    """Matching gains the adaptive parameters converge to when f = 0"""
    k_edges: np.ndarray
    k_r_edges: np.ndarray
    k_m: np.ndarray
    k_r_star: float
    residual: float

    @property
    def approximate(self) -> bool:
        return self.residual > MATCHING_TOLERANCE


def ideal_gains(agent: AgentModel, reference: ReferenceModel,
                parent_models: Sequence[Tuple[np.ndarray, np.ndarray]],
                weights: Sequence[float], regressor: str = 'own') -> IdealGains:
    """
    Per-edge matching A_j = A_i + b_i k_ij^T, b_j = b_i k_rij and the
    aggregate gain k_mi.

    With the 'own' regressor k_mi solves A_m = A_bar + b_i k_mi^T where A_bar
    is the weighted mean of the parents' matrices; with the 'neighbor'
    regressor it solves A_m = A_i + b_i k_mi^T.
    """
    A_i, b_i = agent.A, agent.b
    weights = np.asarray(weights, dtype=float)
    k_edges, k_r_edges, residuals = [], [], []
    for A_j, b_j in parent_models:
        k, state_residual = solve_state_gain(A_j, A_i, b_i)
        k_r, input_residual = solve_input_gain(b_j, b_i)
        k_edges.append(k)
        k_r_edges.append(k_r)
        residuals.append(float(np.hypot(state_residual, input_residual)))

    if regressor == 'own':
        A_bar = sum(w * A_j for w, (A_j, _) in zip(weights, parent_models)) / weights.sum()
        k_m, _ = solve_state_gain(reference.A_m, A_bar, b_i)
        residuals.extend(float(np.linalg.norm(reference.A_m - A_j - np.outer(b_i, k_m), 'fro'))
                         for A_j, _ in parent_models)
    else:
        k_m, state_residual = solve_state_gain(reference.A_m, A_i, b_i)
        residuals.append(state_residual)

    k_r_star, input_residual = solve_input_gain(reference.b_m, b_i)
    residuals.append(input_residual)
    if max(residuals) > MATCHING_TOLERANCE:
        logger.debug(f"Ideal gains are approximate: residual {max(residuals):.3e} ({regressor} regressor)")
    n = A_i.shape[0]
    return IdealGains(
        k_edges=np.array(k_edges).reshape(len(k_edges), n),
        k_r_edges=np.array(k_r_edges),
        k_m=k_m,
        k_r_star=k_r_star,
        residual=max(residuals),
    )


# =============================================================================
# Parameter layout and controller wrapper
# =============================================================================

@dataclass(frozen=True)
class ParameterLayout:
    """
    Ordering of one agent's adaptive parameters inside a flat block.
    width is the basis size (aocm, ie) or hidden-layer width (nn).
    """
    protocol: str
    n_edges: int
    state_dim: int
    width: int

    @property
    def sections(self) -> List[Tuple[str, Tuple[int, ...]]]:
        k, n, m = self.n_edges, self.state_dim, self.width
        if self.protocol == 'aocm':
            return [('k_edges', (k, n)), ('k_r_edges', (k,)), ('k_m', (n,)), ('theta', (m,))]
        if self.protocol == 'ie':
            return [('k_edges', (k, n)), ('u_hat', (k,)), ('k_m', (n,)), ('theta', (m,))]
        if self.protocol == 'nn':
            return [('k_edges', (k, n)), ('k_r_edges', (k,)), ('k_m', (n,)),
                    ('theta', (m + 1,)), ('W', (n + 1, m))]
        raise ModelError(f"unknown protocol '{self.protocol}'")

    @property
    def size(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.sections)

    def split(self, block: np.ndarray) -> Dict[str, np.ndarray]:
        """Named views into block (no copies)"""
        views, offset = {}, 0
        for name, shape in self.sections:
            count = int(np.prod(shape))
            views[name] = block[offset:offset + count].reshape(shape)
            offset += count
        return views


CONTROL_LAWS = {'aocm': aocm_control, 'nn': nn_control, 'ie': ie_control}
UPDATE_LAWS = {'aocm': aocm_update, 'nn': nn_update, 'ie': ie_update}


class AdaptiveController:
    """
    Runs one protocol on a flat parameter block.

    evaluate() is the integrator path: it computes u_i and writes the parameter
    rates in one pass over precomputed block offsets, with the same laws as the
    per-protocol control and update functions.
    """

    def __init__(self, protocol: str, hyper: AdaptiveHyper, layout: ParameterLayout,
                 steepness: float = NN_STEEPNESS, V_bias: Optional[np.ndarray] = None):
        if protocol not in PROTOCOLS:
            raise ModelError(f"unknown protocol '{protocol}'")
        self.protocol = protocol
        self.hyper = hyper
        self.layout = layout
        self.steepness = steepness
        self.V_bias = np.ones(layout.width) if V_bias is None else np.asarray(V_bias, dtype=float)

        self._slices = {}
        offset = 0
        for name, shape in layout.sections:
            count = int(np.prod(shape))
            self._slices[name] = slice(offset, offset + count)
            offset += count
        # rows b_m^T P and b_i^T P: one product gives both error projections
        self._projection = np.vstack((hyper.Pb_m, hyper.Pb_i))
        self._drive_scale = hyper.sign_kr * hyper.gamma
        self._own = hyper.regressor == 'own'

    def state(self, block: np.ndarray):
        views = self.layout.split(block)
        if self.protocol == 'nn':
            return NnState(V_bias=self.V_bias, steepness=self.steepness, **views)
        if self.protocol == 'ie':
            return IeState(**views)
        return AocmState(**views)

    def evaluate(self, block: np.ndarray, x_i: np.ndarray, parent_states: np.ndarray,
                 feedforward: np.ndarray, weights: np.ndarray, total_weight: float,
                 out: Optional[np.ndarray] = None) -> float:
        """
        u_i for one agent; when out is given the parameter rates are written
        into it. feedforward holds the parent inputs with disconnected edges
        already zeroed (ignored by ie).
        """
        if total_weight <= 0 or len(weights) == 0:
            raise NoNeighbors("agent has no in-neighbors")
        s = self._slices
        hyper = self.hyper
        k, n = self.layout.n_edges, self.layout.state_dim

        k_edges = block[s['k_edges']].reshape(k, n)
        k_m = block[s['k_m']]
        theta = block[s['theta']]
        xi = total_weight * x_i - weights @ parent_states
        kz = k_edges @ x_i if self._own else np.einsum('jn,jn->j', k_edges, parent_states)

        if self.protocol == 'ie':
            edge_terms = kz + block[s['u_hat']]
        else:
            edge_terms = kz + block[s['k_r_edges']] * feedforward

        if self.protocol == 'nn':
            W = block[s['W']].reshape(n + 1, self.layout.width)
            x_bar = np.concatenate(([1.0], x_i))
            hidden = expit(self.steepness * (W.T @ x_bar))
            phi = np.concatenate(([1.0], hidden))
        else:
            phi = hyper.basis(x_i)

        u = float((weights @ edge_terms + k_m @ xi - theta @ phi) / total_weight)
        if out is None:
            return u
        if not hyper.adapt:
            out[:] = 0.0
            return u

        tracking, projection = self._projection @ xi
        drive = self._drive_scale * tracking
        out[s['k_edges']].reshape(k, n)[...] = -drive * (x_i if self._own else parent_states)
        out[s['k_m']] = -drive * xi
        if self.protocol == 'nn':
            out[s['theta']] = hyper.gamma * projection * phi
            out[s['W']] = (hyper.gamma * projection * np.outer(x_bar, self.V_bias * hidden)).ravel()
        else:
            out[s['theta']] = hyper.gamma * phi * (projection + hyper.v * (phi @ theta) * hyper.modification)
        if self.protocol == 'ie':
            out[s['u_hat']] = -drive
        else:
            out[s['k_r_edges']] = -drive * feedforward
        return u

    def control(self, block: np.ndarray, x_i: np.ndarray, nb: NeighborData) -> float:
        return self.evaluate(block, x_i, nb.states, nb.feedforward_inputs(), nb.weights, nb.total_weight)

    def rates(self, block: np.ndarray, x_i: np.ndarray, nb: NeighborData) -> np.ndarray:
        out = np.empty(self.layout.size)
        self.evaluate(block, x_i, nb.states, nb.feedforward_inputs(), nb.weights, nb.total_weight, out)
        return out

    def initial_block(self, ideal: Optional[IdealGains] = None, rng: Optional[np.random.Generator] = None,
                      init_scale: float = NN_INIT_SCALE) -> np.ndarray:
        """Zero gains, or the ideal matching gains when given; W is drawn from rng"""
        block = np.zeros(self.layout.size)
        views = self.layout.split(block)
        if ideal is not None:
            views['k_edges'][...] = ideal.k_edges
            views['k_m'][...] = ideal.k_m
            if 'k_r_edges' in views:
                views['k_r_edges'][...] = ideal.k_r_edges
        if self.protocol == 'nn':
            rng = rng or np.random.default_rng(0)
            views['W'][...] = rng.uniform(-init_scale, init_scale, size=views['W'].shape)
        return block

    def lyapunov_value(self, block: np.ndarray, x_i: np.ndarray, nb: NeighborData, ideal: IdealGains) -> float:
        """
        Xi^T P Xi plus the gain-error energy scaled by 1/(gamma |k_r*|) and
        |theta|^2 / gamma, taking theta* = 0.
        """
        views = self.layout.split(block)
        hyper = self.hyper
        xi = nb.aggregate(x_i)
        edge_energy = np.sum((views['k_edges'] - ideal.k_edges) ** 2, axis=1)
        if self.protocol == 'ie':
            edge_energy = edge_energy + (views['u_hat'] - ideal.k_r_edges * nb.inputs) ** 2
        else:
            edge_energy = edge_energy + (views['k_r_edges'] - ideal.k_r_edges) ** 2
        gain_energy = np.sum((views['k_m'] - ideal.k_m) ** 2) + nb.weights @ edge_energy
        theta_energy = float(views['theta'] @ views['theta'])
        return float(xi @ hyper.P @ xi + gain_energy / (hyper.gamma * abs(ideal.k_r_star))
                     + theta_energy / hyper.gamma)
