"""
Platoon Simulator

Integrates the leader, every follower and every adaptive parameter as one
coupled ODE with fixed-step RK4, then reduces the trajectory to synchronization
metrics.

Features:
- Single flat state [x_m, x_1..x_N, params_1..params_N] with named slices
- Agents evaluated in topological order so each input sees its parents' inputs
- Scheduled edge disconnections (feedforward dropped, warned once per edge)
- Divergence guard, optional Lyapunov-value recording and decimated output
- Per-agent error metrics, estimation gaps and the frozen-gain matching oracle
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import expm

from adaptive_controllers import (AdaptiveController, AdaptiveHyper, IdealGains, NeighborData,
                                  ParameterLayout, ideal_gains, make_basis)
from agent_dynamics import AgentModel, ReferenceModel, ZeroUncertainty, eval_agent
from comm_graph import CommGraph, parents, topological_order
from config import (DEFAULT_GAMMA, DEFAULT_V, DIVERGENCE_GUARD, FINAL_WINDOW_FRACTION,
                    LYAPUNOV_DESCENT_TOLERANCE, NN_INIT_SCALE, NN_SEED, NN_STEEPNESS, NN_WIDTH)
from lyapunov_solver import LyapunovCertificate, check_sign_condition, is_positive_definite, solve_lyapunov
from sync_errors import (DimensionMismatch, Diverged, ModelError, NonFiniteState, NotPositiveDefinite,
                         SignConditionViolated, SimulationError)

logger = logging.getLogger(__name__)


# =============================================================================
# Scenario
# =============================================================================

@dataclass(frozen=True)
class ControllerSettings:
    protocol: str = 'aocm'
    gamma: float = DEFAULT_GAMMA
    v: float = DEFAULT_V
    basis: str = 'sine'
    regressor: str = 'own'
    adapt: bool = True
    initial_gains: str = 'zero'
    nn_width: int = NN_WIDTH
    nn_steepness: float = NN_STEEPNESS
    nn_seed: int = NN_SEED
    nn_init_scale: float = NN_INIT_SCALE

    def __post_init__(self):
        if self.initial_gains not in ('zero', 'matched'):
            raise ModelError(f"initial_gains must be 'zero' or 'matched', got '{self.initial_gains}'")
        if self.nn_width < 1:
            raise ModelError(f"nn width must be at least 1, got {self.nn_width}")


@dataclass(frozen=True)
class Disconnection:
    """Edge source -> target carries no input during [start, end)"""
    source: int
    target: int
    start: float
    end: float

    def active(self, t: float) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    graph: CommGraph
    reference: ReferenceModel
    agents: Tuple[AgentModel, ...]
    initial_states: Tuple[np.ndarray, ...]
    reference_initial: np.ndarray
    controller: ControllerSettings
    Q: np.ndarray
    horizon: float
    step: float
    disconnections: Tuple[Disconnection, ...] = ()
    sign_overrides: Tuple[Optional[int], ...] = ()
    description: str = ''

    def __post_init__(self):
        n = self.reference.state_dim
        if len(self.agents) != self.graph.n_agents:
            raise DimensionMismatch(f"{len(self.agents)} agents for a graph with {self.graph.n_agents} followers")
        if len(self.initial_states) != len(self.agents):
            raise DimensionMismatch("one initial state per agent is required")
        for index, (agent, x0) in enumerate(zip(self.agents, self.initial_states), start=1):
            if agent.state_dim != n or np.shape(x0) != (n,):
                raise DimensionMismatch(f"agent {index} dimension differs from the reference ({n})")
        if np.shape(self.reference_initial) != (n,):
            raise DimensionMismatch("reference initial state has the wrong dimension")
        if np.shape(self.Q) != (n, n) or not is_positive_definite(self.Q):
            raise NotPositiveDefinite("Q must be an n x n symmetric positive-definite matrix")
        if not self.step > 0 or self.horizon < self.step:
            raise SimulationError(f"need step > 0 and horizon >= step, got h={self.step}, T={self.horizon}")
        if self.sign_overrides and len(self.sign_overrides) != len(self.agents):
            raise DimensionMismatch("sign overrides must list every agent")
        edges = {(j, i) for j, i, _ in self.graph.edges}
        for cut in self.disconnections:
            if (cut.source, cut.target) not in edges:
                raise ModelError(f"disconnection ({cut.source}, {cut.target}) is not a graph edge")

    @property
    def state_dim(self) -> int:
        return self.reference.state_dim

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.step))

    @property
    def frozen_matched(self) -> bool:
        """Frozen ideal gains with no uncertainty make every error obey e' = A_m e"""
        return (not self.controller.adapt and self.controller.initial_gains == 'matched'
                and all(isinstance(agent.uncertainty, ZeroUncertainty) for agent in self.agents))


# =============================================================================
# Coupled system
# =============================================================================

@dataclass(eq=False)
class AgentSlot:
    index: int
    model: AgentModel
    parent_indices: np.ndarray
    weights: np.ndarray
    controller: AdaptiveController
    ideal: IdealGains
    state_slice: slice
    param_slice: slice
    cuts: List[Disconnection] = field(default_factory=list)
    total_weight: float = field(init=False)

    def __post_init__(self):
        self.total_weight = float(self.weights.sum())

    def available(self, t: float) -> np.ndarray:
        mask = np.ones(len(self.parent_indices), dtype=bool)
        for cut in self.cuts:
            if cut.active(t):
                mask[self.parent_indices == cut.source] = False
        return mask


class CoupledSystem:
    """The full closed loop as y' = F(t, y)"""

    def __init__(self, scenario: Scenario, certificate: LyapunovCertificate, slots: List[AgentSlot],
                 order: List[int]):
        self.scenario = scenario
        self.reference = scenario.reference
        self.certificate = certificate
        self.slots = {slot.index: slot for slot in slots}
        self.order = [i for i in order if i != 0]
        self._ordered = [self.slots[i] for i in self.order]
        self.n = scenario.state_dim
        self.n_agents = scenario.graph.n_agents
        self.dimension = self.n * (self.n_agents + 1) + sum(slot.controller.layout.size for slot in slots)
        self.disconnection_log: List[Dict] = []
        self._warned = set()
        self._cache: Optional[Tuple[float, np.ndarray, np.ndarray, np.ndarray]] = None

    def initial_state(self) -> np.ndarray:
        y = np.zeros(self.dimension)
        y[:self.n] = self.scenario.reference_initial
        rng = np.random.default_rng(self.scenario.controller.nn_seed)
        matched = self.scenario.controller.initial_gains == 'matched'
        for index in sorted(self.slots):
            slot = self.slots[index]
            y[slot.state_slice] = self.scenario.initial_states[index - 1]
            y[slot.param_slice] = slot.controller.initial_block(
                ideal=slot.ideal if matched else None, rng=rng,
                init_scale=self.scenario.controller.nn_init_scale)
        return y

    def _feedforward(self, slot: AgentSlot, inputs: np.ndarray, t: float) -> np.ndarray:
        feedforward = inputs[slot.parent_indices]
        if slot.cuts:
            available = slot.available(t)
            if not available.all():
                self._log_cut(slot, available, t)
                feedforward[~available] = 0.0
        return feedforward

    def _log_cut(self, slot: AgentSlot, available: np.ndarray, t: float):
        for source in slot.parent_indices[~available]:
            key = (int(source), slot.index)
            if key in self._warned:
                continue
            self._warned.add(key)
            self.disconnection_log.append({'source': key[0], 'target': key[1], 'time': float(t)})
            if self.scenario.controller.protocol != 'ie':
                logger.warning(f"Edge {key[0]}->{key[1]} disconnected at t={t:.4g}; "
                               f"dropping its feedforward term")
            else:
                logger.info(f"Edge {key[0]}->{key[1]} disconnected at t={t:.4g}; input estimate takes over")

    def evaluate(self, t: float, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Returns (y', u) where u[i-1] is follower i's input; repeated calls on the same array hit a cache"""
        if self._cache is not None and self._cache[0] == t and self._cache[1] is y:
            return self._cache[2], self._cache[3]
        dy, inputs = self._evaluate(t, y)
        self._cache = (t, y, dy, inputs)
        return dy, inputs

    def _evaluate(self, t: float, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n = self.n
        states = y[:n * (self.n_agents + 1)].reshape(self.n_agents + 1, n)
        dy = np.empty_like(y)
        r = self.reference.signal(t)
        dy[:n] = self.reference.A_m @ states[0] + self.reference.b_m * r

        inputs = np.zeros(self.n_agents + 1)
        inputs[0] = r
        for slot in self._ordered:
            x_i = states[slot.index]
            u = slot.controller.evaluate(y[slot.param_slice], x_i, states[slot.parent_indices],
                                         self._feedforward(slot, inputs, t), slot.weights,
                                         slot.total_weight, dy[slot.param_slice])
            inputs[slot.index] = u
            dy[slot.state_slice] = eval_agent(slot.model, x_i, u)

        return dy, inputs[1:]

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        return self._evaluate(t, y)[0]

    def lyapunov_value(self, t: float, y: np.ndarray) -> float:
        _, inputs = self.evaluate(t, y)
        all_inputs = np.concatenate(([self.reference.signal(t)], inputs))
        states = y[:self.n * (self.n_agents + 1)].reshape(self.n_agents + 1, self.n)
        total = 0.0
        for index in self.order:
            slot = self.slots[index]
            nb = NeighborData(states=states[slot.parent_indices], inputs=all_inputs[slot.parent_indices],
                              weights=slot.weights)
            total += slot.controller.lyapunov_value(y[slot.param_slice], states[index], nb, slot.ideal)
        return total


def assemble(scenario: Scenario) -> CoupledSystem:
    """
    Build the coupled system: solve the Lyapunov equation once, derive each
    agent's ideal gains and sign, and lay out the flat state.
    """
    settings = scenario.controller
    reference = scenario.reference
    n = scenario.state_dim
    certificate = solve_lyapunov(reference.A_m, scenario.Q)
    basis = make_basis(settings.basis)

    offset = n * (scenario.graph.n_agents + 1)
    slots = []
    for index in range(1, scenario.graph.n_agents + 1):
        agent = scenario.agents[index - 1]
        in_edges = parents(scenario.graph, index)
        parent_indices = np.array([j for j, _ in in_edges], dtype=int)
        weights = np.array([w for _, w in in_edges])
        parent_models = [(reference.A_m, reference.b_m) if j == 0 else
                         (scenario.agents[j - 1].A, scenario.agents[j - 1].b) for j in parent_indices]
        ideal = ideal_gains(agent, reference, parent_models, weights, settings.regressor)
        if ideal.approximate:
            logger.warning(f"Agent {index}: matching conditions hold only approximately "
                           f"(residual {ideal.residual:.3e})")

        sign_kr = scenario.sign_overrides[index - 1] if scenario.sign_overrides else None
        if sign_kr is None:
            if ideal.k_r_star == 0:
                raise ModelError(f"agent {index}: sign of k_r* is undetermined (b_m orthogonal to b_i)")
            sign_kr = 1 if ideal.k_r_star > 0 else -1

        if settings.protocol in ('aocm', 'ie'):
            condition = check_sign_condition(agent.b, certificate, reference.A_m)
            if not condition.holds:
                raise SignConditionViolated(f"agent {index}: b^T P A_m^-1 b = {condition.value:.4g} is not negative")

        hyper = AdaptiveHyper(gamma=settings.gamma, v=settings.v, sign_kr=sign_kr, P=certificate.P,
                              A_m=reference.A_m, b_m=reference.b_m, b_i=agent.b, basis=basis,
                              regressor=settings.regressor, adapt=settings.adapt)
        width = settings.nn_width if settings.protocol == 'nn' else basis.size
        layout = ParameterLayout(protocol=settings.protocol, n_edges=len(in_edges), state_dim=n, width=width)
        controller = AdaptiveController(settings.protocol, hyper, layout, steepness=settings.nn_steepness)

        slots.append(AgentSlot(
            index=index, model=agent, parent_indices=parent_indices, weights=weights,
            controller=controller, ideal=ideal,
            state_slice=slice(n * index, n * (index + 1)),
            param_slice=slice(offset, offset + layout.size),
            cuts=[cut for cut in scenario.disconnections if cut.target == index],
        ))
        offset += layout.size

    system = CoupledSystem(scenario, certificate, slots, topological_order(scenario.graph))
    logger.info(f"Assembled '{scenario.name}': {scenario.graph.n_agents} agents, protocol "
                f"{settings.protocol}, state dimension {system.dimension}")
    return system


# =============================================================================
# Integration
# =============================================================================

def rk4_step(rhs: Callable[[float, np.ndarray], np.ndarray], state: np.ndarray, t: float, h: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step"""
    if not h > 0:
        raise SimulationError(f"step must be positive, got {h}")
    k1 = rhs(t, state)
    k2 = rhs(t + h / 2, state + h / 2 * k1)
    k3 = rhs(t + h / 2, state + h / 2 * k2)
    k4 = rhs(t + h, state + h * k3)
    result = state + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(result)):
        raise NonFiniteState(t + h)
    return result


@dataclass(eq=False)
class Trajectory:
    """Sampled solution; states[k, i] is agent i at times[k], index 0 the leader"""
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    parameters: Dict[int, np.ndarray] = field(default_factory=dict)
    u_hat: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    ideal_u_hat: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    lyapunov: Optional[np.ndarray] = None
    disconnection_log: List[Dict] = field(default_factory=list)
    reference_matrix: Optional[np.ndarray] = None
    frozen_matched: bool = False
    name: str = ''

    @property
    def n_agents(self) -> int:
        return self.states.shape[1] - 1

    @property
    def reference_states(self) -> np.ndarray:
        return self.states[:, 0, :]

    def agent_states(self, i: int) -> np.ndarray:
        return self.states[:, i, :]

    def errors(self, i: int) -> np.ndarray:
        """e_i = x_i - x_m"""
        return self.states[:, i, :] - self.states[:, 0, :]

    def error_norms(self) -> np.ndarray:
        """(samples, N) array of |x_i - x_m|"""
        return np.linalg.norm(self.states[:, 1:, :] - self.states[:, :1, :], axis=2)

    def edge_errors(self, i: int, j: int) -> np.ndarray:
        """e_ij = x_i - x_j"""
        return self.states[:, i, :] - self.states[:, j, :]


def run(scenario: Scenario, decimate: int = 1, record_lyapunov: bool = False) -> Trajectory:
    """Integrate from t=0 to the horizon; samples every decimate-th step"""
    if decimate < 1:
        raise SimulationError(f"decimation must be at least 1, got {decimate}")
    system = assemble(scenario)
    h = scenario.step
    steps = scenario.n_steps
    n_samples = steps // decimate + 1
    n, N = scenario.state_dim, scenario.graph.n_agents

    times = np.empty(n_samples)
    samples = np.empty((n_samples, system.dimension))
    inputs = np.empty((n_samples, N))
    lyapunov = np.empty(n_samples) if record_lyapunov else None

    def record(k: int, t: float, y: np.ndarray):
        times[k] = t
        samples[k] = y
        inputs[k] = system.evaluate(t, y)[1]
        if lyapunov is not None:
            lyapunov[k] = system.lyapunov_value(t, y)

    y = system.initial_state()
    record(0, 0.0, y)
    sample = 1
    for s in range(1, steps + 1):
        try:
            y = rk4_step(system.rhs, y, (s - 1) * h, h)
        except NonFiniteState as e:
            logger.error(f"'{scenario.name}' produced a non-finite state at t={e.time:.4g}")
            raise Diverged(e.time, f"non-finite state at t={e.time:.6g}") from e
        if np.abs(y).max() > DIVERGENCE_GUARD:
            logger.error(f"'{scenario.name}' exceeded the divergence guard at t={s * h:.4g}")
            raise Diverged(s * h)
        if s % decimate == 0:
            record(sample, s * h, y)
            sample += 1

    trajectory = Trajectory(
        times=times,
        states=samples[:, :n * (N + 1)].reshape(n_samples, N + 1, n),
        inputs=inputs,
        lyapunov=lyapunov,
        disconnection_log=list(system.disconnection_log),
        reference_matrix=np.array(scenario.reference.A_m),
        frozen_matched=scenario.frozen_matched,
        name=scenario.name,
    )
    for index, slot in system.slots.items():
        trajectory.parameters[index] = samples[:, slot.param_slice]
        if scenario.controller.protocol == 'ie':
            views = slot.controller.layout.split
            u_hat = np.array([views(row)['u_hat'] for row in samples[:, slot.param_slice]])
            parent_inputs = np.column_stack([
                np.array([scenario.reference.signal(t) for t in times]) if j == 0 else inputs[:, j - 1]
                for j in slot.parent_indices])
            for column, j in enumerate(slot.parent_indices):
                trajectory.u_hat[(int(j), index)] = u_hat[:, column]
                trajectory.ideal_u_hat[(int(j), index)] = slot.ideal.k_r_edges[column] * parent_inputs[:, column]
    logger.info(f"Finished '{scenario.name}': {steps} steps, {n_samples} samples")
    return trajectory


# =============================================================================
# Metrics
# =============================================================================

@dataclass
class AgentMetrics:
    agent: int
    sup_error: float
    final_rms: float
    first_rms: float
    peak_to_peak: float
    max_abs_input: float

    @property
    def rms_ratio(self) -> float:
        return self.final_rms / self.first_rms if self.first_rms > 0 else float('nan')


@dataclass
class MetricsReport:
    agents: List[AgentMetrics]
    input_flag: bool
    lyapunov_violations: Optional[int] = None
    estimation_gaps: Dict[str, float] = field(default_factory=dict)
    oracle_error: Optional[float] = None

    def to_dict(self) -> Dict:
        return {
            'agents': [
                {'agent': m.agent, 'sup_error': m.sup_error, 'final_rms': m.final_rms,
                 'first_rms': m.first_rms, 'rms_ratio': m.rms_ratio,
                 'peak_to_peak': m.peak_to_peak, 'max_abs_input': m.max_abs_input}
                for m in self.agents],
            'input_flag': self.input_flag,
            'lyapunov_violations': self.lyapunov_violations,
            'estimation_gaps': self.estimation_gaps,
            'oracle_error': self.oracle_error,
        }


def metric_windows(times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    span = times[-1] - times[0]
    first = times <= times[0] + FINAL_WINDOW_FRACTION * span
    final = times >= times[-1] - FINAL_WINDOW_FRACTION * span
    return first, final


def _rms(values: np.ndarray) -> float:
    return float(np.sqrt(np.mean(values ** 2))) if values.size else float('nan')


def matched_oracle_error(trajectory: Trajectory, sample: int = -1) -> float:
    """Largest relative gap between e_i(t) and expm(A_m t) e_i(0) over all agents"""
    if trajectory.reference_matrix is None:
        raise SimulationError("trajectory carries no reference matrix")
    t = trajectory.times[sample]
    propagator = expm(trajectory.reference_matrix * t)
    worst = 0.0
    for i in range(1, trajectory.n_agents + 1):
        errors = trajectory.errors(i)
        expected = propagator @ errors[0]
        scale = max(np.linalg.norm(expected), np.finfo(float).tiny)
        worst = max(worst, float(np.linalg.norm(errors[sample] - expected) / scale))
    return worst


def lyapunov_violations(values: np.ndarray, tolerance: float = LYAPUNOV_DESCENT_TOLERANCE) -> int:
    """Number of consecutive samples where V increases by more than tolerance |V|"""
    increases = np.diff(values) > tolerance * np.abs(values[:-1])
    return int(increases.sum())


def metrics(trajectory: Trajectory) -> MetricsReport:
    first, final = metric_windows(trajectory.times)
    norms = trajectory.error_norms()
    per_agent = []
    for column in range(trajectory.n_agents):
        series = norms[:, column]
        tail = series[final]
        per_agent.append(AgentMetrics(
            agent=column + 1,
            sup_error=float(series.max()),
            final_rms=_rms(tail),
            first_rms=_rms(series[first]),
            peak_to_peak=float(tail.max() - tail.min()) if tail.size else float('nan'),
            max_abs_input=float(np.abs(trajectory.inputs[:, column]).max()) if trajectory.inputs.size else 0.0,
        ))

    input_flag = bool(trajectory.inputs.size and
                      (not np.all(np.isfinite(trajectory.inputs))
                       or np.abs(trajectory.inputs).max() >= DIVERGENCE_GUARD))

    gaps = {f"{j}->{i}": float(np.mean(np.abs(trajectory.u_hat[(j, i)][final]
                                              - trajectory.ideal_u_hat[(j, i)][final])))
            for (j, i) in sorted(trajectory.u_hat)}

    report = MetricsReport(
        agents=per_agent,
        input_flag=input_flag,
        lyapunov_violations=lyapunov_violations(trajectory.lyapunov) if trajectory.lyapunov is not None else None,
        estimation_gaps=gaps,
        oracle_error=matched_oracle_error(trajectory) if trajectory.frozen_matched else None,
    )
    if input_flag:
        logger.warning(f"'{trajectory.name}': input magnitude reached the divergence guard")
    return report
