"""Initialization and the alternating convex-restriction optimization loops.

The driver alternates two stages until the consumption objective settles:
a beam-focusing stage that maximizes the minimum linearized output voltage
over the Lorentzian disks, and a waveform stage that minimizes the convex
consumption bound subject to linearized harvesting constraints. Both stages
repeat solve/re-linearize until their objectives move by less than the
configured relative tolerance. Because every linearization is a global
underestimator of the true output voltage, each accepted waveform iterate
satisfies the exact non-linear harvesting constraints.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelTensor, build_channel
from .linearize import linearize_vo_in_q, linearize_vo_in_w
from .rectenna import harvested_voltage
from .scenario import Architecture, ScenarioConfig
from .socp import (SolveStatus, assemble_q_subproblem, assemble_w_subproblem,
                   solve, unstack_complex)
from .transmitter import (DmaState, EffectiveChannel, Waveform,
                          effective_rows, lorentzian_weight)

_PHASE_GRID = 4096
_AMP_CAP = 1e6
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class OptimizationError(RuntimeError):
    """Optimization could not produce a feasible converged state."""


class UnmeetableRequirementError(OptimizationError):
    """EH targets unreachable within the amplitude cap."""


# ---------------------------------------------------------------------------
# one-dimensional phase searches
# ---------------------------------------------------------------------------

def _golden_refine(fun, lo: float, hi: float, iters: int = 60) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def phase_search(fun) -> float:
    """Minimize a periodic objective over [0, 2*pi): uniform grid followed by
    a golden-section refinement of the bracketing interval.

    ``fun`` must accept an array of phases and return elementwise values.
    """
    grid = np.arange(_PHASE_GRID) * (2.0 * np.pi / _PHASE_GRID)
    vals = np.asarray(fun(grid))
    k = int(np.argmin(vals))
    step = 2.0 * np.pi / _PHASE_GRID
    return _golden_refine(fun, grid[k] - step, grid[k] + step) % (2.0 * np.pi)


def _wrapped_angle_mag(values):
    """|phase| wrapped to [-pi, pi]; elementwise."""
    return np.abs(np.angle(values))


# ---------------------------------------------------------------------------
# initialization (chain allocation, element phases, amplitude ramp)
# ---------------------------------------------------------------------------

@dataclass
class InitPlan:
    """Chain-to-receiver allocation used only during initialization."""

    z: np.ndarray                    # allocation coefficient per receiver
    chain_sets: list[list[int]]      # disjoint RF-chain indices per receiver
    strongest_tone: np.ndarray       # per-receiver strongest sub-carrier index
    w_amp: np.ndarray | None = None  # final ramp amplitude per receiver

    def validate(self, n_rf: int):
        seen = set()
        for chains in self.chain_sets:
            if not chains:
                raise OptimizationError("every receiver needs at least one chain")
            if seen & set(chains):
                raise OptimizationError("chain sets must be disjoint")
            seen |= set(chains)
        if seen - set(range(n_rf)):
            raise OptimizationError("chain index out of range")


def allocate_chains(channel: ChannelTensor, m_count: int, n_rf: int) -> InitPlan:
    """Dedicate RF chains to receivers, weakest channels first.

    Every receiver first gets its own chain; the surplus is granted in
    descending order of ``z_m = 1 - |gamma_m| / sum |gamma|`` (evaluated at
    each receiver's strongest tone), ``ceil(z_m * surplus)`` at a time until
    the chains run out.
    """
    if m_count != channel.n_receivers:
        raise ValueError("receiver count does not match the channel tensor")
    if n_rf < m_count:
        raise OptimizationError("need at least one RF chain per receiver")
    norms = channel.vector_norms()               # [M, n_f]
    n_star = np.argmax(norms, axis=1)
    best = norms[np.arange(m_count), n_star]
    total = float(np.sum(best))
    if total <= 0.0:
        raise OptimizationError("all receivers see a zero channel")
    z = 1.0 - best / total
    sets = [[m] for m in range(m_count)]
    surplus = n_rf - m_count
    quota = np.ceil(z * surplus).astype(int)
    next_chain = m_count
    remaining = surplus
    processed: list[int] = []
    while remaining > 0 and len(processed) < m_count:
        order = np.lexsort((np.arange(m_count), -z))
        m_star = next(int(m) for m in order if m not in processed)
        processed.append(m_star)
        need = int(quota[m_star])
        while remaining > 0:
            sets[m_star].append(next_chain)
            next_chain += 1
            need -= 1
            remaining -= 1
            if need == 0:
                break
    plan = InitPlan(z=z, chain_sets=sets, strongest_tone=n_star)
    plan.validate(n_rf)
    return plan


def init_q_phases(channel: ChannelTensor, plan: InitPlan,
                  scenario: ScenarioConfig) -> DmaState:
    """Tune each allocated element so the phase of ``q * h * gamma`` at the
    owner's strongest tone is as close to zero as possible; elements on
    unallocated chains default to the maximum-amplitude weight ``q = j``."""
    if scenario.array.architecture is not Architecture.DMA:
        raise ValueError("element phases only exist for the DMA architecture")
    n_v, n_h = scenario.array.n_v, scenario.array.n_h
    phi = np.full((n_v, n_h), np.pi / 2.0)
    template = DmaState.from_phases(phi, scenario.array.inter_element_dx,
                                    scenario.microstrip)
    for m, chains in enumerate(plan.chain_sets):
        n_sel = int(plan.strongest_tone[m])
        for i in chains:
            for l in range(n_h):
                prod = template.h[i, l] * channel.gamma[i, l, m, n_sel]
                if prod == 0:
                    continue
                phi[i, l] = phase_search(
                    lambda p, _c=prod: _wrapped_angle_mag(lorentzian_weight(p) * _c))
    return DmaState.from_phases(phi, scenario.array.inter_element_dx,
                                scenario.microstrip)


def _exact_voltages(eff: EffectiveChannel, omega: np.ndarray,
                    scenario: ScenarioConfig) -> np.ndarray:
    dev = scenario.device
    return np.array([
        harvested_voltage(eff.chain[m], omega.T, dev.hpa_gain, dev.k2, dev.k4)
        for m in range(eff.n_receivers)
    ])


def init_digital_weights(scenario: ScenarioConfig, channel: ChannelTensor,
                         plan: InitPlan, dma: DmaState | None) -> Waveform:
    """Phase-align each allocated chain per tone, then grow per-receiver
    amplitudes geometrically until every harvesting target is met exactly
    under the non-linear rectifier model."""
    array = scenario.array
    settings = scenario.solver
    eff = effective_rows(channel, array, dma)
    n_rf, n_f = array.rf_chain_count, scenario.frequency.n_f
    phases = np.zeros((n_rf, n_f))
    owner = np.full(n_rf, -1, dtype=int)
    for m, chains in enumerate(plan.chain_sets):
        for i in chains:
            owner[i] = m
            for n in range(n_f):
                coeff = complex(eff.chain[m, n, i])
                if coeff == 0:
                    continue
                phases[i, n] = phase_search(
                    lambda p, _c=coeff: _wrapped_angle_mag(_c * np.exp(1j * p)))
    amp = np.full(scenario.n_receivers, settings.init_seed_amplitude)
    targets = scenario.voltage_targets()

    def omega_for(amp_vec):
        om = np.zeros((n_rf, n_f), dtype=complex)
        mask = owner >= 0
        om[mask] = (amp_vec[owner[mask]][:, None]
                    * np.exp(1j * phases[mask]))
        return om

    # per-receiver ramp; extra passes cover cross-coupling between receivers
    for _ in range(32):
        for m in range(scenario.n_receivers):
            while _exact_voltages(eff, omega_for(amp), scenario)[m] < targets[m]:
                amp[m] *= settings.init_ramp_factor
                if amp[m] > _AMP_CAP:
                    raise UnmeetableRequirementError(
                        f"receiver {m}: EH target unreachable within amplitude cap")
        if np.all(_exact_voltages(eff, omega_for(amp), scenario) >= targets):
            break
    else:
        raise UnmeetableRequirementError("amplitude ramp did not stabilize")
    plan.w_amp = amp
    return Waveform(omega_for(amp))


def _global_ramp(scenario: ScenarioConfig, eff: EffectiveChannel,
                 waveform: Waveform) -> Waveform:
    """Scale the whole waveform up until all targets hold; feasibility repair
    used if a restriction ever reports infeasible."""
    targets = scenario.voltage_targets()
    omega = waveform.omega.copy()
    scale = 1.0
    while np.any(_exact_voltages(eff, omega * scale, scenario) < targets):
        scale *= scenario.solver.init_ramp_factor
        if scale > _AMP_CAP:
            raise UnmeetableRequirementError("feasibility repair exceeded amplitude cap")
    return Waveform(omega * scale)


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

@dataclass
class StageTrace:
    objectives: list[float] = field(default_factory=list)
    solver_iterations: list[int] = field(default_factory=list)
    kkt_residuals: list[float] = field(default_factory=list)
    duality_gaps: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.objectives)

    @property
    def final_objective(self) -> float:
        return self.objectives[-1] if self.objectives else math.nan


@dataclass
class OuterRecord:
    index: int
    p_c_bound: float          # consumption objective after the waveform stage
    min_voltage: float        # focusing-stage objective (nan for FD)
    q_sca_iters: int
    w_sca_iters: int
    eh_residual: float        # max_m(target_m - v_o_m), negative means slack
    q_seconds: float
    w_seconds: float
    solver_rel_gap: float = 0.0  # worst relative duality gap this pass


def _worst_rel_gap(*traces: StageTrace) -> float:
    worst = 0.0
    for tr in traces:
        for gap, obj in zip(tr.duality_gaps, tr.objectives):
            worst = max(worst, gap / (1.0 + abs(obj)))
    return worst


@dataclass
class RunTrace:
    records: list[OuterRecord] = field(default_factory=list)
    converged: bool = False
    final_p_dc: np.ndarray | None = None

    @property
    def p_c_values(self) -> np.ndarray:
        return np.array([r.p_c_bound for r in self.records])

    def to_rows(self) -> list[dict]:
        return [
            {"outer_iter": r.index, "p_c_bound": r.p_c_bound,
             "min_voltage": r.min_voltage, "q_sca_iters": r.q_sca_iters,
             "w_sca_iters": r.w_sca_iters, "eh_residual": r.eh_residual,
             "q_seconds": r.q_seconds, "w_seconds": r.w_seconds}
            for r in self.records
        ]

    def to_csv(self, path) -> None:
        rows = self.to_rows()
        fields = list(rows[0].keys()) if rows else ["outer_iter"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)

    def to_json(self) -> str:
        payload = {"converged": self.converged, "records": self.to_rows()}
        if self.final_p_dc is not None:
            payload["final_p_dc"] = list(map(float, self.final_p_dc))
        return json.dumps(payload, indent=2)


def _relative_move(new: float, old: float) -> float:
    if not math.isfinite(old) or old == 0.0:
        return math.inf
    return abs(1.0 - new / old)


# ---------------------------------------------------------------------------
# SCA stages
# ---------------------------------------------------------------------------

def run_sca_w(scenario: ScenarioConfig, channel: ChannelTensor,
              dma: DmaState | None, w_init: Waveform) -> tuple[Waveform, StageTrace]:
    """Iterate the waveform restriction to convergence of the consumption bound.

    Every iterate remains feasible for the exact harvesting constraints; the
    objective is non-increasing because the expansion point itself is feasible
    for each restriction.
    """
    dev = scenario.device
    settings = scenario.solver
    eff = effective_rows(channel, scenario.array, dma)
    trace = StageTrace()
    w = w_init
    upsilon_prev = 0.0
    for _ in range(settings.max_sca_iters):
        lins = [linearize_vo_in_w(eff.chain[m], w.omega.T, dev.k2, dev.k4,
                                  dev.hpa_gain)
                for m in range(scenario.n_receivers)]
        prog = assemble_w_subproblem(scenario, dma, lins, w)
        sol = solve(prog, settings)
        if sol.status is SolveStatus.INFEASIBLE:
            if not trace.objectives:
                raise _SubproblemInfeasible
            break  # keep the last feasible iterate
        if sol.status is SolveStatus.ITER_LIMIT and prog.max_violation(sol.x) > 1e-7:
            break
        n_rf, n_f = w.omega.shape
        w = Waveform(unstack_complex(sol.x[:2 * n_rf * n_f]).reshape(n_rf, n_f))
        upsilon = sol.objective
        trace.objectives.append(upsilon)
        trace.solver_iterations.append(sol.iterations)
        trace.kkt_residuals.append(sol.kkt_residual)
        trace.duality_gaps.append(sol.duality_gap)
        if _relative_move(upsilon, upsilon_prev) <= settings.sca_rel_tol:
            trace.converged = True
            break
        upsilon_prev = upsilon
    return w, trace


def run_sca_q(scenario: ScenarioConfig, channel: ChannelTensor,
              waveform: Waveform, q_init: DmaState) -> tuple[DmaState, StageTrace]:
    """Iterate the beam-focusing restriction; the minimum exact output voltage
    over receivers never decreases across iterations."""
    dev = scenario.device
    settings = scenario.solver
    eff = effective_rows(channel, scenario.array, q_init, waveform)
    trace = StageTrace()
    dma = q_init
    xi_prev = math.inf
    n_el = scenario.array.n_elements
    for _ in range(settings.max_sca_iters):
        q0 = dma.q_flat()
        lins = [linearize_vo_in_q(eff.a_hat[m], q0, dev.k2, dev.k4, dev.hpa_gain)
                for m in range(scenario.n_receivers)]
        prog = assemble_q_subproblem(scenario, waveform, lins, q0)
        sol = solve(prog, settings)
        if sol.status is SolveStatus.INFEASIBLE:
            raise OptimizationError("focusing restriction reported infeasible")
        if sol.status is SolveStatus.ITER_LIMIT and prog.max_violation(sol.x) > 1e-7:
            break
        dma = dma.with_weights(unstack_complex(sol.x[:2 * n_el]))
        xi = -sol.objective  # program minimizes -R
        trace.objectives.append(xi)
        trace.solver_iterations.append(sol.iterations)
        trace.kkt_residuals.append(sol.kkt_residual)
        trace.duality_gaps.append(sol.duality_gap)
        if _relative_move(xi, xi_prev) <= settings.sca_rel_tol:
            trace.converged = True
            break
        xi_prev = xi
    return dma, trace


class _SubproblemInfeasible(Exception):
    pass


# ---------------------------------------------------------------------------
# full drivers
# ---------------------------------------------------------------------------

def _eh_residual(scenario, eff, omega) -> float:
    v = _exact_voltages(eff, omega, scenario)
    return float(np.max(scenario.voltage_targets() - v))


def _final_p_dc(scenario, channel, dma, waveform) -> np.ndarray:
    dev = scenario.device
    eff = effective_rows(channel, scenario.array, dma)
    v = _exact_voltages(eff, waveform.omega, scenario)
    return v ** 2 / dev.rect_load_resistance


def run_asca_dma(scenario: ScenarioConfig) -> tuple[Waveform, DmaState, RunTrace]:
    """Alternate focusing and waveform stages until the consumption bound
    settles to the configured relative tolerance.

    An outer pass that increases the bound is rejected: the previous state is
    restored and the loop stops there.
    """
    if scenario.array.architecture is not Architecture.DMA:
        raise ValueError("run_asca_dma requires a DMA scenario")
    settings = scenario.solver
    channel = build_channel(scenario.array, scenario.receivers,
                            scenario.frequency, scenario.device.boresight_gain)
    plan = allocate_chains(channel, scenario.n_receivers,
                           scenario.array.rf_chain_count)
    dma = init_q_phases(channel, plan, scenario)
    w = init_digital_weights(scenario, channel, plan, dma)
    trace = RunTrace()
    pc_prev = math.nan
    best = (math.inf, w, dma)
    for outer in range(settings.max_outer_iters):
        t0 = time.perf_counter()
        dma_new, q_trace = run_sca_q(scenario, channel, w, dma)
        t1 = time.perf_counter()
        try:
            w_new, w_trace = run_sca_w(scenario, channel, dma_new, w)
        except _SubproblemInfeasible:
            eff = effective_rows(channel, scenario.array, dma_new)
            w_repaired = _global_ramp(scenario, eff, w)
            w_new, w_trace = run_sca_w(scenario, channel, dma_new, w_repaired)
        t2 = time.perf_counter()
        pc = w_trace.final_objective
        eff = effective_rows(channel, scenario.array, dma_new)
        trace.records.append(OuterRecord(
            index=outer, p_c_bound=pc, min_voltage=q_trace.final_objective,
            q_sca_iters=q_trace.iterations, w_sca_iters=w_trace.iterations,
            eh_residual=_eh_residual(scenario, eff, w_new.omega),
            q_seconds=t1 - t0, w_seconds=t2 - t1,
            solver_rel_gap=_worst_rel_gap(q_trace, w_trace)))
        if math.isfinite(pc) and pc < best[0]:
            best = (pc, w_new, dma_new)
        if math.isfinite(pc_prev) and pc > pc_prev * (1.0 + settings.sca_rel_tol):
            trace.records.pop()  # rejected pass: keep the previous accepted state
            trace.converged = True
            break
        w, dma = w_new, dma_new
        if math.isfinite(pc_prev) and _relative_move(pc, pc_prev) <= settings.sca_rel_tol:
            trace.converged = True
            break
        pc_prev = pc
    if best[0] < math.inf:
        _, w, dma = best
    trace.final_p_dc = _final_p_dc(scenario, channel, dma, w)
    if np.any(trace.final_p_dc < 0.999 * scenario.eh_targets):
        raise OptimizationError("converged state misses an EH target by >0.1%")
    return w, dma, trace


def run_sca_fd(scenario: ScenarioConfig) -> tuple[Waveform, RunTrace]:
    """Single-stage waveform design for the fully-digital architecture."""
    if scenario.array.architecture is not Architecture.FULLY_DIGITAL:
        raise ValueError("run_sca_fd requires a fully-digital scenario")
    channel = build_channel(scenario.array, scenario.receivers,
                            scenario.frequency, scenario.device.boresight_gain)
    plan = allocate_chains(channel, scenario.n_receivers,
                           scenario.array.rf_chain_count)
    w0 = init_digital_weights(scenario, channel, plan, None)
    t0 = time.perf_counter()
    w, w_trace = run_sca_w(scenario, channel, None, w0)
    t1 = time.perf_counter()
    trace = RunTrace(converged=w_trace.converged)
    eff = effective_rows(channel, scenario.array, None)
    trace.records.append(OuterRecord(
        index=0, p_c_bound=w_trace.final_objective, min_voltage=math.nan,
        q_sca_iters=0, w_sca_iters=w_trace.iterations,
        eh_residual=_eh_residual(scenario, eff, w.omega),
        q_seconds=0.0, w_seconds=t1 - t0,
        solver_rel_gap=_worst_rel_gap(w_trace)))
    trace.final_p_dc = _final_p_dc(scenario, channel, None, w)
    if np.any(trace.final_p_dc < 0.999 * scenario.eh_targets):
        raise OptimizationError("converged state misses an EH target by >0.1%")
    return w, trace
