"""Independent verification paths: time sampling, finite differences,
exhaustive small-instance search, and spatial field maps.

Everything here validates the frequency-domain formulas from the outside:
signals are synthesized sample by sample from the defining sums, gradients are
re-derived by central differences, and tiny instances are optimized by brute
force. None of these routines share code with the closed-form paths they
check, except where the contract explicitly demands the same code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import build_channel
from .linearize import linearize_vo_in_q, linearize_vo_in_w
from .power import chain_norm_scales
from .rectenna import harvested_voltage, tone_amplitudes
from .scenario import Architecture, ScenarioConfig
from .transmitter import DmaState, Waveform, effective_rows


@dataclass(frozen=True)
class SampledSignal:
    """Real samples of a received (or radiated) signal over one period."""

    sample_rate: float
    samples: np.ndarray = field(repr=False)
    duration: float

    def moment(self, order: int) -> float:
        return float(np.mean(self.samples ** order))

    def papr(self) -> float:
        """Peak-to-average power ratio of the sampled waveform."""
        p = self.samples ** 2
        return float(np.max(p) / np.mean(p))


def synthesize_received(scenario: ScenarioConfig, waveform: Waveform,
                        dma: DmaState | None, receiver: int,
                        channel=None) -> SampledSignal:
    """Sample the exact received signal of one device over one period.

    The grid is dense enough that discrete means of powers up to ``y**4`` are
    exact, so the sampled moments are quadratures, not approximations.
    """
    if channel is None:
        channel = build_channel(scenario.array, scenario.receivers,
                                scenario.frequency, scenario.device.boresight_gain)
    eff = effective_rows(channel, scenario.array, dma)
    s = tone_amplitudes(eff.chain[receiver], waveform.omega.T)
    times = scenario.frequency.quadrature_times(degree=4)
    phases = np.exp(2j * np.pi * np.outer(times, scenario.frequency.tones))
    y = scenario.device.hpa_gain * np.real(phases @ s)
    rate = 1.0 / times[1] if len(times) > 1 else 0.0
    return SampledSignal(sample_rate=rate, samples=y,
                         duration=scenario.frequency.fundamental_period())


def time_domain_moments(spectrum: np.ndarray, tones: np.ndarray,
                        period_samples: np.ndarray, hpa_gain: float = 1.0):
    """Second and fourth moments of ``G * sum Re{s_n e^{j2pi f_n t}}`` by
    direct sampling; the independent check of the spectral formulas."""
    phases = np.exp(2j * np.pi * np.outer(period_samples, tones))
    y = hpa_gain * np.real(phases @ np.asarray(spectrum, dtype=complex))
    return float(np.mean(y ** 2)), float(np.mean(y ** 4))


# ---------------------------------------------------------------------------
# finite-difference gradient checks
# ---------------------------------------------------------------------------

def _central_difference(fun, x0: np.ndarray, direction: np.ndarray, step: float) -> float:
    return (fun(x0 + step * direction) - fun(x0 - step * direction)) / (2.0 * step)


def check_gradient_w(a_rows, w0, k2, k4, hpa_gain, step=1e-6, n_directions=8,
                     seed=0) -> float:
    """Max relative error of the waveform linearization against central
    differences over random complex directions."""
    rng = np.random.default_rng(seed)
    lin = linearize_vo_in_w(a_rows, w0, k2, k4, hpa_gain)

    def vo(w):
        return harvested_voltage(a_rows, w, hpa_gain, k2, k4)

    worst = 0.0
    for _ in range(n_directions):
        d = rng.normal(size=w0.shape) + 1j * rng.normal(size=w0.shape)
        d /= np.linalg.norm(d)
        num = _central_difference(vo, np.asarray(w0, dtype=complex), d, step)
        ana = lin.action(d)
        worst = max(worst, abs(num - ana) / max(abs(num), 1e-10))
    return worst


def check_gradient_q(a_hat_rows, q0, k2, k4, hpa_gain, step=1e-6, n_directions=8,
                     seed=0) -> float:
    """Max relative error of the element-weight linearization against central
    differences over random complex directions."""
    rng = np.random.default_rng(seed)
    lin = linearize_vo_in_q(a_hat_rows, q0, k2, k4, hpa_gain)
    a_hat_rows = np.asarray(a_hat_rows, dtype=complex)

    def vo(q):
        return harvested_voltage(a_hat_rows, q[None, :], hpa_gain, k2, k4)

    worst = 0.0
    for _ in range(n_directions):
        d = rng.normal(size=q0.shape) + 1j * rng.normal(size=q0.shape)
        d /= np.linalg.norm(d)
        num = _central_difference(vo, np.asarray(q0, dtype=complex), d, step)
        ana = lin.action(d)
        worst = max(worst, abs(num - ana) / max(abs(num), 1e-10))
    return worst


# ---------------------------------------------------------------------------
# exhaustive small-instance optimization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BruteForceResult:
    best_objective: float          # best feasible consumption bound found
    best_waveform: np.ndarray | None
    feasible_found: bool
    samples: int


def closed_form_single(scenario: ScenarioConfig) -> tuple[float, float]:
    """Analytic optimum for a single-element, single-tone, single-receiver
    fully-digital instance.

    Solves the active harvesting constraint for |omega|^2 (quadratic in the
    squared magnitude) and returns ``(optimal |omega|, exact sampled P_c)``
    where the amplifier term uses the exact single-tone mean of |cos|, 2/pi.
    """
    if (scenario.array.architecture is not Architecture.FULLY_DIGITAL
            or scenario.array.n_elements != 1 or scenario.frequency.n_f != 1
            or scenario.n_receivers != 1):
        raise ValueError("closed form requires a 1-element, 1-tone, 1-receiver "
                         "fully-digital instance")
    dev = scenario.device
    channel = build_channel(scenario.array, scenario.receivers,
                            scenario.frequency, dev.boresight_gain)
    g = abs(channel.gamma.reshape(-1)[0])
    target = scenario.voltage_targets()[0]
    gg = dev.hpa_gain * g
    a2 = dev.k4 * 3.0 * gg ** 4 / 8.0
    a1 = dev.k2 * gg ** 2 / 2.0
    u = (-a1 + math.sqrt(a1 * a1 + 4.0 * a2 * target)) / (2.0 * a2)
    w_opt = math.sqrt(u)
    p_hpa = (math.sqrt(dev.hpa_saturation_power) / dev.hpa_max_efficiency
             * (2.0 / math.pi) * dev.hpa_gain * w_opt)
    return w_opt, p_hpa + u


def brute_force_small(scenario: ScenarioConfig, n_samples: int = 100_000,
                      seed: int | None = None) -> BruteForceResult:
    """Dense random search over waveform weights for tiny instances.

    Phases are uniform; amplitudes are log-uniform between the ramp seed and
    an amplitude cap. Feasibility is checked with the exact rectifier model;
    the reported objective is the convex consumption bound, the same measure
    the optimizer minimizes.
    """
    if scenario.array.n_elements > 2 or scenario.frequency.n_f > 2 \
            or scenario.n_receivers != 1:
        raise ValueError("brute force supports N <= 2, n_f <= 2, M = 1 only")
    dev = scenario.device
    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    channel = build_channel(scenario.array, scenario.receivers,
                            scenario.frequency, dev.boresight_gain)
    eff = effective_rows(channel, scenario.array, None)
    rows = eff.chain[0]                      # [n_f, n_rf]
    n_rf, n_f = scenario.array.rf_chain_count, scenario.frequency.n_f
    target = scenario.voltage_targets()[0]
    scales = chain_norm_scales(None, n_rf, dev.hpa_gain,
                               dev.hpa_saturation_power, dev.hpa_max_efficiency)
    lo, hi = np.log(scenario.solver.init_seed_amplitude), np.log(10.0)
    best = (np.inf, None)
    block = 4096
    done = 0
    while done < n_samples:
        k = min(block, n_samples - done)
        amps = np.exp(rng.uniform(lo, hi, size=(k, n_rf, n_f)))
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(k, n_rf, n_f))
        omega = amps * np.exp(1j * phases)
        s = np.einsum("nc,kcn->kn", rows, omega)
        m2 = dev.hpa_gain ** 2 / 2.0 * np.sum(np.abs(s) ** 2, axis=1)
        if n_f == 1:
            sum_t = np.abs(s[:, 0]) ** 4
        else:
            sum_t = (np.abs(s[:, 0] ** 2) ** 2 + np.abs(2.0 * s[:, 0] * s[:, 1]) ** 2
                     + np.abs(s[:, 1] ** 2) ** 2)
        m4 = 3.0 * dev.hpa_gain ** 4 / 8.0 * sum_t
        v = dev.k2 * m2 + dev.k4 * m4
        feasible = v >= target
        if np.any(feasible):
            obj = (np.linalg.norm(omega, axis=2) @ scales
                   + np.sum(np.abs(omega) ** 2, axis=(1, 2)))
            obj = np.where(feasible, obj, np.inf)
            j = int(np.argmin(obj))
            if obj[j] < best[0]:
                best = (float(obj[j]), omega[j].copy())
        done += k
    return BruteForceResult(best_objective=best[0], best_waveform=best[1],
                            feasible_found=best[1] is not None, samples=n_samples)


# ---------------------------------------------------------------------------
# spatial field maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlaneSpec:
    """Vertical slice y = y_offset sampled on a regular x/z grid."""

    x_min: float
    x_max: float
    z_min: float
    z_max: float
    resolution: float
    y_offset: float = 0.0

    def validate(self):
        if self.resolution <= 0:
            raise ValueError("plane resolution must be positive")
        if self.x_max < self.x_min or self.z_max < self.z_min:
            raise ValueError("plane extent is empty")
        if self.z_min <= 0:
            raise ValueError("plane must lie strictly in front of the array (z > 0)")

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        self.validate()
        xs = np.arange(self.x_min, self.x_max + 1e-12, self.resolution)
        zs = np.arange(self.z_min, self.z_max + 1e-12, self.resolution)
        return xs, zs


@dataclass(frozen=True)
class FieldMap:
    plane: PlaneSpec
    xs: np.ndarray = field(repr=False)
    zs: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)  # [len(zs), len(xs)] normalized power

    def argmax_position(self) -> tuple[float, float]:
        iz, ix = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return float(self.xs[ix]), float(self.zs[iz])

    def to_csv(self, path) -> None:
        header = "x/z," + ",".join(f"{x:.6g}" for x in self.xs)
        rows = [f"{z:.6g}," + ",".join(f"{v:.9e}" for v in row)
                for z, row in zip(self.zs, self.values)]
        with open(path, "w") as fh:
            fh.write(header + "\n" + "\n".join(rows) + "\n")


def field_map(scenario: ScenarioConfig, waveform: Waveform,
              dma: DmaState | None, plane: PlaneSpec) -> FieldMap:
    """Received RF power over a spatial grid, normalized per cell.

    Each grid cell acts as a probe receiver; its mean received RF power is
    divided by the cell's path loss, evaluated as the aperture average of the
    per-element power gains ``F(theta_k) * (lambda1/(4 pi d_k))^2`` at the
    lowest tone. A uniformly illuminating transmitter maps flat; against a
    center-referenced divisor, the aperture average also cancels the
    first-order obliquity tilt, so a focused beam peaks at the focus rather
    than slightly beyond it.
    """
    dev = scenario.device
    plan = scenario.frequency
    xs, zs = plane.grid()
    cells = np.array([[x, plane.y_offset, z] for z in zs for x in xs])
    channel = build_channel(scenario.array, cells, plan, dev.boresight_gain)
    eff = effective_rows(channel, scenario.array, dma)
    s = np.einsum("mnc,cn->mn", eff.chain, waveform.omega)
    p_rf = dev.hpa_gain ** 2 / 2.0 * np.sum(np.abs(s) ** 2, axis=1)
    n_el = scenario.array.n_elements
    loss = np.mean(channel.gain[:, :, :, 0].reshape(n_el, len(cells)) ** 2, axis=0)
    values = np.where(loss > 0, p_rf / np.maximum(loss, 1e-300), 0.0)
    return FieldMap(plane=plane, xs=xs, zs=zs,
                    values=values.reshape(len(zs), len(xs)))
