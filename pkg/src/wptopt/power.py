"""Transmitter power consumption: exact time-sampled model and its convex bound.

A class-B amplifier driven to instantaneous output power ``P_out(t)`` consumes
``sqrt(P_max * P_out(t)) / eta_bar``; the total consumption adds the digital
input power ``sum |omega|^2``. The optimization objective replaces the
time-average of the square root by the square root of the average (Jensen),
which separates per chain into ``scale_i * ||omega_i||``.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .scenario import Architecture, ArraySpec, FrequencyPlan
from .transmitter import DmaState, Waveform

_CHUNK = 1 << 16  # time samples per block when sampling long windows


def input_power(waveform: Waveform) -> float:
    """Total digital input power ``sum_i sum_n |omega[i, n]|^2``."""
    return float(np.sum(np.abs(waveform.omega) ** 2))


def chain_norm_scales(dma: DmaState | None, n_rf: int, hpa_gain: float,
                      p_max: float, eta_max: float) -> np.ndarray:
    """Per-chain coefficient turning ``||omega_i||`` into the consumption bound.

    The bound term for chain i is ``sqrt(P_max)/eta * sqrt(sum_{l,n}
    (G^2/2)|omega q h|^2)`` which factors into ``scale_i * ||omega_i||`` with
    ``scale_i = sqrt(P_max)*G/(sqrt(2)*eta) * sqrt(sum_l |q_il h_il|^2)``.
    """
    base = np.sqrt(p_max) * hpa_gain / (np.sqrt(2.0) * eta_max)
    if dma is None:
        return np.full(n_rf, base)
    qh = np.sqrt(np.sum(np.abs(dma.q * dma.h) ** 2, axis=1))
    if len(qh) != n_rf:
        raise ValueError("DMA state does not match the RF chain count")
    return base * qh


def hpa_bound_objective(waveform: Waveform, dma: DmaState | None,
                        hpa_gain: float, p_max: float, eta_max: float) -> float:
    """Convex upper bound on total consumption: sum-of-norms term plus P_in."""
    scales = chain_norm_scales(dma, waveform.n_rf, hpa_gain, p_max, eta_max)
    norms = np.linalg.norm(waveform.omega, axis=1)
    return float(scales @ norms + input_power(waveform))


def _chain_element_amplitudes(waveform: Waveform, dma: DmaState | None,
                              hpa_gain: float) -> np.ndarray:
    """Complex per-element tone amplitudes grouped by chain, [n_rf, n_el, n_f].

    The radiated signal of element (i, l) is ``sum_n Re{amp[i, l, n] *
    exp(j*2*pi*f_n*t)}``; fully-digital chains have a single element.
    """
    om = waveform.omega
    if dma is None:
        return hpa_gain * om[:, None, :]
    return hpa_gain * om[:, None, :] * (dma.q * dma.h)[:, :, None]


@dataclass(frozen=True)
class PowerReport:
    """Consumption summary for one transmitter state."""

    p_in: float            # digital input power
    p_hpa_sampled: float   # time-averaged amplifier consumption
    p_hpa_bound: float     # Jensen upper bound on the amplifier term
    p_c_sampled: float     # p_hpa_sampled + p_in
    upsilon_objective: float  # p_hpa_bound + p_in (the optimization objective)

    def to_dict(self) -> dict:
        return asdict(self)


def sampled_output_means(waveform: Waveform, dma: DmaState | None,
                         plan: FrequencyPlan, hpa_gain: float,
                         times: np.ndarray | None = None) -> np.ndarray:
    """Exact per-chain time averages of the radiated power ``E{P_out,i}``.

    Discrete means over the default grid are exact for the squared signal, so
    the result equals the frequency-domain value ``sum_{l,n}(G^2/2)|w q h|^2``.
    """
    if times is None:
        times = plan.quadrature_times(degree=2)
    amps = _chain_element_amplitudes(waveform, dma, hpa_gain)
    phases = np.exp(2j * np.pi * np.outer(times, plan.tones))  # [K, n_f]
    x = np.real(np.einsum("kn,cen->kce", phases, amps))
    return np.mean(np.sum(x * x, axis=2), axis=0)


def sampled_consumption(waveform: Waveform, dma: DmaState | None,
                        array: ArraySpec, plan: FrequencyPlan,
                        hpa_gain: float, p_max: float, eta_max: float,
                        paper_sampling: bool = False) -> PowerReport:
    """Time-sampled total consumption plus the matching convex bound.

    Default sampling covers one fundamental period with enough points that
    squared-signal averages are exact; ``paper_sampling`` switches to a 1 ms
    window at exactly twice the highest tone.
    """
    if array.architecture is Architecture.DMA and dma is None:
        raise ValueError("DMA architecture requires a DmaState")
    if paper_sampling:
        times = plan.nyquist_times(duration=1e-3)
    else:
        times = plan.quadrature_times(degree=2)
    amps = _chain_element_amplitudes(waveform, dma, hpa_gain)
    n_rf = amps.shape[0]
    sqrt_sum = np.zeros(n_rf)
    count = 0
    for start in range(0, len(times), _CHUNK):
        t = times[start:start + _CHUNK]
        phases = np.exp(2j * np.pi * np.outer(t, plan.tones))
        x = np.real(np.einsum("kn,cen->kce", phases, amps))
        sqrt_sum += np.sum(np.sqrt(np.sum(x * x, axis=2)), axis=0)
        count += len(t)
    p_hpa = float(np.sqrt(p_max) / eta_max * np.sum(sqrt_sum) / count)
    p_in = input_power(waveform)
    scales = chain_norm_scales(dma, n_rf, hpa_gain, p_max, eta_max)
    bound = float(scales @ np.linalg.norm(waveform.omega, axis=1))
    return PowerReport(
        p_in=p_in,
        p_hpa_sampled=p_hpa,
        p_hpa_bound=bound,
        p_c_sampled=p_hpa + p_in,
        upsilon_objective=bound + p_in,
    )
