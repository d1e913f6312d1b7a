"""Transmit front end: digital tone weights, DMA element weights, effective rows.

The DMA element weight is constrained to the Lorentzian circle
``q = (j + exp(j*phi)) / 2`` and every element additionally sees the feed-line
response ``h = exp(-(l-1)*d_l*(alpha + j*beta))`` accumulated along its
microstrip. The "effective" channel row folds these into the raw coefficients
so that both architectures share one received-signal formula.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelTensor
from .scenario import Architecture, ArraySpec, MicrostripParams

LORENTZIAN_CENTER = 0.5j
LORENTZIAN_RADIUS = 0.5


@dataclass(frozen=True)
class Waveform:
    """Digital weights ``omega[i, n]``, one complex entry per RF chain and tone."""

    omega: np.ndarray = field(repr=False)  # [n_rf, n_f] complex

    def __post_init__(self):
        om = np.asarray(self.omega, dtype=complex)
        if om.ndim != 2:
            raise ValueError("omega must be a 2-D [n_rf, n_f] array")
        if not np.all(np.isfinite(om.view(float))):
            raise ValueError("omega entries must be finite")
        om = np.ascontiguousarray(om)
        om.flags.writeable = False
        object.__setattr__(self, "omega", om)

    @property
    def n_rf(self) -> int:
        return self.omega.shape[0]

    @property
    def n_f(self) -> int:
        return self.omega.shape[1]

    @classmethod
    def zeros(cls, n_rf: int, n_f: int) -> "Waveform":
        return cls(np.zeros((n_rf, n_f), dtype=complex))


def lorentzian_weight(phi):
    """Element frequency response for tuning phase ``phi``; lies on the circle
    of radius 1/2 centered at j/2."""
    return (1j + np.exp(1j * np.asarray(phi, dtype=float))) / 2.0


def microstrip_response(l_index, spacing: float, alpha: float, beta: float):
    """Feed-line response at the ``l``-th element (1-based) of a microstrip."""
    l_index = np.asarray(l_index)
    if np.any(l_index < 1):
        raise ValueError("element index along the microstrip is 1-based")
    return np.exp(-(l_index - 1) * spacing * (alpha + 1j * beta))


@dataclass(frozen=True)
class DmaState:
    """Tunable phases, element weights, and fixed feed responses of a DMA.

    ``q`` equals ``lorentzian_weight(phi)`` when built from phases; states
    produced by the relaxed beam-focusing stage may lie strictly inside the
    Lorentzian disk, in which case ``phi`` stores the angular position of the
    weight relative to the disk center.
    """

    phi: np.ndarray = field(repr=False)  # [n_v, n_h]
    q: np.ndarray = field(repr=False)    # [n_v, n_h] complex
    h: np.ndarray = field(repr=False)    # [n_v, n_h] complex
    alpha: float | np.ndarray = 0.0      # per-strip when built from overrides
    beta: float | np.ndarray = 0.0
    element_spacing: float = 0.0

    @classmethod
    def from_phases(cls, phi: np.ndarray, spacing: float,
                    strip: "MicrostripParams | list[MicrostripParams]") -> "DmaState":
        """Build a circle-exact state from tuning phases.

        ``strip`` is one parameter set shared by every feed line, or a
        sequence with one entry per microstrip.
        """
        phi = np.mod(np.asarray(phi, dtype=float), 2.0 * np.pi)
        n_v, n_h = phi.shape
        q = lorentzian_weight(phi)
        strips = [strip] * n_v if isinstance(strip, MicrostripParams) else list(strip)
        if len(strips) != n_v:
            raise ValueError("need one microstrip parameter set per feed line")
        l_idx = np.arange(1, n_h + 1)
        h = np.stack([microstrip_response(l_idx, spacing, s.attenuation, s.propagation)
                      for s in strips])
        alpha = np.array([s.attenuation for s in strips])
        beta = np.array([s.propagation for s in strips])
        if np.ptp(alpha) == 0.0 and np.ptp(beta) == 0.0:
            alpha, beta = float(alpha[0]), float(beta[0])
        return cls._frozen(phi, q, h, alpha, beta, spacing)

    @classmethod
    def _frozen(cls, phi, q, h, alpha, beta, spacing):
        arrs = []
        for a in (phi, np.asarray(q, dtype=complex), np.asarray(h, dtype=complex)):
            a = np.ascontiguousarray(a)
            a.flags.writeable = False
            arrs.append(a)
        return cls(arrs[0], arrs[1], arrs[2], alpha, beta, float(spacing))

    def with_weights(self, q_new: np.ndarray, tol: float = 1e-7) -> "DmaState":
        """Replace the element weights, e.g. with a beam-focusing stage result.

        Weights must lie within the Lorentzian disk (up to ``tol``); tiny
        overshoot from the cone solver is projected back onto the boundary.
        """
        q_new = np.asarray(q_new, dtype=complex).reshape(self.phi.shape)
        offset = q_new - LORENTZIAN_CENTER
        r = np.abs(offset)
        if np.any(r > LORENTZIAN_RADIUS * (1.0 + tol)):
            raise ValueError("weight outside the Lorentzian disk")
        scale = np.minimum(1.0, LORENTZIAN_RADIUS / np.maximum(r, 1e-300))
        q_proj = LORENTZIAN_CENTER + offset * np.where(r > LORENTZIAN_RADIUS, scale, 1.0)
        phi = np.mod(np.angle(q_proj - LORENTZIAN_CENTER), 2.0 * np.pi)
        return self._frozen(phi, q_proj, self.h, self.alpha, self.beta,
                            self.element_spacing)

    def q_flat(self) -> np.ndarray:
        return self.q.reshape(-1)

    def h_flat(self) -> np.ndarray:
        return self.h.reshape(-1)

    def circle_distance(self) -> np.ndarray:
        """|q - j/2| - 1/2 per element; zero on the Lorentzian circle."""
        return np.abs(self.q - LORENTZIAN_CENTER) - LORENTZIAN_RADIUS


def expand_dma_weights(waveform: Waveform, n_h: int) -> np.ndarray:
    """Replicate each microstrip's scalar weight across its ``n_h`` elements.

    Returns the stacked per-tone vectors, shape [n_f, N] with element order
    ``(i-1)*n_h + l``.
    """
    if n_h < 1:
        raise ValueError("n_h must be >= 1")
    return np.repeat(waveform.omega, n_h, axis=0).T.copy()


@dataclass(frozen=True)
class EffectiveChannel:
    """Channel rows with the transmit front end folded in.

    ``a[m, n]`` multiplies the stacked element weights; for the DMA this is
    ``gamma * q * h`` and ``a_hat[m, n] = gamma * w_bar * h`` multiplies the
    element weight vector instead. ``chain`` aggregates ``a`` over the
    elements of each RF chain so the received spectrum is
    ``s[m, n] = chain[m, n] @ omega[:, n]``.
    """

    a: np.ndarray = field(repr=False)             # [M, n_f, N]
    chain: np.ndarray = field(repr=False)         # [M, n_f, n_rf]
    a_hat: np.ndarray | None = field(default=None, repr=False)  # [M, n_f, N]

    @property
    def n_receivers(self) -> int:
        return self.a.shape[0]


def effective_rows(channel: ChannelTensor, array: ArraySpec,
                   dma: DmaState | None = None,
                   waveform: Waveform | None = None) -> EffectiveChannel:
    """Build the per-receiver effective rows for the current transmitter state.

    Fully digital: ``a`` is the raw coefficient row and each element is its
    own chain. DMA: ``a = gamma*q*h`` aggregated per microstrip, and when a
    waveform is supplied ``a_hat = gamma*w_bar*h`` is also produced for the
    beam-focusing stage.
    """
    n_v, n_h, m_count, n_f = channel.shape
    n = n_v * n_h
    gamma_rows = np.stack([channel.rows(m) for m in range(m_count)])  # [M, n_f, N]
    if array.architecture is Architecture.FULLY_DIGITAL:
        if dma is not None:
            raise ValueError("fully-digital array takes no DMA state")
        return EffectiveChannel(a=gamma_rows, chain=gamma_rows.copy())
    if dma is None:
        raise ValueError("DMA architecture requires a DmaState")
    if dma.q.shape != (n_v, n_h):
        raise ValueError("DMA state shape does not match the channel tensor")
    qh = (dma.q * dma.h).reshape(-1)
    a = gamma_rows * qh[None, None, :]
    chain = a.reshape(m_count, n_f, n_v, n_h).sum(axis=3)
    a_hat = None
    if waveform is not None:
        if waveform.n_rf != n_v:
            raise ValueError("waveform chain count does not match the array")
        wbar = expand_dma_weights(waveform, n_h)  # [n_f, N]
        a_hat = gamma_rows * wbar[None, :, :] * dma.h.reshape(-1)[None, None, :]
    return EffectiveChannel(a=a, chain=chain, a_hat=a_hat)
