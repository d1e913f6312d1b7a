"""Near-field line-of-sight channel coefficients and field-region boundaries.

Pure geometry: every coefficient is ``A * exp(-j*2*pi*d/lambda)`` with the
amplitude set by the free-space spreading loss and the element radiation
profile. No fading, no multipath.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scenario import ArraySpec, FrequencyPlan, ReceiverSpec


def radiation_profile(theta, boresight_gain: float = 0.0):
    """Element gain pattern ``G_t * cos(theta)**(G_t/2 - 1)`` on the front
    hemisphere, zero behind the array; ``G_t = 2*(b+1)``."""
    theta = np.asarray(theta, dtype=float)
    gt = 2.0 * (boresight_gain + 1.0)
    front = (theta >= 0.0) & (theta <= np.pi / 2.0)
    out = np.where(front, gt * np.cos(np.where(front, theta, 0.0)) ** (gt / 2.0 - 1.0), 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def channel_coefficient(element_pos, receiver_pos, wavelength: float,
                        boresight_gain: float = 0.0) -> complex:
    """Complex LoS gain between one element and one receiver at one tone."""
    delta = np.asarray(receiver_pos, dtype=float) - np.asarray(element_pos, dtype=float)
    d = float(np.linalg.norm(delta))
    if d <= 0.0:
        raise ValueError("receiver coincides with the array element")
    theta = math.acos(np.clip(delta[2] / d, -1.0, 1.0))
    amp = math.sqrt(radiation_profile(theta, boresight_gain)) * wavelength / (4.0 * math.pi * d)
    return amp * np.exp(-2j * math.pi * d / wavelength)


@dataclass(frozen=True)
class ChannelTensor:
    """All element-to-receiver coefficients, one per tone.

    ``gamma[i, l, m, n]`` is the coefficient between element (i, l) and
    receiver m at tone n; ``|gamma| == gain`` entry-wise.
    """

    gamma: np.ndarray = field(repr=False)       # [n_v, n_h, M, n_f] complex
    gain: np.ndarray = field(repr=False)        # [n_v, n_h, M, n_f]
    distances: np.ndarray = field(repr=False)   # [n_v, n_h, M]
    elevations: np.ndarray = field(repr=False)  # [n_v, n_h, M]

    @property
    def shape(self):
        return self.gamma.shape

    @property
    def n_receivers(self) -> int:
        return self.gamma.shape[2]

    @property
    def n_tones(self) -> int:
        return self.gamma.shape[3]

    def rows(self, m: int) -> np.ndarray:
        """Per-tone flattened coefficient rows for receiver ``m``:
        shape [n_f, N] with element order ``(i-1)*n_h + l``."""
        n_v, n_h, _, n_f = self.gamma.shape
        return np.moveaxis(self.gamma[:, :, m, :], -1, 0).reshape(n_f, n_v * n_h)

    def vector_norms(self) -> np.ndarray:
        """l2 norm of the per-receiver channel vector at each tone, [M, n_f]."""
        return np.sqrt(np.sum(self.gain ** 2, axis=(0, 1)))

    def to_csv(self, path) -> None:
        """Debug dump: one row per (element, receiver, tone) coefficient."""
        n_v, n_h, m_count, n_f = self.gamma.shape
        with open(path, "w") as fh:
            fh.write("row,col,receiver,tone,re,im,gain,distance,elevation\n")
            for i in range(n_v):
                for l in range(n_h):
                    for m in range(m_count):
                        for n in range(n_f):
                            g = self.gamma[i, l, m, n]
                            fh.write(f"{i},{l},{m},{n},{g.real:.12e},{g.imag:.12e},"
                                     f"{self.gain[i, l, m, n]:.12e},"
                                     f"{self.distances[i, l, m]:.12e},"
                                     f"{self.elevations[i, l, m]:.12e}\n")


def build_channel(array: ArraySpec, receivers, plan: FrequencyPlan,
                  boresight_gain: float = 0.0) -> ChannelTensor:
    """Evaluate the full coefficient tensor for a validated scenario."""
    positions = np.array([np.asarray(r.position if isinstance(r, ReceiverSpec) else r,
                                     dtype=float) for r in receivers])
    delta = positions[None, None, :, :] - array.element_positions[:, :, None, :]
    d = np.linalg.norm(delta, axis=-1)
    if np.min(d) <= 0.0:
        raise ValueError("receiver coincides with an array element")
    theta = np.arccos(np.clip(delta[..., 2] / d, -1.0, 1.0))
    lam = plan.wavelengths
    amp = (np.sqrt(radiation_profile(theta, boresight_gain))[..., None]
           * lam / (4.0 * np.pi * d[..., None]))
    phase = np.exp(-2j * np.pi * d[..., None] / lam)
    gamma = amp * phase
    for a in (gamma, amp, d, theta):
        a.flags.writeable = False
    return ChannelTensor(gamma=gamma, gain=amp, distances=d, elevations=theta)


def field_boundaries(array: ArraySpec, wavelength: float) -> tuple[float, float]:
    """Fresnel and Fraunhofer distances ``(d_fs, d_fr)`` for the aperture.

    ``D`` is the diagonal of the nominal square aperture; the radiative
    near-field region is ``d_fs < d < d_fr``.
    """
    d_ap = array.aperture_diagonal
    d_fs = (d_ap ** 4 / (8.0 * wavelength)) ** (1.0 / 3.0)
    d_fr = 2.0 * d_ap ** 2 / wavelength
    return d_fs, d_fr
