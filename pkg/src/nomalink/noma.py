"""Power-domain superposition, power allocation, and the SIC decoder.

Users are indexed 1..K ordered far/weak to near/strong: user 1 holds the
largest power coefficient and decodes directly, treating everyone else as
noise; user k first detects and subtracts users 1..k-1 (hard-decision
remodulation), then decodes its own signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .frame_codec import (
    ComplexWaveform,
    FrameConfig,
    SubcarrierGrid,
    assemble_frame,
    pilot_values,
    qam_demodulate,
    qam_modulate,
)

__all__ = [
    "PowerAllocation",
    "DEFAULT_POWER_COEFFICIENTS",
    "allocate_power_by_distance",
    "superpose",
    "sic_decode",
    "build_downlink_frame",
    "composite_pilot_values",
    "user_pilot_seed",
]

# Measured testbed preset (far to near). Distinct from the distance-squared
# policy, which yields near-equal coefficients for the testbed geometry.
DEFAULT_POWER_COEFFICIENTS = (0.761, 0.191, 0.048)

_SUM_TOL = 1e-9


@dataclass(frozen=True)
class PowerAllocation:
    """Per-user power coefficients, ordered far/weak to near/strong."""

    coefficients: tuple

    def __post_init__(self) -> None:
        coeffs = tuple(float(c) for c in np.atleast_1d(self.coefficients))
        if len(coeffs) == 0:
            raise ValueError("allocation needs at least one coefficient")
        if any(c <= 0 for c in coeffs):
            raise ValueError("power coefficients must be positive")
        if abs(sum(coeffs) - 1.0) > _SUM_TOL:
            raise ValueError(f"power coefficients must sum to 1, got {sum(coeffs):.9f}")
        if any(a < b - _SUM_TOL for a, b in zip(coeffs, coeffs[1:])):
            raise ValueError("coefficients must be non-increasing (weak user first)")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def n_users(self) -> int:
        return len(self.coefficients)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.sqrt(np.asarray(self.coefficients))

    @classmethod
    def testbed_default(cls) -> "PowerAllocation":
        return cls(DEFAULT_POWER_COEFFICIENTS)


def allocate_power_by_distance(distances) -> PowerAllocation:
    """Coefficients proportional to squared base-station distance.

    alpha_k = d_k^2 / sum_j d_j^2, ordered so the farthest user holds the
    largest coefficient.
    """
    d = np.asarray(distances, dtype=float)
    if d.ndim != 1 or d.size == 0:
        raise ValueError("distances must be a non-empty 1-D sequence")
    if np.any(d <= 0):
        raise ValueError("distances must be positive")
    alpha = d**2 / np.sum(d**2)
    alpha = np.sort(alpha)[::-1]
    # renormalise away float rounding so the invariant holds exactly
    alpha = alpha / alpha.sum()
    return PowerAllocation(tuple(alpha))


def superpose(waveforms: Sequence[ComplexWaveform], alloc: PowerAllocation) -> ComplexWaveform:
    """Amplitude-weighted sum of per-user waveforms: sum_k sqrt(alpha_k) x_k."""
    if len(waveforms) != alloc.n_users:
        raise ValueError(
            f"got {len(waveforms)} waveforms for {alloc.n_users} coefficients"
        )
    lengths = {len(w) for w in waveforms}
    if len(lengths) != 1:
        raise ValueError("user waveforms must have equal length")
    rates = {w.sample_rate for w in waveforms}
    if len(rates) != 1:
        raise ValueError("user waveforms must share a sample rate")
    out = np.zeros(lengths.pop(), dtype=np.complex128)
    for amp, wave in zip(alloc.amplitudes, waveforms):
        out += amp * wave.samples
    return ComplexWaveform(out, rates.pop())


def sic_decode(
    symbols,
    alloc: PowerAllocation,
    user: int,
    order: int = 4,
    demodulate: Callable = qam_demodulate,
    remodulate: Callable = qam_modulate,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Successive interference cancellation on equalized composite symbols.

    For stage j = 1..user-1: hard-demodulate user j (remaining users act
    as noise), remodulate, scale by sqrt(alpha_j) and subtract. The
    returned own-symbol sequence is the final residual scaled by
    1/sqrt(alpha_user); stage decisions are returned for error accounting.
    User 1 performs zero stages. Decision errors propagate as symbol
    errors by design: imperfect cancellation is a measured phenomenon,
    not a failure mode.
    """
    if not 1 <= user <= alloc.n_users:
        raise ValueError(f"user index {user} outside 1..{alloc.n_users}")
    residual = np.asarray(symbols, dtype=np.complex128).copy()
    amps = alloc.amplitudes
    stage_bits: list[np.ndarray] = []
    for j in range(user - 1):
        bits_j = demodulate(residual / amps[j], order)
        stage_bits.append(bits_j)
        residual -= amps[j] * remodulate(bits_j, order)
    return residual / amps[user - 1], stage_bits


def user_pilot_seed(pilot_seed: int, user: int) -> tuple[int, int]:
    """Per-user pilot sequence seed; keeps composite pilot power near unity."""
    return (int(pilot_seed), int(user))


@lru_cache(maxsize=256)
def _composite_pilots_cached(
    cfg: FrameConfig, alloc: PowerAllocation, pilot_seed: int
) -> np.ndarray:
    out = np.zeros(cfg.pilot_subcarriers, dtype=np.complex128)
    for k, amp in enumerate(alloc.amplitudes, start=1):
        out += amp * pilot_values(cfg, user_pilot_seed(pilot_seed, k))
    out.flags.writeable = False
    return out


def composite_pilot_values(cfg: FrameConfig, alloc: PowerAllocation, pilot_seed: int) -> np.ndarray:
    """Superposed pilot reference as seen on the air interface."""
    return _composite_pilots_cached(cfg, alloc, int(pilot_seed))


def build_downlink_frame(
    payloads: Sequence,
    cfg: FrameConfig,
    alloc: PowerAllocation,
    pilot_seed: int,
) -> tuple[ComplexWaveform, list[SubcarrierGrid]]:
    """Assemble one frame per user and superpose them for transmission."""
    if len(payloads) != alloc.n_users:
        raise ValueError(f"need {alloc.n_users} payloads, got {len(payloads)}")
    waves = []
    grids = []
    for k, payload in enumerate(payloads, start=1):
        wave, grid = assemble_frame(payload, cfg, user_pilot_seed(pilot_seed, k))
        waves.append(wave)
        grids.append(grid)
    return superpose(waves, alloc), grids
