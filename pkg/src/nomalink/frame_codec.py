"""Bit/symbol mapping and OFDM frame assembly for a single user payload.

A frame is a fixed number of OFDM symbols. Each symbol carries data and
pilot subcarriers interleaved on a fixed grid, mapped onto the centre of
an oversized FFT (DC nulled, outer bins zero-padded), and protected by a
cyclic prefix. All operations are pure functions of their inputs, so they
are safe to call from concurrent Monte Carlo workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import log2

import numpy as np

__all__ = [
    "FrameConfig",
    "ComplexWaveform",
    "SubcarrierGrid",
    "FrameLostError",
    "qam_modulate",
    "qam_demodulate",
    "assemble_frame",
    "disassemble_symbol",
    "occupied_bins",
    "pilot_mask",
    "pilot_values",
]


class FrameLostError(RuntimeError):
    """A frame or OFDM symbol could not be recovered from the samples."""


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class FrameConfig:
    """Waveform dimensioning for one OFDM frame.

    Defaults describe the 3-vehicle downlink testbed: 125 data + 25 pilot
    subcarriers per symbol, 5 symbols per frame, 4QAM, 64-sample cyclic
    prefix, 500 kS/s complex baseband at a 2.34 GHz carrier. The nominal
    RF bandwidth is carried as metadata only; all timing derives from
    ``sample_rate``.
    """

    data_subcarriers: int = 125
    pilot_subcarriers: int = 25
    symbols_per_frame: int = 5
    fft_size: int = 256
    cp_length: int = 64
    modulation_order: int = 4
    sample_rate: float = 5.0e5
    carrier_frequency: float = 2.34e9
    bandwidth: float = 8.0e5

    def __post_init__(self) -> None:
        if self.data_subcarriers <= 0 or self.pilot_subcarriers <= 0:
            raise ValueError("subcarrier counts must be positive")
        if not _is_power_of_two(self.fft_size):
            raise ValueError("fft_size must be a power of two")
        # DC is nulled, so the occupied span needs fft_size > total.
        if self.total_subcarriers >= self.fft_size:
            raise ValueError(
                f"fft_size {self.fft_size} too small for "
                f"{self.total_subcarriers} occupied subcarriers plus DC"
            )
        if not (0 <= self.cp_length <= self.fft_size):
            raise ValueError("cp_length must lie in [0, fft_size]")
        order = self.modulation_order
        if not _is_power_of_two(order) or int(log2(order)) % 2 != 0:
            raise ValueError("modulation_order must be a power of 4 (square QAM)")
        if self.symbols_per_frame <= 0:
            raise ValueError("symbols_per_frame must be positive")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def total_subcarriers(self) -> int:
        return self.data_subcarriers + self.pilot_subcarriers

    @property
    def bits_per_symbol(self) -> int:
        return int(log2(self.modulation_order))

    @property
    def payload_bits(self) -> int:
        """Data bits carried by one frame (1250 for the defaults)."""
        return self.data_subcarriers * self.symbols_per_frame * self.bits_per_symbol

    @property
    def symbol_samples(self) -> int:
        return self.fft_size + self.cp_length

    @property
    def frame_samples(self) -> int:
        return self.symbols_per_frame * self.symbol_samples

    @property
    def subcarrier_spacing(self) -> float:
        return self.sample_rate / self.fft_size

    @property
    def frame_duration(self) -> float:
        return self.frame_samples / self.sample_rate


@dataclass(frozen=True)
class ComplexWaveform:
    """Complex baseband sample sequence with its sample rate."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.complex128)
        if not np.all(np.isfinite(samples.view(np.float64))):
            raise ValueError("waveform samples must be finite")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class SubcarrierGrid:
    """Frequency-domain content of one frame: symbols x occupied subcarriers.

    ``pilot_mask`` marks pilot positions (identical for every row) and
    ``pilot_values`` records the transmitted pilot sequence so receivers
    and test oracles can rebuild the reference exactly.
    """

    values: np.ndarray
    pilot_mask: np.ndarray
    pilot_values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.complex128)
        mask = np.asarray(self.pilot_mask, dtype=bool)
        pilots = np.asarray(self.pilot_values, dtype=np.complex128)
        if values.ndim != 2 or mask.ndim != 1 or values.shape[1] != mask.size:
            raise ValueError("grid shape does not match pilot mask")
        if int(mask.sum()) != pilots.size:
            raise ValueError("pilot_values length must equal pilot count")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "pilot_mask", mask)
        object.__setattr__(self, "pilot_values", pilots)

    @property
    def data_mask(self) -> np.ndarray:
        return ~self.pilot_mask


@lru_cache(maxsize=64)
def _occupied_bins_cached(cfg: FrameConfig) -> np.ndarray:
    total = cfg.total_subcarriers
    n_neg = total // 2
    n_pos = total - n_neg
    offsets = np.concatenate([np.arange(-n_neg, 0), np.arange(1, n_pos + 1)])
    return _frozen(offsets % cfg.fft_size)


def occupied_bins(cfg: FrameConfig) -> np.ndarray:
    """FFT bin indices of the occupied subcarriers, in ascending frequency.

    Subcarriers are centred around DC with the DC bin nulled: for N
    occupied positions the offsets are -N//2..-1 and 1..ceil(N/2).
    """
    return _occupied_bins_cached(cfg)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@lru_cache(maxsize=64)
def _pilot_mask_cached(cfg: FrameConfig) -> np.ndarray:
    stride = cfg.total_subcarriers // cfg.pilot_subcarriers
    if stride < 1:
        raise ValueError("more pilots than occupied subcarriers")
    mask = np.zeros(cfg.total_subcarriers, dtype=bool)
    mask[np.arange(cfg.pilot_subcarriers) * stride] = True
    return _frozen(mask)


def pilot_mask(cfg: FrameConfig) -> np.ndarray:
    """Boolean pilot mask over the occupied subcarriers (fixed per config).

    Pilots sit on every (total/pilots)-th occupied position starting at
    index 0, i.e. every 6th position for the 150/25 defaults.
    """
    return _pilot_mask_cached(cfg)


@lru_cache(maxsize=256)
def _pilot_values_cached(cfg: FrameConfig, pilot_seed) -> np.ndarray:
    rng = np.random.default_rng(pilot_seed)
    values = (2.0 * rng.integers(0, 2, cfg.pilot_subcarriers) - 1.0).astype(np.complex128)
    return _frozen(values)


def pilot_values(cfg: FrameConfig, pilot_seed) -> np.ndarray:
    """Unit-magnitude BPSK pilot sequence, reproducible from the seed."""
    if isinstance(pilot_seed, (list, np.ndarray)):
        pilot_seed = tuple(int(s) for s in pilot_seed)
    return _pilot_values_cached(cfg, pilot_seed)


def _axis_bits(order: int) -> int:
    return int(log2(order)) // 2


def _gray_encode(n: np.ndarray) -> np.ndarray:
    return n ^ (n >> 1)


def _gray_decode(g: np.ndarray, width: int) -> np.ndarray:
    b = g.copy()
    shift = 1
    while shift < width:
        b ^= b >> shift
        shift *= 2
    return b


def _axis_norm(order: int) -> float:
    # unit average energy for the square constellation
    return np.sqrt(2.0 * (order - 1) / 3.0)


def qam_modulate(bits, order: int = 4) -> np.ndarray:
    """Gray-map a bit sequence onto the unit-energy square QAM constellation.

    Bits are consumed log2(order) at a time; the first half of each group
    selects the in-phase level, the second half the quadrature level. For
    4QAM the pair (b1, b0) maps to ((1 - 2*b1) + 1j*(1 - 2*b0)) / sqrt(2).
    """
    if not _is_power_of_two(order) or int(log2(order)) % 2 != 0:
        raise ValueError("order must be a power of 4 (square QAM)")
    bits = np.asarray(bits, dtype=np.int64)
    if bits.ndim != 1:
        raise ValueError("bits must be one-dimensional")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must contain only 0 and 1")
    k = 2 * _axis_bits(order)
    if bits.size % k != 0:
        raise ValueError(f"bit count {bits.size} not divisible by {k} bits/symbol")

    p = _axis_bits(order)
    levels = int(np.sqrt(order))
    weights = 1 << np.arange(p - 1, -1, -1)
    groups = bits.reshape(-1, k)
    v_i = groups[:, :p] @ weights
    v_q = groups[:, p:] @ weights
    idx_i = _gray_decode(v_i, p)
    idx_q = _gray_decode(v_q, p)
    amp_i = (levels - 1) - 2.0 * idx_i
    amp_q = (levels - 1) - 2.0 * idx_q
    return (amp_i + 1j * amp_q) / _axis_norm(order)


def qam_demodulate(symbols, order: int = 4) -> np.ndarray:
    """Hard minimum-distance decision back to bits; inverse of qam_modulate."""
    if not _is_power_of_two(order) or int(log2(order)) % 2 != 0:
        raise ValueError("order must be a power of 4 (square QAM)")
    symbols = np.asarray(symbols, dtype=np.complex128)
    if not np.all(np.isfinite(symbols.view(np.float64))):
        raise ValueError("symbols must be finite")

    p = _axis_bits(order)
    levels = int(np.sqrt(order))
    norm = _axis_norm(order)

    def axis_decision(vals: np.ndarray) -> np.ndarray:
        idx = np.clip(np.round(((levels - 1) - vals * norm) / 2.0), 0, levels - 1)
        v = _gray_encode(idx.astype(np.int64))
        out = np.empty((vals.size, p), dtype=np.uint8)
        for j in range(p):
            out[:, j] = (v >> (p - 1 - j)) & 1
        return out

    bits_i = axis_decision(symbols.real)
    bits_q = axis_decision(symbols.imag)
    return np.concatenate([bits_i, bits_q], axis=1).reshape(-1)


def _spectrum_scale(cfg: FrameConfig) -> float:
    # keeps unit-power occupied subcarriers mapping to unit mean sample power
    return cfg.fft_size / np.sqrt(cfg.total_subcarriers)


def assemble_frame(payload, cfg: FrameConfig, pilot_seed) -> tuple[ComplexWaveform, SubcarrierGrid]:
    """Build one frame: modulate, interleave pilots, IFFT, prepend prefixes.

    Returns the time-domain waveform (symbols_per_frame * (fft + cp)
    samples) together with the transmitted grid for oracle use.
    """
    payload = np.asarray(payload, dtype=np.int64)
    if payload.size != cfg.payload_bits:
        raise ValueError(
            f"payload must be {cfg.payload_bits} bits, got {payload.size}"
        )
    mask = pilot_mask(cfg)
    pilots = pilot_values(cfg, pilot_seed)
    data_syms = qam_modulate(payload, cfg.modulation_order)
    data_per_symbol = data_syms.reshape(cfg.symbols_per_frame, cfg.data_subcarriers)

    grid = np.empty((cfg.symbols_per_frame, cfg.total_subcarriers), dtype=np.complex128)
    grid[:, mask] = pilots
    grid[:, ~mask] = data_per_symbol

    spectra = np.zeros((cfg.symbols_per_frame, cfg.fft_size), dtype=np.complex128)
    spectra[:, occupied_bins(cfg)] = grid
    bodies = np.fft.ifft(spectra, axis=1) * _spectrum_scale(cfg)
    with_cp = np.concatenate([bodies[:, cfg.fft_size - cfg.cp_length :], bodies], axis=1)

    waveform = ComplexWaveform(with_cp.reshape(-1), cfg.sample_rate)
    return waveform, SubcarrierGrid(grid, mask, pilots)


def disassemble_symbol(samples, cfg: FrameConfig, symbol_start: int = 0) -> np.ndarray:
    """Recover one grid row from fft_size samples starting after the prefix.

    Exactly inverts the per-symbol transform of assemble_frame when the
    segment is aligned and the channel is transparent.
    """
    if isinstance(samples, ComplexWaveform):
        samples = samples.samples
    samples = np.asarray(samples, dtype=np.complex128)
    if symbol_start < 0 or samples.size - symbol_start < cfg.fft_size:
        raise FrameLostError(
            f"segment too short: need {cfg.fft_size} samples at offset {symbol_start}"
        )
    body = samples[symbol_start : symbol_start + cfg.fft_size]
    spectrum = np.fft.fft(body) / _spectrum_scale(cfg)
    return spectrum[occupied_bins(cfg)]
