"""Mobile Rician fading channel with Doppler, CFO, path loss, and AWGN.

The fading is flat (single tap): a fixed zero-phase line-of-sight
component of power K/(K+1) plus a diffuse sum-of-sinusoids component of
power 1/(K+1) band-limited to the Doppler frequency. Mobility maps time
to base-station distance and gates when the Doppler shift, the diffuse
process, and any frequency wander are active. A maximum-likelihood
Rician K-factor estimator closes the loop between generated envelopes
and the parameter driving them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .frame_codec import ComplexWaveform

__all__ = [
    "SPEED_OF_LIGHT",
    "ChannelParams",
    "MobilityState",
    "ChannelRealization",
    "EstimationError",
    "doppler_shift",
    "generate_fading",
    "apply_channel",
    "estimate_k_factor",
]

SPEED_OF_LIGHT = 2.99792458e8  # m/s


class EstimationError(RuntimeError):
    """Raised when a statistical estimate cannot be formed from the input."""


@dataclass(frozen=True)
class ChannelParams:
    """Propagation and impairment parameters for one receiver.

    ``doppler_hz`` is both the line-of-sight shift while the vehicle moves
    and the bandwidth of the diffuse component. ``cfo_hz`` is the constant
    residual oscillator offset on top of it. ``cfo_jitter_hz`` is the
    standard deviation of a block-wise carrier wander active only while
    moving; it models the mobile-stage frequency estimation errors that a
    frame-rate tracker cannot follow. Noise is set either as an absolute
    floor (``noise_power_dbm``, with 0 dBW = 30 dBm meaning unit sample
    power) or per-frame relative to the received signal
    (``target_snr_db``); leave both unset for a noiseless channel.
    """

    rician_k: float = 10.92
    doppler_hz: float = 0.0
    cfo_hz: float = 0.0
    cfo_jitter_hz: float = 0.0
    cfo_jitter_tau_s: float = 6.4e-4
    target_snr_db: float | None = None
    noise_power_dbm: float | None = None
    path_loss_exponent: float = 2.0
    reference_distance: float = 1.0
    delay_samples: int = 0
    n_sinusoids: int = 64

    def __post_init__(self) -> None:
        if self.rician_k < 0:
            raise ValueError("rician_k must be >= 0")
        if self.doppler_hz < 0:
            raise ValueError("doppler_hz must be >= 0")
        if self.cfo_jitter_hz < 0 or self.cfo_jitter_tau_s <= 0:
            raise ValueError("invalid cfo jitter parameters")
        if self.target_snr_db is not None and self.noise_power_dbm is not None:
            raise ValueError("set target_snr_db or noise_power_dbm, not both")
        if self.reference_distance <= 0:
            raise ValueError("reference_distance must be positive")
        if self.delay_samples < 0:
            raise ValueError("delay_samples must be >= 0")
        if self.n_sinusoids < 1:
            raise ValueError("n_sinusoids must be >= 1")


@dataclass(frozen=True)
class MobilityState:
    """Piecewise-linear motion: hold at start distance, travel, then stop.

    The vehicle is motionless before ``stationary_end``, moves with
    constant ``speed`` until ``mobile_end`` while its distance to the
    base station interpolates linearly from ``start_distance`` to
    ``end_distance``, and is motionless again afterwards.
    """

    start_distance: float
    end_distance: float | None = None
    stationary_end: float = 2.165
    mobile_end: float = 5.74
    speed: float = 0.876

    def __post_init__(self) -> None:
        if self.end_distance is None:
            object.__setattr__(self, "end_distance", self.start_distance)
        if self.start_distance <= 0 or self.end_distance <= 0:
            raise ValueError("distances must be positive")
        if self.mobile_end < self.stationary_end:
            raise ValueError("mobile_end must not precede stationary_end")
        if self.speed < 0:
            raise ValueError("speed must be >= 0")

    @classmethod
    def static(cls, distance: float) -> "MobilityState":
        """Never moves; distance fixed for all time."""
        return cls(distance, distance, stationary_end=np.inf, mobile_end=np.inf, speed=0.0)

    @classmethod
    def always_moving(cls, distance: float, speed: float = 0.876) -> "MobilityState":
        """In motion from t=0 onward at a fixed distance (gates Doppler on)."""
        return cls(distance, distance, stationary_end=0.0, mobile_end=np.inf, speed=speed)

    @property
    def travel_time(self) -> float:
        return self.mobile_end - self.stationary_end

    def motion_time(self, t) -> np.ndarray:
        """Seconds spent moving up to time t (the clock driving the fading)."""
        t = np.asarray(t, dtype=float)
        upper = self.travel_time if np.isfinite(self.travel_time) else np.inf
        return np.clip(t - self.stationary_end, 0.0, upper)

    def is_moving(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (t >= self.stationary_end) & (t < self.mobile_end) & (self.speed > 0)

    def distance(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if not np.isfinite(self.travel_time) or self.travel_time <= 0:
            return np.full(t.shape, float(self.start_distance))
        frac = self.motion_time(t) / self.travel_time
        return self.start_distance + (self.end_distance - self.start_distance) * frac


@dataclass(frozen=True)
class ChannelRealization:
    """Ground truth of one apply_channel call, for oracle comparison."""

    tap_gain: np.ndarray
    applied_cfo_hz: float
    applied_delay: int
    noise_power: float


def doppler_shift(speed: float, carrier_frequency: float) -> float:
    """Doppler frequency v * f_c / c in Hz."""
    if speed < 0:
        raise ValueError("speed must be >= 0")
    return speed * carrier_frequency / SPEED_OF_LIGHT


def _sos_parameters(rng: np.random.Generator, n_sinusoids: int):
    """Arrival angles and phases of the diffuse sum-of-sinusoids process."""
    angles = rng.uniform(0.0, 2.0 * np.pi, n_sinusoids)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_sinusoids)
    return angles, phases


def _diffuse_gain(angles, phases, doppler_hz: float, tau) -> np.ndarray:
    """Unit-power diffuse component evaluated at fading times tau."""
    tau = np.asarray(tau, dtype=float)
    n = angles.size
    rates = 2.0 * np.pi * doppler_hz * np.cos(angles)
    if tau.size * n <= 1_000_000:
        terms = np.exp(1j * (tau[:, None] * rates[None, :] + phases[None, :]))
        return terms.sum(axis=1) / np.sqrt(n)
    out = np.zeros(tau.shape, dtype=np.complex128)
    for rate, phi in zip(rates, phases):
        out += np.exp(1j * (rate * tau + phi))
    return out / np.sqrt(n)


# max sinusoid phase advance between interpolation knots (rad); keeps the
# interpolation error of the sampled process about 70 dB down
_KNOT_PHASE_STEP = 0.05


def _diffuse_gain_sampled(angles, phases, doppler_hz: float, tau) -> np.ndarray:
    """Diffuse gain over a slowly-varying tau grid via knot interpolation.

    The process is band-limited to doppler_hz, so within a frame it moves
    through a tiny phase angle; evaluating the sinusoid sum on a few
    knots and interpolating is exact to well below the noise floor while
    avoiding a per-sample triple product.
    """
    tau = np.asarray(tau, dtype=float)
    span = float(np.ptp(tau))
    if span == 0.0 or doppler_hz == 0.0:
        value = _diffuse_gain(angles, phases, doppler_hz, tau[:1])
        return np.full(tau.shape, value[0])
    n_knots = int(np.ceil(2.0 * np.pi * doppler_hz * span / _KNOT_PHASE_STEP)) + 2
    if n_knots >= tau.size:
        return _diffuse_gain(angles, phases, doppler_hz, tau)
    idx = np.unique(np.linspace(0, tau.size - 1, n_knots).round().astype(int))
    knots = _diffuse_gain(angles, phases, doppler_hz, tau[idx])
    sample = np.arange(tau.size)
    return np.interp(sample, idx, knots.real) + 1j * np.interp(sample, idx, knots.imag)


def _rician_weights(k: float) -> tuple[float, float]:
    """(LOS, diffuse) amplitude weights; exact pure-LOS limit for K=inf."""
    if np.isinf(k):
        return 1.0, 0.0
    return float(np.sqrt(k / (k + 1.0))), float(np.sqrt(1.0 / (k + 1.0)))


def _fading_seed(seed):
    return [int(s) for s in np.atleast_1d(seed)] + [0]


def _noise_seed(seed, start_sample: int):
    return [int(s) for s in np.atleast_1d(seed)] + [1, int(start_sample)]


def generate_fading(
    params: ChannelParams, n_samples: int, sample_rate: float, seed
) -> np.ndarray:
    """Rician flat-fading gain sequence, deterministic for a given seed.

    LOS power K/(K+1) at fixed zero phase plus a diffuse component of
    power 1/(K+1) whose spectrum is confined to +-doppler_hz.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    rng = np.random.default_rng(_fading_seed(seed))
    angles, phases = _sos_parameters(rng, params.n_sinusoids)
    tau = np.arange(n_samples) / sample_rate
    los, diff = _rician_weights(params.rician_k)
    return los + diff * _diffuse_gain(angles, phases, params.doppler_hz, tau)


def _block_wander(
    rng: np.random.Generator, n: int, std_hz: float, block_samples: int
) -> np.ndarray:
    """Piecewise-constant frequency wander, one draw per block."""
    n_blocks = -(-n // block_samples)
    draws = rng.normal(0.0, std_hz, n_blocks)
    return np.repeat(draws, block_samples)[:n]


def apply_channel(
    tx: ComplexWaveform,
    params: ChannelParams,
    mobility: MobilityState,
    seed,
    t0: float = 0.0,
) -> tuple[ComplexWaveform, ChannelRealization]:
    """Propagate a waveform through the mobile fading channel.

    rx[n] = a(d(t_n)) * h[n] * tx[n - delay] * exp(j*phi[n]) + w[n], where
    phi integrates the instantaneous frequency offset (constant CFO, plus
    the Doppler shift and carrier wander while the vehicle moves), a() is
    the amplitude path loss (d0/d)^(exponent/2), and w is complex white
    Gaussian noise at the configured level. The fading realization is a
    function of ``seed`` alone, so consecutive calls with increasing
    ``t0`` continue the same channel; noise and wander draws are keyed by
    (seed, start sample) and therefore differ per call deterministically.
    """
    if len(tx) == 0:
        raise ValueError("tx waveform must be non-empty")
    fs = tx.sample_rate
    delay = params.delay_samples
    n = len(tx) + delay
    x = np.concatenate([np.zeros(delay, dtype=np.complex128), tx.samples])
    t = t0 + np.arange(n) / fs

    fading_rng = np.random.default_rng(_fading_seed(seed))
    angles, phases = _sos_parameters(fading_rng, params.n_sinusoids)
    los, diff = _rician_weights(params.rician_k)
    h = los + diff * _diffuse_gain_sampled(
        angles, phases, params.doppler_hz, mobility.motion_time(t)
    )

    d = mobility.distance(t)
    amp = (params.reference_distance / d) ** (params.path_loss_exponent / 2.0)

    start_sample = int(round(t0 * fs))
    draw_rng = np.random.default_rng(_noise_seed(seed, start_sample))
    moving = mobility.is_moving(t)
    f_inst = np.full(n, params.cfo_hz, dtype=float)
    f_inst += params.doppler_hz * moving
    if params.cfo_jitter_hz > 0:
        block = max(1, int(round(params.cfo_jitter_tau_s * fs)))
        f_inst += _block_wander(draw_rng, n, params.cfo_jitter_hz, block) * moving

    phase = np.empty(n, dtype=float)
    phase[0] = 0.0
    np.cumsum(2.0 * np.pi * f_inst[:-1] / fs, out=phase[1:])
    noiseless = amp * h * x * np.exp(1j * phase)

    if params.target_snr_db is not None:
        signal_power = float(np.mean(np.abs(noiseless) ** 2))
        noise_power = signal_power / 10.0 ** (params.target_snr_db / 10.0)
    elif params.noise_power_dbm is not None:
        noise_power = 10.0 ** ((params.noise_power_dbm - 30.0) / 10.0)
    else:
        noise_power = 0.0

    rx = noiseless
    if noise_power > 0:
        w = draw_rng.normal(0.0, np.sqrt(noise_power / 2.0), (n, 2))
        rx = noiseless + w[:, 0] + 1j * w[:, 1]

    truth = ChannelRealization(
        tap_gain=h,
        applied_cfo_hz=float(np.mean(f_inst)),
        applied_delay=delay,
        noise_power=noise_power,
    )
    return ComplexWaveform(rx, fs), truth


def _rician_moment_start(m2: float, m4: float) -> tuple[float, float]:
    nc2 = float(np.sqrt(max(2.0 * m2 * m2 - m4, 0.0)))
    s2 = max((m2 - nc2) / 2.0, 1e-12 * m2)
    return np.sqrt(nc2), s2


def estimate_k_factor(envelope_samples) -> tuple[float, float, float]:
    """Maximum-likelihood Rician fit of envelope magnitudes.

    Returns (K, non_centrality, scale) with K = nu^2 / (2 sigma^2). The
    likelihood is maximised by the EM fixed point nu <- E[x * I1/I0(x
    nu/sigma^2)], sigma^2 <- (E[x^2] - nu^2)/2, run on a fine histogram
    of the samples so that a million-sample fit stays fast.
    """
    x = np.asarray(envelope_samples, dtype=float).ravel()
    if x.size < 1000:
        raise ValueError(f"need at least 1000 samples, got {x.size}")
    if not np.all(np.isfinite(x)) or np.any(x < 0):
        raise ValueError("envelope samples must be finite and non-negative")
    if np.ptp(x) == 0.0:
        raise EstimationError("degenerate envelope: all samples equal")

    counts, edges = np.histogram(x, bins=4096)
    centers = 0.5 * (edges[:-1] + edges[1:])
    keep = counts > 0
    centers, weights = centers[keep], counts[keep] / counts.sum()

    m2 = float(np.sum(weights * centers**2))
    m4 = float(np.sum(weights * centers**4))
    nu, s2 = _rician_moment_start(m2, m4)
    scale_ref = np.sqrt(m2)
    for _ in range(2000):
        kappa = centers * nu / s2
        ratio = special.i1e(kappa) / special.i0e(kappa)
        nu_new = float(np.sum(weights * centers * ratio))
        s2_new = max((m2 - nu_new**2) / 2.0, 1e-300)
        converged = abs(nu_new - nu) <= 1e-10 * scale_ref and abs(s2_new - s2) <= 1e-10 * m2
        nu, s2 = nu_new, s2_new
        if converged:
            break
    sigma = float(np.sqrt(s2))
    k = float(nu**2 / (2.0 * s2))
    return k, float(nu), sigma
