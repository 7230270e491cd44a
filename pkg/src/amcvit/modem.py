"""Baseband modulators and the multipath + AWGN channel.

Ten schemes are supported. Linear schemes (OOK, ASK, PAM, DQPSK, OQPSK) are
held at the sample rate and smoothed by a short root-raised-cosine FIR;
continuous-phase schemes (CPFSK, GFSK, GMSK) integrate a (possibly
Gaussian-filtered) frequency pulse into a unit-modulus phase trajectory.
Every stage is a pure function of its inputs, seeds included.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from amcvit.errors import (
    BitCountMismatch,
    InvalidScheme,
    InvalidSpec,
    LengthMismatch,
    NonIntegerDelay,
    ZeroNoise,
)
from amcvit.rng import child_seed, make_rng

DEFAULT_SAMPLE_RATE_HZ = 200_000.0
DEFAULT_PATH_DELAYS_S = (0.0, 0.0004, 0.0008)
DEFAULT_PATH_GAINS_DB = (0.0, -3.0, -6.0)
DEFAULT_PULSE_TAPS = 8
RRC_ROLLOFF = 0.35
CPM_INDEX = 0.5
GAUSSIAN_SPAN_SYMBOLS = 4


class ModulationScheme(enum.Enum):
    """The ten modulation formats; ``label`` is the class index used everywhere."""

    OOK = "OOK"
    ASK4 = "4ASK"
    ASK8 = "8ASK"
    PAM4 = "4PAM"
    PAM16 = "16PAM"
    CPFSK = "CPFSK"
    GFSK = "GFSK"
    GMSK = "GMSK"
    DQPSK = "DQPSK"
    OQPSK = "OQPSK"

    @property
    def label(self) -> int:
        return _LABELS[self]

    @property
    def bits_per_symbol(self) -> int:
        return _BITS_PER_SYMBOL[self]

    @property
    def is_cpm(self) -> bool:
        return self in (ModulationScheme.CPFSK, ModulationScheme.GFSK, ModulationScheme.GMSK)

    @classmethod
    def from_label(cls, label: int) -> ModulationScheme:
        if not 0 <= int(label) < len(cls):
            raise InvalidScheme(f"label {label} outside [0, {len(cls) - 1}]")
        return list(cls)[int(label)]

    @classmethod
    def parse(cls, name: str | ModulationScheme) -> ModulationScheme:
        """Look a scheme up by its display name (``"4ASK"``) or member name (``"ASK4"``)."""
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper()
        for scheme in cls:
            if key in (scheme.value, scheme.name):
                return scheme
        raise InvalidScheme(f"unknown modulation scheme {name!r}; expected one of {scheme_names()}")


_LABELS = {scheme: i for i, scheme in enumerate(ModulationScheme)}
_BITS_PER_SYMBOL = {
    ModulationScheme.OOK: 1,
    ModulationScheme.ASK4: 2,
    ModulationScheme.ASK8: 3,
    ModulationScheme.PAM4: 2,
    ModulationScheme.PAM16: 4,
    ModulationScheme.CPFSK: 1,
    ModulationScheme.GFSK: 1,
    ModulationScheme.GMSK: 1,
    ModulationScheme.DQPSK: 2,
    ModulationScheme.OQPSK: 2,
}
GAUSSIAN_BT = {ModulationScheme.GFSK: 0.5, ModulationScheme.GMSK: 0.3}


def scheme_names() -> list[str]:
    return [s.value for s in ModulationScheme]


@dataclass(frozen=True)
class IQSignal:
    """Complex baseband samples at a fixed sample rate."""

    samples: np.ndarray
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128)
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidSpec("IQSignal needs a non-empty 1-D sample array")
        if not np.all(np.isfinite(samples)):
            raise InvalidSpec("IQSignal samples must be finite")
        if not self.sample_rate_hz > 0:
            raise InvalidSpec(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


@dataclass(frozen=True)
class FrameSpec:
    scheme: ModulationScheme
    n_symbols: int = 1024
    samples_per_symbol: int = 8
    rng_seed: int = 0
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ

    def validate(self) -> None:
        if not isinstance(self.scheme, ModulationScheme):
            raise InvalidSpec(f"scheme must be a ModulationScheme, got {self.scheme!r}")
        if int(self.n_symbols) < 1 or int(self.samples_per_symbol) < 1:
            raise InvalidSpec("n_symbols and samples_per_symbol must be positive")
        if self.scheme is ModulationScheme.OQPSK and self.samples_per_symbol % 2:
            raise InvalidSpec("OQPSK needs an even samples_per_symbol for the half-symbol offset")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise InvalidSpec("rng_seed must fit in 64 unsigned bits")
        if not self.sample_rate_hz > 0:
            raise InvalidSpec("sample_rate_hz must be positive")


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float = 10.0
    path_delays_s: tuple[float, ...] = DEFAULT_PATH_DELAYS_S
    path_gains_db: tuple[float, ...] = DEFAULT_PATH_GAINS_DB
    pulse_filter_taps: int = DEFAULT_PULSE_TAPS
    rng_seed: int = 0

    def __post_init__(self):
        delays = tuple(float(d) for d in self.path_delays_s)
        gains = tuple(float(g) for g in self.path_gains_db)
        object.__setattr__(self, "path_delays_s", delays)
        object.__setattr__(self, "path_gains_db", gains)
        if not delays:
            raise InvalidSpec("at least one propagation path is required")
        if len(delays) != len(gains):
            raise InvalidSpec(f"{len(delays)} path delays but {len(gains)} path gains")
        if delays[0] != 0.0:
            raise InvalidSpec("the first path delay must be 0")
        if any(b < a for a, b in zip(delays, delays[1:])):
            raise InvalidSpec("path delays must be sorted ascending")
        if int(self.pulse_filter_taps) < 1:
            raise InvalidSpec("pulse_filter_taps must be positive")


def generate_bits(spec: FrameSpec) -> np.ndarray:
    """Uniform random bits for one frame, determined by ``spec.rng_seed``."""
    spec.validate()
    n = spec.n_symbols * spec.scheme.bits_per_symbol
    return make_rng(child_seed(spec.rng_seed, "bits")).integers(0, 2, size=n, dtype=np.uint8)


def _gray_to_binary(g: np.ndarray) -> np.ndarray:
    b = g.copy()
    shift = g >> 1
    while np.any(shift):
        b ^= shift
        shift >>= 1
    return b


def _words(bits: np.ndarray, k: int) -> np.ndarray:
    """Pack bits into integers, most significant bit first."""
    groups = bits.reshape(-1, k).astype(np.int64)
    weights = 1 << np.arange(k - 1, -1, -1)
    return groups @ weights


_QUARTER_TURNS = np.array([1, 1j, -1, -1j], dtype=np.complex128)


def dqpsk_phase_index(bits: np.ndarray) -> np.ndarray:
    """Accumulated DQPSK phase in quarter turns (0..3), starting from reference phase 0.

    Bit pairs map to increments by Gray code: 00 -> 0, 01 -> pi/2, 11 -> pi, 10 -> 3pi/2.
    """
    increments = _gray_to_binary(_words(np.asarray(bits), 2))
    return np.cumsum(increments) % 4


def map_symbols(scheme: ModulationScheme, bits) -> np.ndarray:
    """Map bits to complex symbols with unit average constellation power.

    CPM schemes yield their +/-1 data values; DQPSK yields the points reached
    after differential accumulation; OQPSK yields plain QPSK points.
    """
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    k = scheme.bits_per_symbol
    if bits.size % k:
        raise BitCountMismatch(f"{bits.size} bits is not a multiple of {k} for {scheme.value}")
    if bits.size and bits.max() > 1:
        raise BitCountMismatch("bit values must be 0 or 1")
    words = _words(bits, k)
    m = 1 << k

    if scheme is ModulationScheme.OOK:
        return words.astype(np.complex128) * math.sqrt(2.0)
    if scheme in (ModulationScheme.ASK4, ModulationScheme.ASK8):
        levels = _gray_to_binary(words).astype(np.float64)
        return (levels / math.sqrt((m - 1) * (2 * m - 1) / 6.0)).astype(np.complex128)
    if scheme in (ModulationScheme.PAM4, ModulationScheme.PAM16):
        levels = 2.0 * _gray_to_binary(words) - (m - 1)
        return (levels / math.sqrt((m * m - 1) / 3.0)).astype(np.complex128)
    if scheme.is_cpm:
        return (2.0 * words - 1.0).astype(np.complex128)
    if scheme is ModulationScheme.DQPSK:
        return _QUARTER_TURNS[dqpsk_phase_index(bits)]
    if scheme is ModulationScheme.OQPSK:
        i = 1.0 - 2.0 * (words >> 1)
        q = 1.0 - 2.0 * (words & 1)
        return (i + 1j * q) / math.sqrt(2.0)
    raise InvalidScheme(scheme)


def rrc_taps(n_taps: int, samples_per_symbol: int, rolloff: float = RRC_ROLLOFF) -> np.ndarray:
    """Root-raised-cosine taps centred on the filter midpoint, scaled to unit DC gain."""
    t = (np.arange(n_taps) - (n_taps - 1) / 2.0) / samples_per_symbol
    beta = rolloff
    taps = np.empty(n_taps)
    for n, tn in enumerate(t):
        if abs(tn) < 1e-12:
            taps[n] = 1.0 + beta * (4.0 / math.pi - 1.0)
        elif beta > 0 and abs(abs(tn) - 1.0 / (4.0 * beta)) < 1e-12:
            taps[n] = (beta / math.sqrt(2.0)) * (
                (1 + 2 / math.pi) * math.sin(math.pi / (4 * beta))
                + (1 - 2 / math.pi) * math.cos(math.pi / (4 * beta))
            )
        else:
            num = math.sin(math.pi * tn * (1 - beta)) + 4 * beta * tn * math.cos(math.pi * tn * (1 + beta))
            den = math.pi * tn * (1 - (4 * beta * tn) ** 2)
            taps[n] = num / den
    return taps / taps.sum()


def gaussian_taps(bt: float, samples_per_symbol: int, span: int = GAUSSIAN_SPAN_SYMBOLS) -> np.ndarray:
    """Gaussian frequency-pulse filter truncated to ``span`` symbols, unit DC gain."""
    n = span * samples_per_symbol
    t = (np.arange(n) - (n - 1) / 2.0) / samples_per_symbol
    taps = np.exp(-2.0 * (math.pi * bt * t) ** 2 / math.log(2.0))
    return taps / taps.sum()


def _fir_same(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """FIR filter with edge-value padding so the output keeps the input length."""
    if taps.size == 1:
        return x * taps[0]
    left = taps.size // 2
    right = taps.size - 1 - left
    padded = np.pad(x, (left, right), mode="edge")
    return np.convolve(padded, taps, mode="valid")


def _normalize_power(s: np.ndarray) -> np.ndarray:
    p = np.mean(np.abs(s) ** 2)
    if p == 0:
        return s
    return s / math.sqrt(p)


def cpm_phase(data: np.ndarray, scheme: ModulationScheme, samples_per_symbol: int, h: float = CPM_INDEX) -> np.ndarray:
    """Phase trajectory of a CPM frame; ``phase[0] == 0`` and each step is at most pi*h/sps."""
    freq = np.repeat(np.real(data), samples_per_symbol)
    if scheme in GAUSSIAN_BT:
        freq = _fir_same(freq, gaussian_taps(GAUSSIAN_BT[scheme], samples_per_symbol))
    step = math.pi * h * freq / samples_per_symbol
    phase = np.empty_like(step)
    phase[0] = 0.0
    np.cumsum(step[:-1], out=phase[1:])
    return phase


def modulate_frame(spec: FrameSpec, pulse_taps: int = DEFAULT_PULSE_TAPS) -> IQSignal:
    """Synthesize one power-normalized baseband frame of ``n_symbols * samples_per_symbol`` samples."""
    spec.validate()
    sps = spec.samples_per_symbol
    symbols = map_symbols(spec.scheme, generate_bits(spec))

    if spec.scheme.is_cpm:
        s = np.exp(1j * cpm_phase(symbols, spec.scheme, sps))
    else:
        taps = rrc_taps(pulse_taps, sps)
        held = np.repeat(symbols, sps)
        if spec.scheme is ModulationScheme.OQPSK:
            half = sps // 2
            q = np.imag(held)
            q = np.concatenate([np.full(half, q[0]), q[: q.size - half]])
            s = _fir_same(np.real(held), taps) + 1j * _fir_same(q, taps)
        else:
            s = _fir_same(held, taps)
    return IQSignal(_normalize_power(s), spec.sample_rate_hz)


def delay_offsets(delays_s, sample_rate_hz: float) -> list[int]:
    """Convert path delays to integer sample offsets, rejecting fractional ones."""
    offsets = []
    for d in delays_s:
        x = d * sample_rate_hz
        n = round(x)
        if abs(x - n) > 1e-9 * max(1.0, abs(x)):
            raise NonIntegerDelay(f"delay {d} s is {x} samples at {sample_rate_hz} Hz, not an integer")
        offsets.append(int(n))
    return offsets


def path_gains(gains_db) -> np.ndarray:
    """Linear amplitude gains normalized so that their squares sum to one."""
    g = 10.0 ** (np.asarray(gains_db, dtype=np.float64) / 20.0)
    return g / math.sqrt(float(np.sum(g * g)))


def apply_multipath(sig: IQSignal, cfg: ChannelConfig) -> IQSignal:
    """Tapped-delay-line channel; linear delays, output truncated to the input length."""
    offsets = delay_offsets(cfg.path_delays_s, sig.sample_rate_hz)
    gains = path_gains(cfg.path_gains_db)
    x = sig.samples
    y = np.zeros_like(x)
    for g, d in zip(gains, offsets):
        if d < x.size:
            y[d:] += g * x[: x.size - d]
    return IQSignal(y, sig.sample_rate_hz)


def apply_awgn(sig: IQSignal, snr_db: float, seed: int) -> IQSignal:
    """Add circular complex Gaussian noise at ``snr_db`` relative to the measured signal power.

    ``snr_db = math.inf`` disables the noise.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return IQSignal(sig.samples.copy(), sig.sample_rate_hz)
    variance = sig.power / 10.0 ** (snr_db / 10.0)
    normal = make_rng(seed).standard_normal((2, len(sig)))
    noise = math.sqrt(variance / 2.0) * (normal[0] + 1j * normal[1])
    return IQSignal(sig.samples + noise, sig.sample_rate_hz)


def measure_snr(clean: IQSignal, noisy: IQSignal) -> float:
    """Empirical SNR in dB of ``noisy`` against the reference ``clean``."""
    if len(clean) != len(noisy):
        raise LengthMismatch(f"clean has {len(clean)} samples, noisy has {len(noisy)}")
    noise_power = float(np.mean(np.abs(noisy.samples - clean.samples) ** 2))
    if noise_power == 0.0:
        raise ZeroNoise("signals are identical; SNR is unbounded")
    return 10.0 * math.log10(clean.power / noise_power)


def transmit(spec: FrameSpec, cfg: ChannelConfig) -> tuple[IQSignal, IQSignal]:
    """Run modulate -> multipath -> AWGN; returns (channel output before noise, noisy output)."""
    tx = modulate_frame(spec, cfg.pulse_filter_taps)
    faded = apply_multipath(tx, cfg)
    return faded, apply_awgn(faded, cfg.snr_db, cfg.rng_seed)
