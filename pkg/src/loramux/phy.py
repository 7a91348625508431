"""Single-user LoRa baseband primitives.

Chirp synthesis, preamble construction, dechirping and DFT-based
non-coherent symbol detection. Everything operates on complex baseband
numpy arrays; a symbol spans ``n_chips = 2**sf`` chips at the Nyquist
rate and ``n_chips * os_factor`` samples when oversampled.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "LoraConfig",
    "chirp_waveform",
    "modulate",
    "downchirp",
    "dechirp",
    "demod_single",
    "build_preamble",
]

# Trailing portion of the frame sync sequence, in symbols. Two full
# downchirps followed by a quarter downchirp.
DOWNCHIRP_SYMBOLS = 2.25


@dataclass(frozen=True)
class LoraConfig:
    """Static PHY parameters.

    ``sf`` is the spreading factor: a symbol carries ``sf`` bits and spans
    ``2**sf`` chips. Standard radios use sf 7..12; smaller values are
    accepted so that exhaustive joint-detection tests stay tractable.
    """

    sf: int = 7
    bandwidth_hz: float = 125e3
    os_factor: int = 1
    preamble_len: int = 8
    sync_symbols: tuple[int, int] = (0, 0)

    def __post_init__(self) -> None:
        if not 1 <= self.sf <= 12:
            raise ValueError(f"sf must be in [1, 12], got {self.sf}")
        if self.os_factor < 1:
            raise ValueError("os_factor must be >= 1")
        if self.preamble_len < 2:
            raise ValueError("preamble_len must be >= 2")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")
        n = 1 << self.sf
        for s in self.sync_symbols:
            if not 0 <= s < n:
                raise ValueError(f"sync symbol {s} outside [0, {n})")

    @property
    def n_chips(self) -> int:
        return 1 << self.sf

    @property
    def sample_rate_hz(self) -> float:
        return self.bandwidth_hz * self.os_factor

    @property
    def samples_per_symbol(self) -> int:
        """Samples per symbol at the oversampled rate."""
        return self.n_chips * self.os_factor

    @property
    def preamble_symbols(self) -> float:
        """Total preamble duration in symbols, including sync words."""
        return self.preamble_len + 2 + DOWNCHIRP_SYMBOLS

    def preamble_samples(self, oversampled: bool = True) -> int:
        """Length of :func:`build_preamble` output in samples."""
        step = self.n_chips * (self.os_factor if oversampled else 1)
        return int(self.preamble_symbols * step)


def chirp_waveform(symbol, t_chips, cfg: LoraConfig) -> np.ndarray:
    """Evaluate the chirp of ``symbol`` at (possibly fractional) chip times.

    The instantaneous frequency starts at ``symbol/N - 1/2`` cycles per
    chip, ramps up by ``1/N`` per chip, and folds down by one cycle per
    chip once the Nyquist edge is reached at chip ``N - symbol``. Inputs
    broadcast, so a grid of (times x symbols) evaluates in one call.
    """
    n = cfg.n_chips
    s = np.asarray(symbol)
    t = np.asarray(t_chips, dtype=np.float64)
    folded = (t >= (n - s)).astype(np.float64)
    phase = t * t / (2.0 * n) + (s / n - 0.5 - folded) * t
    return np.exp(2j * np.pi * phase)


def modulate(symbol: int, cfg: LoraConfig, oversampled: bool = False) -> np.ndarray:
    """Baseband upchirp for one symbol.

    Returns ``n_chips`` unit-modulus samples, or ``n_chips * os_factor``
    when ``oversampled`` is set. The initial phase is zero; channel gain
    and phase belong to the channel model.
    """
    if not 0 <= symbol < cfg.n_chips:
        raise ValueError(f"symbol {symbol} outside [0, {cfg.n_chips})")
    r = cfg.os_factor if oversampled else 1
    t = np.arange(cfg.n_chips * r) / r
    return chirp_waveform(symbol, t, cfg)


def downchirp(cfg: LoraConfig, oversampled: bool = False) -> np.ndarray:
    """Conjugate of the unmodulated upchirp."""
    return np.conj(modulate(0, cfg, oversampled))


@lru_cache(maxsize=16)
def _base_downchirp(cfg: LoraConfig, oversampled: bool) -> np.ndarray:
    ref = downchirp(cfg, oversampled)
    ref.setflags(write=False)
    return ref


def dechirp(window: np.ndarray, cfg: LoraConfig) -> np.ndarray:
    """Multiply a Nyquist-rate symbol window by the conjugate base upchirp.

    A clean received symbol turns into a single complex tone whose
    frequency (in DFT bins) equals the symbol value.
    """
    window = np.asarray(window)
    if window.shape[-1] != cfg.n_chips:
        raise ValueError(
            f"window length {window.shape[-1]} != n_chips {cfg.n_chips}"
        )
    return window * _base_downchirp(cfg, False)


def demod_single(window: np.ndarray, cfg: LoraConfig) -> tuple[int, np.ndarray]:
    """Non-coherent single-user detection of one Nyquist-rate window.

    Dechirps, takes the N-point DFT and picks the bin with the largest
    magnitude (lowest index on ties). Returns the decision together with
    the full DFT vector, which joint detection reuses.
    """
    spectrum = np.fft.fft(dechirp(window, cfg))
    return int(np.argmax(np.abs(spectrum))), spectrum


def build_preamble(cfg: LoraConfig, oversampled: bool = False) -> np.ndarray:
    """Frame preamble: repeated upchirps, two sync symbols, 2.25 downchirps.

    The trailing quarter symbol is the first quarter of a third downchirp.
    """
    up = modulate(0, cfg, oversampled)
    down = np.conj(up)
    quarter = len(down) // 4
    parts = [np.tile(up, cfg.preamble_len)]
    parts.extend(modulate(s, cfg, oversampled) for s in cfg.sync_symbols)
    parts.append(np.tile(down, 2))
    parts.append(down[:quarter])
    return np.concatenate(parts)


@lru_cache(maxsize=8)
def _preamble_cached(cfg: LoraConfig, oversampled: bool) -> np.ndarray:
    pre = build_preamble(cfg, oversampled)
    pre.setflags(write=False)
    return pre
