"""Two-user interference channel synthesis.

Builds the superimposed oversampled waveform of two unsynchronized
same-SF transmissions with configurable time offset, carrier frequency
offset, per-user power/phase and AWGN. Time offsets are realized on the
oversampled grid (resolution ``1/os_factor`` chip), mirroring a receiver
that resolves fractional timing by polyphase selection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from functools import lru_cache

from .phy import LoraConfig, _preamble_cached, chirp_waveform

__all__ = [
    "UserParams",
    "FrameSpec",
    "ChannelRealization",
    "synthesize_user",
    "superimpose",
    "fractional_delay",
    "write_iq",
    "read_iq",
]


@dataclass(frozen=True)
class UserParams:
    """Ground-truth channel parameters of one user.

    ``sto_chips`` is the chip-level delay of the user's symbol boundaries
    relative to the receiver reference grid, in [0, n_chips).
    """

    power: float = 1.0
    phase_rad: float = 0.0
    cfo_hz: float = 0.0
    sto_chips: float = 0.0

    def __post_init__(self) -> None:
        if self.power < 0:
            raise ValueError("power must be >= 0")
        if self.sto_chips < 0:
            raise ValueError("sto_chips must be >= 0")

    @property
    def l_sto(self) -> int:
        """Integer part of the time offset, in chips."""
        return int(math.floor(self.sto_chips))

    @property
    def lambda_sto(self) -> float:
        """Fractional part of the time offset, in [0, 1) chips."""
        return self.sto_chips - math.floor(self.sto_chips)


@dataclass(frozen=True)
class FrameSpec:
    """Payload symbols plus a whole-symbol start delay."""

    payload: tuple[int, ...]
    start_delay_symbols: int = 0

    def __post_init__(self) -> None:
        if len(self.payload) < 1:
            raise ValueError("payload must contain at least one symbol")
        if self.start_delay_symbols < 0:
            raise ValueError("start_delay_symbols must be >= 0")


@dataclass
class ChannelRealization:
    """One synthesized collision: samples plus everything that made them."""

    samples: np.ndarray
    truth_a: UserParams
    truth_b: UserParams
    noise_var: float
    frame_a: FrameSpec
    frame_b: FrameSpec


@lru_cache(maxsize=4)
def _symbol_table(cfg: LoraConfig, oversampled: bool) -> np.ndarray | None:
    """All N symbol waveforms as one (N, samples) array, when small enough."""
    r = cfg.os_factor if oversampled else 1
    n = cfg.n_chips
    if n * n * r * 16 > 32 << 20:
        return None
    t = np.arange(n * r) / r
    table = chirp_waveform(np.arange(n)[:, None], t[None, :], cfg)
    table.setflags(write=False)
    return table


def _modulate_block(symbols: np.ndarray, cfg: LoraConfig, oversampled: bool) -> np.ndarray:
    """Concatenated chirps for a symbol sequence, in one vectorized call."""
    symbols = np.asarray(symbols)
    table = _symbol_table(cfg, oversampled)
    if table is not None:
        return table[symbols].reshape(-1)
    r = cfg.os_factor if oversampled else 1
    t = np.arange(cfg.n_chips * r) / r
    block = chirp_waveform(symbols[:, None], t[None, :], cfg)
    return block.reshape(-1)


def fractional_delay(samples: np.ndarray, lam: float, cfg: LoraConfig) -> np.ndarray:
    """Delay an oversampled buffer by ``lam`` chips on the 1/R sample grid.

    The shift is ``round(lam * os_factor)`` samples, zero-padded at the
    front; the buffer keeps its length.
    """
    if not 0 <= lam < 1:
        raise ValueError("lam must be in [0, 1)")
    shift = round(lam * cfg.os_factor)
    if shift == 0:
        return np.array(samples, copy=True)
    out = np.zeros_like(np.asarray(samples))
    out[shift:] = samples[:-shift]
    return out


def synthesize_user(
    frame: FrameSpec,
    params: UserParams,
    cfg: LoraConfig,
    include_preamble: bool = True,
) -> np.ndarray:
    """Oversampled waveform of one user as seen by the receiver.

    The frame (optional preamble followed by the modulated payload) is
    delayed by ``start_delay_symbols`` whole symbols plus ``sto_chips``
    chips (rounded to the oversampled grid), scaled by ``sqrt(power)``,
    rotated by the channel phase, and spun by the CFO. The CFO ramp runs
    over the absolute sample index so that a later start also means more
    accumulated carrier phase.
    """
    spsym = cfg.samples_per_symbol
    parts = []
    if include_preamble:
        parts.append(_preamble_cached(cfg, True))
    parts.append(_modulate_block(np.asarray(frame.payload), cfg, oversampled=True))
    wave = np.concatenate(parts)

    delay = frame.start_delay_symbols * spsym + round(params.sto_chips * cfg.os_factor)
    out = np.empty(delay + len(wave), dtype=np.complex128)
    out[:delay] = 0.0
    gain = np.sqrt(params.power) * np.exp(1j * params.phase_rad)
    if params.cfo_hz != 0.0:
        n = np.arange(delay, len(out))
        np.multiply(
            wave,
            gain * np.exp(2j * np.pi * n * (params.cfo_hz / cfg.sample_rate_hz)),
            out=out[delay:],
        )
    else:
        np.multiply(wave, gain, out=out[delay:])
    return out


def superimpose(
    a: np.ndarray,
    b: np.ndarray,
    noise_var: float,
    rng_seed,
) -> np.ndarray:
    """Sum two waveforms (zero-padded to common length) plus complex AWGN.

    ``noise_var`` is the total variance per complex sample. ``rng_seed``
    may be an integer seed or a ``numpy.random.Generator``; a fixed seed
    reproduces the output bit for bit.
    """
    if noise_var < 0:
        raise ValueError("noise_var must be >= 0")
    n = max(len(a), len(b))
    out = np.zeros(n, dtype=np.complex128)
    out[: len(a)] += a
    out[: len(b)] += b
    if noise_var > 0:
        rng = np.random.default_rng(rng_seed)
        noise = rng.standard_normal(2 * n).view(np.complex128)
        out += np.sqrt(noise_var / 2.0) * noise
    return out


def write_iq(samples: np.ndarray, path) -> None:
    """Dump samples as interleaved little-endian float32 I/Q."""
    flat = np.empty(2 * len(samples), dtype="<f4")
    flat[0::2] = np.real(samples)
    flat[1::2] = np.imag(samples)
    flat.tofile(path)


def read_iq(path) -> np.ndarray:
    """Read interleaved little-endian float32 I/Q back into complex128."""
    flat = np.fromfile(path, dtype="<f4")
    return (flat[0::2] + 1j * flat[1::2]).astype(np.complex128)
