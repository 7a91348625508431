"""Joint window-by-window demodulation of two superimposed users.

The receiver is time- and frequency-aligned to the stronger user A, so
A's contribution to a dechirped window is a single tone. The weaker,
unsynchronized user B straddles the window: its previous symbol occupies
the first ``ceil(tau)`` samples and its current symbol the rest. Two
partial matched filters correlate the residual (window minus the
presumed A tone) against B's exact dechirped chirp geometry on each
segment, including the frequency fold and the segment-dependent phase
constants. Keeping those constants is what lets the tail filter of
window k-1 combine coherently with the head filter of window k when the
deferred decision on B's symbol is finally taken.

Unknown carrier phases are handled non-coherently: each per-symbol phase
is marginalized, turning the likelihood into a product of Bessel I0
factors of matched-filter magnitudes, evaluated in the log domain.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bessel import log_i0
from .phy import LoraConfig, chirp_waveform, modulate

__all__ = [
    "DetectorContext",
    "DetectorState",
    "WindowDecision",
    "tone_phase",
    "matched_filter_head",
    "matched_filter_tail",
    "joint_log_metric",
    "decide_window",
    "final_tail_decision",
    "exhaustive_decide_window",
]


@dataclass(frozen=True)
class DetectorContext:
    """Synchronization byproducts the joint detector needs.

    ``p_a`` is the power of the user the receiver is locked to and must
    dominate ``p_b``; ``tau_chips`` is B's symbol-boundary offset within
    an A-aligned window, in [0, n_chips); ``dfc_norm`` is B's residual
    CFO divided by the sample rate.
    """

    p_a: float
    p_b: float
    tau_chips: float
    dfc_norm: float
    cfg: LoraConfig

    def __post_init__(self) -> None:
        if not 0 <= self.tau_chips < self.cfg.n_chips:
            raise ValueError("tau_chips must be in [0, n_chips)")
        if not self.p_a >= self.p_b >= 0:
            raise ValueError("powers must satisfy p_a >= p_b >= 0")

    @property
    def ceil_tau(self) -> int:
        return int(math.ceil(self.tau_chips))


@dataclass
class DetectorState:
    """Carried between consecutive windows of one stream.

    ``tail_prev`` holds the N tail matched-filter outputs of the previous
    window, evaluated at its decided A symbol; B's previous symbol is
    decided one window late by combining them with the current head
    filter outputs.
    """

    tail_prev: np.ndarray | None = None
    s_a_prev: int | None = None


@dataclass(frozen=True)
class WindowDecision:
    s_a: int
    s_b_prev: int | None
    log_metric: float


def tone_phase(dft: np.ndarray, s_a: int) -> float:
    """Phase of the DFT bin of a candidate symbol (0 for an empty bin)."""
    v = dft[s_a]
    if v == 0:
        return 0.0
    return float(np.angle(v))


def _segment_models(ctx: DetectorContext) -> tuple[np.ndarray, np.ndarray]:
    """Dechirped user-B model per candidate symbol, per window sample.

    Returns (head, tail) matrices of shape (segment length, N). Column s
    is the unit-amplitude dechirped contribution a symbol s of user B
    would leave on that segment: the chirp evaluated at B-local time
    (n + N - tau on the head, n - tau on the tail) times the conjugate
    base upchirp, times B's residual CFO ramp. The chirp is evaluated at
    its true fractional time so that head and tail of one B symbol share
    a single unknown phase.
    """
    cfg = ctx.cfg
    n = cfg.n_chips
    ct = ctx.ceil_tau
    cands = np.arange(n)
    base = np.conj(modulate(0, cfg))
    cfo = np.exp(2j * np.pi * np.arange(n) * ctx.dfc_norm)

    n1 = np.arange(ct)
    head = chirp_waveform(cands[None, :], (n1 + n - ctx.tau_chips)[:, None], cfg)
    head *= (base[:ct] * cfo[:ct])[:, None]

    n2 = np.arange(ct, n)
    tail = chirp_waveform(cands[None, :], (n2 - ctx.tau_chips)[:, None], cfg)
    tail *= (base[ct:] * cfo[ct:])[:, None]
    return head, tail


def matched_filter_head(
    window: np.ndarray, s_a: int, theta_a: float, ctx: DetectorContext
) -> np.ndarray:
    """Head-segment matched filter bank, by direct summation.

    Subtracts the presumed tone of user A from the dechirped window and
    correlates the first ``ceil(tau)`` samples against every candidate
    for B's previous symbol. Empty segment (tau = 0) gives all zeros.
    """
    return _matched_filter_direct(window, s_a, theta_a, ctx, head=True)


def matched_filter_tail(
    window: np.ndarray, s_a: int, theta_a: float, ctx: DetectorContext
) -> np.ndarray:
    """Tail-segment matched filter bank over B's current-symbol candidates."""
    return _matched_filter_direct(window, s_a, theta_a, ctx, head=False)


def _matched_filter_direct(window, s_a, theta_a, ctx, head: bool) -> np.ndarray:
    cfg = ctx.cfg
    n = cfg.n_chips
    window = np.asarray(window)
    if window.shape != (n,):
        raise ValueError(f"window must have shape ({n},)")
    ct = ctx.ceil_tau
    sl = slice(0, ct) if head else slice(ct, n)
    samples = np.arange(n)[sl]
    residual = window[sl] - (
        np.sqrt(ctx.p_a)
        * np.exp(1j * theta_a)
        * np.exp(2j * np.pi * samples * s_a / n)
    )
    models = _segment_models(ctx)[0 if head else 1]
    out = np.empty(n, dtype=np.complex128)
    for cand in range(n):
        out[cand] = np.sum(residual * np.conj(models[:, cand]))
    return out


def joint_log_metric(
    dft_y: np.ndarray,
    head: np.ndarray,
    tail: np.ndarray,
    s_bar: tuple[int, int, int],
    ctx: DetectorContext,
) -> float:
    """Phase-marginalized log likelihood of one candidate symbol triple.

    ``s_bar`` is (A's symbol, B's previous symbol, B's current symbol);
    ``head``/``tail`` are the matched-filter banks for the given A
    candidate.
    """
    s_a, s_b_prev, s_b = s_bar
    return float(
        log_i0(np.sqrt(ctx.p_a) * np.abs(dft_y[s_a]))
        + log_i0(np.sqrt(ctx.p_b) * np.abs(head[s_b_prev]))
        + log_i0(np.sqrt(ctx.p_b) * np.abs(tail[s_b]))
    )


class _FilterBank:
    """Precomputed matrices for fast matched filtering of many windows.

    For a fixed (cfg, tau, dfc) geometry the filters are linear in the
    window, so the bank of all (A candidate, B candidate) outputs is
    window_part - sqrt(p_a) e^{j theta(s_a)} * tone_part, where the tone
    part is data independent and computed once.
    """

    def __init__(self, cfg: LoraConfig, tau_chips: float, dfc_norm: float):
        ctx = DetectorContext(1.0, 0.0, tau_chips, dfc_norm, cfg)
        n = cfg.n_chips
        ct = ctx.ceil_tau
        head, tail = _segment_models(ctx)
        self.cfg = cfg
        self.ct = ct
        self.w_head = np.conj(head)  # (ct, N): window @ w_head -> bank row
        self.w_tail = np.conj(tail)  # (N - ct, N)
        tones = np.exp(
            2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n
        )  # (n, s_a)
        self.k_head = tones[:ct].T @ self.w_head  # (s_a, s_b)
        self.k_tail = tones[ct:].T @ self.w_tail

    def banks(self, window: np.ndarray, p_a: float, dft: np.ndarray):
        """Matched-filter banks for all A candidates of one window.

        Returns (head, tail) arrays of shape (N, N) indexed
        [A candidate, B candidate], with the A tone phase re-estimated
        per candidate from its own DFT bin.
        """
        mags = np.abs(dft)
        # zero bins take phase 0 (phasor 1), matching tone_phase
        phases = np.where(mags > 0, dft / np.where(mags > 0, mags, 1.0), 1.0)
        coeff = np.sqrt(p_a) * phases  # (s_a,)
        head_y = window[: self.ct] @ self.w_head
        tail_y = window[self.ct:] @ self.w_tail
        head = head_y[None, :] - coeff[:, None] * self.k_head
        tail = tail_y[None, :] - coeff[:, None] * self.k_tail
        return head, tail


@lru_cache(maxsize=8)
def _bank(cfg: LoraConfig, tau_chips: float, dfc_norm: float) -> _FilterBank:
    return _FilterBank(cfg, tau_chips, dfc_norm)


def decide_window(
    window: np.ndarray,
    ctx: DetectorContext,
    state: DetectorState | None = None,
    debug_sink=None,
    window_index: int | None = None,
) -> tuple[WindowDecision, DetectorState]:
    """Joint decision for one dechirped window.

    Picks A's symbol by maximizing the phase-marginalized metric over all
    candidate triples; the two B terms decouple, so their inner maxima
    are taken independently per A candidate. B's previous symbol is then
    decided from the stored tail bank of the last window plus the current
    head bank, both evaluated at the decided A symbols. Ties break toward
    the lowest index everywhere.

    Returns the decision plus the updated state. With ``p_b == 0`` the
    rule reduces exactly to single-user detection on the DFT magnitudes.
    """
    cfg = ctx.cfg
    state = state if state is not None else DetectorState()
    window = np.asarray(window, dtype=np.complex128)
    dft = np.fft.fft(window)
    bank = _bank(cfg, ctx.tau_chips, ctx.dfc_norm)
    head, tail = bank.banks(window, ctx.p_a, dft)

    if ctx.p_b == 0:
        s_a = int(np.argmax(np.abs(dft)))
        metric = float(log_i0(np.sqrt(ctx.p_a) * np.abs(dft[s_a])))
    else:
        values = (
            log_i0(np.sqrt(ctx.p_a) * np.abs(dft))
            + log_i0(np.sqrt(ctx.p_b) * np.abs(head).max(axis=1))
            + log_i0(np.sqrt(ctx.p_b) * np.abs(tail).max(axis=1))
        )
        s_a = int(np.argmax(values))
        metric = float(values[s_a])

    s_b_prev = None
    if state.tail_prev is not None:
        s_b_prev = int(np.argmax(np.abs(state.tail_prev + head[s_a])))

    decision = WindowDecision(s_a=s_a, s_b_prev=s_b_prev, log_metric=metric)
    new_state = DetectorState(tail_prev=tail[s_a].copy(), s_a_prev=s_a)
    if debug_sink is not None:
        debug_sink.write(
            json.dumps(
                {
                    "k": window_index,
                    "s_a": decision.s_a,
                    "s_b_prev": decision.s_b_prev,
                    "log_metric": decision.log_metric,
                }
            )
            + "\n"
        )
    return decision, new_state


def final_tail_decision(state: DetectorState) -> int | None:
    """Decision on B's last symbol once the stream ends.

    No further head segment will arrive, so the stored tail bank alone
    carries the remaining evidence.
    """
    if state.tail_prev is None:
        return None
    return int(np.argmax(np.abs(state.tail_prev)))


def exhaustive_decide_window(
    window: np.ndarray, ctx: DetectorContext
) -> tuple[int, int, int]:
    """Brute-force maximizer of the joint metric over all N^3 triples.

    Test reference for small symbol alphabets; every matched-filter value
    is recomputed with direct sums and an inline chirp phase formula,
    independent of the production filter bank. Refuses n_chips > 32.
    """
    cfg = ctx.cfg
    n = cfg.n_chips
    if n > 32:
        raise ValueError("exhaustive search is limited to n_chips <= 32")
    window = np.asarray(window, dtype=np.complex128)
    dft = np.array(
        [
            sum(window[m] * np.exp(-2j * np.pi * m * i / n) for m in range(n))
            for i in range(n)
        ]
    )
    ct = int(math.ceil(ctx.tau_chips))

    def chirp(sym: int, t: float) -> complex:
        fold = 1.0 if t >= n - sym else 0.0
        ph = t * t / (2.0 * n) + (sym / n - 0.5 - fold) * t
        return complex(np.exp(2j * np.pi * ph))

    def b_model(sym: int, m: int, head: bool) -> complex:
        t = m + n - ctx.tau_chips if head else m - ctx.tau_chips
        return (
            chirp(sym, t)
            * np.conj(chirp(0, float(m)))
            * complex(np.exp(2j * np.pi * m * ctx.dfc_norm))
        )

    best_metric = -np.inf
    best = (0, 0, 0)
    sq_a, sq_b = np.sqrt(ctx.p_a), np.sqrt(ctx.p_b)
    for s_a in range(n):
        theta = np.angle(dft[s_a]) if dft[s_a] != 0 else 0.0
        resid = window - sq_a * np.exp(1j * theta) * np.array(
            [np.exp(2j * np.pi * m * s_a / n) for m in range(n)]
        )
        term_a = float(log_i0(sq_a * abs(dft[s_a])))
        term_head = [
            float(
                log_i0(
                    sq_b
                    * abs(
                        sum(
                            resid[m] * np.conj(b_model(c, m, head=True))
                            for m in range(ct)
                        )
                    )
                )
            )
            for c in range(n)
        ]
        term_tail = [
            float(
                log_i0(
                    sq_b
                    * abs(
                        sum(
                            resid[m] * np.conj(b_model(c, m, head=False))
                            for m in range(ct, n)
                        )
                    )
                )
            )
            for c in range(n)
        ]
        for s_bp in range(n):
            for s_b in range(n):
                metric = term_a + term_head[s_bp] + term_tail[s_b]
                if metric > best_metric:
                    best_metric = metric
                    best = (s_a, s_bp, s_b)
    return best
