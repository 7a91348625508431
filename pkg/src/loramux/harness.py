"""Monte-Carlo collision experiments and SER aggregation.

One trial synthesizes two frames of random symbols, the second one
delayed by a whole-symbol gap plus a controlled chip offset and
transmitted with a power advantage. The receiver (either handed the true
channel parameters or running the full acquisition chain) locks to the
stronger user and jointly demodulates the overlapping payload region.
Only trials where both preambles are detected and the power ordering is
estimated correctly count toward the error rates, and only the fully
overlapped payload symbols are scored.
"""
from __future__ import annotations

import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import sync
from .channel import FrameSpec, UserParams, superimpose, synthesize_user
from .detector import DetectorContext, DetectorState, decide_window
from .phy import LoraConfig, dechirp

__all__ = [
    "ExperimentConfig",
    "SerRecord",
    "TrialResult",
    "run_trial",
    "run_sweep",
    "write_csv",
    "read_csv",
]

# Noise-only guard before the first frame, in symbols.
LEAD_SYMBOLS = 2


@dataclass(frozen=True)
class ExperimentConfig:
    sf: int = 7
    tau_chips: float = 64.0
    dfc_hz: float = 0.0
    power_delta_db: float = 3.0
    snr_grid_db: tuple[float, ...] = (-6.0,)
    trials_per_point: int = 2000
    payload_len: int = 32
    overlap_delay_symbols: int = 15
    os_factor: int = 8
    bandwidth_hz: float = 125e3
    preamble_len: int = 8
    seed: int = 1
    sync_mode: str = "genie"  # "genie" or "estimated"

    def __post_init__(self) -> None:
        if self.trials_per_point < 1:
            raise ValueError("trials_per_point must be >= 1")
        if not self.snr_grid_db:
            raise ValueError("snr_grid_db must not be empty")
        if self.payload_len < self.overlap_delay_symbols + 3:
            raise ValueError(
                "payload_len must exceed overlap_delay_symbols by at least 3 "
                "so that at least one fully overlapped symbol can be scored"
            )
        if self.sync_mode not in ("genie", "estimated"):
            raise ValueError("sync_mode must be 'genie' or 'estimated'")
        n = 1 << self.sf
        if not 0 <= self.tau_chips < n:
            raise ValueError(f"tau_chips must be in [0, {n})")

    @property
    def lora(self) -> LoraConfig:
        return LoraConfig(
            sf=self.sf,
            bandwidth_hz=self.bandwidth_hz,
            os_factor=self.os_factor,
            preamble_len=self.preamble_len,
        )

    @property
    def scored_symbols(self) -> int:
        """Fully overlapped payload symbols scored per user."""
        return self.payload_len - self.overlap_delay_symbols - 2


@dataclass(frozen=True)
class TrialResult:
    valid: bool
    errors_weak: int
    errors_strong: int
    scored_symbols: int


@dataclass(frozen=True)
class SerRecord:
    snr_db: float
    ser_weak: float | None
    ser_strong: float | None
    trials: int
    valid_trials: int


def _trial_rng(seed: int, point_index: int, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((seed, point_index, trial_index))
    )


def run_trial(
    cfg: ExperimentConfig,
    snr_db: float,
    rng_seed,
    log_sink=None,
    debug_sink=None,
) -> TrialResult:
    """Run one collision and score the overlapped symbols of both users.

    ``rng_seed`` follows numpy seeding semantics; a fixed value makes the
    trial fully deterministic.
    """
    lora = cfg.lora
    n = lora.n_chips
    r = lora.os_factor
    sp = lora.samples_per_symbol
    rng = np.random.default_rng(rng_seed)

    payload_weak = tuple(int(s) for s in rng.integers(0, n, cfg.payload_len))
    payload_strong = tuple(int(s) for s in rng.integers(0, n, cfg.payload_len))
    phase_weak, phase_strong = rng.uniform(-np.pi, np.pi, 2)
    base_chips_r = int(rng.integers(0, n * r))  # weak user grid offset, 1/R chips

    p_weak = 1.0
    p_strong = 10.0 ** (cfg.power_delta_db / 10.0)
    noise_var = p_weak * 10.0 ** (-snr_db / 10.0)

    tau_r = round(cfg.tau_chips * r)
    strong_off_r = base_chips_r + tau_r
    weak = UserParams(
        power=p_weak, phase_rad=phase_weak, cfo_hz=0.0, sto_chips=base_chips_r / r % n
    )
    strong = UserParams(
        power=p_strong,
        phase_rad=phase_strong,
        cfo_hz=cfg.dfc_hz,
        sto_chips=(strong_off_r % (n * r)) / r,
    )
    frame_weak = FrameSpec(
        payload=payload_weak,
        start_delay_symbols=LEAD_SYMBOLS + base_chips_r // (n * r),
    )
    frame_strong = FrameSpec(
        payload=payload_strong,
        start_delay_symbols=LEAD_SYMBOLS
        + cfg.overlap_delay_symbols
        + strong_off_r // (n * r),
    )

    wave_weak = synthesize_user(frame_weak, weak, lora)
    wave_strong = synthesize_user(frame_strong, strong, lora)
    received = superimpose(wave_weak, wave_strong, noise_var, rng)

    pre = lora.preamble_samples()
    weak_payload_start = LEAD_SYMBOLS * sp + base_chips_r + pre
    strong_payload_start = (
        LEAD_SYMBOLS * sp + base_chips_r + cfg.overlap_delay_symbols * sp + tau_r + pre
    )

    if cfg.sync_mode == "genie":
        grid_start = strong_payload_start
        tau_det_r = (weak_payload_start - grid_start) % (n * r)
        grid_cfo_bins = cfg.dfc_hz / lora.bandwidth_hz * n
        ctx = DetectorContext(
            p_a=p_strong,
            p_b=p_weak,
            tau_chips=tau_det_r / r,
            dfc_norm=-cfg.dfc_hz / lora.sample_rate_hz,
            cfg=lora,
        )
        valid = True
    else:
        est_first, est_second = sync.acquire_two_users(received, lora, log_sink)
        valid = (
            est_first is not None
            and est_second is not None
            and est_second.power_est > est_first.power_est
        )
        if valid:
            fsm = sync.ReceiverFsmState()
            fsm, _ = sync.fsm_step(fsm, sync.NewUser(est_first))
            fsm, action = sync.fsm_step(fsm, sync.NewUser(est_second))
            assert action is sync.FsmAction.RESYNCHRONIZE
            strong_est = fsm.user_strong
            weak_est = fsm.user_weak
            grid_start = strong_est.payload_start
            tau_det_r = (weak_est.payload_start - grid_start) % (n * r)
            dfc_bins = weak_est.total_cfo_bins - strong_est.total_cfo_bins
            ctx = DetectorContext(
                p_a=strong_est.power_est,
                p_b=weak_est.power_est,
                tau_chips=tau_det_r / r,
                dfc_norm=dfc_bins / (n * r),
                cfg=lora,
            )
            grid_cfo_bins = strong_est.total_cfo_bins
        if not valid:
            return TrialResult(False, 0, 0, cfg.scored_symbols)

    # Joint demodulation over the windows where both payloads are active.
    # The receiver's CFO correction runs over the absolute sample index so
    # that the carried-over tail filters stay phase coherent across windows.
    n_windows = cfg.payload_len - cfg.overlap_delay_symbols - 1
    demod = received[grid_start : grid_start + n_windows * sp]
    if grid_cfo_bins != 0.0:
        idx = np.arange(grid_start, grid_start + len(demod))
        demod = demod * np.exp(-2j * np.pi * idx * (grid_cfo_bins / (n * r)))
    dec_strong: dict[int, int] = {}
    dec_weak: dict[int, int] = {}
    state = DetectorState()
    for k in range(n_windows):
        lo = k * sp
        if lo + sp > len(demod):
            break
        window = dechirp(demod[lo : lo + sp : r], lora)
        decision, state = decide_window(window, ctx, state, debug_sink, k)
        dec_strong[k] = decision.s_a
        if decision.s_b_prev is not None:
            dec_weak[cfg.overlap_delay_symbols + k] = decision.s_b_prev

    scored = cfg.scored_symbols
    errors_strong = sum(
        1 for k in range(1, 1 + scored) if dec_strong.get(k) != payload_strong[k]
    )
    first_weak = cfg.overlap_delay_symbols + 1
    errors_weak = sum(
        1
        for j in range(first_weak, first_weak + scored)
        if dec_weak.get(j) != payload_weak[j]
    )
    return TrialResult(True, errors_weak, errors_strong, scored)


def _point_chunk(args) -> tuple[int, int, int, int]:
    cfg, snr_db, point_index, lo, hi, verbose = args
    log_sink = sys.stderr if verbose else None
    valid = err_w = err_s = 0
    for t in range(lo, hi):
        res = run_trial(
            cfg,
            snr_db,
            np.random.SeedSequence((cfg.seed, point_index, t)),
            log_sink=log_sink,
        )
        if res.valid:
            valid += 1
            err_w += res.errors_weak
            err_s += res.errors_strong
    return hi - lo, valid, err_w, err_s


def run_sweep(
    cfg: ExperimentConfig, jobs: int = 1, progress=None, verbose: bool = False
) -> list[SerRecord]:
    """Aggregate trials_per_point trials for every SNR grid point.

    Per-trial seeds are derived from (seed, point, trial), so the result
    is byte-identical for any ``jobs`` value; chunks only change how the
    independent trials are distributed.
    """
    records = []
    for i, snr_db in enumerate(cfg.snr_grid_db):
        t = cfg.trials_per_point
        if jobs > 1:
            bounds = np.linspace(0, t, jobs * 2 + 1, dtype=int)
            tasks = [
                (cfg, snr_db, i, int(lo), int(hi), verbose)
                for lo, hi in zip(bounds[:-1], bounds[1:])
                if hi > lo
            ]
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                parts = list(pool.map(_point_chunk, tasks))
        else:
            parts = [_point_chunk((cfg, snr_db, i, 0, t, verbose))]
        valid = sum(p[1] for p in parts)
        err_w = sum(p[2] for p in parts)
        err_s = sum(p[3] for p in parts)
        denom = valid * cfg.scored_symbols
        records.append(
            SerRecord(
                snr_db=snr_db,
                ser_weak=err_w / denom if denom else None,
                ser_strong=err_s / denom if denom else None,
                trials=t,
                valid_trials=valid,
            )
        )
        if progress is not None:
            progress(records[-1])
    return records


def _fmt(x: float | None) -> str:
    if x is None:
        return ""
    if float(x) == int(x):
        return str(int(x))
    return repr(float(x))


def write_csv(records, path) -> None:
    """Write sweep records as ``SNR,SERu,SERi`` rows (weak user first)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("SNR,SERu,SERi\n")
        for rec in records:
            fh.write(f"{_fmt(rec.snr_db)},{_fmt(rec.ser_weak)},{_fmt(rec.ser_strong)}\n")


def read_csv(path) -> list[tuple[float, float | None, float | None]]:
    """Parse a sweep CSV back into (snr, ser_weak, ser_strong) tuples."""
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "SNR,SERu,SERi":
            raise ValueError(f"unexpected header {header!r} in {path}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            snr, ser_u, ser_i = line.split(",")
            out.append(
                (
                    float(snr),
                    float(ser_u) if ser_u else None,
                    float(ser_i) if ser_i else None,
                )
            )
    return out
