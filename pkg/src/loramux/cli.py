"""Command line front end: Monte-Carlo sweeps and a quick self test.

    loramux simulate --sf 7 --tau 64.0 --snr -12:-2:1 --trials 2000 \
        --sync genie --seed 1 --out results.csv
    loramux selftest

Flags may also come from a key=value config file via --config; explicit
flags win over file values.
"""
from __future__ import annotations

import argparse
import sys
import time

import numpy as np

__all__ = ["main"]


def _parse_snr_grid(text: str) -> tuple[float, ...]:
    """Either 'start:stop:step' (stop inclusive) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError("snr range must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise argparse.ArgumentTypeError("snr step must be positive")
        count = int(round((stop - start) / step)) + 1
        if count < 1:
            raise argparse.ArgumentTypeError("empty snr range")
        return tuple(start + k * step for k in range(count))
    return tuple(float(p) for p in text.split(",") if p.strip())


def _load_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line (expected key=value): {raw!r}")
            key, val = (p.strip() for p in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


def _build_simulate_parser(sub) -> argparse.ArgumentParser:
    p = sub.add_parser("simulate", help="run a SER vs SNR sweep")
    p.add_argument("--config", help="key=value file mirroring the flags")
    p.add_argument("--sf", type=int, default=7)
    p.add_argument("--tau", type=float, default=64.0, help="inter-user offset in chips")
    p.add_argument("--dfc", type=float, default=0.0, help="effective CFO in Hz")
    p.add_argument("--power-delta-db", type=float, default=3.0)
    p.add_argument("--snr", type=_parse_snr_grid, default=_parse_snr_grid("-12:-2:1"))
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--payload-len", type=int, default=32)
    p.add_argument("--overlap-delay", type=int, default=15)
    p.add_argument("--os-factor", type=int, default=8)
    p.add_argument("--preamble-len", type=int, default=8)
    p.add_argument("--sync", choices=("genie", "estimated"), default="genie")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--verbose", action="store_true", help="JSONL sync events on stderr")
    return p


_CONFIG_TYPES = {
    "sf": int,
    "tau": float,
    "dfc": float,
    "power_delta_db": float,
    "snr": _parse_snr_grid,
    "trials": int,
    "payload_len": int,
    "overlap_delay": int,
    "os_factor": int,
    "preamble_len": int,
    "sync": str,
    "seed": int,
    "jobs": int,
    "out": str,
}


def _simulate(args: argparse.Namespace) -> int:
    from .harness import ExperimentConfig, run_sweep, write_csv

    cfg = ExperimentConfig(
        sf=args.sf,
        tau_chips=args.tau,
        dfc_hz=args.dfc,
        power_delta_db=args.power_delta_db,
        snr_grid_db=tuple(args.snr),
        trials_per_point=args.trials,
        payload_len=args.payload_len,
        overlap_delay_symbols=args.overlap_delay,
        os_factor=args.os_factor,
        preamble_len=args.preamble_len,
        seed=args.seed,
        sync_mode=args.sync,
    )
    t0 = time.time()

    def progress(rec):
        print(
            f"snr={rec.snr_db:+.1f} dB  SERu={rec.ser_weak}  SERi={rec.ser_strong}  "
            f"valid={rec.valid_trials}/{rec.trials}  [{time.time() - t0:.0f}s]",
            file=sys.stderr,
        )

    records = run_sweep(cfg, jobs=args.jobs, progress=progress, verbose=args.verbose)
    write_csv(records, args.out)
    print(f"wrote {args.out} ({len(records)} points)", file=sys.stderr)
    return 0


def _selftest(_args: argparse.Namespace) -> int:
    """Fast invariant checks; exit code 0 when everything holds."""
    from . import channel, detector, phy
    from .harness import ExperimentConfig, SerRecord, read_csv, run_trial, write_csv

    failures = 0

    def check(name: str, fn) -> None:
        nonlocal failures
        try:
            fn()
            print(f"PASS {name}")
        except Exception as exc:  # noqa: BLE001 - report and keep going
            failures += 1
            print(f"FAIL {name}: {exc}")

    def roundtrip():
        cfg = phy.LoraConfig(sf=7)
        for s in (0, 1, 64, 127):
            got, _ = phy.demod_single(phy.modulate(s, cfg), cfg)
            assert got == s, (s, got)

    def unit_modulus():
        cfg = phy.LoraConfig(sf=8)
        w = phy.modulate(37, cfg, oversampled=False)
        assert np.max(np.abs(np.abs(w) - 1)) < 1e-12

    def detector_reduction():
        cfg = phy.LoraConfig(sf=7)
        ctx = detector.DetectorContext(1.0, 0.0, 0.0, 0.0, cfg)
        rng = np.random.default_rng(0)
        win = phy.dechirp(
            phy.modulate(93, cfg) + 0.1 * rng.standard_normal(128), cfg
        )
        decision, _ = detector.decide_window(win, ctx)
        assert decision.s_a == 93

    def two_user_noiseless():
        cfg = ExperimentConfig(snr_grid_db=(40.0,), trials_per_point=1)
        res = run_trial(cfg, 40.0, 123)
        assert res.valid and res.errors_weak == 0 and res.errors_strong == 0

    def csv_roundtrip(tmp="/tmp/loramux_selftest.csv"):
        recs = [SerRecord(-5.0, 1e-3, 1e-4, 10, 10)]
        write_csv(recs, tmp)
        assert read_csv(tmp) == [(-5.0, 1e-3, 1e-4)]

    def iq_roundtrip(tmp="/tmp/loramux_selftest.iq"):
        x = np.array([1 + 2j, -0.5j, 3.0])
        channel.write_iq(x, tmp)
        back = channel.read_iq(tmp)
        assert np.allclose(back, x, atol=1e-6)

    check("phy round trip", roundtrip)
    check("unit modulus", unit_modulus)
    check("single-user reduction", detector_reduction)
    check("noiseless two-user trial", two_user_noiseless)
    check("csv round trip", csv_roundtrip)
    check("iq export round trip", iq_roundtrip)
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="loramux")
    sub = parser.add_subparsers(dest="command", required=True)
    _build_simulate_parser(sub)
    sub.add_parser("selftest", help="run fast invariant checks")

    argv = list(sys.argv[1:] if argv is None else argv)
    # Apply config-file values as defaults before the real parse.
    if "simulate" in argv and "--config" in argv:
        cfg_path = argv[argv.index("--config") + 1]
        raw = _load_config_file(cfg_path)
        ns = parser.parse_args(argv)
        for key, val in raw.items():
            if key not in _CONFIG_TYPES:
                raise SystemExit(f"unknown config key {key!r}")
            if _explicit_flag(argv, key):
                continue
            setattr(ns, key, _CONFIG_TYPES[key](val))
    else:
        ns = parser.parse_args(argv)

    if ns.command == "simulate":
        return _simulate(ns)
    return _selftest(ns)


def _explicit_flag(argv: list[str], key: str) -> bool:
    flag = "--" + key.replace("_", "-")
    return flag in argv


if __name__ == "__main__":
    sys.exit(main())
