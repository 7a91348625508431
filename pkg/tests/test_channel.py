"""Two-user waveform synthesis, noise injection and IQ export."""
import numpy as np
import pytest

from loramux.channel import (
    FrameSpec,
    UserParams,
    fractional_delay,
    read_iq,
    superimpose,
    synthesize_user,
    write_iq,
)
from loramux.phy import LoraConfig, chirp_waveform, modulate

CFG = LoraConfig(sf=7, os_factor=8)


class TestUserParams:
    def test_split_offsets(self):
        p = UserParams(sto_chips=16.5)
        assert p.l_sto == 16
        assert p.lambda_sto == pytest.approx(0.5)
        assert p.l_sto + p.lambda_sto == pytest.approx(p.sto_chips)

    def test_validation(self):
        with pytest.raises(ValueError):
            UserParams(power=-1.0)
        with pytest.raises(ValueError):
            UserParams(sto_chips=-0.5)


class TestSynthesizeUser:
    def test_identity_configuration(self):
        frame = FrameSpec(payload=(3, 77, 120))
        out = synthesize_user(frame, UserParams(), CFG, include_preamble=False)
        ref = np.concatenate([modulate(s, CFG, oversampled=True) for s in frame.payload])
        assert np.max(np.abs(out - ref)) < 1e-12

    def test_integer_offset_shift(self):
        frame = FrameSpec(payload=(5,))
        out = synthesize_user(
            frame, UserParams(sto_chips=64.0), CFG, include_preamble=False
        )
        assert np.max(np.abs(out[:512])) == 0
        ref = modulate(5, CFG, oversampled=True)
        assert np.max(np.abs(out[512 : 512 + len(ref)] - ref)) < 1e-12

    def test_power_scaling(self):
        frame = FrameSpec(payload=(9, 9))
        one = synthesize_user(frame, UserParams(power=1.0), CFG, include_preamble=False)
        two = synthesize_user(frame, UserParams(power=2.0), CFG, include_preamble=False)
        assert np.mean(np.abs(two) ** 2) == pytest.approx(2 * np.mean(np.abs(one) ** 2))
        assert np.max(np.abs(two - np.sqrt(2) * one)) < 1e-12

    def test_start_delay_symbols(self):
        frame = FrameSpec(payload=(1,), start_delay_symbols=2)
        out = synthesize_user(frame, UserParams(), CFG, include_preamble=False)
        assert np.max(np.abs(out[: 2 * 1024])) == 0
        assert out[2 * 1024] != 0

    def test_cfo_ramp_over_absolute_index(self):
        frame = FrameSpec(payload=(0,), start_delay_symbols=1)
        cfo = 300.0
        out = synthesize_user(frame, UserParams(cfo_hz=cfo), CFG, include_preamble=False)
        n = np.arange(1024, 2048)
        ref = modulate(0, CFG, oversampled=True) * np.exp(
            2j * np.pi * n * cfo / CFG.sample_rate_hz
        )
        assert np.max(np.abs(out[1024:2048] - ref)) < 1e-10

    def test_preamble_prepended(self):
        frame = FrameSpec(payload=(0,))
        out = synthesize_user(frame, UserParams(), CFG)
        assert len(out) == CFG.preamble_samples() + 1024


class TestSuperimpose:
    def test_noiseless_single_user(self):
        a = np.arange(10, dtype=complex)
        out = superimpose(a, np.zeros(10), 0.0, 0)
        assert np.array_equal(out, a)

    def test_noise_power_law_of_large_numbers(self):
        z = superimpose(np.zeros(10**6), np.zeros(10**6), 1.0, 42)
        assert np.mean(np.abs(z) ** 2) == pytest.approx(1.0, abs=0.01)

    def test_deterministic_under_seed(self):
        a = np.ones(100, dtype=complex)
        one = superimpose(a, a, 0.3, 7)
        two = superimpose(a, a, 0.3, 7)
        assert np.array_equal(one, two)

    def test_zero_pads_to_common_length(self):
        out = superimpose(np.ones(4), np.ones(8), 0.0, 0)
        assert np.array_equal(out, np.concatenate([2 * np.ones(4), np.ones(4)]))

    def test_rejects_negative_variance(self):
        with pytest.raises(ValueError):
            superimpose(np.ones(2), np.ones(2), -1.0, 0)


class TestFractionalDelay:
    def test_identity(self):
        x = np.arange(8, dtype=complex)
        assert np.array_equal(fractional_delay(x, 0.0, CFG), x)

    def test_half_chip_is_four_samples(self):
        x = np.arange(32, dtype=complex)
        out = fractional_delay(x, 0.5, CFG)
        assert np.max(np.abs(out[:4])) == 0
        assert np.array_equal(out[4:], x[:-4])

    def test_composition_makes_one_chip(self):
        x = np.arange(32, dtype=complex)
        twice = fractional_delay(fractional_delay(x, 0.5, CFG), 0.5, CFG)
        assert np.array_equal(twice[8:], x[:-8])

    def test_range_checked(self):
        with pytest.raises(ValueError):
            fractional_delay(np.ones(8), 1.0, CFG)


class TestWindowDecomposition:
    @pytest.mark.parametrize("tau", [16.0, 16.5, 64.0, 111.5])
    def test_window_matches_two_segment_form(self, tau):
        # A user delayed by tau splits an aligned window at ceil(tau): the
        # previous symbol occupies the head at local time n + N - tau, the
        # current symbol the tail at local time n - tau. The synthesized
        # oversampled waveform, decimated on the aligned grid, must equal
        # that direct evaluation.
        n = CFG.n_chips
        r = CFG.os_factor
        s_prev, s_cur = 37, 101
        frame = FrameSpec(payload=(s_prev, s_cur))
        out = synthesize_user(
            frame, UserParams(sto_chips=tau), CFG, include_preamble=False
        )
        window = out[n * r : 2 * n * r : r]  # receiver-aligned window k=1
        ct = int(np.ceil(tau))
        head_t = np.arange(ct) + n - tau
        tail_t = np.arange(ct, n) - tau
        expect = np.concatenate(
            [chirp_waveform(s_prev, head_t, CFG), chirp_waveform(s_cur, tail_t, CFG)]
        )
        assert np.max(np.abs(window - expect)) < 1e-9

    def test_power_ratio_over_overlap(self):
        rng = np.random.default_rng(0)
        pay = tuple(rng.integers(0, 128, 16))
        a = synthesize_user(FrameSpec(pay), UserParams(power=1.0), CFG, False)
        b = synthesize_user(FrameSpec(pay), UserParams(power=3.0, sto_chips=20.25), CFG, False)
        lo, hi = 4 * 1024, 12 * 1024
        ratio = np.mean(np.abs(b[lo:hi]) ** 2) / np.mean(np.abs(a[lo:hi]) ** 2)
        assert ratio == pytest.approx(3.0, rel=0.01)


class TestIqExport:
    def test_round_trip(self, tmp_path):
        x = np.array([1 + 2j, -3 - 4j, 0.5j])
        path = tmp_path / "dump.iq"
        write_iq(x, path)
        assert np.allclose(read_iq(path), x, atol=1e-7)

    def test_wire_format_interleaved_le_float32(self, tmp_path):
        path = tmp_path / "dump.iq"
        write_iq(np.array([1 + 2j]), path)
        raw = path.read_bytes()
        assert len(raw) == 8
        i, q = np.frombuffer(raw, dtype="<f4")
        assert (i, q) == (1.0, 2.0)


def test_per_user_snr_bookkeeping():
    # With unit-power chirps the weak-user SNR in dB is 10 log10(P / var).
    p, var = 1.0, 10 ** 0.6
    assert 10 * np.log10(p / var) == pytest.approx(-6.0)
