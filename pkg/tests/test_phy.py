"""Chirp synthesis, dechirping and single-user detection."""
import numpy as np
import pytest

from loramux.phy import (
    LoraConfig,
    build_preamble,
    chirp_waveform,
    dechirp,
    demod_single,
    downchirp,
    modulate,
)

CFG7 = LoraConfig(sf=7)


def dft_direct(x):
    """Direct-summation DFT, independent of the fft library."""
    n = len(x)
    k = np.arange(n)
    return np.array([np.sum(x * np.exp(-2j * np.pi * k * i / n)) for i in range(n)])


class TestConfig:
    def test_derived_fields(self):
        cfg = LoraConfig(sf=9, bandwidth_hz=250e3, os_factor=4)
        assert cfg.n_chips == 512
        assert cfg.sample_rate_hz == 1e6
        assert cfg.samples_per_symbol == 2048

    def test_validation(self):
        with pytest.raises(ValueError):
            LoraConfig(sf=0)
        with pytest.raises(ValueError):
            LoraConfig(sf=13)
        with pytest.raises(ValueError):
            LoraConfig(os_factor=0)
        with pytest.raises(ValueError):
            LoraConfig(preamble_len=1)
        with pytest.raises(ValueError):
            LoraConfig(sync_symbols=(0, 200))

    def test_preamble_symbol_count(self):
        assert LoraConfig(sf=7, preamble_len=8).preamble_symbols == 12.25


class TestModulate:
    def test_first_sample_is_one(self):
        assert modulate(0, CFG7)[0] == pytest.approx(1 + 0j)

    def test_fold_index(self):
        # Symbol 64 at SF7 folds at chip 128 - 64 = 64: the phase slope
        # drops by one cycle per chip right there.
        s = 64
        x = modulate(s, CFG7)
        n = CFG7.n_chips
        freq = np.angle(x[1:] * np.conj(x[:-1])) / (2 * np.pi)
        # instantaneous frequency is ~ (s/N - 1/2) + n/N, wrapping at the fold
        n_f = n - s
        before = freq[n_f - 2]
        after = freq[n_f]
        assert after < before  # wrapped downward across the fold

    def test_fold_index_oversampled(self):
        # At fractional times just past the fold the per-sample phase
        # increment turns negative; just before it, it is still positive.
        s, r = 64, 4
        cfg = LoraConfig(sf=7, os_factor=r)
        x = modulate(s, cfg, oversampled=True)
        n_f = (cfg.n_chips - s) * r
        freq = np.angle(x[1:] * np.conj(x[:-1]))
        assert freq[n_f] < 0 < freq[n_f - r]

    def test_tone_after_dechirp(self):
        spectrum = dft_direct(dechirp(modulate(5, CFG7), CFG7))
        mags = np.abs(spectrum)
        assert mags[5] == pytest.approx(128, abs=1e-9)
        mags[5] = 0
        assert mags.max() < 1e-9

    def test_symbol_range_checked(self):
        with pytest.raises(ValueError):
            modulate(128, CFG7)
        with pytest.raises(ValueError):
            modulate(-1, CFG7)


class TestDownchirp:
    def test_product_with_upchirp_is_one(self):
        prod = downchirp(CFG7) * modulate(0, CFG7)
        assert np.max(np.abs(prod - 1)) < 1e-12

    def test_is_conjugate(self):
        assert np.array_equal(downchirp(CFG7), np.conj(modulate(0, CFG7)))

    def test_oversampled_length(self):
        cfg = LoraConfig(sf=9, os_factor=8)
        assert len(downchirp(cfg, oversampled=True)) == 512 * 8


class TestDechirp:
    def test_pure_tone(self):
        out = dechirp(modulate(3, CFG7), CFG7)
        n = np.arange(128)
        assert np.max(np.abs(out - np.exp(2j * np.pi * n * 3 / 128))) < 1e-12

    def test_scaled_rotated_base(self):
        y = 2 * np.exp(1j * np.pi / 4) * modulate(0, CFG7)
        out = dechirp(y, CFG7)
        assert np.max(np.abs(out - 2 * np.exp(1j * np.pi / 4))) < 1e-12

    def test_linearity_two_tones(self):
        y = modulate(100, CFG7) + modulate(27, CFG7)
        mags = np.abs(dft_direct(dechirp(y, CFG7)))
        big = np.flatnonzero(mags > 127)
        assert set(big) == {27, 100}
        assert np.all(np.delete(mags, big) < 1e-8)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            dechirp(np.ones(64), CFG7)


class TestDemodSingle:
    def test_round_trip(self):
        got, _ = demod_single(modulate(42, CFG7), CFG7)
        assert got == 42

    def test_phase_rotation_invariance(self):
        for phi in (0.1, 1.7, -2.9):
            got, _ = demod_single(np.exp(1j * phi) * modulate(42, CFG7), CFG7)
            assert got == 42

    def test_capture_of_stronger_component(self):
        y = modulate(10, CFG7) + 0.5 * modulate(90, CFG7)
        got, spectrum = demod_single(y, CFG7)
        assert got == 10
        assert len(spectrum) == 128

    def test_returns_full_dft(self):
        _, spectrum = demod_single(modulate(3, CFG7), CFG7)
        ref = dft_direct(dechirp(modulate(3, CFG7), CFG7))
        assert np.max(np.abs(spectrum - ref)) < 1e-9


class TestPreamble:
    def test_total_length(self):
        assert len(build_preamble(CFG7)) == int(12.25 * 128) == 1568

    def test_starts_with_upchirps(self):
        pre = build_preamble(CFG7)
        assert np.max(np.abs(pre[:128] - modulate(0, CFG7))) == 0

    def test_tail_is_truncated_downchirps(self):
        pre = build_preamble(CFG7)
        tail = pre[-int(2.25 * 128):]
        ref = np.concatenate([np.tile(downchirp(CFG7), 2), downchirp(CFG7)[:32]])
        assert np.array_equal(tail, ref)

    def test_sync_symbols_in_place(self):
        cfg = LoraConfig(sf=7, sync_symbols=(24, 32))
        pre = build_preamble(cfg)
        lo = 8 * 128
        assert np.max(np.abs(pre[lo : lo + 128] - modulate(24, cfg))) < 1e-12
        assert np.max(np.abs(pre[lo + 128 : lo + 256] - modulate(32, cfg))) < 1e-12

    def test_oversampled_length(self):
        cfg = LoraConfig(sf=7, os_factor=8)
        assert len(build_preamble(cfg, oversampled=True)) == int(12.25 * 128 * 8)


class TestInvariants:
    @pytest.mark.parametrize("sf", [7, 9, 10])
    def test_unit_modulus(self, sf):
        cfg = LoraConfig(sf=sf)
        rng = np.random.default_rng(sf)
        for s in rng.integers(0, cfg.n_chips, 16):
            w = modulate(int(s), cfg)
            assert np.max(np.abs(np.abs(w) - 1)) < 1e-12

    def test_round_trip_exhaustive_sf7(self):
        for s in range(128):
            got, _ = demod_single(modulate(s, CFG7), CFG7)
            assert got == s

    def test_tone_purity_sampled(self):
        rng = np.random.default_rng(3)
        cfg = LoraConfig(sf=10)
        n = cfg.n_chips
        for s in rng.integers(0, n, 8):
            mags = np.abs(np.fft.fft(dechirp(modulate(int(s), cfg), cfg)))
            assert mags[s] == pytest.approx(n, rel=1e-12)
            mags[s] = 0
            assert mags.max() < 1e-8 * n

    def test_orthogonality_sampled(self):
        rng = np.random.default_rng(4)
        n = CFG7.n_chips
        for _ in range(40):
            s, t = rng.integers(0, n, 2)
            if s == t:
                continue
            ip = np.vdot(modulate(int(s), CFG7), modulate(int(t), CFG7))
            assert abs(ip) < 1e-8 * n

    @pytest.mark.parametrize("r", [2, 8])
    def test_decimation_consistency(self, r):
        cfg = LoraConfig(sf=8, os_factor=r)
        for s in (0, 17, 200, 255):
            full = modulate(s, cfg, oversampled=True)
            assert np.max(np.abs(full[::r] - modulate(s, cfg))) < 1e-12

    def test_fft_matches_direct_dft(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal(128) + 1j * rng.standard_normal(128)
        rel = np.abs(np.fft.fft(x) - dft_direct(x)) / np.linalg.norm(x)
        assert rel.max() < 1e-9

    def test_chirp_waveform_broadcasts(self):
        grid = chirp_waveform(np.array([[1], [2]]), np.arange(4.0)[None, :], CFG7)
        assert grid.shape == (2, 4)
