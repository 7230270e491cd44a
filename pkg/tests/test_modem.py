import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amcvit.errors import BitCountMismatch, InvalidSpec, LengthMismatch, NonIntegerDelay, ZeroNoise
from amcvit.modem import (
    ChannelConfig,
    FrameSpec,
    IQSignal,
    ModulationScheme,
    apply_awgn,
    apply_multipath,
    cpm_phase,
    delay_offsets,
    dqpsk_phase_index,
    generate_bits,
    map_symbols,
    measure_snr,
    modulate_frame,
    path_gains,
    transmit,
)

M = ModulationScheme


def fir_oracle(x, gains, offsets):
    """Direct tapped-delay-line evaluation, one output sample at a time."""
    y = []
    for n in range(len(x)):
        acc = 0j
        for g, d in zip(gains, offsets):
            if n - d >= 0:
                acc = acc + g * x[n - d]
        y.append(acc)
    return np.array(y, dtype=np.complex128)


class TestScheme:
    def test_ten_unique_labels(self):
        labels = [s.label for s in M]
        assert sorted(labels) == list(range(10))

    @pytest.mark.parametrize("name, expected", [
        ("OOK", M.OOK), ("4ASK", M.ASK4), ("ASK4", M.ASK4), ("gmsk", M.GMSK), (" 16PAM ", M.PAM16),
    ])
    def test_parse(self, name, expected):
        assert M.parse(name) is expected

    def test_parse_unknown(self):
        with pytest.raises(ValueError):
            M.parse("BOGUS")

    def test_from_label_roundtrip(self):
        for s in M:
            assert M.from_label(s.label) is s


class TestBits:
    def test_deterministic(self):
        spec = FrameSpec(M.OOK, n_symbols=8, rng_seed=0)
        a, b = generate_bits(spec), generate_bits(spec)
        assert a.size == 8
        np.testing.assert_array_equal(a, b)

    def test_counts(self):
        assert generate_bits(FrameSpec(M.PAM16, n_symbols=4)).size == 16
        assert generate_bits(FrameSpec(M.GMSK, n_symbols=5)).size == 5

    def test_seed_changes_bits(self):
        a = generate_bits(FrameSpec(M.OOK, n_symbols=256, rng_seed=1))
        b = generate_bits(FrameSpec(M.OOK, n_symbols=256, rng_seed=2))
        assert not np.array_equal(a, b)


class TestMapSymbols:
    def test_ook(self):
        np.testing.assert_allclose(map_symbols(M.OOK, [1, 0]), [math.sqrt(2), 0])

    def test_4pam_levels(self):
        # Gray labels 00,01,11,10 -> -3,-1,+1,+3
        s = map_symbols(M.PAM4, [0, 0, 0, 1, 1, 1, 1, 0])
        np.testing.assert_allclose(s.real, np.array([-3, -1, 1, 3]) / math.sqrt(5))

    def test_dqpsk_accumulates(self):
        # bits 01 -> +pi/2 increment
        bits = [0, 1, 0, 1]
        assert list(dqpsk_phase_index(bits) * math.pi / 2) == [math.pi / 2, math.pi]
        np.testing.assert_allclose(map_symbols(M.DQPSK, bits), [1j, -1])

    def test_cpm_data_values(self):
        np.testing.assert_array_equal(map_symbols(M.GFSK, [1, 0, 1]).real, [1, -1, 1])

    def test_bit_count_mismatch(self):
        with pytest.raises(BitCountMismatch):
            map_symbols(M.ASK8, [1, 0])

    @pytest.mark.parametrize("scheme", [s for s in M if not s.is_cpm])
    def test_unit_average_power(self, scheme):
        k = scheme.bits_per_symbol
        words = np.arange(2**k)
        bits = ((words[:, None] >> np.arange(k - 1, -1, -1)) & 1).ravel()
        symbols = map_symbols(scheme, bits)
        assert np.mean(np.abs(symbols) ** 2) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("scheme", [M.ASK4, M.ASK8, M.PAM4, M.PAM16])
    def test_gray_adjacent_levels_differ_by_one_bit(self, scheme):
        k = scheme.bits_per_symbol
        words = np.arange(2**k)
        bits = ((words[:, None] >> np.arange(k - 1, -1, -1)) & 1).ravel()
        levels = map_symbols(scheme, bits).real
        order = words[np.argsort(levels)]
        for a, b in zip(order, order[1:]):
            assert bin(a ^ b).count("1") == 1


class TestModulate:
    def test_ook_all_ones_constant_envelope(self, monkeypatch):
        import amcvit.modem as modem

        monkeypatch.setattr(modem, "generate_bits", lambda spec: np.ones(spec.n_symbols, dtype=np.uint8))
        sig = modulate_frame(FrameSpec(M.OOK, n_symbols=32))
        np.testing.assert_allclose(np.abs(sig.samples), 1.0, atol=1e-12)

    def test_gmsk_constant_modulus(self):
        sig = modulate_frame(FrameSpec(M.GMSK, n_symbols=500, rng_seed=4))
        assert np.max(np.abs(np.abs(sig.samples) - 1.0)) < 1e-9

    def test_cpfsk_matches_phase_integral(self):
        sps, h = 8, 0.5
        data = np.array([1, -1] * 8, dtype=np.complex128)
        phase = cpm_phase(data, M.CPFSK, sps, h)
        # oracle: integrate the rectangular frequency pulse sample by sample
        expected, acc = [], 0.0
        for a in data.real:
            for _ in range(sps):
                expected.append(acc)
                acc += math.pi * h * a / sps
        np.testing.assert_allclose(phase, expected, atol=1e-12)
        steps = np.diff(phase)
        np.testing.assert_allclose(np.abs(steps), math.pi / 16, atol=1e-12)

    @pytest.mark.parametrize("scheme", [M.CPFSK, M.GFSK, M.GMSK])
    def test_cpm_phase_continuity(self, scheme):
        spec = FrameSpec(scheme, n_symbols=300, rng_seed=9)
        sig = modulate_frame(spec)
        jumps = np.abs(np.angle(sig.samples[1:] / sig.samples[:-1]))
        assert jumps.max() <= math.pi * 0.5 / spec.samples_per_symbol + 1e-9

    @pytest.mark.parametrize("scheme", list(M))
    def test_length_and_power(self, scheme):
        spec = FrameSpec(scheme, n_symbols=10_000, rng_seed=1)
        sig = modulate_frame(spec)
        assert len(sig) == spec.n_symbols * spec.samples_per_symbol
        assert abs(sig.power - 1.0) < 0.01

    def test_oqpsk_needs_even_sps(self):
        with pytest.raises(InvalidSpec):
            modulate_frame(FrameSpec(M.OQPSK, n_symbols=4, samples_per_symbol=7))

    def test_oqpsk_quadrature_offset(self):
        sig = modulate_frame(FrameSpec(M.OQPSK, n_symbols=64, rng_seed=3), pulse_taps=1)
        i, q = sig.samples.real, sig.samples.imag
        # without smoothing, I changes only on symbol edges and Q only half a symbol later
        i_edges = np.flatnonzero(np.diff(i)) + 1
        q_edges = np.flatnonzero(np.diff(q)) + 1
        assert np.all(i_edges % 8 == 0)
        assert np.all(q_edges % 8 == 4)

    def test_deterministic(self):
        spec, cfg = FrameSpec(M.DQPSK, n_symbols=128, rng_seed=5), ChannelConfig(snr_db=3, rng_seed=6)
        a, b = transmit(spec, cfg), transmit(spec, cfg)
        np.testing.assert_array_equal(a[1].samples, b[1].samples)


class TestMultipath:
    def test_identity_channel(self):
        x = IQSignal(np.exp(1j * np.arange(50)))
        y = apply_multipath(x, ChannelConfig(path_delays_s=(0.0,), path_gains_db=(0.0,)))
        np.testing.assert_array_equal(y.samples, x.samples)

    def test_delay_offsets(self):
        assert delay_offsets((0, 0.0004, 0.0008), 200_000) == [0, 80, 160]

    def test_non_integer_delay(self):
        x = IQSignal(np.ones(10))
        with pytest.raises(NonIntegerDelay):
            apply_multipath(x, ChannelConfig(path_delays_s=(0.0, 1.3e-5), path_gains_db=(0.0, 0.0)))

    def test_impulse_response(self):
        x = np.zeros(400, dtype=np.complex128)
        x[0] = 1.0
        y = apply_multipath(IQSignal(x), ChannelConfig()).samples
        g = path_gains((0.0, -3.0, -6.0))
        expected = np.zeros(400, dtype=np.complex128)
        expected[[0, 80, 160]] = g
        np.testing.assert_array_equal(y, expected)
        assert np.sum(g**2) == pytest.approx(1.0, abs=1e-15)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 1024), st.integers(0, 2**32))
    def test_matches_fir_oracle_exactly(self, n, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        cfg = ChannelConfig()
        y = apply_multipath(IQSignal(x), cfg).samples
        np.testing.assert_array_equal(y, fir_oracle(x, path_gains(cfg.path_gains_db), [0, 80, 160]))

    def test_energy_preserved_on_white_input(self):
        rng = np.random.default_rng(0)
        x = (rng.standard_normal(200_000) + 1j * rng.standard_normal(200_000)) / math.sqrt(2)
        y = apply_multipath(IQSignal(x), ChannelConfig())
        assert abs(y.power - 1.0) < 0.05

    def test_config_validation(self):
        with pytest.raises(InvalidSpec):
            ChannelConfig(path_delays_s=(0.0004, 0.0), path_gains_db=(0, 0))
        with pytest.raises(InvalidSpec):
            ChannelConfig(path_delays_s=(0.0, 0.0004), path_gains_db=(0,))


class TestNoise:
    def test_infinite_snr_is_identity(self):
        x = IQSignal(np.exp(1j * np.arange(100)))
        np.testing.assert_array_equal(apply_awgn(x, math.inf, 0).samples, x.samples)

    def test_zero_db_unit_variance(self):
        x = IQSignal(np.ones(200_000, dtype=np.complex128))
        noise = apply_awgn(x, 0.0, 1).samples - x.samples
        assert np.var(noise) == pytest.approx(1.0, rel=0.02)
        # circular symmetry: equal power on both rails
        assert np.var(noise.real) == pytest.approx(0.5, rel=0.03)
        assert np.var(noise.imag) == pytest.approx(0.5, rel=0.03)

    def test_calibration_6db(self):
        x = modulate_frame(FrameSpec(M.PAM4, n_symbols=12_500, rng_seed=2))
        assert len(x) == 100_000
        assert abs(measure_snr(x, apply_awgn(x, 6.0, 3)) - 6.0) < 0.2

    def test_seeded(self):
        x = IQSignal(np.ones(64))
        np.testing.assert_array_equal(apply_awgn(x, 5, 7).samples, apply_awgn(x, 5, 7).samples)


class TestMeasureSnr:
    def test_zero_noise(self):
        x = IQSignal(np.ones(8))
        with pytest.raises(ZeroNoise):
            measure_snr(x, x)

    def test_equal_powers(self):
        x = IQSignal(np.ones(8))
        assert measure_snr(x, IQSignal(np.full(8, 2.0))) == pytest.approx(0.0, abs=1e-12)

    def test_quarter_noise_power(self):
        x = IQSignal(np.ones(16, dtype=np.complex128))
        noisy = IQSignal(x.samples + 0.5 * np.exp(1j * np.arange(16)))
        assert measure_snr(x, noisy) == pytest.approx(10 * math.log10(4), abs=1e-12)
        assert 10 * math.log10(4) == pytest.approx(6.0206, abs=1e-4)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            measure_snr(IQSignal(np.ones(4)), IQSignal(np.ones(5)))
