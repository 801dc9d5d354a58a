import math

import numpy as np
import pytest
from scipy.integrate import quad

from aeclab import (
    ConfigurationError,
    NonlinearitySpec,
    RirSpec,
    ScenarioSpec,
    SectionSpec,
    SigmoidParams,
    SourceSpec,
    build_scenario,
    echo_with_switches,
    sef_distort,
    sigmoid_distort,
    synth_rir,
)

from oracles import direct_convolution


class TestSynthRir:
    def test_unit_energy(self):
        h = synth_rir(RirSpec(0.3, length=4000, seed=1))
        assert np.sum(h**2) == pytest.approx(1.0, abs=1e-12)

    def test_same_seed_is_identical(self):
        a = synth_rir(RirSpec(0.25, length=2000, seed=42))
        b = synth_rir(RirSpec(0.25, length=2000, seed=42))
        assert np.array_equal(a, b)

    def test_decay_rate_matches_rt60(self):
        # Schroeder-style: the energy decay curve should drop 60 dB over
        # rt60 * fs samples; fit the slope over many seeds.
        fs = 16000
        rt60 = 0.3
        length = int(rt60 * fs)
        slopes = []
        for seed in range(30):
            h = synth_rir(RirSpec(rt60, length=length, sample_rate=fs, seed=seed))
            edc = np.cumsum(h[::-1] ** 2)[::-1]
            db = 10.0 * np.log10(edc / edc[0])
            fit_range = slice(0, int(0.7 * length))
            n = np.arange(length)[fit_range]
            slope = np.polyfit(n, db[fit_range], 1)[0]
            slopes.append(slope)
        expected = -60.0 / (rt60 * fs)
        assert np.mean(slopes) == pytest.approx(expected, rel=0.15)

    def test_rt60_range_enforced(self):
        with pytest.raises(ConfigurationError):
            RirSpec(0.9)
        RirSpec(0.9, allow_extended=True)  # explicit override accepted

    def test_default_length_covers_decay(self):
        spec = RirSpec(0.2, sample_rate=16000)
        assert spec.num_samples == 3200


class TestSefDistort:
    def test_zero_maps_to_zero(self):
        assert sef_distort(0.0, 1.0) == 0.0

    def test_large_alpha_is_identity(self):
        x = np.linspace(-1.0, 1.0, 201)
        out = sef_distort(x, 999.0)
        assert np.max(np.abs(out - x)) < 1e-6

    def test_unit_input_value(self):
        value = sef_distort(1.0, 1.0)
        reference, _ = quad(lambda z: math.exp(z * z / 2.0), 0.0, 1.0)
        assert value == pytest.approx(reference, abs=1e-9)
        assert value == pytest.approx(1.19496, abs=1e-4)

    def test_odd_symmetry(self):
        x = np.linspace(0.0, 1.0, 64)
        assert np.max(np.abs(sef_distort(-x, 0.7) + sef_distort(x, 0.7))) < 1e-12

    def test_quadrature_fallback_branch(self):
        # |x / alpha| > 3 exercises the quadrature path
        alpha = 0.25
        for x in (0.8, -0.95, 1.0):
            value = sef_distort(x, alpha)
            mag, _ = quad(lambda z: math.exp(z * z / (2 * alpha * alpha)), 0, abs(x))
            assert value == pytest.approx(math.copysign(mag, x), rel=1e-8)

    def test_series_and_quadrature_agree_at_the_span_boundary(self):
        alpha = 0.5
        for x in (1.49, 1.51):  # straddles |x/alpha| = 3
            mag, _ = quad(lambda z: math.exp(z * z / (2 * alpha * alpha)), 0, x)
            assert sef_distort(x, alpha) == pytest.approx(mag, rel=1e-9)

    def test_alpha_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            sef_distort(0.5, 0.0)


class TestSigmoidDistort:
    def test_zero_maps_to_zero(self):
        assert sigmoid_distort(0.0) == 0.0

    def test_monotone_on_unit_interval(self):
        x = np.linspace(-1.0, 1.0, 401)
        y = sigmoid_distort(x)
        assert np.all(np.diff(y) > 0)

    def test_bounded_by_gain(self):
        x = np.linspace(-5.0, 5.0, 101)
        y = sigmoid_distort(x, SigmoidParams(gain=1.0))
        assert np.max(np.abs(y)) <= 1.0

    def test_full_scale_sine_is_measurably_nonlinear(self):
        fs = 16000
        f0 = 500.0
        n = fs  # one second, integer number of cycles
        t = np.arange(n) / fs
        y = sigmoid_distort(np.sin(2 * np.pi * f0 * t))
        spectrum = np.abs(np.fft.rfft(y)) / n
        fundamental_bin = int(f0 * n / fs)
        fundamental = spectrum[fundamental_bin]
        harmonics = [
            spectrum[k * fundamental_bin]
            for k in range(2, 6)
            if k * fundamental_bin < len(spectrum)
        ]
        thd = math.sqrt(sum(h**2 for h in harmonics)) / fundamental
        assert thd > 0.01


class TestEchoWithSwitches:
    def test_single_segment_matches_direct_convolution(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(2000)
        h = rng.standard_normal(64)
        out = echo_with_switches(x, [(0, h)])
        ref = direct_convolution(x, h)
        assert np.linalg.norm(out - ref) / np.linalg.norm(ref) < 1e-10

    def test_switch_to_identical_response_only_perturbs_transient(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(3000)
        h = rng.standard_normal(50)
        switch = 1500
        no_switch = echo_with_switches(x, [(0, h)])
        switched = echo_with_switches(x, [(0, h), (switch, h)])
        # pre-switch samples agree up to FFT-size rounding of the segments
        np.testing.assert_allclose(switched[:switch], no_switch[:switch], atol=1e-12)
        transient = slice(switch, switch + len(h) - 1)
        assert np.any(switched[transient] != no_switch[transient])
        np.testing.assert_allclose(
            switched[switch + len(h) - 1 :], no_switch[switch + len(h) - 1 :],
            atol=1e-12,
        )

    def test_switch_to_zero_response_silences_echo(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(1000)
        h = rng.standard_normal(32)
        out = echo_with_switches(x, [(0, h), (500, np.zeros(32))])
        assert np.all(out[500:] == 0.0)
        assert np.any(out[:500] != 0.0)

    def test_switch_at_zero_equivalent_to_new_response_throughout(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(1000)
        h0 = rng.standard_normal(32)
        h1 = rng.standard_normal(32)
        a = echo_with_switches(x, [(0, h0), (0, h1)])
        b = echo_with_switches(x, [(0, h1)])
        np.testing.assert_array_equal(a, b)

    def test_schedule_validation(self):
        x = np.zeros(100)
        with pytest.raises(ConfigurationError):
            echo_with_switches(x, [])
        with pytest.raises(ConfigurationError):
            echo_with_switches(x, [(10, np.ones(4))])
        with pytest.raises(ConfigurationError):
            echo_with_switches(x, [(0, np.ones(4)), (200, np.ones(4))])


def short_spec(**overrides):
    defaults = dict(
        sections=(
            SectionSpec("stfe", 1.0),
            SectionSpec("stne", 1.0),
            SectionSpec("dt", 1.0),
        ),
        ser_db=0.0,
        snr_db=20.0,
        rir_schedule=((0.0, RirSpec(0.1, length=400)),),
        seed=7,
    )
    defaults.update(overrides)
    return ScenarioSpec(**defaults)


class TestBuildScenario:
    def test_component_identity_is_exact(self):
        scenario = build_scenario(short_spec())
        total = scenario.near_speech + scenario.noise + scenario.echo
        assert np.array_equal(scenario.microphone, total)

    def test_determinism(self):
        a = build_scenario(short_spec())
        b = build_scenario(short_spec())
        for field in ("reference", "loudspeaker", "echo", "near_speech", "noise", "microphone"):
            assert np.array_equal(getattr(a, field), getattr(b, field))

    def test_section_masks_are_exact(self):
        scenario = build_scenario(short_spec())
        for kind, start, stop in scenario.sections:
            if kind == "stfe":
                assert np.all(scenario.near_speech[start:stop] == 0.0)
            if kind == "stne":
                assert np.all(scenario.reference[start:stop] == 0.0)

    def test_ser_calibration(self):
        for ser in (-6.0, 0.0, 6.0):
            scenario = build_scenario(short_spec(ser_db=ser))
            kind, start, stop = scenario.sections_of("dt")[0]
            s = scenario.near_speech
            region = np.zeros(len(s), dtype=bool)
            region[start:stop] = True
            power = s**2
            peak = np.max(power[region])
            active = region & (power >= peak * 1e-4)
            measured = 10.0 * np.log10(
                np.mean(s[active] ** 2) / np.mean(scenario.echo[active] ** 2)
            )
            assert measured == pytest.approx(ser, abs=1e-6)

    def test_snr_none_means_no_noise(self):
        scenario = build_scenario(short_spec(snr_db=None))
        assert np.all(scenario.noise == 0.0)
        assert np.array_equal(
            scenario.microphone, scenario.near_speech + scenario.echo
        )

    def test_snr_calibration_against_active_speech(self):
        scenario = build_scenario(short_spec(snr_db=10.0))
        s = scenario.near_speech
        active_region = s != 0.0
        power = s**2
        peak = np.max(power[active_region])
        active = active_region & (power >= peak * 1e-4)
        measured = 10.0 * np.log10(
            np.mean(s[active] ** 2) / np.mean(scenario.noise**2)
        )
        assert measured == pytest.approx(10.0, abs=0.1)

    def test_linear_echo_matches_direct_convolution(self):
        spec = short_spec(
            sections=(SectionSpec("stfe", 0.5),),
            nonlinearity=NonlinearitySpec(kind="none"),
        )
        scenario = build_scenario(spec)
        h = scenario.rirs[0][1]
        ref = direct_convolution(scenario.loudspeaker, h)
        assert np.linalg.norm(scenario.echo - ref) / np.linalg.norm(ref) < 1e-10

    def test_reference_normalized_before_distortion(self):
        scenario = build_scenario(short_spec())
        assert np.max(np.abs(scenario.reference)) == pytest.approx(1.0)

    def test_nonlinearity_applied(self):
        spec = short_spec(nonlinearity=NonlinearitySpec(kind="sef", sef_alpha=0.5))
        scenario = build_scenario(spec)
        expected = sef_distort(scenario.reference, 0.5)
        np.testing.assert_allclose(scenario.loudspeaker, expected, atol=1e-12)

    def test_wav_source_roundtrip(self, tmp_path):
        from aeclab import AudioBuffer, write_wav

        rng = np.random.default_rng(4)
        samples = np.clip(0.2 * rng.standard_normal(8000), -0.9, 0.9).astype(np.float32)
        path = tmp_path / "far.wav"
        write_wav(AudioBuffer(samples.astype(float), 16000), path)
        spec = short_spec(
            sections=(SectionSpec("stfe", 1.0),),
            far_source=SourceSpec("wav", str(path)),
            snr_db=None,
        )
        scenario = build_scenario(spec)
        tiled = np.tile(samples.astype(float), 2)[:16000]
        np.testing.assert_allclose(
            scenario.reference, tiled / np.max(np.abs(tiled)), atol=1e-12
        )

    def test_rir_switch_respected(self):
        spec = short_spec(
            sections=(SectionSpec("stfe", 1.0),),
            rir_schedule=(
                (0.0, RirSpec(0.1, length=400)),
                (0.5, RirSpec(0.1, length=400)),
            ),
        )
        scenario = build_scenario(spec)
        assert scenario.rirs[1][0] == 8000
        assert not np.array_equal(scenario.rirs[0][1], scenario.rirs[1][1])
        assert scenario.rir_at(0) is scenario.rirs[0][1]
        assert scenario.rir_at(8000) is scenario.rirs[1][1]

    def test_switch_time_outside_signal_rejected(self):
        with pytest.raises(ConfigurationError):
            short_spec(
                rir_schedule=(
                    (0.0, RirSpec(0.1, length=400)),
                    (5.0, RirSpec(0.1, length=400)),
                )
            )

    def test_section_kind_validated(self):
        with pytest.raises(ConfigurationError):
            SectionSpec("chatter", 1.0)
