import numpy as np
import pytest
import yaml

from aeclab import (
    AudioBuffer,
    ConfigurationError,
    config_from_dict,
    config_to_dict,
    default_frame_config,
    load_config,
    read_wav,
    save_config,
    write_wav,
)


class TestWavRoundTrip:
    def test_float32_is_lossless(self, tmp_path):
        rng = np.random.default_rng(0)
        samples = rng.uniform(-1.0, 1.0, 4096).astype(np.float32).astype(float)
        path = tmp_path / "a.wav"
        clipped = write_wav(AudioBuffer(samples, 16000), path)
        assert clipped == 0
        back = read_wav(path)
        assert back.sample_rate == 16000
        assert np.array_equal(back.samples, samples)

    def test_pcm16_full_scale_square_wave(self, tmp_path):
        square = np.tile([1.0, -1.0], 100)
        path = tmp_path / "sq.wav"
        write_wav(AudioBuffer(square, 16000), path, bit_depth=16)
        back = read_wav(path)
        expected = 32767.0 / 32768.0
        assert np.all(np.abs(back.samples) == expected)

    def test_zero_length_buffer(self, tmp_path):
        path = tmp_path / "empty.wav"
        write_wav(AudioBuffer(np.empty(0), 16000), path)
        back = read_wav(path)
        assert len(back.samples) == 0

    def test_clipping_saturates_and_counts(self, tmp_path):
        samples = np.array([0.0, 2.0, -3.0, 0.5])
        path = tmp_path / "clip.wav"
        clipped = write_wav(AudioBuffer(samples, 16000), path)
        assert clipped == 2
        back = read_wav(path)
        np.testing.assert_allclose(back.samples, [0.0, 1.0, -1.0, 0.5], atol=1e-7)

    def test_stereo_takes_first_channel_with_warning(self, tmp_path):
        from scipy.io import wavfile

        data = np.stack(
            [np.linspace(-0.5, 0.5, 100), np.zeros(100)], axis=1
        ).astype(np.float32)
        path = tmp_path / "stereo.wav"
        wavfile.write(path, 16000, data)
        with pytest.warns(UserWarning, match="first channel"):
            back = read_wav(path)
        np.testing.assert_allclose(back.samples, data[:, 0], atol=1e-7)

    def test_sample_rate_mismatch_rejected(self, tmp_path):
        path = tmp_path / "sr.wav"
        write_wav(AudioBuffer(np.zeros(10), 8000), path)
        with pytest.raises(ConfigurationError, match="no resampling"):
            read_wav(path, expected_rate=16000)

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_wav(tmp_path / "nope.wav")

    def test_non_finite_samples_rejected(self, tmp_path):
        buffer = AudioBuffer(np.zeros(4), 16000)
        buffer.samples[1] = np.inf
        with pytest.raises(ConfigurationError):
            write_wav(buffer, tmp_path / "x.wav")
        with pytest.raises(ConfigurationError):
            AudioBuffer(np.array([1.0, np.nan]), 16000)


class TestFramePresets:
    def test_ola_default(self):
        cfg = default_frame_config()
        assert (cfg.dft_size, cfg.frame_shift, cfg.taps) == (512, 128, 8)
        assert cfg.window == "sqrt_hann"

    def test_ols_single_tap_default(self):
        cfg = default_frame_config("ols")
        assert (cfg.dft_size, cfg.frame_shift, cfg.taps) == (1408, 512, 1)
        assert cfg.window == "rect"

    def test_ols_two_tap_default(self):
        cfg = default_frame_config("ols", taps=2)
        assert (cfg.dft_size, cfg.frame_shift, cfg.taps) == (896, 512, 2)

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigurationError):
            default_frame_config("ols", taps=5)


class TestExperimentConfig:
    def test_empty_file_materializes_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        config = load_config(path)
        assert config.frame.dft_size == 512
        assert config.frame.frame_shift == 128
        assert config.frame.taps == 8
        assert config.frame.mode == "ola"
        assert config.fdkf.state_transition == 0.999
        assert config.fdkf.smoothing == 0.5
        assert config.filters == ["fdkf", "nlms"]
        assert config.scenario is not None

    def test_invalid_transition_cites_bounds(self):
        with pytest.raises(ConfigurationError, match="0 < A <= 1"):
            config_from_dict({"fdkf": {"state_transition": 1.5}})

    def test_ols_two_tap_defaults(self):
        config = config_from_dict({"frame": {"mode": "ols", "taps": 2}})
        assert config.frame.dft_size == 896
        assert config.frame.frame_shift == 512

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown key"):
            config_from_dict({"frame": {"mode": "ola", "dft_len": 512}})
        with pytest.raises(ConfigurationError, match="unknown key"):
            config_from_dict({"bogus_section": {}})

    def test_scenario_and_inputs_mutually_exclusive(self, tmp_path):
        raw = {
            "scenario": {},
            "inputs": {"reference": "x.wav", "microphone": "y.wav"},
        }
        with pytest.raises(ConfigurationError, match="mutually exclusive"):
            config_from_dict(raw)

    def test_inputs_require_reference_and_microphone(self):
        with pytest.raises(ConfigurationError, match="missing required"):
            config_from_dict({"inputs": {"reference": "x.wav"}})

    def test_unknown_filter_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown filter"):
            config_from_dict({"filters": ["fdkf", "wiener"]})

    def test_config_echo_roundtrip(self, tmp_path):
        raw = {
            "seed": 5,
            "frame": {"mode": "ols", "taps": 1},
            "fdkf": {"state_transition": 0.995, "regularization": 1e-9},
            "filters": ["fdkf", "oracle_fdkf", "nlms"],
            "scenario": {
                "ser_db": -3.0,
                "snr_db": 15.0,
                "sections": [
                    {"kind": "stfe", "duration": 2.0},
                    {"kind": "dt", "duration": 2.0},
                ],
                "rir": [{"time": 0.0, "rt60": 0.25, "length": 800}],
                "nonlinearity": {"kind": "sef", "sef_alpha": 1.0},
            },
        }
        config = config_from_dict(raw)
        path = tmp_path / "echo.yaml"
        save_config(config, path)
        reloaded = load_config(path)
        assert config_to_dict(reloaded) == config_to_dict(config)

    def test_yaml_sources_from_strings(self):
        config = config_from_dict(
            {"scenario": {"far_source": "speech", "near_source": "wgn"}}
        )
        assert config.scenario.far_source.kind == "speech"
        assert config.scenario.near_source.kind == "wgn"

    def test_scenario_rate_must_match_frame_rate(self):
        import dataclasses

        from aeclab import RirSpec, ScenarioSpec

        base = config_from_dict({})
        mismatched = ScenarioSpec(
            sample_rate=8000,
            rir_schedule=((0.0, RirSpec(0.2, sample_rate=8000)),),
        )
        with pytest.raises(ConfigurationError, match="sample rate"):
            dataclasses.replace(base, scenario=mismatched)
