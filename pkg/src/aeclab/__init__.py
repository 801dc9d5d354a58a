"""Adaptive echo cancellation lab: frequency-domain Kalman filtering,
classical baselines, scenario simulation, and ERLE-based evaluation."""

__version__ = "0.1.0"

from .errors import ConfigurationError
from .framing import (
    MODE_OLA,
    MODE_OLS,
    WINDOW_RECT,
    WINDOW_SQRT_HANN,
    AnalysisStream,
    FrameConfig,
    OlaSynthesisStream,
    OlsSynthesisStream,
    SpectralFrame,
    check_cola,
    cola_constant,
    equivalent_impulse_response,
    filter_to_bins,
    make_synthesis_stream,
    make_window,
    window_coefficients,
)
from .filters import (
    Fdkf,
    FdkfParams,
    FdkfState,
    FdNlmsGainLaw,
    KalmanGainLaw,
    Nlms,
    VssGainLaw,
    covariance_update,
    fd_nlms_gain,
    filter_update,
    kalman_gain,
    observation_noise_update,
    prediction_error,
    push_reference,
    vss_gain,
)
from .echosim import (
    NonlinearitySpec,
    RirSpec,
    Scenario,
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
from .metrics import (
    ErleConfig,
    aggregate_sections,
    erle,
    log_mse,
    misalignment,
    misalignment_db,
)
from .audio_io import (
    AudioBuffer,
    ExperimentConfig,
    config_from_dict,
    config_to_dict,
    default_frame_config,
    load_config,
    read_wav,
    save_config,
    write_wav,
)
from .runner import (
    FilterRun,
    evaluate,
    make_scenario,
    run_fdkf,
    run_filter,
    run_nlms,
    scenario_from_files,
)
