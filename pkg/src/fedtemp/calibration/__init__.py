from .calibrators import (
    CALIBRATORS,
    HistogramBinning,
    IsotonicCalibration,
    IsotonicConfidence,
    PlattScaling,
    TemperatureScaling,
    apply_calibrator,
    fit_calibrator,
    golden_section,
    logit_margin,
    pool_adjacent_violators,
)
from .metrics import (
    DEFAULT_BINS,
    CalibrationReport,
    PredictionSet,
    ReliabilityBins,
    bin_index,
    brier,
    calibration_report,
    ece,
    evaluate,
    nll,
    predictions_from_logits,
    reliability_bins,
    sece,
    write_reliability_csv,
)
