"""Monotone post-hoc recalibrators."""

from scoredecomp.recalib.calibrators import (
    METHODS,
    BinnedFit,
    Calibrator,
    ExactFit,
    IdentityCalibrator,
    IsotonicFit,
    MonotoneSplineFit,
    PlattFit,
    StepFit,
    binned_fit,
    calibrator_from_dict,
    calibrator_from_json,
    exact_fit,
    fit_calibrator,
    isotonic_fit,
    platt_fit,
    quantile_bins,
)
from scoredecomp.recalib.pav import SortedSample, pav_isotonic, pava
from scoredecomp.recalib.roc import roc_auc, threshold_preimage
from scoredecomp.recalib.spline import (
    kernel_presmooth,
    monotone_spline_fit,
    nadaraya_watson,
    pspline_fit,
    select_lambda,
    triweight,
)

__all__ = [
    "METHODS", "BinnedFit", "Calibrator", "ExactFit", "IdentityCalibrator", "IsotonicFit",
    "MonotoneSplineFit", "PlattFit", "SortedSample", "StepFit", "binned_fit",
    "calibrator_from_dict", "calibrator_from_json", "exact_fit", "fit_calibrator",
    "isotonic_fit", "kernel_presmooth", "monotone_spline_fit", "nadaraya_watson", "pav_isotonic",
    "pava", "platt_fit", "pspline_fit", "quantile_bins", "roc_auc", "select_lambda",
    "threshold_preimage", "triweight",
]
