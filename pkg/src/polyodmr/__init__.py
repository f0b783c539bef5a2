"""Spin-1 ensemble ODMR simulation and analysis for polycrystalline hBN boron vacancies."""

from __future__ import annotations

__version__ = "0.1.0"

from .config import RunConfig, parse_config
from .dynamics import DriveParams, TrajectoryRecord, cw_sweep, evolve, fid_signal
from .ensemble import DefectOrientation, EnsembleSpec, build_ensemble, lab_to_defect, sample_uniform_rotation
from .errors import (
    FitConvergenceError,
    InvalidInputError,
    NoConfidentEstimateError,
    OutOfRangeError,
    StepSizeError,
)
from .inversion import CalibrationTable, FieldEstimate, GridSpec, build_calibration, invert_field
from .metrics import LatticeTable, SensitivityInputs, ThermometryParams, sensitivity, zfs_shift
from .spectrum import PeakFit, Spectrum, fft_spectrum, fit_peaks, zeeman_splitting
from .spin import SpinParams, analytic_resonances_z, build_hamiltonian, eigenfrequencies, transition_frequencies

__all__ = [
    "CalibrationTable", "DefectOrientation", "DriveParams", "EnsembleSpec", "FieldEstimate",
    "FitConvergenceError", "GridSpec", "InvalidInputError", "LatticeTable", "NoConfidentEstimateError",
    "OutOfRangeError", "PeakFit", "RunConfig", "SensitivityInputs", "Spectrum", "SpinParams",
    "StepSizeError", "ThermometryParams", "TrajectoryRecord", "analytic_resonances_z", "build_calibration",
    "build_ensemble", "build_hamiltonian", "cw_sweep", "eigenfrequencies", "evolve", "fft_spectrum",
    "fid_signal", "fit_peaks", "invert_field", "lab_to_defect", "parse_config", "sample_uniform_rotation",
    "sensitivity", "transition_frequencies", "zeeman_splitting", "zfs_shift",
]
