"""Scalar figures of merit: magnetic sensitivity, PL saturation, ZFS thermometry."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, OutOfRangeError
from .spin import MU_B_OVER_H_MHZ_PER_MT

REFERENCE_TEMPERATURE_K = 300.0
LATTICE_HEADER = ("temperature_k", "a_angstrom", "c_angstrom")


@dataclass(frozen=True)
class SensitivityInputs:
    p_f: float = 0.7
    linewidth_mhz: float = 110.0
    contrast: float = 0.019
    count_rate_hz: float = 516_000.0

    def __post_init__(self):
        for name in ("p_f", "linewidth_mhz", "contrast", "count_rate_hz"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidInputError(f"{name} must be > 0")
        if self.contrast > 1:
            raise InvalidInputError("contrast must be in (0, 1]")


def sensitivity(inp: SensitivityInputs, g_factor: float = 2.0) -> float:
    """Shot-noise-limited CW sensitivity in uT/sqrt(Hz).

    eta = P_F * h/(g mu_B) * linewidth / (C sqrt(R))
    """
    if not g_factor > 0:
        raise InvalidInputError("g_factor must be > 0")
    gamma = g_factor * MU_B_OVER_H_MHZ_PER_MT  # MHz/mT
    eta_mt = inp.p_f * inp.linewidth_mhz / gamma / (inp.contrast * math.sqrt(inp.count_rate_hz))
    return eta_mt * 1e3


def saturation_intensity(i_sat: float, p_sat: float, p: float) -> float:
    """PL intensity I_sat / (1 + P_sat/P)."""
    if not i_sat > 0 or not p_sat > 0:
        raise InvalidInputError("i_sat and p_sat must be > 0")
    if not p > 0:
        raise InvalidInputError("excitation power must be > 0")
    return i_sat / (1.0 + p_sat / p)


@dataclass(frozen=True)
class ThermometryParams:
    """Lattice-strain coupling of D. Uncertainties are carried, not propagated."""

    theta_a_ghz: float = -81.0
    theta_c_ghz: float = -24.5
    d300_mhz: float = 3480.0
    uncertainties_ghz: dict = field(default_factory=lambda: {"theta_a": 12.0, "theta_c": 0.8})

    @classmethod
    def from_mapping(cls, m: dict) -> ThermometryParams:
        m = dict(m)
        if "theta_b_ghz" in m:
            # the c-axis coefficient is also published under the name theta_b
            if "theta_c_ghz" in m:
                raise InvalidInputError("give theta_c_ghz or theta_b_ghz, not both")
            m["theta_c_ghz"] = m.pop("theta_b_ghz")
        unknown = set(m) - {"theta_a_ghz", "theta_c_ghz", "d300_mhz"}
        if unknown:
            raise InvalidInputError(f"unknown thermometry keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in m.items()})


@dataclass(frozen=True)
class LatticeTable:
    temperature_k: np.ndarray
    a_angstrom: np.ndarray
    c_angstrom: np.ndarray

    def __post_init__(self):
        t, a, c = (np.asarray(x, dtype=float) for x in (self.temperature_k, self.a_angstrom, self.c_angstrom))
        if t.ndim != 1 or not t.shape == a.shape == c.shape or t.size < 1:
            raise InvalidInputError("lattice table columns must be equal-length 1-D arrays")
        if np.any(np.diff(t) <= 0):
            raise InvalidInputError("temperatures must be strictly increasing")
        if np.any(a <= 0) or np.any(c <= 0) or not np.all(np.isfinite(np.r_[t, a, c])):
            raise InvalidInputError("lattice parameters must be positive and finite")
        if not t[0] <= REFERENCE_TEMPERATURE_K <= t[-1]:
            raise InvalidInputError("lattice table must contain or bracket 300 K")
        object.__setattr__(self, "temperature_k", t)
        object.__setattr__(self, "a_angstrom", a)
        object.__setattr__(self, "c_angstrom", c)

    def lattice_at(self, t_kelvin: float) -> tuple[float, float]:
        t = self.temperature_k
        if not t[0] <= t_kelvin <= t[-1]:
            raise OutOfRangeError(f"T = {t_kelvin} K outside table range [{t[0]}, {t[-1]}] K")
        return float(np.interp(t_kelvin, t, self.a_angstrom)), float(np.interp(t_kelvin, t, self.c_angstrom))

    def strains(self, t_kelvin: float) -> tuple[float, float]:
        """Relative lattice changes (eta_a, eta_c) against 300 K."""
        a, c = self.lattice_at(t_kelvin)
        a0, c0 = self.lattice_at(REFERENCE_TEMPERATURE_K)
        return (a - a0) / a0, (c - c0) / c0

    @classmethod
    def from_csv(cls, path) -> LatticeTable:
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(h.strip() for h in next(reader, ()))
            if header != LATTICE_HEADER:
                raise InvalidInputError(f"{path}: header must be {','.join(LATTICE_HEADER)}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    rows.append([float(x) for x in row])
                except ValueError:
                    raise InvalidInputError(f"{path}:{lineno}: non-numeric value in {row}") from None
                if len(rows[-1]) != 3:
                    raise InvalidInputError(f"{path}:{lineno}: expected 3 columns")
        if not rows:
            raise InvalidInputError(f"{path}: no data rows")
        t, a, c = np.array(rows).T
        return cls(t, a, c)

    def to_csv(self, path) -> None:
        lines = [",".join(LATTICE_HEADER)]
        lines += [f"{t:.6f},{a:.8f},{c:.8f}" for t, a, c in zip(self.temperature_k, self.a_angstrom, self.c_angstrom)]
        Path(path).write_text("\n".join(lines) + "\n")


def zfs_shift_from_strain(params: ThermometryParams, eta_a: float, eta_c: float) -> float:
    return 1e3 * (params.theta_a_ghz * eta_a + params.theta_c_ghz * eta_c)


def zfs_shift(params: ThermometryParams, table: LatticeTable, t_kelvin: float) -> tuple[float, float]:
    """Return (Delta D(T)/h, D(T)/h) in MHz from linearly interpolated lattice data."""
    eta_a, eta_c = table.strains(t_kelvin)
    delta = zfs_shift_from_strain(params, eta_a, eta_c)
    return delta, params.d300_mhz + delta
