"""Spin-1 ground-state model of the boron vacancy.

Units are fixed throughout the package: frequencies (energies over h) in MHz,
times in microseconds, magnetic fields in mT. The basis ordering is
m_s = (+1, 0, -1), so ``SZ = diag(1, 0, -1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError

# Bohr magneton over Planck constant, CODATA 2018 (13.996 244 936 GHz/T).
MU_B_OVER_H_MHZ_PER_MT = 13.996244936

_s = 1.0 / np.sqrt(2.0)
SX = _s * np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex)
SY = _s * np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex)
SZ = np.diag([1.0, 0.0, -1.0]).astype(complex)
IDENTITY = np.eye(3, dtype=complex)
SPIN_OPERATORS = np.stack([SX, SY, SZ])
for _op in (SX, SY, SZ, IDENTITY, SPIN_OPERATORS):
    _op.setflags(write=False)

#: index of m_s = 0 in the basis ordering
MS0 = 1


@dataclass(frozen=True)
class SpinParams:
    """Defect constants. Defaults are the room-temperature values of V_B- in hot-pressed hBN."""

    d_mhz: float = 3480.0
    e_mhz: float = 60.0
    g_factor: float = 2.0
    t1_us: float = 14.0

    def __post_init__(self):
        for name in ("d_mhz", "e_mhz", "g_factor", "t1_us"):
            if not np.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")
        if self.d_mhz <= 0:
            raise InvalidInputError("d_mhz must be > 0")
        if self.e_mhz < 0:
            raise InvalidInputError("e_mhz must be >= 0")
        if self.e_mhz >= self.d_mhz:
            raise InvalidInputError("e_mhz must be < d_mhz")
        if self.t1_us <= 0:
            raise InvalidInputError("t1_us must be > 0")
        if self.g_factor <= 0:
            raise InvalidInputError("g_factor must be > 0")

    @property
    def gamma_mhz_per_mt(self) -> float:
        return self.g_factor * MU_B_OVER_H_MHZ_PER_MT

    @property
    def relaxation_rate(self) -> float:
        """Gamma = 1/T1 in 1/us."""
        return 1.0 / self.t1_us


def _as_field(b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.shape != (3,):
        raise InvalidInputError(f"field must be a 3-vector, got shape {b.shape}")
    if not np.all(np.isfinite(b)):
        raise InvalidInputError("field components must be finite")
    return b


def spin_projection(axis) -> np.ndarray:
    """Return n.S for a 3-vector ``axis`` (not normalised)."""
    return np.tensordot(np.asarray(axis, dtype=float), SPIN_OPERATORS, axes=1)


def zero_field_hamiltonian(params: SpinParams) -> np.ndarray:
    return params.d_mhz * (SZ @ SZ) + params.e_mhz * (SX @ SX - SY @ SY)


def build_hamiltonian(params: SpinParams, b_defect) -> np.ndarray:
    """Ground-state Hamiltonian in MHz for a field given in the defect frame.

    ``H = D Sz^2 + E (Sx^2 - Sy^2) + g mu_B/h (S . B)``
    """
    b = _as_field(b_defect)
    return zero_field_hamiltonian(params) + params.gamma_mhz_per_mt * spin_projection(b)


def _check_hermitian(h: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    h = np.asarray(h)
    if h.shape != (3, 3):
        raise InvalidInputError(f"expected a 3x3 matrix, got {h.shape}")
    if not np.all(np.isfinite(h)):
        raise InvalidInputError("matrix entries must be finite")
    if np.max(np.abs(h - h.conj().T)) > atol * max(1.0, np.max(np.abs(h))):
        raise InvalidInputError("matrix is not Hermitian")
    return h


def eigenfrequencies(h) -> np.ndarray:
    """Eigenvalues of a Hermitian 3x3 Hamiltonian, descending, in MHz."""
    h = _check_hermitian(h)
    try:
        vals = np.linalg.eigvalsh(h)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - 3x3 Hermitian
        raise RuntimeError("diagonalisation of a 3x3 Hermitian matrix failed") from exc
    return vals[::-1].copy()


def analytic_resonances_z(params: SpinParams, b_z_mt: float) -> tuple[float, float]:
    """Closed-form resonances (nu_high, nu_low) for a field along the defect axis."""
    if not np.isfinite(b_z_mt):
        raise InvalidInputError("b_z_mt must be finite")
    shift = np.hypot(params.e_mhz, params.gamma_mhz_per_mt * b_z_mt)
    return params.d_mhz + shift, params.d_mhz - shift


class Transitions(NamedTuple):
    high_mhz: float
    low_mhz: float
    bright_overlap: float
    ambiguous: bool


def transition_frequencies(h) -> Transitions:
    """Transitions out of the eigenstate closest to |m_s=0>.

    ``ambiguous`` is set when no eigenstate has more than 1/3 weight on |0>,
    i.e. the bright state is not identifiable.
    """
    h = _check_hermitian(h)
    vals, vecs = np.linalg.eigh(h)
    overlaps = np.abs(vecs[MS0, :]) ** 2
    bright = int(np.argmax(overlaps))
    gaps = np.sort(np.abs(np.delete(vals, bright) - vals[bright]))[::-1]
    best = float(overlaps[bright])
    return Transitions(float(gaps[0]), float(gaps[1]), best, best <= 1.0 / 3.0)
