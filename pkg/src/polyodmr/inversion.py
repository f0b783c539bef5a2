"""Vector-field estimation from spectral features via a calibration table.

The forward model (ensemble simulation, FFT or CW, two-peak fit) is tabulated
over |B|, polar angle and azimuth of the lab-frame field. Observed features are
inverted coarse-to-fine: nearest table cells seed a bounded least-squares
refinement on the trilinear interpolant of the table.

The powder background is nearly isotropic, so only the Z-aligned excess makes
features direction-dependent, and mostly through the polar angle. Estimates
therefore always report their equivalence class: B and -B are
indistinguishable, and the azimuth is declared indeterminate whenever the
table shows no azimuthal contrast at the estimated (|B|, theta).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import distance_transform_edt
from scipy.optimize import least_squares

from .dynamics import TrajectoryRecord, cw_sweep, fid_signal
from .errors import FitConvergenceError, InvalidInputError, NoConfidentEstimateError
from .spectrum import Spectrum, fft_spectrum, fit_peaks
from .spin import SpinParams

MIN_FILL_FRACTION = 0.9
EXCITATIONS = {"y": ((0.0, 1.0, 0.0),), "xy": ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0))}
TABLE_FORMAT = "polyodmr.calibration/1"


def spherical_to_cartesian(b, theta, phi) -> np.ndarray:
    return b * np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])


def cartesian_to_spherical(v) -> tuple[float, float, float]:
    v = np.asarray(v, dtype=float)
    b = float(np.linalg.norm(v))
    if b == 0:
        return 0.0, 0.0, 0.0
    theta = float(np.arccos(np.clip(v[2] / b, -1, 1)))
    phi = float(np.arctan2(v[1], v[0]) % (2 * np.pi))
    return b, theta, phi


@dataclass(frozen=True)
class GridSpec:
    b_values: tuple
    theta_values: tuple
    phi_values: tuple

    def __post_init__(self):
        for name in ("b_values", "theta_values", "phi_values"):
            axis = np.asarray(getattr(self, name), dtype=float)
            if axis.ndim != 1 or axis.size < 2 or np.any(np.diff(axis) <= 0):
                raise InvalidInputError(f"{name} must be strictly increasing with >= 2 entries")
            object.__setattr__(self, name, tuple(float(x) for x in axis))
        if self.b_values[0] < 0:
            raise InvalidInputError("field magnitudes must be >= 0")
        if self.theta_values[0] < 0 or self.theta_values[-1] > np.pi + 1e-12:
            raise InvalidInputError("theta must lie in [0, pi]")
        if self.phi_values[0] < 0 or self.phi_values[-1] >= 2 * np.pi:
            raise InvalidInputError("phi must lie in [0, 2 pi)")

    @classmethod
    def regular(cls, b_max_mt: float, b_step_mt: float = 0.5, theta_step_deg: float = 15.0,
                phi_step_deg: float = 15.0) -> GridSpec:
        """|B| in [0, b_max], theta in [0, pi], phi in [0, 2 pi) on regular steps."""
        nb = int(round(b_max_mt / b_step_mt))
        nt = int(round(180.0 / theta_step_deg))
        nphi = int(round(360.0 / phi_step_deg))
        if nb < 1 or nt < 1 or nphi < 2:
            raise InvalidInputError("grid steps too coarse for the requested range")
        return cls(
            tuple(np.arange(nb + 1) * b_step_mt),
            tuple(np.radians(np.arange(nt + 1) * theta_step_deg)),
            tuple(np.radians(np.arange(nphi) * phi_step_deg)),
        )

    @property
    def shape(self):
        return len(self.b_values), len(self.theta_values), len(self.phi_values)


@dataclass(frozen=True)
class SimOptions:
    """Forward-simulation settings used to tabulate features."""

    mode: str = "fid"
    # "xy" sums the responses to lab-X and lab-Y excitation, which makes the
    # features insensitive to the field azimuth; "y" uses lab-Y only
    excitation: str = "xy"
    t_max_us: float = 0.5
    dt_us: float | None = None
    window: str = "hann"
    zero_pad: int = 4
    band_mhz: float = 400.0
    # record every n-th RK4 step; 5 keeps the output rate at 4 f_max
    sample_every: int = 5
    # cw mode only
    drive_amplitude_mt: float = 0.1
    omega_step_mhz: float = 2.0
    settle_time_us: float | None = None
    avg_window_us: float = 1.0
    beta: float = 0.6

    def __post_init__(self):
        if self.mode not in ("fid", "cw"):
            raise InvalidInputError("sim mode must be 'fid' or 'cw'")
        if self.excitation not in EXCITATIONS:
            raise InvalidInputError(f"excitation must be one of {tuple(EXCITATIONS)}")

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def band_peaks(s: Spectrum, center_mhz: float, band_mhz: float, shape: str = "lorentzian"):
    """Fit one peak on each side of ``center_mhz``; seeds are the band maxima."""
    s = s.crop(center_mhz - band_mhz, center_mhz + band_mhz)
    v = np.abs(s.values) if s.kind == "odmr-contrast" else s.values
    s = Spectrum(s.freqs_mhz, v, s.kind, s.metadata)
    below = s.freqs_mhz < center_mhz
    if below.sum() < 3 or (~below).sum() < 3:
        raise InvalidInputError("band does not straddle the zero-field centre")
    seeds = [s.freqs_mhz[below][np.argmax(v[below])], s.freqs_mhz[~below][np.argmax(v[~below])]]
    return fit_peaks(s, 2, shape, init=seeds)


def forward_spectrum(ensemble, params: SpinParams, b_lab, opts: SimOptions = SimOptions()) -> Spectrum:
    """Simulated spectrum summed over the excitation axes of ``opts``."""
    axes = EXCITATIONS[opts.excitation]
    if opts.mode == "fid":
        trajs = [fid_signal(ensemble, params, b_lab, opts.t_max_us, opts.dt_us, ax, sample_every=opts.sample_every)
                 for ax in axes]
        total = TrajectoryRecord(trajs[0].times, sum(t.signals for t in trajs), "drive-axis-spin",
                                 dict(trajs[0].diagnostics))
        return fft_spectrum(total, opts.window, opts.zero_pad)
    grid = np.arange(params.d_mhz - opts.band_mhz, params.d_mhz + opts.band_mhz + 1e-9, opts.omega_step_mhz)
    sweeps = [cw_sweep(ensemble, params, b_lab, opts.drive_amplitude_mt, grid, opts.settle_time_us,
                       opts.avg_window_us, opts.dt_us, opts.beta, ax) for ax in axes]
    return Spectrum(grid, sum(sw.values for sw in sweeps) / len(sweeps), "odmr-contrast", dict(sweeps[0].metadata))


def forward_features(ensemble, params: SpinParams, b_lab, opts: SimOptions = SimOptions()) -> np.ndarray:
    """Peak centres (descending, MHz) of the simulated ensemble spectrum."""
    peaks = band_peaks(forward_spectrum(ensemble, params, b_lab, opts), params.d_mhz, opts.band_mhz)
    return np.array(sorted((p.center_mhz for p in peaks), reverse=True))


def ensemble_digest(ensemble) -> str:
    h = hashlib.sha256()
    for o in ensemble:
        h.update(np.asarray(o.quaternion + (o.weight,), dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass
class CalibrationTable:
    grid: GridSpec
    features: np.ndarray  # (n_b, n_theta, n_phi, n_features), NaN where missing
    fingerprint: dict

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.shape[:3] != self.grid.shape:
            raise InvalidInputError("feature array does not match grid shape")
        if not self.fingerprint:
            raise InvalidInputError("calibration table needs a fingerprint")

    @property
    def n_features(self) -> int:
        return self.features.shape[-1]

    @property
    def filled_fraction(self) -> float:
        return float(np.mean(np.all(np.isfinite(self.features), axis=-1)))

    def audit(self) -> list[str]:
        """Consistency problems; empty when the table is sound.

        Along theta = 0 the splitting (first minus last feature) must rise
        strictly with |B|, since it follows sqrt(E^2 + (g mu_B B)^2).
        """
        issues = []
        j0 = int(np.argmin(np.abs(np.asarray(self.grid.theta_values))))
        if self.grid.theta_values[j0] != 0.0:
            return issues
        split = self.features[:, j0, :, 0] - self.features[:, j0, :, -1]
        for k in range(split.shape[1]):
            col = split[:, k]
            ok = np.isfinite(col)
            if np.any(np.diff(col[ok]) <= 0):
                issues.append(f"splitting not increasing in |B| at theta=0, phi index {k}")
        return issues

    def to_json(self, path=None) -> str:
        payload = {
            "format": TABLE_FORMAT,
            "axes": {"b_mt": list(self.grid.b_values), "theta_rad": list(self.grid.theta_values),
                     "phi_rad": list(self.grid.phi_values)},
            "n_features": self.n_features,
            "features": [None if not np.isfinite(x) else float(x) for x in self.features.ravel()],
            "fingerprint": self.fingerprint,
        }
        text = json.dumps(payload, indent=1, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, source) -> CalibrationTable:
        text = Path(source).read_text() if isinstance(source, Path) or not str(source).lstrip().startswith("{") else source
        d = json.loads(text)
        if d.get("format") != TABLE_FORMAT:
            raise InvalidInputError(f"not a calibration table (format {d.get('format')!r})")
        grid = GridSpec(tuple(d["axes"]["b_mt"]), tuple(d["axes"]["theta_rad"]), tuple(d["axes"]["phi_rad"]))
        feats = np.array([np.nan if x is None else x for x in d["features"]], dtype=float)
        return cls(grid, feats.reshape(grid.shape + (d["n_features"],)), d["fingerprint"])


def build_calibration(ensemble, params: SpinParams, grid: GridSpec, opts: SimOptions = SimOptions(),
                      fingerprint_extra: dict | None = None, progress=None) -> CalibrationTable:
    """Tabulate forward features over the grid.

    Cells whose field vectors coincide (|B| = 0, or the poles) are simulated
    once. Failed cells are stored as NaN; the table is rejected if less than
    90% of cells are filled.
    """
    cache: dict = {}
    feats = np.full(grid.shape + (2,), np.nan)
    cells = [(i, j, k) for i in range(grid.shape[0]) for j in range(grid.shape[1]) for k in range(grid.shape[2])]
    for n, (i, j, k) in enumerate(cells):
        vec = spherical_to_cartesian(grid.b_values[i], grid.theta_values[j], grid.phi_values[k])
        key = tuple(np.round(vec, 9) + 0.0)
        if key not in cache:
            try:
                cache[key] = forward_features(ensemble, params, vec, opts)
            except (FitConvergenceError, InvalidInputError):
                cache[key] = None
        if cache[key] is not None:
            feats[i, j, k] = cache[key]
        if progress:
            progress(n + 1, len(cells))
    fp = {
        "ensemble_sha256": ensemble_digest(ensemble),
        "members": len(ensemble),
        "params": {"d_mhz": params.d_mhz, "e_mhz": params.e_mhz, "g_factor": params.g_factor,
                   "t1_us": params.t1_us},
        "sim": opts.as_dict(),
    }
    fp.update(fingerprint_extra or {})
    table = CalibrationTable(grid, feats, fp)
    if table.filled_fraction < MIN_FILL_FRACTION:
        raise RuntimeError(f"only {table.filled_fraction:.0%} of calibration cells could be simulated")
    return table


@dataclass
class FieldEstimate:
    b_lab: np.ndarray
    residual: float
    magnitude_mt: float
    theta: float
    phi: float
    direction_indeterminate: bool = False
    azimuth_indeterminate: bool = False
    equivalents: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "b_lab_mt": [round(float(x), 4) for x in self.b_lab],
            "magnitude_mt": round(self.magnitude_mt, 4),
            "theta_deg": float(np.degrees(self.theta)),
            "phi_deg": float(np.degrees(self.phi)),
            "residual_mhz": self.residual,
            "degeneracy": {
                "sign": True,
                "azimuth_indeterminate": self.azimuth_indeterminate,
                "direction_indeterminate": self.direction_indeterminate,
            },
            "equivalents_mt": [[round(float(x), 4) for x in v] for v in self.equivalents],
        }

    def direction_error_deg(self, b_true) -> float:
        """Smallest angle between ``b_true`` and any field the estimate declares equivalent."""
        if self.direction_indeterminate:
            return 0.0
        _, t_true, _ = cartesian_to_spherical(b_true)
        if self.azimuth_indeterminate:
            return float(np.degrees(min(abs(t_true - self.theta), abs(t_true - (np.pi - self.theta)))))
        u = np.asarray(b_true, dtype=float) / np.linalg.norm(b_true)
        best = math.pi
        for v in self.equivalents:
            best = min(best, float(np.arccos(np.clip(u @ v / np.linalg.norm(v), -1, 1))))
        return float(np.degrees(best))


class _Surrogate:
    """Linear interpolants of the table: full (b, theta, phi), periodic in phi,
    and azimuth-averaged (b, theta)."""

    def __init__(self, table: CalibrationTable):
        f = table.features.copy()
        bad = ~np.all(np.isfinite(f), axis=-1)
        if bad.any():
            idx = distance_transform_edt(bad, return_distances=False, return_indices=True)
            f = f[tuple(idx)]
        g = table.grid
        self.filled = f
        self.mean = f.mean(axis=2)
        self.spread = np.max(np.ptp(f, axis=2), axis=-1)
        self.b_lo, self.b_hi = g.b_values[0], g.b_values[-1]
        self.t_lo, self.t_hi = g.theta_values[0], g.theta_values[-1]
        phi = np.r_[g.phi_values, 2 * np.pi]
        wrapped = np.concatenate([f, f[:, :, :1]], axis=2)
        self.full = RegularGridInterpolator((g.b_values, g.theta_values, phi), wrapped)
        self.avg = RegularGridInterpolator((g.b_values, g.theta_values), self.mean)
        self.spread_at = RegularGridInterpolator((g.b_values, g.theta_values), self.spread)

    def __call__(self, b, theta, phi=None):
        if phi is None:
            return self.avg([[b, theta]])[0]
        return self.full([[b, theta, phi % (2 * np.pi)]])[0]


def _distinct_starts(dist, axes, n):
    starts = []
    for flat in np.argsort(dist, axis=None, kind="stable"):
        cell = np.unravel_index(flat, dist.shape)
        x0 = tuple(ax[i] for ax, i in zip(axes, cell))
        if all(np.abs(np.subtract(x0, s)).max() > 1e-9 for s in starts):
            starts.append(x0)
        if len(starts) >= n:
            break
    return starts


def _refine(resid, starts, lo, hi):
    best = None
    for x0 in starts:
        x0 = np.clip(x0, lo, hi)
        res = least_squares(resid, x0, bounds=(lo, hi), diff_step=1e-4, xtol=1e-10, max_nfev=200)
        if best is None or res.cost < best.cost - 1e-12:
            best = res
    return best


def invert_field(observed, table: CalibrationTable, weights=None, max_residual_mhz: float = 5.0,
                 azimuth_tol_mhz: float = 2.0, n_starts: int = 5) -> FieldEstimate:
    """Estimate the lab field from observed peak centres (descending, MHz).

    Coarse stage: nearest table cells by weighted feature distance. Fine
    stage: bounded least squares on the linear interpolant. The fit is first
    done in (|B|, theta) against the azimuth-averaged table; only where the
    table's azimuthal spread at that solution reaches ``azimuth_tol_mhz`` is
    phi fitted as well. Otherwise the azimuth is reported as indeterminate.

    Raises ``NoConfidentEstimateError`` if the best weighted residual exceeds
    ``max_residual_mhz``.
    """
    obs = np.sort(np.asarray(observed, dtype=float))[::-1]
    if obs.shape != (table.n_features,) or not np.all(np.isfinite(obs)):
        raise InvalidInputError(f"expected {table.n_features} finite features")
    w = np.ones_like(obs) if weights is None else np.asarray(weights, dtype=float)
    sur = _Surrogate(table)
    g = table.grid

    dist2 = np.sqrt(np.sum((w * (sur.mean - obs)) ** 2, axis=-1))
    starts = _distinct_starts(dist2, (g.b_values, g.theta_values), n_starts)
    best = _refine(lambda x: w * (sur(*x) - obs), starts, [sur.b_lo, sur.t_lo], [sur.b_hi, sur.t_hi])
    b, theta = float(best.x[0]), float(best.x[1])
    phi = 0.0
    residual = float(np.linalg.norm(best.fun))

    b_step = float(np.min(np.diff(g.b_values)))
    direction_free = b < b_step
    azimuth_free = direction_free or float(sur.spread_at([[b, theta]])[0]) < azimuth_tol_mhz
    if not azimuth_free:
        dist3 = np.sqrt(np.sum((w * (sur.filled - obs)) ** 2, axis=-1))
        starts3 = _distinct_starts(dist3, (g.b_values, g.theta_values, g.phi_values), n_starts)
        starts3 += [(b, theta, p) for p in g.phi_values]
        res3 = _refine(lambda x: w * (sur(*x) - obs), starts3,
                       [sur.b_lo, sur.t_lo, -np.inf], [sur.b_hi, sur.t_hi, np.inf])
        b, theta, phi = float(res3.x[0]), float(res3.x[1]), float(res3.x[2] % (2 * np.pi))
        residual = float(np.linalg.norm(res3.fun))

    vec = spherical_to_cartesian(b, theta, phi)
    if azimuth_free and not direction_free:
        equivalents = [spherical_to_cartesian(b, t, p) for t in (theta, np.pi - theta) for p in g.phi_values]
    else:
        equivalents = [vec, -vec]
    est = FieldEstimate(vec, residual, b, theta, phi, direction_free, azimuth_free, equivalents)
    if residual > max_residual_mhz:
        raise NoConfidentEstimateError(f"feature residual {residual:.3g} MHz exceeds {max_residual_mhz} MHz", est)
    return est
