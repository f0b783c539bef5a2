"""Spectra from time signals, resonance peak fitting and splittings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import FitConvergenceError, InvalidInputError

SHAPES = ("lorentzian", "gaussian")
KINDS = ("fft-amplitude", "fft-power", "odmr-contrast")
MAX_ITERATIONS = 200
PARAM_TOL = 1e-10
# a peak must rise this many residual-rms above the baseline
SIGNIFICANCE = 3.0
_FOUR_LN2 = 4.0 * np.log(2.0)


@dataclass
class Spectrum:
    freqs_mhz: np.ndarray
    values: np.ndarray
    kind: str = "fft-amplitude"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.freqs_mhz = np.asarray(self.freqs_mhz, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.freqs_mhz.ndim != 1 or self.freqs_mhz.shape != self.values.shape:
            raise InvalidInputError("freqs and values must be 1-D arrays of equal length")
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown spectrum kind {self.kind!r}")
        if np.any(np.diff(self.freqs_mhz) <= 0):
            raise InvalidInputError("frequencies must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("spectrum values must be finite")

    @property
    def resolution_mhz(self) -> float:
        return float(self.metadata.get("resolution_mhz", np.median(np.diff(self.freqs_mhz))))

    def crop(self, f_min: float, f_max: float) -> Spectrum:
        keep = (self.freqs_mhz >= f_min) & (self.freqs_mhz <= f_max)
        return Spectrum(self.freqs_mhz[keep], self.values[keep], self.kind, dict(self.metadata))


def fft_spectrum(traj, window: str | None = "hann", zero_pad_factor: int = 1, power: bool = False) -> Spectrum:
    """One-sided spectrum of the mean-subtracted signal of a ``TrajectoryRecord``.

    Amplitudes are scaled so that a cosine of amplitude A gives a bin of
    height A (before windowing). ``power=True`` returns squared amplitudes,
    whose line shape for a damped sinusoid is Lorentzian.
    """
    t = np.asarray(traj.times, dtype=float)
    x = np.asarray(traj.signals, dtype=float)
    if t.size < 16:
        raise InvalidInputError("need at least 16 samples")
    steps = np.diff(t)
    dt = float(steps.mean())
    if np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise InvalidInputError("time grid must be uniform")
    if int(zero_pad_factor) != zero_pad_factor or zero_pad_factor < 1:
        raise InvalidInputError("zero_pad_factor must be an integer >= 1")
    n = x.size
    x = x - x.mean()
    if window == "hann":
        x = x * np.hanning(n)
    elif window not in (None, "none"):
        raise InvalidInputError(f"unknown window {window!r}")
    n_fft = n * int(zero_pad_factor)
    amp = np.abs(np.fft.rfft(x, n_fft)) / n
    amp[1:] *= 2
    if n_fft % 2 == 0:
        amp[-1] /= 2
    freqs = np.fft.rfftfreq(n_fft, dt)
    meta = {
        "source": traj.observable,
        "resolution_mhz": 1.0 / (n_fft * dt),
        "bin_mhz": 1.0 / (n * dt),
        "window": window or "none",
        "zero_pad_factor": int(zero_pad_factor),
        "samples": n,
        "dt_us": dt,
    }
    return Spectrum(freqs, amp**2 if power else amp, "fft-power" if power else "fft-amplitude", meta)


def signal_energy_from_spectrum(spec: Spectrum) -> float:
    """Sum of squared samples recovered from an unpadded, unwindowed amplitude spectrum."""
    n = spec.metadata["samples"]
    v = spec.values
    inner = v[1:-1] if n % 2 == 0 else v[1:]
    edge = v[-1] ** 2 if n % 2 == 0 else 0.0
    return float(n * (v[0] ** 2 + 0.5 * np.sum(inner**2) + edge))


# ---------------------------------------------------------------- line shapes

def lorentzian(f, center, fwhm, amplitude):
    return amplitude / (1.0 + (2.0 * (f - center) / fwhm) ** 2)


def gaussian(f, center, fwhm, amplitude):
    return amplitude * np.exp(-_FOUR_LN2 * ((f - center) / fwhm) ** 2)


def _profile_and_jac(shape, f, c, w, a):
    u = (f - c) / w
    if shape == "lorentzian":
        den = 1.0 + 4.0 * u * u
        y = a / den
        d_a = 1.0 / den
        d_c = a * 8.0 * u / (w * den * den)
        d_w = a * 8.0 * u * u / (w * den * den)
    else:
        g = np.exp(-_FOUR_LN2 * u * u)
        y = a * g
        d_a = g
        d_c = y * 2 * _FOUR_LN2 * u / w
        d_w = y * 2 * _FOUR_LN2 * u * u / w
    return y, d_c, d_w, d_a


def model(f, params, shape: str):
    """Sum of profiles plus baseline; params = [c1, w1, a1, c2, ..., baseline]."""
    f = np.asarray(f, dtype=float)
    y = np.full_like(f, params[-1])
    for i in range(0, len(params) - 1, 3):
        y += _profile_and_jac(shape, f, *params[i:i + 3])[0]
    return y


@dataclass(frozen=True)
class PeakFit:
    center_mhz: float
    fwhm_mhz: float
    amplitude: float
    shape: str
    residual_norm: float
    baseline: float = 0.0
    converged: bool = True

    def as_dict(self) -> dict:
        return {
            "center_mhz": self.center_mhz, "fwhm_mhz": self.fwhm_mhz,
            "amplitude": self.amplitude, "shape": self.shape,
            "baseline": self.baseline, "residual_norm": self.residual_norm,
            "converged": self.converged,
        }


def local_maxima(values, min_separation: int = 2) -> list[int]:
    """Indices of local maxima, largest first (ties: lower index first).

    Maxima closer than ``min_separation`` bins to a larger one are dropped.
    Plateaus count once, at their first sample.
    """
    v = np.asarray(values, dtype=float)
    cand = []
    i, n = 1, v.size
    while i < n - 1:
        if v[i] > v[i - 1]:
            j = i
            while j < n - 1 and v[j + 1] == v[i]:
                j += 1
            if j < n - 1 and v[j + 1] < v[i]:
                cand.append(i)
            i = j + 1
        else:
            i += 1
    cand.sort(key=lambda k: (-v[k], k))
    picked: list[int] = []
    for k in cand:
        if all(abs(k - p) >= min_separation for p in picked):
            picked.append(k)
    return picked


def _half_width(f, v, k, base):
    half = base + 0.5 * (v[k] - base)
    lo = k
    while lo > 0 and v[lo] > half:
        lo -= 1
    hi = k
    while hi < v.size - 1 and v[hi] > half:
        hi += 1
    return f[hi] - f[lo]


def fit_peaks(
    s: Spectrum,
    n_peaks: int,
    shape: str = "lorentzian",
    init="auto",
    freq_range: tuple[float, float] | None = None,
) -> list[PeakFit]:
    """Least-squares fit of ``n_peaks`` profiles plus a constant baseline.

    ``init="auto"`` seeds centres at the largest local maxima at least two bins
    apart; otherwise ``init`` is a sequence of initial centres in MHz. FWHM is
    bounded to [2 bins, full span]. Results are sorted by centre.

    Raises ``FitConvergenceError`` (with best-so-far fits in ``.best``) when
    the optimiser hits the iteration cap or a fitted peak is not significant
    against the residual.
    """
    if shape not in SHAPES:
        raise InvalidInputError(f"shape must be one of {SHAPES}")
    if not 1 <= n_peaks <= 4:
        raise InvalidInputError("n_peaks must be in 1..4")
    if freq_range is not None:
        s = s.crop(*freq_range)
    f, v = s.freqs_mhz, s.values
    if f.size < 10 * n_peaks:
        raise InvalidInputError(f"need at least {10 * n_peaks} points to fit {n_peaks} peaks")
    bin_w = float(np.median(np.diff(f)))
    span = float(f[-1] - f[0])
    base0 = float(np.median(v))

    if isinstance(init, str):
        if init != "auto":
            raise InvalidInputError("init must be 'auto' or a sequence of centres")
        idx = local_maxima(v)[:n_peaks]
        if len(idx) < n_peaks:
            raise FitConvergenceError(f"found {len(idx)} local maxima, need {n_peaks}")
    else:
        centers = [float(c) for c in init]
        if len(centers) != n_peaks:
            raise InvalidInputError("explicit init must give one centre per peak")
        idx = [int(np.argmin(np.abs(f - c))) for c in centers]

    x0, lo, hi = [], [], []
    for k in idx:
        w0 = float(np.clip(_half_width(f, v, k, base0), 2 * bin_w, span))
        x0 += [f[k], w0, v[k] - base0]
        lo += [f[0], 2 * bin_w, -np.inf]
        hi += [f[-1], span, np.inf]
    x0.append(base0)
    lo.append(-np.inf)
    hi.append(np.inf)
    x0 = np.clip(x0, np.nextafter(lo, np.inf), np.nextafter(hi, -np.inf))

    def residual(p):
        return model(f, p, shape) - v

    def jacobian(p):
        cols = []
        for i in range(0, len(p) - 1, 3):
            _, d_c, d_w, d_a = _profile_and_jac(shape, f, *p[i:i + 3])
            cols += [d_c, d_w, d_a]
        cols.append(np.ones_like(f))
        return np.column_stack(cols)

    scale = max(float(np.max(np.abs(v))), 1e-300)
    res = least_squares(residual, x0, jac=jacobian, bounds=(lo, hi), method="trf",
                        x_scale="jac", xtol=PARAM_TOL, ftol=1e-14, gtol=1e-14,
                        max_nfev=MAX_ITERATIONS)
    p = res.x
    rnorm = float(np.linalg.norm(res.fun))
    rms = rnorm / np.sqrt(f.size)
    fits = []
    significant = True
    for i in range(0, len(p) - 1, 3):
        c, w, a = (float(x) for x in p[i:i + 3])
        if not (a > 0 and a > SIGNIFICANCE * rms and a > 1e-12 * scale):
            significant = False
        fits.append(PeakFit(c, w, a, shape, rnorm, float(p[-1]), res.status > 0))
    fits.sort(key=lambda pk: pk.center_mhz)
    if res.status <= 0:
        raise FitConvergenceError(f"fit did not converge in {MAX_ITERATIONS} evaluations", fits)
    if not significant:
        raise FitConvergenceError("fitted peak amplitude is not significant against the residual",
                                  [PeakFit(**{**pk.__dict__, "converged": False}) for pk in fits])
    return fits


def zeeman_splitting(peaks) -> float:
    peaks = list(peaks)
    if len(peaks) != 2:
        raise InvalidInputError(f"need exactly 2 peaks, got {len(peaks)}")
    return abs(peaks[0].center_mhz - peaks[1].center_mhz)


def odmr_contrast(pl_on: float, pl_off: float) -> float:
    if not pl_off > 0:
        raise InvalidInputError("pl_off must be > 0")
    return (pl_off - pl_on) / pl_off
