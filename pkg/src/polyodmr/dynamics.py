"""Driven Lindblad dynamics of single defects and orientation ensembles.

The master equation

    d rho/dt = -2 pi i [H_t, rho] + Gamma/2 (2 Sx rho Sx - Sx^2 rho - rho Sx^2)

is integrated in the defect frame on the row-major vectorised density matrix
with classical fixed-step RK4. H_t is in MHz and t in us, so the 2 pi factor
only appears in the Liouvillian; Gamma = 1/T1 in 1/us.

For a time-independent generator, one RK4 step is the 4th-order Taylor
polynomial of ``h L``, so trajectories are produced by repeated application of
that 9x9 matrix (in blocks, to keep Python overhead small). Under a periodic
drive the step grid is snapped to an integer number of steps per drive period;
the one-period RK4 map is then exact to reuse, and long settle times cost
O(log n) matrix products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import DefectOrientation, rotation_stack, weight_vector
from .errors import InvalidInputError, StepSizeError
from .spin import IDENTITY, MS0, SPIN_OPERATORS, SX, SY, SpinParams, zero_field_hamiltonian

#: steps per period of the fastest frequency scale
STEPS_PER_CYCLE = 20
DEFAULT_BETA = 0.6
DEFAULT_DRIVE_MT = 0.1
LAB_Y = (0.0, 1.0, 0.0)
# spin-1 rotation angle giving a pi/2 pulse on the |0> <-> bright two-level transition
PI_HALF_PULSE_ANGLE = np.pi / 4

OBSERVABLES = ("population-0", "pl-proxy", "sy-expectation", "trace", "purity")

_I9 = np.eye(9, dtype=complex)


@dataclass(frozen=True)
class DriveParams:
    b_mw_mt: float = DEFAULT_DRIVE_MT
    omega_mhz: float = 3480.0
    axis_lab: tuple[float, float, float] = LAB_Y

    def __post_init__(self):
        if not (self.b_mw_mt >= 0 and np.isfinite(self.b_mw_mt)):
            raise InvalidInputError("b_mw_mt must be >= 0")
        if not (self.omega_mhz > 0 and np.isfinite(self.omega_mhz)):
            raise InvalidInputError("omega_mhz must be > 0")
        axis = np.asarray(self.axis_lab, dtype=float)
        if axis.shape != (3,) or not np.linalg.norm(axis) > 0:
            raise InvalidInputError("axis_lab must be a non-zero 3-vector")
        object.__setattr__(self, "axis_lab", tuple(float(a) for a in axis / np.linalg.norm(axis)))


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    signals: np.ndarray
    observable: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


# ---------------------------------------------------------------- superoperators

def _kron(a, b):
    shape = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    return np.einsum("...ij,...kl->...ikjl", a, b).reshape(shape + (9, 9))


def commutator_superop(h):
    """Superoperator of rho -> -2 pi i [h, rho] (h in MHz, t in us)."""
    h = np.asarray(h, dtype=complex)
    return -2j * np.pi * (_kron(h, IDENTITY) - _kron(IDENTITY, np.swapaxes(h, -1, -2)))


def dissipator_superop(jump, rate: float):
    """Superoperator of rate/2 (2 J rho J - J^2 rho - rho J^2) for Hermitian J."""
    j2 = jump @ jump
    return 0.5 * rate * (2 * _kron(jump, jump.T) - _kron(j2, IDENTITY) - _kron(IDENTITY, j2.T))


def liouvillian(h, rate: float, jump=SX):
    return commutator_superop(h) + dissipator_superop(jump, rate)


def vec(rho):
    rho = np.asarray(rho)
    return rho.reshape(rho.shape[:-2] + (9,))


def unvec(y):
    y = np.asarray(y)
    return y.reshape(y.shape[:-1] + (3, 3))


def rk4_propagator(lv, dt: float):
    """One RK4 step for a constant generator: sum_{k<=4} (dt L)^k / k!."""
    a = dt * lv
    out = _I9 + a / 4
    out = _I9 + (a @ out) / 3
    out = _I9 + (a @ out) / 2
    return _I9 + a @ out


def _rk4_driven_step(l0, l1, t: float, dt: float, omega: float):
    """RK4 step matrix for L(t) = L0 + cos(2 pi omega t) L1."""
    c0, c1, c2 = (np.cos(2 * np.pi * omega * s) for s in (t, t + dt / 2, t + dt))
    la, lb, lc = l0 + c0 * l1, l0 + c1 * l1, l0 + c2 * l1
    k1 = la
    k2 = lb + 0.5 * dt * (lb @ k1)
    k3 = lb + 0.5 * dt * (lb @ k2)
    k4 = lc + dt * (lc @ k3)
    return _I9 + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def _power_and_sum(p, n: int):
    """Return (P^n, sum_{i<n} P^i) by binary splitting; P may be batched."""
    eye = np.broadcast_to(_I9, p.shape).copy()
    res_pow, res_sum = eye.copy(), np.zeros_like(p)
    base_pow, base_sum = p.copy(), eye
    while n:
        if n & 1:
            res_sum = res_sum + res_pow @ base_sum
            res_pow = res_pow @ base_pow
        n >>= 1
        if n:
            base_sum = base_sum + base_pow @ base_sum
            base_pow = base_pow @ base_pow
    return res_pow, res_sum


# ---------------------------------------------------------------- validation

def validate_density_matrix(rho, atol: float = 1e-10) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (3, 3) or not np.all(np.isfinite(rho)):
        raise InvalidInputError("density matrix must be a finite 3x3 array")
    if np.max(np.abs(rho - rho.conj().T)) > atol:
        raise InvalidInputError("density matrix must be Hermitian")
    if abs(np.trace(rho) - 1) > atol:
        raise InvalidInputError("density matrix must have unit trace")
    if np.linalg.eigvalsh(rho).min() < -1e-9:
        raise InvalidInputError("density matrix must be positive semidefinite")
    return rho


def ground_state() -> np.ndarray:
    rho = np.zeros((3, 3), dtype=complex)
    rho[MS0, MS0] = 1
    return rho


def frequency_scale(h, omega_mhz: float = 0.0) -> float:
    """Eigenvalue span of ``h`` (or the max over a stack) plus the drive frequency."""
    vals = np.linalg.eigvalsh(h)
    return float(np.max(vals[..., -1] - vals[..., 0])) + omega_mhz


def max_time_step(f_max: float) -> float:
    return 1.0 / (STEPS_PER_CYCLE * f_max) if f_max > 0 else math.inf


def check_time_step(dt_us: float | None, f_max: float) -> float:
    """Return the step to use; ``None`` selects the largest admissible one."""
    limit = max_time_step(f_max)
    if dt_us is None:
        if not math.isfinite(limit):
            raise InvalidInputError("dt_us is required when the Hamiltonian has no frequency scale")
        return limit
    if not dt_us > 0:
        raise InvalidInputError("dt_us must be > 0")
    if dt_us > limit * (1 + 1e-12):
        raise StepSizeError(
            f"dt_us={dt_us:g} exceeds 1/({STEPS_PER_CYCLE} f_max) = {limit:.4g} us "
            f"for f_max = {f_max:.6g} MHz; a coarser step aliases the dynamics"
        )
    return dt_us


def _time_grid(t_max_us: float, dt_us: float):
    if not t_max_us > 0:
        raise InvalidInputError("t_max_us must be > 0")
    n = max(int(math.ceil(t_max_us / dt_us - 1e-9)), 2)
    return n, t_max_us / n


# ---------------------------------------------------------------- observables

def pl_proxy_vector(beta: float = DEFAULT_BETA) -> np.ndarray:
    """Linear functional on vec(rho): p0 + beta (p+1 + p-1)."""
    if not 0 <= beta < 1:
        raise InvalidInputError("beta must be in [0, 1)")
    return vec(np.diag([beta, 1.0, beta]).astype(complex))


def _readout(states, observable, beta):
    """Observable values for a stack of vectorised states (K, 9)."""
    if isinstance(observable, np.ndarray):
        return np.real(states @ vec(observable.T))
    if observable == "population-0":
        return states[:, 4].real
    if observable == "pl-proxy":
        return np.real(states @ pl_proxy_vector(beta))
    if observable == "sy-expectation":
        return np.real(states @ vec(SY.T))
    if observable == "trace":
        return np.real(states[:, 0] + states[:, 4] + states[:, 8])
    if observable == "purity":
        rho = unvec(states)
        return np.real(np.einsum("kij,kji->k", rho, rho))
    raise InvalidInputError(f"unknown observable {observable!r}; expected one of {OBSERVABLES}")


class _Monitor:
    """Running worst-case conservation errors over all recorded states."""

    def __init__(self, purity0: float):
        self.purity0 = purity0
        self.trace_err = self.herm_err = self.purity_err = 0.0
        self.min_eig = math.inf

    def update(self, states):
        rho = unvec(states)
        tr = rho[:, 0, 0] + rho[:, 1, 1] + rho[:, 2, 2]
        self.trace_err = max(self.trace_err, float(np.max(np.abs(tr - 1))))
        self.herm_err = max(self.herm_err, float(np.max(np.abs(rho - np.conj(np.swapaxes(rho, 1, 2))))))
        herm = 0.5 * (rho + np.conj(np.swapaxes(rho, 1, 2)))
        self.min_eig = min(self.min_eig, float(np.linalg.eigvalsh(herm)[:, 0].min()))
        pur = np.real(np.einsum("kij,kji->k", rho, rho))
        self.purity_err = max(self.purity_err, float(np.max(np.abs(pur - self.purity0))))

    def report(self):
        return {
            "max_trace_error": self.trace_err,
            "max_hermiticity_error": self.herm_err,
            "min_eigenvalue": self.min_eig,
            "max_purity_drift": self.purity_err,
        }


# ---------------------------------------------------------------- single defect

def _defect_frame(params, b_lab, o, axis_lab=None):
    r = o.matrix
    b_def = r @ np.asarray(b_lab, dtype=float)
    h = zero_field_hamiltonian(params) + params.gamma_mhz_per_mt * np.tensordot(b_def, SPIN_OPERATORS, axes=1)
    axis = None if axis_lab is None else r @ np.asarray(axis_lab, dtype=float)
    return h, axis


def _block_size(n_members: int, cap: int = 4096) -> int:
    return int(max(16, min(cap, 2_000_000 // (9 * max(n_members, 1)))))


def evolve(
    rho0,
    params: SpinParams,
    b_lab,
    o: DefectOrientation,
    drive: DriveParams | None = None,
    t_max_us: float = 1.0,
    dt_us: float | None = None,
    observable="population-0",
    beta: float = DEFAULT_BETA,
    monitor: bool = False,
) -> TrajectoryRecord:
    """Integrate one defect and record ``observable`` at every step.

    ``dt_us=None`` picks the largest step allowed by the anti-aliasing guard
    ``dt <= 1/(20 f_max)``. The grid is ``t_k = k dt`` for ``k < n`` with
    ``n dt = t_max_us`` (dt shrinks slightly if ``t_max_us/dt_us`` is not an
    integer). With ``monitor=True`` the record's ``diagnostics`` carry the
    worst trace, Hermiticity, positivity and purity errors seen.
    """
    rho0 = validate_density_matrix(rho0)
    if isinstance(observable, str) and observable not in OBSERVABLES:
        raise InvalidInputError(f"unknown observable {observable!r}")
    b_lab = np.asarray(b_lab, dtype=float)
    if b_lab.shape != (3,) or not np.all(np.isfinite(b_lab)):
        raise InvalidInputError("b_lab must be 3 finite numbers")
    h, axis = _defect_frame(params, b_lab, o, None if drive is None else drive.axis_lab)
    f_max = frequency_scale(h, 0.0 if drive is None else drive.omega_mhz)
    dt = check_time_step(dt_us, f_max)
    n, dt = _time_grid(t_max_us, dt)
    times = np.arange(n) * dt
    l0 = liouvillian(h, params.relaxation_rate)
    y = vec(rho0)
    mon = _Monitor(float(np.real(np.trace(rho0 @ rho0)))) if monitor else None
    signals = np.empty(n)

    if drive is None or drive.b_mw_mt == 0:
        p = rk4_propagator(l0, dt)
        block = _block_size(1)
        powers = np.empty((block, 9, 9), dtype=complex)
        powers[0] = _I9
        for k in range(1, block):
            powers[k] = p @ powers[k - 1]
        p_block = p @ powers[-1]
        for start in range(0, n, block):
            stop = min(start + block, n)
            states = powers[: stop - start] @ y
            signals[start:stop] = _readout(states, observable, beta)
            if mon:
                mon.update(states)
            y = p_block @ y
    else:
        v = params.gamma_mhz_per_mt * drive.b_mw_mt * np.tensordot(axis, SPIN_OPERATORS, axes=1)
        l1 = commutator_superop(v)
        states = np.empty((n, 9), dtype=complex)
        for k in range(n):
            states[k] = y
            y = _rk4_driven_step(l0, l1, k * dt, dt, drive.omega_mhz) @ y
        signals[:] = _readout(states, observable, beta)
        if mon:
            mon.update(states)

    tag = observable if isinstance(observable, str) else "operator"
    return TrajectoryRecord(times, signals, tag, mon.report() if mon else {})


# ---------------------------------------------------------------- ensembles

def _ensemble_hamiltonians(ensemble, params, b_lab):
    rots = rotation_stack(ensemble)
    b_def = rots @ np.asarray(b_lab, dtype=float)
    h = zero_field_hamiltonian(params) + params.gamma_mhz_per_mt * np.einsum(
        "na,aij->nij", b_def, SPIN_OPERATORS)
    return rots, h


def _rotation_operator(axes, angle):
    """exp(-i angle n.S) for unit axes (N, 3), via (n.S)^3 = n.S."""
    ns = np.einsum("na,aij->nij", axes, SPIN_OPERATORS)
    return IDENTITY - 1j * np.sin(angle) * ns + (np.cos(angle) - 1) * (ns @ ns)


def fid_signal(
    ensemble,
    params: SpinParams,
    b_lab,
    t_max_us: float = 1.0,
    dt_us: float | None = None,
    drive_axis_lab=LAB_Y,
    pulse_angle: float = PI_HALF_PULSE_ANGLE,
    sample_every: int = 1,
) -> TrajectoryRecord:
    """Weighted ensemble-average free induction decay.

    Each defect starts in |0><0| rotated by ``pulse_angle`` about the drive
    axis expressed in its own frame, evolves freely with Gamma = 1/T1, and
    reports <n.S> along that same axis. The default angle pi/4 is the spin-1
    rotation that puts |0> into an equal superposition with the bright
    |m_s=+-1> combination addressed by the drive.

    ``sample_every=m`` records every m-th RK4 step only (the step itself is
    unchanged). The output rate must stay above twice the largest frequency.
    """
    if int(sample_every) != sample_every or sample_every < 1:
        raise InvalidInputError("sample_every must be an integer >= 1")
    m = int(sample_every)
    b_lab = np.asarray(b_lab, dtype=float)
    if b_lab.shape != (3,) or not np.all(np.isfinite(b_lab)):
        raise InvalidInputError("b_lab must be 3 finite numbers")
    axis = np.asarray(drive_axis_lab, dtype=float)
    axis = axis / np.linalg.norm(axis)
    rots, h = _ensemble_hamiltonians(ensemble, params, b_lab)
    w = weight_vector(ensemble)
    w = w / w.sum()
    f_max = frequency_scale(h)
    dt = check_time_step(dt_us, f_max)
    n, dt = _time_grid(t_max_us, dt)
    if m > 1 and 1.0 / (m * dt) <= 2 * f_max:
        raise InvalidInputError(f"sample_every={m} undersamples f_max = {f_max:.6g} MHz")
    n = int(math.ceil(n / m))

    axes = rots @ axis
    u = _rotation_operator(axes, pulse_angle)
    rho0 = u @ ground_state() @ np.conj(np.swapaxes(u, 1, 2))
    y = vec(rho0)
    obs = np.einsum("na,aij->nij", axes, SPIN_OPERATORS)
    c = vec(np.swapaxes(obs, 1, 2)) * w[:, None]
    p = rk4_propagator(liouvillian(h, params.relaxation_rate), dt)
    if m > 1:
        p = _power_and_sum(p, m)[0]

    members = len(ensemble)
    block = _block_size(members)
    rows = np.empty((block, members, 9), dtype=complex)
    rows[0] = c
    for k in range(1, block):
        rows[k] = np.einsum("nj,nji->ni", rows[k - 1], p)
    p_block = p @ _power_and_sum(p, block - 1)[0]
    signals = np.empty(n)
    for start in range(0, n, block):
        stop = min(start + block, n)
        signals[start:stop] = np.einsum("knj,nj->k", rows[: stop - start], y).real
        y = np.einsum("nij,nj->ni", p_block, y)
    return TrajectoryRecord(np.arange(n) * (m * dt), signals, "drive-axis-spin",
                            {"members": members, "dt_us": dt, "sample_every": m})


def _periodic_pl(l0, l1, omega, dt_guard, settle_us, window_us, pl_vec, y0, w):
    period = 1.0 / omega
    m = int(math.ceil(period / dt_guard - 1e-9))
    h = period / m
    q = np.broadcast_to(_I9, l0.shape).copy()
    q_sum = np.zeros_like(q)
    for j in range(m):
        q_sum += q
        q = _rk4_driven_step(l0, l1, j * h, h, omega) @ q
    n_settle = int(math.ceil(settle_us / period - 1e-9))
    n_avg = max(1, int(math.ceil(window_us / period - 1e-9)))
    p_settle, _ = _power_and_sum(q, n_settle)
    _, s_avg = _power_and_sum(q, n_avg)
    y = np.einsum("nij,nj->ni", q_sum @ s_avg @ p_settle, y0) / (m * n_avg)
    return float(np.real(w @ (y @ pl_vec)))


def cw_sweep(
    ensemble,
    params: SpinParams,
    b_lab,
    drive_amplitude_mt: float = DEFAULT_DRIVE_MT,
    omega_grid_mhz=None,
    settle_time_us: float | None = None,
    avg_window_us: float = 1.0,
    dt_us: float | None = None,
    beta: float = DEFAULT_BETA,
    drive_axis_lab=LAB_Y,
):
    """Continuous-wave ODMR contrast versus drive frequency.

    Every defect starts optically polarised in |0>, is driven at each
    frequency for ``settle_time_us`` (default 3 T1), and the PL proxy is
    time-averaged over ``avg_window_us``. The same computation with zero
    drive gives PL_off and the contrast is (PL_off - PL_on)/PL_off.
    """
    from .spectrum import Spectrum

    grid = np.asarray(omega_grid_mhz, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise InvalidInputError("omega grid must be a non-empty 1-D sequence")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise InvalidInputError("omega grid must be positive and strictly increasing")
    if not drive_amplitude_mt >= 0:
        raise InvalidInputError("drive amplitude must be >= 0")
    if settle_time_us is None:
        settle_time_us = 3 * params.t1_us
    if settle_time_us < 3 * params.t1_us * (1 - 1e-12):
        raise InvalidInputError("settle_time_us must be >= 3 T1")
    if not avg_window_us > 0:
        raise InvalidInputError("avg_window_us must be > 0")
    b_lab = np.asarray(b_lab, dtype=float)
    axis = np.asarray(drive_axis_lab, dtype=float)
    axis = axis / np.linalg.norm(axis)

    rots, h = _ensemble_hamiltonians(ensemble, params, b_lab)
    w = weight_vector(ensemble)
    w = w / w.sum()
    pl_vec = pl_proxy_vector(beta)
    l0 = liouvillian(h, params.relaxation_rate)
    v = params.gamma_mhz_per_mt * np.einsum("na,aij->nij", rots @ axis, SPIN_OPERATORS)
    l1_on = commutator_superop(drive_amplitude_mt * v)
    l1_off = np.zeros_like(l1_on)
    y0 = np.broadcast_to(vec(ground_state()), (len(ensemble), 9))
    span = frequency_scale(h)

    contrast = np.empty(grid.size)
    for i, omega in enumerate(grid):
        dt = check_time_step(dt_us, span + omega)
        on = _periodic_pl(l0, l1_on, omega, dt, settle_time_us, avg_window_us, pl_vec, y0, w)
        off = _periodic_pl(l0, l1_off, omega, dt, settle_time_us, avg_window_us, pl_vec, y0, w)
        contrast[i] = (off - on) / off
    meta = {"source": "cw_sweep", "drive_amplitude_mt": drive_amplitude_mt, "beta": beta,
            "settle_time_us": settle_time_us, "avg_window_us": avg_window_us,
            "members": len(ensemble)}
    return Spectrum(grid.copy(), contrast, "odmr-contrast", meta)
