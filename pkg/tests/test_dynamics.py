from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from polyodmr.dynamics import (
    DriveParams,
    _power_and_sum,
    cw_sweep,
    dissipator_superop,
    evolve,
    fid_signal,
    ground_state,
    liouvillian,
    max_time_step,
    rk4_propagator,
    unvec,
    vec,
)
from polyodmr.ensemble import DefectOrientation, EnsembleSpec, build_ensemble, z_rotation
from polyodmr.errors import InvalidInputError, StepSizeError
from polyodmr.spectrum import fft_spectrum
from polyodmr.spin import SX, SpinParams, build_hamiltonian

RNG = np.random.default_rng(0)


def random_density(rng):
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def master_rhs(h, rate, drive_op=None, omega=0.0):
    """Matrix-form right-hand side, written independently of the superoperators."""
    sx2 = SX @ SX

    def f(t, y):
        rho = y.reshape(3, 3)
        ht = h if drive_op is None else h + np.cos(2 * np.pi * omega * t) * drive_op
        d = -2j * np.pi * (ht @ rho - rho @ ht)
        d += rate / 2 * (2 * SX @ rho @ SX - sx2 @ rho - rho @ sx2)
        return d.ravel()

    return f


def reference(h, rate, rho0, times, drive_op=None, omega=0.0):
    sol = solve_ivp(master_rhs(h, rate, drive_op, omega), (0, times[-1]), rho0.ravel().astype(complex),
                    t_eval=times, method="DOP853", rtol=1e-11, atol=1e-12)
    return sol.y.T.reshape(-1, 3, 3)


def test_liouvillian_matches_matrix_form():
    h = build_hamiltonian(SpinParams(), (0.3, -1.2, 2.0))
    rho = random_density(RNG)
    lhs = unvec(liouvillian(h, 0.5) @ vec(rho))
    assert np.allclose(lhs, master_rhs(h, 0.5)(0, rho.ravel()).reshape(3, 3))


def test_dissipator_is_trace_preserving_and_unital():
    d = dissipator_superop(SX, 1.0)
    rho = random_density(RNG)
    assert abs(np.trace(unvec(d @ vec(rho)))) < 1e-14
    assert np.allclose(d @ vec(np.eye(3) / 3), 0)


def test_rk4_step_is_taylor_polynomial():
    lv = liouvillian(build_hamiltonian(SpinParams(), (0, 0, 1)), 0.07)
    dt = 1e-5
    a = dt * lv
    taylor = sum(np.linalg.matrix_power(a, k) / f for k, f in enumerate([1, 1, 2, 6, 24]))
    assert np.allclose(rk4_propagator(lv, dt), taylor, atol=1e-15)
    # local error is the first omitted Taylor term
    bound = np.linalg.norm(a, 2) ** 5 / 120
    assert np.max(np.abs(rk4_propagator(lv, dt) - expm(a))) < 2 * bound


@given(n=st.integers(0, 70))
def test_power_and_sum(n):
    p = np.eye(9) * 0.9 + 0.01 * RNG.normal(size=(9, 9))
    pw, sm = _power_and_sum(p, n)
    assert np.allclose(pw, np.linalg.matrix_power(p, n))
    assert np.allclose(sm, sum((np.linalg.matrix_power(p, i) for i in range(n)), np.zeros((9, 9))))


@pytest.mark.parametrize("b", [(0, 0, 0), (0, 0, 3.2), (1.0, -0.5, 2.0)])
def test_free_evolution_matches_reference(b):
    p = SpinParams()
    rho0 = random_density(np.random.default_rng(1))
    rec = evolve(rho0, p, b, DefectOrientation(), t_max_us=0.02, observable="population-0")
    ref = reference(build_hamiltonian(p, b), p.relaxation_rate, rho0, rec.times)
    assert np.allclose(rec.signals, ref[:, 1, 1].real, atol=2e-4)


def test_driven_evolution_matches_reference():
    p = SpinParams(e_mhz=0.0)
    drive = DriveParams(b_mw_mt=2.0, omega_mhz=3480.0, axis_lab=(1, 0, 0))
    rec = evolve(ground_state(), p, (0, 0, 0), DefectOrientation(), drive, t_max_us=0.02)
    v = p.gamma_mhz_per_mt * 2.0 * SX
    ref = reference(build_hamiltonian(p, (0, 0, 0)), p.relaxation_rate, ground_state(), rec.times, v, 3480.0)
    assert np.allclose(rec.signals, ref[:, 1, 1].real, atol=5e-4)


def test_rabi_oscillation_frequency():
    # resonant drive on the D+E line via defect x. <B|Sx|0> = 1 for the bright
    # state B = (|+1>+|-1>)/sqrt2, so the coupling is gamma B_mw cos(wt); the
    # rotating-wave half of it, g = gamma B_mw / 2, gives a Rabi frequency 2g
    p = SpinParams(t1_us=1e9)
    b_mw = 1.0
    drive = DriveParams(b_mw_mt=b_mw, omega_mhz=3540.0, axis_lab=(1, 0, 0))
    rec = evolve(ground_state(), p, (0, 0, 0), DefectOrientation(), drive, t_max_us=0.05)
    t_pi = 1 / (2 * p.gamma_mhz_per_mt * b_mw)
    k = int(round(t_pi / rec.dt))
    assert rec.signals[k] < 0.02
    assert rec.signals[2 * k] > 0.97


def test_relaxation_matches_matrix_exponential():
    p = SpinParams(t1_us=0.5)
    h = build_hamiltonian(p, (0, 0, 2.0))
    rec = evolve(ground_state(), p, (0, 0, 2.0), DefectOrientation(), t_max_us=6.0,
                 dt_us=max_time_step(3700) / 4)
    exact = unvec(expm(liouvillian(h, p.relaxation_rate) * rec.times[-1]) @ vec(ground_state()))
    assert rec.signals[-1] == pytest.approx(exact[1, 1].real, abs=1e-6)


def test_relaxation_steady_state_is_maximally_mixed():
    # with |+-1> as eigenstates Sx links both to |0>, so I/3 is the unique fixed point
    p = SpinParams(e_mhz=0.0, t1_us=0.2)
    rec = evolve(ground_state(), p, (0, 0, 3.0), DefectOrientation(), t_max_us=5.0)
    assert rec.signals[-1] == pytest.approx(1 / 3, abs=1e-6)


def test_zero_field_dark_state_does_not_relax():
    # Sx (|+1> - |-1>)/sqrt2 = 0 and the state is an eigenstate of H at B = 0
    psi = np.array([1, 0, -1]) / np.sqrt(2)
    rho = np.outer(psi, psi).astype(complex)
    rec = evolve(rho, SpinParams(t1_us=0.2), (0, 0, 0), DefectOrientation(), t_max_us=2.0,
                 observable=np.outer(psi, psi).astype(complex))
    assert rec.signals[-1] == pytest.approx(1.0, abs=1e-9)


def test_conservation_diagnostics():
    rho0 = random_density(np.random.default_rng(4))
    drive = DriveParams(b_mw_mt=0.5, omega_mhz=3400.0)
    rec = evolve(rho0, SpinParams(), (0.5, 1.0, 2.0), z_rotation(0.3), drive, t_max_us=0.05, monitor=True)
    d = rec.diagnostics
    assert d["max_trace_error"] < 1e-8
    assert d["max_hermiticity_error"] < 1e-9
    assert d["min_eigenvalue"] > -1e-7


def test_purity_conserved_without_relaxation():
    # RK4 damps each coherence by ~(w h)^6/144 per step, so purity drift is
    # controlled through the step size
    rho0 = random_density(np.random.default_rng(5))
    p = SpinParams(t1_us=1e12)
    rec = evolve(rho0, p, (0.4, 0.0, 3.0), DefectOrientation(), t_max_us=0.1,
                 dt_us=max_time_step(3700) / 25, observable="purity", monitor=True)
    assert rec.diagnostics["max_purity_drift"] < 1e-8


def test_purity_drift_shrinks_with_step():
    rho0 = random_density(np.random.default_rng(6))
    p = SpinParams(t1_us=1e12)
    drifts = []
    for div in (1, 2):
        rec = evolve(rho0, p, (0, 0, 1.0), DefectOrientation(), t_max_us=0.05,
                     dt_us=max_time_step(3600) / div, monitor=True)
        drifts.append(rec.diagnostics["max_purity_drift"])
    # global error order five
    assert drifts[0] / drifts[1] == pytest.approx(32, rel=0.25)


def test_step_guard():
    p = SpinParams()
    limit = max_time_step(3540)
    with pytest.raises(StepSizeError):
        evolve(ground_state(), p, (0, 0, 0), DefectOrientation(), dt_us=limit * 1.5)
    rec = evolve(ground_state(), p, (0, 0, 0), DefectOrientation(), t_max_us=0.01)
    assert rec.dt <= limit * (1 + 1e-12)


def test_invalid_inputs():
    p = SpinParams()
    with pytest.raises(InvalidInputError):
        evolve(np.eye(3), p, (0, 0, 0), DefectOrientation())
    with pytest.raises(InvalidInputError):
        evolve(ground_state(), p, (0, 0, 0), DefectOrientation(), observable="magic")
    with pytest.raises(InvalidInputError):
        evolve(ground_state(), p, (0, 0, 0), DefectOrientation(), t_max_us=0)
    with pytest.raises(InvalidInputError):
        DriveParams(axis_lab=(0, 0, 0))


def _peak(rec):
    s = fft_spectrum(rec, "hann", 4).crop(3300, 3700)
    return s.freqs_mhz[np.argmax(s.values)]


def test_fid_selection_rules():
    p = SpinParams()
    # lab Y drive on an identity defect addresses only the D-E line ...
    f_y = _peak(fid_signal([DefectOrientation()], p, (0, 0, 0), 1.0))
    assert f_y == pytest.approx(3420, abs=2)
    # ... and a defect turned by -90 deg sees lab Y as its x axis: D+E line
    f_x = _peak(fid_signal([z_rotation(-np.pi / 2)], p, (0, 0, 0), 1.0))
    assert f_x == pytest.approx(3540, abs=2)


def test_fid_weights_equal_duplication():
    p = SpinParams()
    a, b = z_rotation(0.3), z_rotation(1.1)
    dup = fid_signal([a, a, b], p, (0, 0, 1.0), 0.05)
    wtd = fid_signal([DefectOrientation(a.quaternion, 2.0), b], p, (0, 0, 1.0), 0.05)
    assert np.allclose(dup.signals, wtd.signals, atol=1e-12)


def test_fid_matches_single_defect_reference():
    p = SpinParams()
    o = z_rotation(0.4)
    rec = fid_signal([o], p, (0.5, 0.2, 1.0), 0.01, dt_us=max_time_step(3700) / 4)
    # oracle: explicit pulse, matrix-form integration, <n.S> readout
    r = o.matrix
    n = r @ np.array([0.0, 1.0, 0.0])
    ns = np.tensordot(n, np.stack([SX, *_sy_sz()]), axes=1)
    u = expm(-1j * np.pi / 4 * ns)
    rho0 = u @ ground_state() @ u.conj().T
    ref = reference(build_hamiltonian(p, r @ np.array([0.5, 0.2, 1.0])), p.relaxation_rate, rho0, rec.times)
    sig = np.einsum("kij,ji->k", ref, ns).real
    assert np.allclose(rec.signals, sig, atol=2e-3)


def _sy_sz():
    from polyodmr.spin import SY, SZ
    return SY, SZ


def test_cw_sweep_finds_zero_field_lines():
    p = SpinParams()
    ens = build_ensemble(EnsembleSpec(0, 8, seed=0, aligned_azimuth="uniform"))
    grid = np.arange(3400.0, 3561.0, 4.0)
    s = cw_sweep(ens, p, (0, 0, 0), 0.1, grid)
    mag = np.abs(s.values)
    lo, hi = grid < 3480, grid >= 3480
    assert grid[lo][np.argmax(mag[lo])] == pytest.approx(3420, abs=4)
    assert grid[hi][np.argmax(mag[hi])] == pytest.approx(3540, abs=4)
    assert s.kind == "odmr-contrast"


def test_cw_zero_drive_has_no_contrast():
    s = cw_sweep([DefectOrientation()], SpinParams(), (0, 0, 0), 0.0, [3420.0, 3540.0])
    assert np.allclose(s.values, 0, atol=1e-12)


def test_cw_rejects_short_settle():
    with pytest.raises(InvalidInputError):
        cw_sweep([DefectOrientation()], SpinParams(), (0, 0, 0), 0.1, [3420.0], settle_time_us=10.0)
    with pytest.raises(InvalidInputError):
        cw_sweep([DefectOrientation()], SpinParams(), (0, 0, 0), 0.1, [3540.0, 3420.0])
