from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polyodmr.errors import InvalidInputError, OutOfRangeError
from polyodmr.metrics import (
    LatticeTable,
    SensitivityInputs,
    ThermometryParams,
    saturation_intensity,
    sensitivity,
    zfs_shift,
    zfs_shift_from_strain,
)

pos = st.floats(1e-3, 1e3)


def synthetic_table(eta_a=-1e-3, eta_c=-2e-3):
    a0, c0 = 2.504, 6.661
    return LatticeTable([0.0, 300.0], [a0 * (1 + eta_a), a0], [c0 * (1 + eta_c), c0])


def test_sensitivity_hand_value():
    # 0.7 * 110 MHz / (2 * 13.996244936 MHz/mT) / (0.019 * sqrt(516000 Hz)), in uT
    expected = 0.7 * 110 / (2 * 13.996244936) / (0.019 * math.sqrt(516000)) * 1e3
    assert sensitivity(SensitivityInputs()) == pytest.approx(expected, rel=1e-12)
    assert sensitivity(SensitivityInputs()) == pytest.approx(201.5, abs=0.1)


def test_sensitivity_unit_spot_value():
    v = sensitivity(SensitivityInputs(1.0, 1.0, 1.0, 1.0), g_factor=1.0)
    assert v == pytest.approx(1e3 / 13.996244936)


@given(k=pos)
def test_sensitivity_scaling(k):
    base = SensitivityInputs()
    s0 = sensitivity(base)
    assert sensitivity(SensitivityInputs(base.p_f, base.linewidth_mhz * k, base.contrast, base.count_rate_hz)) == \
        pytest.approx(s0 * k)
    assert sensitivity(SensitivityInputs(base.p_f, base.linewidth_mhz, min(base.contrast * k, 1.0),
                                         base.count_rate_hz)) == pytest.approx(s0 / min(k, 1 / base.contrast))
    assert sensitivity(SensitivityInputs(base.p_f, base.linewidth_mhz, base.contrast, base.count_rate_hz * k)) == \
        pytest.approx(s0 / math.sqrt(k))


@pytest.mark.parametrize("kw", [dict(count_rate_hz=0), dict(contrast=0), dict(contrast=1.5),
                                dict(linewidth_mhz=-1), dict(p_f=float("nan"))])
def test_sensitivity_rejects(kw):
    with pytest.raises(InvalidInputError):
        SensitivityInputs(**kw)


@given(p1=pos, p2=pos)
def test_saturation_monotone_and_bounded(p1, p2):
    lo, hi = sorted((p1, p2))
    a, b = saturation_intensity(5.0, 2.0, lo), saturation_intensity(5.0, 2.0, hi)
    assert a <= b < 5.0
    assert saturation_intensity(5.0, 2.0, 2.0) == pytest.approx(2.5)


def test_thermometry_spot_value():
    # -81 GHz * -1e-3 + -24.5 GHz * -2e-3 = 81 + 49 MHz
    p = ThermometryParams()
    assert zfs_shift_from_strain(p, -1e-3, -2e-3) == pytest.approx(130.0)
    shift, d = zfs_shift(p, synthetic_table(), 0.0)
    assert shift == pytest.approx(130.0, abs=1e-9)
    assert d == pytest.approx(3610.0, abs=1e-9)


@given(alpha=st.floats(-5, 5), ea=st.floats(-1e-2, 1e-2), ec=st.floats(-1e-2, 1e-2))
def test_thermometry_linear(alpha, ea, ec):
    p = ThermometryParams()
    assert zfs_shift_from_strain(p, alpha * ea, alpha * ec) == pytest.approx(
        alpha * zfs_shift_from_strain(p, ea, ec), abs=1e-10)


@given(st.lists(st.floats(1, 1000), min_size=1, max_size=8, unique=True))
def test_zero_shift_at_reference(temps):
    t = np.unique(np.r_[temps, 300.0])
    rng = np.random.default_rng(len(t))
    table = LatticeTable(t, 2.5 + 0.01 * rng.random(t.size), 6.6 + 0.01 * rng.random(t.size))
    assert zfs_shift(ThermometryParams(), table, 300.0)[0] == 0.0


def test_lattice_interpolation_and_range():
    table = LatticeTable([100.0, 300.0, 500.0], [2.0, 2.2, 2.6], [6.0, 6.0, 6.0])
    assert table.lattice_at(200.0) == pytest.approx((2.1, 6.0))
    with pytest.raises(OutOfRangeError):
        table.lattice_at(50.0)
    with pytest.raises(InvalidInputError):
        LatticeTable([10.0, 20.0], [1.0, 1.0], [1.0, 1.0])
    with pytest.raises(InvalidInputError):
        LatticeTable([300.0, 200.0], [1.0, 1.0], [1.0, 1.0])


def test_lattice_csv_round_trip(tmp_path):
    table = synthetic_table()
    path = tmp_path / "lat.csv"
    table.to_csv(path)
    back = LatticeTable.from_csv(path)
    assert np.allclose(back.a_angstrom, table.a_angstrom) and np.allclose(back.c_angstrom, table.c_angstrom)
    bad = tmp_path / "bad.csv"
    bad.write_text("temperature_k,a_angstrom,c_angstrom\n300,x,1\n")
    with pytest.raises(InvalidInputError, match=":2"):
        LatticeTable.from_csv(bad)


def test_theta_b_alias():
    p = ThermometryParams.from_mapping({"theta_b_ghz": -20.0})
    assert p.theta_c_ghz == -20.0
    with pytest.raises(InvalidInputError):
        ThermometryParams.from_mapping({"theta_b_ghz": 1.0, "theta_c_ghz": 2.0})
    with pytest.raises(InvalidInputError):
        ThermometryParams.from_mapping({"theta_z_ghz": 1.0})
