import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mziforge.device import (
    TWO_PI,
    ArmLoss,
    PhasePair,
    PhaseShifterSpec,
    SplitterQuad,
    mzi_first_order_delta,
    mzi_transfer,
    mzi_transfer_batch,
    phase_from_voltage,
    relative_deviation_grid,
    voltage_from_phase,
    wrap_phase,
)
from mziforge.errors import InvalidInputError, RangeError, SingularityError
from mziforge.linalg import unitarity_error
from oracles import mzi_deviated, mzi_ideal, mzi_lossy

angles = st.floats(0.0, TWO_PI, allow_nan=False, exclude_max=True)
amps = st.floats(0.0, 1.0)


def test_cross_and_bar_states():
    np.testing.assert_allclose(mzi_transfer(PhasePair(0.0, 0.0)), [[0, 1j], [1j, 0]], atol=1e-15)
    np.testing.assert_allclose(mzi_transfer(PhasePair(math.pi, 0.0)), [[-1, 0], [0, 1]], atol=1e-15)


@given(angles, angles)
def test_ideal_closed_form_and_unitary(theta, phi):
    t = mzi_transfer(PhasePair(theta, phi))
    np.testing.assert_allclose(t, mzi_ideal(theta, phi), atol=1e-12)
    assert unitarity_error(t) < 1e-12
    assert np.all(np.abs(t) <= 1 + 1e-12)


@given(angles, angles, amps, amps, amps, amps)
def test_deviated_closed_form(theta, phi, r, t, r2, t2):
    got = mzi_transfer(PhasePair(theta, phi), SplitterQuad(r, t, r2, t2))
    np.testing.assert_allclose(got, mzi_deviated(theta, phi, r, t, r2, t2), atol=1e-12)


@given(angles, angles, st.lists(st.floats(0.05, 1.5), min_size=4, max_size=4))
def test_lossy_closed_form(theta, phi, b):
    got = mzi_transfer(PhasePair(theta, phi), loss=ArmLoss(*b))
    np.testing.assert_allclose(got, mzi_lossy(theta, phi, *b), atol=1e-12)


@given(angles, angles, st.floats(0.01, 1.0))
def test_uniform_loss_scales_by_beta_squared(theta, phi, beta):
    got = mzi_transfer(PhasePair(theta, phi), loss=ArmLoss.uniform(beta))
    np.testing.assert_allclose(got, beta**2 * mzi_ideal(theta, phi), atol=1e-12)


def test_deviated_lossless_entries_bounded(rng):
    for _ in range(200):
        r, t = rng.uniform(0, 1, 2)
        r, t = r / math.hypot(r, t), t / math.hypot(r, t)
        m = mzi_transfer(PhasePair(*rng.uniform(0, TWO_PI, 2)), SplitterQuad(r, t, r, t))
        assert np.all(np.abs(m) <= 1 + 1e-12)


def test_batch_matches_scalar(rng):
    k = 50
    th, ph = rng.uniform(0, TWO_PI, k), rng.uniform(0, TWO_PI, k)
    sp = rng.uniform(0, 1, (k, 4))
    beta = rng.uniform(0.5, 1, (k, 4))
    out = mzi_transfer_batch(th, ph, sp[:, 0], sp[:, 1], sp[:, 2], sp[:, 3], beta)
    for i in range(k):
        ref = mzi_transfer(PhasePair(th[i], ph[i]), SplitterQuad(*sp[i]), ArmLoss(*beta[i]))
        np.testing.assert_allclose(out[i], ref, atol=1e-14)


def test_first_order_delta_zero_and_linear():
    p = PhasePair(1.1, 2.3)
    assert np.all(mzi_first_order_delta(p, 0.0, 0.0) == 0)
    np.testing.assert_allclose(mzi_first_order_delta(p, 0.02, -0.01), 2 * mzi_first_order_delta(p, 0.01, -0.005))


def test_first_order_residual_is_second_order(rng):
    ratios = []
    for _ in range(100):
        th, ph = rng.uniform(0, TWO_PI, 2)
        res = []
        for d in (1e-2, 5e-3):
            exact = mzi_ideal(th + d, ph + d) - mzi_ideal(th, ph)
            res.append(np.linalg.norm(exact - mzi_first_order_delta(PhasePair(th, ph), d, d)))
        ratios.append(res[0] / res[1])
    assert np.all(np.abs(np.array(ratios) - 4.0) <= 0.5)


def test_phase_pair_wraps():
    p = PhasePair(-0.5, 7.0)
    assert p.theta == pytest.approx(TWO_PI - 0.5)
    assert p.phi == pytest.approx(7.0 - TWO_PI)
    assert PhasePair(TWO_PI, 0.0).theta == 0.0
    with pytest.raises(InvalidInputError):
        PhasePair(float("nan"), 0.0)


@given(st.floats(-100, 100))
def test_wrap_phase_range(x):
    y = wrap_phase(x)
    assert 0.0 <= y < TWO_PI
    assert math.isclose(math.cos(y), math.cos(x), abs_tol=1e-9)


def test_splitter_and_loss_validation():
    assert SplitterQuad.ideal().r == pytest.approx(1 / math.sqrt(2))
    with pytest.raises(InvalidInputError):
        SplitterQuad(1.2, 0.5, 0.5, 0.5)
    assert SplitterQuad.clamped(1.3, -0.2, 0.5, 0.5) == SplitterQuad(1.0, 0.0, 0.5, 0.5)
    with pytest.raises(InvalidInputError):
        ArmLoss(0.0, 1.0, 1.0, 1.0)


def test_phase_shifter_constants():
    spec = PhaseShifterSpec()
    assert round(spec.k, 3) == 0.165
    assert spec.v_pi == pytest.approx(4.36, abs=1e-3)
    assert spec.v_max == pytest.approx(6.166, abs=1e-3)
    assert PhaseShifterSpec.from_v_pi(4.36).k == spec.k


def test_voltage_law():
    assert phase_from_voltage(0.0) == 0.0
    assert abs(phase_from_voltage(4.36) - math.pi) < 1e-3
    assert abs(phase_from_voltage(6.166) - TWO_PI) < 1e-3
    with pytest.raises(RangeError):
        phase_from_voltage(-0.1)
    with pytest.raises(RangeError):
        phase_from_voltage(7.0)
    with pytest.raises(RangeError):
        voltage_from_phase(7.0)


@given(st.floats(0.0, TWO_PI))
def test_voltage_round_trip(phi):
    assert phase_from_voltage(voltage_from_phase(phi)) == pytest.approx(phi, abs=1e-12)


def test_relative_deviation_zero_and_linear():
    th = np.linspace(0.2, 3.0, 7)
    ph = np.linspace(0.1, 6.0, 5)
    zero = relative_deviation_grid(0.0, th, ph)
    assert all(np.all(v == 0) for v in zero.values())
    g1, g2 = relative_deviation_grid(0.05, th, ph), relative_deviation_grid(0.1, th, ph)
    for name in g1:
        np.testing.assert_allclose(g2[name], 2 * g1[name], rtol=1e-14)


def test_relative_deviation_matches_first_order_model(rng):
    k = 0.05
    th, ph = rng.uniform(0.2, 3.0, 4), rng.uniform(0.1, 6.0, 4)
    grid = relative_deviation_grid(k, th, ph)
    for i, a in enumerate(th):
        for j, b in enumerate(ph):
            d = mzi_first_order_delta(PhasePair(a, b), k * a, k * b)
            t = mzi_ideal(a, b)
            for name, (r, c) in {"T11": (0, 0), "T12": (0, 1), "T21": (1, 0), "T22": (1, 1)}.items():
                assert grid[name][i, j] == pytest.approx(abs(d[r, c]) / abs(t[r, c]), rel=1e-10)


def test_relative_deviation_monotone():
    # |T12|, |T21| vanish at theta = pi, so those two are checked below the bar state only
    full = np.linspace(0.1, TWO_PI - 0.1, 60)
    phis = np.linspace(0.1, TWO_PI - 0.1, 60)
    g = relative_deviation_grid(0.05, full, phis)
    for name in ("T11", "T22"):
        assert np.all(np.diff(g[name], axis=0) >= -1e-12)
        assert np.all(np.diff(g[name], axis=1) >= -1e-12)
    low = np.linspace(0.1, math.pi - 0.1, 60)
    g = relative_deviation_grid(0.05, low, phis)
    for name in ("T12", "T21"):
        assert np.all(np.diff(g[name], axis=0) >= -1e-12)
        assert np.all(np.diff(g[name], axis=1) >= -1e-12)


def test_relative_deviation_singularities():
    with pytest.raises(SingularityError) as exc:
        relative_deviation_grid(0.05, [0.0, 1.0], [1.0])
    assert exc.value.entry == "T11"
    with pytest.raises(SingularityError) as exc:
        relative_deviation_grid(0.05, [math.pi], [1.0])
    assert exc.value.entry == "T12"
