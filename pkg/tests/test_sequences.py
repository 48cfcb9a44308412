import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadcancel.propagation import propagate
from quadcancel.sequences import (
    Kind,
    Manifold,
    PulseSequence,
    Segment,
    UnresolvableEchoError,
    dumps_sequence,
    ground_echo_times,
    loads_sequence,
    magnetic_echo_closed_form,
    quad_cancel_sequence,
    ramsey_sequence,
    read_sequence,
    second_echo_closed_form,
    write_sequence,
)
from quadcancel.shift_models import SR88_CHI_E, SR88_CHI_G, ManifoldResponse, phase_ledger
from quadcancel.spin_algebra import make_spin_system

W0 = 2 * math.pi * 50e3
SR = dict(chi_g=SR88_CHI_G, chi_e=SR88_CHI_E, m_g=-0.5, m_e=-1.5)


def test_segment_invariants():
    with pytest.raises(ValueError):
        Segment(Manifold.EXCITED, Kind.FREE, 1.0, omega=2.0)
    with pytest.raises(ValueError):
        Segment(Manifold.EXCITED, Kind.FREE, 1.0, ideal=True)
    with pytest.raises(ValueError):
        Segment(duration=-1.0)
    assert Segment("ground_S", "rf_pulse", 1.0, 0, 2.0).manifold is Manifold.GROUND


def test_ideal_sequence_layout():
    seq = quad_cancel_sequence(0.3, W0, "ideal")
    assert len(seq) == 5
    assert [s.elapsed for s in seq] == pytest.approx([0, 0.1, 0.1, 0, 0.1], abs=1e-15)
    assert [s.phi for s in seq[:4]] == pytest.approx([0, math.pi / 2, 3 * math.pi / 2, math.pi])
    assert [s.kind for s in seq] == [Kind.RF_PULSE] * 4 + [Kind.FREE]
    assert seq[0].area == pytest.approx(math.pi / 2) and seq[3].area == pytest.approx(math.pi / 2)


def test_finite_pulse_duration():
    seq = quad_cancel_sequence(0.3, W0, "finite")
    assert seq[0].duration == pytest.approx(5e-6, rel=1e-12)
    assert seq[3].duration == pytest.approx(5e-6, rel=1e-12)
    assert not any(s.ideal for s in seq)


@settings(max_examples=50, deadline=None)
@given(T=st.floats(1e-3, 10), w=st.floats(2e4, 1e6))
def test_total_time_is_T(T, w):
    for mode in ("ideal", "finite"):
        seq = quad_cancel_sequence(T, w, mode)
        assert seq.total_time == pytest.approx(T, rel=1e-15)
        assert seq.total_time == pytest.approx(math.fsum(s.duration for s in seq if not s.ideal), rel=1e-15)
        for k in (0, 3):
            assert seq[k].area == pytest.approx(math.pi / 2, abs=1e-12)


def test_pulses_that_do_not_fit_are_rejected():
    with pytest.raises(ValueError):
        quad_cancel_sequence(1e-5, W0, "finite")
    with pytest.raises(ValueError):
        quad_cancel_sequence(0.3, 0.0)
    with pytest.raises(ValueError):
        quad_cancel_sequence(0.0, W0)


def test_ramsey():
    seq = ramsey_sequence(1.0)
    assert len(seq) == 1 and seq[0].kind is Kind.FREE and seq[0].duration == 1.0
    with pytest.raises(ValueError):
        ramsey_sequence(0.0)


def test_ramsey_composition():
    s = make_spin_system(2.5)
    a, b = 0.13, 0.41
    U1 = propagate(s, ramsey_sequence(a).then(ramsey_sequence(b)), delta=3.1, q_j=7.0).unitary
    U2 = propagate(s, ramsey_sequence(a + b), delta=3.1, q_j=7.0).unitary
    assert np.allclose(U1, U2, atol=1e-12)


@pytest.mark.parametrize("mode", ["ideal", "finite"])
def test_sequence_file_round_trip(tmp_path, mode):
    seq = quad_cancel_sequence(0.3, W0, mode)
    assert loads_sequence(dumps_sequence(seq)) == seq
    path = tmp_path / "seq.csv"
    write_sequence(seq, path)
    assert read_sequence(path) == seq
    assert path.read_text().splitlines()[0] == "manifold,kind,duration_s,phi_rad,omega_rad_s,ideal"


def test_bad_sequence_file():
    with pytest.raises(ValueError):
        loads_sequence("a,b\n1,2\n")


def test_sr_magnetic_only_echo():
    T = 0.3
    echoes = ground_echo_times(**SR, T=T, mode="magnetic_only")
    assert echoes[0][1] is Manifold.GROUND
    assert echoes[0][0] / T == pytest.approx(0.8, abs=1e-3)
    assert echoes[1] == (T, Manifold.GROUND)
    assert echoes[0][0] == pytest.approx(magnetic_echo_closed_form(**SR, T=T), rel=1e-12)


def test_sr_magnetic_and_stark_echo():
    T = 0.3
    echoes = ground_echo_times(**SR, T=T, mode="magnetic_and_stark")
    assert echoes[0] == (pytest.approx(T / 3), Manifold.GROUND)
    # the ground closed form lands inside the driven window, so the echo moves to the excited manifold
    closed = second_echo_closed_form(**SR, T=T)
    assert closed["ground_S"] < 2 * T / 3
    assert echoes[1][1] is Manifold.EXCITED
    assert echoes[1][0] == pytest.approx(closed["excited_J"], rel=1e-12)


def test_equal_responses_echo_nulls_ledger():
    resp = dict(chi_g=1.0, chi_e=1.0 / 3, m_g=0.5, m_e=1.5)  # chi_e m_e == chi_g m_g
    echoes = ground_echo_times(**resp, T=1.0)
    assert phase_ledger(ManifoldResponse(**resp), 1.0, 0.0, 1.0, echoes) == pytest.approx(0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    chi_g=st.floats(1e5, 1e8), chi_e=st.floats(1e5, 1e8),
    m_g=st.sampled_from([-0.5, 0.5]), m_e=st.sampled_from([-2.5, -1.5, -0.5, 0.5, 1.5, 2.5]),
    T=st.floats(0.01, 3), B=st.floats(1e-3, 5), mode=st.sampled_from(["magnetic_only", "magnetic_and_stark"]),
)
def test_echo_times_null_the_ledger(chi_g, chi_e, m_g, m_e, T, B, mode):
    try:
        echoes = ground_echo_times(chi_g, chi_e, m_g, m_e, T, mode)
    except UnresolvableEchoError:
        return
    for t, _ in echoes:
        assert 0 < t <= T
    resp = ManifoldResponse(chi_g, chi_e, m_g, m_e)
    scale = (abs(chi_g) + abs(chi_e) * 2.5) * B * T
    assert abs(phase_ledger(resp, B, 0.0, T, echoes)) <= 1e-9 * max(1.0, scale / 1e6)
    if mode == "magnetic_and_stark" and chi_e != chi_g:
        # the T/3 echo also removes any ac-Stark phase
        assert abs(phase_ledger(resp, B, 2 * math.pi * 5e3, T, echoes)) <= 1e-9 * max(1.0, scale / 1e6)


def test_unresolvable_echo():
    # a large excited response cannot be balanced by a ground echo in the final third
    with pytest.raises(UnresolvableEchoError):
        ground_echo_times(1.0, 100.0, 0.5, 2.5, 1.0, "magnetic_only")


def test_echo_argument_checks():
    with pytest.raises(ValueError):
        ground_echo_times(0.0, 1.0, 0.5, 1.5, 1.0)
    with pytest.raises(ValueError):
        ground_echo_times(1.0, 1.0, 0.5, 1.5, 1.0, "bogus")
