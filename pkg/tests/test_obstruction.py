import numpy as np
import pytest

from torusctrl.algebra import TorusSubset, TWO_PI
from torusctrl import spectral, obstruction
from torusctrl.obstruction import (highpass_profile, gaussian_profile,
                                   bump_profile, build_witness,
                                   observability_ratio, witness_nmax,
                                   pure_transport_space)
from torusctrl.dynamics import FourierState, synth_grid
from conftest import (nscl_system, damped_wave_system, moving_wave_system,
                      HALF_TORUS)


def test_highpass_zeroes_low_modes():
    chi = gaussian_profile(12, np.pi, 0.5)
    out = highpass_profile(chi, 4, normalize=True)
    for n in range(-4, 5):
        assert out.get(n) == pytest.approx(np.zeros(1))
    assert out.norm() == pytest.approx(1.0)


def test_highpass_matches_direct_product():
    chi = gaussian_profile(6, 1.0, 1.0)
    out = highpass_profile(chi, 2)
    for n in (3, -5, 6):
        poly = np.prod([float(n - j) for j in range(-2, 3)])
        assert out.get(n)[0] == pytest.approx(poly * chi.get(n)[0],
                                              rel=1e-12)


def test_highpass_overflow_raises_without_normalize():
    chi = gaussian_profile(300, np.pi, 0.05)
    with pytest.raises(OverflowError):
        highpass_profile(chi, 128)


def test_gaussian_profile_matches_periodized_gaussian():
    # a_n = (sigma / (2 sqrt(pi))) e^{-sigma^2 n^2/4} e^{-inc} are the
    # Fourier coefficients of sum_k e^{-((x - c + 2 pi k)/sigma)^2}
    chi = gaussian_profile(16, 2.0, 0.8)
    xs, vals = synth_grid(chi, ngrid=256)
    direct = np.zeros(256)
    for k in range(-4, 5):
        direct += np.exp(-((xs - 2.0 + TWO_PI * k) / 0.8) ** 2)
    assert vals[:, 0] == pytest.approx(direct, abs=1e-10)


def test_bump_profile_support():
    chi = bump_profile(64, np.pi, 0.5)
    xs, vals = synth_grid(chi, ngrid=1024)
    rel = np.abs((xs - np.pi + np.pi) % TWO_PI - np.pi)
    outside = rel > 0.6
    # spectral truncation leaves small ripple outside the true support
    assert np.max(np.abs(vals[outside])) < 1e-3
    assert np.max(np.abs(vals[~outside])) > 0.3


def test_build_witness_rejects_large_T():
    sys = nscl_system()
    consts = spectral.separation_radius(sys)
    branches = spectral.build_branch_table(sys, consts, 30)
    with pytest.raises(ValueError):
        build_witness(sys, branches, HALF_TORUS, T=10.0, N=8,
                      consts=consts)


def test_build_witness_rejects_zero_speed():
    sys = damped_wave_system(1.0)
    consts = spectral.separation_radius(sys)
    branches = spectral.build_branch_table(sys, consts, 30)
    with pytest.raises(ValueError):
        build_witness(sys, branches, HALF_TORUS, T=1.0, N=8,
                      consts=consts)


def test_observability_ratio_decays(nscl_branches24):
    sys, consts, _ = nscl_branches24
    T = 0.5 * np.pi  # half the minimal time for omega = (0, pi)
    ratios = []
    for N in (8, 16):
        wn = witness_nmax(N)
        branches = spectral.build_branch_table(sys, consts, wn)
        wit = build_witness(sys, branches, HALF_TORUS, T, N,
                            consts=consts)
        ratios.append(observability_ratio(wit, HALF_TORUS, T))
    assert ratios[1] < 0.5 * ratios[0]
    assert ratios[0] < 1e-2


def test_pure_transport_space_rank_dichotomy():
    nscl = pure_transport_space(nscl_system(), 1.0, 16)
    assert nscl["kalman_rank_AB"] == 2
    assert nscl["finite_dimensional_expected"]
    dw = pure_transport_space(damped_wave_system(0.5), 0.0, 16)
    assert dw["kalman_rank_AB"] == 1
    assert not dw["finite_dimensional_expected"]


def test_pure_transport_counts_stable():
    sys = moving_wave_system()
    c16 = pure_transport_space(sys, -1.0, 16)["count"]
    c32 = pure_transport_space(sys, -1.0, 32)["count"]
    assert c16 == c32
