import numpy as np
import pytest

from torusctrl.algebra import SystemMatrices, TorusSubset
from torusctrl.dynamics import FourierState
from torusctrl import spectral


def nscl_system(vbar=1.0, rhobar=1.0, a=1.0, gamma=2.0, mu=1.0):
    return SystemMatrices(
        1, 1,
        A=np.array([[vbar, rhobar], [a * rhobar ** (gamma - 2.0), vbar]]),
        D=np.array([[mu / rhobar]]),
        K=np.zeros((2, 2)),
        M=np.eye(2))


def damped_wave_system(b=0.5):
    return SystemMatrices(
        1, 1,
        A=np.zeros((2, 2)),
        D=np.array([[1.0]]),
        K=np.array([[1.0, 1.0 - b], [-1.0, b - 1.0]]),
        M=np.array([[1.0], [0.0]]))


def moving_wave_system(c=1.0, b=1.0):
    return SystemMatrices(
        1, 1,
        A=np.array([[-c, 0.0], [0.0, -c]]),
        D=np.array([[1.0]]),
        K=np.array([[1.0, 1.0 - b], [-1.0, b - 1.0]]),
        M=np.array([[1.0], [0.0]]))


def decoupled_heat_system():
    # transport and heat components with no coupling at all
    return SystemMatrices(
        1, 1,
        A=np.zeros((2, 2)),
        D=np.array([[1.0]]),
        K=np.zeros((2, 2)),
        M=np.eye(2))


def random_state(rng, nmax, d, decay=0.05):
    st = FourierState.zeros(nmax, d)
    env = np.exp(-decay * np.arange(-nmax, nmax + 1) ** 2)[:, None]
    st.coeffs[:] = env * (rng.standard_normal((2 * nmax + 1, d))
                          + 1j * rng.standard_normal((2 * nmax + 1, d)))
    return st


HALF_TORUS = TorusSubset(((0.0, np.pi),))


@pytest.fixture(scope="session")
def nscl_branches24():
    sys = nscl_system()
    consts = spectral.separation_radius(sys)
    return sys, consts, spectral.build_branch_table(sys, consts, 24)


@pytest.fixture(scope="session")
def moving_wave_branches16():
    sys = moving_wave_system()
    consts = spectral.separation_radius(sys)
    return sys, consts, spectral.build_branch_table(sys, consts, 16)
