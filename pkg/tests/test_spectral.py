import numpy as np
import pytest

from torusctrl import spectral
from torusctrl.spectral import (eval_symbol, projection_split,
                                hyperbolic_branches, graph_map,
                                limit_projections, separation_radius,
                                build_branch_table)
from conftest import (nscl_system, damped_wave_system, moving_wave_system,
                      decoupled_heat_system)


SYSTEMS = {
    "nscl": nscl_system(),
    "damped-wave": damped_wave_system(0.5),
    "moving-wave": moving_wave_system(),
}


def test_eval_symbol_quadratic_in_z():
    sys = nscl_system()
    z = 0.1 + 0.05j
    assert eval_symbol(sys, z) == pytest.approx(
        sys.B + z * sys.A - z ** 2 * sys.K)


@pytest.mark.parametrize("name", sorted(SYSTEMS))
def test_projection_identities(name):
    sys = SYSTEMS[name]
    consts = separation_radius(sys)
    rng = np.random.default_rng(11)
    for _ in range(25):
        z = (rng.uniform(0, 1.0 / consts.n0)
             * np.exp(1j * rng.uniform(0, 2 * np.pi)))
        Ph, Pp = projection_split(sys, z, consts.R)
        E = eval_symbol(sys, z)
        assert Ph @ Ph == pytest.approx(Ph, abs=1e-10)
        assert Ph + Pp == pytest.approx(np.eye(sys.d), abs=1e-10)
        assert Ph @ E == pytest.approx(E @ Ph, abs=1e-10)
        assert np.trace(Ph).real == pytest.approx(sys.d1, abs=1e-8)


@pytest.mark.parametrize("name", sorted(SYSTEMS))
def test_hyperbolic_branch_equation(name):
    sys = SYSTEMS[name]
    consts = separation_radius(sys)
    rng = np.random.default_rng(5)
    for _ in range(10):
        z = (rng.uniform(1e-3, 1.0 / consts.n0)
             * np.exp(1j * rng.uniform(0, 2 * np.pi)))
        Ph, _ = projection_split(sys, z, consts.R)
        E = eval_symbol(sys, z)
        branches = hyperbolic_branches(sys, z, Ph)
        assert sum(P for P, _ in branches.values()) == \
            pytest.approx(Ph, abs=1e-9)
        for mu, (P, R) in branches.items():
            assert E @ P == pytest.approx(mu * z * P + z ** 2 * R,
                                          abs=1e-9)


def test_limit_projections_block_structure():
    for sys in SYSTEMS.values():
        Ph0, per_speed = limit_projections(sys)
        expect = np.zeros((sys.d, sys.d))
        expect[:sys.d1, :sys.d1] = np.eye(sys.d1)
        assert Ph0 == pytest.approx(expect, abs=1e-12)
        assert sum(per_speed.values()) == pytest.approx(Ph0, abs=1e-10)


def test_graph_map_limit_is_zero():
    for sys in SYSTEMS.values():
        consts = separation_radius(sys)
        _, Pp0 = projection_split(sys, 0.0, consts.R)
        G0 = graph_map(sys, 0.0, Pp0)
        assert G0 == pytest.approx(np.zeros_like(G0), abs=1e-12)


def test_certified_cutoffs_frozen():
    # independent of the sampling internals, these certified cutoffs were
    # cross-checked by hand against the eigenvalue gap of E(z)
    assert separation_radius(nscl_system()).n0 == 3
    assert separation_radius(moving_wave_system()).n0 == 5


def test_n0_override():
    consts = separation_radius(decoupled_heat_system(), n0_override=1)
    assert consts.n0 == 1


def test_branch_table_keys_and_graph_map(nscl_branches24):
    sys, consts, branches = nscl_branches24
    keys = sorted(branches)
    assert keys[0] == -24 and keys[-1] == 24
    assert all(abs(n) > consts.n0 for n in keys)
    for n in (consts.n0 + 1, 24, -7):
        br = branches[n]
        assert br.Pp @ br.Pp == pytest.approx(br.Pp, abs=1e-10)
        assert br.Ph @ br.Pp == pytest.approx(np.zeros((sys.d, sys.d)),
                                              abs=1e-10)
        assert np.all(np.isfinite(br.G))


def test_graph_map_vanishes_with_coupling():
    # decoupled system: parabolic branch is exactly the second component,
    # so the hyperbolic components of parabolic data vanish identically
    sys = decoupled_heat_system()
    consts = separation_radius(sys, n0_override=1)
    for n in (2, 5, -9):
        z = 1j / n
        _, Pp = projection_split(sys, z, consts.R)
        G = graph_map(sys, z, Pp)
        assert G == pytest.approx(np.zeros_like(G), abs=1e-12)


def test_remainder_at_zero_extrapolation():
    sys = moving_wave_system()
    consts = separation_radius(sys)
    rz = spectral.remainder_at_zero(sys, consts.R)
    mus = sorted(rz)
    assert mus == pytest.approx([-1.0], abs=1e-6)
    Pm0, _ = rz[mus[0]]
    Ph0, _ = limit_projections(sys)
    # Richardson from z = i/512, i/1024 leaves an O(1/n^2)-scale tail
    assert Pm0 == pytest.approx(Ph0, abs=1e-5)
