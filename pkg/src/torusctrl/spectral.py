"""Matrix symbol, contour spectral projections, branch splitting, graph map.

The symbol is E(z) = B + z A - z^2 K; at z = i/n the mode-n generator is
n^2 E(i/n).  For small |z| its spectrum splits into a "hyperbolic" group
near 0 (eigenvalues ~ mu z for mu in Sp(Aprime)) and a "parabolic" group
near Sp(D).  The splitting is realized by resolvent contour integrals on
the circle |zeta| = R with R = min|Sp(D)|/2, and the hyperbolic group is
further resolved per transport speed mu through the rescaled symbol
E1(z) = E(z) Ph(z) / z (Kato's reduction process).
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .algebra import SystemMatrices

__all__ = [
    "SpectralBranch", "BranchConstants", "eval_symbol", "separation_radius",
    "projection_split", "hyperbolic_branches", "graph_map", "branch_constants",
    "build_branch_table", "limit_projections",
]

CONTOUR_TOL = 1e-11
CONTOUR_NODES = 64
CONTOUR_MAX_NODES = 4096


class ContourError(RuntimeError):
    """Contour quadrature failed to converge or hit an eigenvalue."""


def eval_symbol(sys: SystemMatrices, z: complex) -> np.ndarray:
    """E(z) = B + z A - z^2 K."""
    return sys.B + z * sys.A - z * z * sys.K


def _resolvent_projection(mat, center, radius, tol=CONTOUR_TOL):
    """Riesz projection -(1/2 pi i) oint (mat - zeta I)^-1 d zeta over the
    circle |zeta - center| = radius, by trapezoidal quadrature with node
    doubling until the inter-resolution difference is below tol."""
    d = mat.shape[0]
    eye = np.eye(d)
    w = np.linalg.eigvals(mat)
    if np.min(np.abs(np.abs(w - center) - radius)) < 1e-12 * max(1.0, radius):
        raise ContourError("eigenvalue on the integration contour")

    def quad(m):
        theta = 2.0 * np.pi * np.arange(m) / m
        zeta = center + radius * np.exp(1j * theta)
        acc = np.zeros((d, d), dtype=complex)
        for t, ze in zip(theta, zeta):
            acc += np.linalg.solve(mat - ze * eye, eye) * (ze - center)
        # -(1/2 pi i) * i * (2 pi / m) * sum R(zeta) (zeta - center)
        return -acc / m

    m = CONTOUR_NODES
    prev = quad(m)
    while m <= CONTOUR_MAX_NODES:
        m *= 2
        cur = quad(m)
        if np.linalg.norm(cur - prev, ord=2) < tol:
            return cur
        prev = cur
    raise ContourError(
        f"contour quadrature did not converge below {tol} at {m} nodes")


@dataclass(frozen=True)
class BranchConstants:
    """Global branch-splitting data: separation radius r, frequency cutoff
    n0 (1/n0 < r), contour radius R, and sampled decay/boundedness
    constants for the two branches."""

    r: float
    n0: int
    R: float
    Kp: float = np.nan
    cp: float = np.nan
    Kh: float = np.nan
    ch: float = np.nan


@dataclass(frozen=True)
class SpectralBranch:
    """Per-frequency branch data at z = i/n."""

    n: int
    Ph: np.ndarray
    Pp: np.ndarray
    mu_branches: dict  # mu -> (Phmu, Rhmu)
    G: np.ndarray


def separation_radius(sys: SystemMatrices, n0_override=None,
                      floor=1e-6) -> BranchConstants:
    """Find (r, n0, R): R = min|Sp(D)|/2; r is the largest radius in a
    geometric grid such that on a sampled disk |z| <= r every eigenvalue
    of E(z) keeps distance >= R/10 from the circle |zeta| = R."""
    specD = np.linalg.eigvals(sys.D)
    if np.any(specD.real <= 0):
        raise ValueError("H.3 violated: Sp(D) not in the right half plane")
    R = 0.5 * float(np.min(np.abs(specD)))
    margin = R / 10.0
    phases = np.exp(1j * np.linspace(0.0, 2.0 * np.pi, 24, endpoint=False))
    radii_frac = np.linspace(0.05, 1.0, 12)

    def clears(r):
        for fr in radii_frac:
            for ph in phases:
                z = r * fr * ph
                w = np.linalg.eigvals(eval_symbol(sys, z))
                if np.min(np.abs(np.abs(w) - R)) < margin:
                    return False
        return True

    r = 1.0
    while r >= floor:
        if clears(r):
            break
        r *= 0.7
    else:
        raise ValueError(
            f"no separation radius above {floor}: eigenvalues of E(z) "
            f"approach the circle |zeta| = {R} at |z| = {r / 0.7}")
    n0 = int(np.ceil(1.0 / r))
    if n0_override is not None:
        if n0_override < n0:
            raise ValueError(f"n0 override {n0_override} below certified {n0}")
        n0 = int(n0_override)
    return BranchConstants(r=r, n0=n0, R=R)


def projection_split(sys: SystemMatrices, z: complex, R: float):
    """Hyperbolic/parabolic projection pair at z.

    Ph is the Riesz projection of E(z) for the eigenvalue group inside
    |zeta| < R; Pp = I - Ph.
    """
    E = eval_symbol(sys, z)
    Ph = _resolvent_projection(E, 0.0, R)
    return Ph, np.eye(sys.d) - Ph


def _distinct_real_eigs(Aprime, tol=1e-8):
    w = np.sort(np.linalg.eigvals(Aprime).real)
    groups = []
    for mu in w:
        if groups and abs(mu - groups[-1]) <= tol * (1.0 + abs(mu)):
            continue
        groups.append(float(mu))
    return groups


def hyperbolic_branches(sys: SystemMatrices, z: complex, Ph: np.ndarray):
    """Split Ph into per-speed projections: mu -> (Phmu, Rhmu).

    Works on the rescaled symbol E1(z) = E(z) Ph(z) / z whose spectrum on
    the range of Ph approaches Sp(Aprime).  Each mu-group projection is a
    contour integral around mu with radius one third of the minimal gap
    in Sp(Aprime).  When 0 in Sp(Aprime) the contour around 0 would also
    enclose the spurious zero eigenvalues carried by the range of Pp, so
    the shifted symbol E(z) + alpha z I (alpha = 1 + max|Sp(Aprime)|) is
    used; it has the same invariant subspaces with speeds mu + alpha.
    The remainder satisfies E(z) Phmu = mu z Phmu + z^2 Rhmu.
    """
    if z == 0:
        raise ValueError("z must be nonzero (use limit_projections for z=0)")
    mus = _distinct_real_eigs(sys.Aprime)
    alpha = 0.0
    if any(abs(mu) <= 1e-8 for mu in mus):
        alpha = 1.0 + max(abs(mu) for mu in mus)
    shifted = [mu + alpha for mu in mus]
    E = eval_symbol(sys, z)
    Es = E + alpha * z * np.eye(sys.d)
    E1 = (Es @ Ph) / z
    if len(mus) == 1:
        gap = max(1.0, abs(shifted[0]))
    else:
        gap = min(abs(a - b) for i, a in enumerate(shifted)
                  for b in shifted[:i])
    # keep the contour away from the spurious zero eigenvalues that the
    # rescaled symbol carries on the range of Pp
    radius = min(gap / 3.0, 0.5 * min(abs(m) for m in shifted))
    out = {}
    total = np.zeros_like(Ph)
    for mu, mus_ in zip(mus, shifted):
        if len(mus) == 1:
            Phmu = Ph.copy()
        else:
            try:
                Phmu = _resolvent_projection(E1, mus_, radius)
            except ContourError as exc:
                raise ContourError(
                    f"mu-groups not separated at |z| = {abs(z):.3g}; "
                    "increase n0") from exc
        Rhmu = (E @ Phmu - mu * z * Phmu) / (z * z)
        out[mu] = (Phmu, Rhmu)
        total = total + Phmu
    if np.linalg.norm(total - Ph, ord=2) > 1e-8 * max(1.0, np.linalg.norm(Ph, ord=2)):
        raise ContourError("mu-group projections do not sum to Ph; increase n0")
    return out


def graph_map(sys: SystemMatrices, z: complex, Pp: np.ndarray) -> np.ndarray:
    """G(z) with phi in range(Pp(z)*) iff phi_1 = G(z) phi_2.

    G(z) = (I - p11)^-1 p12 where p11, p12 are the top blocks of Pp(z)*.
    """
    d1 = sys.d1
    Pstar = Pp.conj().T
    p11 = Pstar[:d1, :d1]
    p12 = Pstar[:d1, d1:]
    if np.linalg.norm(p11, ord=2) >= 1.0:
        raise ValueError("graph map undefined: ||p11(z)|| >= 1 at this z")
    return np.linalg.solve(np.eye(d1) - p11, p12)


def limit_projections(sys: SystemMatrices):
    """z -> 0 limits: Ph(0) = (I 0; 0 0) and the per-speed blocks
    Phmu(0) = (proj_mu(Aprime) 0; 0 0)."""
    d, d1 = sys.d, sys.d1
    Ph0 = np.zeros((d, d), dtype=complex)
    Ph0[:d1, :d1] = np.eye(d1)
    mus = _distinct_real_eigs(sys.Aprime)
    out = {}
    if len(mus) == 1:
        proj = {mus[0]: np.eye(d1, dtype=complex)}
    else:
        gap = min(abs(a - b) for i, a in enumerate(mus) for b in mus[:i])
        proj = {mu: _resolvent_projection(sys.Aprime, mu, gap / 3.0)
                for mu in mus}
    for mu, pm in proj.items():
        block = np.zeros((d, d), dtype=complex)
        block[:d1, :d1] = pm
        out[mu] = block
    return Ph0, out


def remainder_at_zero(sys: SystemMatrices, R: float, n_base=512):
    """Richardson-extrapolated limits mu -> (Phmu(0), Rhmu(0)) from
    z = i/n_base and i/(2 n_base); the branch data is first order in z so
    the extrapolant is O(1/n^2) accurate."""
    out = {}
    for factor in (1, 2):
        z = 1j / (n_base * factor)
        Ph, _ = projection_split(sys, z, R)
        out[factor] = hyperbolic_branches(sys, z, Ph)
    result = {}
    for mu in out[1]:
        P1, R1 = out[1][mu]
        P2, R2 = out[2][mu]
        result[mu] = (2.0 * P2 - P1, 2.0 * R2 - R1)
    return result


def branch_constants(sys: SystemMatrices, r: float, n0: int) -> BranchConstants:
    """Estimate (Kp, cp, Kh, ch) on a sampled grid of |z| <= 1/n0.

    cp is half the minimal real part of the parabolic eigenvalue group
    over the sample; Kp the observed sup of e^{cp tau} ||e^{-E(z) tau} Pp||.
    ch is the proof's c_mu = max ||Rhmu(z)|| over the sample, Kh the max
    of sum_mu ||Phmu(z)||.  These are finite-sample estimates, not
    certified bounds.
    """
    R = 0.5 * float(np.min(np.abs(np.linalg.eigvals(sys.D))))
    zs = [0.0]
    for n in (n0, 2 * n0, 4 * n0, 16 * n0):
        zs.extend([1j / n, -1j / n, 0.7j / n + 0.3 / n])
    taus = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0]
    re_min = np.inf
    ch = 0.0
    Kh = 1.0
    splits = []
    for z in zs:
        Ph, Pp = projection_split(sys, z, R)
        splits.append((z, Pp))
        w = np.linalg.eigvals(eval_symbol(sys, z))
        par = w[np.abs(w) > R]
        if par.size:
            re_min = min(re_min, float(np.min(par.real)))
        if z != 0.0:
            branches = hyperbolic_branches(sys, z, Ph)
            ch = max(ch, max(np.linalg.norm(Rm, ord=2)
                             for _, Rm in branches.values()))
            Kh = max(Kh, sum(np.linalg.norm(Pm, ord=2)
                             for Pm, _ in branches.values()))
    if not re_min > 0:
        raise ValueError("parabolic branch not uniformly decaying on sample")
    cp = 0.5 * re_min
    Kp = 1.0
    for z, Pp in splits:
        E = eval_symbol(sys, z)
        for tau in taus:
            nrm = np.linalg.norm(scipy.linalg.expm(-E * tau) @ Pp, ord=2)
            Kp = max(Kp, nrm * np.exp(cp * tau))
    return BranchConstants(r=r, n0=n0, R=R, Kp=Kp, cp=cp, Kh=Kh, ch=ch)


def build_branch_table(sys: SystemMatrices, consts: BranchConstants,
                       nmax: int):
    """SpectralBranch for every n0 < |n| <= nmax, keyed by n."""
    table = {}
    for n in range(consts.n0 + 1, nmax + 1):
        for sign in (1, -1):
            nn = sign * n
            z = 1j / nn
            Ph, Pp = projection_split(sys, z, consts.R)
            table[nn] = SpectralBranch(
                n=nn, Ph=Ph, Pp=Pp,
                mu_branches=hyperbolic_branches(sys, z, Ph),
                G=graph_map(sys, z, Pp))
    return table
