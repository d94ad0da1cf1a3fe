"""High-frequency approximate-transport witnesses against observability.

For T below the geometric minimal time, a cut-off profile chi riding the
slowest transport characteristic misses the observation set.  Highpassing
chi with the polynomial P_N(X) = prod_{|j|<=N} (X - j) and dressing it
with the slow-branch projection data produces an exact adjoint solution
g_N whose mass over (0,T) x omega vanishes like 1/N^2 relative to its
terminal mass, which kills any uniform observability constant.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .algebra import SystemMatrices, TorusSubset, TWO_PI, numerical_rank
from . import spectral, dynamics

__all__ = [
    "ObstructionWitness", "highpass_profile", "gaussian_profile",
    "bump_profile", "build_witness", "witness_nmax",
    "observability_ratio", "pure_transport_space",
]

MAX_EXP = 700.0  # log-magnitude ceiling of float64


def _log_poly_factors(n, N):
    """log |P_N(n)| and sign for integer n, P_N(X) = prod_{j=-N..N}(X-j)."""
    js = np.arange(-N, N + 1)
    diffs = n - js
    if np.any(diffs == 0):
        return -np.inf, 1.0
    sign = 1.0 if np.sum(diffs < 0) % 2 == 0 else -1.0
    return float(np.sum(np.log(np.abs(diffs).astype(float)))), sign


def highpass_profile(chi: dynamics.FourierState, N: int,
                     normalize=False, log_abs=None, phase=None):
    """Apply the highpass polynomial: a_n -> P_N(n) a_n (zero for |n| <= N).

    The product is evaluated in log magnitude with sign tracking.  With
    normalize=True the output is rescaled to unit L2 norm (every quoted
    bound is scale invariant); otherwise raw values are returned and
    overflow raises.  Callers that know the coefficients analytically can
    pass log_abs/phase arrays (indexed like chi.modes) to avoid the
    underflow floor of the stored float values.
    """
    if log_abs is None:
        with np.errstate(divide="ignore"):
            log_abs = np.log(np.abs(chi.coeffs[:, 0]))
        mags = np.abs(chi.coeffs[:, 0])
        phase = np.where(mags > 0, chi.coeffs[:, 0] / np.where(mags > 0, mags, 1.0), 1.0)
    log_abs = np.asarray(log_abs, dtype=float)
    phase = np.asarray(phase, dtype=complex)
    logs = np.full(2 * chi.nmax + 1, -np.inf)
    signs = np.ones(2 * chi.nmax + 1)
    for i, n in enumerate(chi.modes):
        if not np.isfinite(log_abs[i]):
            continue
        lp, sg = _log_poly_factors(int(n), N)
        if lp == -np.inf:
            continue
        logs[i] = lp + log_abs[i]
        signs[i] = sg
    out = dynamics.FourierState.zeros(chi.nmax, 1)
    finite = np.isfinite(logs)
    if not np.any(finite):
        return out
    if normalize:
        shift = float(np.max(logs[finite]))
    else:
        shift = 0.0
        if np.max(logs[finite]) > MAX_EXP:
            raise OverflowError(
                "highpassed coefficients exceed float range; "
                "pass normalize=True or reduce N")
    for i in np.where(finite)[0]:
        out.coeffs[i, 0] = phase[i] * signs[i] * np.exp(logs[i] - shift)
    if normalize:
        nrm = out.norm()
        if nrm > 0:
            out = out * (1.0 / nrm)
    return out


def gaussian_profile(nmax, center, sigma):
    """Periodized-Gaussian profile with exact closed-form coefficients
    a_n = (sigma / (2 sqrt(pi))) e^{-sigma^2 n^2 / 4} e^{-i n center}.

    Unlike grid analysis of a compactly supported bump, these coefficients
    are exact at any magnitude, so the highpass product can be evaluated
    in log space without a floating-point noise floor.  The spatial tails
    e^{-(d/sigma)^2} are controlled by the placement margin.
    """
    ns = np.arange(-nmax, nmax + 1)
    amp = sigma / (2.0 * np.sqrt(np.pi))
    coeffs = amp * np.exp(-0.25 * sigma ** 2 * ns.astype(float) ** 2
                          - 1j * ns * center)
    return dynamics.FourierState(nmax, coeffs[:, None])


def bump_profile(nmax, center, width):
    """Fourier coefficients of the C-infinity bump
    exp(-1/(1 - ((x - center)/width)^2)) supported on |x-center| < width."""
    ngrid = max(8 * nmax, 256)
    xs = TWO_PI * np.arange(ngrid) / ngrid
    rel = (xs - center + np.pi) % TWO_PI - np.pi
    rel = rel / width
    vals = np.zeros(ngrid)
    inside = np.abs(rel) < 1.0
    vals[inside] = np.exp(-1.0 / (1.0 - rel[inside] ** 2))
    coeffs = dynamics.analyze_grid(vals[:, None].astype(complex), xs, nmax)
    return dynamics.FourierState(nmax, coeffs)


@dataclass
class ObstructionWitness:
    N: int
    mu: float
    chi: dynamics.FourierState
    chiN: dynamics.FourierState
    phi0: np.ndarray
    sys: SystemMatrices
    branches: dict
    Rhmu0: np.ndarray
    Phmu_table: dict  # n -> (Phmu(i/n), Rhmu(i/n)) for the chosen mu
    T: float

    def gN_coeffs(self, t):
        """Exact adjoint-solution coefficients at time t."""
        d = self.sys.d
        out = dynamics.FourierState.zeros(self.chiN.nmax, d)
        for i, n in enumerate(self.chiN.modes):
            a = self.chiN.coeffs[i, 0]
            if a == 0 or n == 0:
                continue
            if int(n) not in self.Phmu_table:
                raise KeyError(
                    f"branch table missing mode {n}; the highpass order N "
                    "must be at least the frequency cutoff n0")
            Pm, Rm = self.Phmu_table[int(n)]
            vec = _expm(t * Rm.conj().T) @ (Pm.conj().T @ self.phi0)
            out.coeffs[i] = a * np.exp(1j * self.mu * n * t) * vec
        return out

    def gNtilde_coeffs(self, t):
        """Pure-transport comparison profile at time t."""
        d = self.sys.d
        out = dynamics.FourierState.zeros(self.chiN.nmax, d)
        vec = _expm(t * self.Rhmu0.conj().T) @ self.phi0
        for i, n in enumerate(self.chiN.modes):
            a = self.chiN.coeffs[i, 0]
            if a == 0:
                continue
            out.coeffs[i] = a * np.exp(1j * self.mu * n * t) * vec
        return out


def _expm(m):
    return scipy.linalg.expm(m)


def _slowest_speed(sys):
    mus = np.linalg.eigvals(sys.Aprime).real
    mus = mus[np.abs(mus) > 1e-12]
    if mus.size == 0:
        raise ValueError("all transport speeds vanish: minimal time is "
                         "infinite and no witness exists")
    return float(mus[np.argmin(np.abs(mus))])


def witness_nmax(N: int, peak_factor=2.5) -> int:
    """Truncation order large enough to hold the default highpassed
    profile at order N (peak modes near peak_factor*N plus the Gaussian
    envelope width)."""
    sigma = np.sqrt(2.0 * (2 * N + 1)) / (peak_factor * N)
    return int(np.ceil(peak_factor * N + 6.0 / sigma)) + 4


def build_witness(sys: SystemMatrices, branches: dict, omega: TorusSubset,
                  T: float, N: int, chi: dynamics.FourierState = None,
                  consts=None, margin=0.05 * TWO_PI,
                  peak_factor=2.5) -> ObstructionWitness:
    """Construct the witness pair (g_N, gtilde_N) for T below minimal time.

    chi defaults to a periodized Gaussian placed in the largest complement
    gap so that its transport over [0, T] misses omega by `margin`; its
    width is tied to N so the highpassed profile peaks near
    peak_factor*N (keeping the per-mode branch deviation, hence the
    approximation error, of order 1/N).  phi0 is the leading
    right-singular vector of Phmu(0)*.
    """
    mu = _slowest_speed(sys)
    gaps = omega.gap_intervals()
    if not gaps:
        raise ValueError("omega covers the torus: minimal time is zero, "
                         "no obstruction witness exists")
    a, b = max(gaps, key=lambda g: g[1] - g[0])
    ell = b - a
    swept = abs(mu) * T
    free = ell - swept - 2.0 * margin
    if free <= 0:
        raise ValueError(
            f"T >= T* for this geometry: gap {ell:.3f} cannot hide a "
            f"profile swept over {swept:.3f}")
    # support of chi(. + mu t) at time t is supp(chi) - mu t
    if mu > 0:
        lo = a + margin + swept
        hi = b - margin
    else:
        lo = a + margin
        hi = b - margin - swept
    center = 0.5 * (lo + hi)
    half_free = 0.5 * (hi - lo)
    if half_free <= 0:
        raise ValueError("T >= T* for this geometry (margins leave no room)")
    if not branches:
        raise ValueError("empty branch table")
    nmax = max(abs(k) for k in branches)
    log_abs = phase = None
    if chi is None:
        sigma = np.sqrt(2.0 * (2 * N + 1)) / (peak_factor * N)
        chi = gaussian_profile(nmax, center, sigma)
        ns = chi.modes.astype(float)
        log_abs = (np.log(sigma / (2.0 * np.sqrt(np.pi)))
                   - 0.25 * sigma ** 2 * ns ** 2)
        phase = np.exp(-1j * ns * center)
    chiN = highpass_profile(chi, N, normalize=True,
                            log_abs=log_abs, phase=phase)

    if consts is None:
        consts = spectral.separation_radius(sys)
    rz = spectral.remainder_at_zero(sys, consts.R)
    # match mu to the extrapolated branch key
    key = min(rz, key=lambda m: abs(m - mu))
    Pm0, Rm0 = rz[key]
    u, s, vh = np.linalg.svd(Pm0.conj().T)
    phi0 = u[:, 0]

    table = {}
    for n in branches:
        mb = branches[n].mu_branches
        bkey = min(mb, key=lambda m: abs(m - mu))
        table[n] = mb[bkey]
    return ObstructionWitness(N=N, mu=mu, chi=chi, chiN=chiN, phi0=phi0,
                              sys=sys, branches=branches, Rhmu0=Rm0,
                              Phmu_table=table, T=T)


def observability_ratio(witness: ObstructionWitness, omega: TorusSubset,
                        T: float, nt=33) -> float:
    """||g_N||^2 over (0,T) x omega divided by ||g_N(T)||^2 over the torus."""
    ts = np.linspace(0.0, T, nt)
    states = [witness.gN_coeffs(t) for t in ts]
    num = dynamics.windowed_l2_norm(ts, states, (0.0, T), omega) ** 2
    den = states[-1].norm() ** 2
    if den == 0:
        raise ZeroDivisionError("degenerate witness: ||g_N(T)|| = 0")
    return num / den


def pure_transport_space(sys: SystemMatrices, mu: float, nmax: int,
                         tol_scale=1e-8):
    """Scan for modes carrying exact speed-mu transport solutions.

    For each 0 < |n| <= nmax, tests whether i*mu is an eigenvalue of
    n E(i/n)* within |lambda - i mu| < tol_scale*(1+|n|); also evaluates
    the rank of (B | AB | ... | A^{d-1} B), whose fullness predicts the
    matched set stays finite.
    """
    d = sys.d
    matches = []
    for n in range(-nmax, nmax + 1):
        if n == 0:
            continue
        mat = n * spectral.eval_symbol(sys, 1j / n)
        w, V = np.linalg.eig(mat.conj().T)
        hits = np.where(np.abs(w - 1j * mu) < tol_scale * (1.0 + abs(n)))[0]
        for h in hits:
            matches.append((n, V[:, h]))
    blocks = [sys.B]
    for _ in range(d - 1):
        blocks.append(sys.A @ blocks[-1])
    rank = numerical_rank(np.hstack(blocks), dim_hint=d)
    return {
        "matches": matches,
        "count": len(matches),
        "kalman_rank_AB": rank,
        "finite_dimensional_expected": rank == d,
    }
