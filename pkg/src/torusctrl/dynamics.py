"""Truncated Fourier states, exact per-mode evolution, norms, decomposition.

Conventions: f(x) = sum_n fhat(n) e^{inx} and ||f||^2_{L2} = 2 pi
sum_n |fhat(n)|^2.  The mode-n generator is n^2 E(i/n) for n != 0 and K
for n = 0 (the formal limit).  Time integrals in the Duhamel formula use
per-panel Gauss-Legendre of order 8 with panels aligned to the control's
time nodes.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .algebra import SystemMatrices, TorusSubset, TWO_PI
from .spectral import eval_symbol
from . import kernels

__all__ = [
    "FourierState", "ControlSignal", "decompose", "mode_propagator",
    "evolve", "evolve_adjoint", "sobolev_norm", "h_minus1_tail_norm",
    "windowed_l2_norm", "project_branch", "project_low", "synth_grid",
]

# eigendecomposition error scales like eps * cond(V); keep the fast eig
# path well below the accuracy floor of the dual-pairing solves (exactly
# defective generators occur at isolated modes, e.g. symbol discriminant
# zeros, and take the expm path)
EIG_COND_MAX = 1e6
GL_ORDER = 8


@dataclass
class FourierState:
    """Truncated vector-valued Fourier coefficients, |n| <= nmax.

    coeffs has shape (2*nmax+1, d); row i holds fhat(i - nmax).
    """

    nmax: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=complex))
        if self.coeffs.shape[0] != 2 * self.nmax + 1:
            raise ValueError("coeffs must have 2*nmax+1 rows")

    @classmethod
    def zeros(cls, nmax, d):
        return cls(nmax, np.zeros((2 * nmax + 1, d), dtype=complex))

    @property
    def d(self):
        return self.coeffs.shape[1]

    @property
    def modes(self):
        return np.arange(-self.nmax, self.nmax + 1)

    def get(self, n):
        return self.coeffs[n + self.nmax]

    def set(self, n, v):
        self.coeffs[n + self.nmax] = v

    def copy(self):
        return FourierState(self.nmax, self.coeffs.copy())

    def norm(self):
        """L2 norm: sqrt(2 pi sum |fhat(n)|^2)."""
        return float(np.sqrt(TWO_PI) * np.linalg.norm(self.coeffs))

    def is_real_valued(self, tol=1e-10):
        return bool(np.max(np.abs(self.coeffs - np.conj(self.coeffs[::-1])))
                    <= tol * (1.0 + np.max(np.abs(self.coeffs))))

    def __add__(self, other):
        if other.nmax != self.nmax:
            raise ValueError("truncation orders differ")
        return FourierState(self.nmax, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return self + (other * (-1.0))

    def __mul__(self, scalar):
        return FourierState(self.nmax, self.coeffs * scalar)

    __rmul__ = __mul__


def synth_grid(state: FourierState, ngrid=None):
    """(xs, values) with values[j] = sum_n fhat(n) e^{i n xs[j]} on a
    uniform grid of at least 4*nmax points."""
    if ngrid is None:
        ngrid = max(4 * state.nmax, 16)
    if ngrid < 2 * state.nmax:
        raise ValueError(f"grid of {ngrid} points under Nyquist "
                         f"(need >= {2 * state.nmax})")
    xs = TWO_PI * np.arange(ngrid) / ngrid
    return xs, kernels.synthesize(state.coeffs, state.modes, xs)


def analyze_grid(values, xs, nmax):
    """Inverse of synth_grid on a uniform grid: trapezoidal (= exact DFT)
    Fourier coefficients truncated to |n| <= nmax."""
    ngrid = len(xs)
    ns = np.arange(-nmax, nmax + 1)
    phases = np.exp(-1j * np.outer(ns, xs))
    return (phases @ values) / ngrid


@dataclass
class ControlSignal:
    """Space-time control sampled at strictly increasing time nodes.

    values[i] is the (2*nmax+1, m) coefficient array of u(t_i, .).
    Support metadata records the declared time window, spatial subset and
    the component mask (which rows of the state receive the control).
    """

    time_nodes: np.ndarray
    nmax: int
    values: np.ndarray
    t_window: tuple = None
    omega: TorusSubset = None
    component_mask: np.ndarray = None
    # optional exact evaluator t -> (2*nmax+1, m) coefficients; when set it
    # supersedes interpolation (moment/transport controls are analytic in t)
    func: object = None
    # optional exact spatial evaluator (t, xs) -> (len(xs), m); synthesized
    # controls carry this so support checks do not see the mode truncation
    spatial: object = None

    def __post_init__(self):
        self.time_nodes = np.asarray(self.time_nodes, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if np.any(np.diff(self.time_nodes) <= 0):
            raise ValueError("time nodes must be strictly increasing")
        if self.values.shape[:2] != (len(self.time_nodes), 2 * self.nmax + 1):
            raise ValueError("values shape mismatch with nodes/nmax")

    @property
    def m(self):
        return self.values.shape[2]

    def at(self, t):
        """Linear interpolation between nodes, vectorized over all
        coefficients; controls are built smooth in t and sampled densely,
        and quadrature panels align with the nodes."""
        if self.func is not None:
            return np.asarray(self.func(t), dtype=complex)
        tn = self.time_nodes
        if t <= tn[0]:
            return self.values[0]
        if t >= tn[-1]:
            return self.values[-1]
        i = int(np.searchsorted(tn, t) - 1)
        lam = (t - tn[i]) / (tn[i + 1] - tn[i])
        return (1.0 - lam) * self.values[i] + lam * self.values[i + 1]


def mode_generator(sys: SystemMatrices, n: int, adjoint=False):
    """n^2 E(i/n) for n != 0, K for n = 0; conjugate-transposed when
    adjoint."""
    if n == 0:
        G = np.array(sys.K, dtype=complex)
    else:
        G = n * n * eval_symbol(sys, 1j / n)
    return G.conj().T if adjoint else G


def mode_propagator(sys: SystemMatrices, n: int, t: float, adjoint=False,
                    allow_negative=False):
    """exp(-t * generator(n)) via eigendecomposition when well conditioned,
    else scaling and squaring.

    Negative t is only legal on hyperbolic-branch data; callers must pass
    allow_negative=True to assert that.
    """
    if t < 0 and not allow_negative:
        raise ValueError("negative time needs hyperbolic-branch data "
                         "(pass allow_negative=True)")
    G = mode_generator(sys, n, adjoint=adjoint)
    w, V = np.linalg.eig(G)
    if np.linalg.cond(V) < EIG_COND_MAX:
        arg = -w * t
        if np.max(arg.real) > 700.0:
            raise OverflowError(
                f"propagator overflow at mode {n}, t = {t}")
        return (V * np.exp(arg)) @ np.linalg.inv(V)
    return scipy.linalg.expm(-t * G)


def _gl_nodes(a, b, order=GL_ORDER):
    x, w = np.polynomial.legendre.leggauss(order)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def _mask_coeffs(coeffs, nmax, omega: TorusSubset):
    """Multiply a coefficient array by 1_omega: synthesize on a 4*nmax
    grid, mask, re-analyze, truncate back to nmax."""
    ngrid = max(4 * nmax, 64)
    xs = TWO_PI * np.arange(ngrid) / ngrid
    ns = np.arange(-nmax, nmax + 1)
    vals = kernels.synthesize(coeffs, ns, xs)
    vals = vals * omega.indicator(xs)[:, None]
    return analyze_grid(vals, xs, nmax)


def evolve(sys: SystemMatrices, f0: FourierState, u: ControlSignal = None,
           T: float = 1.0, return_trajectory=False, sample_times=None,
           apply_mask=True):
    """Exact per-mode evolution with Duhamel source term.

    The control is masked by 1_omega (when its support metadata carries an
    omega and apply_mask is set) and mapped through M before entering the
    mode ODEs.  Duhamel integrals use Gauss-Legendre panels between
    control time nodes.
    """
    nmax = f0.nmax
    d = sys.d
    if u is not None:
        if u.time_nodes[0] > 1e-12 or u.time_nodes[-1] < T - 1e-12:
            raise ValueError("control nodes do not cover [0, T]")
        if u.nmax != nmax:
            raise ValueError("control truncation differs from state")

    # precompute masked, M-mapped source coefficients at quadrature nodes
    taus, wts = [], []
    if u is not None:
        edges = np.unique(np.clip(u.time_nodes, 0.0, T))
        if edges[-1] < T:
            edges = np.append(edges, T)
        for a, b in zip(edges[:-1], edges[1:]):
            x, w = _gl_nodes(a, b)
            taus.extend(x)
            wts.extend(w)
        taus = np.array(taus)
        wts = np.array(wts)
        src = np.empty((len(taus), 2 * nmax + 1, d), dtype=complex)
        for i, tau in enumerate(taus):
            uc = u.at(tau)
            if apply_mask and u.omega is not None:
                uc = _mask_coeffs(uc, nmax, u.omega)
            src[i] = uc @ sys.M.T

    if sample_times is None:
        sample_times = [T] if not return_trajectory else list(
            np.linspace(0.0, T, 33))
    sample_times = np.asarray(sample_times, dtype=float)

    states = [FourierState.zeros(nmax, d) for _ in sample_times]
    for n in range(-nmax, nmax + 1):
        G = mode_generator(sys, n)
        w, V = np.linalg.eig(G)
        use_eig = np.linalg.cond(V) < EIG_COND_MAX
        Vinv = np.linalg.inv(V) if use_eig else None

        def prop(dt):
            if dt == 0.0:
                return np.eye(d)
            if use_eig:
                return (V * np.exp(-w * dt)) @ Vinv
            return scipy.linalg.expm(-dt * G)

        f0n = f0.get(n)
        if u is not None and use_eig:
            stil = src[:, n + nmax, :] @ Vinv.T  # (Q, d) in eigen coords
        for k, t in enumerate(sample_times):
            acc = prop(t) @ f0n
            if u is not None:
                sel = taus <= t + 1e-14
                if use_eig:
                    decay = np.exp(-np.outer(t - taus[sel], w))
                    acc = acc + V @ np.sum(
                        wts[sel, None] * decay * stil[sel], axis=0)
                else:
                    for tau, wt, s in zip(taus[sel], wts[sel], src[sel]):
                        acc = acc + wt * (prop(t - tau) @ s[n + nmax])
            states[k].set(n, acc)
    if return_trajectory:
        return sample_times, states
    return states[-1]


def evolve_adjoint(sys: SystemMatrices, g0: FourierState, T: float,
                   sample_times=None, return_trajectory=False):
    """Homogeneous adjoint evolution: ghat(n, t) = e^{-t n^2 E(i/n)*} ghat0(n)."""
    nmax = g0.nmax
    if sample_times is None:
        sample_times = [T] if not return_trajectory else list(
            np.linspace(0.0, T, 33))
    sample_times = np.asarray(sample_times, dtype=float)
    states = [FourierState.zeros(nmax, sys.d) for _ in sample_times]
    for n in range(-nmax, nmax + 1):
        g0n = g0.get(n)
        for k, t in enumerate(sample_times):
            states[k].set(n, mode_propagator(sys, n, t, adjoint=True) @ g0n)
    if return_trajectory:
        return sample_times, states
    return states[-1]


def decompose(state: FourierState, branches: dict, n0: int):
    """Split into (low, parabolic, hyperbolic) parts.

    Low keeps |n| <= n0 untouched; for n0 < |n| <= nmax the parabolic
    part carries Pp(i/n) fhat(n) and the hyperbolic part Ph(i/n) fhat(n).
    The three parts sum back to the input exactly.
    """
    low = FourierState.zeros(state.nmax, state.d)
    par = FourierState.zeros(state.nmax, state.d)
    hyp = FourierState.zeros(state.nmax, state.d)
    for n in range(-state.nmax, state.nmax + 1):
        v = state.get(n)
        if abs(n) <= n0:
            low.set(n, v)
        else:
            if n not in branches:
                raise KeyError(f"branch table missing frequency {n}")
            br = branches[n]
            par.set(n, br.Pp @ v)
            hyp.set(n, br.Ph @ v)
    return low, par, hyp


def project_branch(state: FourierState, branches: dict, n0: int,
                   which="p", nband=None):
    """Projection onto the parabolic ("p") or hyperbolic ("h") part,
    optionally restricted to n0 < |n| <= nband."""
    out = FourierState.zeros(state.nmax, state.d)
    hi = state.nmax if nband is None else min(nband, state.nmax)
    for n in range(-hi, hi + 1):
        if abs(n) <= n0:
            continue
        br = branches[n]
        P = br.Pp if which == "p" else br.Ph
        out.set(n, P @ state.get(n))
    return out


def project_low(state: FourierState, n0: int):
    out = FourierState.zeros(state.nmax, state.d)
    for n in range(-min(n0, state.nmax), min(n0, state.nmax) + 1):
        out.set(n, state.get(n))
    return out


def sobolev_norm(state: FourierState, s: float) -> float:
    """(sum_n (1+n^2)^s |fhat(n)|^2)^(1/2), with the 2 pi factor at s=0
    left out (this is the plain coefficient-weighted norm; multiply by
    sqrt(2 pi) for the L2 convention)."""
    ns = state.modes
    w = (1.0 + ns.astype(float) ** 2) ** s
    return float(np.sqrt(np.sum(w[:, None] * np.abs(state.coeffs) ** 2)))


def h_minus1_tail_norm(state: FourierState, n0: int) -> float:
    """The high-frequency H^-1 surrogate (sum_{|n|>n0} |fhat(n)|^2 / n^2)^(1/2)."""
    ns = state.modes
    sel = np.abs(ns) > n0
    w = 1.0 / ns[sel].astype(float) ** 2
    return float(np.sqrt(np.sum(w[:, None] * np.abs(state.coeffs[sel]) ** 2)))


def windowed_l2_norm(times, states, window, omega: TorusSubset,
                     ngrid=None) -> float:
    """L2 norm over (time window) x omega: spatial synthesis on a uniform
    grid of >= 4*nmax points, composite trapezoid in time."""
    times = np.asarray(times, dtype=float)
    nmax = states[0].nmax
    if ngrid is None:
        ngrid = max(4 * nmax, 64)
    if ngrid < 2 * nmax:
        raise ValueError(f"grid of {ngrid} points under Nyquist "
                         f"(need >= {2 * nmax})")
    xs = TWO_PI * np.arange(ngrid) / ngrid
    ind = omega.indicator(xs)
    t0, t1 = window
    sel = (times >= t0 - 1e-14) & (times <= t1 + 1e-14)
    ts = times[sel]
    if len(ts) < 2:
        raise ValueError("trajectory too sparse over the window")
    vals = []
    for st in [s for s, keep in zip(states, sel) if keep]:
        v = kernels.synthesize(st.coeffs, st.modes, xs)
        vals.append(float(np.sum(ind * np.sum(np.abs(v) ** 2, axis=1)))
                    * TWO_PI / ngrid)
    return float(np.sqrt(np.trapezoid(vals, ts)))
