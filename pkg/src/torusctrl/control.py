"""Constructive control synthesis.

Four mechanisms, combined by full_pipeline:

* transport_control: exact steering of the scalar transport equation
  through a space-time cut-off eta and the characteristic integrals Q_x;
* parabolic_moment_control: Gram-matrix moment solve nulling the
  parabolic-branch band n0 < |n| <= N at the end of a window;
* lebeau_robbiano: dyadic active/passive schedule of moment controls
  with dissipation absorbing the cost;
* hum_gramian_control: finite controllability Gramian on a declared
  target subspace (hyperbolic band or low modes).

Everything runs on the mode-truncated (Galerkin) system: states and
control coefficients live on |n| <= nmax.  Synthesized controls are
products of a smooth plateau cut-off rho2 supported in omega with
band-limited mode sums; their exact spatial form (available through
ControlSignal.spatial) vanishes outside omega identically, while the
stored coefficients are that control's band restriction.

Stage contributions are all expressed at the common final time: the
per-mode generators commute with the branch projections, so free
evolution never mixes the low/parabolic/hyperbolic blocks and only the
controls' spectral leakage couples them.  full_pipeline removes that
coupling with a joint dual-pairing solve over the three families.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .algebra import SystemMatrices, TorusSubset, TWO_PI
from .dynamics import (FourierState, ControlSignal, evolve, mode_generator,
                       project_branch, project_low, analyze_grid)

__all__ = [
    "MomentProblem", "LRSchedule", "cutoff_eta", "transport_control",
    "parabolic_moment_control", "lebeau_robbiano", "hum_gramian_control",
    "full_pipeline", "plateau_weight", "rho1", "smoothstep",
]


# ---------------------------------------------------------------- smooth bits

def _f_exp(u):
    """e^{-1/u} for u > 0, 0 otherwise (flat C-infinity junction at 0)."""
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape)
    pos = u > 1e-12
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def smoothstep(u):
    """C-infinity transition: 0 for u <= 0, 1 for u >= 1."""
    a = _f_exp(np.asarray(u, dtype=float))
    b = _f_exp(1.0 - np.asarray(u, dtype=float))
    return a / (a + b)


def window_fn(x, lo, hi, ramp):
    """Smooth window: 0 outside (lo, hi), 1 on (lo+ramp, hi-ramp)."""
    x = np.asarray(x, dtype=float)
    return smoothstep((x - lo) / ramp) * smoothstep((hi - x) / ramp)


def rho1(tau):
    """Symmetric C-infinity time profile on (0,1): e^{-1/tau} near 0,
    mirrored near 1, blended by a smooth partition on (1/4, 3/4)."""
    tau = np.asarray(tau, dtype=float)
    w = smoothstep((0.75 - tau) / 0.5)
    return _f_exp(tau) * w + _f_exp(1.0 - tau) * (1.0 - w)


@dataclass
class SpatialWeight:
    """Smooth plateau cut-off rho2: 1 on omegahat, 0 outside omega, with
    transitions filling the removed margins."""

    omega: TorusSubset
    omegahat: TorusSubset
    coeffs: np.ndarray  # Fourier coefficients, |n| <= bandwidth
    bandwidth: int

    def __call__(self, x):
        x = np.asarray(x, dtype=float) % TWO_PI
        out = np.zeros(x.shape)
        for (a, b), (ah, bh) in zip(self.omega.arcs, self.omegahat.arcs):
            ramp = ah - a
            for off in (0.0, TWO_PI, -TWO_PI):
                out = np.maximum(out, window_fn(x + off, a, b, ramp))
        return out

    def coeff(self, n):
        if abs(n) > self.bandwidth:
            return 0.0 + 0.0j
        return self.coeffs[n + self.bandwidth]


def plateau_weight(omega: TorusSubset, shrink=0.1,
                   bandwidth=256) -> SpatialWeight:
    """Build rho2 for omega; omegahat has each arc shrunk by `shrink` of
    its length per side."""
    omegahat = omega.shrunk(shrink)
    w = SpatialWeight(omega=omega, omegahat=omegahat,
                      coeffs=np.zeros(2 * bandwidth + 1, dtype=complex),
                      bandwidth=bandwidth)
    ngrid = max(16 * bandwidth, 4096)
    xs = TWO_PI * np.arange(ngrid) / ngrid
    vals = w(xs).astype(complex)[:, None]
    w.coeffs = analyze_grid(vals, xs, bandwidth)[:, 0]
    return w


# ------------------------------------------------------- transport (cut-off)

@dataclass
class CutoffEta:
    """Space-time cut-off eta on (delta, T'-delta) x (a+delta, b-delta)
    with its characteristic integrals Q_x = int_0^{T'} eta(s, x+mu s) ds."""

    a: float
    b: float
    Tprime: float
    mu: float
    delta: float
    min_Q: float = 0.0

    def eta(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float) % TWO_PI
        ramp_t = 0.25 * (self.Tprime - 2.0 * self.delta)
        wt = window_fn(t, self.delta, self.Tprime - self.delta, ramp_t)
        ramp_x = 0.25 * (self.b - self.a - 2.0 * self.delta)
        wx = np.zeros(x.shape)
        for off in (0.0, TWO_PI, -TWO_PI):
            wx = np.maximum(wx, window_fn(
                x + off, self.a + self.delta, self.b - self.delta, ramp_x))
        return wt * wx

    def _Q_exact(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        gx, gw = np.polynomial.legendre.leggauss(8)
        edges = np.linspace(0.0, self.Tprime, 81)
        out = np.zeros(x.shape)
        for a, b in zip(edges[:-1], edges[1:]):
            ts = 0.5 * (a + b) + 0.5 * (b - a) * gx
            ws = 0.5 * (b - a) * gw
            for t, wq in zip(ts, ws):
                out += wq * self.eta(t, x + self.mu * t)
        return out

    def Q(self, x):
        # Q is smooth on the ramp scale; a dense periodic spline replaces
        # the per-call time quadrature
        if getattr(self, "_Qspline", None) is None:
            from scipy.interpolate import CubicSpline
            ngrid = 4096
            xs = TWO_PI * np.arange(ngrid + 1) / ngrid
            self._Qspline = CubicSpline(xs, self._Q_exact(xs),
                                        bc_type="periodic")
        return self._Qspline(np.asarray(x, dtype=float) % TWO_PI)


def cutoff_eta(omega_arc, Tprime, mu, delta) -> CutoffEta:
    """Build eta for a single observation arc (a, b).

    Requires T' > (2 pi - (b-a)) / |mu| so every characteristic crosses
    the cut-off box; min_x |Q_x| is certified on a 720-point grid.
    """
    a, b = omega_arc
    if not 0 < b - a < TWO_PI:
        raise ValueError("need a single strict arc (a, b)")
    if mu == 0:
        raise ValueError("transport speed must be nonzero")
    need = (TWO_PI - (b - a)) / abs(mu)
    if Tprime <= need:
        raise ValueError(f"T' = {Tprime:.4f} too short: need > {need:.4f}")
    if 2.0 * delta >= min(Tprime, b - a):
        raise ValueError("delta too large for the box")
    eta = CutoffEta(a=a, b=b, Tprime=Tprime, mu=mu, delta=delta)
    xs = TWO_PI * np.arange(720) / 720
    eta.min_Q = float(np.min(np.abs(eta.Q(xs))))
    if eta.min_Q < 1e-8:
        raise ValueError(
            f"min |Q_x| = {eta.min_Q:.2e} too small; decrease delta")
    return eta


@dataclass
class TransportControl:
    """u(t, x) = eta(t, x) Q^{-1}_{x - mu t}
    (fT((x - mu t) + mu T') - f0(x - mu t)).

    Along the characteristic x = y + mu t the bracket is constant, so
    integrating eta/Q_y deposits exactly the required increment and
    d_t f + mu d_x f = u steers f0 to fT.
    """

    eta: CutoffEta
    f0: object
    fT: object
    mu: float
    Tprime: float

    def __call__(self, t, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        e = self.eta.eta(t, x)
        out = np.zeros(x.shape, dtype=complex)
        nz = e != 0.0
        if np.any(nz):
            y = x[nz] - self.mu * float(t)
            q = self.eta.Q(y)
            out[nz] = e[nz] / q * (
                np.asarray(self.fT(y + self.mu * self.Tprime), dtype=complex)
                - np.asarray(self.f0(y), dtype=complex))
        return out


def transport_control(f0, fT, mu, omega: TorusSubset, Tprime,
                      eta: CutoffEta) -> TransportControl:
    """Exact control for d_t f + mu d_x f = u 1_omega reaching f(T') = fT.

    f0, fT are callables on the torus (scalar; apply componentwise for
    vector data).  The control vanishes outside the eta box.
    """
    if eta is None:
        raise ValueError("eta/Q tables missing: build them with cutoff_eta")
    return TransportControl(eta=eta, f0=f0, fT=fT, mu=mu, Tprime=Tprime)


# ------------------------------------------- shared reduced-dual machinery

def build_E2(sys: SystemMatrices, branches: dict, n: int) -> np.ndarray:
    """Reduced parabolic dual generator at mode n:
    E2(n) = D* - (i/n) A22* + (1/n^2) K22*
            - ((i/n) A12* - (1/n^2) K12*) G(i/n).

    The range of Pp(i/n)* is the graph {(G(i/n) phi2, phi2)} and
    E(i/n)* acts on it through E2(n) in the phi2 coordinate.  The
    conjugate transposes reduce to plain transposes for real systems.
    """
    z = 1j / n
    G = branches[n].G
    return (sys.D.conj().T - z * sys.A22.conj().T
            + (1.0 / n ** 2) * sys.K22.conj().T
            - (z * sys.A12.conj().T - (1.0 / n ** 2) * sys.K12.conj().T) @ G)


def observation_matrix(sys: SystemMatrices, branches: dict, n: int):
    """C(n) = M1* G(i/n) + M2*: the reduced parabolic dual observation,
    mapping the phi2 coordinate to the control space (M* applied to the
    graph vector (G phi2, phi2))."""
    d1 = sys.d1
    Mh = sys.M.conj().T
    return Mh[:, :d1] @ branches[n].G + Mh[:, d1:]


def _eig_cache(mats):
    """Eigendecompositions keyed by mode; defective or nearly defective
    generators (e.g. Jordan blocks at branch collisions) fall back to
    dense expm evaluation."""
    out = {}
    for key, mat in mats.items():
        mat = np.asarray(mat, dtype=complex)
        w, V = np.linalg.eig(mat)
        if np.linalg.cond(V) < 1e6:
            out[key] = ("eig", w, V, np.linalg.inv(V))
        else:
            out[key] = ("expm", mat)
    return out


def _expm_cached(cache, key, scale):
    entry = cache[key]
    if entry[0] == "eig":
        _, w, V, Vi = entry
        return (V * np.exp(-scale * w)) @ Vi
    return scipy.linalg.expm(-scale * entry[1])


def _dual_traj(cache, key, scales, vec):
    """Rows e^{-scales[q] * mat} @ vec for a cached generator."""
    entry = cache[key]
    if entry[0] == "eig":
        _, w, V, Vi = entry
        return np.einsum("ij,qj->qi", V,
                         np.exp(-np.outer(scales, w)) * (Vi @ vec))
    return np.array([scipy.linalg.expm(-s * entry[1]) @ vec
                     for s in scales])


def _expm_traj(cache, key, scales):
    """Stack of e^{-scales[q] * mat} for a cached generator: (Q, d, d)."""
    entry = cache[key]
    if entry[0] == "eig":
        _, w, V, Vi = entry
        return np.einsum("ij,qj,jk->qik", V,
                         np.exp(-np.outer(scales, w)), Vi)
    return np.array([scipy.linalg.expm(-s * entry[1]) for s in scales])


def _gl_grid(t0, t1, panels, order=8):
    gx, gw = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(t0, t1, panels + 1)
    taus, wts = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        taus.extend(0.5 * (a + b) + 0.5 * (b - a) * gx)
        wts.extend(0.5 * (b - a) * gw)
    return np.array(taus), np.array(wts), edges


# ------------------------------------------------------------- moment method

@dataclass
class MomentProblem:
    N: int
    T: float
    modes: np.ndarray
    E2: dict
    gram: np.ndarray
    rhs: np.ndarray
    weight: SpatialWeight
    cond: float
    min_eig: float
    cond_scaled: float = np.nan


def parabolic_moment_control(sys: SystemMatrices, branches: dict,
                             f0p: FourierState, T: float, N: int,
                             omega: TorusSubset, n0: int,
                             weight: SpatialWeight = None,
                             target_pairings: dict = None,
                             time_profile="interior",
                             time_panels=96, cond_max=1e14):
    """Moment-method control nulling the parabolic band n0 < |n| <= N.

    Solves A V = F with blocks
    A_{n,k} = rho2hat(n-k) int_0^T rho1(s/T) e^{-s n^2 E2(n)*} C(n)*
              C(k) e^{-s k^2 E2(k)} ds,
    F_n = -e^{-n^2 T E2(n)*} (G(i/n)* f01hat(n) + f02hat(n)),
    and emits u(t, x) = rho1((T-t)/T) rho2(x)
    sum_k C(k) e^{-k^2 (T-t) E2(k)} V_k e^{ikx}.
    A is the Gram matrix of the family sqrt(rho1 rho2) C(k)
    e^{-s k^2 E2(k)} e^{ikx}, hence Hermitian positive (semi)definite.

    target_pairings (n -> d2 vector) overrides F_n to inject a
    prescribed set of parabolic dual pairings at the window end instead
    of nulling f0p; time_profile="terminal" then drops the end-of-window
    vanishing of rho1 (a correction that must act right up to the final
    time would otherwise pay an e^{c N sqrt(T)} amplification).
    Returns (ControlSignal, MomentProblem).
    """
    d1, d2, m = sys.d1, sys.d2, sys.m
    if not n0 < N:
        raise ValueError("need n0 < N")
    if weight is None:
        weight = plateau_weight(omega)
    modes = np.array([n for n in range(-N, N + 1) if abs(n) > n0])
    E2 = {int(n): build_E2(sys, branches, int(n)) for n in modes}
    C = {int(n): observation_matrix(sys, branches, int(n)) for n in modes}
    cache = _eig_cache(E2)
    nm = len(modes)

    if time_profile == "interior":
        def profile(s):
            return rho1(s / T)
    elif time_profile == "terminal":
        def profile(s):
            # s is time-to-go: full strength at the window end, smooth
            # vanishing toward its start
            return smoothstep(2.0 * (1.0 - np.asarray(s) / T))
    else:
        raise ValueError(f"unknown time_profile {time_profile!r}")

    svals, swts, _ = _gl_grid(0.0, T, time_panels, order=10)
    prof = profile(svals)

    # fwd[n][q] = C(n) e^{-s_q n^2 E2(n)}: shape (Q, m, d2)
    fwd = {}
    for n in modes:
        n = int(n)
        es = _expm_traj(cache, n, svals * n * n)
        fwd[n] = np.einsum("ij,qjk->qik", C[n], es)

    gram = np.zeros((nm * d2, nm * d2), dtype=complex)
    for i, n in enumerate(modes):
        n = int(n)
        An = fwd[n].conj().transpose(0, 2, 1)
        for j, k in enumerate(modes):
            k = int(k)
            s_fac = weight.coeff(n - k)
            if s_fac == 0.0:
                continue
            W = np.einsum("q,qij,qjk->ik", swts * prof, An, fwd[k])
            gram[i * d2:(i + 1) * d2, j * d2:(j + 1) * d2] = s_fac * W
    gram = 0.5 * (gram + gram.conj().T)

    rhs = np.zeros(nm * d2, dtype=complex)
    for i, n in enumerate(modes):
        n = int(n)
        if target_pairings is not None:
            rhs[i * d2:(i + 1) * d2] = target_pairings.get(
                n, np.zeros(d2, dtype=complex))
            continue
        fn = f0p.get(n)
        vec = branches[n].G.conj().T @ fn[:d1] + fn[d1:]
        EnT = _expm_cached(cache, n, T * n * n).conj().T
        rhs[i * d2:(i + 1) * d2] = -(EnT @ vec)

    eigs = np.linalg.eigvalsh(gram)
    min_eig = float(eigs[0])
    cond = float(eigs[-1] / max(eigs[0], 1e-300))
    # the solve runs in the diagonally normalized basis: the rho1 and
    # dissipation suppression spread the raw diagonal over many orders
    # of magnitude, but that is a per-row rescaling of the dual family
    # and says nothing about the correlation structure, which is what
    # limits the achievable accuracy
    dscale = np.sqrt(np.abs(np.diagonal(gram)).clip(1e-300))
    gram_scaled = gram / np.outer(dscale, dscale)
    eigs_s = np.linalg.eigvalsh(gram_scaled)
    cond_scaled = float(eigs_s[-1] / max(eigs_s[0], 1e-300))
    if not 0 < cond_scaled <= cond_max:
        raise np.linalg.LinAlgError(
            f"moment Gram condition {cond_scaled:.2e} beyond "
            f"{cond_max:.0e}; reduce N or enlarge T")
    Vsol = np.linalg.solve(gram_scaled, rhs / dscale) / dscale
    Vblocks = {int(n): Vsol[i * d2:(i + 1) * d2]
               for i, n in enumerate(modes)}

    nmax = f0p.nmax

    def emitted(t):
        """Per-mode control vectors w_k(t) in C^m before the cut-offs."""
        s = T - t
        if s < -1e-12 or s > T + 1e-12:
            return {}
        r = float(profile(np.clip(s, 0.0, T)))
        if r == 0.0:
            return {}
        return {int(k): r * (C[int(k)] @ (_expm_cached(
            cache, int(k), s * int(k) ** 2) @ Vblocks[int(k)]))
            for k in modes}

    def coeff_fn(t):
        out = np.zeros((2 * nmax + 1, m), dtype=complex)
        for k, v in emitted(t).items():
            lo = max(-nmax, k - weight.bandwidth)
            hi = min(nmax, k + weight.bandwidth)
            for nprime in range(lo, hi + 1):
                out[nprime + nmax, :] += weight.coeff(nprime - k) * v
        return out

    def spatial(t, xs):
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        out = np.zeros((len(xs), m), dtype=complex)
        vecs = emitted(t)
        if vecs:
            for k, v in vecs.items():
                out += np.exp(1j * k * xs)[:, None] * v[None, :]
            out *= weight(xs)[:, None]
        return out

    nodes = np.linspace(0.0, T, 129)
    vals = np.array([coeff_fn(t) for t in nodes])
    u = ControlSignal(time_nodes=nodes, nmax=nmax, values=vals,
                      t_window=(0.0, T), omega=omega,
                      func=coeff_fn, spatial=spatial)
    problem = MomentProblem(N=N, T=T, modes=modes, E2=E2, gram=gram,
                            rhs=rhs, weight=weight, cond=cond,
                            min_eig=min_eig, cond_scaled=cond_scaled)
    return u, problem


# ---------------------------------------------------------- Lebeau-Robbiano

@dataclass
class LRSchedule:
    T: float
    delta: float
    rho: float
    A_const: float
    stages: list  # (level, N_level, T_level, a_start)

    @classmethod
    def build(cls, T, delta, rho, nmax):
        if not 0 < delta < T / 2:
            raise ValueError("need 0 < delta < T/2")
        if not 0 < rho < 1:
            raise ValueError("need 0 < rho < 1")
        # full-series normalization 2 sum_{l>=1} A 2^{-rho l} = T - 2 delta
        s = 2.0 ** (-rho) / (1.0 - 2.0 ** (-rho))
        A = (T - 2.0 * delta) / (2.0 * s)
        stages = []
        a = delta
        level = 1
        while 2 ** level <= nmax:
            Tl = A * 2.0 ** (-rho * level)
            stages.append((level, 2 ** level, Tl, a))
            a += 2.0 * Tl
            level += 1
        if not stages:
            raise ValueError("nmax < 2: empty schedule")
        return cls(T=T, delta=delta, rho=rho, A_const=A, stages=stages)


def lebeau_robbiano(sys: SystemMatrices, branches: dict, f0p: FourierState,
                    T: float, delta: float, rho: float, nmax: int, n0: int,
                    omega: TorusSubset, weight: SpatialWeight = None):
    """Dyadic active/passive parabolic control on (0, T).

    Stage l solves the moment problem for the band n0 < |n| <= 2^l on a
    window of length T_l, then lets dissipation act for another T_l.
    The concatenated control vanishes outside (delta, T-delta) x omega.
    Returns (controls in global time, report with the stage norm chain
    and the final state).
    """
    if weight is None:
        weight = plateau_weight(omega)
    sched = LRSchedule.build(T, delta, rho, nmax)
    state = evolve(sys, f0p, None, delta)
    controls = []

    def pnorm(st):
        # the iteration lives on the parabolic branch; the controls also
        # deposit hyperbolic leakage, which is out of scope here and
        # shows up in the certificate's total norm instead
        return project_branch(st, branches, n0, "p").norm()

    norms = [pnorm(state)]
    stage_reports = []
    t_reached = delta
    for (level, Nl, Tl, a_start) in sched.stages:
        if Nl <= n0:
            state = evolve(sys, state, None, 2.0 * Tl)
            t_reached += 2.0 * Tl
            norms.append(pnorm(state))
            continue
        try:
            u, prob = parabolic_moment_control(
                sys, branches, state, Tl, min(Nl, nmax), omega, n0,
                weight=weight)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"stage {level} (N = {Nl}): {exc}") from exc
        controls.append(_shift_control(u, a_start))
        state = evolve(sys, state, u, Tl, apply_mask=False)
        state = evolve(sys, state, None, Tl)
        t_reached += 2.0 * Tl
        norms.append(pnorm(state))
        stage_reports.append({"level": level, "N": Nl, "T": Tl,
                              "cond": prob.cond,
                              "cond_scaled": prob.cond_scaled,
                              "min_eig": prob.min_eig,
                              "norm_after": norms[-1],
                              "total_norm": state.norm()})
    if T - t_reached > 1e-12:
        state = evolve(sys, state, None, T - t_reached)
    report = {
        "schedule": sched, "norms": norms, "stages": stage_reports,
        "final_state": state,
        "final_parabolic_norm": project_branch(state, branches, n0,
                                               "p").norm(),
    }
    return controls, report


def _shift_control(u: ControlSignal, t0: float) -> ControlSignal:
    func = spatial = None
    if u.func is not None:
        func = lambda t, _f=u.func, _t0=t0: _f(t - _t0)  # noqa: E731
    if u.spatial is not None:
        spatial = lambda t, xs, _f=u.spatial, _t0=t0: _f(t - _t0, xs)  # noqa: E731
    window = None
    if u.t_window is not None:
        window = (u.t_window[0] + t0, u.t_window[1] + t0)
    return ControlSignal(time_nodes=u.time_nodes + t0, nmax=u.nmax,
                         values=u.values, t_window=window, omega=u.omega,
                         component_mask=u.component_mask, func=func,
                         spatial=spatial)


# ------------------------------------------------------------- HUM Gramians

@dataclass
class DualBlock:
    """One family of dual vectors with its control window and channel mask.

    kind "full": entries (n, psi in C^d), observation
    M* e^{-(T-tau) gen(n)*} psi.  kind "parabolic": entries
    (n, phi2 in C^d2), observation C(n) e^{-(T-tau) n^2 E2(n)} phi2
    (the same object written in the graph coordinate of Ima Pp*).
    """

    kind: str
    entries: list
    window: tuple
    mask: np.ndarray
    time_panels: int = 32


@dataclass
class HUMReport:
    gram: np.ndarray
    eigs: np.ndarray
    cond: float
    energy: float
    target_dim: int


def _block_observations(sys, branches, block: DualBlock, T, taus):
    """Unmasked observations v_j(tau_q) in C^m: array (K, Q, m)."""
    m = sys.m
    out = np.zeros((len(block.entries), len(taus), m), dtype=complex)
    if block.kind == "full":
        gens = {}
        for n, _ in block.entries:
            if n not in gens:
                gens[n] = mode_generator(sys, n, adjoint=True)
        cache = _eig_cache(gens)
        Mh = sys.M.conj().T
        for j, (n, psi) in enumerate(block.entries):
            traj = _dual_traj(cache, n, T - taus, psi)
            out[j] = traj @ Mh.T
    elif block.kind == "parabolic":
        E2, C = {}, {}
        for n, _ in block.entries:
            if n not in E2:
                E2[n] = build_E2(sys, branches, n)
                C[n] = observation_matrix(sys, branches, n)
        cache = _eig_cache(E2)
        for j, (n, phi2) in enumerate(block.entries):
            traj = _dual_traj(cache, n, (T - taus) * n * n, phi2)
            out[j] = traj @ C[n].T
    else:
        raise ValueError(f"unknown dual kind {block.kind!r}")
    return out


def _pairings(sys, branches, block: DualBlock, state: FourierState):
    """c_j = <dual_j, fhat(n_j)> for each entry of the block."""
    d1 = sys.d1
    out = np.zeros(len(block.entries), dtype=complex)
    for j, (n, vec) in enumerate(block.entries):
        fn = state.get(n)
        if block.kind == "full":
            out[j] = np.vdot(vec, fn)
        else:
            out[j] = np.vdot(vec, branches[n].G.conj().T @ fn[:d1] + fn[d1:])
    return out


def _joint_solve(sys, branches, blocks, targets, T, weight, nmax, omega,
                 cond_max=1e14, refuse=True):
    """Choose controls u_b = rho2 sum_k lambda_k (mask v_k) e^{i n_k x}
    on the blocks' windows so the summed contribution at time T matches
    the prescribed dual pairings.

    The pairing matrix J_{jk} = rho2hat(n_j - n_k) int_{W_k} v_j* mask_k
    v_k dtau; for a single block it is the Gram matrix of the weighted
    observations (Hermitian positive semidefinite).
    """
    quad, obs_col = [], []
    for blk in blocks:
        taus, wts, edges = _gl_grid(*blk.window, blk.time_panels)
        quad.append((taus, wts, edges))
        obs_col.append(_block_observations(sys, branches, blk, T, taus))

    sizes = [len(b.entries) for b in blocks]
    offs = np.concatenate(([0], np.cumsum(sizes)))
    J = np.zeros((offs[-1], offs[-1]), dtype=complex)
    for bj, blk_col in enumerate(blocks):
        taus, wts, _ = quad[bj]
        Vc = obs_col[bj] * blk_col.mask[None, None, :]
        for bi, blk_row in enumerate(blocks):
            Vr = (obs_col[bj] if bi == bj
                  else _block_observations(sys, branches, blk_row, T, taus))
            tint = np.einsum("q,jqa,kqa->jk", wts, Vr.conj(), Vc)
            for j, (nj, _) in enumerate(blk_row.entries):
                for k, (nk, _) in enumerate(blk_col.entries):
                    J[offs[bi] + j, offs[bj] + k] = (
                        weight.coeff(nj - nk) * tint[j, k])

    c = np.concatenate(targets)
    eigs = np.linalg.eigvalsh(0.5 * (J + J.conj().T))
    # solve and refusal run in the diagonally normalized basis (the raw
    # diagonal range only reflects the per-entry dissipation scales)
    dscale = np.sqrt(np.abs(np.diagonal(J)).clip(1e-300))
    Js = J / np.outer(dscale, dscale)
    sv = np.linalg.svd(Js, compute_uv=False)
    cond = float(sv[0] / max(sv[-1], 1e-300))
    if refuse and not 0.0 < cond <= cond_max:
        raise np.linalg.LinAlgError(
            f"Gramian condition {cond:.2e}: target too high-dimensional "
            f"for this (T, omega)")
    lam = np.linalg.solve(Js, c / dscale) / dscale

    controls = [
        _emit_block(sys, branches, blk, lam[offs[b]:offs[b + 1]], T,
                    weight, nmax, omega, quad[b][2])
        for b, blk in enumerate(blocks)]
    return controls, J, lam, eigs, cond


def _emit_block(sys, branches, blk: DualBlock, lam, T, weight, nmax,
                omega, edges):
    m = sys.m
    t0, t1 = blk.window
    if blk.kind == "full":
        cache = _eig_cache({n: mode_generator(sys, n, adjoint=True)
                            for n, _ in blk.entries})
        Mh = sys.M.conj().T

        def obs(n, vec, t):
            return Mh @ (_expm_cached(cache, n, T - t) @ vec)
    else:
        cache = _eig_cache({n: build_E2(sys, branches, n)
                            for n, _ in blk.entries})
        C = {n: observation_matrix(sys, branches, n) for n, _ in blk.entries}

        def obs(n, vec, t):
            return C[n] @ (_expm_cached(cache, n, (T - t) * n * n) @ vec)

    def vecs(t):
        out = {}
        for (n, vec), lj in zip(blk.entries, lam):
            v = lj * (blk.mask * obs(n, vec, t))
            if n in out:
                out[n] += v
            else:
                out[n] = v
        return out

    def coeff_fn(t):
        out = np.zeros((2 * nmax + 1, m), dtype=complex)
        if t < t0 - 1e-12 or t > t1 + 1e-12:
            return out
        for k, v in vecs(t).items():
            lo = max(-nmax, k - weight.bandwidth)
            hi = min(nmax, k + weight.bandwidth)
            for nprime in range(lo, hi + 1):
                out[nprime + nmax, :] += weight.coeff(nprime - k) * v
        return out

    def spatial(t, xs):
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        out = np.zeros((len(xs), m), dtype=complex)
        if t < t0 - 1e-12 or t > t1 + 1e-12:
            return out
        for k, v in vecs(t).items():
            out += np.exp(1j * k * xs)[:, None] * v[None, :]
        return out * weight(xs)[:, None]

    nodes = np.asarray(edges, dtype=float)
    vals = np.array([coeff_fn(t) for t in nodes])
    return ControlSignal(time_nodes=nodes, nmax=nmax, values=vals,
                         t_window=(t0, t1), omega=omega,
                         component_mask=blk.mask, func=coeff_fn,
                         spatial=spatial)


def _target_entries(sys, branches, n0, nmax, target):
    """Dual entries for a declared target subspace.

    ("low",): canonical basis of C^d on |n| <= n0 (pairings zero iff the
    low block vanishes).  ("hyperbolic", nband): orthonormal basis of
    Ima Ph(i/n)* for n0 < |n| <= nband (pairings zero iff
    Ph(i/n) fhat(n) = 0).
    """
    kind = target[0]
    entries = []
    if kind == "low":
        eye = np.eye(sys.d, dtype=complex)
        for n in range(-n0, n0 + 1):
            for j in range(sys.d):
                entries.append((n, eye[:, j].copy()))
        return "full", entries
    if kind == "hyperbolic":
        nband = target[1] if len(target) > 1 else nmax
        for n in range(-nband, nband + 1):
            if abs(n) <= n0:
                continue
            U, s, _ = np.linalg.svd(branches[n].Ph.conj().T)
            for j in range(int(np.sum(s > 1e-8))):
                entries.append((n, U[:, j]))
        return "full", entries
    raise ValueError(f"unknown target kind {kind!r}")


def hum_gramian_control(sys: SystemMatrices, branches: dict, n0: int,
                        target, fstar: FourierState, T: float,
                        omega: TorusSubset, component_mask=None,
                        window=None, weight: SpatialWeight = None,
                        Tstar=None, time_panels=32, cond_max=1e14,
                        refuse=True):
    """Minimum-energy control whose contribution at time T has the same
    dual pairings as fstar on the declared target subspace.

    Solves the weighted controllability Gramian against
    c_j = <psi_j, fstar> and emits u = rho2 sum_k lambda_k (mask v_k)
    e^{i n_k x} on the window.  A hyperbolic-target window shorter than
    the minimal time is allowed but warned about: the Gramian is then
    expected near-singular (pass refuse=False to inspect it).
    """
    nmax = fstar.nmax
    if window is None:
        window = (0.0, T)
    if weight is None:
        weight = plateau_weight(omega)
    if (target[0] == "hyperbolic" and Tstar is not None
            and window[1] - window[0] <= Tstar):
        warnings.warn(
            f"window length {window[1] - window[0]:.3f} <= minimal time "
            f"{Tstar:.3f}: hyperbolic Gramian expected near-singular",
            stacklevel=2)
    mask = (np.ones(sys.m, dtype=bool) if component_mask is None
            else np.asarray(component_mask, dtype=bool))
    kind, entries = _target_entries(sys, branches, n0, nmax, target)
    blk = DualBlock(kind=kind, entries=entries, window=window, mask=mask,
                    time_panels=time_panels)
    targets = [_pairings(sys, branches, blk, fstar)]
    controls, J, lam, eigs, cond = _joint_solve(
        sys, branches, [blk], targets, T, weight, nmax, omega,
        cond_max=cond_max, refuse=refuse)
    report = HUMReport(gram=J, eigs=eigs, cond=cond,
                       energy=float(np.real(np.vdot(lam, targets[0]))),
                       target_dim=len(entries))
    return controls[0], report


# ------------------------------------------------------------- combination

def merge_controls(controls, nmax, m, T) -> ControlSignal:
    """Sum additive ControlSignals into one signal covering [0, T]."""
    items = [(u, u.t_window or (u.time_nodes[0], u.time_nodes[-1]))
             for u in controls]

    def coeff_fn(t):
        out = np.zeros((2 * nmax + 1, m), dtype=complex)
        for u, (a, b) in items:
            if a - 1e-12 <= t <= b + 1e-12:
                out += u.at(t)
        return out

    def spatial(t, xs):
        out = np.zeros((len(np.atleast_1d(xs)), m), dtype=complex)
        for u, (a, b) in items:
            if u.spatial is not None and a - 1e-12 <= t <= b + 1e-12:
                out += u.spatial(t, xs)
        return out

    edges = {0.0, T}
    for u, _ in items:
        edges.update(np.clip(u.time_nodes, 0.0, T).tolist())
    nodes = np.array(sorted(edges))
    nodes = nodes[np.concatenate(([True], np.diff(nodes) > 1e-13))]
    vals = np.array([coeff_fn(t) for t in nodes])
    return ControlSignal(time_nodes=nodes, nmax=nmax, values=vals,
                         t_window=(0.0, T), func=coeff_fn, spatial=spatial)


def full_pipeline(sys: SystemMatrices, branches: dict, n0: int,
                  f0: FourierState, T: float, Tprime: float,
                  omega: TorusSubset, Tstar: float = None,
                  lr_rho=0.5, lr_delta=None, max_sweeps=5, tol=1e-9,
                  hyperbolic_mask=None, parabolic_mask=None):
    """Compose the three control mechanisms into a null control on (0,T).

    First lebeau_robbiano on (T', T) kills the bulk of the parabolic
    part of the freely evolved data.  The remaining cross-coupling
    (every control leaks into every band through its omega cut-off) is
    removed by sweeps of a joint dual-pairing solve over three families:
    hyperbolic duals controlled on (0, T'), low modes and parabolic
    duals over a trailing window near T (the parabolic correction uses a
    terminal time profile there, so placing mass at high modes at time T
    costs only the natural 1/n^2 factor).  Certificate reports the sweep
    residual chain and the final relative norm.
    """
    if Tstar is not None and not (Tstar < Tprime < T):
        raise ValueError(
            f"need T* < T' < T, got T* = {Tstar}, T' = {Tprime}, T = {T}")
    nmax = f0.nmax
    d1, m = sys.d1, sys.m
    if hyperbolic_mask is None:
        hyperbolic_mask = (np.arange(m) < d1 if m == sys.d
                           else np.ones(m, dtype=bool))
    if parabolic_mask is None:
        parabolic_mask = (np.arange(m) >= d1 if m == sys.d
                          else np.ones(m, dtype=bool))
    weight = plateau_weight(omega)
    Tp = T - Tprime
    if lr_delta is None:
        lr_delta = Tp / 8.0
    Tlow = min(0.1 * T, Tp) / 2.0

    kind_h, entries_h = _target_entries(sys, branches, n0, nmax,
                                        ("hyperbolic", nmax))
    kind_0, entries_0 = _target_entries(sys, branches, n0, nmax, ("low",))
    eye2 = np.eye(sys.d2, dtype=complex)
    entries_p = [(n, eye2[:, j].copy())
                 for n in range(-nmax, nmax + 1) if abs(n) > n0
                 for j in range(sys.d2)]
    blocks = [
        DualBlock(kind=kind_h, entries=entries_h, window=(0.0, Tprime),
                  mask=np.asarray(hyperbolic_mask, dtype=bool)),
        DualBlock(kind=kind_0, entries=entries_0, window=(T - Tlow, T),
                  mask=np.ones(m, dtype=bool)),
        DualBlock(kind="parabolic", entries=entries_p,
                  window=(T - Tlow, T),
                  mask=np.asarray(parabolic_mask, dtype=bool)),
    ]

    controls = []
    sweep_log = []
    path = "lr+joint-sweeps"
    lr_report = None
    joint_cond = None
    f0norm = max(f0.norm(), 1e-300)
    for sweep in range(max_sweeps):
        u_now = merge_controls(controls, nmax, m, T) if controls else None
        fT = evolve(sys, f0, u_now, T, apply_mask=False)
        res = fT.norm() / f0norm
        sweep_log.append({"sweep": sweep, "relative_residual": res,
                          "h": project_branch(fT, branches, n0, "h").norm(),
                          "p": project_branch(fT, branches, n0, "p").norm(),
                          "low": project_low(fT, n0).norm()})
        if res <= tol:
            break
        if sweep >= 2 and res > 0.5 * sweep_log[-2]["relative_residual"]:
            path = "lr+joint-sweeps (stalled)"
            break
        if sweep == 0:
            f_mid = evolve(sys, f0, None, Tprime)
            fp_mid = project_branch(f_mid, branches, n0, "p")
            if fp_mid.norm() > 1e-12 * f0norm:
                lr_controls, lr_report = lebeau_robbiano(
                    sys, branches, fp_mid, Tp, lr_delta, lr_rho, nmax, n0,
                    omega, weight=weight)
                controls.extend(_shift_control(u, Tprime)
                                for u in lr_controls)
                continue
            # parabolic part already below the working precision at T':
            # go straight to the joint dual solve
        targets = [-_pairings(sys, branches, blk, fT) for blk in blocks]
        corr, J, lam, eigs, joint_cond = _joint_solve(
            sys, branches, blocks, targets, T, weight, nmax, omega)
        controls.extend(corr)

    u_total = merge_controls(controls, nmax, m, T) if controls else None
    fT = evolve(sys, f0, u_total, T, apply_mask=False)
    cert = {
        "path": path,
        "sweeps": sweep_log,
        "lr": lr_report,
        "joint_cond": joint_cond,
        "final_norm": fT.norm(),
        "relative": fT.norm() / f0norm,
        "final_state": fT,
    }
    return u_total, cert
