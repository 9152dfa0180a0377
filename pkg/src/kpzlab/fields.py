"""Macroscopic fields on the ring.

Everything here is built around the density fluctuation field

    Y_t(G) = n^{-1/2} sum_x (eta_t(x) - rho) G(x/n)

and its exact Dynkin decomposition Y_t = Y_0 + I_t + A_t + M_t, where

    I_t  = int_0^t (1/(2 sqrt n)) sum_x tau_x h(eta_s) lap_n G(x) ds
    A_t  = int_0^t n^{1/2-theta}  sum_x [tau_x f(eta_s) - psi(rho)] grad_n G(x) ds
    f    = (a/2) c(eta) (eta(1) - eta(0))^2

with h the gradient witness of the rate model.  M is defined by subtraction,
so the decomposition holds bit-exactly at every sample time and the
martingale property of M is something the tests can falsify.  Its predictable
quadratic variation is

    QV_t = int_0^t (1/n) sum_x tau_x g_n(eta_s) (grad_n G(x))^2 ds,
    g_n  = c(eta) [p eta(0)(1-eta(1)) + q eta(1)(1-eta(0))].

Centering of observables happens in the local-function tables (f - psi(rho),
h - phi(rho)), not by trusting that sum grad_n G = 0 cancels in floats.

The current/height layer uses the bond counters J_t(x) and

    theta_t(x) = theta_t(0) - Y_t(1_{(0,x]}),
    theta_t(0) = n^{-1/2} (J_t(0) - E[J_t(0)]),

with the exact stationary mean E[J_t(0)] = t n^2 E_rho[current function].
Pairings <theta*_t, G> are computed through the prefix-integral calculus
(T0, the discrete integral Lambda_n, logistic cutoff), which on the ring is
an exact lattice identity rather than an approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import (
    Configuration,
    WindowFunction,
    eval_all,
    eval_local,
    grand_canonical_mean,
    psi_polynomial,
)
from .dynamics import BlockObservable, LocalObservable, Params, SimResult
from .ensembles import psi_canonical_table


# ---------------------------------------------------------------------------
# test functions on the discrete torus


def _wrapped_coordinates(n: int, ell: float) -> np.ndarray:
    """Positions x/n for x = 0..L-1, wrapped into [-ell/2, ell/2)."""
    L = int(round(ell * n))
    x = np.arange(L) / n
    return (x + ell / 2.0) % ell - ell / 2.0


@dataclass
class TestFunction:
    """Samples G(x/n) indexed by absolute lattice site x on the ring.

    The macroscopic coordinate of site x is x/n mod ell; builders that need
    a function centered at the origin (cutoffs, logistic, bumps) sample it
    on the fundamental domain [-ell/2, ell/2).
    """

    __test__ = False  # keep pytest from collecting this as a test class

    n: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size % self.n != 0:
            raise ValueError("need one sample per site of a ring with L = ell*n")

    @property
    def L(self) -> int:
        return self.values.size

    @property
    def ell(self) -> int:
        return self.L // self.n

    @classmethod
    def from_function(cls, g, n: int, ell: int, domain: str = "centered") -> "TestFunction":
        """Sample g at the site positions.

        domain="centered" evaluates g on [-ell/2, ell/2) (functions pinned at
        the origin); domain="torus" evaluates on [0, ell).
        """
        if domain == "centered":
            u = _wrapped_coordinates(n, ell)
        elif domain == "torus":
            u = np.arange(ell * n) / n
        else:
            raise ValueError(f"unknown domain {domain!r}")
        return cls(n, np.array([float(g(ui)) for ui in u]))

    @classmethod
    def from_samples(cls, values, n: int) -> "TestFunction":
        return cls(n, np.asarray(values, dtype=np.float64))

    # -- discrete calculus --------------------------------------------------

    @property
    def grad(self) -> np.ndarray:
        """grad_n G(x) = n [G((x+1)/n) - G(x/n)], indexed by bond x."""
        return self.n * (np.roll(self.values, -1) - self.values)

    @property
    def lap(self) -> np.ndarray:
        """lap_n G(x) = n^2 [G((x+1)/n) + G((x-1)/n) - 2 G(x/n)]."""
        v = self.values
        return self.n ** 2 * (np.roll(v, -1) + np.roll(v, 1) - 2.0 * v)

    def seminorm1(self) -> float:
        """(1/n) sum_x (grad_n G)^2, the discrete homogeneous H^1 energy."""
        g = self.grad
        return float(g @ g) / self.n

    def l2sq(self) -> float:
        """(1/n) sum_x G(x/n)^2, the discrete squared L^2 norm."""
        return float(self.values @ self.values) / self.n

    def l2norm(self) -> float:
        return math.sqrt(self.l2sq())

    def integral(self) -> float:
        """Lambda_n(G) = (1/n) sum_x G(x/n)."""
        return float(self.values.sum()) / self.n

    # -- prefix-integral calculus --------------------------------------------

    def domain_order(self) -> np.ndarray:
        """Absolute site indices listed from coordinate -ell/2 upward."""
        L = self.L
        return np.r_[L - L // 2:L, 0:L - L // 2]

    @property
    def wrap_bond(self) -> int:
        """The bond crossing the fundamental-domain seam."""
        return self.L - self.L // 2 - 1

    def prefix_integral(self) -> "TestFunction":
        """T0 G(y) = (1/n) sum_{x < y} G(x/n), x running over the domain.

        The prefix starts at the left edge of the fundamental domain, so for
        G supported near the origin this is the discrete (int_{-inf}^y G).
        """
        order = self.domain_order()
        acc = np.zeros(self.L)
        acc[order] = np.concatenate([[0.0], np.cumsum(self.values[order])[:-1]]) / self.n
        return TestFunction(self.n, acc)

    def decaying_prefix(self) -> "TestFunction":
        """T G = T0 G - Lambda_n(G) * logistic, which decays on both tails."""
        f0 = logistic_function(self.n, self.ell)
        return TestFunction(self.n, self.prefix_integral().values
                            - self.integral() * f0.values)

    def support_fraction(self, atol: float = 1e-12) -> float:
        scale = np.abs(self.values).max()
        if scale == 0.0:
            return 0.0
        return float(np.count_nonzero(np.abs(self.values) > atol * scale)) / self.L


def logistic_function(n: int, ell: int) -> TestFunction:
    """(1 + e^{-x})^{-1} sampled on the fundamental domain."""
    return TestFunction(n, 1.0 / (1.0 + np.exp(-_wrapped_coordinates(n, ell))))


def bump_function(n: int, ell: int, lo: float = 0.0, hi: float = 1.0,
                  normalized: bool = True) -> TestFunction:
    """Compactly supported bump exp{-1/(u(1-u))} on (lo, hi), u the unit rescale.

    With normalized=True the discrete integral Lambda_n is exactly 1.
    """
    if not -ell / 2 <= lo < hi <= ell / 2:
        raise ValueError("bump support must sit inside the fundamental domain")
    u = (_wrapped_coordinates(n, ell) - lo) / (hi - lo)
    vals = np.zeros(n * ell)
    inside = (u > 0.0) & (u < 1.0)
    ui = u[inside]
    vals[inside] = np.exp(-1.0 / (ui * (1.0 - ui)))
    G = TestFunction(n, vals)
    if normalized:
        lam = G.integral()
        if lam <= 0.0:
            raise ValueError("bump support contains no lattice site")
        G = TestFunction(n, vals / lam)
    return G


def ramp_cutoff(l: float, params: Params) -> TestFunction:
    """G_l(x) = 1_{(0,inf)}(x) (1 - x/l)^+, l in macroscopic units.

    The ramp covers l*n lattice sites, so its discrete energy (excluding the
    origin jump that carries the current channel) is 1/l.  The ramp must not
    wrap: l < ell required.
    """
    if l <= 0:
        raise ValueError("cutoff scale l must be positive")
    if l >= params.ell:
        raise ValueError(f"ramp of length l={l} does not fit on a ring of length ell={params.ell}")
    x = np.arange(params.L) / params.n
    vals = np.where(x > 0, np.clip(1.0 - x / l, 0.0, None), 0.0)
    return TestFunction(params.n, vals)


# ---------------------------------------------------------------------------
# pointwise field evaluations


def eval_Y(eta: Configuration, G: TestFunction, rho: float, n: int | None = None,
           frame_shift: float = 0.0) -> float:
    """Y(G) = n^{-1/2} sum_x (eta(x) - rho) G(x/n - frame_shift).

    frame_shift must be a multiple of 1/n (the lattice can only shift by
    whole sites).
    """
    if n is not None and n != G.n:
        raise ValueError(f"n={n} does not match the test function (n={G.n})")
    n = G.n
    if eta.L != G.L:
        raise ValueError(f"configuration has {eta.L} sites, test function {G.L}")
    vals = G.values
    if frame_shift != 0.0:
        m = frame_shift * n
        if abs(m - round(m)) > 1e-9 * max(1.0, abs(m)):
            raise ValueError("frame_shift must be a multiple of 1/n")
        vals = np.roll(vals, int(round(m)))
    return float((eta.eta - rho) @ vals) / math.sqrt(n)


def smoothed_square(eta: Configuration, x: int, eps: float, rho: float, n: int) -> float:
    """n (block density over (x, x+eps*n] - rho)^2.

    Equals Y(i_eps(x/n))^2 for the rescaled block indicator i_eps; the
    identity is exact only when eps*n is a whole number of sites, so
    fractional eps*n is rejected along with eps*n < 1.
    """
    m = eps * n
    if m < 1.0 - 1e-9:
        raise ValueError(f"eps*n = {m:.6g} < 1: block smaller than one site")
    k = int(round(m))
    if abs(m - k) > 1e-9 * max(1.0, m):
        raise ValueError(f"eps*n = {m:.6g} is not a whole number of sites")
    count = sum(eta[y] for y in range(x + 1, x + k + 1))
    return n * (count / k - rho) ** 2


def _drift_local_function(params: Params, frame: str = "static"):
    """The centered A-field integrand density and the psi derivatives.

    Returns (f_centered, psi0, psi1, psi2) with f = (a/2) c (eta(1)-eta(0))^2.
    frame="static" requires psi'(rho) = 0; frame="galilean" additionally
    subtracts the linear part psi'(rho)(eta(0)-rho), which is what observing
    the drift field in the co-moving frame amounts to.
    """
    model = params.model
    f = model.drift_function() * (model.a / 2.0)
    poly = psi_polynomial(f)
    rho = params.rho
    psi0 = float(poly(rho))
    psi1 = float(poly.deriv(1)(rho))
    psi2 = float(poly.deriv(2)(rho))
    scale = max(1.0, float(np.abs(f.table).max()))
    if frame == "static":
        if abs(psi1) > 1e-9 * scale:
            raise ValueError(
                f"psi'(rho) = {psi1:.6g} != 0 at rho = {rho}: the drift field needs "
                "the co-moving frame; pass frame='galilean' (or replay the event log "
                "with drift_series_galilean)")
        fc = f - psi0
    elif frame == "galilean":
        fc = f - psi0 - (WindowFunction.site(0) - rho) * psi1
    else:
        raise ValueError(f"unknown frame {frame!r}")
    return fc, psi0, psi1, psi2


def drift_integrand(eta: Configuration, G: TestFunction, params: Params,
                    frame: str = "static", frame_shift: float = 0.0) -> float:
    """A-field integrand n^{1/2-theta} sum_x [tau_x f - psi(rho)] grad_n G(x)."""
    fc, _, _, _ = _drift_local_function(params, frame)
    grad = G.grad
    if frame_shift != 0.0:
        m = frame_shift * G.n
        if abs(m - round(m)) > 1e-9 * max(1.0, abs(m)):
            raise ValueError("frame_shift must be a multiple of 1/n")
        grad = np.roll(grad, int(round(m)))
    scale = params.n ** (0.5 - params.model.theta)
    return scale * float(eval_all(fc, eta) @ grad)


def block_field_integrand(eta: Configuration, G: TestFunction, k: int,
                          params: Params) -> float:
    """Block-averaged A-field integrand: sum_{x in kZ} k Psi_c(k, m_x) H_x^k.

    Blocks are (x, x+k] and H_x^k is the block average of grad_n G over the
    same bonds, following the one-block decomposition literally; Psi_c is the
    canonical expectation of the centered f, taken from the exact
    falling-factorial calculus.
    """
    L, n = params.L, params.n
    if L % k != 0:
        raise ValueError(f"block size k={k} does not divide L={L}")
    fc, _, _, _ = _drift_local_function(params, "static")
    psi_tab = psi_canonical_table(fc, k)
    scale = n ** (0.5 - params.model.theta)
    total = 0.0
    vals = G.values
    for x in range(0, L, k):
        m = sum(eta[y] for y in range(x + 1, x + k + 1))
        # k H_x^k = sum of grad over bonds x+1..x+k = n (G(x+k+1) - G(x+1))
        kH = n * (vals[(x + k + 1) % L] - vals[(x + 1) % L])
        total += psi_tab[m] * kH
    return scale * total


def quad_field_increment(eta: Configuration, G: TestFunction, eps: float,
                         rho: float, n: int, psi2: float) -> float:
    """(psi2/2) sum_{x in eps n Z} n (block density - rho)^2 (G(x+eps) - G(x)).

    The Wick constant chi/(eps n) is omitted: the block weights G(x+eps)-G(x)
    sum to zero on the ring, so subtracting it changes nothing here.
    """
    m = eps * n
    k = int(round(m))
    if k < 1 or abs(m - k) > 1e-9 * max(1.0, m):
        raise ValueError(f"eps*n = {m:.6g} must be a whole number of sites >= 1")
    L = G.L
    if L % k != 0:
        raise ValueError(f"eps*n = {k} does not divide L = {L}")
    total = 0.0
    for x in range(0, L, k):
        total += smoothed_square(eta, x, eps, rho, n) * (G.values[(x + k) % L] - G.values[x])
    return 0.5 * psi2 * total


# ---------------------------------------------------------------------------
# kernel observable builders


def y_observable(G: TestFunction, params: Params, tag: str = "G") -> LocalObservable:
    f = WindowFunction(0, 0, np.array([-params.rho, 1.0 - params.rho]))
    return LocalObservable(f"Y[{tag}]", f, G.values / math.sqrt(params.n))


def drift_observable(G: TestFunction, params: Params, tag: str = "G",
                     frame: str = "static") -> LocalObservable:
    fc, _, _, _ = _drift_local_function(params, frame)
    w = G.grad * params.n ** (0.5 - params.model.theta)
    return LocalObservable(f"A[{tag}]", fc, w)


def decomposition_observables(G: TestFunction, params: Params, tag: str = "G",
                              frame: str = "static") -> list:
    """The four kernel observables behind a FieldSeries: Y, I-, A-, QV-integrands."""
    model = params.model
    if model.h is None:
        raise ValueError("martingale decomposition needs a gradient witness h on the rate model")
    n = params.n
    h_c = model.h - model.phi(params.rho)
    g_n = model.activity_function(params.p, params.q)
    return [
        y_observable(G, params, tag),
        LocalObservable(f"I[{tag}]", h_c, G.lap / (2.0 * math.sqrt(n))),
        drift_observable(G, params, tag, frame),
        LocalObservable(f"QV[{tag}]", g_n, G.grad ** 2 / n),
    ]


def block_field_observable(G: TestFunction, k: int, params: Params,
                           tag: str = "G") -> BlockObservable:
    """A^{n,k} integrand as a block observable on the kernel blocks [jk, (j+1)k).

    One site to the left of the analytical blocks (x, x+k]; under the
    translation-invariant stationary law this is the same field.  The
    telescoped weight identity k H_j = n (G((j+1)k/n) - G(jk/n)) is exact.
    """
    L, n = params.L, params.n
    if L % k != 0:
        raise ValueError(f"block size k={k} does not divide L={L}")
    fc, _, _, _ = _drift_local_function(params, "static")
    psi_tab = psi_canonical_table(fc, k)
    scale = n ** (0.5 - params.model.theta)
    values = scale * k * psi_tab
    j = np.arange(L // k)
    weights = (n / k) * (G.values[((j + 1) * k) % L] - G.values[j * k])
    return BlockObservable(f"Ablk{k}[{tag}]", k, values, weights)


def quad_field_observable(G: TestFunction, eps: float, params: Params,
                          tag: str = "G") -> BlockObservable:
    """Quadratic-field integrand as a block observable on blocks [jk, (j+1)k).

    values[m] = n^{1/2-theta} (psi''/2) n (m/k - rho)^2, weights G(x+eps)-G(x).
    Aligned with block_field_observable so their difference isolates the
    second-order equivalence-of-ensembles residual.
    """
    n, L = params.n, params.L
    m = eps * n
    k = int(round(m))
    if k < 1 or abs(m - k) > 1e-9 * max(1.0, m):
        raise ValueError(f"eps*n = {m:.6g} must be a whole number of sites >= 1")
    if L % k != 0:
        raise ValueError(f"eps*n = {k} does not divide L = {L}")
    _, _, _, psi2 = _drift_local_function(params, "static")
    scale = n ** (0.5 - params.model.theta)
    counts = np.arange(k + 1)
    values = scale * 0.5 * psi2 * n * (counts / k - params.rho) ** 2
    j = np.arange(L // k)
    weights = G.values[((j + 1) * k) % L] - G.values[j * k]
    return BlockObservable(f"Aquad{k}[{tag}]", k, values, weights)


# ---------------------------------------------------------------------------
# series extraction


@dataclass
class FieldSeries:
    """One test function's field trajectories at the sample times."""

    sample_times: np.ndarray
    Y: np.ndarray
    I: np.ndarray
    A: np.ndarray
    M: np.ndarray
    QV: np.ndarray
    Y0: float
    tag: str = "G"
    J0: np.ndarray | None = None
    theta0: np.ndarray | None = None


def martingale_decompose(result: SimResult, G: TestFunction, params: Params,
                         tag: str = "G") -> FieldSeries:
    """Assemble the exact decomposition from a measured run.

    The run must have been driven with decomposition_observables(G, ..., tag).
    M is the Dynkin residual with pinned accumulation order ((Y-Y0)-I)-A.
    Asserts the two deterministic pathwise facts: QV nondecreasing and
    |QV_t - QV_s| <= eps0^{-1} ||G||_{1,n}^2 |t-s|.
    """
    try:
        Y = result.values[f"Y[{tag}]"]
        I = result.integrals[f"I[{tag}]"]
        A = result.integrals[f"A[{tag}]"]
        QV = result.integrals[f"QV[{tag}]"]
    except KeyError as e:
        raise KeyError(f"run was not measured with decomposition observables for tag {tag!r}: {e}")
    Y0 = eval_Y(result.eta0, G, params.rho)
    M = ((Y - Y0) - I) - A
    ts = result.sample_times
    scale = max(1.0, float(np.abs(QV).max()))
    dQV = np.diff(np.concatenate([[0.0], QV]))
    if dQV.min() < -1e-9 * scale:
        raise AssertionError(f"quadratic variation decreased by {-dQV.min():.3g}")
    bound = G.seminorm1() / params.model.epsilon0
    dt = np.diff(np.concatenate([[0.0], ts]))
    slack = 1e-9 * max(1.0, bound * max(float(ts[-1]), 1.0))
    if np.any(dQV > bound * dt + slack):
        worst = float((dQV - bound * dt).max())
        raise AssertionError(f"quadratic variation rate exceeds eps0^-1 ||G||^2 by {worst:.3g}")
    return FieldSeries(sample_times=ts, Y=Y, I=I, A=A, M=M, QV=QV, Y0=Y0, tag=tag)


def attach_current(series: FieldSeries, result: SimResult, params: Params) -> FieldSeries:
    h = current_and_height(result, params)
    series.J0 = h.J[:, 0]
    series.theta0 = h.theta0
    return series


def write_series_csv(path, series: FieldSeries):
    """Per-replica CSV (t, Y, I, A, M, QV, J0, theta0), 17 significant digits."""
    cols = [series.sample_times, series.Y, series.I, series.A, series.M, series.QV]
    names = ["t", "Y", "I", "A", "M", "QV"]
    if series.J0 is not None:
        cols += [series.J0, series.theta0]
        names += ["J0", "theta0"]
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*cols):
            fh.write(",".join("%.17g" % v for v in row) + "\n")


# ---------------------------------------------------------------------------
# currents and heights


def mean_current_rate(params: Params) -> float:
    """E_rho[n^2 (j_right - j_left)] per bond, exact under stationarity."""
    j = params.model.current_function(params.p, params.q)
    return params.n ** 2 * grand_canonical_mean(j, params.rho)


@dataclass
class HeightSeries:
    sample_times: np.ndarray
    bonds: tuple
    J: np.ndarray            # (times, bonds) net crossings
    theta0: np.ndarray
    mean_correction: np.ndarray


def current_and_height(result: SimResult, params: Params, bonds=(0,)) -> HeightSeries:
    """Net currents at marked bonds and the centered current field theta0."""
    if result.j_snaps is None:
        raise ValueError("run was measured without record_currents=True")
    ts = result.sample_times
    mean = mean_current_rate(params) * ts
    J = result.j_snaps[:, list(bonds)].astype(np.float64)
    theta0 = (result.j_snaps[:, 0] - mean) / math.sqrt(params.n)
    return HeightSeries(sample_times=ts, bonds=tuple(bonds), J=J,
                        theta0=theta0, mean_correction=mean)


def height_profile(result: SimResult, params: Params, index: int) -> np.ndarray:
    """h_t(x) for x = 0..L-1 at sample time index: h(0) = J(0), eta = -grad h."""
    if result.eta_snaps is None or result.j_snaps is None:
        raise ValueError("height profile needs record_eta and record_currents")
    eta = result.eta_snaps[index].astype(np.float64)
    h0 = float(result.j_snaps[index, 0])
    # h(x) = J(0) - sum_{y=1}^{x} eta(y)
    h = h0 - np.concatenate([[0.0], np.cumsum(eta[1:])])
    return h


def _indicator_pairings(eta_row: np.ndarray, rho: float, n: int) -> np.ndarray:
    """Y(1_{(0,x]}) for every x, signed so that x<0 means -Y(1_{(x,0]})."""
    L = eta_row.size
    c = (eta_row - rho) / math.sqrt(n)
    order = np.r_[L - L // 2:L, 0:L - L // 2]
    Q = np.zeros(L)
    Q[order] = np.cumsum(c[order])
    return Q - Q[0]


@dataclass
class PairingSeries:
    sample_times: np.ndarray
    pairing: np.ndarray       # <theta*_t, G> via the prefix-integral identity
    direct: np.ndarray        # the literal lattice sum (1/n) sum theta* G
    y_star_T: np.ndarray      # Y*_t(T G)
    f0_channel: np.ndarray | None   # (pairing - Y*(TG)) / Lambda_n(G)
    theta0: np.ndarray
    theta_wrap: np.ndarray
    lambda_n: float


def interface_pairing(result: SimResult, G: TestFunction, params: Params) -> PairingSeries:
    """<theta*_t, G> through the exact ring identity and the literal sum.

    Identity: <theta*_t, G> = Y*_t(T0 G) + Lambda_n(G) theta_t(x_wrap), with
    x_wrap the bond at the fundamental-domain seam.  The T-channel splits
    T0 G = T G + Lambda_n(G) logistic, and (pairing - Y*(TG))/Lambda_n is a
    G-independent process (the current channel).  Exact on the ring; the
    continuum reading needs supp G inside a half-ring, which is enforced.
    """
    if result.eta_snaps is None or result.j_snaps is None:
        raise ValueError("interface pairing needs record_eta and record_currents")
    if G.support_fraction() > 0.5:
        raise ValueError("finite-volume: test function support exceeds half the ring")
    n, L = params.n, params.L
    ts = result.sample_times
    lam = G.integral()
    T0 = G.prefix_integral()
    TG = G.decaying_prefix()
    mean = mean_current_rate(params) * ts
    sqn = math.sqrt(n)

    eta0 = result.eta0.eta.astype(np.float64)
    Q0 = _indicator_pairings(eta0, params.rho, n)
    wrap = G.wrap_bond

    npts = ts.size
    pairing = np.zeros(npts)
    direct = np.zeros(npts)
    y_star_T = np.zeros(npts)
    theta0 = np.zeros(npts)
    theta_wrap = np.zeros(npts)
    for i in range(npts):
        deta = result.eta_snaps[i].astype(np.float64) - eta0
        th0 = (result.j_snaps[i, 0] - mean[i]) / sqn
        thw = (result.j_snaps[i, wrap] - mean[i]) / sqn
        y_star = lambda w: float(deta @ w) / sqn
        pairing[i] = y_star(T0.values) + lam * thw
        y_star_T[i] = y_star(TG.values)
        Qt = _indicator_pairings(result.eta_snaps[i].astype(np.float64), params.rho, n)
        theta_star = th0 - (Qt - Q0)
        direct[i] = float(theta_star @ G.values) / n
        theta0[i] = th0
        theta_wrap[i] = thw
    f0_channel = None
    if abs(lam) > 1e-12 * max(1.0, np.abs(G.values).max()):
        f0_channel = (pairing - y_star_T) / lam
    return PairingSeries(sample_times=ts, pairing=pairing, direct=direct,
                         y_star_T=y_star_T, f0_channel=f0_channel,
                         theta0=theta0, theta_wrap=theta_wrap, lambda_n=lam)


# ---------------------------------------------------------------------------
# co-moving frame replay


def drift_series_galilean(eta0: Configuration, events: np.ndarray, G: TestFunction,
                          params: Params, sample_times) -> np.ndarray:
    """A-field time integral in the co-moving frame, replayed from an event log.

    The frame travels at v = n^{1-theta} psi'(rho), so the weight profile
    grad_n G shifts by one site whenever n v s crosses an integer; between
    shifts the integrand is piecewise constant in time and the integral is
    exact.  Cost is O((events + shifts) * L): verification tool, not a
    production path.
    """
    fc, _, psi1, _ = _drift_local_function(params, "galilean")
    n, L = params.n, params.L
    v = n ** (1.0 - params.model.theta) * psi1
    scale = n ** (0.5 - params.model.theta)
    sample_times = np.asarray(sample_times, dtype=np.float64)
    shifts_total = abs(n * v) * float(sample_times[-1])
    if (len(events) + shifts_total) * L > 5e8:
        raise ValueError("frame replay too large; shrink the run or the ring")
    grad = G.grad
    eta = eta0.eta.copy()

    def field(shift: int) -> float:
        w = np.roll(grad, shift % L)
        cfg = Configuration(eta)
        return scale * float(eval_all(fc, cfg) @ w)

    out = np.zeros(sample_times.size)
    acc = 0.0
    t = 0.0
    shift = 0
    i_ev = 0
    i_s = 0
    val = field(0)

    def advance_to(t_target):
        # integrate up to t_target, stepping the frame shift whenever
        # n*v*s crosses the next integer (shift tracks floor/ceil of n*v*t)
        nonlocal acc, t, shift, val
        if v == 0.0:
            acc += val * (t_target - t)
            t = t_target
            return
        while True:
            u_next = shift + 1 if v > 0 else shift - 1
            t_cross = u_next / (n * v)
            if t_cross <= t or t_cross >= t_target:
                acc += val * (t_target - t)
                t = t_target
                return
            acc += val * (t_cross - t)
            t = t_cross
            shift = u_next
            val = field(shift)

    while i_s < sample_times.size:
        t_next_sample = sample_times[i_s]
        t_next_event = events["t"][i_ev] if i_ev < len(events) else np.inf
        if t_next_sample <= t_next_event:
            advance_to(t_next_sample)
            out[i_s] = acc
            i_s += 1
        else:
            advance_to(t_next_event)
            b = int(events["bond"][i_ev])
            eta[b], eta[(b + 1) % L] = eta[(b + 1) % L], eta[b]
            val = field(shift)
            i_ev += 1
    return out
