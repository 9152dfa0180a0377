"""Ring configurations, local functions on binary windows, and rate models.

The state space is {0,1}^L on a periodic ring.  A local function is stored as
a dense table over the 2^w occupation patterns of an integer window
[lo, hi], w = hi - lo + 1 <= 16, with the leftmost site as least significant
bit.  Everything downstream (exact ensemble calculus, event-driven dynamics,
field integrands) consumes these tables, so this module also carries the
exact polynomial calculus: Moebius decomposition into monomials
f = sum_A coef_A prod_{x in A} eta(x), whose Bernoulli(rho) product mean is
psi(rho) = sum_A coef_A rho^{|A|}.

A rate model is a local jump rate c together with an ellipticity constant
eps0 <= c <= 1/eps0, invariance under exchanging the occupations of sites 0
and 1, and (when available) a gradient witness h satisfying the exact local
identity c(eta) (eta(1) - eta(0)) = h(tau_1 eta) - h(eta).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

MAX_WINDOW = 16


# ---------------------------------------------------------------------------
# configurations and sampling

@dataclass
class Configuration:
    """Occupation variables eta in {0,1}^L on a periodic ring."""

    eta: np.ndarray

    def __post_init__(self):
        self.eta = np.ascontiguousarray(self.eta, dtype=np.int8)
        if self.eta.ndim != 1 or self.eta.shape[0] < 2:
            raise ValueError("configuration must be a 1d array with L >= 2")
        if not np.all((self.eta == 0) | (self.eta == 1)):
            raise ValueError("occupations must be 0 or 1")

    @property
    def L(self) -> int:
        return self.eta.shape[0]

    def __getitem__(self, x: int) -> int:
        return int(self.eta[x % self.L])

    def count(self) -> int:
        return int(self.eta.sum())

    def density(self) -> float:
        return self.count() / self.L

    def copy(self) -> "Configuration":
        return Configuration(self.eta.copy())


def sample_grand_canonical(L: int, rho: float, rng: np.random.Generator) -> Configuration:
    """Draw eta ~ product Bernoulli(rho) on the ring of L sites."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"density rho={rho} outside [0, 1]")
    return Configuration((rng.random(L) < rho).astype(np.int8))


def sample_canonical(L: int, m: int, rng: np.random.Generator) -> Configuration:
    """Draw eta uniformly on the sector with exactly m particles on L sites."""
    if not 0 <= m <= L:
        raise ValueError(f"particle number m={m} outside [0, L={L}]")
    eta = np.zeros(L, dtype=np.int8)
    eta[:m] = 1
    return Configuration(rng.permutation(eta))


# ---------------------------------------------------------------------------
# local functions

def _check_window(lo: int, hi: int):
    if lo > hi:
        raise ValueError(f"empty window [{lo}, {hi}]")
    if hi - lo + 1 > MAX_WINDOW:
        raise ValueError(f"window [{lo}, {hi}] wider than {MAX_WINDOW} sites")


@dataclass
class WindowFunction:
    """Local function of the occupations in the window [lo, hi].

    table[p] is the value on the pattern p whose bit b (LSB first) is the
    occupation of site lo + b.
    """

    lo: int
    hi: int
    table: np.ndarray

    def __post_init__(self):
        _check_window(self.lo, self.hi)
        self.table = np.ascontiguousarray(self.table, dtype=np.float64)
        if self.table.shape != (1 << self.width,):
            raise ValueError(
                f"table length {self.table.shape} does not match window "
                f"[{self.lo}, {self.hi}] (need {1 << self.width})")

    @property
    def width(self) -> int:
        return self.hi - self.lo + 1

    @property
    def sites(self) -> range:
        return range(self.lo, self.hi + 1)

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_callable(cls, lo: int, hi: int, fn) -> "WindowFunction":
        """Tabulate fn(bits), bits a tuple indexed by site lo..hi."""
        _check_window(lo, hi)
        w = hi - lo + 1
        table = np.empty(1 << w)
        for p in range(1 << w):
            bits = tuple((p >> b) & 1 for b in range(w))
            table[p] = fn(bits)
        return cls(lo, hi, table)

    @classmethod
    def constant(cls, value: float) -> "WindowFunction":
        return cls(0, 0, np.array([value, value]))

    @classmethod
    def site(cls, j: int) -> "WindowFunction":
        """The occupation variable eta(j)."""
        return cls(j, j, np.array([0.0, 1.0]))

    # -- algebra -----------------------------------------------------------

    def embed(self, lo: int, hi: int) -> "WindowFunction":
        """Same function on the enclosing window [lo, hi]."""
        if lo > self.lo or hi < self.hi:
            raise ValueError("embed target must contain the current window")
        w = hi - lo + 1
        table = np.empty(1 << w)
        shift = self.lo - lo
        mask = (1 << self.width) - 1
        for p in range(1 << w):
            table[p] = self.table[(p >> shift) & mask]
        return WindowFunction(lo, hi, table)

    def _binary(self, other, op) -> "WindowFunction":
        if np.isscalar(other):
            other = WindowFunction.constant(float(other))
        lo = min(self.lo, other.lo)
        hi = max(self.hi, other.hi)
        a = self.embed(lo, hi)
        b = other.embed(lo, hi)
        return WindowFunction(lo, hi, op(a.table, b.table))

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        if np.isscalar(other):
            return WindowFunction(self.lo, self.hi, self.table * float(other))
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def translate(self, j: int) -> "WindowFunction":
        """tau_j f, the function eta -> f(tau_j eta) with tau_j eta(x) = eta(x + j)."""
        return WindowFunction(self.lo + j, self.hi + j, self.table.copy())

    def trim(self, atol: float = 0.0) -> "WindowFunction":
        """Shrink the window to the sites the table actually depends on."""
        lo, hi, table = self.lo, self.hi, self.table
        w = hi - lo + 1
        keep = []
        for b in range(w):
            half = table.reshape(-1, 2, 1 << b)
            if np.abs(half[:, 0, :] - half[:, 1, :]).max() > atol:
                keep.append(b)
        if not keep:
            return WindowFunction(lo, lo, np.array([table[0], table[0]]))
        b0, b1 = keep[0], keep[-1]
        new_w = b1 - b0 + 1
        new = np.empty(1 << new_w)
        for p in range(1 << new_w):
            new[p] = table[p << b0]
        return WindowFunction(lo + b0, lo + b1, new)

    # -- serialization -----------------------------------------------------

    def to_json(self) -> str:
        # json floats use shortest round-trip repr, so the table survives
        # save/load bit for bit
        return json.dumps({"window": [self.lo, self.hi], "table": self.table.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "WindowFunction":
        obj = json.loads(text)
        lo, hi = obj["window"]
        return cls(int(lo), int(hi), np.array(obj["table"], dtype=np.float64))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


def eval_local(f: WindowFunction, cfg: Configuration, x: int) -> float:
    """Evaluate tau_x f on the ring, reading sites x+lo .. x+hi (wrapped)."""
    eta = cfg.eta
    L = eta.shape[0]
    if f.width > L:
        raise ValueError(f"window width {f.width} exceeds ring size {L}")
    idx = 0
    for b in range(f.width):
        if eta[(x + f.lo + b) % L]:
            idx |= 1 << b
    return float(f.table[idx])


def eval_all(f: WindowFunction, cfg: Configuration) -> np.ndarray:
    """Vector of tau_x f for every x on the ring."""
    eta = cfg.eta
    L = eta.shape[0]
    if f.width > L:
        raise ValueError(f"window width {f.width} exceeds ring size {L}")
    idx = np.zeros(L, dtype=np.int64)
    for b in range(f.width):
        idx |= np.roll(eta, -(f.lo + b)).astype(np.int64) << b
    return f.table[idx]


def swap_bond(cfg: Configuration, x: int) -> Configuration:
    """Configuration with the occupations of sites x and x+1 exchanged."""
    eta = cfg.eta.copy()
    L = eta.shape[0]
    xp = (x + 1) % L
    eta[x % L], eta[xp] = eta[xp], eta[x % L]
    return Configuration(eta)


# ---------------------------------------------------------------------------
# monomial calculus

@dataclass
class MonomialDecomposition:
    """f = constant + sum over terms (coef, sites) of coef * prod eta(site)."""

    lo: int
    hi: int
    constant: object
    terms: list  # list of (coef, tuple of sites), sites nonempty and sorted

    def degree_coefficients(self):
        """Coefficients of psi(rho) = E_rho[f] as a polynomial in rho."""
        coeffs = [0.0] * (self.hi - self.lo + 2)
        coeffs[0] = float(self.constant)
        for coef, sites in self.terms:
            coeffs[len(sites)] += float(coef)
        return np.array(coeffs)

    def reconstruct(self) -> WindowFunction:
        # accumulate in the coefficients' own arithmetic so the exact
        # (Fraction) mode round-trips the table bit for bit
        w = self.hi - self.lo + 1
        table = [self.constant] * (1 << w)
        for coef, sites in self.terms:
            mask = 0
            for s in sites:
                mask |= 1 << (s - self.lo)
            for p in range(1 << w):
                if p & mask == mask:
                    table[p] = table[p] + coef
        return WindowFunction(self.lo, self.hi, np.array([float(v) for v in table]))


def monomial_decompose(f: WindowFunction, exact: bool = False) -> MonomialDecomposition:
    """Moebius-invert the table into monomial coefficients.

    With exact=True the arithmetic runs in Fraction (the float table entries
    are taken at their exact binary values), otherwise in float64.  Cost is
    O(w 2^w) via the subset zeta transform.
    """
    w = f.width
    if exact:
        coef = [Fraction(v) for v in f.table.tolist()]
    else:
        coef = f.table.astype(np.float64).tolist()
    for b in range(w):
        bit = 1 << b
        for p in range(1 << w):
            if p & bit:
                coef[p] = coef[p] - coef[p ^ bit]
    terms = []
    for p in range(1, 1 << w):
        if coef[p] != 0:
            sites = tuple(f.lo + b for b in range(w) if (p >> b) & 1)
            terms.append((coef[p], sites))
    return MonomialDecomposition(f.lo, f.hi, coef[0], terms)


def psi_polynomial(f: WindowFunction) -> np.polynomial.Polynomial:
    """psi(rho) = E_{nu_rho}[f] as an exact polynomial in the density."""
    return np.polynomial.Polynomial(monomial_decompose(f).degree_coefficients())


def grand_canonical_mean(f: WindowFunction, rho: float, deriv: int = 0) -> float:
    """d^deriv/drho^deriv of psi(rho), evaluated by polynomial calculus."""
    poly = psi_polynomial(f)
    if deriv:
        poly = poly.deriv(deriv)
    return float(poly(rho))


# ---------------------------------------------------------------------------
# gradient witness search

def find_gradient_witness(c: WindowFunction, radius: int = 3):
    """Search for h on [-radius, radius] with c(eta)(eta(1)-eta(0)) = tau_1 h - h.

    The identity is linear in the table of h, so feasibility is decided by an
    exact least-squares solve over all occupation patterns of the joint
    window.  Returns the minimum-norm witness gauged to h(empty) = 0, or None
    when the residual shows the identity cannot hold at this radius.
    """
    lo = min(-radius, c.lo, 0)
    hi = max(radius + 1, c.hi, 1)
    W = hi - lo + 1
    if W > MAX_WINDOW:
        raise ValueError(f"joint window [{lo}, {hi}] wider than {MAX_WINDOW} sites")
    wh = 2 * radius + 1
    npat = 1 << W
    nh = 1 << wh

    def sub_index(p, wlo, width):
        # bits of the joint pattern restricted to [wlo, wlo+width)
        return (p >> (wlo - lo)) & ((1 << width) - 1)

    A = np.zeros((npat, nh))
    b = np.zeros(npat)
    for p in range(npat):
        e0 = (p >> (0 - lo)) & 1
        e1 = (p >> (1 - lo)) & 1
        b[p] = c.table[sub_index(p, c.lo, c.width)] * (e1 - e0)
        A[p, sub_index(p, 1 - radius, wh)] += 1.0   # tau_1 h reads sites 1-radius .. 1+radius
        A[p, sub_index(p, -radius, wh)] -= 1.0
    sol, _, _, _ = np.linalg.lstsq(A, b, rcond=None)
    residual = np.abs(A @ sol - b).max()
    scale = max(1.0, np.abs(c.table).max())
    if residual > 1e-9 * scale:
        return None
    table = sol - sol[0]
    table[np.abs(table) < 1e-9 * scale] = 0.0
    return WindowFunction(-radius, radius, table).trim(atol=1e-9 * scale)


# ---------------------------------------------------------------------------
# rate models

@dataclass
class RateModel:
    """Exchange rate c with ellipticity eps0, drift a, and scaling exponent theta.

    Validates on construction: eps0 <= c <= 1/eps0, invariance of c under
    exchanging the occupations of sites 0 and 1, and, when a gradient witness
    h is attached, the exact identity c(eta)(eta(1)-eta(0)) = tau_1 h - h
    over the joint window.
    """

    c: WindowFunction
    epsilon0: float
    h: WindowFunction = None
    a: float = 1.0
    theta: float = 0.5

    def __post_init__(self):
        if self.theta not in (0.5, 1.0):
            raise ValueError(f"scaling exponent theta={self.theta} not in {{0.5, 1.0}}")
        if not 0.0 < self.epsilon0 <= 1.0:
            raise ValueError(f"ellipticity constant eps0={self.epsilon0} outside (0, 1]")
        cmin, cmax = self.c.table.min(), self.c.table.max()
        if cmin < self.epsilon0 - 1e-12 or cmax > 1.0 / self.epsilon0 + 1e-12:
            raise ValueError(
                f"rate table range [{cmin}, {cmax}] violates ellipticity "
                f"[{self.epsilon0}, {1.0 / self.epsilon0}]")
        self._check_swap_invariance()
        if self.h is not None:
            self._check_gradient()

    def _check_swap_invariance(self):
        lo = min(self.c.lo, 0)
        hi = max(self.c.hi, 1)
        ext = self.c.embed(lo, hi)
        b0, b1 = -lo, 1 - lo
        for p in range(1 << ext.width):
            q = p
            bit0, bit1 = (p >> b0) & 1, (p >> b1) & 1
            if bit0 != bit1:
                q = p ^ (1 << b0) ^ (1 << b1)
            if ext.table[p] != ext.table[q]:
                raise ValueError("rate c is not invariant under exchanging sites 0 and 1")

    def _check_gradient(self):
        lhs = self.c * (WindowFunction.site(1) - WindowFunction.site(0))
        rhs = self.h.translate(1) - self.h
        diff = lhs - rhs
        err = np.abs(diff.table).max()
        if err > 1e-9 * max(1.0, np.abs(self.c.table).max()):
            raise ValueError(f"gradient witness fails the exchange identity (max error {err:g})")

    # -- derived local functions ------------------------------------------

    def drift_function(self) -> WindowFunction:
        """c(eta) (eta(1) - eta(0))^2, the local density of the asymmetric part."""
        d = WindowFunction.site(1) - WindowFunction.site(0)
        return self.c * d * d

    def activity_function(self, p: float, q: float) -> WindowFunction:
        """c(eta) (p eta(0)(1-eta(1)) + q eta(1)(1-eta(0))), the bond jump rate."""
        e0, e1 = WindowFunction.site(0), WindowFunction.site(1)
        one = WindowFunction.constant(1.0)
        return self.c * (p * (e0 * (one - e1)) + q * (e1 * (one - e0)))

    def current_function(self, p: float, q: float) -> WindowFunction:
        """c(eta) (p eta(0)(1-eta(1)) - q eta(1)(1-eta(0))), the net rightward rate."""
        e0, e1 = WindowFunction.site(0), WindowFunction.site(1)
        one = WindowFunction.constant(1.0)
        return self.c * (p * (e0 * (one - e1)) - q * (e1 * (one - e0)))

    # -- transport coefficients (exact polynomials in rho) -----------------

    def chi(self, rho: float) -> float:
        """Static compressibility of the Bernoulli marginal."""
        return rho * (1.0 - rho)

    def phi(self, rho: float, deriv: int = 0) -> float:
        """Mean of the gradient witness under nu_rho (diffusion coefficient phi')."""
        if self.h is None:
            raise ValueError("rate model has no gradient witness")
        return grand_canonical_mean(self.h, rho, deriv)

    def beta(self, rho: float, deriv: int = 0) -> float:
        """beta(rho) = chi(rho) * E_rho[c], mobility of the asymmetric part."""
        chi_poly = np.polynomial.Polynomial([0.0, 1.0, -1.0])
        poly = chi_poly * psi_polynomial(self.c)
        if deriv:
            poly = poly.deriv(deriv)
        return float(poly(rho))

    def velocity(self, rho: float) -> float:
        """Frame velocity v(rho) = a beta'(rho)."""
        return self.a * self.beta(rho, deriv=1)


def wasep(a: float = 1.0, theta: float = 0.5) -> RateModel:
    """Plain weakly asymmetric exclusion: c == 1, witness h = eta(0)."""
    c = WindowFunction.constant(1.0)
    h = WindowFunction.site(0)
    return RateModel(c=c, epsilon0=1.0, h=h, a=a, theta=theta)


def gradient_b(b: float, a: float = 1.0, theta: float = 0.5) -> RateModel:
    """Speed-change gradient model c_b(eta) = 1 + b (eta(-1) + eta(2)).

    Requires 1 + 2 b > 0 for ellipticity; the witness is
    h_b = eta(0) + b (eta(-1) eta(0) + eta(0) eta(1) - eta(-1) eta(1)).
    """
    if 1.0 + 2.0 * b <= 0.0:
        raise ValueError(f"b={b} breaks ellipticity (need 1 + 2b > 0)")
    c = WindowFunction.from_callable(-1, 2, lambda e: 1.0 + b * (e[0] + e[3]))
    h = WindowFunction.from_callable(
        -1, 1, lambda e: e[1] + b * (e[0] * e[1] + e[1] * e[2] - e[0] * e[2]))
    cmin, cmax = min(1.0, 1.0 + 2.0 * b), max(1.0, 1.0 + 2.0 * b)
    eps0 = min(cmin, 1.0 / cmax)
    return RateModel(c=c, epsilon0=eps0, h=h, a=a, theta=theta)
