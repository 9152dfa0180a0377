"""Exact canonical-ensemble calculus and sector spectral gaps.

Canonical expectations on k sites with m particles are computed from the
monomial decomposition: by exchangeability a degree-d monomial has
E_{k,m}[prod eta] = prod_{i<d} (m-i)/(k-i), so every local function reduces
to a short sum of falling-factorial ratios.  This gives, with no sampling
error, the second-order equivalence-of-ensembles residual

    R(k, m) = Psi(k, m/k) - psi(m/k) + x(1-x)/(2k) psi''(x),  x = m/k,

whose size is O(k^-2), and the centered canonical moment bounds (O(k^-2p)
and O(k^-3)) as exact binomial sums.  An exact rational mode (Fraction) is
available for k <= 64 as the oracle path.

Sector generators act on {configurations of m particles on the open box
1..k} with symmetric exchanges on the interior bonds at rate c_x(eta); sites
outside the box read as empty when a rate window overhangs the boundary.
The spectral gap comes from a dense symmetric eigensolve.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import stats

from .lattice import MAX_WINDOW, RateModel, WindowFunction, grand_canonical_mean, monomial_decompose, psi_polynomial

EXACT_MODE_MAX_K = 64
SECTOR_MAX_DIM = 10_000


def _check_fits(f: WindowFunction, k: int):
    if f.width > k:
        raise ValueError(f"window of width {f.width} does not fit in a box of k={k} sites")


def psi_canonical(f: WindowFunction, k: int, m: int, exact: bool = False):
    """E[f | m particles on k sites], by exchangeable monomial reduction.

    With exact=True, returns a Fraction computed in rational arithmetic
    (allowed for k <= 64); otherwise a float.
    """
    _check_fits(f, k)
    if not 0 <= m <= k:
        raise ValueError(f"m={m} outside [0, k={k}]")
    if exact:
        if k > EXACT_MODE_MAX_K:
            raise ValueError(f"exact rational mode limited to k <= {EXACT_MODE_MAX_K}, got {k}")
        dec = monomial_decompose(f, exact=True)
        total = Fraction(dec.constant)
        for coef, sites in dec.terms:
            factor = Fraction(1)
            for i in range(len(sites)):
                factor *= Fraction(m - i, k - i)
                if factor == 0:
                    break
            total += coef * factor
        return total
    return float(psi_canonical_table(f, k)[m])


def psi_canonical_table(f: WindowFunction, k: int) -> np.ndarray:
    """Vector of Psi(k, m/k) = E[f | m on k] for m = 0..k (float path)."""
    _check_fits(f, k)
    dec = monomial_decompose(f)
    m = np.arange(k + 1, dtype=np.float64)
    out = np.full(k + 1, float(dec.constant))
    max_d = max((len(s) for _, s in dec.terms), default=0)
    if max_d:
        factors = np.ones((max_d + 1, k + 1))
        for i in range(max_d):
            factors[i + 1] = factors[i] * (m - i) / (k - i)
        for coef, sites in dec.terms:
            out += float(coef) * factors[len(sites)]
    return out


@dataclass
class ExpansionResidual:
    """Second-order equivalence-of-ensembles residual over a sector range."""

    k: int
    residuals: np.ndarray  # indexed by m = 0..k
    max_abs: float


def expansion_residual(f: WindowFunction, k: int) -> ExpansionResidual:
    """R(k, m) = Psi(k, m/k) - psi(m/k) + x(1-x)/(2k) psi''(x) for all m."""
    psi = psi_polynomial(f)
    psi2 = psi.deriv(2)
    x = np.arange(k + 1, dtype=np.float64) / k
    res = psi_canonical_table(f, k) - psi(x) + x * (1.0 - x) / (2.0 * k) * psi2(x)
    return ExpansionResidual(k=k, residuals=res, max_abs=float(np.abs(res).max()))


@dataclass
class MomentBounds:
    """Exact binomial-sum moments of the centered canonical expectation."""

    k: int
    p: int
    rho: float
    moment2p: float           # E[Psi(k, eta^k)^(2p)], O(k^-2p)
    residual_moment2: float   # E[(Psi - psi''(rho)/2 ((eta^k-rho)^2 - chi/k))^2], O(k^-3)

    @property
    def moment2p_scaled(self) -> float:
        return self.k ** (2 * self.p) * self.moment2p

    @property
    def residual_moment2_scaled(self) -> float:
        return self.k ** 3 * self.residual_moment2


def canonical_moment_bounds(f: WindowFunction, rho: float, k: int, p: int = 1) -> MomentBounds:
    """Centered canonical moments under the Binomial(k, rho) particle number.

    Requires psi(rho) = psi'(rho) = 0; recenter f with the lattice calculus
    first (f - psi(rho) - psi'(rho)(eta(x) - rho)) if it does not.
    """
    _check_fits(f, k)
    if p < 1:
        raise ValueError("order p must be >= 1")
    scale = max(1.0, float(np.abs(f.table).max()))
    psi0 = grand_canonical_mean(f, rho)
    psi1 = grand_canonical_mean(f, rho, deriv=1)
    if abs(psi0) > 1e-12 * scale:
        raise ValueError(f"psi(rho)={psi0:.3e} is not zero; recenter f before calling")
    if abs(psi1) > 1e-12 * scale:
        raise ValueError(f"psi'(rho)={psi1:.3e} is not zero; recenter f before calling")
    psi2 = grand_canonical_mean(f, rho, deriv=2)
    m = np.arange(k + 1)
    pmf = stats.binom.pmf(m, k, rho)
    vals = psi_canonical_table(f, k)
    x = m / k
    chi = rho * (1.0 - rho)
    moment2p = float(math.fsum(pmf * vals ** (2 * p)))
    resid = vals - 0.5 * psi2 * ((x - rho) ** 2 - chi / k)
    residual_moment2 = float(math.fsum(pmf * resid ** 2))
    return MomentBounds(k=k, p=p, rho=rho, moment2p=moment2p, residual_moment2=residual_moment2)


# ---------------------------------------------------------------------------
# sector generators and spectral gaps

def sector_configurations(k: int, m: int) -> list:
    """All occupation bitmasks of m particles on sites 0..k-1 (site i = bit i)."""
    configs = []
    for occ in itertools.combinations(range(k), m):
        mask = 0
        for s in occ:
            mask |= 1 << s
        configs.append(mask)
    return configs


def _boxed_rate(c: WindowFunction, cfg: int, x: int, k: int) -> float:
    # c evaluated at bond (x, x+1) of the box 0..k-1, reading 0 outside
    idx = 0
    for b in range(c.width):
        s = x + c.lo + b
        if 0 <= s < k and (cfg >> s) & 1:
            idx |= 1 << b
    return float(c.table[idx])


def sector_generator(model: RateModel, k: int, m: int) -> np.ndarray:
    """Minus the symmetric sector generator, a dense PSD matrix.

    Exchanges on interior bonds x = 0..k-2 at rate c_x(eta); the matrix is
    symmetric because c is invariant under exchanging the bond occupations.
    """
    dim = math.comb(k, m)
    if dim > SECTOR_MAX_DIM:
        raise ValueError(f"sector dimension C({k},{m}) = {dim} exceeds {SECTOR_MAX_DIM}")
    configs = sector_configurations(k, m)
    index = {cfg: i for i, cfg in enumerate(configs)}
    M = np.zeros((dim, dim))
    for i, cfg in enumerate(configs):
        for x in range(k - 1):
            b0 = (cfg >> x) & 1
            b1 = (cfg >> (x + 1)) & 1
            if b0 == b1:
                continue
            rate = _boxed_rate(model.c, cfg, x, k)
            j = index[cfg ^ (1 << x) ^ (1 << (x + 1))]
            M[i, i] += rate
            M[i, j] -= rate
    return M


def spectral_gap(model: RateModel, k: int, m: int) -> float:
    """Spectral gap of the symmetric sector dynamics on m particles in 1..k."""
    if not 0 <= m <= k:
        raise ValueError(f"m={m} outside [0, k={k}]")
    if math.comb(k, m) == 1:
        return math.inf
    w = np.linalg.eigvalsh(sector_generator(model, k, m))
    return float(w[1])


# ---------------------------------------------------------------------------
# table emission (consumed by the CLI)

def write_residual_table(path, f: WindowFunction, ks, rho=None):
    """CSV with columns k,m,psi,residual,bound_ratio plus a JSON sidecar.

    psi is the canonical expectation, residual the second-order expansion
    residual at (k, m), bound_ratio = k^2 * residual.  The sidecar records
    the table of f and rho.  Floats are written with 17 significant digits.
    """
    import json
    from pathlib import Path

    path = Path(path)
    lines = ["k,m,psi,residual,bound_ratio"]
    for k in ks:
        vals = psi_canonical_table(f, k)
        res = expansion_residual(f, k).residuals
        for m in range(k + 1):
            lines.append("%d,%d,%.17g,%.17g,%.17g" % (k, m, vals[m], res[m], k * k * res[m]))
    path.write_text("\n".join(lines) + "\n")
    sidecar = {"f": json.loads(f.to_json()), "rho": rho, "ks": [int(k) for k in ks]}
    path.with_suffix(".sidecar.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return path
