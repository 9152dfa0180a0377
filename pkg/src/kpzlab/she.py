"""Mild-solution stochastic heat equation on a periodic grid, with Cole-Hopf.

dZ = (D/2) dZ'' dt + lam Z dW,  D = phi'(rho),  lam = a beta''(rho) sqrt(chi/D),

solved by Duhamel stepping: exact heat semigroup on the Fourier side
(multiplier exp(-D q^2 dt / 2), matching the kernel K_t ~ N(0, D t)),
Ito noise explicit, lam Z xi sqrt(dt/dx) with one standard Gaussian per
cell.  No renormalization constant is added at fixed dx; the discrete
equation is well-posed as written and this is the standard caveat for
SHE discretizations.

The height field is h = -(D / (a beta'')) log Z and Y = grad h.  The
stationary initial condition is a pinned Gaussian walk with increment
variance chi(rho) dx; on the periodic domain the increments are bridge
conditioned (sum zero) so that h_0 and Z_0 close up around the ring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .lattice import RateModel

__all__ = [
    "SheCoefficients",
    "SheField",
    "SheSeries",
    "heat_kernel",
    "init_stationary",
    "step_mild",
    "cole_hopf",
    "run_she",
    "she_ensemble",
    "write_she_csv",
]


@dataclass(frozen=True)
class SheCoefficients:
    """Continuum coefficients derived from one (RateModel, rho) pair."""

    D: float
    lam: float
    rho: float
    a: float

    @classmethod
    def from_model(cls, model: RateModel, rho: float) -> "SheCoefficients":
        if model.h is None:
            raise ValueError("rate model has no gradient witness: D = phi'(rho) undefined")
        D = model.phi(rho, deriv=1)
        if D <= 0:
            raise ValueError(f"phi'(rho) = {D:.6g} <= 0: degenerate diffusion")
        chi = model.chi(rho)
        lam = model.a * model.beta(rho, deriv=2) * math.sqrt(chi / D)
        return cls(D=D, lam=lam, rho=rho, a=model.a)


@dataclass
class SheField:
    """Positive grid field Z(x_i) on M periodic cells of width dx."""

    Z: np.ndarray
    dx: float
    t: float
    coeffs: SheCoefficients
    retries: int = 0

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=np.float64)
        if self.Z.ndim != 1:
            raise ValueError("Z must be a flat grid of cell values")
        if not np.all(self.Z > 0):
            raise ValueError("Z must be strictly positive")

    @property
    def M(self) -> int:
        return self.Z.size

    @property
    def length(self) -> float:
        return self.M * self.dx

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.M) * self.dx


def heat_kernel(t, x, D: float, period: float | None = None):
    """K_t(x) = (2 pi D t)^(-1/2) exp(-x^2 / 2 D t), optionally periodized.

    With a period the images K_t(x + j*period) are summed until they are
    negligible, giving the torus kernel.
    """
    if t <= 0:
        raise ValueError(f"heat kernel needs t > 0, got t = {t}")
    x = np.asarray(x, dtype=np.float64)
    var = D * t
    norm = 1.0 / math.sqrt(2 * math.pi * var)
    if period is None:
        return norm * np.exp(-x * x / (2 * var))
    J = int(math.ceil(8 * math.sqrt(var) / period)) + 1
    out = np.zeros_like(x)
    for j in range(-J, J + 1):
        y = x + j * period
        out += np.exp(-y * y / (2 * var))
    return norm * out


def _require_coeffs(model: RateModel, rho: float, coeffs=None) -> SheCoefficients:
    return coeffs if coeffs is not None else SheCoefficients.from_model(model, rho)


def init_stationary(M: int, dx: float, rho: float, rates: RateModel,
                    seed) -> SheField:
    """Stationary initial field: Z_0 = exp(-(a beta''/D) h_0).

    h_0 is a pinned Gaussian walk, increment variance chi(rho) dx, bridge
    conditioned so the profile is periodic.  For a = 0 the exponent
    vanishes and Z_0 == 1 (the solver still runs; cole_hopf refuses).
    """
    if M < 2 or dx <= 0:
        raise ValueError("need M >= 2 grid cells of positive width")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    co = SheCoefficients.from_model(rates, rho)
    chi = rho * (1.0 - rho)
    inc = rng.normal(0.0, math.sqrt(chi * dx), size=M)
    inc -= inc.mean()  # periodic closure
    h0 = np.concatenate(([0.0], np.cumsum(inc[:-1])))
    Z0 = np.exp(-(co.a * _beta2(rates, rho) / co.D) * h0)
    return SheField(Z=Z0, dx=dx, t=0.0, coeffs=co)


def _beta2(model: RateModel, rho: float) -> float:
    return model.beta(rho, deriv=2)


def _heat_multiplier(M: int, dx: float, D: float, dt: float) -> np.ndarray:
    q = 2 * math.pi * np.fft.rfftfreq(M, d=dx)
    return np.exp(-0.5 * D * q * q * dt)


def _one_step(Z: np.ndarray, mult: np.ndarray, lam: float, dt: float,
              dx: float, rng: np.random.Generator) -> np.ndarray:
    """One Duhamel step on (..., M) stacked fields."""
    smooth = np.fft.irfft(np.fft.rfft(Z, axis=-1) * mult, n=Z.shape[-1], axis=-1)
    if lam == 0.0:
        return smooth
    xi = rng.standard_normal(Z.shape)
    return smooth + lam * Z * xi * math.sqrt(dt / dx)


def _advance(Z: np.ndarray, dt: float, dx: float, co: SheCoefficients,
             rng: np.random.Generator, depth: int = 0):
    """Advance stacked fields by dt, bisecting on positivity failures.

    Returns (Z, retries).  Rows that go nonpositive are recomputed from
    their pre-step state with two half steps, up to 4 halvings deep.
    """
    mult = _heat_multiplier(Z.shape[-1], dx, co.D, dt)
    out = _one_step(Z, mult, co.lam, dt, dx, rng)
    bad = out.min(axis=-1) <= 0
    if not bad.any():
        return out, 0
    if depth >= 4:
        raise RuntimeError(
            f"field went nonpositive at dt = {dt:.3g} after 4 halvings; "
            "reduce dt or the noise amplitude")
    retries = int(bad.sum()) if out.ndim > 1 else 1
    half = dt / 2
    sub = Z[bad] if out.ndim > 1 else Z
    sub, r1 = _advance(sub, half, dx, co, rng, depth + 1)
    sub, r2 = _advance(sub, half, dx, co, rng, depth + 1)
    if out.ndim > 1:
        out[bad] = sub
    else:
        out = sub
    return out, retries + r1 + r2


def step_mild(field: SheField, dt: float, seed_stream) -> SheField:
    """One mild step Z -> K_dt * Z + lam Z xi sqrt(dt/dx).

    dt <= dx is enforced (the cell noise is white only when the kernel
    does not smear it across many cells per step).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt > field.dx * (1 + 1e-12):
        raise ValueError(
            f"dt = {dt:.3g} exceeds dx = {field.dx:.3g}: noise resolution needs dt <= dx")
    rng = (seed_stream if isinstance(seed_stream, np.random.Generator)
           else np.random.default_rng(seed_stream))
    Z, retries = _advance(field.Z, dt, field.dx, field.coeffs, rng)
    return SheField(Z=Z, dx=field.dx, t=field.t + dt, coeffs=field.coeffs,
                    retries=field.retries + retries)


def cole_hopf(field: SheField):
    """Height h = -(D / (a beta'')) log Z and centered gradient Y.

    beta'' enters through lam = a beta'' sqrt(chi/D): the prefactor is
    recovered as -D / (lam sqrt(D/chi)) without re-asking the model.
    """
    co = field.coeffs
    if co.a == 0.0 or co.lam == 0.0:
        raise ValueError("a = 0: Cole-Hopf transform is degenerate (log Z == 0)")
    if not np.all(field.Z > 0):
        raise ValueError("Z must be strictly positive")
    chi = co.rho * (1.0 - co.rho)
    abeta2 = co.lam / math.sqrt(chi / co.D)  # a * beta''(rho)
    h = -(co.D / abeta2) * np.log(field.Z)
    Y = (np.roll(h, -1) - np.roll(h, 1)) / (2 * field.dx)
    return h, Y


@dataclass
class SheSeries:
    """Snapshots of one run at the requested times."""

    sample_times: np.ndarray
    Z: np.ndarray          # (T, M)
    h: np.ndarray | None   # None when a = 0
    Y: np.ndarray | None
    dx: float
    dt: float
    coeffs: SheCoefficients
    retries: int = 0

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.Z.shape[1]) * self.dx


def _snap_steps(sample_times, dt: float) -> np.ndarray:
    ts = np.asarray(sample_times, dtype=np.float64)
    if ts.ndim != 1 or ts.size == 0 or np.any(np.diff(ts) <= 0) or ts[0] < 0:
        raise ValueError("sample times must be increasing and nonnegative")
    steps = np.rint(ts / dt).astype(np.int64)
    if not np.allclose(steps * dt, ts, rtol=0, atol=1e-9 * max(dt, 1.0)):
        raise ValueError("sample times must be integer multiples of dt")
    return steps


def run_she(model: RateModel, rho: float, M: int, dx: float, dt: float,
            sample_times, seed) -> SheSeries:
    """Evolve one stationary field, sampling Z (and h, Y when a != 0)."""
    steps = _snap_steps(sample_times, dt)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    f = init_stationary(M, dx, rho, model, rng)
    Zs, hs, Ys = [], [], []
    done = 0
    for target in steps:
        while done < target:
            f = step_mild(f, dt, rng)
            done += 1
        Zs.append(f.Z.copy())
        if f.coeffs.a != 0.0:
            h, Y = cole_hopf(f)
            hs.append(h)
            Ys.append(Y)
    have_h = f.coeffs.a != 0.0
    return SheSeries(sample_times=np.asarray(sample_times, dtype=np.float64),
                     Z=np.array(Zs),
                     h=np.array(hs) if have_h else None,
                     Y=np.array(Ys) if have_h else None,
                     dx=dx, dt=dt, coeffs=f.coeffs, retries=f.retries)


def she_ensemble(model: RateModel, rho: float, M: int, dx: float, dt: float,
                 sample_times, reps: int, seed) -> list[np.ndarray]:
    """Stack of independent stationary runs, one (reps, M) array of Z per time.

    Replicas advance together (one vectorized step per dt) and are
    deterministic given the seed.
    """
    steps = _snap_steps(sample_times, dt)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    co = SheCoefficients.from_model(model, rho)
    chi = rho * (1.0 - rho)
    inc = rng.normal(0.0, math.sqrt(chi * dx), size=(reps, M))
    inc -= inc.mean(axis=1, keepdims=True)
    h0 = np.concatenate((np.zeros((reps, 1)), np.cumsum(inc[:, :-1], axis=1)), axis=1)
    Z = np.exp(-(co.a * _beta2(model, rho) / co.D) * h0)
    if dt > dx * (1 + 1e-12):
        raise ValueError(
            f"dt = {dt:.3g} exceeds dx = {dx:.3g}: noise resolution needs dt <= dx")
    out, done = [], 0
    for target in steps:
        while done < target:
            Z, _ = _advance(Z, dt, dx, co, rng)
            done += 1
        out.append(Z.copy())
    return out


def write_she_csv(path, series: SheSeries) -> None:
    """x, Z, h, Y columns per sample time, 17 significant digits."""
    cols = ["x"]
    arrs = [series.x]
    for i, t in enumerate(series.sample_times):
        tag = f"{t:g}"
        cols.append(f"Z_t{tag}")
        arrs.append(series.Z[i])
        if series.h is not None:
            cols += [f"h_t{tag}", f"Y_t{tag}"]
            arrs += [series.h[i], series.Y[i]]
    data = np.column_stack(arrs)
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
