"""Continuous-time simulation of the weakly asymmetric dynamics.

The generator acts on local functions as

    L f(eta) = n^2 sum_x c_x(eta) {p eta(x)(1-eta(x+1))
                                   + q eta(x+1)(1-eta(x))} grad_{x,x+1} f(eta)

with p = (1 + a n^-theta)/2, on a ring of L = ell*n sites.  Time is
macroscopic: the n^2 lives inside the rates.  run_measured drives the
compiled event loop and returns exact inter-event time integrals of the
registered observables; step/total_rate/apply_generator are slow reference
paths used as oracles on tiny rings.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernel
from .lattice import Configuration, RateModel, WindowFunction, eval_local, grand_canonical_mean, swap_bond

EVENT_RECORD = np.dtype([("t", "<f8"), ("bond", "<u4"), ("dir", "u1")])


@dataclass
class Params:
    model: RateModel
    n: int
    ell: int = 4
    rho: float = 0.5

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.ell < 1:
            raise ValueError("ell must be >= 1")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho={self.rho} outside (0,1)")
        drift = abs(self.model.a) * self.n ** (-self.model.theta)
        if drift > 1.0:
            raise ValueError(f"|a| n^-theta = {drift:.3g} > 1 makes q_n negative")
        if self.L < 2 * max(self.model.c.width, 2):
            raise ValueError("ring too short for the rate window")

    @property
    def L(self) -> int:
        return self.ell * self.n

    @property
    def p(self) -> float:
        return 0.5 * (1.0 + self.model.a * self.n ** (-self.model.theta))

    @property
    def q(self) -> float:
        return 1.0 - self.p

    def bond_rate(self, cfg: Configuration, x: int) -> float:
        e0 = cfg[x]
        e1 = cfg[x + 1]
        if e0 == e1:
            return 0.0
        c = eval_local(self.model.c, cfg, x)
        return self.n ** 2 * c * (self.p if e0 == 1 else self.q)


@dataclass
class LocalObservable:
    """sum_x weights[x] * (tau_x f)(eta), integrated in time and sampled."""

    name: str
    f: WindowFunction
    weights: np.ndarray

    def evaluate(self, cfg: Configuration) -> float:
        from .lattice import eval_all

        return float(self.weights @ eval_all(self.f, cfg))


@dataclass
class BlockObservable:
    """sum_j weights[j] * values[m_j], m_j the count of block j of k sites."""

    name: str
    k: int
    values: np.ndarray   # length k+1, indexed by block count
    weights: np.ndarray  # length L/k

    def evaluate(self, cfg: Configuration) -> float:
        counts = cfg.eta.reshape(-1, self.k).sum(axis=1)
        return float(self.weights @ self.values[counts])


@dataclass
class SimResult:
    params: Params
    sample_times: np.ndarray
    values: dict          # observable name -> array over sample times
    integrals: dict       # observable name -> running time integral
    eta0: Configuration
    eta_snaps: np.ndarray | None
    j_snaps: np.ndarray | None   # net current per bond at sample times
    jumps_right: np.ndarray
    jumps_left: np.ndarray
    n_events: int
    t_final: float
    rate_audit: float
    events: np.ndarray | None = None   # EVENT_RECORD array when logging


@dataclass
class SimState:
    """Reference (pure python) simulation state for oracle tests."""

    params: Params
    eta: Configuration
    t: float = 0.0
    jumps_right: np.ndarray = field(default=None)
    jumps_left: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.jumps_right is None:
            self.jumps_right = np.zeros(self.params.L, dtype=np.int64)
        if self.jumps_left is None:
            self.jumps_left = np.zeros(self.params.L, dtype=np.int64)


def total_rate(state: SimState) -> float:
    return math.fsum(state.params.bond_rate(state.eta, x) for x in range(state.params.L))


def step(state: SimState, rng: np.random.Generator):
    """One exact CTMC step; returns (time_increment, bond, moved_right) or None."""
    L = state.params.L
    rates = np.array([state.params.bond_rate(state.eta, x) for x in range(L)])
    R = rates.sum()
    if R <= 0.0:
        return None
    dt = rng.exponential(1.0 / R)
    b = int(rng.choice(L, p=rates / R))
    moved_right = state.eta[b] == 1
    state.eta = swap_bond(state.eta, b)
    state.t += dt
    if moved_right:
        state.jumps_right[b] += 1
    else:
        state.jumps_left[b] += 1
    return dt, b, moved_right


def apply_generator(f, eta: Configuration, params: Params) -> float:
    """Pointwise L_n f(eta); f is a WindowFunction (evaluated at x=0) or a
    callable on Configuration.  Tiny rings only (sums over all bonds)."""
    if isinstance(f, WindowFunction):
        func = lambda cfg: eval_local(f, cfg, 0)
    else:
        func = f
    base = func(eta)
    acc = 0.0
    for x in range(params.L):
        r = params.bond_rate(eta, x)
        if r != 0.0:
            acc += r * (func(swap_bond(eta, x)) - base)
    return acc


def carre_du_champ(f, eta: Configuration, params: Params) -> float:
    """L(f^2) - 2 f L(f) at eta = sum_x rate_x * (f(eta^{x,x+1}) - f(eta))^2."""
    if isinstance(f, WindowFunction):
        func = lambda cfg: eval_local(f, cfg, 0)
    else:
        func = f
    base = func(eta)
    acc = 0.0
    for x in range(params.L):
        r = params.bond_rate(eta, x)
        if r != 0.0:
            acc += r * (func(swap_bond(eta, x)) - base) ** 2
    return acc


def mean_bond_activity(params: Params) -> float:
    """E_rho of the bond jump rate divided by n^2 (exact product-measure mean)."""
    g = params.model.activity_function(params.p, params.q)
    return grand_canonical_mean(g, params.rho)


def estimate_events(params: Params, T: float, replicas: int = 1) -> float:
    """Expected total event count: n^2 L T * mean bond activity * replicas."""
    return params.n ** 2 * params.L * T * mean_bond_activity(params) * replicas


def replica_rng(master_seed: int, replica_id: int) -> np.random.Generator:
    """Counter-based stream keyed by (master_seed, replica_id)."""
    return np.random.Generator(np.random.Philox(key=[master_seed, replica_id]))


def run_measured(params: Params,
                 sample_times,
                 observables=(),
                 rng: np.random.Generator | None = None,
                 eta0: Configuration | None = None,
                 record_eta: bool = False,
                 record_currents: bool = False,
                 log_events: bool = False,
                 log_capacity: int = 0,
                 max_events: int = 2**62) -> SimResult:
    """Simulate until the last sample time, measuring the observables.

    Observables are LocalObservable/BlockObservable; each gets its current
    value and its exact running time integral recorded at every sample time.
    Initial state is eta0 or a fresh nu_rho draw from rng.
    """
    from .lattice import sample_grand_canonical

    L = params.L
    if rng is None:
        rng = np.random.default_rng(0)
    sample_times = np.asarray(sample_times, dtype=np.float64)
    if sample_times.ndim != 1 or sample_times.size == 0:
        raise ValueError("sample_times must be a nonempty 1d array")
    if np.any(np.diff(sample_times) < 0) or sample_times[0] < 0:
        raise ValueError("sample_times must be nondecreasing and nonnegative")
    if eta0 is None:
        eta0 = sample_grand_canonical(L, params.rho, rng)
    if eta0.L != L:
        raise ValueError(f"eta0 has {eta0.L} sites, params want {L}")

    locs = [o for o in observables if isinstance(o, LocalObservable)]
    blks = [o for o in observables if isinstance(o, BlockObservable)]
    if len(locs) + len(blks) != len(observables):
        raise TypeError("observables must be LocalObservable or BlockObservable")
    for o in locs:
        if o.weights.shape != (L,):
            raise ValueError(f"observable {o.name}: weights must have length L={L}")
    for o in blks:
        if L % o.k != 0:
            raise ValueError(f"observable {o.name}: block size {o.k} does not divide L={L}")
        if o.weights.shape != (L // o.k,):
            raise ValueError(f"observable {o.name}: needs one weight per block")
        if o.values.shape != (o.k + 1,):
            raise ValueError(f"observable {o.name}: needs k+1 count values")

    n_loc = len(locs)
    n_blk = len(blks)
    wmax = max([o.f.width for o in locs], default=1)
    loc_tab = np.zeros((max(n_loc, 1), 1 << wmax))
    loc_lo = np.zeros(max(n_loc, 1), dtype=np.int64)
    loc_w = np.ones(max(n_loc, 1), dtype=np.int64)
    loc_wt = np.zeros((max(n_loc, 1), L))
    for i, o in enumerate(locs):
        loc_tab[i, :o.f.table.size] = o.f.table
        loc_lo[i] = o.f.lo
        loc_w[i] = o.f.width
        loc_wt[i] = o.weights
    kmax = max([o.k for o in blks], default=1)
    nbmax = max([L // o.k for o in blks], default=1)
    blk_k = np.ones(max(n_blk, 1), dtype=np.int64)
    blk_val = np.zeros((max(n_blk, 1), kmax + 1))
    blk_wt = np.zeros((max(n_blk, 1), nbmax))
    for j, o in enumerate(blks):
        blk_k[j] = o.k
        blk_val[j, :o.k + 1] = o.values
        blk_wt[j, :L // o.k] = o.weights

    nsamples = sample_times.size
    out_val = np.zeros((nsamples, n_loc + n_blk + 1))
    out_int = np.zeros((nsamples, n_loc + n_blk + 1))
    eta_snaps = np.zeros((nsamples, L), dtype=np.int8) if record_eta else np.zeros((1, 1), dtype=np.int8)
    j_snaps = np.zeros((nsamples, L), dtype=np.int64) if record_currents else np.zeros((1, 1), dtype=np.int64)
    jumps_r = np.zeros(L, dtype=np.int64)
    jumps_l = np.zeros(L, dtype=np.int64)
    if log_events and log_capacity <= 0:
        est = estimate_events(params, float(sample_times[-1]))
        log_capacity = int(4 * est) + 1000
    log_t = np.zeros(log_capacity if log_events else 0)
    log_bond = np.zeros(log_capacity if log_events else 0, dtype=np.uint32)
    log_dir = np.zeros(log_capacity if log_events else 0, dtype=np.uint8)

    eta = eta0.eta.copy()
    status, n_events, t_final, audit = _kernel.run_kernel(
        eta, params.n ** 2 * params.p, params.n ** 2 * params.q,
        params.model.c.table, params.model.c.lo, params.model.c.width,
        n_loc, loc_tab, loc_lo, loc_w, loc_wt,
        n_blk, blk_k, blk_val, blk_wt,
        sample_times, out_val, out_int,
        record_eta, eta_snaps, record_currents, j_snaps,
        jumps_r, jumps_l,
        log_events, log_t, log_bond, log_dir,
        max_events, rng)
    if status == 1:
        raise RuntimeError(f"event budget {max_events} exhausted at t={t_final:.6g} "
                           f"({n_events} events); raise max_events or shorten the run")
    if status == 2:
        raise RuntimeError(f"event log capacity {log_capacity} exhausted at t={t_final:.6g}")

    names = [o.name for o in locs] + [o.name for o in blks]
    values = {nm: out_val[:, i].copy() for i, nm in enumerate(names)}
    integrals = {nm: out_int[:, i].copy() for i, nm in enumerate(names)}
    events = None
    if log_events:
        events = np.zeros(n_events, dtype=EVENT_RECORD)
        events["t"] = log_t[:n_events]
        events["bond"] = log_bond[:n_events]
        events["dir"] = log_dir[:n_events]
    return SimResult(params=params, sample_times=sample_times, values=values,
                     integrals=integrals, eta0=eta0,
                     eta_snaps=eta_snaps if record_eta else None,
                     j_snaps=j_snaps if record_currents else None,
                     jumps_right=jumps_r, jumps_left=jumps_l,
                     n_events=int(n_events), t_final=float(t_final),
                     rate_audit=float(audit), events=events)


# ---------------------------------------------------------------------------
# event log IO and replay

def save_event_log(path, events: np.ndarray, params: Params, seed=None):
    """Binary dump: JSON header line, then packed (t f64, bond u32, dir u8) LE."""
    header = {
        "format": "kpzlab-events-v1",
        "record": "t:f64,bond:u32,dir:u8,little-endian",
        "count": int(events.size),
        "n": params.n, "ell": params.ell, "rho": params.rho,
        "a": params.model.a, "theta": params.model.theta,
        "c": json.loads(params.model.c.to_json()),
        "seed": seed,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(events.astype(EVENT_RECORD, copy=False).tobytes())


def load_event_log(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("format") != "kpzlab-events-v1":
            raise ValueError("not a kpzlab event log")
        events = np.frombuffer(fh.read(), dtype=EVENT_RECORD)
    if events.size != header["count"]:
        raise ValueError(f"event log truncated: header says {header['count']}, "
                         f"found {events.size}")
    return events, header


def replay(eta0: Configuration, events: np.ndarray, observable, sample_times):
    """Re-integrate an observable from an event log (python oracle path).

    Returns (values, integrals) at sample_times, computed independently of
    the kernel's incremental bookkeeping.
    """
    sample_times = np.asarray(sample_times, dtype=np.float64)
    cfg = eta0.copy()
    t = 0.0
    acc = 0.0
    cur = observable.evaluate(cfg)
    vals = np.zeros(sample_times.size)
    ints = np.zeros(sample_times.size)
    sidx = 0
    for ev in events:
        te = float(ev["t"])
        while sidx < sample_times.size and sample_times[sidx] <= te:
            ts = sample_times[sidx]
            vals[sidx] = cur
            ints[sidx] = acc + cur * (ts - t)
            sidx += 1
        if sidx >= sample_times.size:
            break
        acc += cur * (te - t)
        t = te
        cfg = swap_bond(cfg, int(ev["bond"]))
        cur = observable.evaluate(cfg)
    while sidx < sample_times.size:
        ts = sample_times[sidx]
        vals[sidx] = cur
        ints[sidx] = acc + cur * (ts - t)
        sidx += 1
    return vals, ints
