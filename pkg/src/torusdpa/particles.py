"""The deterministic particle system: initialization, forces, integration.

Particles carry uniform weight 1/N and move by the pairwise ODE

    dX_i/dt = -(1/N) sum_j grad W(X_ij)  [interaction]
              + aggregation term          (m = 2: +(2/N) sum_j grad(ot*ot)(X_ij);
                                           general m: density-weighted form)
              - eps_star (1/N) sum_j grad R_alpha(X_ij)  [viscosity]

with X_ij the minimum-image displacement.  Self terms j = i are kept (all
gradients vanish exactly at 0).  Appendix-A mode drops the viscosity term
entirely instead of sending eps_star to 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fields import GridField
from .geometry import min_image, wrap
from .kernels import KernelSet, ParameterSchedule
from .spectral import catmull_rom_apply, catmull_rom_prepare

__all__ = [
    "ParticleState",
    "ForceField",
    "init_quantile",
    "compute_forces",
    "step",
    "stable_dt",
    "discrete_energy",
    "momentum",
]

_CHUNK_PAIRS = 2_000_000  # pair evaluations per chunk, bounds peak memory


@dataclass
class ParticleState:
    """N particle positions on the torus with uniform weights 1/N."""

    positions: np.ndarray
    time: float = 0.0
    schedule: Optional[ParameterSchedule] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = wrap(np.atleast_2d(np.asarray(self.positions, dtype=float)))

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def weight(self) -> float:
        return 1.0 / self.N


@dataclass
class ForceField:
    """Velocities and their three-addend decomposition."""

    velocities: np.ndarray
    term_interaction: np.ndarray
    term_aggregation: np.ndarray
    term_viscosity: np.ndarray

    def decomposition_error(self) -> float:
        s = self.term_interaction + self.term_aggregation + self.term_viscosity
        return float(np.max(np.abs(self.velocities - s)))


# ---------------------------------------------------------------------------
# initial discretization


def _quantiles_1d(cellmass: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Invert the piecewise-linear CDF of cell masses on [j*h, (j+1)*h)."""
    n = cellmass.size
    h = 1.0 / n
    cdf = np.concatenate([[0.0], np.cumsum(cellmass)])
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, targets, side="right") - 1
    idx = np.clip(idx, 0, n - 1)
    base = idx * h
    dens = cellmass[idx] / h
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(dens > 0, (targets - cdf[idx]) / dens, 0.5 * h)
    return base + frac


def _split_divisor(N: int) -> int:
    best = 1
    for k in range(1, int(math.isqrt(N)) + 1):
        if N % k == 0:
            best = k
    return best


def init_quantile(
    rho0: GridField, N: int, schedule: Optional[ParameterSchedule] = None
) -> ParticleState:
    """Place N particles at mass-medians of N equal-mass regions of rho0.

    d = 1 uses exact quantiles of the piecewise-constant density; d = 2 uses
    per-axis product quantiles (x-marginal strips, then conditional-in-y),
    which needs N to factor as n1*n2.
    """
    if N <= 0:
        raise ValueError("N must be positive")
    if rho0.values.min() < -1e-12:
        raise ValueError("rho0 has negative mass cells")
    vals = np.maximum(rho0.values, 0.0)
    total = vals.sum() * rho0.h**rho0.d
    if total <= 0:
        raise ValueError("rho0 has no mass")
    if rho0.d == 1:
        cellmass = vals * rho0.h / total
        targets = (np.arange(N) + 0.5) / N
        pos = _quantiles_1d(cellmass, targets)[:, None]
    else:
        n = rho0.n
        h = rho0.h
        n1 = _split_divisor(N)
        n2 = N // n1
        colmass = vals.sum(axis=1) * h * h / total  # mass of each x-column
        x_edges = _quantiles_1d(colmass, np.arange(n1 + 1) / n1)
        x_edges[0], x_edges[-1] = 0.0, 1.0
        x_mid = _quantiles_1d(colmass, (np.arange(n1) + 0.5) / n1)
        pos = np.empty((N, 2))
        grid_edges = np.arange(n + 1) * h
        for s in range(n1):
            a, b = x_edges[s], x_edges[s + 1]
            # overlap of [a, b] with each x-cell [j*h, (j+1)*h)
            lo = np.clip(a, grid_edges[:-1], grid_edges[1:])
            hi = np.clip(b, grid_edges[:-1], grid_edges[1:])
            overlap = np.maximum(hi - lo, 0.0)
            cond = (overlap[:, None] * vals).sum(axis=0) * h
            csum = cond.sum()
            if csum <= 0:
                cond = np.full(n, 1.0 / n)
                csum = 1.0
            y = _quantiles_1d(cond / csum, (np.arange(n2) + 0.5) / n2)
            rows = slice(s * n2, (s + 1) * n2)
            pos[rows, 0] = x_mid[s]
            pos[rows, 1] = y
    return ParticleState(positions=pos, time=0.0, schedule=schedule)


# ---------------------------------------------------------------------------
# forces


def _pairwise_sums(state: ParticleState, tables, weights_j=None):
    """Sum interpolated kernel gradients over j for each table, sharing the
    interpolation stencil across tables.  Returns one (N, d) array per table."""
    X = state.positions
    N, d = X.shape
    out = [np.zeros((N, d)) for _ in tables]
    rows = max(1, _CHUNK_PAIRS // max(N, 1))
    for lo in range(0, N, rows):
        Xi = X[lo : lo + rows]
        delta = min_image(Xi[:, None, :], X[None, :, :])
        flat = delta.reshape(-1, d)
        sign = np.sign(flat)
        prep = catmull_rom_prepare(np.abs(flat), tables[0].n, d)
        for t, table in enumerate(tables):
            g = np.empty_like(flat)
            for ax in range(d):
                g[:, ax] = sign[:, ax] * catmull_rom_apply(
                    table.grads[ax], prep, table.padded("grad", ax)
                )
            g = g.reshape(len(Xi), N, d)
            if weights_j is not None:
                g = g * weights_j[None, :, None]
            out[t][lo : lo + rows] = g.sum(axis=1)
    return out


def _pairwise_value_sum(state: ParticleState, table, weights_j=None) -> np.ndarray:
    """sum_j table(X_i - X_j) for each i (even-symmetric interpolation)."""
    X = state.positions
    N, d = X.shape
    out = np.zeros(N)
    rows = max(1, _CHUNK_PAIRS // max(N, 1))
    for lo in range(0, N, rows):
        Xi = X[lo : lo + rows]
        delta = min_image(Xi[:, None, :], X[None, :, :]).reshape(-1, d)
        vals = table.value_at(np.abs(delta)).reshape(len(Xi), N)
        if weights_j is not None:
            vals = vals * weights_j[None, :]
        out[lo : lo + rows] = vals.sum(axis=1)
    return out


def _cell_bins(positions: np.ndarray, radius: float):
    """Neighbor-candidate lists from a uniform bin grid of width >= radius."""
    N, d = positions.shape
    nb = max(int(np.floor(1.0 / radius)), 1)
    if nb < 3:
        return [np.arange(N)] * N  # bins too coarse to prune anything
    cells = np.minimum((positions * nb).astype(np.int64), nb - 1)
    buckets = {}
    for i in range(N):
        buckets.setdefault(tuple(cells[i]), []).append(i)
    offsets = [-1, 0, 1]
    out = []
    for i in range(N):
        cand = []
        ci = cells[i]
        if d == 1:
            for o in offsets:
                cand.extend(buckets.get(((ci[0] + o) % nb,), ()))
        else:
            for o1 in offsets:
                for o2 in offsets:
                    cand.extend(buckets.get(((ci[0] + o1) % nb, (ci[1] + o2) % nb), ()))
        out.append(np.array(sorted(cand), dtype=np.int64))
    return out


def _pairwise_sums_cell_list(state: ParticleState, tables, radius: float):
    """Cell-list variant of _pairwise_sums for compactly supported kernels.

    Kernels are treated as exactly zero beyond the radius; spectral tables
    carry roundoff-level tails there, so results match the direct sums to
    roundoff, not bitwise.  Candidate lists are index-sorted, so the
    reduction order is deterministic.
    """
    X = state.positions
    N, d = X.shape
    neighbors = _cell_bins(X, radius)
    out = [np.zeros((N, d)) for _ in tables]
    for i in range(N):
        idx = neighbors[i]
        delta = min_image(X[i][None, :], X[idx])
        sign = np.sign(delta)
        prep = catmull_rom_prepare(np.abs(delta), tables[0].n, d)
        for t, table in enumerate(tables):
            g = np.empty_like(delta)
            for ax in range(d):
                g[:, ax] = sign[:, ax] * catmull_rom_apply(
                    table.grads[ax], prep, table.padded("grad", ax)
                )
            out[t][i] = g.sum(axis=0)
    return out


def compute_forces(
    state: ParticleState,
    kernels: KernelSet,
    appendix_a: bool = False,
    cell_list: bool = False,
) -> ForceField:
    """Evaluate the particle velocities and their three-term decomposition.

    cell_list=True prunes the pair sums through a uniform bin grid; it needs
    every kernel in play to be compactly supported inside the half-torus and
    is off by default (desk-scale N favors the deterministic direct sums).
    """
    sched = state.schedule or kernels.schedule
    m = sched.m
    N = state.N
    include_visc = not appendix_a
    if include_visc and (sched.alpha == 0.0 or kernels.viscosity is None):
        raise ValueError(
            "viscosity particle term needs alpha > 0; use appendix_a=True to drop it"
        )
    if m == 2.0:
        tables = [kernels.W, kernels.smooth2]
        if include_visc:
            tables.append(kernels.viscosity.table)
        if cell_list:
            radii = [t.support_radius for t in tables]
            if any(r is None or r >= 0.5 for r in radii):
                raise ValueError(
                    "cell list needs every kernel compactly supported inside "
                    "the half-torus"
                )
            sums = _pairwise_sums_cell_list(state, tables, max(radii))
        else:
            sums = _pairwise_sums(state, tables)
        term1 = -sums[0] / N
        term2 = 2.0 * sums[1] / N
        term3 = (
            -sched.epsilon_star * sums[2] / N
            if include_visc
            else np.zeros_like(term1)
        )
    else:
        if cell_list:
            raise ValueError("cell list is implemented for the m = 2 force only")
        dens = _pairwise_value_sum(state, kernels.omega_tilde.table) / N
        wj = dens ** (m - 1.0)
        (s1,) = _pairwise_sums(state, [kernels.W])
        (s2,) = _pairwise_sums(state, [kernels.omega_tilde.table], weights_j=wj)
        term1 = -s1 / N
        term2 = (m / (m - 1.0)) * s2 / N
        if include_visc:
            (s3,) = _pairwise_sums(state, [kernels.viscosity.table])
            term3 = -sched.epsilon_star * s3 / N
        else:
            term3 = np.zeros_like(term1)
    vel = term1 + term2 + term3
    return ForceField(
        velocities=vel,
        term_interaction=term1,
        term_aggregation=term2,
        term_viscosity=term3,
    )


def momentum(forces: ForceField) -> np.ndarray:
    """Exact (fsum) total velocity per axis."""
    v = forces.velocities
    return np.array([math.fsum(v[:, ax].tolist()) for ax in range(v.shape[1])])


# ---------------------------------------------------------------------------
# time stepping


def stable_dt(
    state: ParticleState, kernels: KernelSet, appendix_a: bool = False, c_stab: float = 0.5
) -> float:
    """c_stab / L with L a Lipschitz bound of the force field from the tables."""
    sched = state.schedule or kernels.schedule
    m = sched.m
    key = ("L", m, bool(appendix_a))
    cache = kernels.__dict__.setdefault("_stable_cache", {})
    if key not in cache:
        L = kernels.W.hessian_inf_norm()
        if m == 2.0:
            L += 2.0 * kernels.smooth2.hessian_inf_norm()
        else:
            tt = kernels.omega_tilde.table
            rho_max = float(tt.values.max())
            grad_max = float(max(np.max(np.abs(g)) for g in tt.grads))
            L += (m / (m - 1.0)) * (
                tt.hessian_inf_norm() * rho_max ** (m - 1.0)
                + (m - 1.0) * rho_max ** max(m - 2.0, 0.0) * grad_max**2
            )
        if not appendix_a:
            if kernels.viscosity is None:
                raise ValueError("viscosity tables missing; use appendix_a=True")
            L += sched.epsilon_star * kernels.viscosity.table.hessian_inf_norm()
        cache[key] = L
    return c_stab / cache[key]


def _velocities(state: ParticleState, kernels: KernelSet, appendix_a: bool) -> np.ndarray:
    """Total velocity without the decomposition.

    For m = 2 the three gradients combine linearly into the single pair
    potential U, so one table interpolation suffices; identical to summing
    compute_forces addends up to float associativity.
    """
    sched = state.schedule or kernels.schedule
    if sched.m == 2.0:
        U = kernels.pair_kernel(include_viscosity=not appendix_a)
        (s,) = _pairwise_sums(state, [U])
        return -s / state.N
    return compute_forces(state, kernels, appendix_a=appendix_a).velocities


def step(
    state: ParticleState,
    kernels: KernelSet,
    dt: float,
    method: str = "rk4",
    appendix_a: bool = False,
) -> ParticleState:
    """Advance one explicit step (euler, heun, or rk4) and wrap to the torus."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    dt_max = stable_dt(state, kernels, appendix_a=appendix_a)
    flags = dict(state.meta)
    if dt > dt_max:
        warnings.warn(f"dt={dt:.3e} exceeds stable_dt={dt_max:.3e}", RuntimeWarning)
        flags["dt_warning"] = True

    def rhs(pos):
        tmp = ParticleState(positions=pos, time=state.time, schedule=state.schedule)
        return _velocities(tmp, kernels, appendix_a=appendix_a)

    X = state.positions
    if method == "euler":
        Xn = X + dt * rhs(X)
    elif method == "heun":
        k1 = rhs(X)
        k2 = rhs(wrap(X + dt * k1))
        Xn = X + 0.5 * dt * (k1 + k2)
    elif method == "rk4":
        k1 = rhs(X)
        k2 = rhs(wrap(X + 0.5 * dt * k1))
        k3 = rhs(wrap(X + 0.5 * dt * k2))
        k4 = rhs(wrap(X + dt * k3))
        Xn = X + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ParticleState(
        positions=wrap(Xn), time=state.time + dt, schedule=state.schedule, meta=flags
    )


def discrete_energy(
    state: ParticleState, kernels: KernelSet, appendix_a: bool = False
) -> float:
    """(1/(2N^2)) sum_ij U(X_i - X_j) with the m=2 pair potential U.

    This is the interaction form of the free energy on the empirical measure;
    particle forces are exactly -N times its position gradient.
    """
    sched = state.schedule or kernels.schedule
    if sched.m != 2.0:
        raise ValueError("discrete energy is defined for m = 2 only")
    U = kernels.pair_kernel(include_viscosity=not appendix_a)
    s = _pairwise_value_sum(state, U)
    return float(s.sum()) / (2.0 * state.N**2)
