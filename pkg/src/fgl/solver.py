"""Discrete weak solutions of the Finsler gamma-Laplacian by energy descent.

The discrete energy is

    E_eps(u) = sum_cells g_eps(F(Du)) h^n - sum_nodes <f, u> h^n,
    g_eps(t) = (t^2 + eps^2)^(gamma/2) / gamma,

whose stationarity condition is the weak form tested against nodal hat
functions.  ``minimize`` runs gradient descent with Armijo backtracking and
eps-continuation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry as geo
from . import tensor as tn
from .grid import Field, Grid, GradientField, adjoint_divergence, forward_gradient
from .tensor import TensorNormSpec

log = logging.getLogger(__name__)


@dataclass
class ProblemSpec:
    grid: Grid
    tensor: TensorNormSpec
    gamma: float
    f: Field
    boundary: Field

    def __post_init__(self):
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")
        m = self.tensor.m
        for name, fld in (("f", self.f), ("boundary", self.boundary)):
            if fld.grid != self.grid or fld.m != m:
                raise ValueError(f"{name} does not match grid / dimension m={m}")


METRICS = ("kacanov", "h1", "l2")


@dataclass
class SolverConfig:
    eps0: float = 1e-1
    eps_levels: int = 12
    grad_tol: float = 1e-8
    max_iters: int = 200_000
    seed: int = 0
    metric: str = "kacanov"
    armijo: float = 1e-4

    def __post_init__(self):
        if not (self.eps0 > 0 and self.grad_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.eps_levels < 1 or self.max_iters < 0:
            raise ValueError("eps_levels >= 1 and max_iters >= 0 required")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")

    def eps(self, k: int) -> float:
        return self.eps0 * 2.0 ** (-k)


@dataclass
class SolveReport:
    u: Field
    energy_trace: np.ndarray
    final_eps: float
    weak_residual: float
    iterations: int
    converged: bool
    level_trace: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    grad_norm: float = np.nan

    def write_trace_csv(self, path, eps0: float) -> None:
        with open(path, "w") as fh:
            fh.write("step,level,eps,energy\n")
            for i, (lv, e) in enumerate(zip(self.level_trace, self.energy_trace)):
                fh.write(f"{i},{lv},{eps0 * 2.0 ** (-int(lv)):.17g},{e:.17g}\n")


# ---------------------------------------------------------------------------
# energy and its gradient


def _cell_terms(spec: ProblemSpec, eps: float, Du: np.ndarray):
    """Per-cell integrand g_eps(F) and flux (F^2+eps^2)^((g-2)/2) F DF."""
    g = spec.gamma
    F = tn._value(spec.tensor, Du)
    s = F * F + eps * eps
    pos = s > 0
    safe = np.where(pos, s, 1.0)
    dens = np.where(pos, safe ** (0.5 * g) / g, 0.0)
    scale = np.where(pos, safe ** (0.5 * (g - 2.0)), 0.0)
    flux = scale[..., None, None] * tn._j2(spec.tensor, Du)
    return dens, flux


def energy(spec: ProblemSpec, eps: float, u: Field) -> float:
    Du = forward_gradient(u).values
    F = tn._value(spec.tensor, Du)
    dens = (F * F + eps * eps) ** (0.5 * spec.gamma) / spec.gamma
    w = spec.grid.weight
    return float(np.sum(dens) * w - np.sum(spec.f.values * u.values) * w)


def flux(spec: ProblemSpec, eps: float, u: Field) -> GradientField:
    _, fl = _cell_terms(spec, eps, forward_gradient(u).values)
    return GradientField(spec.grid, fl)


def energy_gradient(spec: ProblemSpec, eps: float, u: Field) -> Field:
    """D^T flux - f at interior nodes, 0 on the boundary.

    This is the h^n-weighted representative: the directional derivative of
    ``energy`` along v is h^n <energy_gradient, v>.
    """
    r = adjoint_divergence(flux(spec, eps, u)).values - spec.f.values
    r[~spec.grid.interior_mask()] = 0.0
    return Field(spec.grid, r)


def hat_norm(spec: ProblemSpec) -> float:
    """||D phi||_{L^gamma'} of an interior nodal hat function."""
    g = spec.grid
    e = np.zeros(g.shape + (1,))
    e[(g.N // 2,) * g.n] = 1.0
    xi = forward_gradient(Field(g, e)).values[..., 0, :]
    q = geo.conjugate(spec.gamma)
    return float(np.sum(tn.xi_norm(spec.tensor, xi) ** q) * g.weight) ** (1.0 / q)


def residual_norm(spec: ProblemSpec, r: Field) -> float:
    """max over hat tests x*phi_i, rho(x) = 1, of |<r, x phi_i>| h^n / ||D phi_i||."""
    inner = r.values[spec.grid.interior_mask()]
    if inner.size == 0:
        return 0.0
    dual = geo._value(geo.dual_family(spec.tensor.base), inner)
    return float(dual.max() * spec.grid.weight / hat_norm(spec))


def weak_residual(spec: ProblemSpec, u: Field) -> float:
    """Weak-form violation of u at eps = 0 (flux(0) = 0)."""
    return residual_norm(spec, energy_gradient(spec, 0.0, u))


# ---------------------------------------------------------------------------
# minimization


class _Riesz:
    """Inverse of the weighted Dirichlet form D^T diag(a) D on interior nodes.

    ``a`` is one weight per cell (default 1); it multiplies every column of
    the cell gradient alike.
    """

    def __init__(self, grid: Grid, a: np.ndarray | None = None):
        D = grid.gradient_matrix
        idx = np.flatnonzero(grid.interior_mask().ravel())
        if a is None:
            L = D.T @ D
        else:
            L = D.T @ sp.diags(np.repeat(a.ravel(), grid.n)) @ D
        L = L.tocsc()
        self.idx = idx
        self.full = L
        self.lu = spla.splu(L[idx][:, idx].tocsc())

    def solve(self, r: np.ndarray) -> np.ndarray:
        return self.lu.solve(r)


def harmonic_extension(boundary: Field, riesz: _Riesz | None = None) -> Field:
    """Discrete harmonic (gamma = 2, Euclidean) extension of boundary data."""
    g = boundary.grid
    riesz = riesz or _Riesz(g)
    v = boundary.values.reshape(-1, boundary.m).copy()
    mask = g.interior_mask().ravel()
    v[mask] = 0.0
    rhs = -(riesz.full @ v)[riesz.idx]
    v[mask] = riesz.solve(rhs)
    return Field(g, v.reshape(boundary.values.shape))


def _coefficient(spec: ProblemSpec, eps: float, u: Field) -> np.ndarray:
    """(F(Du)^2 + eps^2)^((gamma-2)/2) per cell, floored away from 0."""
    F = tn._value(spec.tensor, forward_gradient(u).values)
    s = F * F + eps * eps
    a = np.where(s > 0, s, 1.0) ** (0.5 * (spec.gamma - 2.0))
    return np.maximum(a, 1e-12 * a.max())


def _initial_step(metric: str, grid: Grid) -> float:
    return grid.h ** 2 if metric == "l2" else 1.0


def _trial_step(metric: str, gamma: float, last: float) -> float:
    # Relative to the frozen-coefficient metric the energy Hessian lies
    # between a and (gamma-1) a, so 2/gamma is the balanced fixed step.
    if metric == "kacanov":
        return 2.0 / gamma
    return min(2.0 * last, 1e8)


def minimize(spec: ProblemSpec, config: SolverConfig | None = None, u0: Field | None = None) -> SolveReport:
    """Gradient descent with Armijo backtracking under eps-continuation.

    The search direction is the gradient of the energy with respect to the
    chosen inner product on interior nodes:

    ``kacanov``  sum_c a_c <Dv_c, Dw_c> h^n with the frozen coefficient
                 a = (F(Du)^2 + eps^2)^((gamma-2)/2) of the current iterate
    ``h1``       sum_c <Dv_c, Dw_c> h^n, the discrete H^1_0 product
    ``l2``       sum_i <v_i, w_i> h^n, the plain nodal product

    Trial steps start at 2/gamma for ``kacanov`` and at twice the last
    accepted step otherwise, then halve until the Armijo condition holds.
    Non-convergence is reported, not raised.
    """
    cfg = config or SolverConfig()
    grid = spec.grid
    w = grid.weight
    riesz = _Riesz(grid)
    mask = grid.interior_mask()
    if u0 is None:
        u = harmonic_extension(spec.boundary, riesz)
    else:
        u = u0.copy()
        u.values[~mask] = spec.boundary.values[~mask]

    energies: list[float] = []
    levels: list[int] = []
    iters = 0
    gnorm = np.inf
    stalled = False
    hn = hat_norm(spec)
    dual_base = geo.dual_family(spec.tensor.base)
    t = _initial_step(cfg.metric, grid)

    def dual_norm(r):
        return float(geo._value(dual_base, r[mask]).max() * w / hn)

    for k in range(cfg.eps_levels):
        eps = cfg.eps(k)
        E = energy(spec, eps, u)
        energies.append(E)
        levels.append(k)
        stalled = False
        while True:
            r = energy_gradient(spec, eps, u).values
            gnorm = dual_norm(r)
            if gnorm <= cfg.grad_tol or iters >= cfg.max_iters:
                break
            ri = r[mask]
            if cfg.metric == "kacanov":
                d = _Riesz(grid, _coefficient(spec, eps, u)).solve(ri)
            elif cfg.metric == "h1":
                d = riesz.solve(ri)
            else:
                d = ri
            slope = w * float(np.sum(ri * d))
            t = _trial_step(cfg.metric, spec.gamma, t)
            trial = u.copy()
            for _ in range(200):
                trial.values[mask] = u.values[mask] - t * d
                Et = energy(spec, eps, trial)
                if Et <= E - cfg.armijo * t * slope and Et < E:
                    break
                # E is convex along the ray, so E(t) - E(0) <= t E'(t): a
                # slope test certifies sufficient decrease once energy
                # differences are lost in rounding.
                if Et <= E:
                    rt = energy_gradient(spec, eps, trial).values[mask]
                    if -w * float(np.sum(rt * d)) <= -cfg.armijo * slope:
                        break
                t *= 0.5
            else:
                stalled = True
            iters += 1
            if stalled:
                t = _initial_step(cfg.metric, grid)
                break
            u, E = trial, Et
            energies.append(E)
            levels.append(k)
        log.debug("level %d eps=%.3g iters=%d grad=%.3g", k, eps, iters, gnorm)
        if iters >= cfg.max_iters:
            break

    final_eps = cfg.eps(min(k, cfg.eps_levels - 1))
    converged = gnorm <= cfg.grad_tol and k == cfg.eps_levels - 1
    return SolveReport(
        u=u,
        energy_trace=np.array(energies),
        final_eps=final_eps,
        weak_residual=weak_residual(spec, u),
        iterations=iters,
        converged=bool(converged),
        level_trace=np.array(levels, dtype=int),
        grad_norm=gnorm,
    )
