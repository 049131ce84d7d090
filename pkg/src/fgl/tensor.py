"""The norm F on X (x) R^n, stored as m x n arrays whose columns lie in X.

Two constructions are supported: ``l2_columns`` combines the column norms
rho(x_1), ..., rho(x_n) in l^2, and ``flat_lp`` takes l^p of all m*n
entries at once.  Arrays may carry leading batch axes: shape (..., m, n).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .geometry import NormFamily, conjugate

OUTER = ("l2_columns", "flat_lp")


@dataclass(frozen=True)
class TensorNormSpec:
    base: NormFamily
    outer: str = "l2_columns"

    def __post_init__(self):
        if self.outer not in OUTER:
            raise ValueError(f"unknown outer combination {self.outer!r}")
        if self.outer == "flat_lp" and self.base.weights is not None:
            raise ValueError("flat_lp needs an unweighted base")

    @property
    def m(self) -> int:
        return self.base.dim

    @property
    def tau(self) -> float:
        return self.base.tau

    @property
    def sigma(self) -> float:
        return self.base.sigma

    @property
    def label(self) -> str:
        return f"{self.outer}[{self.base.label}]"


def dual_spec(spec: TensorNormSpec) -> TensorNormSpec:
    """F_* as a spec: the same construction over the dual base norm."""
    return TensorNormSpec(geo.dual_family(spec.base), spec.outer)


def _check(spec: TensorNormSpec, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim < 2 or z.shape[-2] != spec.m:
        raise ValueError(f"expected shape (..., {spec.m}, n), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite input")
    return z


def _flat(spec: TensorNormSpec, z: np.ndarray) -> tuple[NormFamily, np.ndarray]:
    k = z.shape[-2] * z.shape[-1]
    return geo.lp(spec.base.p, k), z.reshape(z.shape[:-2] + (k,))


def _columns(z: np.ndarray) -> np.ndarray:
    return np.swapaxes(z, -1, -2)


def _value(spec: TensorNormSpec, z: np.ndarray) -> np.ndarray:
    if spec.outer == "flat_lp":
        fam, v = _flat(spec, z)
        return geo._value(fam, v)
    c = geo._value(spec.base, _columns(z))
    top = c.max(axis=-1, keepdims=True)
    safe = np.where(top > 0, top, 1.0)
    return safe[..., 0] * np.sqrt(np.sum((c / safe) ** 2, axis=-1))


def eval_F(spec: TensorNormSpec, z):
    z = _check(spec, z)
    out = _value(spec, z)
    return float(out) if out.ndim == 0 else out


def eval_F_dual(spec: TensorNormSpec, zs):
    """F_*(zs); for l2_columns the l^2 combination of rho_* column norms."""
    return eval_F(dual_spec(spec), zs)


def _j2(spec: TensorNormSpec, z: np.ndarray) -> np.ndarray:
    """F(z) DF(z), which is 0 at z = 0.

    For l2_columns, column i of DF is (rho(x_i)/F) D rho(x_i), so F DF is the
    columnwise rho(x_i) D rho(x_i) = j_rho^2(x_i); zero columns give 0.
    """
    if spec.outer == "flat_lp":
        fam, v = _flat(spec, z)
        return geo.duality_map(fam, 2.0, v).reshape(z.shape)
    return _columns(geo.duality_map(spec.base, 2.0, _columns(z)))


def gradient_F(spec: TensorNormSpec, z) -> np.ndarray:
    z = _check(spec, z)
    f = _value(spec, z)[..., None, None]
    if np.any(f == 0):
        raise ValueError("gradient of a norm is undefined at the origin")
    return _j2(spec, z) / f


def duality_map_F(spec: TensorNormSpec, gamma: float, z) -> np.ndarray:
    """j_F^gamma(z) = F(z)^(gamma-1) DF(z) = F(z)^(gamma-2) j_F^2(z).

    Note this is not the columnwise j_rho^gamma unless gamma = 2: the
    combined map scales every column by F(z)^(gamma-2), not by
    rho(x_i)^(gamma-2).
    """
    if not gamma > 1:
        raise ValueError("gamma must exceed 1")
    z = _check(spec, z)
    f = _value(spec, z)[..., None, None]
    nz = f > 0
    scale = np.where(nz, f, 1.0) ** (gamma - 2.0)
    return np.where(nz, scale * _j2(spec, z), 0.0)


def inverse_duality_map_F(spec: TensorNormSpec, gamma: float, zs) -> np.ndarray:
    return duality_map_F(dual_spec(spec), conjugate(gamma), zs)


def xi_norm(spec: TensorNormSpec, xi) -> np.ndarray:
    """|xi| in the sense F(x (x) xi) = rho(x) |xi| for this construction."""
    xi = np.asarray(xi, dtype=float)
    if spec.outer == "flat_lp":
        return geo._value(geo.lp(spec.base.p, xi.shape[-1]), xi)
    return np.sqrt(np.sum(xi * xi, axis=-1))


def rank_one_check(spec: TensorNormSpec, x, xi) -> tuple[float, float]:
    """(F(x (x) xi), rho(x) |xi|_2); equal for the l2_columns construction."""
    if spec.outer != "l2_columns":
        raise ValueError("rank-one identity is stated for l2_columns")
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    z = x[..., :, None] * xi[..., None, :]
    return eval_F(spec, z), geo.eval_norm(spec.base, x) * xi_norm(spec, xi)


def dual_representation_check(spec: TensorNormSpec, gamma: float, tau: float, z):
    """Both sides of

        F_*(j^g(z))^((g'-t')/t') j^g(z) = F(z)^((g-t')/t') j^2(z)

    returned as a pair of arrays.
    """
    z = _check(spec, z)
    if np.any(_value(spec, z) == 0):
        raise ValueError("z must be nonzero")
    gp, tp = conjugate(gamma), conjugate(tau)
    jg = duality_map_F(spec, gamma, z)
    lhs = (_value(dual_spec(spec), jg) ** ((gp - tp) / tp))[..., None, None] * jg
    rhs = (_value(spec, z) ** ((gamma - tp) / tp))[..., None, None] * _j2(spec, z)
    return lhs, rhs


def xu_roach_sweep_F(spec: TensorNormSpec, n: int, gamma: float, which: str,
                     samples: int, seed: int) -> geo.RatioReport:
    """``geometry.xu_roach_sweep`` for F on m x n arrays.

    Pairs come from the same seeded stream on R^(m n), reshaped to matrices.
    """
    if not gamma > 1:
        raise ValueError("gamma must exceed 1")
    if which not in geo.SWEEPS:
        raise ValueError(f"unknown sweep {which!r}")
    primal = which in ("sigma_convex", "tau_smooth")
    space, g = (spec, gamma) if primal else (dual_spec(spec), conjugate(gamma))
    dual = dual_spec(space)
    convex = which.endswith("convex")
    e = space.sigma if convex else space.tau
    m = spec.m

    def ratio(x, y):
        x, y = x.reshape(-1, m, n), y.reshape(-1, m, n)
        fx, fy = _value(space, x), _value(space, y)
        dj = duality_map_F(space, g, x) - duality_map_F(space, g, y)
        d = x - y
        fd = _value(space, d)
        if convex:
            num = np.sum(dj * d, axis=(1, 2))
            den = (fx + fy) ** (g - e) * fd ** e
        else:
            num = _value(dual, dj)
            den = (fx + fy) ** (g - e) * fd ** (e - 1.0)
        ok = (fd > 0) & (den > 0)
        return num / np.where(ok, den, 1.0), ok

    lo, hi, skipped = geo._sweep(ratio, m * n, samples, seed)
    params = dict(suite=which, norm=spec.label, dim=m * n, gamma=gamma, exponent=e)
    return geo.RatioReport(lo, hi, samples, seed, params, skipped)
