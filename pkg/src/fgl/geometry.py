"""Norm families on R^m, their duals, gradients and duality mappings.

All operations act on the last axis, so a batch of vectors of shape
``(..., m)`` is evaluated in one call.  Dual vectors are plain arrays as
well; which space they live in is a matter of which function produced them.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

KINDS = ("lp", "weighted_lp", "euclidean")

#: Pairs are generated in fixed-size chunks, each from its own stream keyed
#: by ``(seed, chunk_index)``.  Changing this breaks reproducibility.
CHUNK = 8192

MAG_RANGE = (-6.0, 6.0)


def conjugate(p: float) -> float:
    """Hölder conjugate p' = p/(p-1)."""
    return p / (p - 1.0)


@dataclass(frozen=True)
class NormFamily:
    """A norm on R^m with closed-form dual.

    ``tau`` and ``sigma`` are the *declared* smoothness and convexity
    exponents.  They default to ``min(p, 2)`` and ``max(p, 2)`` but may be
    overridden, e.g. to build a deliberately wrong declaration.
    """

    kind: str
    dim: int
    p: float = 2.0
    weights: tuple[float, ...] | None = None
    tau: float = field(default=None)  # type: ignore[assignment]
    sigma: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.kind == "euclidean" and self.p != 2.0:
            raise ValueError("euclidean norm has p = 2")
        if not 1.0 < self.p < np.inf:
            raise ValueError("p must lie in (1, inf)")
        if self.kind == "weighted_lp":
            if self.weights is None or len(self.weights) != self.dim:
                raise ValueError("weighted_lp needs one weight per coordinate")
            if not all(w > 0 and np.isfinite(w) for w in self.weights):
                raise ValueError("weights must be strictly positive")
        elif self.weights is not None:
            raise ValueError(f"{self.kind} takes no weights")
        if self.tau is None:
            object.__setattr__(self, "tau", min(self.p, 2.0))
        if self.sigma is None:
            object.__setattr__(self, "sigma", max(self.p, 2.0))
        if not 1.0 < self.tau <= 2.0:
            raise ValueError("tau must lie in (1, 2]")
        if not self.sigma >= 2.0:
            raise ValueError("sigma must be >= 2")

    @property
    def label(self) -> str:
        if self.kind == "euclidean":
            return f"euclidean(m={self.dim})"
        return f"{self.kind}(p={self.p:g},m={self.dim})"

    @property
    def _w(self) -> np.ndarray | None:
        return None if self.weights is None else np.asarray(self.weights, float)

    @property
    def _is_l2(self) -> bool:
        return self.p == 2.0 and self.weights is None


def lp(p: float, dim: int, *, tau: float | None = None, sigma: float | None = None) -> NormFamily:
    if p == 2.0 and tau is None and sigma is None:
        return NormFamily("lp", dim, 2.0)
    return NormFamily("lp", dim, float(p), tau=tau, sigma=sigma)


def weighted_lp(p: float, weights) -> NormFamily:
    w = tuple(float(v) for v in weights)
    return NormFamily("weighted_lp", len(w), float(p), w)


def euclidean(dim: int) -> NormFamily:
    return NormFamily("euclidean", dim, 2.0)


def dual_family(norm: NormFamily) -> NormFamily:
    """The dual norm as a family of the same type.

    The weighted l^p dual is l^{p'} with weights ``w**(1 - p')``; the
    declared exponents swap to ``(sigma', tau')``.
    """
    q = conjugate(norm.p)
    tau, sigma = conjugate(norm.sigma), conjugate(norm.tau)
    if norm.kind == "weighted_lp":
        w = tuple(float(v) ** (1.0 - q) for v in norm.weights)
        return NormFamily("weighted_lp", norm.dim, q, w, tau=tau, sigma=sigma)
    if norm.kind == "euclidean":
        return norm
    return NormFamily("lp", norm.dim, q, tau=tau, sigma=sigma)


def _check(norm: NormFamily, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != norm.dim:
        raise ValueError(f"expected last axis of length {norm.dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    return x


def _value(norm: NormFamily, x: np.ndarray) -> np.ndarray:
    # scaling by the largest entry keeps tiny and huge inputs out of under/overflow
    a = np.abs(x)
    s = np.max(a, axis=-1, keepdims=True)
    t = a / np.where(s > 0, s, 1.0)
    if norm._is_l2:
        return s[..., 0] * np.sqrt(np.sum(t * t, axis=-1))
    t = t ** norm.p
    if norm.weights is not None:
        t = t * norm._w
    return s[..., 0] * np.sum(t, axis=-1) ** (1.0 / norm.p)


def _power(norm: NormFamily, x: np.ndarray, e: float) -> np.ndarray:
    """rho(x)**e, computed without the root when e equals p."""
    if e == norm.p and norm._is_l2:
        return np.sum(x * x, axis=-1)
    return _value(norm, x) ** e


def eval_norm(norm: NormFamily, x) -> np.ndarray | float:
    """rho(x) along the last axis."""
    x = _check(norm, x)
    out = _value(norm, x)
    return float(out) if out.ndim == 0 else out


def eval_dual(norm: NormFamily, xs) -> np.ndarray | float:
    """rho_*(xs) = sup{<xs, x> : rho(x) = 1}."""
    return eval_norm(dual_family(norm), xs)


def _grad(norm: NormFamily, x: np.ndarray, r: np.ndarray) -> np.ndarray:
    # r = rho(x) with a trailing axis; callers guarantee r > 0
    if norm._is_l2:
        return x / r
    g = np.sign(x) * (np.abs(x) / r) ** (norm.p - 1.0)
    if norm.weights is not None:
        g = g * norm._w
    return g


def gradient(norm: NormFamily, x) -> np.ndarray:
    """D rho(x); undefined at the origin.

    For p < 2 a zero coordinate contributes 0, the limit of the formula.
    """
    x = _check(norm, x)
    r = _value(norm, x)[..., None]
    if np.any(r == 0):
        raise ValueError("gradient of a norm is undefined at the origin")
    return _grad(norm, x, r)


def duality_map(norm: NormFamily, gamma: float, x) -> np.ndarray:
    """j^gamma(x) = rho(x)^(gamma-1) D rho(x), with j(0) = 0."""
    if not gamma > 1:
        raise ValueError("gamma must exceed 1")
    x = _check(norm, x)
    r = _value(norm, x)[..., None]
    nz = r > 0
    safe = np.where(nz, r, 1.0)
    if norm._is_l2:
        # exact identity for gamma = 2
        out = safe ** (gamma - 2.0) * x
    else:
        out = safe ** (gamma - 1.0) * _grad(norm, x, safe)
    return np.where(nz, out, 0.0)


def inverse_duality_map(norm: NormFamily, gamma: float, xs) -> np.ndarray:
    """j_{rho_*}^{gamma'}(xs), the inverse of ``duality_map(norm, gamma, .)``."""
    if not gamma > 1:
        raise ValueError("gamma must exceed 1")
    return duality_map(dual_family(norm), conjugate(gamma), xs)


# ---------------------------------------------------------------------------
# randomized certification


@dataclass(frozen=True)
class RatioReport:
    min_ratio: float
    max_ratio: float
    sample_count: int
    seed: int
    parameters: dict
    skipped: int = 0

    CSV_HEADER = ("suite", "kind", "dim", "gamma", "exponent", "samples",
                  "seed", "min_ratio", "max_ratio", "skipped")

    def csv_row(self) -> list[str]:
        p = self.parameters
        return [p["suite"], p["norm"], str(p["dim"]), _g(p.get("gamma")),
                _g(p["exponent"]), str(self.sample_count), str(self.seed),
                _g(self.min_ratio), _g(self.max_ratio), str(self.skipped)]

    def growth(self, other: "RatioReport", side: str = "both") -> float:
        """Relative widening of the [min, max] window from ``self`` to ``other``.

        ``side`` = "lower" or "upper" measures only the bound a one-sided
        inequality certifies.
        """
        lo = self.min_ratio / other.min_ratio
        hi = other.max_ratio / self.max_ratio
        if side == "lower":
            return lo - 1.0
        if side == "upper":
            return hi - 1.0
        if side != "both":
            raise ValueError(f"unknown side {side!r}")
        return lo * hi - 1.0


def _g(v) -> str:
    return "" if v is None else format(float(v), ".17g")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FGL_THREADS", "1")))
    except ValueError:
        return 1


def _unit_directions(rng: np.random.Generator, k: int, m: int) -> np.ndarray:
    d = rng.standard_normal((k, m))
    nrm = np.sqrt(np.sum(d * d, axis=1, keepdims=True))
    return d / np.where(nrm > 0, nrm, 1.0)


def sample_pairs(seed: int, chunk: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """One chunk of sample pairs (x, y), each of shape (CHUNK, m).

    The first half of the chunk pairs independent points; the second half
    pairs each x with a nearby y = x + t |x| d, t log-uniform in [1e-6, 1].
    Directions are uniform on the Euclidean sphere, magnitudes log-uniform
    on [1e-6, 1e6].
    """
    rng = np.random.default_rng([seed, chunk])
    k = CHUNK // 2
    lo, hi = MAG_RANGE
    x = _unit_directions(rng, CHUNK, m) * 10.0 ** rng.uniform(lo, hi, (CHUNK, 1))
    y_far = _unit_directions(rng, k, m) * 10.0 ** rng.uniform(lo, hi, (k, 1))
    xn = np.sqrt(np.sum(x[k:] ** 2, axis=1, keepdims=True))
    y_near = x[k:] + _unit_directions(rng, CHUNK - k, m) * xn * 10.0 ** rng.uniform(lo, 0.0, (CHUNK - k, 1))
    return x, np.concatenate([y_far, y_near])


def _sweep(ratio_fn, m: int, samples: int, seed: int) -> tuple[float, float, int]:
    """Min/max of ratio_fn over ``samples`` seeded pairs.

    ratio_fn(x, y) returns (ratios, valid_mask).  Chunks are processed in a
    pool capped by FGL_THREADS; min/max are order independent so the result
    does not depend on scheduling.
    """
    if samples < 1:
        raise ValueError("no samples")
    nchunks = -(-samples // CHUNK)

    def run(c):
        x, y = sample_pairs(seed, c, m)
        take = min(CHUNK, samples - c * CHUNK)
        r, ok = ratio_fn(x[:take], y[:take])
        r = r[ok]
        if r.size == 0:
            return np.inf, -np.inf, take
        return float(r.min()), float(r.max()), int(take - ok.sum())

    threads = min(_threads(), nchunks)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, range(nchunks)))
    else:
        parts = [run(c) for c in range(nchunks)]
    lo = min(p[0] for p in parts)
    hi = max(p[1] for p in parts)
    return lo, hi, sum(p[2] for p in parts)


def v_ratio_sweep(norm: NormFamily, tau_exp: float, samples: int, seed: int) -> RatioReport:
    """Sample rho(rho(u)^t u - rho(v)^t v) / [(rho(u)+rho(v))^t rho(u-v)].

    Both sides of the two-sided V-functional estimate are homogeneous of
    degree t+1, so the ratio stays in a bounded window [c, C] with c > 0.
    """
    if not tau_exp > -1:
        raise ValueError("exponent must exceed -1")

    def ratio(u, v):
        ru, rv = _value(norm, u), _value(norm, v)
        num = _value(norm, ru[:, None] ** tau_exp * u - rv[:, None] ** tau_exp * v)
        den = (ru + rv) ** tau_exp * _value(norm, u - v)
        ok = np.any(u != v, axis=1) & (den > 0)
        return num / np.where(ok, den, 1.0), ok

    lo, hi, skipped = _sweep(ratio, norm.dim, samples, seed)
    params = dict(suite="v_ratio", norm=norm.label, dim=norm.dim, exponent=tau_exp)
    return RatioReport(lo, hi, samples, seed, params, skipped)


SWEEPS = ("sigma_convex", "tau_smooth", "dual_convex", "dual_smooth")

#: which end of the ratio window each sweep certifies
BOUND_SIDE = {"v_ratio": "both", "sigma_convex": "lower", "tau_smooth": "upper",
              "dual_convex": "lower", "dual_smooth": "upper"}


def xu_roach_sweep(norm: NormFamily, gamma: float, which: str, samples: int, seed: int) -> RatioReport:
    """Sample the power-type monotonicity/smoothness inequalities of j^gamma.

    ``sigma_convex``:  <j(x)-j(y), x-y> / [(rho x + rho y)^(g-s) rho(x-y)^s]
    ``tau_smooth``:    rho_*(j(x)-j(y)) / [(rho x + rho y)^(g-t) rho(x-y)^(t-1)]

    The ``dual_*`` variants run the same ratios for (rho_*, gamma') with the
    dual family's exponents (tau' for convexity, sigma' for smoothness).
    """
    if not gamma > 1:
        raise ValueError("gamma must exceed 1")
    if which not in SWEEPS:
        raise ValueError(f"unknown sweep {which!r}")
    space, g = (norm, gamma) if which in ("sigma_convex", "tau_smooth") else (
        dual_family(norm), conjugate(gamma))
    dual = dual_family(space)
    convex = which.endswith("convex")
    e = space.sigma if convex else space.tau

    def ratio(x, y):
        rx, ry = _value(space, x), _value(space, y)
        dj = duality_map(space, g, x) - duality_map(space, g, y)
        d = x - y
        if convex:
            num = np.sum(dj * d, axis=1)
            den = (rx + ry) ** (g - e) * _power(space, d, e)
        else:
            num = _value(dual, dj)
            den = (rx + ry) ** (g - e) * _value(space, d) ** (e - 1.0)
        ok = np.any(d != 0, axis=1) & (den > 0)
        return num / np.where(ok, den, 1.0), ok

    lo, hi, skipped = _sweep(ratio, norm.dim, samples, seed)
    params = dict(suite=which, norm=norm.label, dim=norm.dim, gamma=gamma, exponent=e)
    return RatioReport(lo, hi, samples, seed, params, skipped)


def estimate_modulus(norm: NormFamily, which: str, eps: float, samples: int, seed: int,
                     reference=None) -> float:
    """Monte-Carlo bound on the modulus of convexity or smoothness.

    One vector is pinned to ``reference`` (default e_1, normalised); the
    other is sampled on the unit sphere (convexity) or on the sphere of
    radius eps (smoothness).  For convexity the minimum over samples is an
    upper bound on the infimum; for smoothness the maximum is a lower bound
    on the supremum.  Only in the Euclidean case is the pinning lossless.
    """
    if samples < 1:
        raise ValueError("no samples")
    x = np.zeros(norm.dim)
    x[0] = 1.0
    if reference is not None:
        x = _check(norm, reference)
    x = x / _value(norm, x)
    rng = np.random.default_rng(seed)
    d = _unit_directions(rng, samples, norm.dim)
    y = d / _value(norm, d)[:, None]
    if which == "convexity":
        if not 0 <= eps <= 2:
            raise ValueError("eps must lie in [0, 2]")
        if eps == 0:
            return 0.0
        gap = 1.0 - _value(norm, 0.5 * (x + y))
        ok = _value(norm, x - y) >= eps
        return float(gap[ok].min()) if ok.any() else np.inf
    if which == "smoothness":
        if not eps > 0:
            raise ValueError("eps must be positive")
        y = eps * y
        val = 0.5 * (_value(norm, x + y) + _value(norm, x - y) - 2.0)
        return float(val.max())
    raise ValueError(f"unknown modulus {which!r}")


IDENTITIES = ("pairing", "dual_norm", "round_trip")


def identity_errors(norm: NormFamily, gamma: float, samples: int, seed: int) -> dict[str, float]:
    """Largest relative violations of the duality-map identities.

    ``pairing``     <j(x), x> = rho(x)^gamma
    ``dual_norm``   rho_*(j(x)) = rho(x)^(gamma-1)
    ``round_trip``  j_{rho_*}^{gamma'}(j(x)) = x, measured in rho
    """
    if samples < 1:
        raise ValueError("no samples")
    dual = dual_family(norm)
    worst = dict.fromkeys(IDENTITIES, 0.0)
    for c in range(-(-samples // CHUNK)):
        x, _ = sample_pairs(seed, c, norm.dim)
        x = x[:min(CHUNK, samples - c * CHUNK)]
        r = _value(norm, x)
        j = duality_map(norm, gamma, x)
        back = inverse_duality_map(norm, gamma, j)
        errs = {
            "pairing": np.abs(np.sum(j * x, axis=1) - r ** gamma) / r ** gamma,
            "dual_norm": np.abs(_value(dual, j) - r ** (gamma - 1.0)) / r ** (gamma - 1.0),
            "round_trip": _value(norm, back - x) / r,
        }
        for k, e in errs.items():
            worst[k] = max(worst[k], float(e.max()))
    return worst
