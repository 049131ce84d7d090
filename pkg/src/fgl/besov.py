"""Difference-quotient estimates of Besov smoothness for grid fields.

A field g belongs to B^{alpha,p}_infty(omega) when ||g - g(. + s e_k)||_{L^p(omega)}
decays like s^alpha.  The probe measures that norm over dyadic steps on the
interior window omega = [margin, 1 - margin]^n, takes the largest value over
the axis directions, and fits the slope on a log-log scale.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as tn
from .geometry import conjugate
from .grid import Field, GradientField, forward_gradient, restrict_interior

CAP = 0.95          # alpha_hat at or above this counts as the W^{1,p} cap
SLACK = 0.1         # allowed shortfall against a predicted exponent
REFIT_R2 = 0.99     # below this the two smallest steps are dropped
DEFAULT_MARGIN = 0.25

ValueNorm = Callable[[np.ndarray], np.ndarray]


def _value_axes(g: Field | GradientField) -> int:
    return 1 if isinstance(g, Field) else 2


def euclidean_value_norm(g: Field | GradientField) -> ValueNorm:
    k = _value_axes(g)
    return lambda d: np.sqrt(np.sum(d * d, axis=tuple(range(-k, 0))))


def _step_index(g, s: float) -> int:
    j = s / g.grid.h
    if j < 0.5 or abs(j - round(j)) > 1e-9 * max(1.0, j):
        raise ValueError(f"step {s} is not a positive multiple of the grid spacing")
    return int(round(j))


def difference_quotient_norm(g: Field | GradientField, k: int, s: float, p: float, margin: float,
                             value_norm: ValueNorm | None = None) -> float:
    """(sum_{x in omega} |g(x) - g(x + s e_k)|^p h^n)^(1/p)."""
    if not p >= 1:
        raise ValueError("p must be at least 1")
    if not 0 <= k < g.grid.n:
        raise ValueError(f"direction {k} out of range")
    j = _step_index(g, s)
    if s > margin + 1e-12:
        raise ValueError(f"step {s} exceeds the margin {margin}")
    vn = value_norm or euclidean_value_norm(g)
    r = restrict_interior(g, margin)
    shifted = list(r.index)
    sl = shifted[k]
    shifted[k] = slice(sl.start + j, sl.stop + j)
    d = r.values - g.values[tuple(shifted)]
    vals = vn(d)
    return float(np.sum(vals ** p) * r.weight) ** (1.0 / p)


def lp_window_norm(g: Field | GradientField, p: float, margin: float,
                   value_norm: ValueNorm | None = None, extend: float = 0.0) -> float:
    """||g||_{L^p} over [margin, 1 - margin + extend]^n (clipped to the grid)."""
    vn = value_norm or euclidean_value_norm(g)
    r = restrict_interior(g, margin)
    idx = tuple(slice(s.start, s.stop + int(round(extend / g.grid.h))) for s in r.index)
    vals = vn(g.values[idx])
    return float(np.sum(vals ** p) * g.grid.weight) ** (1.0 / p)


@dataclass
class QuotientCurve:
    """Quotient norms for integer steps ``steps`` (in units of h).

    ``per_direction[k, i]`` is the value along axis k at step i; ``values``
    is the maximum over directions.
    """

    h: float
    steps: np.ndarray
    per_direction: np.ndarray
    p: float
    margin: float

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=int)
        self.per_direction = np.atleast_2d(np.asarray(self.per_direction, dtype=float))
        if np.any(self.per_direction < 0):
            raise ValueError("quotient values must be nonnegative")
        if np.any(self.steps * self.h > self.margin + 1e-12):
            raise ValueError("offset exceeds the margin")

    @property
    def sizes(self) -> np.ndarray:
        return self.steps * self.h

    @property
    def values(self) -> np.ndarray:
        return self.per_direction.max(axis=0)

    @property
    def offsets(self) -> list[tuple[int, float]]:
        return [(k, float(s)) for k in range(self.per_direction.shape[0]) for s in self.sizes]

    @classmethod
    def synthetic(cls, sizes, values, p: float = 2.0, margin: float = DEFAULT_MARGIN) -> "QuotientCurve":
        """Curve with given step sizes and values, for calibration."""
        sizes = np.asarray(sizes, dtype=float)
        h = float(sizes.min())
        return cls(h, np.rint(sizes / h).astype(int), np.asarray(values, float)[None, :], p, margin)


def dyadic_steps(h: float, margin: float) -> list[int]:
    out, j = [], 1
    while j * h <= 0.5 * margin + 1e-12:
        out.append(j)
        j *= 2
    return out


def quotient_curve(g: Field | GradientField, p: float, margin: float = DEFAULT_MARGIN,
                   steps: Sequence[int] | None = None, value_norm: ValueNorm | None = None) -> QuotientCurve:
    h = g.grid.h
    steps = list(steps) if steps is not None else dyadic_steps(h, margin)
    vals = [[difference_quotient_norm(g, k, j * h, p, margin, value_norm) for j in steps]
            for k in range(g.grid.n)]
    return QuotientCurve(h, np.array(steps), np.array(vals), p, margin)


@dataclass
class BesovEstimate:
    alpha_hat: float
    intercept: float
    r_squared: float
    window: tuple[float, float]
    infinite: bool = False
    full_window: "BesovEstimate | None" = None   # first fit when a refit happened

    def __post_init__(self):
        if not (0.0 <= self.r_squared <= 1.0 or math.isnan(self.r_squared)):
            raise ValueError("r_squared must lie in [0, 1]")


def _linear_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    slope, intercept = np.polyfit(x, y, 1)
    res = y - (slope * x + intercept)
    tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 if tot == 0 else 1.0 - float(np.sum(res * res)) / float(tot)
    return float(slope), float(intercept), min(max(r2, 0.0), 1.0)


def exponent_fit(curve: QuotientCurve) -> BesovEstimate:
    """Least-squares slope of log value against log step.

    A curve of zeros is infinitely regular.  When R^2 < 0.99 and enough
    steps remain, the two smallest steps are dropped and the fit repeated;
    the first fit is kept in ``full_window``.
    """
    s, v = curve.sizes, curve.values
    if len(np.unique(s)) < 4:
        raise ValueError("need at least 4 distinct steps")
    window = (float(s.min()), float(s.max()))
    if np.any(v == 0):
        return BesovEstimate(math.inf, -math.inf, 1.0, window, infinite=True)
    x, y = np.log(s), np.log(v)
    a, c, r2 = _linear_fit(x, y)
    est = BesovEstimate(a, c, r2, window)
    if r2 < REFIT_R2 and len(s) >= 6:
        order = np.argsort(s)[2:]
        a2, c2, r22 = _linear_fit(x[order], y[order])
        est = BesovEstimate(a2, c2, r22, (float(s[order].min()), float(s[order].max())),
                            full_window=est)
    return est


# ---------------------------------------------------------------------------
# predictions and the regularity table


@dataclass(frozen=True)
class Prediction:
    quantity: str
    alpha: float
    p: float
    norm: str                  # "F" or "F*": value norm used to probe it
    in_hypothesis: bool = True


@dataclass(frozen=True)
class PredictionSet:
    gamma: float
    tau: float
    sigma: float
    rows: tuple[Prediction, ...]

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, name: str) -> Prediction:
        for r in self.rows:
            if r.quantity == name:
                return r
        raise KeyError(name)


QUANTITIES = ("flux", "Du", "V", "W")


def predicted_exponents(gamma: float, tau: float, sigma: float) -> PredictionSet:
    """Lower bounds on Besov smoothness of the four fields built from Du.

    flux = j_F^gamma(Du)                   in L^gamma'
    Du                                     in L^gamma
    V    = F(Du)^((gamma-sigma)/sigma) Du  in L^sigma
    W    = F(Du)^(gamma/tau') DF(Du)       in L^tau'

    The last bound is only established for gamma <= sigma in the general
    statement; rows outside that range are marked.
    """
    if not gamma > 1:
        raise ValueError("gamma must exceed 1")
    if not 1 < tau <= 2:
        raise ValueError("tau must lie in (1, 2]")
    if not sigma >= 2:
        raise ValueError("sigma must be at least 2")
    lo = min(gamma, tau)
    tp = conjugate(tau)
    rows = (
        Prediction("flux", lo - 1.0, conjugate(gamma), "F*"),
        Prediction("Du", lo / max(gamma, sigma), gamma, "F"),
        Prediction("V", lo / sigma, sigma, "F"),
        Prediction("W", lo / tp, tp, "F*", in_hypothesis=gamma <= sigma),
    )
    return PredictionSet(gamma, tau, sigma, rows)


def _power_scaled(F: np.ndarray, e: float, z: np.ndarray) -> np.ndarray:
    nz = F > 0
    scale = np.where(nz, np.where(nz, F, 1.0) ** e, 0.0)
    return scale[..., None, None] * z


def derived_fields(spec, u: Field) -> dict[str, GradientField]:
    """The four probed fields of a solution u (at zero regularization)."""
    T, g = spec.tensor, spec.gamma
    Du = forward_gradient(u).values
    F = tn._value(T, Du)
    j2 = tn._j2(T, Du)
    grid = u.grid
    return {
        "flux": GradientField(grid, _power_scaled(F, g - 2.0, j2)),
        "Du": GradientField(grid, Du),
        "V": GradientField(grid, _power_scaled(F, (g - T.sigma) / T.sigma, Du)),
        "W": GradientField(grid, _power_scaled(F, g / conjugate(T.tau) - 1.0, j2)),
    }


def _norm_fn(spec, which: str) -> ValueNorm:
    T = spec.tensor if which == "F" else tn.dual_spec(spec.tensor)
    return lambda d: tn._value(T, d)


@dataclass
class RegularityRow:
    quantity: str
    p: float
    predicted_alpha: float
    measured_alpha: float
    r_squared: float
    window: tuple[float, float]
    passed: bool
    note: str = ""
    estimate: BesovEstimate | None = field(default=None, repr=False)

    CSV_HEADER = ("quantity", "p", "predicted_alpha", "measured_alpha", "r_squared", "window", "pass", "note")

    def csv_row(self) -> list[str]:
        w = f"{self.window[0]:.17g}:{self.window[1]:.17g}"
        return [self.quantity, f"{self.p:.17g}", f"{self.predicted_alpha:.17g}",
                f"{self.measured_alpha:.17g}", f"{self.r_squared:.17g}", w,
                "1" if self.passed else "0", self.note]


def passes(alpha: float, est: BesovEstimate) -> bool:
    return est.infinite or est.alpha_hat >= alpha - SLACK or est.alpha_hat >= CAP


def regularity_table(spec, u: Field, margin: float = DEFAULT_MARGIN,
                     steps: Sequence[int] | None = None) -> list[RegularityRow]:
    """Probe each derived field with its own exponent and value norm."""
    T = spec.tensor
    preds = predicted_exponents(spec.gamma, T.tau, T.sigma)
    fields = derived_fields(spec, u)
    rows = []
    for pr in preds:
        note = "" if pr.in_hypothesis else "outside stated hypothesis (body theorem)"
        try:
            curve = quotient_curve(fields[pr.quantity], pr.p, margin, steps, _norm_fn(spec, pr.norm))
            est = exponent_fit(curve)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            rows.append(RegularityRow(pr.quantity, pr.p, pr.alpha, math.nan, math.nan,
                                      (math.nan, math.nan), False, f"error: {exc}"))
            continue
        if est.full_window is not None:
            fw = est.full_window
            extra = f"full window {fw.window[0]:.6g}:{fw.window[1]:.6g} alpha {fw.alpha_hat:.6g} r2 {fw.r_squared:.6g}"
            note = f"{note}; {extra}" if note else extra
        if est.infinite:
            note = f"{note}; infinitely regular" if note else "infinitely regular"
        rows.append(RegularityRow(pr.quantity, pr.p, pr.alpha, est.alpha_hat, est.r_squared,
                                  est.window, passes(pr.alpha, est), note, est))
    return rows


def regularity_report(spec, report, margin: float = DEFAULT_MARGIN,
                      steps: Sequence[int] | None = None) -> list[RegularityRow]:
    return regularity_table(spec, report.u, margin, steps)


def write_regularity_csv(rows: Sequence[RegularityRow], path, prefix: dict | None = None) -> None:
    """One line per row; ``prefix`` columns (e.g. gamma, p) lead each line."""
    prefix = prefix or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*prefix.keys(), *RegularityRow.CSV_HEADER])
        for r in rows:
            w.writerow([*(_fmt(v) for v in prefix.values()), *r.csv_row()])


def _fmt(v) -> str:
    return format(v, ".17g") if isinstance(v, float) else str(v)
