"""Uniform grids on (0,1)^n, vector-valued node fields and cell gradients.

Node fields have shape ``(N,)*n + (m,)``; cell gradients have shape
``(N-1,)*n + (m, n)`` with column k holding the derivative along x_k.
In 2D the x_k difference is averaged over the two cell edges parallel to
x_k, which makes the gradient exact on affine fields.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Grid:
    n: int
    N: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("only n = 1 or 2 is supported")
        if self.N < 3:
            raise ValueError("need at least 3 nodes per side")

    @property
    def h(self) -> float:
        return 1.0 / (self.N - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return (self.N - 1,) * self.n

    @property
    def weight(self) -> float:
        """Quadrature weight h^n of one node or cell."""
        return self.h ** self.n

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (n,)``."""
        x = np.arange(self.N) * self.h
        return np.stack(np.meshgrid(*([x] * self.n), indexing="ij"), axis=-1)

    def cell_centers(self) -> np.ndarray:
        x = (np.arange(self.N - 1) + 0.5) * self.h
        return np.stack(np.meshgrid(*([x] * self.n), indexing="ij"), axis=-1)

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[(slice(1, -1),) * self.n] = True
        return mask

    @cached_property
    def gradient_matrix(self) -> sp.csr_matrix:
        """Sparse D with (D u)[cell, k] = cell gradient column k, scalar u."""
        N, n, h = self.N, self.n, self.h
        if n == 1:
            e = np.ones(N - 1)
            return sp.diags([-e / h, e / h], [0, 1], shape=(N - 1, N)).tocsr()
        d1 = sp.diags([-np.ones(N - 1), np.ones(N - 1)], [0, 1], shape=(N - 1, N)) / h
        a1 = sp.diags([0.5 * np.ones(N - 1), 0.5 * np.ones(N - 1)], [0, 1], shape=(N - 1, N))
        dx = sp.kron(d1, a1)
        dy = sp.kron(a1, d1)
        # interleave so row = cell * n + k
        rows = sp.vstack([dx, dy]).tocsr()
        ncell = (N - 1) ** 2
        perm = np.arange(2 * ncell).reshape(2, ncell).T.ravel()
        return rows[perm]


@dataclass
class Field:
    """Node values of an R^m-valued function; boundary nodes carry the trace."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[:-1] != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())


@dataclass
class GradientField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        g = self.grid
        if self.values.shape[:g.n] != g.cell_shape or self.values.shape[-1] != g.n:
            raise ValueError(f"gradient shape {self.values.shape} does not match grid")


def forward_gradient(u: Field) -> GradientField:
    g, v = u.grid, u.values
    h = g.h
    if g.n == 1:
        d = (v[1:] - v[:-1]) / h
        return GradientField(g, d[..., None])
    dx = 0.5 * ((v[1:, :-1] - v[:-1, :-1]) + (v[1:, 1:] - v[:-1, 1:])) / h
    dy = 0.5 * ((v[:-1, 1:] - v[:-1, :-1]) + (v[1:, 1:] - v[1:, :-1])) / h
    return GradientField(g, np.stack([dx, dy], axis=-1))


def adjoint_divergence(G: GradientField) -> Field:
    """Transpose of ``forward_gradient``: <Du, G>_cells = <u, D^T G>_nodes.

    The identity holds for every u, boundary nodes included; D^T G is a
    discrete -div G.
    """
    g, w = G.grid, G.values
    h = g.h
    out = np.zeros(g.shape + (w.shape[-2],))
    if g.n == 1:
        c = w[..., 0] / h
        out[1:] += c
        out[:-1] -= c
        return Field(g, out)
    cx = 0.5 * w[..., 0] / h
    cy = 0.5 * w[..., 1] / h
    out[1:, :-1] += cx
    out[1:, 1:] += cx
    out[:-1, :-1] -= cx
    out[:-1, 1:] -= cx
    out[:-1, 1:] += cy
    out[1:, 1:] += cy
    out[:-1, :-1] -= cy
    out[1:, :-1] -= cy
    return Field(g, out)


@dataclass
class Restriction:
    """Values of a node or cell field on the points at distance >= margin
    from the boundary.  ``index`` holds the retained index range per axis."""

    coords: np.ndarray
    values: np.ndarray
    index: tuple[slice, ...]
    weight: float

    @property
    def measure(self) -> float:
        return int(np.prod(self.coords.shape[:-1])) * self.weight


def _window(x: np.ndarray, margin: float) -> slice:
    tol = 1e-12
    keep = np.nonzero((x >= margin - tol) & (x <= 1.0 - margin + tol))[0]
    if keep.size == 0:
        raise ValueError("empty restriction")
    return slice(int(keep[0]), int(keep[-1]) + 1)


def restrict_interior(field: Field | GradientField, margin: float) -> Restriction:
    if not 0 <= margin < 0.5:
        raise ValueError("margin must lie in [0, 1/2)")
    g = field.grid
    if isinstance(field, GradientField):
        x = (np.arange(g.N - 1) + 0.5) * g.h
        pts = g.cell_centers()
    else:
        x = np.arange(g.N) * g.h
        pts = g.coords()
    s = _window(x, margin)
    idx = (s,) * g.n
    return Restriction(pts[idx], field.values[idx], idx, g.weight)


# ---------------------------------------------------------------------------
# CSV


def write_field_csv(field: Field, path) -> None:
    g = field.grid
    xs = g.coords().reshape(-1, g.n)
    vs = field.values.reshape(-1, field.m)
    head = [f"x{k + 1}" for k in range(g.n)] + [f"u{a + 1}" for a in range(field.m)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for x, v in zip(xs, vs):
            w.writerow([format(t, ".17g") for t in (*x, *v)])


def read_field_csv(path) -> Field:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, data = rows[0], np.array(rows[1:], dtype=float)
    n = sum(1 for c in head if c.startswith("x"))
    npts = data.shape[0]
    N = int(round(npts ** (1.0 / n)))
    if N ** n != npts:
        raise ValueError("field CSV is not a full tensor grid")
    grid = Grid(n, N)
    return Field(grid, data[:, n:].reshape(grid.shape + (-1,)))
