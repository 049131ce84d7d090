"""Built-in sources, boundary data, closed forms and checkpoints."""

from __future__ import annotations

import numpy as np

from .grid import Field, Grid

SOURCES = ("constant", "sines", "ramp")
BOUNDARIES = ("zero", "affine")


def source(name: str, grid: Grid, m: int, value: float = 1.0, axis: int = 0) -> Field:
    """Nodal samples of a smooth source, equal in every component.

    ``constant``  f = value
    ``sines``     f = value * prod_k sin(pi x_k)
    ``ramp``      f = value * x_axis
    """
    x = grid.coords()
    if name == "constant":
        s = np.full(grid.shape, float(value))
    elif name == "sines":
        s = value * np.prod(np.sin(np.pi * x), axis=-1)
    elif name == "ramp":
        if not 0 <= axis < grid.n:
            raise ValueError(f"ramp axis {axis} out of range")
        s = value * x[..., axis]
    else:
        raise ValueError(f"unknown source {name!r}; choose from {SOURCES}")
    return Field(grid, np.repeat(s[..., None], m, axis=-1))


def affine_field(grid: Grid, slope, offset=None) -> Field:
    """u(x) = slope @ x + offset with slope of shape (m, n)."""
    A = np.atleast_2d(np.asarray(slope, dtype=float))
    if A.shape[1] != grid.n:
        raise ValueError(f"slope must have {grid.n} columns")
    b = np.zeros(A.shape[0]) if offset is None else np.asarray(offset, dtype=float)
    return Field(grid, grid.coords() @ A.T + b)


def boundary(name: str, grid: Grid, m: int, slope=None, offset=None) -> Field:
    """Dirichlet data, stored as a full field; only boundary nodes matter.

    ``affine`` defaults to u = x_1 e_1.
    """
    if name == "zero":
        return Field(grid, np.zeros(grid.shape + (m,)))
    if name == "affine":
        if slope is None:
            slope = np.zeros((m, grid.n))
            slope[0, 0] = 1.0
        slope = np.asarray(slope, dtype=float).reshape(m, grid.n)
        return affine_field(grid, slope, offset)
    raise ValueError(f"unknown boundary {name!r}; choose from {BOUNDARIES}")


def closed_form_1d(gamma: float, x) -> np.ndarray:
    """Exact solution of -(|u'|^(gamma-2) u')' = 1 on (0,1), u(0) = u(1) = 0.

    Integrating once gives |u'|^(gamma-2) u' = 1/2 - x, hence
    u = (gamma-1)/gamma * [(1/2)^q - |x - 1/2|^q] with q = gamma/(gamma-1).
    """
    q = gamma / (gamma - 1.0)
    x = np.asarray(x, dtype=float)
    return (gamma - 1.0) / gamma * (0.5 ** q - np.abs(x - 0.5) ** q)


# ---------------------------------------------------------------------------
# checkpoints: plain text, one node per row, header records the shape


def save_checkpoint(u: Field, path) -> None:
    g = u.grid
    header = f"n={g.n} N={g.N} m={u.m}"
    np.savetxt(path, u.values.reshape(-1, u.m), fmt="%.17g", header=header)


def load_checkpoint(path) -> Field:
    with open(path) as fh:
        first = fh.readline().lstrip("#").split()
    meta = dict(t.split("=") for t in first)
    grid = Grid(int(meta["n"]), int(meta["N"]))
    m = int(meta["m"])
    vals = np.loadtxt(path, ndmin=2)
    return Field(grid, vals.reshape(grid.shape + (m,)))
