"""Space-time grids, nodal fields, lumped quadrature and field CSV files.

The spatial domain is the unit box ``(0, 1)^d`` with homogeneous Dirichlet
data, so only interior nodes are stored.  Time levels ``k = 1..n_t`` are
stored; level 0 (the initial datum) lives separately in the problem.

Space-time values have shape ``(n_t, n_x**d)``.  In two dimensions node
``(i0, i1)`` sits at flat index ``i0 * n_x + i1`` and at coordinates
``((i0 + 1) h, (i1 + 1) h)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .errors import GridMismatchError, InvalidInputError

SPACE_TIME = "space-time"
TERMINAL = "terminal"

NormKind = Literal["L1", "L2", "Linf"]
Domain = Literal["Q", "OmegaT"]


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform tensor grid of ``Q = (0,1)^d x (0,T)``.

    Parameters
    ----------
    d : int
        Spatial dimension, 1 or 2.
    n_x : int
        Interior nodes per axis.
    n_t : int
        Number of implicit time steps.
    T : float
        Final time.
    """

    d: int
    n_x: int
    n_t: int
    T: float = 1.0

    def __post_init__(self):
        if self.d not in (1, 2):
            raise InvalidInputError(f"dimension must be 1 or 2, got {self.d}")
        if int(self.n_x) != self.n_x or self.n_x < 1:
            raise InvalidInputError(f"n_x must be a positive integer, got {self.n_x}")
        if int(self.n_t) != self.n_t or self.n_t < 1:
            raise InvalidInputError(f"n_t must be a positive integer, got {self.n_t}")
        if not (np.isfinite(self.T) and self.T > 0):
            raise InvalidInputError(f"T must be positive, got {self.T}")
        object.__setattr__(self, "n_x", int(self.n_x))
        object.__setattr__(self, "n_t", int(self.n_t))
        object.__setattr__(self, "T", float(self.T))

    @property
    def h(self) -> float:
        return 1.0 / (self.n_x + 1)

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def n_space(self) -> int:
        return self.n_x**self.d

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_t, self.n_space)

    @property
    def cell_volume(self) -> float:
        """Spatial quadrature weight ``h^d``."""
        return self.h**self.d

    @property
    def weight(self) -> float:
        """Space-time quadrature weight ``h^d dt``."""
        return self.cell_volume * self.dt

    @property
    def omega_measure(self) -> float:
        """Discrete measure ``|Omega|_h = h^d n_x^d``."""
        return self.cell_volume * self.n_space

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, self.n_t + 1)

    def coordinates(self) -> np.ndarray:
        """Interior node coordinates, shape ``(n_space, d)``."""
        x = self.h * np.arange(1, self.n_x + 1)
        if self.d == 1:
            return x[:, None]
        x0, x1 = np.meshgrid(x, x, indexing="ij")
        return np.column_stack([x0.ravel(), x1.ravel()])

    def node_indices(self) -> np.ndarray:
        """Integer multi-indices of interior nodes, shape ``(n_space, d)``."""
        i = np.arange(self.n_x)
        if self.d == 1:
            return i[:, None]
        i0, i1 = np.meshgrid(i, i, indexing="ij")
        return np.column_stack([i0.ravel(), i1.ravel()])

    def evaluate(self, fn: Callable, kind: str = SPACE_TIME) -> "Field":
        """Sample ``fn(x, t)`` (or ``fn(x)`` for terminal slices) at the nodes.

        ``x`` has shape ``(n_space, d)``; index it as ``x[..., j]``.  For
        space-time fields ``t`` has shape ``(n_t, 1)``.
        """
        x = self.coordinates()
        if kind == TERMINAL:
            vals = np.broadcast_to(np.asarray(fn(x), dtype=float), (self.n_space,))
        else:
            t = self.times[:, None]
            vals = np.broadcast_to(np.asarray(fn(x, t), dtype=float), self.shape)
        return Field(self, np.array(vals), kind)

    def zeros(self, kind: str = SPACE_TIME) -> "Field":
        shape = (self.n_space,) if kind == TERMINAL else self.shape
        return Field(self, np.zeros(shape), kind)

    def full(self, value: float, kind: str = SPACE_TIME) -> "Field":
        shape = (self.n_space,) if kind == TERMINAL else self.shape
        return Field(self, np.full(shape, float(value)), kind)


class Field:
    """Nodal grid function on interior nodes.

    A space-time field holds levels ``1..n_t``; a terminal field holds one
    spatial slice.  Values are copied on construction and are read-only.
    """

    __slots__ = ("grid", "values", "kind")

    def __init__(self, grid: SpaceTimeGrid, values, kind: str = SPACE_TIME):
        if kind not in (SPACE_TIME, TERMINAL):
            raise InvalidInputError(f"unknown field kind {kind!r}")
        arr = np.array(values, dtype=float)
        expected = (grid.n_space,) if kind == TERMINAL else grid.shape
        if arr.shape != expected:
            raise InvalidInputError(f"{kind} field needs shape {expected}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("field contains NaN or Inf")
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr
        self.kind = kind

    def __repr__(self):
        return f"Field(kind={self.kind!r}, grid={self.grid!r})"

    @property
    def is_terminal(self) -> bool:
        return self.kind == TERMINAL

    def terminal(self) -> "Field":
        """Slice at the final level ``n_t`` (identity on terminal fields)."""
        if self.is_terminal:
            return self
        return Field(self.grid, self.values[-1], TERMINAL)

    def with_values(self, values) -> "Field":
        return Field(self.grid, values, self.kind)

    def _peer(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid or other.kind != self.kind:
                raise GridMismatchError("fields live on different grids or kinds")
            return other.values
        return other

    def __add__(self, other):
        return self.with_values(self.values + self._peer(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.with_values(self.values - self._peer(other))

    def __rsub__(self, other):
        return self.with_values(self._peer(other) - self.values)

    def __mul__(self, other):
        return self.with_values(self.values * self._peer(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.with_values(self.values / self._peer(other))

    def __neg__(self):
        return self.with_values(-self.values)

    def __abs__(self):
        return self.with_values(np.abs(self.values))


def _check_same(f: Field, g: Field):
    if f.grid != g.grid:
        raise GridMismatchError("fields live on different grids")
    if f.kind != g.kind:
        raise GridMismatchError(f"cannot pair a {f.kind} field with a {g.kind} field")


def norm(f: Field, which: NormKind = "L2", domain: Domain = "Q") -> float:
    """Discrete ``L1``, ``L2`` or ``Linf`` norm over ``Q`` or the slice at ``T``.

    Quadrature is mass lumped: weight ``h^d dt`` per space-time node and
    ``h^d`` per node of the terminal slice.
    """
    if not np.all(np.isfinite(f.values)):
        raise InvalidInputError("field contains NaN or Inf")
    grid = f.grid
    if domain == "OmegaT":
        vals = f.values if f.is_terminal else f.values[-1]
        w = grid.cell_volume
    elif domain == "Q":
        if f.is_terminal:
            raise InvalidInputError("a terminal slice has no norm over Q")
        vals = f.values
        w = grid.weight
    else:
        raise InvalidInputError(f"unknown domain {domain!r}")

    if which == "L1":
        return float(w * np.abs(vals).sum())
    if which == "L2":
        return float(np.sqrt(w * np.dot(vals.ravel(), vals.ravel())))
    if which == "Linf":
        return float(np.abs(vals).max(initial=0.0))
    raise InvalidInputError(f"unknown norm {which!r}")


def inner_Q(f: Field, g: Field) -> float:
    """Lumped ``L2(Q)`` pairing of two space-time fields."""
    _check_same(f, g)
    if f.is_terminal:
        raise InvalidInputError("inner_Q needs space-time fields")
    return float(f.grid.weight * np.dot(f.values.ravel(), g.values.ravel()))


def inner_Omega(f: Field, g: Field) -> float:
    """Lumped ``L2(Omega)`` pairing of two terminal slices."""
    f, g = f.terminal(), g.terminal()
    _check_same(f, g)
    return float(f.grid.cell_volume * np.dot(f.values, g.values))


def smooth_random_field(
    grid: SpaceTimeGrid,
    rng: np.random.Generator,
    modes: int = 6,
    decay: float = 2.0,
    noise_fraction: float = 0.1,
) -> Field:
    """Random direction normalised to unit sup norm.

    With probability ``noise_fraction`` the field is nodal Gaussian noise;
    otherwise it is a sine series in space times a cosine series in time
    with amplitudes decaying like ``|k|^-decay``.
    """
    if rng.random() < noise_fraction:
        vals = rng.standard_normal(grid.shape)
    else:
        x = grid.coordinates()
        t = grid.times / grid.T
        m = np.arange(1, modes + 1)
        spatial = [np.sin(np.pi * np.outer(x[:, j], m)) for j in range(grid.d)]  # (N, modes)
        temporal = np.cos(np.pi * np.outer(t, np.arange(modes)))  # (n_t, modes)
        if grid.d == 1:
            kk = m[:, None] ** 2 + np.arange(modes)[None, :] ** 2
            coef = rng.standard_normal((modes, modes)) * kk.astype(float) ** (-decay / 2)
            vals = temporal @ (spatial[0] @ coef).T
        else:
            k2 = (
                m[:, None, None] ** 2
                + m[None, :, None] ** 2
                + np.arange(modes)[None, None, :] ** 2
            ).astype(float)
            coef = rng.standard_normal((modes, modes, modes)) * k2 ** (-decay / 2)
            # (N, l) = sum_{a,b} s0[N,a] s1[N,b] coef[a,b,l]
            space = np.einsum("na,nb,abl->nl", spatial[0], spatial[1], coef)
            vals = temporal @ space.T
    peak = np.abs(vals).max()
    if peak > 0:
        vals = vals / peak
    return Field(grid, vals)


def write_field_csv(path, f: Field) -> None:
    """Write ``k,i0[,i1],value`` rows; terminal slices omit ``k``."""
    grid = f.grid
    idx = grid.node_indices()
    axes = [f"i{j}" for j in range(grid.d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if f.is_terminal:
            w.writerow(axes + ["value"])
            for n, val in enumerate(f.values):
                w.writerow([*idx[n].tolist(), repr(float(val))])
        else:
            w.writerow(["k"] + axes + ["value"])
            for k in range(grid.n_t):
                for n, val in enumerate(f.values[k]):
                    w.writerow([k + 1, *idx[n].tolist(), repr(float(val))])


def read_field_csv(path, grid: SpaceTimeGrid) -> Field:
    """Inverse of :func:`write_field_csv`; the header decides the kind."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    terminal = header[0] != "k"
    n_axes = len(header) - (1 if terminal else 2)
    if n_axes != grid.d:
        raise GridMismatchError(f"CSV has {n_axes} spatial axes, grid has {grid.d}")
    if terminal:
        vals = np.full(grid.n_space, np.nan)
    else:
        vals = np.full(grid.shape, np.nan)
    for row in body:
        nums = [int(c) for c in row[:-1]]
        value = float(row[-1])
        if terminal:
            k, ii = None, nums
        else:
            k, ii = nums[0], nums[1:]
        flat = ii[0] if grid.d == 1 else ii[0] * grid.n_x + ii[1]
        if terminal:
            vals[flat] = value
        else:
            vals[k - 1, flat] = value
    if np.isnan(vals).any():
        raise InvalidInputError(f"CSV {path} does not cover every node of the grid")
    return Field(grid, vals, TERMINAL if terminal else SPACE_TIME)
