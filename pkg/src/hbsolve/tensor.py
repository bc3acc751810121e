"""Tensor-product spline levels.

A :class:`TensorSpace` is one level of the multilevel structure: the
d-variate basis obtained by tensorizing univariate knot vectors, its
Cartesian grid of cells, function supports, point evaluation with
gradients and Hessians, two-scale children across levels, and per-cell
Gauss quadrature.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .splines import basis_table, dyadic_refine, two_scale_matrix

__all__ = ["TensorSpace", "TensorFunction", "Cell", "SpaceLadder", "cell_quadrature"]

CHILD_COEFF_CUTOFF = 1e-14


@dataclass(frozen=True)
class TensorFunction:
    """One d-variate B-spline, identified by its level and the
    multi-index of its univariate factors."""

    level: int
    multi: tuple

    @property
    def dim(self):
        return len(self.multi)


@dataclass(frozen=True)
class Cell:
    """A closed Cartesian grid cell at some level."""

    level: int
    spans: tuple
    lo: tuple
    hi: tuple

    @property
    def diam(self):
        return float(np.linalg.norm(np.subtract(self.hi, self.lo)))

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.hi, self.lo)))


class TensorSpace:
    """Tensor product of d univariate B-spline bases at one level.

    Attributes
    ----------
    kvs : tuple of KnotVector
    level : int
    dim : int
    shape : tuple
        Number of univariate functions per direction; basis size is the
        product.
    cell_shape : tuple
        Number of nonempty spans per direction.
    """

    def __init__(self, kvs, level=0):
        self.kvs = tuple(kvs)
        self.level = int(level)
        self.dim = len(self.kvs)
        self.shape = tuple(kv.n for kv in self.kvs)
        self.ndof = int(np.prod(self.shape))
        self.cell_shape = tuple(kv.nspans for kv in self.kvs)
        self.ncells = int(np.prod(self.cell_shape))
        self.degrees = tuple(kv.p for kv in self.kvs)

    def __repr__(self):
        return "TensorSpace(level=%d, shape=%s)" % (self.level, self.shape)

    # -- indexing helpers -------------------------------------------------

    def fn_flat(self, multi):
        return int(np.ravel_multi_index(multi, self.shape))

    def fn_multi(self, flat):
        return tuple(int(i) for i in np.unravel_index(flat, self.shape))

    def cell_flat(self, spans):
        return int(np.ravel_multi_index(spans, self.cell_shape))

    def cell_multi(self, flat):
        return tuple(int(i) for i in np.unravel_index(flat, self.cell_shape))

    def function(self, multi):
        return TensorFunction(self.level, tuple(int(i) for i in multi))

    def cell(self, spans):
        spans = tuple(int(s) for s in spans)
        lo = tuple(kv.spans_lo[s] for kv, s in zip(self.kvs, spans))
        hi = tuple(kv.spans_hi[s] for kv, s in zip(self.kvs, spans))
        return Cell(self.level, spans, lo, hi)

    def cells(self):
        for spans in itertools.product(*(range(m) for m in self.cell_shape)):
            yield self.cell(spans)

    # -- supports ----------------------------------------------------------

    def support_box(self, fn):
        """Parametric support of a function as (lo, hi) corner arrays."""
        lo = np.array([kv.knots[i] for kv, i in zip(self.kvs, fn.multi)])
        hi = np.array([kv.knots[i + kv.p + 1] for kv, i in zip(self.kvs, fn.multi)])
        return lo, hi

    def support_spans(self, fn):
        """Per-direction (first, last) nonempty-span range of the support."""
        return tuple(
            (int(kv.fn_span_lo[i]), int(kv.fn_span_hi[i]))
            for kv, i in zip(self.kvs, fn.multi)
        )

    def functions_on_cell(self, cell):
        """All functions whose support contains the given cell.

        Exactly prod(p_i + 1) functions by local linear independence.
        """
        if cell.level != self.level:
            raise ValueError("cell level does not match this space")
        ranges = []
        for kv, s in zip(self.kvs, cell.spans):
            t = int(kv.span_tpos[s])
            ranges.append(range(t - kv.p, t + 1))
        return [self.function(multi) for multi in itertools.product(*ranges)]

    # -- evaluation ---------------------------------------------------------

    def eval_function(self, fn, x, max_deriv=0):
        """Value (and gradient / Hessian) of one basis function at x.

        The gradient is the product-rule combination of univariate
        derivatives; the Hessian is symmetric with mixed entries equal
        to products of first derivatives.  Exactly zero outside supp.
        """
        x = np.asarray(x, dtype=float)
        factors = np.zeros((self.dim, max_deriv + 1))
        for k, (kv, i) in enumerate(zip(self.kvs, fn.multi)):
            first, ders = basis_table(kv, np.array([x[k]]), nders=max_deriv)
            off = i - int(first[0])
            if 0 <= off <= kv.p:
                factors[k] = ders[:, off, 0]
        value = float(np.prod(factors[:, 0]))
        if max_deriv == 0:
            return value
        grad = np.empty(self.dim)
        for k in range(self.dim):
            grad[k] = factors[k, 1] * np.prod(np.delete(factors[:, 0], k))
        if max_deriv == 1:
            return value, grad
        hess = np.empty((self.dim, self.dim))
        for k in range(self.dim):
            for m in range(self.dim):
                parts = factors[:, 0].copy()
                if k == m:
                    parts[k] = factors[k, 2]
                else:
                    parts[k] = factors[k, 1]
                    parts[m] = factors[m, 1]
                hess[k, m] = np.prod(parts)
        return value, grad, hess

    # -- refinement ---------------------------------------------------------

    def dyadic_refinement(self):
        """The next level: every nonempty span split at its midpoint."""
        return TensorSpace([dyadic_refine(kv) for kv in self.kvs], self.level + 1)


class SpaceLadder:
    """Lazy chain of dyadically refined tensor spaces with cached
    two-scale matrices between consecutive levels."""

    def __init__(self, base):
        if base.level != 0:
            raise ValueError("ladder must start at level 0")
        self._levels = [base]
        self._two_scale = []  # per level, per direction CSC matrices

    def __len__(self):
        return len(self._levels)

    def __getitem__(self, ell):
        self.extend_to(ell)
        return self._levels[ell]

    @property
    def dim(self):
        return self._levels[0].dim

    def extend_to(self, ell):
        while len(self._levels) <= ell:
            self._levels.append(self._levels[-1].dyadic_refinement())

    def two_scale(self, ell, direction):
        """Univariate two-scale matrix from level ell to ell+1."""
        self.extend_to(ell + 1)
        while len(self._two_scale) <= ell:
            k = len(self._two_scale)
            mats = tuple(
                two_scale_matrix(self._levels[k].kvs[d], self._levels[k + 1].kvs[d])
                for d in range(self.dim)
            )
            self._two_scale.append(mats)
        return self._two_scale[ell][direction]

    def children(self, fn):
        """Two-scale children of `fn` with their expansion coefficients.

        Returns a list of (TensorFunction, coeff) with all coefficients
        strictly positive; the count is bounded in terms of the degree
        only.  Tensor coefficients are products of univariate entries.
        """
        ell = fn.level
        fine = self[ell + 1]
        per_dir = []
        for d, i in enumerate(fn.multi):
            col = self.two_scale(ell, d)[:, [i]].tocoo()
            keep = np.abs(col.data) > CHILD_COEFF_CUTOFF
            per_dir.append(list(zip(col.row[keep], col.data[keep])))
        out = []
        for combo in itertools.product(*per_dir):
            multi = tuple(int(r) for r, _ in combo)
            coeff = float(np.prod([c for _, c in combo]))
            if abs(coeff) > CHILD_COEFF_CUTOFF:
                out.append((fine.function(multi), coeff))
        return out

    def children_flat(self, ell, flat):
        """children() on flat indices; returns (flat array, coeff array)."""
        space = self[ell]
        fn = space.function(space.fn_multi(flat))
        kids = self.children(fn)
        fine = self[ell + 1]
        idx = np.array([fine.fn_flat(k.multi) for k, _ in kids], dtype=np.int64)
        co = np.array([c for _, c in kids])
        return idx, co


def cell_quadrature(cell, orders):
    """Tensor Gauss-Legendre rule on a cell.

    Parameters
    ----------
    cell : Cell
    orders : int or sequence of int
        Points per direction; exact for coordinate-degree <= 2*order - 1.

    Returns
    -------
    points : ndarray, shape (d, nq)
    weights : ndarray, shape (nq,)
        Weights sum to the cell volume.
    """
    d = len(cell.spans)
    if np.isscalar(orders):
        orders = (int(orders),) * d
    nodes_1d, weights_1d = [], []
    for k in range(d):
        g, w = np.polynomial.legendre.leggauss(int(orders[k]))
        a, b = cell.lo[k], cell.hi[k]
        nodes_1d.append(0.5 * (b - a) * (g + 1.0) + a)
        weights_1d.append(0.5 * (b - a) * w)
    grids = np.meshgrid(*nodes_1d, indexing="ij")
    points = np.stack([g.ravel() for g in grids])
    wgrids = np.meshgrid(*weights_1d, indexing="ij")
    weights = np.ones(points.shape[1])
    for wg in wgrids:
        weights = weights * wg.ravel()
    return points, weights
