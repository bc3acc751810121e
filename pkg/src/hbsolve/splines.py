"""Univariate B-spline kernels.

Open knot vectors on [0, 1], Cox-de Boor evaluation with derivatives,
dyadic refinement, knot-insertion (two-scale) matrices and Greville
abscissae.  Everything downstream (tensor products, hierarchies,
assembly) is built on top of this module.

References:

  - L. Piegl, W. Tiller, The NURBS Book, 2nd ed., Springer, 1997
    (algorithms A2.1-A2.3, A5.1).
"""

import numpy as np
import scipy.sparse as sps

__all__ = [
    "KnotVector",
    "LocalBasisEval",
    "make_uniform_open",
    "make_open",
    "eval_all",
    "basis_table",
    "dyadic_refine",
    "two_scale_matrix",
    "greville",
]


class KnotVector:
    """Open knot vector together with a polynomial degree.

    Parameters
    ----------
    degree : int
        Polynomial degree p >= 0.
    knots : array_like
        Non-decreasing knot sequence on [0, 1].  Both end knots must be
        repeated exactly p+1 times ("open" form); interior breakpoints
        may carry multiplicities up to p+1.

    Attributes
    ----------
    p : int
        Degree.
    knots : ndarray
        The full knot sequence (read-only).
    n : int
        Number of basis functions, ``len(knots) - p - 1``.
    breakpoints : ndarray
        Distinct knot values (the set Z).
    multiplicities : ndarray
        Multiplicity of each breakpoint.
    nspans : int
        Number of nonempty spans, i.e. mesh elements.

    Instances are immutable; all operations on them are pure.
    """

    def __init__(self, degree, knots):
        p = int(degree)
        if p < 0:
            raise ValueError("degree must be non-negative")
        kv = np.array(knots, dtype=float)
        if kv.ndim != 1 or kv.size < 2 * (p + 1):
            raise ValueError("knot sequence too short for degree %d" % p)
        if np.any(np.diff(kv) < 0):
            raise ValueError("knots must be non-decreasing")
        if kv[0] != 0.0 or kv[-1] != 1.0:
            raise ValueError("open knot vectors must span [0, 1]")

        zeta, mult = np.unique(kv, return_counts=True)
        if mult[0] != p + 1 or mult[-1] != p + 1:
            raise ValueError("end knots must be repeated exactly p+1 times")
        if np.any(mult[1:-1] > p + 1):
            raise ValueError("interior multiplicity exceeds p+1")

        self.p = p
        self.knots = kv
        self.knots.flags.writeable = False
        self.n = kv.size - p - 1
        self.breakpoints = zeta
        self.multiplicities = mult
        self.nspans = zeta.size - 1
        # knot-sequence position of the last repeat of each breakpoint;
        # span s lives between positions span_tpos[s] and span_tpos[s]+1
        self._tpos = np.cumsum(mult) - 1
        self.span_tpos = self._tpos[:-1]
        self.spans_lo = zeta[:-1]
        self.spans_hi = zeta[1:]
        # first/last nonempty span intersecting supp(b_j) = [xi_j, xi_{j+p+1}]
        self.fn_span_lo = np.searchsorted(self.span_tpos, np.arange(self.n))
        self.fn_span_hi = (
            np.searchsorted(self.span_tpos, np.arange(self.n) + p, side="right") - 1
        )

    def __repr__(self):
        return "KnotVector(p=%d, n=%d, spans=%d)" % (self.p, self.n, self.nspans)

    def __eq__(self, other):
        return (
            isinstance(other, KnotVector)
            and self.p == other.p
            and self.knots.shape == other.knots.shape
            and bool(np.all(self.knots == other.knots))
        )

    def __hash__(self):
        return hash((self.p, self.knots.tobytes()))

    def span_of(self, x):
        """Index of the nonempty span containing x (right-continuous,
        except x = 1 which falls in the last span)."""
        return int(self.span_index(np.atleast_1d(float(x)))[0])

    def span_index(self, x):
        """Vectorized span lookup for an array of points in [0, 1]."""
        x = np.asarray(x, dtype=float)
        if np.any((x < 0.0) | (x > 1.0)):
            raise ValueError("evaluation point outside [0, 1]")
        return np.clip(np.searchsorted(self.breakpoints, x, side="right") - 1,
                       0, self.nspans - 1)

    def support(self, j):
        """Support interval [xi_j, xi_{j+p+1}] of basis function j."""
        return self.knots[j], self.knots[j + self.p + 1]

    def is_refinement_of(self, coarse):
        """True if this knot vector refines `coarse` (same degree, every
        coarse knot present with at least its coarse multiplicity)."""
        if self.p != coarse.p:
            return False
        pos = np.searchsorted(self.breakpoints, coarse.breakpoints)
        if np.any(pos >= self.breakpoints.size):
            return False
        if np.any(self.breakpoints[pos] != coarse.breakpoints):
            return False
        return bool(np.all(self.multiplicities[pos] >= coarse.multiplicities))


class LocalBasisEval:
    """Values (and derivatives) of the p+1 basis functions that may be
    nonzero at one evaluation point.

    Attributes
    ----------
    span : int
        Knot-sequence span position t with knots[t] <= x < knots[t+1].
    first : int
        Index of the first possibly-nonzero function; the values refer
        to functions ``first .. first+p``.
    values : ndarray, shape (p+1,)
        Basis function values; non-negative, summing to one.
    derivs : list of ndarray
        ``derivs[k]`` holds the order-(k+1) derivatives, units 1/length^k.
    """

    __slots__ = ("span", "first", "values", "derivs")

    def __init__(self, span, first, values, derivs):
        self.span = span
        self.first = first
        self.values = values
        self.derivs = derivs


def make_uniform_open(p, num_elements):
    """Uniform open knot vector with `num_elements` equal spans.

    All interior knots are simple, so the basis has n = num_elements + p
    functions and maximal smoothness C^{p-1}.

    Rejects p = 0: downstream residual evaluation requires at least C^1
    spline spaces, which excludes piecewise constants outright.
    """
    p = int(p)
    num_elements = int(num_elements)
    if p < 1:
        raise ValueError("degree must be at least 1")
    if num_elements < 1:
        raise ValueError("need at least one element")
    interior = np.arange(1, num_elements) / num_elements
    knots = np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])
    return KnotVector(p, knots)


def make_open(p, breakpoints, multiplicities=None):
    """Open knot vector from breakpoints and interior multiplicities.

    `breakpoints` must be strictly increasing from 0 to 1; the end
    multiplicities are forced to p+1.  `multiplicities` applies to the
    interior breakpoints only (default: all simple).
    """
    z = np.asarray(breakpoints, dtype=float)
    if z[0] != 0.0 or z[-1] != 1.0 or np.any(np.diff(z) <= 0):
        raise ValueError("breakpoints must increase strictly from 0 to 1")
    if multiplicities is None:
        mult = np.ones(z.size - 2, dtype=int)
    else:
        mult = np.asarray(multiplicities, dtype=int)
        if mult.size != z.size - 2:
            raise ValueError("need one multiplicity per interior breakpoint")
    knots = np.concatenate(
        [np.zeros(p + 1)]
        + [np.full(m, zj) for zj, m in zip(z[1:-1], mult)]
        + [np.ones(p + 1)]
    )
    return KnotVector(p, knots)


def basis_table(kv, x, nders=0):
    """Evaluate all possibly-nonzero basis functions at an array of points.

    This is the workhorse: a vectorized Cox-de Boor triangle (NURBS book
    A2.3) over a whole batch of points at once.

    Parameters
    ----------
    kv : KnotVector
    x : array_like, shape (m,)
        Points in [0, 1].  Breakpoint hits are resolved right-continuously
        except at x = 1.
    nders : int
        Number of derivatives to return.

    Returns
    -------
    first : ndarray of int, shape (m,)
        Index of the first nonzero function at each point.
    ders : ndarray, shape (nders+1, p+1, m)
        ``ders[k, j, i]`` is the k-th derivative of function first[i]+j
        at x[i].
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = kv.p
    kn = kv.knots
    tpos = kv.span_tpos[kv.span_index(x)]
    m = x.size

    # left[j] = x - knots[t+1-j], right[j] = knots[t+j] - x, j = 1..p
    jj = np.arange(1, p + 1)[:, None]
    left = x[None, :] - kn[tpos[None, :] + 1 - jj]
    right = kn[tpos[None, :] + jj] - x[None, :]

    ndu = np.zeros((p + 1, p + 1, m))
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        saved = np.zeros(m)
        for r in range(j):
            # lower triangle stores knot differences for the derivative pass;
            # the denominator always covers the nonempty span, so it is > 0
            ndu[j, r] = right[r] + left[j - r - 1]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r] * temp
            saved = left[j - r - 1] * temp
        ndu[j, j] = saved

    ders = np.zeros((nders + 1, p + 1, m))
    ders[0] = ndu[:, p]

    nd = min(nders, p)
    if nd > 0:
        a = np.zeros((2, p + 1, m))
        for r in range(p + 1):
            s1, s2 = 0, 1
            a[:] = 0.0
            a[0, 0] = 1.0
            for k in range(1, nd + 1):
                d = np.zeros(m)
                rk = r - k
                pk = p - k
                if r >= k:
                    a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                    d = a[s2, 0] * ndu[rk, pk]
                j1 = 1 if rk >= -1 else -rk
                j2 = k - 1 if r - 1 <= pk else p - r
                for j in range(j1, j2 + 1):
                    a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                    d = d + a[s2, j] * ndu[rk + j, pk]
                if r <= pk:
                    a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                    d = d + a[s2, k] * ndu[r, pk]
                ders[k, r] = d
                s1, s2 = s2, s1
        fac = float(p)
        for k in range(1, nd + 1):
            ders[k] *= fac
            fac *= p - k

    return tpos - p, ders


def eval_all(kv, x, max_deriv=0):
    """Evaluate the p+1 local basis values and derivatives at one point.

    Returns a :class:`LocalBasisEval`.  At a breakpoint of any
    multiplicity the evaluation is right-continuous, except at x = 1
    where the last polynomial piece is used.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError("evaluation point outside [0, 1]")
    first, ders = basis_table(kv, np.array([float(x)]), nders=max_deriv)
    values = ders[0, :, 0].copy()
    dlist = [ders[k, :, 0].copy() for k in range(1, max_deriv + 1)]
    return LocalBasisEval(int(first[0]) + kv.p, int(first[0]), values, dlist)


def dyadic_refine(kv):
    """Insert the midpoint of every nonempty span once.

    Existing knots keep their multiplicity, so the result is nested over
    the input and the meshsize halves exactly.
    """
    mids = 0.5 * (kv.spans_lo + kv.spans_hi)
    knots = np.sort(np.concatenate([kv.knots, mids]))
    return KnotVector(kv.p, knots)


def _insertion_matrix(p, knots, u):
    """Single-knot insertion (Boehm): sparse (n+1) x n matrix M with
    old_j = sum_i M[i, j] new_i after inserting u into `knots`."""
    n = knots.size - p - 1
    # span position t with knots[t] <= u < knots[t+1] (u < 1 always here)
    t = int(np.searchsorted(knots, u, side="right") - 1)
    rows, cols, vals = [], [], []
    for i in range(n + 1):
        if i <= t - p:
            rows.append(i); cols.append(i); vals.append(1.0)
        elif i <= t:
            alpha = (u - knots[i]) / (knots[i + p] - knots[i])
            rows.append(i); cols.append(i); vals.append(alpha)
            rows.append(i); cols.append(i - 1); vals.append(1.0 - alpha)
        else:
            rows.append(i); cols.append(i - 1); vals.append(1.0)
    return sps.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))


def two_scale_matrix(coarse, fine):
    """Knot-insertion matrix C between nested knot vectors.

    Every coarse function expands as ``coarse_j = sum_k C[k, j] fine_k``
    with non-negative entries (the two-scale relation).  Computed by
    successive single-knot insertion in sorted order.

    Returns a CSC matrix of shape (fine.n, coarse.n) so that children of
    a coarse function are one column slice away.
    """
    if not fine.is_refinement_of(coarse):
        raise ValueError("fine knot vector does not refine the coarse one")
    # multiset difference of the two knot sequences
    new_knots = []
    for z, m in zip(fine.breakpoints, fine.multiplicities):
        pos = np.searchsorted(coarse.breakpoints, z)
        have = 0
        if pos < coarse.breakpoints.size and coarse.breakpoints[pos] == z:
            have = coarse.multiplicities[pos]
        new_knots.extend([z] * (m - have))

    C = sps.identity(coarse.n, format="csr")
    knots = coarse.knots.copy()
    for u in sorted(new_knots):
        M = _insertion_matrix(coarse.p, knots, u)
        C = M @ C
        knots = np.sort(np.append(knots, u))
    C = C.tocsc()
    # exact zeros of the insertion product are structural; drop rounding dust
    C.data[np.abs(C.data) <= 1e-14] = 0.0
    C.eliminate_zeros()
    return C


def greville(kv):
    """Greville abscissae: mean of each function's p interior local knots."""
    p = kv.p
    if p == 0:
        return 0.5 * (kv.knots[:-1] + kv.knots[1:])
    idx = np.arange(kv.n)[:, None] + np.arange(1, p + 1)[None, :]
    return kv.knots[idx].mean(axis=1)
