"""Hierarchical spline spaces.

Subdomain hierarchies, the recursive hierarchical basis (deactivate a
function once its support is swallowed by the next subdomain, replace
it by its two-scale children), partition-of-unity coefficients, the
hierarchical mesh of active cells, meshsizes, enlargement driven by
marked functions, and the squared-meshsize weight field.

Subdomains are stored as level-wise cell index sets: the subdomain at
depth ell is a union of cells of level ell-1 and is kept as the sorted
flat indices of exactly those cells.  This makes nestedness and cell
containment decidable exactly in integer arithmetic.
"""

import itertools

import numpy as np

from .tensor import SpaceLadder, TensorFunction

__all__ = [
    "SubdomainHierarchy",
    "HierarchicalBasis",
    "HierarchicalMesh",
    "build_basis",
    "refine_basis",
    "enlarge",
    "h2_weight",
    "weighted_h2_subset",
    "active_cells_in_support",
    "transfer_coefficients",
]

MAX_DEPTH = 30


class SubdomainHierarchy:
    """Nested subdomains Omega_0 > Omega_1 > ... > Omega_n = empty.

    ``cell_sets[ell]`` holds, for ell = 1 .. n-1, the sorted flat indices
    of the level-(ell-1) cells whose union is Omega_ell.  Omega_0 is the
    whole domain and is implicit, as is the empty Omega_n.
    """

    def __init__(self, cell_sets=()):
        self.cell_sets = [np.unique(np.asarray(s, dtype=np.int64)) for s in cell_sets]
        while self.cell_sets and self.cell_sets[-1].size == 0:
            self.cell_sets.pop()
        if self.depth > MAX_DEPTH:
            raise RuntimeError("hierarchy depth exceeds cap of %d" % MAX_DEPTH)

    @property
    def depth(self):
        return len(self.cell_sets) + 1

    def omega(self, ell):
        """Flat level-(ell-1) cell indices of Omega_ell (ell >= 1)."""
        if ell < 1 or ell >= self.depth:
            return np.empty(0, dtype=np.int64)
        return self.cell_sets[ell - 1]

    def validate(self, ladder):
        """Check nestedness: each Omega_{ell+1} lies inside Omega_ell."""
        for ell in range(1, self.depth - 1):
            inside = _expand_cells(self.omega(ell), ladder, ell - 1)
            if not np.all(np.isin(self.omega(ell + 1), inside)):
                raise ValueError("subdomain %d not contained in its parent" % (ell + 1))

    def serialize(self):
        """Line-oriented text form: one line per stored level."""
        lines = []
        for ell in range(1, self.depth):
            idx = " ".join(str(int(i)) for i in self.omega(ell))
            lines.append(("level %d: %s" % (ell, idx)).rstrip())
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def parse(cls, text):
        sets = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            head, _, rest = line.partition(":")
            ell = int(head.split()[1])
            sets[ell] = [int(tok) for tok in rest.split()]
        if not sets:
            return cls()
        n = max(sets)
        return cls([sets.get(ell, []) for ell in range(1, n + 1)])


def _expand_cells(flat, ladder, level):
    """Re-express level-`level` cells as their 2^d children of level+1."""
    space = ladder[level]
    fine = ladder[level + 1]
    if flat.size == 0:
        return np.empty(0, dtype=np.int64)
    multi = np.array(np.unravel_index(flat, space.cell_shape))
    d = space.dim
    out = []
    for offs in itertools.product((0, 1), repeat=d):
        child = 2 * multi + np.array(offs)[:, None]
        out.append(np.ravel_multi_index(child, fine.cell_shape))
    return np.sort(np.concatenate(out))


def _omega_mask(sub, ladder, ell):
    """Boolean mask over level-ell cells marking Omega_{ell+1}."""
    space = ladder[ell]
    mask = np.zeros(space.ncells, dtype=bool)
    mask[sub.omega(ell + 1)] = True
    return mask.reshape(space.cell_shape)


def _support_slices(space, multi):
    return tuple(
        slice(int(kv.fn_span_lo[i]), int(kv.fn_span_hi[i]) + 1)
        for kv, i in zip(space.kvs, multi)
    )


class HierarchicalBasis:
    """Active functions of all levels with partition-of-unity weights.

    Construction happens in :func:`build_basis` / :func:`refine_basis`;
    a built instance is immutable and safe for concurrent reads.

    The flat per-level dictionaries are mirrored into aligned arrays
    (`fn_level`, `fn_flat`, `fn_a`, `fn_h`) ordered by (level, flat
    index), which fixes the enumeration used everywhere downstream.
    """

    def __init__(self, ladder, subdomains, active, deactivated):
        self.ladder = ladder
        self.subdomains = subdomains
        self.active = active  # per level: dict flat -> a_beta
        self.deactivated = deactivated  # per level: set of flat indices
        self.nlevels = len(active)

        levels, flats, coeffs = [], [], []
        for ell in range(self.nlevels):
            keys = np.sort(np.fromiter(active[ell].keys(), dtype=np.int64,
                                       count=len(active[ell])))
            levels.append(np.full(keys.size, ell, dtype=np.int64))
            flats.append(keys)
            coeffs.append(np.array([active[ell][k] for k in keys]))
        self.fn_level = np.concatenate(levels) if levels else np.empty(0, np.int64)
        self.fn_flat = np.concatenate(flats) if flats else np.empty(0, np.int64)
        self.fn_a = np.concatenate(coeffs) if coeffs else np.empty(0)
        self.size = self.fn_level.size

        self.h_levels = np.array([level_meshsize(ladder[ell])
                                  for ell in range(self.nlevels)])
        self.fn_h = self.h_levels[self.fn_level]

        self._pos = {}
        for k in range(self.size):
            self._pos[(int(self.fn_level[k]), int(self.fn_flat[k]))] = k

        # per-level active lookup mask for fast cell-wise enumeration
        self._active_mask = []
        for ell in range(self.nlevels):
            m = np.zeros(ladder[ell].ndof, dtype=bool)
            m[self.fn_flat[self.fn_level == ell]] = True
            self._active_mask.append(m)

    # -- queries ------------------------------------------------------------

    def index_of(self, fn):
        space = self.ladder[fn.level]
        return self._pos[(fn.level, space.fn_flat(fn.multi))]

    def function(self, k):
        space = self.ladder[int(self.fn_level[k])]
        return space.function(space.fn_multi(int(self.fn_flat[k])))

    def functions(self):
        return [self.function(k) for k in range(self.size)]

    def is_active(self, fn):
        space = self.ladder[fn.level]
        return (fn.level, space.fn_flat(fn.multi)) in self._pos

    def a_coeff(self, fn):
        return float(self.fn_a[self.index_of(fn)])

    def boundary_mask(self):
        """True for functions with nonzero trace on the boundary of the
        parametric cube (first or last univariate index somewhere)."""
        mask = np.zeros(self.size, dtype=bool)
        for k in range(self.size):
            space = self.ladder[int(self.fn_level[k])]
            multi = space.fn_multi(int(self.fn_flat[k]))
            mask[k] = any(i == 0 or i == n - 1 for i, n in zip(multi, space.shape))
        return mask

    # -- field evaluation ---------------------------------------------------

    def evaluate(self, coeffs, X, nders=0):
        """Evaluate sum_k coeffs[k] beta_k at points X (shape (d, m)).

        Returns value (m,), and optionally gradient (d, m) and Hessian
        (d, d, m) in parametric coordinates.
        """
        X = np.asarray(X, dtype=float)
        d, m = X.shape
        val = np.zeros(m)
        grad = np.zeros((d, m)) if nders >= 1 else None
        hess = np.zeros((d, d, m)) if nders >= 2 else None

        from .splines import basis_table

        for ell in range(self.nlevels):
            space = self.ladder[ell]
            sel = self.fn_level == ell
            if not np.any(sel):
                continue
            cmap = np.zeros(space.ndof)
            cmap[self.fn_flat[sel]] = coeffs[sel]
            firsts, tables = [], []
            for k in range(d):
                f, t = basis_table(space.kvs[k], X[k], nders=min(nders, 2))
                firsts.append(f)
                tables.append(t)
            p1 = [kv.p + 1 for kv in space.kvs]
            for offs in itertools.product(*(range(q) for q in p1)):
                multi = np.stack([firsts[k] + offs[k] for k in range(d)])
                ok = np.all((multi >= 0) & (multi < np.array(space.shape)[:, None]), axis=0)
                if not np.any(ok):
                    continue
                flat = np.ravel_multi_index(multi[:, ok], space.shape)
                c = cmap[flat]
                cols = np.nonzero(ok)[0]
                vals = np.ones(cols.size)
                for k in range(d):
                    vals = vals * tables[k][0, offs[k], cols]
                val[cols] += c * vals
                if nders >= 1:
                    for g in range(d):
                        gv = np.ones(cols.size)
                        for k in range(d):
                            gv = gv * tables[k][1 if k == g else 0, offs[k], cols]
                        grad[g, cols] += c * gv
                if nders >= 2:
                    for g in range(d):
                        for h in range(g, d):
                            hv = np.ones(cols.size)
                            for k in range(d):
                                o = (2 if g == h else 1) if k in (g, h) else 0
                                hv = hv * tables[k][o, offs[k], cols]
                            hess[g, h, cols] += c * hv
        if nders >= 2:
            for g in range(d):
                for h in range(g):
                    hess[g, h] = hess[h, g]
        if nders == 0:
            return val
        if nders == 1:
            return val, grad
        return val, grad, hess


class HierarchicalMesh:
    """Active cells of the hierarchical structure.

    ``cells[ell]`` holds the sorted flat indices of active level-ell
    cells; the active cells tile the parametric cube with pairwise
    disjoint interiors.
    """

    def __init__(self, ladder, cells):
        self.ladder = ladder
        self.cells = cells
        self.ncells = int(sum(c.size for c in cells))
        self.nlevels = len(cells)

    def cell_objects(self):
        out = []
        for ell, flat in enumerate(self.cells):
            space = self.ladder[ell]
            for f in flat:
                out.append(space.cell(space.cell_multi(int(f))))
        return out

    def total_volume(self):
        vol = 0.0
        for ell, flat in enumerate(self.cells):
            space = self.ladder[ell]
            for f in flat:
                vol += space.cell(space.cell_multi(int(f))).volume
        return vol

    def level_counts(self):
        return [int(c.size) for c in self.cells]


def level_meshsize(space):
    """h_ell: the largest cell diameter of the full level grid."""
    side_max = [float(np.max(kv.spans_hi - kv.spans_lo)) for kv in space.kvs]
    return float(np.linalg.norm(side_max))


def _run_recursion(ladder, subdomains, seed_candidates):
    """Shared deactivation walk.

    `seed_candidates` maps level -> dict(flat -> accumulated PU weight)
    holding functions whose activity at that level is still undecided.
    Functions whose support falls inside the next subdomain are
    deactivated and their children (with two-scale weights) become
    candidates one level down.
    """
    n = subdomains.depth
    ladder.extend_to(max(n - 1, 0))
    active = [dict() for _ in range(n)]
    deactivated = [set() for _ in range(n)]
    candidates = [dict(seed_candidates.get(ell, {})) for ell in range(n)]

    for ell in range(n):
        space = ladder[ell]
        mask = _omega_mask(subdomains, ladder, ell) if ell + 1 < n else None
        for flat in sorted(candidates[ell]):
            a = candidates[ell][flat]
            multi = space.fn_multi(flat)
            if mask is not None and bool(mask[_support_slices(space, multi)].all()):
                deactivated[ell].add(flat)
                kids, coeff = ladder.children_flat(ell, flat)
                nxt = candidates[ell + 1]
                for kf, kc in zip(kids, coeff):
                    nxt[int(kf)] = nxt.get(int(kf), 0.0) + a * kc
            else:
                active[ell][flat] = active[ell].get(flat, 0.0) + a
    return active, deactivated


def build_basis(ladder, subdomains):
    """Hierarchical basis and mesh for a subdomain hierarchy.

    Runs the recursion from scratch: level 0 starts fully active with
    unit PU weights; at each step the functions whose support is
    contained in the next subdomain are deactivated and replaced by
    their children, accumulating a_beta = sum over deactivated parents
    of a_parent * c_child additively over duplicates.
    """
    subdomains.validate(ladder)
    base = ladder[0]
    seed = {0: {flat: 1.0 for flat in range(base.ndof)}}
    active, deactivated = _run_recursion(ladder, subdomains, seed)
    basis = HierarchicalBasis(ladder, subdomains, active, deactivated)
    return basis, build_mesh(ladder, subdomains)


def refine_basis(basis, subdomains):
    """Rebuild after an enlargement, reusing the already-settled state.

    Active functions of the old basis are re-checked against the new
    (larger) subdomains; the outcome equals :func:`build_basis` on the
    enlarged hierarchy, at the cost of only the newly deactivated
    functions.
    """
    ladder = basis.ladder
    subdomains.validate(ladder)
    seed = {}
    for ell in range(basis.nlevels):
        seed[ell] = dict(basis.active[ell])
    active, deactivated = _run_recursion(ladder, subdomains, seed)
    # functions deactivated in earlier generations stay deactivated
    for ell in range(basis.nlevels):
        deactivated[ell] |= basis.deactivated[ell]
    new_basis = HierarchicalBasis(ladder, subdomains, active, deactivated)
    return new_basis, build_mesh(ladder, subdomains)


def build_mesh(ladder, subdomains):
    """Active cells: per level, cells inside Omega_ell but not inside
    Omega_{ell+1}."""
    n = subdomains.depth
    cells = []
    for ell in range(n):
        space = ladder[ell]
        if ell == 0:
            inside = np.arange(space.ncells, dtype=np.int64)
        else:
            inside = _expand_cells(subdomains.omega(ell), ladder, ell - 1)
        nxt = subdomains.omega(ell + 1)
        active = np.setdiff1d(inside, nxt, assume_unique=True)
        cells.append(active)
    while cells and cells[-1].size == 0:
        cells.pop()
    return HierarchicalMesh(ladder, cells)


def enlarge(subdomains, basis, marked):
    """Grow each subdomain by the supports of marked active functions.

    `marked` is an iterable of TensorFunction; a marked function of
    level ell contributes its support cells to the new Omega_{ell+1}.
    The output depth grows by at most one and every input subdomain is
    contained in its enlarged counterpart.
    """
    ladder = basis.ladder
    per_level = {}
    for fn in marked:
        if not basis.is_active(fn):
            raise ValueError("marked function %r is not active" % (fn,))
        per_level.setdefault(fn.level, []).append(fn)
    if per_level:
        new_depth = max(subdomains.depth, max(per_level) + 2)
    else:
        new_depth = subdomains.depth
    if new_depth > MAX_DEPTH:
        raise RuntimeError("hierarchy depth exceeds cap of %d" % MAX_DEPTH)

    sets = []
    for ell in range(1, new_depth):
        cur = subdomains.omega(ell)
        extra = []
        for fn in per_level.get(ell - 1, []):
            space = ladder[ell - 1]
            spans = space.support_spans(fn)
            grids = np.meshgrid(
                *[np.arange(lo, hi + 1) for lo, hi in spans], indexing="ij"
            )
            extra.append(
                np.ravel_multi_index([g.ravel() for g in grids], space.cell_shape)
            )
        if extra:
            cur = np.union1d(cur, np.concatenate(extra))
        sets.append(cur)
    return SubdomainHierarchy(sets)


def h2_weight(basis, X):
    """The weight field sum_beta a_beta h_beta^2 beta at points X."""
    return basis.evaluate(basis.fn_a * basis.fn_h**2, np.asarray(X, dtype=float))


def weighted_h2_subset(basis, subset_idx, X):
    """Same weighted sum restricted to a subset of basis positions."""
    c = np.zeros(basis.size)
    c[np.asarray(subset_idx, dtype=np.int64)] = 1.0
    return basis.evaluate(c * basis.fn_a * basis.fn_h**2, np.asarray(X, dtype=float))


def active_cells_in_support(basis, mesh, fn):
    """Active cells contained in the support of an active function.

    They tile the support exactly; at least one of them is of the
    function's own level.
    """
    if not basis.is_active(fn):
        raise ValueError("function is not active")
    ladder = basis.ladder
    lo, hi = ladder[fn.level].support_box(fn)
    out = []
    for ell, flat in enumerate(mesh.cells):
        if ell < fn.level:
            continue
        space = ladder[ell]
        for f in flat:
            cell = space.cell(space.cell_multi(int(f)))
            if np.all(np.asarray(cell.lo) >= lo - 1e-14) and np.all(
                np.asarray(cell.hi) <= hi + 1e-14
            ):
                out.append(cell)
    return out


def transfer_coefficients(old_basis, new_basis, coeffs):
    """Re-express a discrete function of the old basis on a refinement.

    Coefficients of functions surviving in the new basis carry over;
    refined (deactivated) functions are pushed through two-scale chains
    until every receiver is active.  Exact because the new span contains
    the old one.
    """
    ladder = old_basis.ladder
    pending = [dict() for _ in range(new_basis.nlevels + 1)]
    for k in range(old_basis.size):
        ell, flat = int(old_basis.fn_level[k]), int(old_basis.fn_flat[k])
        pending[ell][flat] = pending[ell].get(flat, 0.0) + float(coeffs[k])

    out = np.zeros(new_basis.size)
    ell = 0
    while ell < len(pending):
        for flat, c in sorted(pending[ell].items()):
            key = (ell, flat)
            if key in new_basis._pos:
                out[new_basis._pos[key]] += c
            else:
                # must be refined: expand over strictly higher levels
                if ell + 1 >= new_basis.nlevels and abs(c) > 1e-13:
                    raise RuntimeError("coefficient transfer fell off the hierarchy")
                if ell + 1 >= len(pending):
                    pending.append(dict())
                kids, kc = ladder.children_flat(ell, flat)
                nxt = pending[ell + 1]
                for kf, co in zip(kids, kc):
                    nxt[int(kf)] = nxt.get(int(kf), 0.0) + c * co
        ell += 1
    return out
