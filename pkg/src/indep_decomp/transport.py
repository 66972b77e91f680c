"""Exact discrete Wasserstein-2 transport.

Three routes to the same optimum, kept deliberately independent of each other:

* :func:`solve_w2_lp` -- transportation simplex with deterministic pivoting,
  any dimension;
* :func:`solve_w2_1d` -- comonotone (quantile-aligned) sweep, dimension one;
* :func:`brute_force_w2` -- exhaustive permutation search for small uniform
  instances, used as a testing oracle.

:func:`solve_w2` dispatches to the sweep for m=1 and the simplex otherwise.
Couplings carry diagnostics (:func:`scalar_product_stats`,
:func:`check_monotone_support`) for the optimality inequalities.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .measures import DiscreteMeasure, InstanceError

#: Reduced costs are declared optimal above -OPT_TOL_REL * (cost scale).
OPT_TOL_REL = 1e-12
#: Row/column sums of a coupling must match the marginals this tightly.
MARGINAL_TOL = 1e-10
#: Default tolerance for the monotone-support diagnostic.
MONOTONE_TOL = 1e-9
#: Simplex pivot budget; exceeding it raises SolverError, never silent.
PIVOT_LIMIT = 10**6


class SolverError(RuntimeError):
    """Raised when a solver fails to certify an exact optimum."""


@dataclass(frozen=True)
class Coupling:
    """Sparse transport plan between two discrete measures.

    Entries are parallel arrays of (source row, target row, mass); masses are
    strictly positive and row/column sums reproduce the marginals within
    :data:`MARGINAL_TOL`.
    """

    source: DiscreteMeasure
    target: DiscreteMeasure
    rows: np.ndarray
    cols: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=int)
        cols = np.asarray(self.cols, dtype=int)
        masses = np.asarray(self.masses, dtype=float)
        if not (rows.shape == cols.shape == masses.shape) or rows.ndim != 1 or len(rows) == 0:
            raise InstanceError("coupling entries must be nonempty parallel arrays")
        if np.any(masses <= 0):
            raise InstanceError("coupling masses must be strictly positive")
        row_sums = np.bincount(rows, weights=masses, minlength=self.source.size)
        col_sums = np.bincount(cols, weights=masses, minlength=self.target.size)
        if np.abs(row_sums - self.source.weights).max() > MARGINAL_TOL:
            raise InstanceError("coupling row sums deviate from source marginal")
        if np.abs(col_sums - self.target.weights).max() > MARGINAL_TOL:
            raise InstanceError("coupling column sums deviate from target marginal")
        for arr in (rows, cols, masses):
            arr.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "masses", masses)

    @property
    def size(self) -> int:
        return len(self.masses)

    def displacements(self) -> np.ndarray:
        return self.source.points[self.rows] - self.target.points[self.cols]

    def cost(self) -> float:
        d = self.displacements()
        return float(self.masses @ np.einsum("ij,ij->i", d, d))


@dataclass(frozen=True)
class TransportResult:
    coupling: Coupling
    cost: float

    def __post_init__(self):
        recomputed = self.coupling.cost()
        scale = max(abs(self.cost), abs(recomputed), 1e-30)
        if abs(self.cost - recomputed) > 1e-12 * scale:
            raise InstanceError("stored cost inconsistent with coupling entries")


def _sq_cost_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    """Initial basic feasible solution; exactly n + n' - 1 staircase arcs."""
    n, np_ = len(a), len(b)
    arcs_i = np.empty(n + np_ - 1, dtype=int)
    arcs_j = np.empty(n + np_ - 1, dtype=int)
    flow = np.empty(n + np_ - 1, dtype=float)
    i = j = k = 0
    r, s = a[0], b[0]
    while True:
        t = min(r, s)
        arcs_i[k], arcs_j[k], flow[k] = i, j, t
        k += 1
        r -= t
        s -= t
        if i == n - 1 and j == np_ - 1:
            break
        if r == 0.0 and i < n - 1:
            i += 1
            r = a[i]
        elif s == 0.0 and j < np_ - 1:
            j += 1
            s = b[j]
        elif i < n - 1:
            i += 1
            r = a[i]
        else:
            j += 1
            s = b[j]
    return arcs_i[:k], arcs_j[:k], flow[:k]


def _tree_potentials(n, np_, arcs_i, arcs_j, cost):
    """Dual potentials u, v with u[0] = 0 from the basis spanning tree."""
    adj = [[] for _ in range(n + np_)]
    for k in range(len(arcs_i)):
        ri, cj = arcs_i[k], n + arcs_j[k]
        adj[ri].append((cj, k))
        adj[cj].append((ri, k))
    u = np.full(n, np.nan)
    v = np.full(np_, np.nan)
    u[0] = 0.0
    stack = [0]
    seen = np.zeros(n + np_, dtype=bool)
    seen[0] = True
    while stack:
        node = stack.pop()
        for other, k in adj[node]:
            if seen[other]:
                continue
            seen[other] = True
            c = cost[arcs_i[k], arcs_j[k]]
            if node < n:
                v[other - n] = c - u[node]
            else:
                u[other] = c - v[node - n]
            stack.append(other)
    if not seen.all():
        raise SolverError("basis lost spanning-tree structure")
    return u, v


def _cycle_path(n, np_, arcs_i, arcs_j, enter_i, enter_j):
    """Arc indices on the tree path from row enter_i to column enter_j."""
    adj = [[] for _ in range(n + np_)]
    for k in range(len(arcs_i)):
        ri, cj = arcs_i[k], n + arcs_j[k]
        adj[ri].append((cj, k))
        adj[cj].append((ri, k))
    target = n + enter_j
    parent = {enter_i: (None, None)}
    stack = [enter_i]
    while stack:
        node = stack.pop()
        if node == target:
            break
        for other, k in adj[node]:
            if other not in parent:
                parent[other] = (node, k)
                stack.append(other)
    if target not in parent:
        raise SolverError("entering arc does not close a cycle")
    path = []
    node = target
    while parent[node][0] is not None:
        node, k = parent[node]
        path.append(k)
    path.reverse()
    return path


def solve_w2_arrays(x, a, y, b):
    """Transportation simplex on raw arrays; returns (rows, cols, masses, cost).

    Supports need not be canonical (duplicates allowed) but the pivot order,
    and hence the returned basic plan, is fully deterministic.  Bland-style
    smallest-index rules resolve degenerate ties; a pure Bland phase kicks in
    after long degenerate runs so cycling is impossible.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, np_ = len(a), len(b)
    cost = _sq_cost_matrix(x, y)
    scale = max(float(cost.mean()), 1e-6 * float(cost.max(initial=0.0)))
    tol = OPT_TOL_REL * scale

    arcs_i, arcs_j, flow = _northwest_corner(a, b)
    bland_mode = False
    degenerate_run = 0
    for _pivot in range(PIVOT_LIMIT):
        u, v = _tree_potentials(n, np_, arcs_i, arcs_j, cost)
        reduced = cost - u[:, None] - v[None, :]
        mask = reduced < -tol
        if not mask.any():
            break
        flat = np.flatnonzero(mask.ravel())
        if bland_mode:
            enter = flat[0]
        else:
            # first occurrence of the minimum = smallest flat index among ties
            enter = flat[np.argmin(reduced.ravel()[flat])]
        enter_i, enter_j = divmod(int(enter), np_)

        path = _cycle_path(n, np_, arcs_i, arcs_j, enter_i, enter_j)
        # entering arc takes +theta; walking the path from the row end of the
        # entering arc, signs alternate -, +, -, ...
        signs = [(-1 if idx % 2 == 0 else 1) for idx in range(len(path))]
        neg = [k for k, s in zip(path, signs) if s < 0]
        theta = min(flow[k] for k in neg)
        leave = min(
            (k for k in neg if flow[k] == theta),
            key=lambda k: (arcs_i[k] * np_ + arcs_j[k]),
        )
        for k, s in zip(path, signs):
            flow[k] += s * theta
        # the slot of the leaving arc is reused for the entering arc
        arcs_i[leave] = enter_i
        arcs_j[leave] = enter_j
        flow[leave] = theta

        if theta == 0.0:
            degenerate_run += 1
            if degenerate_run > n + np_ + 10:
                bland_mode = True
        else:
            degenerate_run = 0
            bland_mode = False
    else:
        raise SolverError(f"pivot limit {PIVOT_LIMIT} exceeded")

    keep = flow > 0.0
    rows, cols, masses = arcs_i[keep], arcs_j[keep], flow[keep]
    order = np.lexsort((cols, rows))
    rows, cols, masses = rows[order], cols[order], masses[order]
    total = float(masses @ cost[rows, cols])
    return rows, cols, masses, total


def solve_w2_lp(mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportResult:
    """Exact optimal transport for squared Euclidean cost via the simplex."""
    if mu.dimension != nu.dimension:
        raise InstanceError("measures must share the ambient dimension")
    rows, cols, masses, cost = solve_w2_arrays(mu.points, mu.weights, nu.points, nu.weights)
    coupling = Coupling(mu, nu, rows, cols, masses)
    return TransportResult(coupling, cost)


def solve_w2_1d(mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportResult:
    """Comonotone coupling of two measures on the line; exact optimum."""
    if mu.dimension != 1 or nu.dimension != 1:
        raise InstanceError("solve_w2_1d requires dimension 1")
    x = mu.points[:, 0]
    y = nu.points[:, 0]
    a = mu.weights
    b = nu.weights
    rows, cols, masses = [], [], []
    i = j = 0
    r, s = a[0], b[0]
    while i < len(a) and j < len(b):
        t = min(r, s)
        if t > 0.0:
            rows.append(i)
            cols.append(j)
            masses.append(t)
        r -= t
        s -= t
        if r == 0.0 and s == 0.0:
            i += 1
            j += 1
            if i < len(a):
                r = a[i]
            if j < len(b):
                s = b[j]
        elif r == 0.0:
            i += 1
            if i < len(a):
                r = a[i]
        else:
            j += 1
            if j < len(b):
                s = b[j]
    rows = np.array(rows, dtype=int)
    cols = np.array(cols, dtype=int)
    masses = np.array(masses, dtype=float)
    cost = float(masses @ (x[rows] - y[cols]) ** 2)
    return TransportResult(Coupling(mu, nu, rows, cols, masses), cost)


def solve_w2(mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportResult:
    """Exact W2 transport; quantile sweep in dimension one, simplex otherwise."""
    if mu.dimension != nu.dimension:
        raise InstanceError("measures must share the ambient dimension")
    if mu.dimension == 1:
        return solve_w2_1d(mu, nu)
    return solve_w2_lp(mu, nu)


def brute_force_w2(mu: DiscreteMeasure, nu: DiscreteMeasure, max_size: int = 8) -> TransportResult:
    """Exhaustive oracle: minimum over all permutation plans.

    Only valid for uniform marginals of equal support size (a permutation is
    then optimal among all couplings); ties break to the lexicographically
    smallest permutation.
    """
    if mu.dimension != nu.dimension:
        raise InstanceError("measures must share the ambient dimension")
    n = mu.size
    if nu.size != n:
        raise InstanceError("brute force needs equal support sizes")
    if n > max_size:
        raise InstanceError(f"brute force capped at {max_size} points")
    w = 1.0 / n
    if np.abs(mu.weights - w).max() > 1e-12 or np.abs(nu.weights - w).max() > 1e-12:
        raise InstanceError("brute force needs uniform marginals")
    cost = _sq_cost_matrix(mu.points, nu.points)
    perms = np.array(list(itertools.permutations(range(n))), dtype=int)
    totals = cost[np.arange(n)[None, :], perms].sum(axis=1) * w
    # argmin keeps the first (lexicographically smallest) optimal permutation
    best = int(np.argmin(totals))
    rows = np.arange(n)
    cols = perms[best]
    masses = np.full(n, w)
    return TransportResult(Coupling(mu, nu, rows, cols, masses), float(totals[best]))


def _support_pair_products(c: Coupling):
    """Matrix of (x_p - x_q) . (y_p - y_q) over support entry pairs."""
    x = c.source.points[c.rows]
    y = c.target.points[c.cols]
    p = x @ y.T
    d = np.diag(p)
    return d[:, None] + d[None, :] - p - p.T


def check_monotone_support(c: Coupling, tol: float = MONOTONE_TOL):
    """Pairs of support entries violating monotonicity.

    Returns a list of (p, q, inner) with p < q entry indices and
    inner = (x_p - x_q) . (y_p - y_q) < -tol; the empty list certifies that
    the support is a monotone set.
    """
    g = _support_pair_products(c)
    bad = np.argwhere(np.triu(g < -tol, k=1))
    return [(int(p), int(q), float(g[p, q])) for p, q in bad]


def min_support_pair_product(c: Coupling) -> float:
    """Smallest pairwise monotonicity product; 0.0 for single-entry plans."""
    if c.size < 2:
        return 0.0
    g = _support_pair_products(c)
    return float(g[np.triu_indices(c.size, k=1)].min())


@dataclass(frozen=True)
class ScalarProductStats:
    """Scalar-product functionals of a plan: E[x.y], E[(x.y)^-], min support x.y."""

    mean_xy: float
    mean_neg_part: float
    min_support_xy: float
    neg_region_mean: float  # integral of x.y over the {x.y < 0} region


def scalar_product_stats(c: Coupling) -> ScalarProductStats:
    x = c.source.points[c.rows]
    y = c.target.points[c.cols]
    xy = np.einsum("ij,ij->i", x, y)
    neg = np.minimum(xy, 0.0)
    return ScalarProductStats(
        mean_xy=float(c.masses @ xy),
        mean_neg_part=float(c.masses @ (-neg)),
        min_support_xy=float(xy.min()),
        neg_region_mean=float(c.masses @ neg),
    )
