"""Wasserstein-2 barycenters of finitely many weighted discrete laws.

The target functional is the weighted sum of squared W2 distances.  On the
line the minimizer has a closed form (the mass-weighted average of quantile
functions); in higher dimension a free-support alternating scheme converges
to a barycentric fixed point; a fixed-support mode re-optimizes the masses on
a frozen support by solving one joint linear program.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from ._parallel import thread_map
from .measures import DiscreteMeasure, InstanceError, canonical_with_index_map, _lex_order
from .transport import Coupling, SolverError, solve_w2, solve_w2_arrays

#: Relative objective-decrease threshold for the alternating iteration.
FREE_SUPPORT_REL_TOL = 1e-10
#: Iteration budget for the alternating iteration.
FREE_SUPPORT_MAX_ITER = 500


@dataclass(frozen=True)
class BarycenterProblem:
    """Atom-weighted family of laws whose barycenter is sought.

    ``mode`` is one of ``auto`` (exact quantile method for m=1, free support
    otherwise), ``exact1d``, ``freeSupport`` or ``fixedSupport``; the latter
    requires ``support``.
    """

    atoms: tuple
    support_size: int | None = None
    seed: int = 0
    mode: str = "auto"
    support: np.ndarray | None = None

    def __post_init__(self):
        atoms = tuple((float(w), law) for w, law in self.atoms)
        if not atoms:
            raise InstanceError("barycenter problem needs at least one atom")
        total = sum(w for w, _ in atoms)
        if abs(total - 1.0) > 1e-9:
            raise InstanceError(f"atom weights sum to {total!r}, not 1")
        dims = {law.dimension for _, law in atoms}
        if len(dims) != 1:
            raise InstanceError("all laws must share one dimension")
        if self.mode not in ("auto", "exact1d", "freeSupport", "fixedSupport"):
            raise InstanceError(f"unknown barycenter mode {self.mode!r}")
        object.__setattr__(self, "atoms", atoms)

    @property
    def dimension(self) -> int:
        return self.atoms[0][1].dimension


@dataclass(frozen=True)
class BarycenterResult:
    nu0: DiscreteMeasure
    plans: tuple  # one Coupling per atom, targets = nu0
    objective: float
    converged: bool
    iterations: int


def _finalize(atom_weights, plans, nu0, converged, iterations) -> BarycenterResult:
    objective = float(sum(w * p.cost() for w, p in zip(atom_weights, plans)))
    return BarycenterResult(nu0, tuple(plans), objective, converged, iterations)


def objective(nu: DiscreteMeasure, atoms) -> float:
    """Weighted sum of squared W2 distances from each law to ``nu``."""
    return float(sum(w * solve_w2(law, nu).cost for w, law in atoms))


def barycenter_1d(problem: BarycenterProblem) -> BarycenterResult:
    """Exact global barycenter on the line by quantile averaging.

    The union of all cumulative-mass breakpoints defines a common grid of mass
    cells; on each cell the barycenter support point is the atom-weighted
    average of the laws' quantile values there.
    """
    if problem.dimension != 1:
        raise InstanceError("barycenter_1d requires dimension 1")
    weights = [w for w, _ in problem.atoms]
    laws = [law for _, law in problem.atoms]
    cums = [np.cumsum(law.weights) for law in laws]
    qs = np.unique(np.concatenate(cums))
    edges = np.concatenate(([0.0], qs))
    cell_mass = np.diff(edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    pts = np.zeros(len(mids))
    for w, law, cum in zip(weights, laws, cums):
        idx = np.minimum(np.searchsorted(cum, mids, side="left"), law.size - 1)
        pts += w * law.points[idx, 0]
    nu0 = DiscreteMeasure.canonical(pts.reshape(-1, 1), cell_mass)
    plans = [solve_w2(law, nu0).coupling for law in laws]
    return _finalize(weights, plans, nu0, converged=True, iterations=1)


def _farthest_point_init(pool: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Deterministic spread-out initial support: seeded start, then greedy
    farthest-point traversal (ties to the smallest index)."""
    rng = np.random.default_rng(seed)
    start = int(rng.integers(len(pool)))
    chosen = [start]
    d2 = ((pool - pool[start]) ** 2).sum(axis=1)
    while len(chosen) < min(n, len(pool)):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((pool - pool[nxt]) ** 2).sum(axis=1))
    while len(chosen) < n:  # more points requested than the pool holds
        chosen.append(len(chosen) % len(pool))
    return pool[chosen]


def barycenter_free_support(problem: BarycenterProblem) -> BarycenterResult:
    """Alternating minimization over a support of fixed uniform masses.

    Each round solves one exact transport per atom, then moves every support
    point to the mean of its incoming mass (points receiving nothing stay
    put).  The objective never increases; the loop stops once it stalls and
    the support satisfies the barycentric fixed-point equations.
    """
    n_support = problem.support_size or max(law.size for _, law in problem.atoms)
    if n_support < 1:
        raise InstanceError("support size must be at least 1")
    weights = [w for w, _ in problem.atoms]
    laws = [law for _, law in problem.atoms]
    dim = problem.dimension

    pool = np.vstack([law.points for law in laws])
    support = _farthest_point_init(pool, n_support, problem.seed)
    support = support[_lex_order(support)]
    masses = np.full(n_support, 1.0 / n_support)

    prev_objective = None
    converged = False
    iterations = 0
    sols = []
    for iterations in range(1, FREE_SUPPORT_MAX_ITER + 1):
        sols = thread_map(
            lambda law: solve_w2_arrays(law.points, law.weights, support, masses), laws
        )
        obj = sum(w * s[3] for w, s in zip(weights, sols))

        incoming_mass = np.zeros(n_support)
        incoming_sum = np.zeros((n_support, dim))
        for w, law, (rows, cols, cell_mass, _) in zip(weights, laws, sols):
            np.add.at(incoming_mass, cols, w * cell_mass)
            np.add.at(incoming_sum, cols, (w * cell_mass)[:, None] * law.points[rows])
        moved = np.where(
            incoming_mass[:, None] > 0.0,
            incoming_sum / np.maximum(incoming_mass, 1e-300)[:, None],
            support,
        )
        deviation = np.abs(moved - support).max()
        fp_tol = 1e-9 * (1.0 + np.abs(support).max())

        if (
            prev_objective is not None
            and prev_objective - obj < FREE_SUPPORT_REL_TOL * (1.0 + obj)
            and deviation <= fp_tol
        ):
            converged = True
            break
        if iterations < FREE_SUPPORT_MAX_ITER:
            support = moved[_lex_order(moved)]
        prev_objective = obj

    nu0, index_map = canonical_with_index_map(support, masses)
    plans = [
        _remap_plan(law, nu0, rows, cols, cell_mass, index_map)
        for law, (rows, cols, cell_mass, _) in zip(laws, sols)
    ]
    return _finalize(weights, plans, nu0, converged, iterations)


def _remap_plan(law, nu0, rows, cols, masses, index_map) -> Coupling:
    """Re-target plan columns through a canonicalization index map."""
    new_cols = index_map[cols]
    keep = new_cols >= 0
    rows, new_cols, masses = rows[keep], new_cols[keep], masses[keep]
    # combining entries that now share a (row, col) cell keeps masses positive
    key = rows * nu0.size + new_cols
    order = np.argsort(key, kind="stable")
    key, rows, new_cols, masses = key[order], rows[order], new_cols[order], masses[order]
    uniq, starts = np.unique(key, return_index=True)
    summed = np.add.reduceat(masses, starts)
    return Coupling(law, nu0, rows[starts], new_cols[starts], summed)


def barycenter_fixed_support(support, problem: BarycenterProblem) -> BarycenterResult:
    """Globally optimal masses on a frozen support.

    The joint mass problem (shared column sums across all per-atom plans) is a
    single linear program; it is handed to HiGHS, after which each per-atom
    plan is re-derived exactly for the optimal masses.
    """
    support = np.asarray(support, dtype=float)
    if support.ndim == 1:
        support = support.reshape(-1, 1)
    if support.size == 0:
        raise InstanceError("fixed support must be nonempty")
    if support.shape[1] != problem.dimension:
        raise InstanceError("support dimension mismatch")
    weights = [w for w, _ in problem.atoms]
    laws = [law for _, law in problem.atoms]
    n_support = len(support)

    blocks = []
    cost_vec = []
    sizes = [law.size for law in laws]
    offset = 0
    offsets = []
    for w, law in zip(weights, laws):
        diff = law.points[:, None, :] - support[None, :, :]
        cost = np.einsum("ijk,ijk->ij", diff, diff)
        cost_vec.append(w * cost.ravel())
        offsets.append(offset)
        offset += law.size * n_support
    q_offset = offset
    n_vars = q_offset + n_support
    c = np.concatenate(cost_vec + [np.zeros(n_support)])

    rows_a, cols_a, vals, b_eq = [], [], [], []
    eq = 0
    for a, law in enumerate(laws):
        for i in range(law.size):  # row sums = law masses
            for j in range(n_support):
                rows_a.append(eq)
                cols_a.append(offsets[a] + i * n_support + j)
                vals.append(1.0)
            b_eq.append(law.weights[i])
            eq += 1
    for a, law in enumerate(laws):
        for j in range(n_support):  # column sums = shared masses q
            for i in range(law.size):
                rows_a.append(eq)
                cols_a.append(offsets[a] + i * n_support + j)
                vals.append(1.0)
            rows_a.append(eq)
            cols_a.append(q_offset + j)
            vals.append(-1.0)
            b_eq.append(0.0)
            eq += 1
    a_eq = sp.csr_matrix((vals, (rows_a, cols_a)), shape=(eq, n_vars))
    res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise SolverError(f"fixed-support barycenter LP failed: {res.message}")
    q = np.maximum(res.x[q_offset:], 0.0)
    nu0 = DiscreteMeasure.canonical(support, q)
    # given the optimal masses the problem separates; exact per-atom re-solve
    plans = [solve_w2(law, nu0).coupling for law in laws]
    return _finalize(weights, plans, nu0, converged=True, iterations=1)


def solve_barycenter(problem: BarycenterProblem) -> BarycenterResult:
    mode = problem.mode
    if mode == "auto":
        mode = "exact1d" if problem.dimension == 1 else "freeSupport"
    if mode == "exact1d":
        return barycenter_1d(problem)
    if mode == "freeSupport":
        return barycenter_free_support(problem)
    if problem.support is None:
        raise InstanceError("fixedSupport mode requires a support")
    return barycenter_fixed_support(problem.support, problem)
