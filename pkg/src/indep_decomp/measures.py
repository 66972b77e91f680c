"""Finitely supported measures on R^m and the atom/conditional-law data model.

A :class:`DiscreteMeasure` is a canonical weighted point cloud: lexicographically
sorted support, strictly positive masses summing to one, no two points closer
than the merge tolerance.  A :class:`ConditionedVariable` is a finite list of
labelled atoms, each carrying a weight and a conditional law; it is the finite
model of a square-integrable random variable together with a finite
conditioning sigma-algebra.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: Points closer than this (coordinatewise) are merged by canonicalization.
MERGE_TOL = 1e-12
#: Masses below this are dropped (and the rest renormalized).
PRUNE_TOL = 1e-15
#: Largest tolerated deviation of a mass vector from total mass one.
MASS_SUM_TOL = 1e-9
#: An atom system counts as centered when every conditional mean is below this.
CENTER_TOL = 1e-9


class InstanceError(ValueError):
    """Raised when input data violates the instance contracts."""


def _as_points(points, dimension=None) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise InstanceError("support must be a nonempty (n, m) array")
    if dimension is not None and pts.shape[1] != dimension:
        raise InstanceError(
            f"point dimension {pts.shape[1]} does not match declared dimension {dimension}"
        )
    if not np.all(np.isfinite(pts)):
        raise InstanceError("support contains non-finite coordinates")
    return pts


def _lex_order(points: np.ndarray) -> np.ndarray:
    # primary sort key is coordinate 0, then 1, ...
    return np.lexsort(points.T[::-1])


@dataclass(frozen=True)
class DiscreteMeasure:
    """Canonical finitely supported probability measure on R^m.

    Construct through :meth:`canonical` (or :func:`canonicalize`) unless the
    data is already canonical; ``__post_init__`` only spot-checks invariants.
    """

    points: np.ndarray  # (n, m)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        pts = _as_points(self.points)
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (pts.shape[0],):
            raise InstanceError("weights must be one per support point")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise InstanceError("weights must be finite and strictly positive")
        if abs(w.sum() - 1.0) > MASS_SUM_TOL:
            raise InstanceError(
                f"total mass {w.sum()!r} deviates from 1 by more than {MASS_SUM_TOL}"
            )
        order = _lex_order(pts)
        if not np.array_equal(order, np.arange(len(order))):
            raise InstanceError("support must be lexicographically sorted; use canonical()")
        if len(pts) > 1:
            gaps = np.abs(np.diff(pts, axis=0)).max(axis=1)
            if np.any(gaps <= MERGE_TOL):
                raise InstanceError("adjacent duplicate points; use canonical()")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @staticmethod
    def canonical(points, weights, dimension=None) -> "DiscreteMeasure":
        measure, _ = canonical_with_index_map(points, weights, dimension)
        return measure

    @staticmethod
    def point_mass(x) -> "DiscreteMeasure":
        return DiscreteMeasure.canonical([x], [1.0])

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def second_moment(self) -> float:
        """E|x|^2 under the measure."""
        return float(self.weights @ np.einsum("ij,ij->i", self.points, self.points))

    def abs_moment(self) -> float:
        """E|x| (Euclidean norm) under the measure."""
        return float(self.weights @ np.linalg.norm(self.points, axis=1))

    def translate(self, shift) -> "DiscreteMeasure":
        shift = np.asarray(shift, dtype=float)
        return DiscreteMeasure.canonical(self.points + shift, self.weights)


def canonical_with_index_map(points, weights, dimension=None):
    """Canonicalize a weighted cloud, returning the measure and an index map.

    ``index_map[i]`` is the row of the canonical support holding (part of) the
    mass of input point ``i``, or -1 when that point's merged group was pruned.
    Merged groups are replaced by their mass-weighted average location; masses
    below :data:`PRUNE_TOL` are dropped and the remainder renormalized.
    """
    pts = _as_points(points, dimension)
    w = np.asarray(weights, dtype=float).copy()
    if w.shape != (pts.shape[0],):
        raise InstanceError("weights must be one per support point")
    if not np.all(np.isfinite(w)):
        raise InstanceError("weights must be finite")
    if np.any(w < -PRUNE_TOL):
        raise InstanceError("weights must be nonnegative")
    w = np.maximum(w, 0.0)
    total = w.sum()
    if abs(total - 1.0) > MASS_SUM_TOL:
        raise InstanceError(
            f"total mass {total!r} deviates from 1 by more than {MASS_SUM_TOL}"
        )

    cur_pts, cur_w = pts.copy(), w.copy()
    owners = [[i] for i in range(len(w))]
    # Repeated merge passes: averaging can move points closer together, so a
    # single pass does not guarantee pairwise-separated output.
    for _ in range(len(w) + 1):
        order = _lex_order(cur_pts)
        cur_pts, cur_w = cur_pts[order], cur_w[order]
        owners = [owners[k] for k in order]
        merged_pts, merged_w, merged_owners = [], [], []
        merged_any = False
        for p, mass, own in zip(cur_pts, cur_w, owners):
            if merged_pts and np.abs(p - merged_pts[-1]).max() <= MERGE_TOL:
                tot = merged_w[-1] + mass
                if tot > 0:
                    merged_pts[-1] = (merged_w[-1] * merged_pts[-1] + mass * p) / tot
                merged_w[-1] = tot
                merged_owners[-1].extend(own)
                merged_any = True
            else:
                merged_pts.append(p.copy())
                merged_w.append(mass)
                merged_owners.append(list(own))
        cur_pts = np.array(merged_pts)
        cur_w = np.array(merged_w)
        owners = merged_owners
        if not merged_any:
            break

    keep = cur_w >= PRUNE_TOL
    if not np.any(keep):
        raise InstanceError("all mass pruned; measure is empty")
    cur_pts, cur_w = cur_pts[keep], cur_w[keep]
    owners = [own for own, k in zip(owners, keep) if k]
    cur_w = cur_w / cur_w.sum()

    order = _lex_order(cur_pts)
    cur_pts, cur_w = cur_pts[order], cur_w[order]
    owners = [owners[k] for k in order]
    index_map = np.full(len(w), -1, dtype=int)
    for row, own in enumerate(owners):
        index_map[own] = row
    return DiscreteMeasure(cur_pts, cur_w), index_map


def canonicalize(measure: DiscreteMeasure) -> DiscreteMeasure:
    """Return the canonical form of ``measure`` (idempotent)."""
    return DiscreteMeasure.canonical(measure.points, measure.weights)


@dataclass(frozen=True)
class Atom:
    """One atom of the conditioning sigma-algebra with its conditional law."""

    id: str
    weight: float
    law: DiscreteMeasure

    def __post_init__(self):
        if not (np.isfinite(self.weight) and self.weight > 0):
            raise InstanceError(f"atom {self.id!r}: weight must be in (0, 1]")


@dataclass(frozen=True)
class ConditionedVariable:
    """Finite model of a random variable together with a finite sigma-algebra."""

    dimension: int
    atoms: tuple = field(default=())

    def __post_init__(self):
        atoms = tuple(self.atoms)
        if not atoms:
            raise InstanceError("need at least one atom")
        for a in atoms:
            if a.law.dimension != self.dimension:
                raise InstanceError(
                    f"atom {a.id!r}: law dimension {a.law.dimension} != {self.dimension}"
                )
        total = sum(a.weight for a in atoms)
        if abs(total - 1.0) > MASS_SUM_TOL:
            raise InstanceError(
                f"atom weights sum to {total!r}, deviating from 1 by more than {MASS_SUM_TOL}"
            )
        object.__setattr__(self, "atoms", atoms)

    @property
    def atom_count(self) -> int:
        return len(self.atoms)

    def atom_means(self) -> np.ndarray:
        return np.array([a.law.mean() for a in self.atoms])

    def is_centered(self, tol: float = CENTER_TOL) -> bool:
        return bool(np.abs(self.atom_means()).max() <= tol)


def mean(measure: DiscreteMeasure) -> np.ndarray:
    """Weighted mean of a discrete measure."""
    return measure.mean()


def norm_l2_sq(cv: ConditionedVariable) -> float:
    """Squared L2 norm E|X|^2 of the modelled variable."""
    return float(sum(a.weight * a.law.second_moment() for a in cv.atoms))


def norm_l1(cv: ConditionedVariable) -> float:
    """L1 norm E|X| (Euclidean norm per point) of the modelled variable."""
    return float(sum(a.weight * a.law.abs_moment() for a in cv.atoms))


def center(cv: ConditionedVariable):
    """Translate every conditional law to mean zero.

    Returns the centered variable and the list of subtracted per-atom means
    (the conditional expectation of the input given the sigma-algebra).
    """
    means = []
    atoms = []
    for a in cv.atoms:
        mu = a.law.mean()
        means.append(mu)
        atoms.append(Atom(a.id, a.weight, a.law.translate(-mu)))
    return ConditionedVariable(cv.dimension, tuple(atoms)), means
