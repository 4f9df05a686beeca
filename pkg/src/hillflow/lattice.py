"""Planar lattices, dual bases, and fundamental directions.

A lattice L is spanned by two independent vectors v1, v2.  The dual lattice
L* is spanned by the dual basis (delta1, delta2) fixed by delta_i . v_j =
delta_ij, i.e. the rows of the inverse basis matrix.  A *fundamental
direction* is a primitive dual vector delta = p*delta1 + r*delta2 (gcd(p,r)
= 1) taken once per +/- pair; each carries the shortest lattice vector d
orthogonal to it, which for primitive (p, r) is +/-(-r*v1 + p*v2).

The norm-separation check below ("no two non-parallel lattice vectors of
equal length in a ball") is the genericity condition the downstream modules
rely on to identify directional components of a separable potential from
spectral data alone.
"""

from dataclasses import dataclass
from math import gcd

import numpy as np

from .errors import ConditionTwoViolated, DegenerateBasis, OrthogonalDirection

_NORM_TOL = 1e-9


@dataclass(frozen=True)
class Lattice2D:
    """A rank-2 lattice with its dual basis and cell volume."""

    v1: np.ndarray
    v2: np.ndarray
    delta1: np.ndarray
    delta2: np.ndarray
    vol_gamma: float

    def lattice_vector(self, m, n):
        """Integer combination m*v1 + n*v2."""
        return m * self.v1 + n * self.v2

    def dual_vector(self, p, r):
        """Integer combination p*delta1 + r*delta2."""
        return p * self.delta1 + r * self.delta2


def build_lattice(v1, v2):
    """Construct a Lattice2D from basis vectors.

    Raises DegenerateBasis when the vectors are dependent (|det| < 1e-12
    relative to the vector scale).
    """
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    basis = np.column_stack([v1, v2])
    det = np.linalg.det(basis)
    scale = max(np.linalg.norm(v1) * np.linalg.norm(v2), 1e-300)
    if abs(det) < 1e-12 * scale:
        raise DegenerateBasis(f"basis vectors are dependent (det={det:.3e})")
    inv = np.linalg.inv(basis)
    # rows of inv(V) are dual to the columns of V
    return Lattice2D(v1=v1, v2=v2, delta1=inv[0].copy(), delta2=inv[1].copy(),
                     vol_gamma=abs(det))


def lattice_points_in_ball(lat, radius, *, dual=False):
    """All nonzero integer pairs (m, n) with |m a + n b| <= radius.

    Works on the primal basis by default, on the dual basis with dual=True.
    Returns (coeffs, vectors) with coeffs an (N, 2) int array.
    """
    a, b = (lat.delta1, lat.delta2) if dual else (lat.v1, lat.v2)
    basis = np.column_stack([a, b])
    # conservative coefficient bound: |m|, |n| <= radius * ||row of inv||
    inv = np.linalg.inv(basis)
    bound = int(np.ceil(radius * np.abs(inv).sum(axis=1).max())) + 1
    rng = np.arange(-bound, bound + 1)
    mm, nn = np.meshgrid(rng, rng, indexing="ij")
    coeffs = np.column_stack([mm.ravel(), nn.ravel()])
    coeffs = coeffs[(coeffs != 0).any(axis=1)]
    vecs = coeffs @ basis.T
    keep = np.linalg.norm(vecs, axis=1) <= radius + 1e-12
    return coeffs[keep], vecs[keep]


def check_distinct_norms(lat, radius):
    """Return pairs of non-parallel lattice vectors with equal norms.

    An empty list certifies the norm-separation condition inside the ball of
    the given radius.  Pairs are reported once, as ((m, n), (m', n')).
    """
    coeffs, vecs = lattice_points_in_ball(lat, radius)
    norms = np.linalg.norm(vecs, axis=1)
    order = np.argsort(norms, kind="stable")
    coeffs, vecs, norms = coeffs[order], vecs[order], norms[order]
    bad = []
    i = 0
    while i < len(norms):
        j = i + 1
        while j < len(norms) and norms[j] - norms[i] < _NORM_TOL:
            c1, c2 = coeffs[i], coeffs[j]
            # skip +/- pairs (parallel)
            if c1[0] * c2[1] - c1[1] * c2[0] != 0:
                pair = (tuple(int(x) for x in c1), tuple(int(x) for x in c2))
                if (pair[1], pair[0]) not in bad:
                    bad.append(pair)
            j += 1
        i += 1
    return bad


def assert_distinct_norms(lat, radius):
    """Raise ConditionTwoViolated when the ball contains an equal-norm pair."""
    bad = check_distinct_norms(lat, radius)
    if bad:
        raise ConditionTwoViolated(
            f"equal-norm non-parallel pairs within radius {radius}: {bad[:4]}"
            + ("..." if len(bad) > 4 else ""))


@dataclass(frozen=True)
class Direction:
    """A fundamental dual direction with its orthogonal lattice vector.

    delta = p*delta1 + r*delta2 (gcd(p, r) = 1, first nonzero of (p, r)
    positive); d = m*v1 + n*v2 is the shortest lattice vector with
    delta . d = 0, ties broken lexicographically on (m, n).
    """

    index: int
    p: int
    r: int
    delta: np.ndarray
    d: np.ndarray
    d_coeffs: tuple

    @property
    def norm(self):
        return float(np.linalg.norm(self.delta))

    @property
    def norm_sq(self):
        return float(self.delta @ self.delta)


def _orthogonal_lattice_vector(lat, p, r):
    """Shortest d in L with (p delta1 + r delta2) . d = 0.

    delta . (m v1 + n v2) = p m + r n, so the orthogonal sublattice is the
    integer multiples of (-r, p)/gcd; for primitive (p, r) the minimizers are
    +/-(-r, p) and the lexicographically larger coefficient pair wins.
    """
    if p == 0 and r == 0:
        raise OrthogonalDirection("zero direction has no orthogonal complement")
    g = gcd(abs(p), abs(r))
    m, n = -r // g, p // g
    if (m, n) < (-m, -n):
        m, n = -m, -n
    return lat.lattice_vector(m, n), (m, n)


def direction_from_pr(lat, p, r, index=0):
    """Build a Direction from dual coordinates (p, r).

    The pair must be primitive (gcd 1; this is equivalent to delta . d = 1
    being solvable over the lattice) and sign-normalized so that the first
    nonzero coordinate is positive.
    """
    p, r = int(p), int(r)
    if p == 0 and r == 0:
        raise ValueError("direction (0, 0) is not admissible")
    if gcd(abs(p), abs(r)) != 1:
        raise ValueError(f"({p}, {r}) is not primitive in the dual lattice")
    first = p if p != 0 else r
    if first < 0:
        raise ValueError(f"({p}, {r}) violates the sign convention "
                         "(first nonzero coordinate must be positive)")
    d, d_coeffs = _orthogonal_lattice_vector(lat, p, r)
    return Direction(index=index, p=p, r=r, delta=lat.dual_vector(p, r),
                     d=d, d_coeffs=d_coeffs)


def fundamental_directions(lat, radius):
    """Primitive dual vectors in a ball, one per +/- pair.

    Sorted by |delta| with lexicographic (p, r) tie-break; indices are
    assigned in that order starting from 1.
    """
    coeffs, vecs = lattice_points_in_ball(lat, radius, dual=True)
    seen = set()
    cand = []
    for (p, r), v in zip(coeffs, vecs):
        p, r = int(p), int(r)
        if gcd(abs(p), abs(r)) != 1:
            continue
        first = p if p != 0 else r
        if first < 0:
            p, r = -p, -r
        if (p, r) in seen:
            continue
        seen.add((p, r))
        cand.append((float(np.linalg.norm(lat.dual_vector(p, r))), p, r))
    cand.sort(key=lambda t: (round(t[0], 12), t[1], t[2]))
    out = []
    for idx, (_, p, r) in enumerate(cand, start=1):
        out.append(direction_from_pr(lat, p, r, index=idx))
    return out


def coupling_constant(lat, dl, dk, dj):
    """Geometric constant coupling two directions inside a third's invariant.

    c_{l,k,j} = (delta_l . delta_k) * vol_gamma / (2 (delta_l . d_j)(delta_k . d_j)).

    Symmetric in (l, k).  Raises OrthogonalDirection when either direction is
    orthogonal to d_j (the weight 1/(delta . d_j) would be undefined).
    """
    num = float(dl.delta @ dk.delta)
    a = float(dl.delta @ dj.d)
    b = float(dk.delta @ dj.d)
    if abs(a) < 1e-14 or abs(b) < 1e-14:
        raise OrthogonalDirection(
            f"direction ({dl.p},{dl.r}) or ({dk.p},{dk.r}) is orthogonal to "
            f"d of ({dj.p},{dj.r})")
    return num * lat.vol_gamma / (2.0 * a * b)
