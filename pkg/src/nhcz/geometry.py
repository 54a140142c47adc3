"""Exact dyadic-square geometry.

Squares live on the standard dyadic lattice: generation ``k`` holds the
half-open cells ``[i*2^-k, (i+1)*2^-k) x [j*2^-k, (j+1)*2^-k)``.  Admissible
families must keep the 4-fold concentric dilates of their members pairwise
disjoint and obey a packing bound: for every dyadic square Q, the sum of
``side^(2-d)`` over members contained in Q may not exceed a constant times
``side(Q)^(2-d)``.  Both checks are decided here, the first one in exact
integer arithmetic.
"""

from __future__ import annotations

import json
import math
import os
import random
import tempfile
from dataclasses import dataclass

import numpy as np

# Generations are capped so scaled coordinates fit comfortably in int64.
MAX_ABS_GENERATION = 40


@dataclass(frozen=True, order=True)
class DyadicSquare:
    """Lattice cell of generation ``k`` at integer position ``(i, j)``."""

    k: int
    i: int
    j: int

    @property
    def side(self) -> float:
        return 2.0 ** (-self.k)

    @property
    def center(self) -> tuple[float, float]:
        s = 2.0 ** (-self.k)
        return ((self.i + 0.5) * s, (self.j + 0.5) * s)

    def ancestor(self, k: int) -> "DyadicSquare":
        """The unique generation-``k`` square containing this one (k <= self.k)."""
        if k > self.k:
            raise ValueError(f"no generation-{k} ancestor of a generation-{self.k} square")
        shift = self.k - k
        return DyadicSquare(k, self.i >> shift, self.j >> shift)

    def contains(self, other: "DyadicSquare") -> bool:
        return other.k >= self.k and other.ancestor(self.k) == self


@dataclass(frozen=True)
class SquareRegion:
    """Closed axis-aligned square given by center and half-side (a dilate)."""

    cx: float
    cy: float
    half_side: float

    def contains_point(self, x: float, y: float) -> bool:
        return abs(x - self.cx) <= self.half_side and abs(y - self.cy) <= self.half_side

    def intersects(self, other: "SquareRegion") -> bool:
        return (
            abs(self.cx - other.cx) <= self.half_side + other.half_side
            and abs(self.cy - other.cy) <= self.half_side + other.half_side
        )


@dataclass(frozen=True)
class DisjointnessVerdict:
    ok: bool
    witness: tuple[int, int] | None = None


def square_extent(sq: DyadicSquare) -> tuple[tuple[float, float], float]:
    """Center and side of a lattice cell, exact as dyadic rationals."""
    return sq.center, sq.side


def dilated_square(sq: DyadicSquare, lam: float) -> SquareRegion:
    """Concentric dilate ``lam * Q`` as a closed region."""
    if lam <= 0:
        raise ValueError(f"dilation factor must be positive, got {lam}")
    cx, cy = sq.center
    return SquareRegion(cx, cy, lam * sq.side / 2.0)


def _scaled_centers_halves(squares, lam_num=4):
    """Integer center/half-side data in units of 2^-(kmax+1).

    Centers become odd-integer multiples, the half-side of ``lam_num * Q``
    (lam_num a positive integer) stays integral, so closed-dilate overlap
    tests are exact.
    """
    kmax = max(s.k for s in squares)
    cx, cy, h = [], [], []
    for s in squares:
        sc = 1 << (kmax - s.k)
        cx.append((2 * s.i + 1) * sc)
        cy.append((2 * s.j + 1) * sc)
        h.append(lam_num * sc)
    return cx, cy, h


def check_disjointness(squares: list[DyadicSquare]) -> DisjointnessVerdict:
    """Exact verdict on pairwise disjointness of the closed 4-dilates.

    Returns the first offending index pair as witness; touching dilates
    count as intersecting.
    """
    if not squares:
        raise ValueError("empty square list")
    cx, cy, h = _scaled_centers_halves(squares, lam_num=4)
    n = len(squares)
    for a in range(n):
        for b in range(a + 1, n):
            if abs(cx[a] - cx[b]) <= h[a] + h[b] and abs(cy[a] - cy[b]) <= h[a] + h[b]:
                return DisjointnessVerdict(False, (a, b))
    return DisjointnessVerdict(True, None)


def _disjoint_from_accepted(cand_scaled, accepted_scaled) -> bool:
    cx, cy, h = cand_scaled
    for (ax, ay, ah) in accepted_scaled:
        if abs(cx - ax) <= h + ah and abs(cy - ay) <= h + ah:
            return False
    return True


def min_pair_distances(squares: list[DyadicSquare]) -> np.ndarray:
    """Sup-norm distances dist_inf(Q_a, Q_b) for all pairs a < b (floats)."""
    out = []
    for a in range(len(squares)):
        for b in range(a + 1, len(squares)):
            sa, sb = squares[a], squares[b]
            (ax, ay), la = square_extent(sa)
            (bx, by), lb = square_extent(sb)
            dx = max(abs(ax - bx) - (la + lb) / 2.0, 0.0)
            dy = max(abs(ay - by) - (la + lb) / 2.0, 0.0)
            out.append(max(dx, dy))
    return np.asarray(out)


def _candidate_ancestors(squares, d):
    """Dyadic squares that can attain the packing supremum.

    Every ratio above 1 is attained at an ancestor of a member whose
    generation is at least ``k_top``: coarser squares have ratio bounded by
    total_weight / side^(2-d) <= 1, and every member attains exactly its own
    (>= 1) ratio, so nothing above the cutoff is lost.
    """
    w_total = sum(s.side ** (2.0 - d) for s in squares)
    kappa = -math.log2(w_total) / (2.0 - d)
    k_top = math.floor(kappa) - 1  # one extra generation for float slack
    cands = set()
    for s in squares:
        cands.add(s)
        for ka in range(k_top, s.k):
            cands.add(s.ancestor(ka))
    return sorted(cands)


def packing_constant(squares: list[DyadicSquare], d: float) -> tuple[float, DyadicSquare]:
    """Supremum over dyadic squares Q of sum(side^(2-d) of members in Q) / side(Q)^(2-d).

    Returns the constant and a square attaining it.  Works for arbitrary
    square lists (admissible or not); only finitely many candidate ancestors
    need inspection.
    """
    if not squares:
        raise ValueError("empty square list")
    if not (0.0 < d < 2.0):
        raise ValueError(f"exponent d must lie in (0, 2), got {d}")

    cands = _candidate_ancestors(squares, d)
    mk = np.array([s.k for s in squares], dtype=np.int64)
    mi = np.array([s.i for s in squares], dtype=np.int64)
    mj = np.array([s.j for s in squares], dtype=np.int64)
    w = (2.0 ** (-mk.astype(float))) ** (2.0 - d)

    ck = np.array([c.k for c in cands], dtype=np.int64)
    ci = np.array([c.i for c in cands], dtype=np.int64)
    cj = np.array([c.j for c in cands], dtype=np.int64)

    shift = mk[None, :] - ck[:, None]
    if shift.max() > 60:
        return _packing_constant_bigint(squares, cands, d)
    ok = shift >= 0
    sh = np.where(ok, shift, 0)
    inside = ok & (np.right_shift(mi[None, :], sh) == ci[:, None]) & (
        np.right_shift(mj[None, :], sh) == cj[:, None]
    )
    sums = inside @ w
    ratios = sums / (2.0 ** (-ck.astype(float))) ** (2.0 - d)
    best = int(np.argmax(ratios))
    return float(ratios[best]), cands[best]


def _packing_constant_bigint(squares, cands, d):
    # fallback for generation spans beyond int64 shift range
    best_ratio, best = -1.0, cands[0]
    for c in cands:
        tot = sum(s.side ** (2.0 - d) for s in squares if c.contains(s))
        ratio = tot / c.side ** (2.0 - d)
        if ratio > best_ratio:
            best_ratio, best = ratio, c
    return best_ratio, best


@dataclass
class SquareFamily:
    """A square list together with its exponent and packing data.

    ``complete`` is False when a generator run stopped at its attempt budget
    before reaching the requested member count.
    """

    squares: list[DyadicSquare]
    d: float
    packing_target: float
    c_pack: float
    c_pack_witness: DyadicSquare
    complete: bool = True

    @classmethod
    def build(cls, squares, d, packing_target, complete=True) -> "SquareFamily":
        if not squares:
            raise ValueError("a family needs at least one square")
        if not (0.0 < d < 2.0):
            raise ValueError(f"exponent d must lie in (0, 2), got {d}")
        if packing_target < 1.0:
            raise ValueError(f"packing target must be >= 1, got {packing_target}")
        c, wit = packing_constant(squares, d)
        return cls(list(squares), float(d), float(packing_target), c, wit, complete)

    def __len__(self) -> int:
        return len(self.squares)

    def sides(self) -> np.ndarray:
        return np.array([s.side for s in self.squares])

    def centers(self) -> np.ndarray:
        return np.array([s.center for s in self.squares])

    def to_json_dict(self) -> dict:
        return {
            "d": self.d,
            "packing_target": self.packing_target,
            "squares": [{"k": s.k, "i": s.i, "j": s.j} for s in self.squares],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SquareFamily":
        squares = [DyadicSquare(int(s["k"]), int(s["i"]), int(s["j"])) for s in obj["squares"]]
        return cls.build(squares, float(obj["d"]), float(obj["packing_target"]))

    def save(self, path) -> None:
        text = json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":")) + "\n"
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path) -> "SquareFamily":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def suggest_generation_range(count: int, d: float, packing_target: float = 4.0) -> tuple[int, int]:
    """Generation window in which a count-member draw has room to succeed.

    Fine enough that the total packing weight stays around half the target
    and that 4-dilates of the finest squares have spare room in a unit box.
    """
    k_pack = math.log2(max(2.0 * count / packing_target, 1.0)) / (2.0 - d)
    k_geom = 0.5 * math.log2(count) + 3.0
    k0 = max(2, math.ceil(max(k_pack, k_geom)))
    return (k0, k0 + 2)


def generate_cascade_family(
    seed: int,
    count: int,
    d: float,
    packing_target: float,
    k0: int = 0,
    refine_prob: float = 0.0,
) -> SquareFamily:
    """Seeded hierarchical family with scale-invariant local geometry.

    A 4-ary cascade: each cluster cell spawns children in its four corner
    subcells, contracting by 2^-s per level with s = max(3, ceil(2/(2-d))).
    The contraction keeps sibling 4-dilates disjoint and the per-level
    packing ratio at most 1, so the packing constant stays near 1 for every
    size.  Because each level repeats the same local configuration, operator
    constants measured on cascades of different sizes are comparable, which
    uniform rejection sampling cannot offer (its density, and with it the
    operator scale, degenerates as the count grows).  A seeded fraction of
    bottom squares is refined one generation for variety; surplus bottom
    cells beyond ``count`` are dropped at random.
    """
    if not (0.0 < d < 2.0):
        raise ValueError(f"exponent d must lie in (0, 2), got {d}")
    if packing_target < 1.0:
        raise ValueError(f"packing target must be >= 1, got {packing_target}")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = random.Random(seed)
    levels = math.ceil(math.log(count, 4)) if count > 1 else 0
    # contraction depends on d alone so cascades of different sizes repeat the
    # same local geometry; per-level packing factor 4 * 2^(-spread (2-d)) <= 1,
    # and spread >= 3 keeps sibling 4-dilates apart
    spread = max(3, math.ceil(2.0 / (2.0 - d)))
    if abs(k0) + spread * levels + 1 > MAX_ABS_GENERATION:
        raise ValueError(f"cascade depth for count={count}, d={d} exceeds the generation cap")
    cells = [DyadicSquare(k0, 0, 0)]
    for _ in range(levels):
        corner = (1 << spread) - 1
        nxt = []
        for c in cells:
            base_i, base_j = c.i << spread, c.j << spread
            for a, b in ((0, 0), (corner, 0), (0, corner), (corner, corner)):
                nxt.append(DyadicSquare(c.k + spread, base_i + a, base_j + b))
        cells = nxt
    if len(cells) > count:
        keep = sorted(rng.sample(range(len(cells)), count))
        cells = [cells[t] for t in keep]
    squares = []
    for c in cells:
        if rng.random() < refine_prob:
            squares.append(DyadicSquare(c.k + 1, 2 * c.i + rng.randint(0, 1), 2 * c.j + rng.randint(0, 1)))
        else:
            squares.append(c)
    fam = SquareFamily.build(squares, d, packing_target)
    verdict = check_disjointness(squares)
    if not verdict.ok or fam.c_pack > packing_target:
        raise RuntimeError("cascade construction produced an inadmissible family")
    return fam


def generate_family(
    seed: int,
    count: int,
    d: float,
    packing_target: float,
    k_range: tuple[int, int] = (2, 6),
    box: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0),
    max_attempts: int | None = None,
) -> SquareFamily:
    """Rejection-sample an admissible family, deterministically from ``seed``.

    Candidates are drawn uniformly over (generation, cell-in-box); a draw is
    kept iff its 4-dilate stays disjoint from all kept dilates (exact check)
    and the packing constant after insertion stays within the target.
    """
    if not (0.0 < d < 2.0):
        raise ValueError(f"exponent d must lie in (0, 2), got {d}")
    if packing_target < 1.0:
        raise ValueError(f"packing target must be >= 1, got {packing_target}")
    if count < 1:
        raise ValueError("count must be >= 1")
    k_min, k_max = k_range
    if k_min > k_max:
        raise ValueError(f"bad generation range {k_range}")
    if max(abs(k_min), abs(k_max)) > MAX_ABS_GENERATION:
        raise ValueError(f"|generation| must be <= {MAX_ABS_GENERATION}")
    x0, y0, x1, y1 = box
    if not (x0 < x1 and y0 < y1):
        raise ValueError(f"bad bounding box {box}")
    if max_attempts is None:
        max_attempts = max(400 * count, 4000)

    rng = random.Random(seed)
    accepted: list[DyadicSquare] = []
    seen: set[DyadicSquare] = set()
    attempts = 0
    while len(accepted) < count and attempts < max_attempts:
        attempts += 1
        k = rng.randint(k_min, k_max)
        scale = 2.0 ** k
        ilo, ihi = math.ceil(x0 * scale), math.floor(x1 * scale) - 1
        jlo, jhi = math.ceil(y0 * scale), math.floor(y1 * scale) - 1
        if ilo > ihi or jlo > jhi:
            continue
        cand = DyadicSquare(k, rng.randint(ilo, ihi), rng.randint(jlo, jhi))
        if cand in seen:
            continue
        # rescale the running integer state on a finer-generation arrival
        trial = accepted + [cand]
        kmax_now = max(s.k for s in trial)
        scaled = []
        for s in trial:
            sc = 1 << (kmax_now - s.k)
            scaled.append(((2 * s.i + 1) * sc, (2 * s.j + 1) * sc, 4 * sc))
        if not _disjoint_from_accepted(scaled[-1], scaled[:-1]):
            continue
        c_pack, _ = packing_constant(trial, d)
        if c_pack > packing_target:
            continue
        accepted.append(cand)
        seen.add(cand)
    complete = len(accepted) == count
    if not accepted:
        raise ValueError("generator accepted no squares within the attempt budget")
    return SquareFamily.build(accepted, d, packing_target, complete=complete)
