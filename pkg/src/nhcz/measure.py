"""The non-doubling measure, its quadrature clouds, and measure-level checks.

Each family square carries the density ``side^-d`` against planar area, so
its total mass is ``side^(2-d)``.  Clouds discretize both the area measure
and the weighted measure with composite midpoint nodes; discrete balls are
node-inclusion balls, and their accuracy contract is refinement convergence
rather than exact disc geometry.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from nhcz.geometry import SquareFamily


@dataclass(frozen=True)
class NonHomogeneousMeasure:
    """Family measure: density side^-d on each member square."""

    family: SquareFamily
    densities: np.ndarray  # per-square density against area
    masses: np.ndarray  # per-square total mass side^(2-d)

    @property
    def d(self) -> float:
        return self.family.d

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())


def build_measure(family: SquareFamily) -> NonHomogeneousMeasure:
    sides = family.sides()
    d = family.d
    return NonHomogeneousMeasure(family, sides ** (-d), sides ** (2.0 - d))


@dataclass
class QuadratureCloud:
    """Midpoint nodes of a uniform n x n subgrid of every family square.

    Node order is family order, row-major within each square, so nodes of
    square m occupy the contiguous slice [m*n^2, (m+1)*n^2).
    """

    measure: NonHomogeneousMeasure
    n_per_side: int
    xy: np.ndarray  # (N, 2)
    z: np.ndarray  # (N,) complex view of the positions
    square_index: np.ndarray  # (N,) int
    area_weight: np.ndarray  # (N,)
    mu_weight: np.ndarray  # (N,)

    @property
    def family(self) -> SquareFamily:
        return self.measure.family

    @property
    def d(self) -> float:
        return self.measure.d

    def __len__(self) -> int:
        return self.xy.shape[0]

    @property
    def square_sides(self) -> np.ndarray:
        return self.family.sides()

    @property
    def node_side(self) -> np.ndarray:
        """Side of the square owning each node."""
        return self.square_sides[self.square_index]

    @property
    def finest_spacing(self) -> float:
        return float(self.square_sides.min()) / self.n_per_side

    @property
    def finest_side(self) -> float:
        return float(self.square_sides.min())

    @property
    def diameter(self) -> float:
        lo = self.xy.min(axis=0)
        hi = self.xy.max(axis=0)
        return float(np.hypot(*(hi - lo)))


def build_quadrature(measure: NonHomogeneousMeasure, n_per_side: int) -> QuadratureCloud:
    """Composite midpoint discretization with per-square mass kept exact."""
    if n_per_side < 1:
        raise ValueError(f"n_per_side must be >= 1, got {n_per_side}")
    n = n_per_side
    fam = measure.family
    m_count = len(fam)
    nodes = np.empty((m_count * n * n, 2))
    sq_idx = np.repeat(np.arange(m_count, dtype=np.int64), n * n)
    offs = (np.arange(n) + 0.5) / n
    ux, uy = np.meshgrid(offs, offs)  # row-major: y varies along axis 0
    unit = np.column_stack([ux.ravel(), uy.ravel()])
    for m, sq in enumerate(fam.squares):
        side = sq.side
        origin = np.array([sq.i * side, sq.j * side])
        nodes[m * n * n : (m + 1) * n * n] = origin + unit * side
    sides = fam.sides()[sq_idx]
    area_w = (sides / n) ** 2
    mu_w = area_w * sides ** (-measure.d)
    z = nodes[:, 0] + 1j * nodes[:, 1]
    return QuadratureCloud(measure, n, nodes, z, sq_idx, area_w, mu_w)


@dataclass(frozen=True)
class BallQuery:
    cx: float
    cy: float
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")


def ball_mass(cloud: QuadratureCloud, ball: BallQuery) -> float:
    """Measure of the discrete ball: mu-weights of nodes within the radius."""
    d2 = (cloud.xy[:, 0] - ball.cx) ** 2 + (cloud.xy[:, 1] - ball.cy) ** 2
    return float(cloud.mu_weight[d2 <= ball.radius**2].sum())


def dyadic_radius_ladder(cloud: QuadratureCloud, base: float | None = None) -> np.ndarray:
    """Radii base, 2*base, ... up to (just past) the cloud diameter.

    The base defaults to the finest square side, which keeps the ladder
    stable under quadrature refinement.
    """
    if base is None:
        base = cloud.finest_side
    diam = max(cloud.diameter, base)
    steps = max(int(math.ceil(math.log2(diam / base))), 0) + 1
    return base * 2.0 ** np.arange(steps + 1)


def _ladder_ball_sums(cloud, radii, weight_list, centers=None, block=256):
    """Ball sums for every center x radius x weight vector.

    Centers default to all node positions.  Returns (n_centers, n_radii,
    n_weights); per-center distances are sorted once and shared by all radii
    and weight vectors.
    """
    pts = cloud.xy if centers is None else np.asarray(centers, dtype=float)
    r2 = np.asarray(radii, dtype=float) ** 2
    nw = len(weight_list)
    out = np.empty((pts.shape[0], r2.size, nw))
    for b0 in range(0, pts.shape[0], block):
        chunk = pts[b0 : b0 + block]
        d2 = (
            (chunk[:, 0:1] - cloud.xy[None, :, 0]) ** 2
            + (chunk[:, 1:2] - cloud.xy[None, :, 1]) ** 2
        )
        order = np.argsort(d2, axis=1, kind="stable")
        d2s = np.take_along_axis(d2, order, axis=1)
        cums = [np.cumsum(np.asarray(w)[order], axis=1) for w in weight_list]
        for r in range(chunk.shape[0]):
            idx = np.searchsorted(d2s[r], r2, side="right")
            for wi in range(nw):
                row = cums[wi][r]
                out[b0 + r, :, wi] = np.where(idx > 0, row[np.maximum(idx - 1, 0)], 0.0)
    return out


def growth_constant(
    cloud: QuadratureCloud,
    centers: np.ndarray | None = None,
    radii: np.ndarray | None = None,
) -> tuple[float, BallQuery]:
    """Largest ratio mu(B(x, r)) / r^(2-d) over the sample.

    Default sample: every node position crossed with the dyadic radius
    ladder between the finest square side and the diameter.
    """
    if radii is None:
        radii = dyadic_radius_ladder(cloud)
    radii = np.asarray(radii, dtype=float)
    masses = _ladder_ball_sums(cloud, radii, [cloud.mu_weight], centers=centers)[:, :, 0]
    ratios = masses / radii[None, :] ** (2.0 - cloud.d)
    flat = int(np.argmax(ratios))
    ci, ri = divmod(flat, radii.size)
    pts = cloud.xy if centers is None else np.asarray(centers, dtype=float)
    witness = BallQuery(float(pts[ci, 0]), float(pts[ci, 1]), float(radii[ri]))
    return float(ratios[ci, ri]), witness


def a2_ratio(cloud: QuadratureCloud, ball: BallQuery) -> float:
    """Product of the disc-normalized averages of the density and its inverse.

    Both integrals run over the ball's intersection with the family set but
    are normalized by the full disc area; an empty intersection gives 0.
    """
    d2 = (cloud.xy[:, 0] - ball.cx) ** 2 + (cloud.xy[:, 1] - ball.cy) ** 2
    inside = d2 <= ball.radius**2
    disc = math.pi * ball.radius**2
    fwd = float(cloud.mu_weight[inside].sum())  # integral of w over B cap X
    ell_d = cloud.node_side ** cloud.d
    inv = float((cloud.area_weight[inside] * ell_d[inside]).sum())  # integral of 1/w
    return (fwd / disc) * (inv / disc)


def a2_constant(
    cloud: QuadratureCloud,
    centers: np.ndarray | None = None,
    radii: np.ndarray | None = None,
) -> tuple[float, BallQuery]:
    """Largest a2 ratio over the sample (same default sample as growth)."""
    if radii is None:
        radii = dyadic_radius_ladder(cloud)
    radii = np.asarray(radii, dtype=float)
    inv_density_w = cloud.area_weight * cloud.node_side**cloud.d
    sums = _ladder_ball_sums(cloud, radii, [cloud.mu_weight, inv_density_w], centers=centers)
    disc = math.pi * radii**2
    ratios = (sums[:, :, 0] / disc[None, :]) * (sums[:, :, 1] / disc[None, :])
    flat = int(np.argmax(ratios))
    ci, ri = divmod(flat, radii.size)
    pts = cloud.xy if centers is None else np.asarray(centers, dtype=float)
    witness = BallQuery(float(pts[ci, 0]), float(pts[ci, 1]), float(radii[ri]))
    return float(ratios[ci, ri]), witness


def borderline_exponent(t: float, k_qc: float) -> float:
    """Distortion exponent t' with 1/t' - 1/2 = (1/K) (1/t - 1/2)."""
    if not (0.0 < t < 2.0):
        raise ValueError(f"t must lie in (0, 2), got {t}")
    if k_qc < 1.0:
        raise ValueError(f"distortion K must be >= 1, got {k_qc}")
    return 1.0 / (0.5 + (1.0 / t - 0.5) / k_qc)


def export_cloud_csv(cloud: QuadratureCloud, path) -> None:
    """Node table: x, y, square_index, area_weight, mu_weight."""
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "square_index", "area_weight", "mu_weight"])
            for p in range(len(cloud)):
                writer.writerow(
                    [
                        repr(float(cloud.xy[p, 0])),
                        repr(float(cloud.xy[p, 1])),
                        int(cloud.square_index[p]),
                        repr(float(cloud.area_weight[p])),
                        repr(float(cloud.mu_weight[p])),
                    ]
                )
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
