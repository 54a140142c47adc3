"""Discrete operators on quadrature clouds.

Kernel applications integrate against the weight natural to the variant:
area weights for the full/local kernels, measure weights for the modified
and adjoint kernels.  The self-node term of the singular variants is
dropped; by midpoint symmetry the omitted cell's principal value is zero.
Norm estimates run power iteration in the measure-weighted inner product,
where the adjoint of the modified-kernel operator is the adjoint-kernel
operator with conjugated values.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from nhcz.geometry import SquareFamily
from nhcz.kernels import KernelSpec
from nhcz.measure import BallQuery, QuadratureCloud, ball_mass, dyadic_radius_ladder


@dataclass
class Field:
    """Complex values on cloud nodes; ``weight`` names the natural inner product."""

    values: np.ndarray
    weight: str = "mu"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.weight not in ("mu", "m2"):
            raise ValueError(f"unknown weight tag {self.weight!r}")


def field_weights(cloud: QuadratureCloud, f: Field) -> np.ndarray:
    return cloud.mu_weight if f.weight == "mu" else cloud.area_weight


def field_norm(cloud: QuadratureCloud, f: Field) -> float:
    return math.sqrt(float(np.sum(field_weights(cloud, f) * np.abs(f.values) ** 2)))


def field_inner(cloud: QuadratureCloud, f: Field, g: Field) -> complex:
    if f.weight != g.weight:
        raise ValueError("inner product needs matching weight tags")
    return complex(np.sum(field_weights(cloud, f) * f.values * np.conj(g.values)))


def random_field(cloud: QuadratureCloud, seed: int, weight: str = "mu", nonnegative=False) -> Field:
    rng = np.random.default_rng(seed)
    if nonnegative:
        vals = rng.uniform(0.0, 1.0, size=len(cloud)).astype(np.complex128)
    else:
        vals = rng.standard_normal(len(cloud)) + 1j * rng.standard_normal(len(cloud))
    return Field(vals, weight)


_MODES = ("off_diagonal", "cross_square", "same_square")


def _cauchy_square_apply(cloud, charges, mode, block=256, threads=1, targets=None):
    """Sum of charges_q / (z_p - z_q)^2 with the mode's exclusion rule.

    ``targets`` restricts the output to the given node indices (default all).
    """
    z, sq = cloud.z, cloud.square_index
    tgt = np.arange(len(cloud), dtype=np.int64) if targets is None else np.asarray(targets)
    out = np.empty(tgt.size, dtype=np.complex128)

    def run(b0):
        b1 = min(b0 + block, tgt.size)
        rows = tgt[b0:b1]
        dz = z[rows][:, None] - z[None, :]
        if mode == "off_diagonal":
            mask = dz == 0
        else:
            mask = sq[rows][:, None] == sq[None, :]
            if mode == "same_square":
                mask = ~mask | (dz == 0)
        dzm = np.where(mask, 1.0, dz)
        vals = 1.0 / (dzm * dzm)
        vals[mask] = 0.0
        out[b0:b1] = vals @ charges

    starts = range(0, tgt.size, block)
    if threads <= 1:
        for b0 in starts:
            run(b0)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(run, starts))
    return out


def apply_direct(spec: KernelSpec, cloud: QuadratureCloud, f: Field, block=256, threads=1) -> Field:
    """Dense kernel application in fixed node order, blocked over targets."""
    if len(f.values) != len(cloud):
        raise ValueError("field length does not match the cloud")
    v = f.values
    if spec.variant == "full":
        out = _cauchy_square_apply(cloud, v * cloud.area_weight, "off_diagonal", block, threads)
    elif spec.variant == "local":
        out = _cauchy_square_apply(cloud, v * cloud.area_weight, "same_square", block, threads)
    elif spec.variant == "modified":
        # source factor side^d times the mu-weight collapses to the area weight
        out = _cauchy_square_apply(cloud, v * cloud.area_weight, "cross_square", block, threads)
    elif spec.variant == "adjoint":
        out = _cauchy_square_apply(cloud, v * cloud.mu_weight, "cross_square", block, threads)
        out *= cloud.node_side**spec.d
    else:
        raise ValueError(f"unknown variant {spec.variant!r}")
    return Field(out, "mu")


def apply_direct_targets(spec: KernelSpec, cloud: QuadratureCloud, f: Field, targets) -> np.ndarray:
    """``apply_direct`` restricted to the given target nodes (oracle helper)."""
    v = f.values
    targets = np.asarray(targets)
    if spec.variant == "full":
        return _cauchy_square_apply(cloud, v * cloud.area_weight, "off_diagonal", targets=targets)
    if spec.variant == "local":
        return _cauchy_square_apply(cloud, v * cloud.area_weight, "same_square", targets=targets)
    if spec.variant == "modified":
        return _cauchy_square_apply(cloud, v * cloud.area_weight, "cross_square", targets=targets)
    if spec.variant == "adjoint":
        out = _cauchy_square_apply(cloud, v * cloud.mu_weight, "cross_square", targets=targets)
        return out * cloud.node_side[targets] ** spec.d
    raise ValueError(f"unknown variant {spec.variant!r}")


def adjoint_apply_direct(spec: KernelSpec, cloud: QuadratureCloud, f: Field, block=256, threads=1) -> Field:
    """The measure-weighted adjoint of ``apply_direct`` for the same spec."""
    v = f.values
    if spec.variant == "modified":
        out = np.conj(apply_direct(KernelSpec("adjoint", spec.family), cloud, Field(np.conj(v), "mu"), block, threads).values)
    elif spec.variant == "adjoint":
        out = np.conj(apply_direct(KernelSpec("modified", spec.family), cloud, Field(np.conj(v), "mu"), block, threads).values)
    elif spec.variant in ("full", "local"):
        mode = "off_diagonal" if spec.variant == "full" else "same_square"
        raw = _cauchy_square_apply(cloud, np.conj(v) * cloud.mu_weight, mode, block, threads)
        out = cloud.node_side**spec.d * np.conj(raw)
    else:
        raise ValueError(f"unknown variant {spec.variant!r}")
    return Field(out, "mu")


def maximal_function(cloud: QuadratureCloud, f: Field, kappa: float = 3.0, exact_limit=4096, block=256) -> Field:
    """Dilated maximal function: best ratio of the |f|-mass of B(x, R) to the
    measure of B(x, kappa R) over a finite radius ladder.

    The ladder holds the dyadic radii between the finest node spacing and
    the diameter, plus every exact node distance when the cloud has at most
    ``exact_limit`` nodes.
    """
    if kappa < 1.0:
        raise ValueError(f"dilation must be >= 1, got {kappa}")
    return Field(_maximal_many(cloud, [f], kappa, exact_limit, block)[0], "mu")


def _maximal_many(cloud, fields, kappa, exact_limit=4096, block=256, targets=None):
    """Maximal-function values for several fields at once; distance sorting
    is shared across fields.  ``targets`` restricts the evaluation nodes."""
    n = len(cloud)
    tgt = np.arange(n, dtype=np.int64) if targets is None else np.asarray(targets)
    kappa2 = kappa * kappa
    num_w = [np.abs(f.values) * cloud.mu_weight for f in fields]
    den_w = cloud.mu_weight
    outs = [np.empty(tgt.size) for _ in fields]
    ladder = dyadic_radius_ladder(cloud, base=cloud.finest_spacing)
    ladder2 = ladder**2
    exact = n <= exact_limit
    xy = cloud.xy
    for b0 in range(0, tgt.size, block):
        rows_idx = tgt[b0 : b0 + block]
        d2 = (xy[rows_idx, 0:1] - xy[None, :, 0]) ** 2 + (xy[rows_idx, 1:2] - xy[None, :, 1]) ** 2
        order = np.argsort(d2, axis=1, kind="stable")
        d2s = np.take_along_axis(d2, order, axis=1)
        cden = np.cumsum(den_w[order], axis=1)
        cnums = [np.cumsum(w[order], axis=1) for w in num_w]
        for r in range(rows_idx.size):
            row = d2s[r]
            cand2 = np.concatenate([row, ladder2]) if exact else ladder2
            ni = np.searchsorted(row, cand2, side="right") - 1
            di = np.searchsorted(row, kappa2 * cand2, side="right") - 1
            den = cden[r][di]
            for fi in range(len(fields)):
                outs[fi][b0 + r] = float(np.max(cnums[fi][r][ni] / den))
    return outs


@dataclass
class NormEstimate:
    sigma_max: float
    iterations: int
    residual: float
    seed: int
    converged: bool
    rayleigh_history: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "sigma_max": self.sigma_max,
            "iterations": self.iterations,
            "residual": self.residual,
            "seed": self.seed,
            "converged": self.converged,
        }


def power_iteration(apply_fn, adjoint_fn, weights, n, tol=1e-6, max_iter=500, seed=0, rel_tol=0.0) -> NormEstimate:
    """Largest singular value in the weighted inner product.

    Iterates v -> T* T v with normalization; stops when successive Rayleigh
    quotients (= ||T v||_w^2 for unit v) differ by less than ``tol``, or by
    less than ``rel_tol`` relative to the current quotient when that is set.
    """
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    nv = math.sqrt(float(np.sum(weights * np.abs(v) ** 2)))
    v = v / nv
    history: list[float] = []
    rho_prev = None
    residual = math.inf
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        u = apply_fn(v)
        rho = float(np.sum(weights * np.abs(u) ** 2))
        history.append(rho)
        if rho == 0.0:
            residual = 0.0
            converged = True
            break
        if rho_prev is not None:
            residual = abs(rho - rho_prev)
            if residual < tol or (rel_tol > 0.0 and residual < rel_tol * rho):
                converged = True
                break
        rho_prev = rho
        w = adjoint_fn(u)
        nw = math.sqrt(float(np.sum(weights * np.abs(w) ** 2)))
        if nw == 0.0:
            converged = True
            residual = 0.0
            break
        v = w / nw
    sigma = math.sqrt(history[-1]) if history else 0.0
    return NormEstimate(sigma, it, residual, seed, converged, history)


def operator_norm(
    spec: KernelSpec,
    cloud: QuadratureCloud,
    tol: float = 1e-6,
    max_iter: int = 500,
    seed: int = 0,
    use_fast: bool = False,
    fast_params=None,
    block: int = 256,
    threads: int = 1,
    rel_tol: float = 0.0,
) -> NormEstimate:
    """Measure-weighted operator norm of the chosen kernel's discrete operator."""
    if use_fast and spec.variant in ("modified", "adjoint"):
        from nhcz.fastsum import ExpansionParams, apply_fast, build_tree

        params = fast_params or ExpansionParams()
        tree = build_tree(cloud, params.leaf_cap)
        partner = KernelSpec("adjoint" if spec.variant == "modified" else "modified", spec.family)

        def apply_fn(v):
            return apply_fast(spec, tree, Field(v, "mu"), params).values

        def adjoint_fn(v):
            return np.conj(apply_fast(partner, tree, Field(np.conj(v), "mu"), params).values)

    else:

        def apply_fn(v):
            return apply_direct(spec, cloud, Field(v, "mu"), block, threads).values

        def adjoint_fn(v):
            return adjoint_apply_direct(spec, cloud, Field(v, "mu"), block, threads).values

    return power_iteration(apply_fn, adjoint_fn, cloud.mu_weight, len(cloud), tol, max_iter, seed, rel_tol)


def beurling_multiplier(grid: np.ndarray) -> np.ndarray:
    """Unitary Fourier-multiplier model of the plane singular integral.

    Multiplies mode (kx, ky) ~ xi = kx + i ky by conj(xi)/xi and kills the
    zero mode; an exact isometry on zero-mean grids.
    """
    grid = np.asarray(grid, dtype=np.complex128)
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
        raise ValueError(f"need a square grid, got shape {grid.shape}")
    n = grid.shape[0]
    if n % 2 != 0:
        raise ValueError(f"grid size must be even, got {n}")
    freq = np.fft.fftfreq(n, d=1.0 / n)
    xi = freq[None, :] + 1j * freq[:, None]  # axis 0 is y
    with np.errstate(divide="ignore", invalid="ignore"):
        mult = np.conj(xi) / xi
    mult[0, 0] = 0.0
    return np.fft.ifft2(np.fft.fft2(grid) * mult)


def grid_field(cloud: QuadratureCloud, f: Field) -> np.ndarray:
    """Reshape a single-square cloud field to its (n, n) grid, rows along y."""
    if len(cloud.family) != 1:
        raise ValueError("grid view needs a single-square family")
    n = cloud.n_per_side
    return f.values.reshape(n, n)


def beurling_spectral(cloud: QuadratureCloud, f: Field) -> Field:
    """Spectral application on a one-square cloud read as a periodic torus grid."""
    out = beurling_multiplier(grid_field(cloud, f))
    return Field(out.ravel(), f.weight)


@dataclass
class T1Report:
    sup_t: float
    sup_t_adjoint: float
    witness_t: BallQuery | None
    witness_t_adjoint: BallQuery | None
    n_balls: int
    skipped: int

    def to_json_dict(self) -> dict:
        def ball(b):
            return None if b is None else {"cx": b.cx, "cy": b.cy, "radius": b.radius}

        return {
            "sup_T": self.sup_t,
            "sup_T_adjoint": self.sup_t_adjoint,
            "witness_T": ball(self.witness_t),
            "witness_T_adjoint": ball(self.witness_t_adjoint),
            "n_balls": self.n_balls,
            "skipped": self.skipped,
        }


def default_t1_balls(family: SquareFamily, seed: int = 0, max_balls: int = 32) -> list[BallQuery]:
    """Seeded (center, radius) sample built from family geometry only, so the
    same sample is reusable across quadrature refinements."""
    centers = family.centers()
    sides = family.sides()
    base = float(sides.min())
    corners = np.concatenate([centers - sides[:, None] / 2, centers + sides[:, None] / 2])
    diam = float(np.hypot(*(corners.max(axis=0) - corners.min(axis=0))))
    steps = max(int(math.ceil(math.log2(max(diam / base, 1.0)))), 0) + 2
    radii = base * 2.0 ** np.arange(steps)
    rng = np.random.default_rng(seed)
    balls = []
    for _ in range(max_balls):
        m = int(rng.integers(0, len(family)))
        r = float(radii[int(rng.integers(0, len(radii)))])
        balls.append(BallQuery(float(centers[m, 0]), float(centers[m, 1]), r))
    return balls


def t1_testing(
    spec: KernelSpec,
    cloud: QuadratureCloud,
    balls: list[BallQuery] | None = None,
    seed: int = 0,
    apply_fn=None,
    apply_adj_fn=None,
) -> T1Report:
    """Testing-condition suprema ||T chi_B||^2 / mu(B) over the ball sample,
    for the modified operator and its adjoint-kernel partner.

    Balls with zero discrete mass are skipped and counted.
    """
    if balls is None:
        balls = default_t1_balls(cloud.family, seed=seed)
    mod = KernelSpec("modified", spec.family)
    adj = KernelSpec("adjoint", spec.family)
    if apply_fn is None:
        apply_fn = lambda f: apply_direct(mod, cloud, f)
    if apply_adj_fn is None:
        apply_adj_fn = lambda f: apply_direct(adj, cloud, f)
    sup_t = sup_adj = 0.0
    wit_t = wit_adj = None
    skipped = 0
    for ball in balls:
        mass = ball_mass(cloud, ball)
        if mass == 0.0:
            skipped += 1
            continue
        d2 = (cloud.xy[:, 0] - ball.cx) ** 2 + (cloud.xy[:, 1] - ball.cy) ** 2
        chi = Field((d2 <= ball.radius**2).astype(np.complex128), "mu")
        v_t = field_norm(cloud, apply_fn(chi)) ** 2 / mass
        v_a = field_norm(cloud, apply_adj_fn(chi)) ** 2 / mass
        if v_t > sup_t:
            sup_t, wit_t = v_t, ball
        if v_a > sup_adj:
            sup_adj, wit_adj = v_a, ball
    return T1Report(sup_t, sup_adj, wit_t, wit_adj, len(balls), skipped)


def export_field_csv(f: Field, path) -> None:
    """Field table: node index, real part, imaginary part."""
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node", "re", "im"])
            for p, v in enumerate(f.values):
                writer.writerow([p, repr(float(v.real)), repr(float(v.imag))])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_field_csv(path, weight: str = "mu") -> Field:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    vals = np.array([complex(float(r[1]), float(r[2])) for r in rows[1:]])
    return Field(vals, weight)
