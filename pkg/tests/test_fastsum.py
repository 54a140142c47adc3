import numpy as np
import pytest

from nhcz.fastsum import (
    BENCH_HEADER,
    ExpansionParams,
    apply_fast,
    benchmark,
    build_tree,
    fit_cost_exponent,
)
from nhcz.geometry import DyadicSquare, SquareFamily, generate_family
from nhcz.kernels import KernelSpec
from nhcz.measure import build_measure, build_quadrature
from nhcz.operators import Field, apply_direct


def cloud_for(count, n, seed=0, d=1.2):
    fam = generate_family(seed=seed, count=count, d=d, packing_target=4.0, k_range=(2, 5))
    return fam, build_quadrature(build_measure(fam), n)


def test_tree_single_node_is_single_leaf():
    fam = SquareFamily.build([DyadicSquare(0, 0, 0)], 1.0, 4.0)
    cloud = build_quadrature(build_measure(fam), 1)
    tree = build_tree(cloud, leaf_cap=4)
    assert tree.n_cells == 1
    assert tree.is_leaf[0]
    assert np.array_equal(tree.perm, [0])


def test_tree_structure_audit():
    fam = SquareFamily.build([DyadicSquare(0, 0, 0)], 1.0, 4.0)
    cloud = build_quadrature(build_measure(fam), 64)  # 4096 uniform nodes
    tree = build_tree(cloud, leaf_cap=32)
    leaf_sizes = tree.end[tree.is_leaf] - tree.start[tree.is_leaf]
    assert leaf_sizes.max() <= 32
    assert leaf_sizes.sum() == len(cloud)
    assert np.array_equal(np.sort(tree.perm), np.arange(len(cloud)))
    # every node sits inside its leaf's tight radius
    for c in np.flatnonzero(tree.is_leaf)[:50]:
        ids = tree.perm[tree.start[c] : tree.end[c]]
        assert np.abs(cloud.z[ids] - tree.centers[c]).max() <= tree.radius[c] + 1e-15


def test_tree_deterministic():
    fam, cloud = cloud_for(6, 8, seed=3)
    t1 = build_tree(cloud, leaf_cap=16)
    t2 = build_tree(cloud, leaf_cap=16)
    assert np.array_equal(t1.perm, t2.perm)
    assert np.array_equal(t1.centers, t2.centers)
    assert np.array_equal(t1.start, t2.start)


def test_moments_match_direct_sums():
    fam, cloud = cloud_for(5, 6, seed=4)
    tree = build_tree(cloud, leaf_cap=8)
    rng = np.random.default_rng(0)
    charges = rng.standard_normal(len(cloud)) + 1j * rng.standard_normal(len(cloud))
    p = 7
    mom = tree.moments(charges, p)
    for cell in range(0, tree.n_cells, max(tree.n_cells // 20, 1)):
        ids = tree.perm[tree.start[cell] : tree.end[cell]]
        diffs = cloud.z[ids] - tree.centers[cell]
        for k in range(p):
            direct = np.sum(charges[ids] * diffs**k)
            assert mom[cell, k] == pytest.approx(direct, rel=1e-10, abs=1e-12)


def test_moment_zero_order_conserved_on_level_covers():
    fam, cloud = cloud_for(7, 8, seed=5)
    tree = build_tree(cloud, leaf_cap=16)
    rng = np.random.default_rng(1)
    charges = rng.standard_normal(len(cloud)) + 1j * rng.standard_normal(len(cloud))
    mom = tree.moments(charges, 4)
    total = charges.sum()
    for depth in range(int(tree.depth.max()) + 1):
        cover = [
            c
            for c in range(tree.n_cells)
            if tree.depth[c] == depth or (tree.is_leaf[c] and tree.depth[c] < depth)
        ]
        got = sum(mom[c, 0] for c in cover)
        assert got == pytest.approx(total, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("variant", ["modified", "adjoint"])
def test_apply_fast_oracle_equality_tiny_theta(variant):
    fam, cloud = cloud_for(6, 6, seed=6)
    tree = build_tree(cloud, leaf_cap=16)
    params = ExpansionParams(order=16, theta=0.1)  # theta^p < 1e-15
    rng = np.random.default_rng(2)
    f = Field(rng.standard_normal(len(cloud)) + 1j * rng.standard_normal(len(cloud)), "mu")
    spec = KernelSpec(variant, fam)
    fast = apply_fast(spec, tree, f, params).values
    direct = apply_direct(spec, cloud, f).values
    assert np.abs(fast - direct).max() <= 1e-12 * np.abs(direct).max()


def test_apply_fast_two_square_dense_cloud():
    fam = SquareFamily.build([DyadicSquare(0, 0, 0), DyadicSquare(0, 5, 3)], 1.2, 16.0)
    cloud = build_quadrature(build_measure(fam), 64)  # 2 * 64^2 nodes
    tree = build_tree(cloud, leaf_cap=32)
    rng = np.random.default_rng(3)
    f = Field(rng.standard_normal(len(cloud)) + 1j * rng.standard_normal(len(cloud)), "mu")
    spec = KernelSpec("modified", fam)
    fast = apply_fast(spec, tree, f, ExpansionParams(order=12, theta=0.5)).values
    direct = apply_direct(spec, cloud, f).values
    assert np.abs(fast - direct).max() <= 1e-6 * np.abs(direct).max()


def test_apply_fast_zero_field():
    fam, cloud = cloud_for(4, 4, seed=7)
    tree = build_tree(cloud, leaf_cap=8)
    out = apply_fast(KernelSpec("modified", fam), tree, Field(np.zeros(len(cloud)), "mu"), ExpansionParams())
    assert np.all(out.values == 0)


def test_apply_fast_error_decreases_in_order():
    fam, cloud = cloud_for(8, 8, seed=8)
    tree = build_tree(cloud, leaf_cap=16)
    rng = np.random.default_rng(4)
    f = Field(rng.standard_normal(len(cloud)) + 1j * rng.standard_normal(len(cloud)), "mu")
    spec = KernelSpec("modified", fam)
    direct = apply_direct(spec, cloud, f).values
    scale = np.abs(direct).max()
    errs = []
    for p in (4, 8, 12, 16):
        fast = apply_fast(spec, tree, f, ExpansionParams(order=p, theta=0.5)).values
        errs.append(np.abs(fast - direct).max() / scale)
    floor = 1e-14
    assert all(b <= max(a, floor) for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= 1e-8


def test_apply_fast_rejects_unsupported_variants():
    fam, cloud = cloud_for(3, 3, seed=9)
    tree = build_tree(cloud, leaf_cap=8)
    f = Field(np.ones(len(cloud)), "mu")
    for variant in ("full", "local"):
        with pytest.raises(ValueError):
            apply_fast(KernelSpec(variant, fam), tree, f, ExpansionParams())


def test_expansion_params_validation():
    with pytest.raises(ValueError):
        ExpansionParams(order=0)
    with pytest.raises(ValueError):
        ExpansionParams(theta=1.0)
    with pytest.raises(ValueError):
        ExpansionParams(leaf_cap=0)


def test_benchmark_small_ladder():
    rows = benchmark([256, 1024], seed=1, n_per_side=8)
    assert len(rows) == 2
    assert all(r.max_rel_err <= 1e-6 for r in rows)
    assert all(r.direct_exact for r in rows)
    assert rows[0].n <= rows[1].n
    assert len(rows[0].csv_row()) == len(BENCH_HEADER)


def test_fit_cost_exponent_recovers_slope():
    ns = np.array([1e3, 4e3, 1.6e4, 6.4e4])
    times = 5.0 * ns**1.3
    assert fit_cost_exponent(ns, times) == pytest.approx(1.3, abs=1e-6)
