"""Proxy-shell skeletonization: rules, IDs, and block reproduction."""

import numpy as np
import pytest

from surfstokes import compression, geometry, harmonics, kernels, quadrature


def test_sphere_rule_integrates_harmonics():
    pts, w = compression.sphere_rule(12)
    theta = np.arccos(np.clip(pts[:, 2], -1, 1))
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    Y = harmonics.eval_ylm(12, theta, phi)
    for l in range(13):
        for m in range(-l, l + 1):
            got = np.sum(w * Y[l, m])
            want = np.sqrt(4.0 * np.pi) if l == 0 else 0.0
            assert abs(got - want) < 1e-12


def test_shell_radii_layout():
    cfg = compression.ProxyConfig(c=1.0, shells=8, R=50.0)
    r = compression.shell_radii(1.0, cfg)
    assert len(r) == 8
    assert np.all(np.diff(r) >= 0)
    assert r[0] >= 2.0 - 1e-12
    assert r[0] < 2.2  # innermost shell hugs the separation sphere
    assert r[-1] == 50.0  # outermost clamps to R


def test_interp_id_recovers_exact_rank():
    rng = np.random.default_rng(21)
    M = rng.normal(size=(60, 5)) @ rng.normal(size=(5, 40))
    skel, X, resid = compression.interp_id(M, 1e-12)
    assert len(skel) == 5
    assert np.array_equal(X[:, skel], np.eye(5))
    assert np.abs(M - M[:, skel] @ X).max() < 1e-10 * np.abs(M).max()


def test_interp_id_tolerance_contract():
    rng = np.random.default_rng(22)
    # geometrically decaying spectrum
    U, _ = np.linalg.qr(rng.normal(size=(80, 80)))
    V, _ = np.linalg.qr(rng.normal(size=(60, 60)))
    s = 2.0 ** -np.arange(60.0)
    M = U[:, :60] @ (s[:, None] * V.T)
    for eps in (1e-4, 1e-8):
        skel, X, resid = compression.interp_id(M, eps)
        err = np.abs(M - M[:, skel] @ X).max()
        assert err < 100 * eps * np.abs(M).max()
        assert len(skel) < 60


@pytest.fixture(scope="module")
def clouds():
    rng = np.random.default_rng(31)
    src = rng.normal(size=(300, 3))
    src /= np.linalg.norm(src, axis=1)[:, None]
    src *= rng.uniform(0.1, 1.0, 300)[:, None] ** (1 / 3)
    tgt = rng.normal(size=(200, 3))
    tgt /= np.linalg.norm(tgt, axis=1)[:, None]
    tgt *= np.exp(rng.uniform(np.log(2.0), np.log(100.0), 200))[:, None]
    return src, tgt


def test_log_kernel_proxy_sweep(clouds):
    """Skeleton built from shell data reproduces log interactions with
    every admissible target, over the whole far range at once."""
    src, tgt = clouds
    cfg = compression.ProxyConfig(c=1.0, shells=8, order=12, R=1000.0, eps_id=1e-10)
    center = np.zeros(3)
    proxies = compression.proxy_points(center, 1.0, cfg)
    D = np.vstack([
        compression.log_proxy_rows(proxies, src, center),
        np.ones((1, len(src))),
    ])
    skel, X, _ = compression.interp_id(D, cfg.eps_id)
    A = compression.log_proxy_rows(tgt, src, center)
    err = np.abs(A - A[:, skel] @ X).max()
    assert err < 1e-6


def test_skeleton_size_saturates():
    # below ~1000 points the skeleton is still data-limited; compare two
    # sizes past the shoulder where the proxy row space is the binding cap
    rng = np.random.default_rng(32)
    cfg = compression.ProxyConfig(c=1.0, shells=8, order=12, R=1000.0, eps_id=1e-8)
    sizes = []
    for n in (1000, 2000):
        pts = rng.normal(size=(n, 3))
        pts /= np.linalg.norm(pts, axis=1)[:, None]
        pts *= rng.uniform(0.1, 1.0, n)[:, None] ** (1 / 3)
        proxies = compression.proxy_points(np.zeros(3), 1.0, cfg)
        D = np.vstack([
            compression.log_proxy_rows(proxies, pts, np.zeros(3)),
            np.ones((1, len(pts))),
        ])
        skel, _, _ = compression.interp_id(D, cfg.eps_id)
        sizes.append(len(skel))
    assert sizes[1] <= 1.10 * sizes[0]


def test_full_kernel_pointcloud_sweep(clouds):
    """The same scalar skeleton, tensored with the identity, compresses
    the full 4x4 system kernel between pseudo-spherical point clouds."""
    src, tgt = clouds
    center = np.zeros(3)
    cfg = compression.ProxyConfig(c=1.0, shells=8, order=12, R=1000.0, eps_id=1e-10)
    rng = np.random.default_rng(33)
    nsrc = rng.normal(size=(len(src), 3))
    nsrc /= np.linalg.norm(nsrc, axis=1)[:, None]
    sources = compression._ProxyPoints(src, nsrc)
    targets = compression.sphere_geometry(tgt, center)

    proxies = compression.proxy_points(center, 1.0, cfg)
    ptgt = compression.sphere_geometry(proxies, center)
    rows = [
        compression.log_proxy_rows(proxies, src, center),
        np.ones((1, len(src))),
        kernels.eval_KT_batch(ptgt, sources, 4 * np.pi)
        .transpose(0, 2, 3, 1).reshape(-1, len(src)),
    ]
    skel, X, _ = compression.interp_id(np.vstack(rows), cfg.eps_id)

    A = kernels.eval_KT_batch(targets, sources, 4 * np.pi)
    A = A.transpose(0, 2, 1, 3).reshape(4 * len(tgt), 4 * len(src))
    X4 = compression.expand4(X)
    skel4 = (4 * skel[:, None] + np.arange(4)[None]).ravel()
    err = np.abs(A - A[:, skel4] @ X4).max()
    assert err < 1e-6 * np.abs(A).max()


@pytest.fixture(scope="module")
def sphere2():
    return geometry.build_surface("sphere", q=4, refine=2)


def _box_setup(surface):
    cls = quadrature.classify_pairs(surface)
    far = np.argwhere(cls == quadrature.PairClass.FAR.value)
    k = far[0][0]
    # the far patch with the largest gap from patch k
    cands = [i for (a, i) in far if a == k]
    i = max(cands, key=lambda i: quadrature.patch_distance(surface, k, i))
    M = surface.nodes_per_patch
    box = np.arange(k * M, (k + 1) * M)
    neigh = np.concatenate([
        np.arange(j * M, (j + 1) * M)
        for j in range(len(surface.patches))
        if j != k and cls[k, j] != quadrature.PairClass.FAR.value
    ])
    farn = np.arange(i * M, (i + 1) * M)
    pos = surface.geom.pos[box]
    center = pos.mean(axis=0)
    rho = np.linalg.norm(pos - center, axis=1).max()
    return box, neigh, farn, center, rho


def test_column_skeleton_reproduces_far_block(sphere2):
    s = sphere2
    box, neigh, farn, center, rho = _box_setup(s)
    cfg = compression.ProxyConfig(eps_id=1e-8, R=10.0 * 2.0)
    fac = compression.build_Xj(s, box, neigh, center, rho, cfg)
    assert fac.residual < 100 * cfg.eps_id or fac.residual == 0.0

    tg = s.geom[farn]
    src = compression._ProxyPoints(s.geom.pos[box], s.geom.normal[box])
    A = kernels.eval_KT_batch(tg, src, s.area)
    A = A.transpose(0, 2, 1, 3).reshape(4 * len(farn), 4 * len(box))
    X4 = compression.expand4(fac.interp)
    skel4 = (4 * fac.skeleton[:, None] + np.arange(4)[None]).ravel()
    err = np.abs(A - A[:, skel4] @ X4).max()
    assert err < 50 * cfg.eps_id * np.abs(A).max()


def test_row_skeleton_reproduces_far_block(sphere2):
    s = sphere2
    box, neigh, farn, center, rho = _box_setup(s)
    cfg = compression.ProxyConfig(eps_id=1e-8, R=10.0 * 2.0)
    fac = compression.build_Ei(s, box, neigh, center, rho, cfg)

    tg = s.geom[box]
    src = compression._ProxyPoints(s.geom.pos[farn], s.geom.normal[farn])
    A = kernels.eval_KT_batch(tg, src, s.area)
    A = A.transpose(0, 2, 1, 3).reshape(4 * len(box), 4 * len(farn))
    E4 = compression.expand4(fac.interp)
    skel4 = (4 * fac.skeleton[:, None] + np.arange(4)[None]).ravel()
    err = np.abs(A - E4 @ A[skel4, :]).max()
    assert err < 50 * cfg.eps_id * np.abs(A).max()


def test_weak_mode_log_only(sphere2):
    s = sphere2
    box, neigh, farn, center, rho = _box_setup(s)
    cfg = compression.ProxyConfig(eps_id=1e-8, R=10.0 * 2.0, strong=False)
    fac = compression.build_Xj(s, box, neigh, center, rho, cfg)
    # log-only skeleton is never larger than the strong one... it sees
    # less data, so just check the ID contract on its own matrix held
    assert fac.residual < 100 * cfg.eps_id or fac.residual == 0.0
    assert len(fac.skeleton) <= len(box)
