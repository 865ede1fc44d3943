"""Direct solver: patch tree, block skeletonization, serialization."""

import numpy as np
import pytest
import scipy.linalg

from surfstokes import geometry, quadrature, solver


@pytest.fixture(scope="module")
def setup():
    s = geometry.build_surface("sphere", q=4, refine=2)
    cfg = quadrature.QuadConfig(eps=1e-6)
    oracle = solver._EntryOracle(s, cfg, lam=1.0)
    nodes = np.arange(s.n_nodes)
    A = oracle.block(nodes, nodes, identity=True)
    rng = np.random.default_rng(17)
    b = rng.normal(size=4 * s.n_nodes)
    x_dense = scipy.linalg.solve(A, b)
    return s, cfg, oracle, A, b, x_dense


def _scfg(**kw):
    c = solver.SolverConfig(lam=1.0, **kw)
    c.proxy.eps_id = 1e-8
    c.proxy.R = 20.0
    return c


def test_tree_leaf_sizes():
    s = geometry.build_surface("sphere", q=4, refine=2)
    M = s.nodes_per_patch
    _, leaves = solver.build_tree(s, 64)
    counts = [len(l.patches) * M for l in leaves]
    assert sum(counts) == s.n_nodes
    assert all(32 <= c <= 64 for c in counts)
    # every patch appears exactly once
    allp = sorted(p for l in leaves for p in l.patches)
    assert allp == list(range(len(s.patches)))


def test_multilevel_matches_dense(setup):
    s, cfg, oracle, A, b, x_dense = setup
    fac = solver.build_factorization(s, cfg, _scfg(leaf_size=64, dense_fallback=400), oracle)
    assert len(fac.levels) >= 2
    x = fac.solve(b)
    scale = np.abs(x_dense).max()
    assert np.abs(x - x_dense).max() / scale < 100 * 1e-8


def test_reconstruction_residual(setup):
    s, cfg, oracle, A, b, x_dense = setup
    fac = solver.build_factorization(s, cfg, _scfg(leaf_size=64, dense_fallback=400), oracle)
    x = fac.solve(b)
    assert np.abs(A @ x - b).max() <= 100 * 1e-8 * np.abs(b).max()


def test_one_level_agrees_with_recursive(setup):
    s, cfg, oracle, A, b, x_dense = setup
    f1 = solver.build_factorization(s, cfg, _scfg(leaf_size=64, dense_fallback=400, one_level=True), oracle)
    fr = solver.build_factorization(s, cfg, _scfg(leaf_size=64, dense_fallback=400), oracle)
    assert len(f1.levels) == 1
    x1, xr = f1.solve(b), fr.solve(b)
    assert np.abs(x1 - xr).max() <= 10 * 1e-8 * np.abs(x1).max()


def test_dense_fallback_path(setup):
    s, cfg, oracle, A, b, x_dense = setup
    fac = solver.build_factorization(s, cfg, _scfg(dense_fallback=10**6), oracle)
    assert len(fac.levels) == 0
    x = fac.solve(b)
    assert np.abs(x - x_dense).max() < 1e-10 * np.abs(x_dense).max()


def test_zero_rhs_gives_zero(setup):
    s, cfg, oracle, A, b, x_dense = setup
    fac = solver.build_factorization(s, cfg, _scfg(leaf_size=64, dense_fallback=400), oracle)
    x = fac.solve(np.zeros(4 * s.n_nodes))
    assert np.abs(x).max() == 0.0


def test_wrong_length_rhs_rejected(setup):
    s, cfg, oracle, A, b, x_dense = setup
    fac = solver.build_factorization(s, cfg, _scfg(dense_fallback=10**6), oracle)
    with pytest.raises(ValueError):
        fac.solve(np.zeros(7))


def test_factorization_reuse(setup):
    s, cfg, oracle, A, b, x_dense = setup
    fac = solver.build_factorization(s, cfg, _scfg(leaf_size=64, dense_fallback=400), oracle)
    rng = np.random.default_rng(5)
    for _ in range(3):
        rhs = rng.normal(size=4 * s.n_nodes)
        x = fac.solve(rhs)
        assert np.abs(A @ x - rhs).max() <= 100 * 1e-8 * np.abs(rhs).max()


def test_serialization_roundtrip(setup, tmp_path):
    s, cfg, oracle, A, b, x_dense = setup
    fac = solver.build_factorization(s, cfg, _scfg(leaf_size=64, dense_fallback=400), oracle)
    path = tmp_path / "fac.bin"
    fac.save(path)
    fac2 = solver.Factorization.load(path)
    assert np.array_equal(fac.solve(b), fac2.solve(b))


def test_serialization_version_check(setup, tmp_path):
    import pickle

    path = tmp_path / "bad.bin"
    with open(path, "wb") as fh:
        pickle.dump({"version": 999, "payload": None}, fh)
    with pytest.raises(solver.SolverFailure):
        solver.Factorization.load(path)


def test_project_tangential(setup):
    s, cfg, oracle, A, b, x_dense = setup
    rho, dev = solver.project_tangential(s, b)
    assert dev > 0.0  # random data is not tangential
    sig = rho.reshape(s.n_nodes, 4)[:, :3]
    assert np.abs(np.einsum("ki,ki->k", sig, s.geom.normal)).max() < 1e-13
    # scalar slot untouched
    assert np.array_equal(rho[3::4], b[3::4])
