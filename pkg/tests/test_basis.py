"""Polynomial basis, interpolation, and spectral surface operators."""

import numpy as np
import pytest

from surfstokes import basis, geometry


@pytest.fixture(scope="module")
def sphere():
    return geometry.build_surface("sphere", q=8, refine=1)


def _tensor_nodes(q):
    x1, _ = geometry.gauss_nodes_01(q)
    uu, vv = np.meshgrid(x1, x1, indexing="ij")
    return uu.ravel(), vv.ravel()


def test_du_exact_on_polynomial():
    b = basis.build_basis(4)
    u, v = _tensor_nodes(4)
    f = u**3 * v
    df = b.D_u @ f
    assert np.abs(df - 3 * u**2 * v).max() < 1e-13


def test_dv_exact_on_polynomial():
    b = basis.build_basis(5)
    u, v = _tensor_nodes(5)
    f = u * v**4 + v
    assert np.abs(b.D_v @ f - (4 * u * v**3 + 1)).max() < 1e-13


def test_single_legendre_coefficient():
    b = basis.build_basis(8)
    u, v = _tensor_nodes(8)
    f = np.polynomial.legendre.legval(2 * u - 1, [0] * 7 + [1])  # P_7(2u-1)
    coef = b.Uinv @ f
    idx = 7 * 8 + 0
    mask = np.ones(64, dtype=bool)
    mask[idx] = False
    assert abs(coef[idx] - 1.0) < 1e-12
    assert np.abs(coef[mask]).max() < 1e-12


def test_condition_number():
    assert np.linalg.cond(basis.build_basis(8).U) < 1e3
    assert np.linalg.cond(basis.build_basis(16).U) < 1e4


def test_interpolate_constant_and_polynomial():
    b = basis.build_basis(6)
    u, v = _tensor_nodes(6)
    assert abs(basis.interpolate(b, np.full(36, 2.5), (0.123, 0.887)) - 2.5) < 1e-13
    f = u**2 + v
    val = basis.interpolate(b, f, (0.3, 0.7))
    assert abs(val - (0.09 + 0.7)) < 1e-13


def test_interpolate_smooth():
    b = basis.build_basis(12)
    u, v = _tensor_nodes(12)
    f = np.sin(u) * np.cos(v)
    val = basis.interpolate(b, f, (0.5, 0.5))
    assert abs(val - np.sin(0.5) * np.cos(0.5)) < 1e-10
    # vectorized path with vector-valued data
    data = np.stack([f, 2 * f], axis=1)
    vals = basis.interpolate(b, data, np.array([[0.5, 0.5], [0.25, 0.75]]))
    assert vals.shape == (2, 2)
    assert abs(vals[0, 1] - 2 * np.sin(0.5) * np.cos(0.5)) < 1e-10


def test_surface_gradient_coordinate_function():
    # f = x on the unit sphere: grad_Gamma f = P e1, with order >= q-1 decay
    errs = []
    for refine in (1, 2):
        s = geometry.build_surface("sphere", q=12, refine=refine)
        g = s.geom
        grad = basis.surface_gradient(s, g.pos[:, 0])
        errs.append(np.abs(grad - g.proj[:, :, 0]).max())
    assert errs[1] < 5e-6
    order = np.log2(errs[0] / errs[1])
    assert order > 9.0


def test_flat_patch_projected_constant():
    # constant ambient vector projected onto a flat plane has zero gradient
    import sympy as sp

    u, v = sp.symbols("uf vf", real=True)
    psi = sp.Matrix([u, v, 0])
    from surfstokes import shapes

    fam = shapes._make_family("flat-test", psi, u, v)
    surf = geometry._discretize([(fam, 0.0, 1.0, 0.0, 1.0, np.array([0.5, 0.5, -1.0]))], 6)
    w = np.array([0.3, -1.2, 0.7])
    pw = np.einsum("kij,j->ki", surf.geom.proj, w)
    gv = basis.surface_vector_gradient(surf, pw)
    assert np.abs(gv).max() < 1e-12
    assert np.abs(basis.surface_divergence(surf, pw)).max() < 1e-12


def test_divergence_self_convergence():
    # v = P (z, x, y)^T on the sphere against a refined discretization
    def divergence_at(refine, q):
        surf = geometry.build_surface("sphere", q=q, refine=refine)
        g = surf.geom
        w = g.pos[:, [2, 0, 1]]
        v = np.einsum("kij,kj->ki", g.proj, w)
        return surf, basis.surface_divergence(surf, v)

    coarse_surf, div_c = divergence_at(2, 12)
    fine_surf, div_f = divergence_at(4, 12)
    from surfstokes.basis import build_basis, interpolate

    b = build_basis(12)
    # compare at a few coarse nodes by interpolating the fine solution
    # the first fine patch covers [0, .5]^2 of coarse patch 0
    vals_fine = div_f[fine_surf.patch_slices[0]]
    uv_c = coarse_surf.nodes_uv
    inside = (uv_c[:, 0] < 0.5) & (uv_c[:, 1] < 0.5)
    uv_scaled = uv_c[inside] * 2.0
    interp = interpolate(b, vals_fine, uv_scaled)
    assert np.abs(interp - div_c[coarse_surf.patch_slices[0]][inside]).max() < 1e-5


def test_divergence_theorem(sphere):
    # div_Gamma of a smooth tangential field integrates to zero
    g = sphere.geom
    w = np.stack([np.sin(g.pos[:, 1]), g.pos[:, 2] ** 2, np.cos(g.pos[:, 0])], axis=1)
    v = np.einsum("kij,kj->ki", g.proj, w)
    div = basis.surface_divergence(sphere, v)
    assert abs(geometry.surface_integral(sphere, div)) < 1e-7


def test_momentum_operator_killing_field():
    # rotation field v = e3 x r is a surface isometry of the sphere: E[v] = 0
    s = geometry.build_surface("sphere", q=12, refine=2)
    g = s.geom
    v = np.cross(np.array([0.0, 0.0, 1.0])[None, :], g.pos)
    E = basis.deformation(s, v)
    assert np.abs(E).max() < 5e-6
    mom = basis.stokes_momentum(s, v)
    assert np.abs(mom).max() < 1e-3


def test_vector_gradient_trace_matches_divergence(sphere):
    g = sphere.geom
    v = np.einsum("kij,kj->ki", g.proj, np.sin(g.pos))
    gv = basis.surface_vector_gradient(sphere, v)
    assert np.abs(np.einsum("kii->k", gv) - basis.surface_divergence(sphere, v)).max() < 1e-12
