"""Per-patch polynomial bases and spectral surface differential operators.

Tensor Legendre polynomials on tensor Gauss-Legendre nodes give stable
interpolation on each quad patch.  The surface operators at the bottom apply
the tangential calculus (P grad f, P (grad v) P, tr, deformation) to nodal
data by per-patch spectral differentiation; they exist for manufactured
right-hand sides and diagnostics and are never used inside kernel evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import gauss_nodes_01


@dataclass
class PatchBasis:
    """Tensor Legendre basis of order q on the reference square [0, 1]^2."""

    q: int
    nodes1d: np.ndarray  # Gauss-Legendre on [0, 1]
    weights1d: np.ndarray
    U: np.ndarray  # U[i, j] = phi_j(x_i), tensor node/basis ordering
    Uinv: np.ndarray  # values at nodes -> coefficients
    D_u: np.ndarray  # nodal spectral differentiation in u
    D_v: np.ndarray

    @property
    def n_nodes(self):
        return self.q * self.q


def _vander1d(x, q):
    """Legendre P_0..P_{q-1} of 2x-1, plus derivatives; shapes (len(x), q)."""
    t = 2.0 * np.asarray(x) - 1.0
    V = np.polynomial.legendre.legvander(t, q - 1)
    dV = np.zeros_like(V)
    for j in range(1, q):
        c = np.zeros(q)
        c[j] = 1.0
        dc = np.polynomial.legendre.legder(c)
        dV[:, j] = 2.0 * np.polynomial.legendre.legval(t, dc)  # d/dx = 2 d/dt
    return V, dV


def build_basis(q: int) -> PatchBasis:
    if q < 2:
        raise ValueError("q must be at least 2")
    x1, w1 = gauss_nodes_01(q)
    V, dV = _vander1d(x1, q)
    # tensor ordering matches geometry._discretize: node (iu, iv) -> iu*q + iv,
    # basis (a, b) -> a*q + b with phi = P_a(2u-1) P_b(2v-1)
    U = np.kron(V, V)
    Uinv = np.kron(np.linalg.inv(V), np.linalg.inv(V))
    D1 = dV @ np.linalg.inv(V)  # nodal derivative matrix on [0, 1]
    eye = np.eye(q)
    D_u = np.kron(D1, eye)
    D_v = np.kron(eye, D1)
    return PatchBasis(q=q, nodes1d=x1, weights1d=w1, U=U, Uinv=Uinv, D_u=D_u, D_v=D_v)


def interpolate(basis: PatchBasis, values, uv):
    """Evaluate the interpolant of nodal values at points uv.

    values: (M,) or (M, k) nodal data; uv: (2,) or (npts, 2) in [0, 1]^2.
    """
    uv_arr = np.asarray(uv, dtype=float)
    single = uv_arr.ndim == 1
    uv_arr = np.atleast_2d(uv_arr)
    Vu, _ = _vander1d(uv_arr[:, 0], basis.q)
    Vv, _ = _vander1d(uv_arr[:, 1], basis.q)
    phi = (Vu[:, :, None] * Vv[:, None, :]).reshape(len(uv_arr), -1)
    out = phi @ (basis.Uinv @ np.asarray(values))
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Surface differential operators on a DiscretizedSurface.  Index convention
# follows the shape operator: (grad v)_{ij} = d_j v_i.


def _patch_derivatives(surface, values):
    """du-, dv-derivatives of nodal data, patchwise; values (N, ...)."""
    basis = build_basis(surface.q)
    vals = np.asarray(values, dtype=float)
    npat = len(surface.patches)
    M = surface.nodes_per_patch
    per = vals.reshape((npat, M) + vals.shape[1:])
    flat = per.reshape(npat, M, -1)
    du = np.einsum("nm,pmk->pnk", basis.D_u, flat).reshape(per.shape)
    dv = np.einsum("nm,pmk->pnk", basis.D_v, flat).reshape(per.shape)
    return du.reshape(vals.shape), dv.reshape(vals.shape)


def _contravariant_tangents(surface):
    """t^a = g^{ab} r_b at every node, shape (N, 2, 3)."""
    g = surface.geom
    E = np.einsum("ki,ki->k", g.ru, g.ru)
    F = np.einsum("ki,ki->k", g.ru, g.rv)
    G = np.einsum("ki,ki->k", g.rv, g.rv)
    det = E * G - F * F
    tu = (G[:, None] * g.ru - F[:, None] * g.rv) / det[:, None]
    tv = (E[:, None] * g.rv - F[:, None] * g.ru) / det[:, None]
    return np.stack([tu, tv], axis=1)


def surface_gradient(surface, f):
    """P grad f^e for scalar nodal data f, returned as (N, 3) tangent vectors."""
    fu, fv = _patch_derivatives(surface, f)
    t = _contravariant_tangents(surface)
    return fu[:, None] * t[:, 0] + fv[:, None] * t[:, 1]


def surface_vector_gradient(surface, v):
    """grad_Gamma v = P (grad v^e) P for nodal vector data v, (N, 3, 3)."""
    vu, vv = _patch_derivatives(surface, v)
    t = _contravariant_tangents(surface)
    grad = vu[:, :, None] * t[:, None, 0, :] + vv[:, :, None] * t[:, None, 1, :]
    return np.einsum("kij,kjl->kil", surface.geom.proj, grad)


def surface_divergence(surface, v):
    """div_Gamma v = tr(P (grad v^e) P) for nodal vector data, (N,)."""
    return np.einsum("kii->k", surface_vector_gradient(surface, v))


def deformation(surface, v):
    """E[v] = -(grad_Gamma v + grad_Gamma v^T) / 2, (N, 3, 3)."""
    gv = surface_vector_gradient(surface, v)
    return -0.5 * (gv + np.swapaxes(gv, 1, 2))


def matrix_surface_divergence(surface, M):
    """Row-wise surface divergence of a nodal matrix field, (N, 3).

    (div_Gamma M)_i = sum_j d^Gamma_j M_{ij}, with the tangential derivative
    applied through the chain rule.
    """
    Mu, Mv = _patch_derivatives(surface, M)
    t = _contravariant_tangents(surface)
    return np.einsum("kij,kj->ki", Mu, t[:, 0]) + np.einsum("kij,kj->ki", Mv, t[:, 1])


def stokes_momentum(surface, v):
    """P div_Gamma E[v]: the viscous part of the surface Stokes operator."""
    E = deformation(surface, v)
    dv = matrix_surface_divergence(surface, E)
    return np.einsum("kij,kj->ki", surface.geom.proj, dv)
