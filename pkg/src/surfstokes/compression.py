"""Proxy-shell interpolative compression of well-separated interactions.

A box of sources is replaced by a skeleton subset whose columns reproduce,
to a requested tolerance, the box's influence on everything outside an
enclosing sphere.  The row space of that influence is captured cheaply by
log-kernel evaluations on a family of proxy shells (radii at reciprocal
Chebyshev nodes, so the shells accumulate toward the separation sphere),
optionally augmented with exact near-field kernel rows.
"""

import numpy as np
import scipy.linalg
from dataclasses import dataclass

from . import kernels


@dataclass
class ProxyConfig:
    """Shell layout and ID tolerance for the proxy compression."""

    c: float = 1.0          # separation parameter
    shells: int = 8         # number of proxy spheres
    order: int = 12         # spherical-rule order per shell
    R: float = 100.0        # outer proxy radius
    eps_id: float = 1e-8
    strong: bool = True     # append exact near-field rows/columns


@dataclass
class InterpFactor:
    """One-sided interpolative factor for a box of nodes."""

    skeleton: np.ndarray    # local indices into the box's node list
    interp: np.ndarray      # X-tilde (Ns, n) for columns, E-tilde (n, Ns) for rows
    residual: float         # achieved max-norm residual on the proxy matrix


def sphere_rule(order):
    """Product rule on the unit sphere, exact for harmonics through the
    requested order: Gauss-Legendre in cos(theta), trapezoid in phi."""
    xg, wg = np.polynomial.legendre.leggauss(order + 1)
    nphi = 2 * order + 2
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    theta = np.arccos(xg)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    st = np.sin(tt)
    pts = np.stack(
        [st * np.cos(pp), st * np.sin(pp), np.cos(tt) * np.ones_like(pp)], axis=-1
    ).reshape(-1, 3)
    w = np.broadcast_to(wg[:, None], tt.shape) * (2.0 * np.pi / nphi)
    return pts, w.ravel()


def shell_radii(rho, config):
    """Proxy sphere radii: reciprocals of first-kind Chebyshev nodes on
    [0, 1/((1+c) rho)], clamped to [(1+c) rho, R]."""
    b = 1.0 / ((1.0 + config.c) * rho)
    p = np.arange(1, config.shells + 1)
    nodes = 0.5 * b * (1.0 + np.cos((2.0 * p - 1.0) * np.pi / (2.0 * config.shells)))
    with np.errstate(divide="ignore"):
        radii = 1.0 / nodes
    return np.clip(radii, (1.0 + config.c) * rho, config.R)


def proxy_points(center, rho, config):
    """All proxy points around one box, (shells * rule size, 3)."""
    center = np.asarray(center, dtype=float)
    dirs, _ = sphere_rule(config.order)
    radii = shell_radii(rho, config)
    pts = center[None, None, :] + radii[:, None, None] * dirs[None, :, :]
    return pts.reshape(-1, 3)


def interp_id(M, eps):
    """Column interpolative decomposition M ~= M[:, skel] @ X.

    Column-pivoted QR; the rank is the number of diagonal entries of R
    above eps relative to the largest, and X carries an exact identity
    block on the skeleton columns.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[1]
    if n == 0:
        return np.zeros(0, dtype=int), np.zeros((0, 0)), 0.0
    Q, R, perm = scipy.linalg.qr(M, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        k = 1
    else:
        k = int(np.sum(diag > eps * diag[0]))
        k = max(k, 1)
    k = min(k, n)
    skel = np.sort(perm[:k])
    # re-run the triangular structure in sorted skeleton order for a
    # deterministic identity block
    T = scipy.linalg.solve_triangular(R[:k, :k], R[:k, k:], lower=False)
    X = np.zeros((k, n))
    X[:, perm[:k]] = np.eye(k)
    X[:, perm[k:]] = T
    # rows of X are ordered by perm; reorder to sorted skeleton indices
    order = np.argsort(perm[:k])
    X = X[order]
    resid = 0.0
    if k < n:
        resid = float(np.abs(M - M[:, skel] @ X).max())
    return skel, X, resid


def sphere_geometry(points, center):
    """Full target-side geometry for points treated as living on spheres
    about the center: radial normal, S = P/r, H = 1/r, and the sphere
    closed forms for the higher fields (the surface Laplacian of the
    normal is purely radial, -2 n / r^2, and div of the normal field is
    constant on each sphere so its tangential gradient vanishes)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    center = np.asarray(center, dtype=float)
    rad = points - center[None, :]
    r = np.linalg.norm(rad, axis=1)
    n = rad / r[:, None]
    proj = np.eye(3)[None] - n[:, :, None] * n[:, None, :]
    lapn = -2.0 * n / (r * r)[:, None]
    # arbitrary orthonormal tangent frame; the kernels never look at it
    seed = np.eye(3)[np.argmin(np.abs(n), axis=1)]
    t1 = np.cross(n, seed)
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    from .geometry import GeometryBatch

    return GeometryBatch(
        pos=points,
        ru=t1,
        rv=np.cross(n, t1),
        normal=n,
        proj=proj,
        detg=np.ones_like(r),
        shape_op=proj / r[:, None, None],
        mean_curv=1.0 / r,
        lap_normal=lapn,
        lap_minus_nn=lapn,
        pgrad_div_pfn=np.zeros_like(points),
    )


def log_proxy_rows(proxies, box_pos, center):
    d = proxies[:, None, :] - box_pos[None, :, :]
    r = np.linalg.norm(d, axis=2)
    rc = np.linalg.norm(proxies - center[None, :], axis=1)
    return np.log(r) - np.log(rc)[:, None]


def _proxy_sources(proxies, center):
    rad = proxies - center[None, :]
    n = rad / np.linalg.norm(rad, axis=1)[:, None]
    return _ProxyPoints(proxies, n)


class _ProxyPoints:
    """Source-side view of proxy points: position and projector only."""

    def __init__(self, pos, normal):
        self.pos = pos
        self.normal = normal
        self.proj = np.eye(3)[None] - normal[:, :, None] * normal[:, None, :]


def build_Xj(surface, box_nodes, neighbor_nodes, center, rho, config, lam=0.0,
             near_mat=None):
    """Column skeleton of a box: which sources represent the whole box.

    The proxy matrix stacks log-kernel differences on the shells, a row of
    ones (the monopole), and, in strong mode, system-kernel rows at the
    neighbor nodes (pointwise, or quadrature-corrected rows passed in as
    near_mat, already collapsed to scalar source columns).  The exported
    operator on densities is the returned factor tensored with a 4x4
    identity.
    """
    box_nodes = np.asarray(box_nodes, dtype=int)
    if box_nodes.size == 0:
        raise ValueError("empty box")
    center = np.asarray(center, dtype=float)
    pos = surface.geom.pos[box_nodes]
    proxies = proxy_points(center, rho, config)
    D = log_proxy_rows(proxies, pos, center)
    rows = [D, np.ones((1, len(box_nodes)))]
    if config.strong and near_mat is not None:
        rows.append(near_mat)
    elif config.strong and len(neighbor_nodes):
        tg = surface.geom[np.asarray(neighbor_nodes, dtype=int)]
        src = _ProxyPoints(pos, surface.geom.normal[box_nodes])
        KT = kernels.eval_KT_batch(tg, src, surface.area, lam=lam)
        rows.append(KT.transpose(0, 2, 3, 1).reshape(-1, len(box_nodes)))
    skel, X, resid = interp_id(np.vstack(rows), config.eps_id)
    return InterpFactor(skeleton=skel, interp=X, residual=resid)


def build_Ei(surface, box_nodes, neighbor_nodes, center, rho, config, lam=0.0,
             near_mat=None):
    """Row skeleton of a box: which targets see everything outside.

    Columns of the proxy matrix are system-kernel evaluations from proxy
    pseudo-sources (radial normals, so the source projector is that of the
    enclosing sphere) to the box nodes, plus near-field columns in strong
    mode (pointwise, or quadrature-corrected columns via near_mat with one
    scalar row per box node).
    """
    box_nodes = np.asarray(box_nodes, dtype=int)
    if box_nodes.size == 0:
        raise ValueError("empty box")
    center = np.asarray(center, dtype=float)
    proxies = proxy_points(center, rho, config)
    tg = surface.geom[box_nodes]
    KT = kernels.eval_KT_batch(tg, _proxy_sources(proxies, center), surface.area, lam=lam)
    cols = [KT.reshape(len(box_nodes), -1)]
    if config.strong and near_mat is not None:
        cols.append(near_mat)
    elif config.strong and len(neighbor_nodes):
        nb = np.asarray(neighbor_nodes, dtype=int)
        src = _ProxyPoints(surface.geom.pos[nb], surface.geom.normal[nb])
        KN = kernels.eval_KT_batch(tg, src, surface.area, lam=lam)
        cols.append(KN.reshape(len(box_nodes), -1))
    M = np.hstack(cols)
    skel, Xt, resid = interp_id(M.T, config.eps_id)
    return InterpFactor(skeleton=skel, interp=Xt.T, residual=resid)


def expand4(mat):
    """Tensor a scalar interpolation matrix with the 4x4 identity."""
    return np.kron(mat, np.eye(4))
