"""Collocation quadrature: far (native), near (adaptive), self (singular).

The far rule applies the smooth patch quadrature directly.  Near targets use
recursive 4-way subdivision of the source patch in its reference square with
the parent-vs-children acceptance test.  The self rule maps the reference
square by the affine transformation that normalizes the first fundamental
form at the target node, splits the image into four triangles sharing the
target vertex, and integrates each with an adaptive Duffy-type rule whose
radial Jacobian cancels the 1/r singularity and tames the log terms.

All rules produce entries acting on *nodal* values: basis-function integrals
are recombined through the inverse interpolation matrix.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .basis import build_basis
from .geometry import gauss_nodes_01


class PairClass(enum.Enum):
    SELF = 0
    NEAR = 1
    FAR = 2


class QuadratureFailure(RuntimeError):
    """Adaptive refinement hit the depth limit above tolerance."""


@dataclass
class QuadConfig:
    eps: float = 1e-9
    alpha: float = 2.0
    max_depth: int = 30
    near_order: int | None = None  # default q + 2
    self_order: int = 10

    def __post_init__(self):
        if self.eps <= 0 or self.alpha <= 0:
            raise ValueError("eps and alpha must be positive")
        if self.max_depth > 30:
            raise ValueError("max_depth capped at 30")


class _SourcePoints:
    """Minimal source-side view: positions plus tangential projections."""

    def __init__(self, pos, normal):
        self.pos = pos
        self.normal = normal
        self.proj = np.eye(3) - normal[:, :, None] * normal[:, None, :]


# ---------------------------------------------------------------------------
# Kernel adapters: callable(target_geometry, source_points) -> (nt, ns, R, C).


class SystemKernel:
    """The 4x4 second-kind kernel K_T including regularization terms."""

    rows = 4
    cols = 4

    def __init__(self, area, lam=0.0, mu_momentum_factor=-0.5):
        self.area = area
        self.lam = lam
        self.mu_momentum_factor = mu_momentum_factor

    def __call__(self, target, source):
        return kernels.eval_KT_batch(
            target, source, self.area, self.lam, self.mu_momentum_factor
        )


class VelocityKernel:
    rows = 3
    cols = 4

    def __call__(self, target, source):
        return kernels.eval_velocity_kernel(target, source)


class PressureKernel:
    rows = 1
    cols = 4

    def __call__(self, target, source):
        return kernels.eval_pressure_kernel(target, source)


class StackedKernel:
    """Several kernels evaluated in one quadrature pass, rows concatenated.

    The adaptive rules charge per kernel call, so integrating the system,
    velocity and pressure kernels together costs barely more than the most
    expensive of the three.  All parts must share the column count.
    """

    def __init__(self, parts):
        self.parts = list(parts)
        cols = {p.cols for p in self.parts}
        if len(cols) != 1:
            raise ValueError("stacked kernels must share a column count")
        self.cols = cols.pop()
        self.rows = sum(p.rows for p in self.parts)
        self.offsets = np.concatenate(
            [[0], np.cumsum([p.rows for p in self.parts])]
        )
        # the standard system/velocity/pressure triple has a fused evaluator
        self._fused = None
        if (
            len(self.parts) == 3
            and isinstance(self.parts[0], SystemKernel)
            and isinstance(self.parts[1], VelocityKernel)
            and isinstance(self.parts[2], PressureKernel)
        ):
            self._fused = self.parts[0]

    def __call__(self, target, source):
        if self._fused is not None:
            sk = self._fused
            return kernels.eval_system_velocity_pressure(
                target, source, sk.area, sk.lam, sk.mu_momentum_factor
            )
        return np.concatenate([p(target, source) for p in self.parts], axis=2)

    def split_block(self, block):
        """Undo the row interleaving of an assembled (rows*nt, cols*M) block
        into one block per stacked part."""
        nt = block.shape[0] // self.rows
        resh = block.reshape(nt, self.rows, block.shape[1])
        return [
            resh[:, o : o + p.rows, :].reshape(nt * p.rows, -1)
            for p, o in zip(self.parts, self.offsets)
        ]


# ---------------------------------------------------------------------------
# Pair classification.


def patch_distance(surface, k, i):
    """Exact minimum node-to-node distance between two patches."""
    a = surface.geom.pos[surface.patch_slices[k]]
    b = surface.geom.pos[surface.patch_slices[i]]
    return float(np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1).min())


def classify_pairs(surface, alpha=2.0):
    """PairClass matrix over patch pairs (values of the enum)."""
    npat = len(surface.patches)
    c = surface.centroids
    d = surface.diameters
    out = np.full((npat, npat), PairClass.FAR.value, dtype=np.int8)
    np.fill_diagonal(out, PairClass.SELF.value)
    cd = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)
    mind = np.minimum(d[:, None], d[None, :])
    # lower bound on patch distance; only candidates need the exact check
    lower = cd - 0.5 * (d[:, None] + d[None, :])
    cand = (lower < alpha * mind) & ~np.eye(npat, dtype=bool)
    for k, i in zip(*np.nonzero(cand)):
        if patch_distance(surface, int(k), int(i)) < alpha * mind[k, i]:
            out[k, i] = PairClass.NEAR.value
    return out


# ---------------------------------------------------------------------------
# Far rule.


def far_block(surface, k, i, kernel):
    """Native-rule block: kernel at node pairs times source weights."""
    tgt = surface.patch_nodes(k)
    src = surface.patch_nodes(i)
    kern = kernel(tgt, _SourcePoints(src.pos, src.normal))
    w = surface.weights[surface.patch_slices[i]]
    kern = kern * w[None, :, None, None]
    M = surface.nodes_per_patch
    return np.transpose(kern, (0, 2, 1, 3)).reshape(
        kernel.rows * M, kernel.cols * M
    )


# ---------------------------------------------------------------------------
# Near rule: adaptive 4-way subdivision of the source reference square.


def _basis_values(q, u, v):
    """phi_n(u, v) for the tensor Legendre basis, (npts, q*q)."""
    Vu = np.polynomial.legendre.legvander(2.0 * u - 1.0, q - 1)
    Vv = np.polynomial.legendre.legvander(2.0 * v - 1.0, q - 1)
    return (Vu[:, :, None] * Vv[:, None, :]).reshape(len(u), q * q)


class _PatchIntegrator:
    """Adaptive integrals of kernel * basis * sqrt(det g) over one patch."""

    def __init__(self, surface, i, kernel, cfg, order):
        self.patch = surface.patches[i]
        self.q = surface.q
        self.kernel = kernel
        self.cfg = cfg
        x1, w1 = gauss_nodes_01(order)
        uu, vv = np.meshgrid(x1, x1, indexing="ij")
        self.cell_u = uu.ravel()
        self.cell_v = vv.ravel()
        self.cell_w = np.outer(w1, w1).ravel()
        self.flagged = False

    def _estimates(self, targets, cells):
        """Estimates for several cells from one batched kernel evaluation."""
        u = np.concatenate([c[0] + c[2] * self.cell_u for c in cells])
        v = np.concatenate([c[1] + c[2] * self.cell_v for c in cells])
        pos, n, sq = self.patch.sample_light(u, v)
        phi = _basis_values(self.q, u, v)
        kern = self.kernel(targets, _SourcePoints(pos, n))
        wts = np.concatenate([self.cell_w * (c[2] * c[2]) for c in cells]) * sq
        npc = len(self.cell_w)
        return [
            np.einsum(
                "tprc,p,pn->trcn",
                kern[:, s * npc : (s + 1) * npc],
                wts[s * npc : (s + 1) * npc],
                phi[s * npc : (s + 1) * npc],
            )
            for s in range(len(cells))
        ]

    def _recurse(self, targets, cell, parent, depth):
        u0, v0, h = cell
        hh = 0.5 * h
        kids = [
            (u0, v0, hh), (u0 + hh, v0, hh), (u0, v0 + hh, hh), (u0 + hh, v0 + hh, hh)
        ]
        ests = self._estimates(targets, kids)
        total = ests[0] + ests[1] + ests[2] + ests[3]
        if np.abs(parent - total).max() < self.cfg.eps:
            return total
        if depth >= self.cfg.max_depth:
            self.flagged = True
            return total
        return sum(
            self._recurse(targets, c, e, depth + 1) for c, e in zip(kids, ests)
        )

    def integrate(self, targets):
        root = (0.0, 0.0, 1.0)
        return self._recurse(targets, root, self._estimates(targets, [root])[0], 0)


def _recombine(surface, integrals, kernel):
    """Basis-integral tensor (nt, R, C, M) -> nodal block (R*nt, C*M)."""
    b = build_basis(surface.q)
    nodal = np.einsum("trcn,nm->trcm", integrals, b.Uinv)
    nt = integrals.shape[0]
    M = surface.nodes_per_patch
    return np.transpose(nodal, (0, 1, 3, 2)).reshape(kernel.rows * nt, kernel.cols * M)


def near_block(surface, k, i, cfg=None, kernel=None):
    cfg = cfg or QuadConfig()
    kernel = kernel or SystemKernel(surface.area)
    order = cfg.near_order or surface.q + 2
    integ = _PatchIntegrator(surface, i, kernel, cfg, order)
    targets = surface.patch_nodes(k)
    # Group the targets by distance octave to the source patch: the adaptive
    # acceptance below is a max over the batch, so without grouping every
    # target pays for the subdivision depth demanded by whichever node hugs
    # the shared edge.  Groups adapt independently and recombine in order.
    src_pos = surface.geom.pos[surface.patch_slices[i]]
    d = np.sqrt(
        ((targets.pos[:, None, :] - src_pos[None, :, :]) ** 2).sum(-1)
    ).min(axis=1)
    octave = np.clip(
        np.floor(np.log2(np.maximum(d, 1e-300) / surface.diameters[i])), -40, 2
    ).astype(int)
    M = surface.nodes_per_patch
    I = np.empty((M, kernel.rows, kernel.cols, M))
    for lev in np.unique(octave):
        idx = np.where(octave == lev)[0]
        I[idx] = integ.integrate(targets[idx])
    if integ.flagged:
        raise QuadratureFailure(
            f"near rule for pair ({k}, {i}) hit depth {cfg.max_depth}"
        )
    return _recombine(surface, I, kernel)


# ---------------------------------------------------------------------------
# Self rule.


class _SelfIntegrator:
    """Target-centered singular rule on one patch.

    Each target sees the patch as four triangles with a vertex at the target
    (after a metric normalization that makes distances locally Euclidean in
    parameter space).  A Duffy substitution cancels the 1/r factor; the
    remaining log singularity in the radial variable t is resolved by a
    composite Gauss rule on dyadically graded intervals toward t = 0, which
    converges geometrically and keeps every evaluation batched.  The edge
    variable m is smooth and only occasionally needs bisection, which is
    handled adaptively (parent against two children).

    The grading stays benign for floating point: cell weights shrink like
    4^-level while the roundoff of the near-diagonal kernel cancellations
    (n.r = O(r^2)) grows like 4^level, so their product stays at the 1e-16
    scale and deep levels cannot poison the total.
    """

    def __init__(self, surface, k, kernel, cfg):
        self.surface = surface
        self.k = k
        self.patch = surface.patches[k]
        self.q = surface.q
        self.kernel = kernel
        self.cfg = cfg
        pt = cfg.self_order
        pm = max(cfg.self_order, surface.q + 2)
        xt, wt = gauss_nodes_01(pt)
        xm, wm = gauss_nodes_01(pm)
        mm, tt = np.meshgrid(xm, xt, indexing="ij")
        self.cell_m = mm.ravel()
        self.cell_t = tt.ravel()
        self.cell_w = np.outer(wm, wt).ravel()
        self.flagged = False

    def _evaluate(self, target, tri, back, uv_j, jac, cells):
        """Contribution tensors for a batch of (m0, dm, t0, dt) cells."""
        p, q = tri
        m = np.concatenate([c[0] + c[1] * self.cell_m for c in cells])
        t = np.concatenate([c[2] + c[3] * self.cell_t for c in cells])
        edge = p[None, :] + m[:, None] * (q - p)[None, :]
        duv = (t[:, None] * edge) @ back.T
        u = uv_j[0] + duv[:, 0]
        v = uv_j[1] + duv[:, 1]
        pos, n, sq = self.patch.sample_light(u, v)
        phi = _basis_values(self.q, u, v)
        kern = self.kernel(target, _SourcePoints(pos, n))[0]
        base = np.concatenate([self.cell_w * (c[1] * c[3]) for c in cells])
        wts = base * t * jac * sq
        npc = len(self.cell_w)
        nc = len(cells)
        R, C = kern.shape[1:]
        kw = kern.reshape(nc, npc, R * C) * wts.reshape(nc, npc, 1)
        contrib = np.matmul(kw.transpose(0, 2, 1), phi.reshape(nc, npc, -1))
        return list(contrib.reshape(nc, R, C, -1))

    def _triangle(self, target, tri, back, uv_j, jac):
        """Accepted integral over one target-vertex triangle.

        The t-cells are fixed up front: dyadic intervals [2^-(lev+1), 2^-lev]
        for lev < K and one closing cell [0, 2^-K].  The closing cell holds
        the whole t log t error (about 2e-5 relative for a ten-point rule),
        so K is chosen to scale that below eps; pushing K further would only
        walk into the roundoff floor of the kernel cancellations.  Each round
        of the m-adaptivity is a single batched kernel call: every pending
        m-cell is evaluated alongside its two children, the children are
        kept, and cells where they disagree with the parent get split again.
        """
        eps = self.cfg.eps
        K = int(np.clip(np.ceil(np.log(8e-5 / eps) / np.log(4.0)) + 1, 4, 12))
        pending = [(0.0, 1.0, 0.5**(lev + 1), 0.5**(lev + 1), 0) for lev in range(K)]
        pending.append((0.0, 1.0, 0.0, 0.5**K, 0))
        total = 0.0
        while pending:
            cells = []
            for m0, dm, t0, dt, _ in pending:
                half = 0.5 * dm
                cells.append((m0, dm, t0, dt))
                cells.append((m0, half, t0, dt))
                cells.append((m0 + half, half, t0, dt))
            ests = self._evaluate(target, tri, back, uv_j, jac, cells)
            nxt = []
            for idx, (m0, dm, t0, dt, depth) in enumerate(pending):
                parent = ests[3 * idx]
                kids = ests[3 * idx + 1] + ests[3 * idx + 2]
                err = np.abs(parent - kids).max()
                if err < eps or np.abs(kids).max() < eps:
                    total = total + kids
                elif depth >= self.cfg.max_depth:
                    self.flagged = True
                    total = total + kids
                else:
                    half = 0.5 * dm
                    nxt.append((m0, half, t0, dt, depth + 1))
                    nxt.append((m0 + half, half, t0, dt, depth + 1))
            pending = nxt
        return total

    def integrate_target(self, j_local):
        """Integrals (R, C, M) for one local target node of the patch."""
        sl = self.surface.patch_slices[self.k]
        target = self.surface.geom[sl][j_local : j_local + 1]
        uv_j = self.surface.nodes_uv[j_local]
        g = self.surface.geom[sl.start + j_local]
        E = g.ru @ g.ru
        F = g.ru @ g.rv
        G = g.rv @ g.rv
        L = np.linalg.cholesky(np.array([[E, F], [F, G]]))
        A = L.T  # ds ~ |A d(uv)| near the target
        back = np.linalg.inv(A)
        corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        mapped = (corners - uv_j) @ A.T
        out = 0.0
        for s in range(4):
            p, q = mapped[s], mapped[(s + 1) % 4]
            jac = abs(p[0] * q[1] - p[1] * q[0]) * abs(np.linalg.det(back))
            out = out + self._triangle(target, (p, q), back, uv_j, jac)
        return out


def self_block(surface, k, cfg=None, kernel=None):
    cfg = cfg or QuadConfig()
    kernel = kernel or SystemKernel(surface.area)
    integ = _SelfIntegrator(surface, k, kernel, cfg)
    M = surface.nodes_per_patch
    I = np.stack([integ.integrate_target(j) for j in range(M)])
    if integ.flagged:
        raise QuadratureFailure(f"self rule for patch {k} hit depth {cfg.max_depth}")
    return _recombine(surface, I, kernel)


# ---------------------------------------------------------------------------
# Assembly.


def assemble_kernel_matrix(surface, kernel, cfg=None, pair_classes=None):
    """Dense quadrature discretization of one kernel over all patch pairs."""
    cfg = cfg or QuadConfig()
    if pair_classes is None:
        pair_classes = classify_pairs(surface, cfg.alpha)
    npat = len(surface.patches)
    M = surface.nodes_per_patch
    N = surface.n_nodes
    A = np.empty((kernel.rows * N, kernel.cols * N))
    for k in range(npat):
        rows = slice(kernel.rows * M * k, kernel.rows * M * (k + 1))
        for i in range(npat):
            cols = slice(kernel.cols * M * i, kernel.cols * M * (i + 1))
            pc = pair_classes[k, i]
            if pc == PairClass.FAR.value:
                A[rows, cols] = far_block(surface, k, i, kernel)
            elif pc == PairClass.NEAR.value:
                A[rows, cols] = near_block(surface, k, i, cfg, kernel)
            else:
                A[rows, cols] = self_block(surface, k, cfg, kernel)
    return A


def assemble_system(surface, cfg=None, lam=0.0, mu_momentum_factor=-0.5):
    """The collocation matrix A = I + [K_T] of the second-kind system.

    Unknown ordering is node-major with four components per node (the three
    sigma components first, then mu).
    """
    kernel = SystemKernel(surface.area, lam, mu_momentum_factor)
    A = assemble_kernel_matrix(surface, kernel, cfg)
    A[np.diag_indices_from(A)] += 1.0
    return A
