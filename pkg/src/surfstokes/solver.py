"""Fast direct solver by recursive block skeletonization.

Patches are grouped into a bisection tree.  Each leaf box is compressed:
row and column skeletons from the proxy construction turn every
off-diagonal block into E_i A~_ij X_j, and eliminating the non-skeleton
unknowns leaves a reduced system whose off-diagonal blocks are plain
kernel entries at skeleton nodes and whose diagonal blocks are the
inverses of S_ii = X_i A_ii^{-1} E_i.  Because the reduced system has the
same shape as the original one, the process repeats on merged parent
boxes until the remainder is small enough to factor densely.
"""

import pickle
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import compression, quadrature

FORMAT_VERSION = 1


class SolverFailure(RuntimeError):
    """The direct solver could not produce a usable factorization."""


@dataclass
class SolverConfig:
    leaf_size: int = 256        # target nodes per leaf box
    dense_fallback: int = 2000  # stop compressing below this many unknowns
    one_level: bool = False
    lam: float = 0.0
    proxy: compression.ProxyConfig = field(default_factory=compression.ProxyConfig)


# ---------------------------------------------------------------------------
# Patch tree.


class TreeBox:
    """A node of the patch bisection tree."""

    def __init__(self, patches, parent=None):
        self.patches = list(patches)
        self.parent = parent
        self.children = []


def build_tree(surface, leaf_nodes):
    """Median bisection of patch centroids along the widest axis; leaves
    hold at most leaf_nodes collocation nodes (and at least half that,
    except when a single patch is bigger)."""
    M = surface.nodes_per_patch
    cent = surface.centroids

    def rec(pidx, parent):
        box = TreeBox(pidx, parent)
        if len(pidx) * M > leaf_nodes and len(pidx) > 1:
            c = cent[pidx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            order = np.argsort(c[:, axis], kind="stable")
            half = len(pidx) // 2
            pidx = np.asarray(pidx)[order]
            box.children = [rec(pidx[:half], box), rec(pidx[half:], box)]
        return box

    root = rec(np.arange(len(surface.patches)), None)
    leaves = []

    def collect(b):
        if b.children:
            for ch in b.children:
                collect(ch)
        else:
            leaves.append(b)

    collect(root)
    return root, leaves


def well_separated(ca, ra, cb, rb, c):
    return np.linalg.norm(ca - cb) > (1.0 + c) * (ra + rb)


# ---------------------------------------------------------------------------
# Quadrature-consistent matrix entries for arbitrary node subsets.


class _EntryOracle:
    """Entries of the assembled second-kind matrix at arbitrary node pairs.

    Far patch pairs are evaluated pointwise (kernel times source weight),
    near and self pairs reuse the adaptive quadrature blocks, cached so
    each patch pair is integrated once across all levels.
    """

    def __init__(self, surface, cfg, lam, stacked=False):
        self.surface = surface
        self.cfg = cfg
        self.kern = quadrature.SystemKernel(surface.area, lam)
        # stacked mode integrates the representation kernels alongside the
        # system kernel so a later potential evaluation reuses the same
        # adaptive passes
        self.stacked = (
            quadrature.StackedKernel(
                [self.kern, quadrature.VelocityKernel(), quadrature.PressureKernel()]
            )
            if stacked
            else None
        )
        self.pcls = quadrature.classify_pairs(surface, cfg.alpha)
        self.cache = {}

    def _fill_cache(self, k, i):
        kern = self.stacked or self.kern
        if k == i:
            blk = quadrature.self_block(self.surface, k, self.cfg, kern)
        else:
            blk = quadrature.near_block(self.surface, k, i, self.cfg, kern)
        if self.stacked is not None:
            self.cache[(k, i)] = self.stacked.split_block(blk)
        else:
            self.cache[(k, i)] = (blk,)

    def _quad_block(self, k, i, part=0):
        if (k, i) not in self.cache:
            self._fill_cache(k, i)
        return self.cache[(k, i)][part]

    def velocity_block(self, k, i):
        return self._quad_block(k, i, part=1)

    def pressure_block(self, k, i):
        return self._quad_block(k, i, part=2)

    def block(self, rows, cols, identity=False):
        """A[rows, cols] expanded to four components per node."""
        s = self.surface
        M = s.nodes_per_patch
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        out = np.zeros((4 * len(rows), 4 * len(cols)))
        rp = rows // M
        cp = cols // M
        for k in np.unique(rp):
            rsel = np.nonzero(rp == k)[0]
            tg = s.geom[rows[rsel]]
            rix = (4 * rsel[:, None] + np.arange(4)[None]).ravel()
            for i in np.unique(cp):
                csel = np.nonzero(cp == i)[0]
                cix = (4 * csel[:, None] + np.arange(4)[None]).ravel()
                if self.pcls[k, i] == quadrature.PairClass.FAR.value:
                    src = s.geom.pos[cols[csel]]
                    srcn = s.geom.normal[cols[csel]]
                    kern = self.kern(tg, quadrature._SourcePoints(src, srcn))
                    kern = kern * s.weights[cols[csel]][None, :, None, None]
                    sub = kern.transpose(0, 2, 1, 3).reshape(
                        4 * len(rsel), 4 * len(csel)
                    )
                else:
                    blk = self._quad_block(int(k), int(i))
                    rloc = rows[rsel] % M
                    cloc = cols[csel] % M
                    bri = (4 * rloc[:, None] + np.arange(4)[None]).ravel()
                    bci = (4 * cloc[:, None] + np.arange(4)[None]).ravel()
                    sub = blk[np.ix_(bri, bci)]
                out[np.ix_(rix, cix)] = sub
        if identity:
            shared = rows[:, None] == cols[None, :]
            for a, b in zip(*np.nonzero(shared)):
                out[4 * a : 4 * a + 4, 4 * b : 4 * b + 4] += np.eye(4)
        return out


# ---------------------------------------------------------------------------
# Factorization.


@dataclass
class _BoxFactor:
    nodes: np.ndarray        # global node indices of this box's unknowns
    lu: tuple                # LU of the diagonal block
    E4: np.ndarray
    X4: np.ndarray
    invS: np.ndarray
    skel_nodes: np.ndarray


@dataclass
class _Level:
    boxes: list
    groups: list             # groups of box indices forming the next level


class Factorization:
    """Serializable multilevel factorization of the collocation system."""

    def __init__(self, n_unknowns, levels, top_nodes, top_lu):
        self.version = FORMAT_VERSION
        self.n_unknowns = n_unknowns
        self.levels = levels
        self.top_nodes = top_nodes
        self.top_lu = top_lu

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape != (self.n_unknowns,):
            raise ValueError("right-hand side has the wrong length")
        stash = []
        if self.levels:
            # gather the global rhs into the leaf-box ordering
            vec = np.concatenate(
                [
                    b[(4 * bx.nodes[:, None] + np.arange(4)[None]).ravel()]
                    for bx in self.levels[0].boxes
                ]
            )
        else:
            vec = b
        for lev in self.levels:
            ys, gs = [], []
            off = 0
            for bx in lev.boxes:
                n = 4 * len(bx.nodes)
                bi = vec[off : off + n]
                off += n
                y = scipy.linalg.lu_solve(bx.lu, bi)
                ys.append(y)
                gs.append(bx.invS @ (bx.X4 @ y))
            stash.append((ys, gs))
            vec = np.concatenate([gs[i] for grp in lev.groups for i in grp])
        z = scipy.linalg.lu_solve(self.top_lu, vec)
        for lev, (ys, gs) in zip(reversed(self.levels), reversed(stash)):
            # z is laid out by groups of this level's skeletons
            zs = [None] * len(lev.boxes)
            off = 0
            for grp in lev.groups:
                for i in grp:
                    ns = 4 * len(lev.boxes[i].skel_nodes)
                    zs[i] = z[off : off + ns]
                    off += ns
            xs = []
            for i, bx in enumerate(lev.boxes):
                w = gs[i] - bx.invS @ zs[i]
                xs.append(ys[i] - scipy.linalg.lu_solve(bx.lu, bx.E4 @ w))
            z = np.concatenate(xs)
        if not self.levels:
            perm = self.top_nodes
        else:
            perm = np.concatenate([bx.nodes for bx in self.levels[0].boxes])
        x = np.empty_like(b)
        cix = (4 * perm[:, None] + np.arange(4)[None]).ravel()
        x[cix] = z
        return x

    def save(self, path):
        with open(path, "wb") as fh:
            pickle.dump({"version": self.version, "payload": self}, fh)

    @staticmethod
    def load(path):
        with open(path, "rb") as fh:
            blob = pickle.load(fh)
        if blob.get("version") != FORMAT_VERSION:
            raise SolverFailure(
                f"factorization format {blob.get('version')} not supported"
            )
        return blob["payload"]


def _invert_S(S):
    """Invert the small skeleton response matrix, falling back to a
    pseudo-inverse when it is numerically singular."""
    if S.size == 0:
        return S.reshape(0, 0)
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > 1e13:
        warnings.warn(
            "near-singular skeleton response, using regularized pseudo-inverse",
            RuntimeWarning,
        )
        return np.linalg.pinv(S, rcond=1e-12)
    return np.linalg.inv(S)


def build_factorization(surface, cfg=None, solver_cfg=None, oracle=None):
    """Compress and factor the second-kind system for repeated solves.

    An _EntryOracle may be passed in to share its quadrature cache across
    several factorizations of the same surface and lambda.
    """
    cfg = cfg or quadrature.QuadConfig()
    scfg = solver_cfg or SolverConfig()
    oracle = oracle or _EntryOracle(surface, cfg, scfg.lam)
    N = surface.n_nodes
    M = surface.nodes_per_patch

    if 4 * N <= scfg.dense_fallback:
        nodes = np.arange(N)
        A = oracle.block(nodes, nodes, identity=True)
        return Factorization(4 * N, [], nodes, scipy.linalg.lu_factor(A))

    root, leaves = build_tree(surface, scfg.leaf_size)
    # active entries: (tree box, node indices, dense diagonal block)
    active = []
    for leaf in leaves:
        nodes = np.concatenate(
            [np.arange(p * M, (p + 1) * M) for p in sorted(leaf.patches)]
        )
        active.append([leaf, nodes, None])

    levels = []
    while True:
        total = 4 * sum(len(nodes) for _, nodes, _ in active)
        if total <= scfg.dense_fallback or len(active) == 1 or (
            scfg.one_level and levels
        ):
            break
        centers = [surface.geom.pos[nodes].mean(axis=0) for _, nodes, _ in active]
        rhos = [
            np.linalg.norm(surface.geom.pos[nodes] - c, axis=1).max()
            for (_, nodes, _), c in zip(active, centers)
        ]
        boxes = []
        for i, (tb, nodes, D) in enumerate(active):
            neigh = np.concatenate(
                [
                    active[j][1]
                    for j in range(len(active))
                    if j != i
                    and not well_separated(
                        centers[i], rhos[i], centers[j], rhos[j], scfg.proxy.c
                    )
                ]
                or [np.zeros(0, dtype=int)]
            )
            if D is None:
                D = oracle.block(nodes, nodes, identity=True)
            # exact (quadrature-corrected) near-field data for the IDs,
            # collapsed to scalar node columns / rows
            n_i, n_n = len(nodes), len(neigh)
            if n_n:
                Bn = oracle.block(neigh, nodes)
                rows_mat = Bn.reshape(n_n, 4, n_i, 4).transpose(0, 1, 3, 2)
                rows_mat = rows_mat.reshape(-1, n_i)
                Bt = oracle.block(nodes, neigh)
                cols_mat = Bt.reshape(n_i, 4, n_n, 4).transpose(0, 1, 3, 2)
                cols_mat = cols_mat.reshape(n_i, -1)
            else:
                rows_mat = cols_mat = None
            xf = compression.build_Xj(
                surface, nodes, neigh, centers[i], rhos[i], scfg.proxy,
                scfg.lam, near_mat=rows_mat,
            )
            ef = compression.build_Ei(
                surface, nodes, neigh, centers[i], rhos[i], scfg.proxy,
                scfg.lam, near_mat=cols_mat,
            )
            # a common skeleton keeps the reduced system square; union of
            # the row and column skeletons is the safe choice
            skel = np.union1d(xf.skeleton, ef.skeleton)
            X4 = compression.expand4(_pad_to(xf, skel, len(nodes), axis=0))
            E4 = compression.expand4(_pad_to(ef, skel, len(nodes), axis=1))
            lu = scipy.linalg.lu_factor(D)
            S = X4 @ scipy.linalg.lu_solve(lu, E4)
            boxes.append(
                _BoxFactor(
                    nodes=nodes,
                    lu=lu,
                    E4=E4,
                    X4=X4,
                    invS=_invert_S(S),
                    skel_nodes=nodes[skel],
                )
            )
        # merge siblings in the tree to form the next level's boxes
        groups, next_active = _merge(active, boxes, oracle)
        levels.append(_Level(boxes=boxes, groups=groups))
        active = next_active

    # dense solve of whatever is left
    parts = [nodes for _, nodes, _ in active]
    sizes = [4 * len(p) for p in parts]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    G = np.zeros((offs[-1], offs[-1]))
    for i, (_, nodes, D) in enumerate(active):
        if D is None:
            D = oracle.block(nodes, nodes, identity=True)
        G[offs[i] : offs[i + 1], offs[i] : offs[i + 1]] = D
        for j in range(len(active)):
            if j != i:
                G[offs[i] : offs[i + 1], offs[j] : offs[j + 1]] = oracle.block(
                    nodes, active[j][1]
                )
    top_nodes = np.concatenate(parts)
    return Factorization(4 * N, levels, top_nodes, scipy.linalg.lu_factor(G))


def _pad_to(fac, skel, n, axis):
    """Extend an interpolation factor to a larger common skeleton: extra
    skeleton entries just carry their own identity column/row."""
    pos = np.searchsorted(skel, fac.skeleton)
    if axis == 0:
        out = np.zeros((len(skel), n))
        out[pos] = fac.interp
        extra = np.setdiff1d(skel, fac.skeleton)
        out[np.searchsorted(skel, extra), extra] = 1.0
    else:
        out = np.zeros((n, len(skel)))
        out[:, pos] = fac.interp
        extra = np.setdiff1d(skel, fac.skeleton)
        out[extra, np.searchsorted(skel, extra)] = 1.0
    return out


def _merge(active, boxes, oracle):
    """Group compressed boxes by their tree parents and assemble the merged
    diagonal blocks (child S inverses coupled by skeleton kernel entries)."""
    parent_of = {}
    for i, (tb, _, _) in enumerate(active):
        key = id(tb.parent) if tb.parent is not None else id(tb)
        parent_of.setdefault(key, []).append(i)
    groups = []
    next_active = []
    for i, (tb, _, _) in enumerate(active):
        key = id(tb.parent) if tb.parent is not None else id(tb)
        if key not in parent_of:
            continue
        grp = parent_of.pop(key)
        groups.append(grp)
        members = [boxes[g] for g in grp]
        sizes = [4 * len(m.skel_nodes) for m in members]
        offs = np.concatenate([[0], np.cumsum(sizes)])
        D = np.zeros((offs[-1], offs[-1]))
        for a, ma in enumerate(members):
            D[offs[a] : offs[a + 1], offs[a] : offs[a + 1]] = ma.invS
            for b, mb in enumerate(members):
                if a != b:
                    D[offs[a] : offs[a + 1], offs[b] : offs[b + 1]] = oracle.block(
                        ma.skel_nodes, mb.skel_nodes
                    )
        up = active[grp[0]][0].parent or active[grp[0]][0]
        next_active.append([up, np.concatenate([m.skel_nodes for m in members]), D])
    return groups, next_active


# ---------------------------------------------------------------------------
# Front ends.


def dense_solve(surface, b, cfg=None, lam=0.0):
    """Baseline: assemble the full system and LU-solve."""
    A = quadrature.assemble_system(surface, cfg, lam=lam)
    return scipy.linalg.solve(A, np.asarray(b, dtype=float))


def project_tangential(surface, rho):
    """Force the vector density tangential; returns (rho, max deviation)."""
    rho = np.array(rho, dtype=float)
    N = surface.n_nodes
    sig = rho.reshape(N, 4)[:, :3]
    normal = surface.geom.normal
    dev = np.abs(np.einsum("ki,ki->k", sig, normal)).max()
    sig -= np.einsum("ki,ki->k", sig, normal)[:, None] * normal
    rho.reshape(N, 4)[:, :3] = sig
    return rho, float(dev)
