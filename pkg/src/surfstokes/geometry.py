"""Surfaces: patch parameterizations, pointwise geometry, and discretization.

All differential-geometric quantities used by the kernels are computed here
from the symbolic families in `shapes.py`:

* shape operator S[i, j] = d_j n_i with the normal extended constant along
  normal lines,
* mean curvature H = tr(S) / 2,
* the componentwise surface Laplacian of the normal,
* (Delta - d_n^2) n computed via ambient Hessians of the extension (kept as a
  second route and checked against the intrinsic Laplacian),
* the frozen-projection field P grad(div(P_f n)).

The ambient Hessians come from twice chain-ruling the normal extension
Phi(u, v, t) = psi + t n through the inverse Jacobian of Phi.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import shapes


class InvalidPatchError(ValueError):
    """Raised when a patch has a (numerically) degenerate Jacobian."""


@dataclass
class SurfaceSample:
    """All pointwise geometry the kernels need at one surface point."""

    pos: np.ndarray  # r, (3,)
    ru: np.ndarray
    rv: np.ndarray
    normal: np.ndarray  # unit outward n
    proj: np.ndarray  # P = I - n n^T, (3, 3)
    detg: float
    shape_op: np.ndarray  # S, (3, 3)
    mean_curv: float  # H
    lap_normal: np.ndarray  # componentwise surface Laplacian of n, (3,)
    lap_minus_nn: np.ndarray  # (Delta - d_n^2) n via ambient Hessians, (3,)
    pgrad_div_pfn: np.ndarray  # P grad(div(P_f n)), (3,)


@dataclass
class GeometryBatch:
    """Vectorized geometry at many points (leading axis = point index)."""

    pos: np.ndarray
    ru: np.ndarray
    rv: np.ndarray
    normal: np.ndarray
    proj: np.ndarray
    detg: np.ndarray
    shape_op: np.ndarray
    mean_curv: np.ndarray
    lap_normal: np.ndarray
    lap_minus_nn: np.ndarray
    pgrad_div_pfn: np.ndarray

    def __len__(self):
        return self.pos.shape[0]

    def __getitem__(self, idx):
        if np.isscalar(idx) or isinstance(idx, (int, np.integer)):
            return SurfaceSample(
                pos=self.pos[idx],
                ru=self.ru[idx],
                rv=self.rv[idx],
                normal=self.normal[idx],
                proj=self.proj[idx],
                detg=float(self.detg[idx]),
                shape_op=self.shape_op[idx],
                mean_curv=float(self.mean_curv[idx]),
                lap_normal=self.lap_normal[idx],
                lap_minus_nn=self.lap_minus_nn[idx],
                pgrad_div_pfn=self.pgrad_div_pfn[idx],
            )
        return GeometryBatch(
            **{k: getattr(self, k)[idx] for k in self.__dataclass_fields__}
        )


def _geometry_from_raw(raw, check_consistency=True):
    """Assemble curvature fields from the lambdified symbolic ingredients.

    raw: dict from PatchFamily.evaluate with point axes leading.
    """
    n = raw["n"]
    shape = n.shape[:-1]
    eye = np.broadcast_to(np.eye(3), shape + (3, 3))
    proj = eye - n[..., :, None] * n[..., None, :]

    J = raw["J"]
    detJ = np.linalg.det(J)
    scale = np.linalg.norm(raw["ru"], axis=-1) * np.linalg.norm(raw["rv"], axis=-1)
    if np.any(np.abs(detJ) <= 1e-14 * np.maximum(scale, 1e-300)):
        raise InvalidPatchError("degenerate patch Jacobian")
    Jinv = np.linalg.inv(J)

    dN = raw["dN"]  # [j, c] = dN_j / dxi_c
    d2N = raw["d2N"]  # [j, c, d]
    dJ = raw["dJ"]  # [i, c, d] = d J_ic / dxi_d

    # S[j, a] = d n_j / d x_a = sum_c dN[j, c] Jinv[c, a]
    S = np.einsum("...jc,...ca->...ja", dN, Jinv)
    H = 0.5 * np.einsum("...jj->...", S)

    # dJinv[..., c, a, d] = d (Jinv)_ca / dxi_d = -(Jinv dJ(:,:,d) Jinv)_ca
    dJinv = -np.einsum("...ci,...ikd,...ka->...cad", Jinv, dJ, Jinv)
    # Hess[j, a, b] = sum_d { sum_c dJinv[c,a,d] dN[j,c] + Jinv[c,a] d2N[j,c,d] } Jinv[d,b]
    inner = np.einsum("...cad,...jc->...jad", dJinv, dN) + np.einsum(
        "...ca,...jcd->...jad", Jinv, d2N
    )
    hess = np.einsum("...jad,...db->...jab", inner, Jinv)

    tr_h = np.einsum("...jaa->...j", hess)
    nhn = np.einsum("...a,...jab,...b->...j", n, hess, n)
    lap_minus_nn = tr_h - nhn

    # v_a = sum_{i,j} P_ij Hess^{(j)}_{a i};   field = P v
    vvec = np.einsum("...ij,...jai->...a", proj, hess)
    pgrad = np.einsum("...ab,...b->...a", proj, vvec)

    lapn = raw["lapn"]
    if check_consistency:
        ref = np.maximum(np.abs(lapn).max(axis=-1), 1.0)
        dev = np.abs(lapn - lap_minus_nn).max(axis=-1)
        if np.any(dev > 1e-6 * ref):
            raise InvalidPatchError(
                "normal-Laplacian convention mismatch: intrinsic vs ambient "
                f"paths differ by {float(np.max(dev / ref)):.3e}"
            )

    return GeometryBatch(
        pos=raw["pos"],
        ru=raw["ru"],
        rv=raw["rv"],
        normal=n,
        proj=proj,
        detg=raw["detg"],
        shape_op=S,
        mean_curv=H,
        lap_normal=lapn,
        lap_minus_nn=lap_minus_nn,
        pgrad_div_pfn=pgrad,
    )


@dataclass
class PatchParam:
    """One quad patch: a family plus its affine placement on the unit square."""

    family: shapes.PatchFamily
    u0: float
    du: float
    v0: float
    dv: float
    ref_point: np.ndarray  # interior reference fixing outward orientation
    sign: float = 0.0  # orientation, resolved at construction

    def __post_init__(self):
        if self.sign == 0.0:
            raw = self.family.evaluate(
                0.5, 0.5, self.u0, self.du, self.v0, self.dv, 1.0
            )
            outward = raw["pos"] - self.ref_point
            s = float(np.sign(np.dot(raw["n"], outward)))
            if s == 0.0:
                raise InvalidPatchError("cannot orient patch normal")
            self.sign = s

    def sample_raw(self, u, v):
        return self.family.evaluate(u, v, self.u0, self.du, self.v0, self.dv, self.sign)

    def sample_batch(self, u, v, check_consistency=False):
        """Full geometry at arrays of patch-local coordinates."""
        return _geometry_from_raw(self.sample_raw(u, v), check_consistency)

    def sample_light(self, u, v):
        """Source-side geometry only: positions, normals, sqrt(det g).

        This is all the kernels need at quadrature source points, and skips
        the third-order machinery.
        """
        return self.family.evaluate_light(
            u, v, self.u0, self.du, self.v0, self.dv, self.sign
        )


def sample_patch(patch: PatchParam, uv) -> SurfaceSample:
    """Pointwise geometry of one patch at one (u, v) in [0, 1]^2."""
    u, v = float(uv[0]), float(uv[1])
    if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
        raise ValueError(f"uv {uv} outside the reference square")
    return patch.sample_batch(np.array([u]), np.array([v]))[0]


def gauss_nodes_01(q):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass
class DiscretizedSurface:
    """A closed surface discretized with tensor Gauss-Legendre quad patches."""

    patches: list
    q: int
    nodes_uv: np.ndarray  # (M, 2) shared per-patch reference nodes
    ref_weights: np.ndarray  # (M,) product Gauss weights on [0, 1]^2
    geom: GeometryBatch  # all nodes, patch-major
    weights: np.ndarray  # omega_j = sqrt(det g) w_j
    patch_of_node: np.ndarray
    patch_slices: list
    centroids: np.ndarray
    diameters: np.ndarray
    area: float = field(init=False)

    def __post_init__(self):
        self.area = float(self.weights.sum())

    @property
    def n_nodes(self):
        return len(self.weights)

    @property
    def nodes_per_patch(self):
        return len(self.ref_weights)

    def patch_nodes(self, k):
        return self.geom[self.patch_slices[k]]


def _discretize(patch_list, q):
    if q < 2:
        raise ValueError("q must be at least 2")
    x1, w1 = gauss_nodes_01(q)
    uu, vv = np.meshgrid(x1, x1, indexing="ij")
    uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
    wref = np.outer(w1, w1).ravel()

    patches = [PatchParam(*p) for p in patch_list]
    geoms = [p.sample_batch(uv[:, 0], uv[:, 1], check_consistency=True) for p in patches]
    fields = {
        k: np.concatenate([getattr(g, k) for g in geoms], axis=0)
        for k in GeometryBatch.__dataclass_fields__
    }
    geom = GeometryBatch(**fields)

    M = len(wref)
    npat = len(patches)
    weights = np.concatenate([np.sqrt(g.detg) * wref for g in geoms])
    patch_of_node = np.repeat(np.arange(npat), M)
    slices = [slice(k * M, (k + 1) * M) for k in range(npat)]
    centroids = np.stack([g.pos.mean(axis=0) for g in geoms])
    diameters = np.array(
        [
            np.linalg.norm(g.pos[:, None, :] - g.pos[None, :, :], axis=-1).max()
            for g in geoms
        ]
    )
    return DiscretizedSurface(
        patches=patches,
        q=q,
        nodes_uv=uv,
        ref_weights=wref,
        geom=geom,
        weights=weights,
        patch_of_node=patch_of_node,
        patch_slices=slices,
        centroids=centroids,
        diameters=diameters,
    )


def build_surface(shape, q=8, refine=1, n_u=8, n_v=4, axes=(1.5, 1.0, 1.0)):
    """Discretize one of the built-in shapes (or a patch file).

    shape: 'sphere' | 'ellipsoid' | 'slanted_torus' | 'star_torus', or a path
    to a patch file (see `load_patch_file`).
    """
    if shape == "sphere":
        plist = shapes.cubed_sphere_patches((1.0, 1.0, 1.0), refine)
    elif shape == "ellipsoid":
        plist = shapes.cubed_sphere_patches(tuple(axes), refine)
    elif shape == "slanted_torus":
        plist = shapes.torus_patches("slanted", n_u, n_v)
    elif shape == "star_torus":
        plist = shapes.torus_patches("star", n_u, n_v)
    elif isinstance(shape, str):
        return load_patch_file(shape, q)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return _discretize(plist, q)


def surface_integral(surface: DiscretizedSurface, values) -> float:
    """Quadrature of nodal values: sum f_j omega_j."""
    values = np.asarray(values, dtype=float)
    if values.shape != surface.weights.shape:
        raise ValueError(
            f"expected {surface.weights.shape[0]} nodal values, got {values.shape}"
        )
    return float(values @ surface.weights)


# ---------------------------------------------------------------------------
# Patch file format: header "npatches q"; then per patch (q+1)^2 lines of
# "u v x y z" sampled on the tensor Gauss grid of order q+1 on [0, 1]^2.
# An optional per-patch reference point line "ref x y z" may precede the
# samples; it defaults to the centroid of all patch samples in the file.


def load_patch_file(path, q=8):
    with open(path) as f:
        tokens = f.read().split()
    it = iter(tokens)
    npat = int(next(it))
    p = int(next(it))
    x1, _ = gauss_nodes_01(p)
    # Vandermonde of Legendre P_a(2u-1) at the order-p Gauss grid
    van = np.polynomial.legendre.legvander(2 * x1 - 1, p - 1)
    vinv = np.linalg.inv(van)
    patch_list = []
    all_pos = []
    raw_patches = []
    for k in range(npat):
        ref = None
        first = next(it)
        if first == "ref":
            ref = np.array([float(next(it)) for _ in range(3)])
            first = next(it)
        rows = [float(first)]
        rows += [float(next(it)) for _ in range(5 * p * p - 1)]
        data = np.array(rows).reshape(p * p, 5)
        raw_patches.append((data, ref))
        all_pos.append(data[:, 2:5])
    centroid = np.concatenate(all_pos).mean(axis=0)
    for k, (data, ref) in enumerate(raw_patches):
        uv = data[:, :2].reshape(p, p, 2)
        if not (
            np.allclose(uv[:, 0, 0], x1, atol=1e-10)
            and np.allclose(uv[0, :, 1], x1, atol=1e-10)
        ):
            raise InvalidPatchError(
                f"patch {k}: samples must lie on the order-{p} tensor Gauss grid"
            )
        xyz = data[:, 2:5].reshape(p, p, 3)
        coeffs = np.einsum("au,bv,uvi->abi", vinv, vinv, xyz)
        fam = shapes.polynomial_patch_family(coeffs, f"file:{path}:{k}")
        patch_list.append((fam, 0.0, 1.0, 0.0, 1.0, ref if ref is not None else centroid))
    return _discretize(patch_list, q)
