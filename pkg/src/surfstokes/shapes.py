"""Symbolic surface parameterizations and their derivative pipelines.

Each built-in shape is defined once as a sympy map psi(u, v) -> R^3.  From it
we symbolically derive everything the kernels need: first/second/third
derivatives of the map, the unit normal extended constant along normal lines,
and the ambient first and second derivatives of that extension.  The heavy
lifting (Jacobian inverses, Hessian chain rules) is done numerically in
`geometry.py`; here we only lambdify the raw symbolic ingredients.

A "family" is one smooth map shared by many patches; individual patches are
affine sub-rectangles of the family's parameter domain, passed in through the
offset/scale arguments so each family is lambdified exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp

_U, _V, _T = sp.symbols("u v t", real=True)
_U0, _DU, _V0, _DV = sp.symbols("u0 du v0 dv", real=True)
_S = sp.Symbol("s", real=True)  # orientation sign, +-1

_FAMILY_CACHE: dict = {}


def _cross(a, b):
    return sp.Matrix(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def _build_family_exprs(psi):
    """Build the flat list of symbolic scalars lambdified for one family.

    `psi` is a 3x1 sympy Matrix in the global parameters; it is first
    re-expressed in patch-local coordinates (u, v) on the unit square via
    the affine substitution handled by the caller.

    Returns (exprs, layout) where layout maps names to (offset, shape).
    """
    ru = psi.diff(_U)
    rv = psi.diff(_V)
    nraw = _cross(ru, rv)
    nn = sp.sqrt(nraw.dot(nraw))
    n = _S * nraw / nn

    # Normal-line extension Phi(u, v, t) = psi + t n; its Jacobian and the
    # parameter-space derivatives of the (t-independent) normal field.
    phi = psi + _T * n
    xi = (_U, _V, _T)
    J = phi.jacobian(sp.Matrix([_U, _V, _T]))
    dJ = [J.diff(x) for x in xi]  # dJ[d][i, c] = d J_ic / d xi_d
    dN = [[n[j].diff(c) for c in xi] for j in range(3)]
    d2N = [[[n[j].diff(c).diff(d) for d in xi] for c in xi] for j in range(3)]

    # First fundamental form and intrinsic Laplace-Beltrami of each normal
    # component (the second, independent route to the curvature Laplacian).
    E = ru.dot(ru)
    F = ru.dot(rv)
    G = rv.dot(rv)
    detg = E * G - F**2
    sq = sp.sqrt(detg)
    guu, guv, gvv = G / detg, -F / detg, E / detg
    lapn = []
    for j in range(3):
        fu = n[j].diff(_U)
        fv = n[j].diff(_V)
        flux_u = sq * (guu * fu + guv * fv)
        flux_v = sq * (guv * fu + gvv * fv)
        lapn.append((flux_u.diff(_U) + flux_v.diff(_V)) / sq)

    at0 = {_T: 0}
    exprs = []
    layout = {}

    def add(name, obj, shape):
        start = len(exprs)
        flat = np.array(obj, dtype=object).reshape(-1)
        exprs.extend(e.subs(at0) if hasattr(e, "subs") else sp.sympify(e) for e in flat)
        layout[name] = (start, shape)

    add("pos", list(psi), (3,))
    add("ru", list(ru), (3,))
    add("rv", list(rv), (3,))
    add("detg", [detg], ())
    add("n", list(n), (3,))
    add("J", [J[i, c] for i in range(3) for c in range(3)], (3, 3))
    add("dJ", [dJ[d][i, c] for i in range(3) for c in range(3) for d in range(3)], (3, 3, 3))
    add("dN", [dN[j][c] for j in range(3) for c in range(3)], (3, 3))
    add(
        "d2N",
        [d2N[j][c][d] for j in range(3) for c in range(3) for d in range(3)],
        (3, 3, 3),
    )
    add("lapn", lapn, (3,))
    return exprs, layout


@dataclass
class PatchFamily:
    """Lambdified derivative data for one smooth map, shared across patches."""

    name: str
    _fn: object
    _layout: dict
    _fn_light: object = None

    def evaluate_light(self, u, v, u0, du, v0, dv, sign):
        """Source-side data only: positions, unit normals, sqrt(det g).

        A separate, much smaller lambdified function; quadrature loops call
        this thousands of times and do not need the third-order fields.
        """
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        vals = self._fn_light(u, v, u0, du, v0, dv, sign)
        shape = np.broadcast(u, v).shape
        pos = np.stack([np.broadcast_to(np.asarray(c, float), shape) for c in vals[0:3]], axis=-1)
        n = np.stack([np.broadcast_to(np.asarray(c, float), shape) for c in vals[3:6]], axis=-1)
        sq = np.broadcast_to(np.asarray(vals[6], float), shape)
        return pos, n, sq

    def evaluate(self, u, v, u0, du, v0, dv, sign):
        """Evaluate all symbolic fields at patch-local coordinates.

        u, v are arrays on the unit square; the affine patch placement and the
        orientation sign are scalars.  Returns a dict of numpy arrays with the
        point axis last replaced by leading axes matching u's shape.
        """
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        vals = self._fn(u, v, u0, du, v0, dv, sign)
        shape = np.broadcast(u, v).shape
        out = {}
        for key, (start, fshape) in self._layout.items():
            k = int(np.prod(fshape, dtype=int)) if fshape else 1
            block = np.empty(shape + ((k,) if fshape else ()), dtype=float)
            for i in range(k):
                entry = np.asarray(vals[start + i], dtype=float)
                if fshape:
                    block[..., i] = np.broadcast_to(entry, shape)
                else:
                    block[...] = np.broadcast_to(entry, shape)
            out[key] = block.reshape(shape + fshape)
        return out


def _disk_cache_dir():
    import os

    d = os.environ.get(
        "SURFSTOKES_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "surfstokes")
    )
    os.makedirs(d, exist_ok=True)
    return d


def _make_family(name, psi_global, u_sym, v_sym):
    """Compile a family from a map given in global parameters (u_sym, v_sym).

    The generated numeric code is cached on disk keyed by the family name;
    symbolic differentiation of the third-order chains is expensive enough
    (seconds per family) that recompiling on every process start would
    dominate small runs.
    """
    key = ("family", name)
    if key in _FAMILY_CACHE:
        return _FAMILY_CACHE[key]

    import hashlib
    import inspect
    import json
    import os

    digest = hashlib.sha256(f"{name}|{sp.__version__}|v1".encode()).hexdigest()[:24]
    path = os.path.join(_disk_cache_dir(), f"fam_{digest}.py")
    light_path = os.path.join(_disk_cache_dir(), f"fam_{digest}_light.py")
    meta = path + ".json"
    src = layout = None
    if os.path.exists(path) and os.path.exists(meta):
        with open(path) as f:
            src = f.read()
        with open(meta) as f:
            layout = {k: (v[0], tuple(v[1])) for k, v in json.load(f).items()}
    psi = psi_global.subs(
        {u_sym: _U0 + _DU * _U, v_sym: _V0 + _DV * _V}, simultaneous=True
    )
    if src is None:
        exprs, layout = _build_family_exprs(psi)
        fn = sp.lambdify(
            (_U, _V, _U0, _DU, _V0, _DV, _S), exprs, modules="numpy", cse=True
        )
        src = inspect.getsource(fn)
        with open(path, "w") as f:
            f.write(src)
        with open(meta, "w") as f:
            json.dump({k: [v[0], list(v[1])] for k, v in layout.items()}, f)
    if os.path.exists(light_path):
        with open(light_path) as f:
            light_src = f.read()
    else:
        ru = psi.diff(_U)
        rv = psi.diff(_V)
        nraw = _cross(ru, rv)
        detg = nraw.dot(nraw)
        n = _S * nraw / sp.sqrt(detg)
        light_exprs = list(psi) + list(n) + [sp.sqrt(detg)]
        lfn = sp.lambdify(
            (_U, _V, _U0, _DU, _V0, _DV, _S), light_exprs, modules="numpy", cse=True
        )
        light_src = inspect.getsource(lfn)
        with open(light_path, "w") as f:
            f.write(light_src)
    ns = {}
    exec("from numpy import *\n" + src, ns)
    ns_l = {}
    exec("from numpy import *\n" + light_src, ns_l)
    fam = PatchFamily(
        name=name,
        _fn=ns["_lambdifygenerated"],
        _layout=layout,
        _fn_light=ns_l["_lambdifygenerated"],
    )
    _FAMILY_CACHE[key] = fam
    return fam


# ---------------------------------------------------------------------------
# Built-in shapes.  Each builder returns (patches, interior_point) where
# patches is a list of (family, u0, du, v0, dv).


# Each cube face sends (a, b) in [-1, 1]^2 to a direction on that face of the
# cube; central projection onto the (scaled) unit sphere covers it exactly.
_CUBE_FACES = {
    0: lambda a, b: sp.Matrix([1, a, b]),
    1: lambda a, b: sp.Matrix([-1, a, b]),
    2: lambda a, b: sp.Matrix([a, 1, b]),
    3: lambda a, b: sp.Matrix([a, -1, b]),
    4: lambda a, b: sp.Matrix([a, b, 1]),
    5: lambda a, b: sp.Matrix([a, b, -1]),
}


def _sphere_face_map(face, axes):
    a, b = sp.symbols("a b", real=True)
    d = _CUBE_FACES[face](a, b)
    norm = sp.sqrt(d.dot(d))
    pos = sp.Matrix([axes[i] * d[i] / norm for i in range(3)])
    return pos, a, b


def cubed_sphere_patches(axes=(1.0, 1.0, 1.0), refine=1):
    """Cubed-sphere (or ellipsoid) cover: 6 * refine**2 quad patches."""
    patches = []
    h = 2.0 / refine
    center = np.zeros(3)
    for face in range(6):
        psi, a, b = _sphere_face_map(face, [sp.Float(x) for x in axes])
        fam = _make_family(f"sphere{axes}-f{face}", psi, a, b)
        for i in range(refine):
            for j in range(refine):
                patches.append((fam, -1.0 + i * h, h, -1.0 + j * h, h, center))
    return patches


_SLANT = sp.Matrix([[1, 0, sp.Rational(1, 2)], [0, 1, 0], [0, 0, 1]])
_SHIFT = sp.Matrix([sp.Rational(3, 2), 0, 0])


def _slanted_torus_map():
    u, v = sp.symbols("uu vv", real=True)
    rad = 2 + sp.Rational(3, 4) * sp.cos(v) + sp.Rational(3, 4) * sp.cos(3 * u)
    base = sp.Matrix([rad * sp.cos(u), rad * sp.sin(u), sp.Rational(3, 4) * sp.sin(v)])
    return _SLANT * (base - _SHIFT) + _SHIFT, u, v


def _star_torus_map():
    u, v = sp.symbols("uu vv", real=True)
    tube = sp.Rational(1, 2) + sp.cos(5 * v) / 10
    rad = sp.Rational(3, 2) + tube * sp.cos(v)
    base = sp.Matrix([rad * sp.cos(u), rad * sp.sin(u), tube * sp.sin(v)])
    return _SLANT * (base - _SHIFT) + _SHIFT, u, v


_SLANT_NP = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
_SHIFT_NP = np.array([1.5, 0.0, 0.0])


def _torus_tube_center(kind, u):
    """Point on the tube's center curve at angle u, after the slant map."""
    if kind == "slanted":
        rad = 2.0 + 0.75 * np.cos(3 * u)
    else:
        rad = 1.5
    base = np.array([rad * np.cos(u), rad * np.sin(u), 0.0])
    return _SLANT_NP @ (base - _SHIFT_NP) + _SHIFT_NP


def torus_patches(kind, n_u, n_v):
    """Periodic (u, v) in [0, 2pi)^2 split into n_u x n_v quad patches.

    The per-patch interior reference point (used to orient normals outward
    from the tube) is the tube center curve at the patch's mid angle.
    """
    psi, u, v = _slanted_torus_map() if kind == "slanted" else _star_torus_map()
    fam = _make_family(f"{kind}-torus", psi, u, v)
    hu = 2 * np.pi / n_u
    hv = 2 * np.pi / n_v
    patches = []
    for i in range(n_u):
        ref = _torus_tube_center(kind, (i + 0.5) * hu)
        for j in range(n_v):
            patches.append((fam, i * hu, hu, j * hv, hv, ref))
    return patches


def polynomial_patch_family(coeffs, tag):
    """Family for a file-loaded patch given tensor-Legendre coefficients.

    coeffs has shape (p, p, 3): coefficient [a, b, i] multiplies
    P_a(2u - 1) P_b(2v - 1) in coordinate i, with u, v on [0, 1].
    """
    import hashlib

    tag = f"{tag}:{hashlib.sha256(np.ascontiguousarray(coeffs).tobytes()).hexdigest()[:16]}"
    key = ("family", tag)
    if key in _FAMILY_CACHE:
        return _FAMILY_CACHE[key]
    u, v = sp.symbols("uu vv", real=True)
    p = coeffs.shape[0]
    lu = [sp.legendre(a, 2 * u - 1) for a in range(p)]
    lv = [sp.legendre(b, 2 * v - 1) for b in range(p)]
    comps = []
    for i in range(3):
        expr = sp.S.Zero
        for a in range(p):
            for b in range(p):
                c = coeffs[a, b, i]
                if abs(c) > 1e-300:
                    expr += sp.Float(c, 17) * lu[a] * lv[b]
        comps.append(sp.expand(expr))
    return _make_family(tag, sp.Matrix(comps), u, v)
