"""Pointwise kernels: the 2D Stokeslet ansatz and the four parametrix kernels.

The momentum kernel K_G1 is the result of pushing the single-layer Stokeslet
through the tangential momentum operator; it is assembled term by term from a
machine-readable table so each term can be tested in isolation.  Scalar
factors use the shorthand

    a = n.r,  b = r.w,  c = n.w,  r2 = |r|^2,  lg = log|r|,

with all geometry (n, P, S, H, curvature fields) evaluated at the *target*
point; the only source-side geometry is the projection P(r') applied to the
input vector.
"""

from __future__ import annotations

import numpy as np


class SingularEvaluationError(ValueError):
    """Raised when a kernel is evaluated at coincident points."""


# ---------------------------------------------------------------------------
# Term table for the momentum kernel acting on the single-layer velocity.
#
# Each entry: (coef, a_pow, h_pow, log_flag, r2_pow, left, right)
# contributing  coef * a**a_pow * H**h_pow * (log r)**log_flag / r2**r2_pow
# times either a matrix (right is None) or outer(left_vector, right_vector).
#
# left keys: P, S, SP, S2 (matrices); Pr, Sr, S2r (vectors);
# PLapn = P (componentwise Laplace-Beltrami of n), PDn = P (Delta - d_n^2) n,
# Pgrad = P grad(div(P_f n)).  right keys contract the input: r or n.
KG1_TERMS = (
    (-2.0, 1, 0, 0, 2, "Pr", "n"),
    (4.0, 2, 0, 0, 3, "Pr", "r"),
    (1.0, 1, 0, 0, 1, "SP", None),
    (-2.0, 1, 0, 0, 2, "Sr", "r"),
    (1.0, 2, 0, 0, 2, "P", None),
    (-1.5, 0, 0, 0, 1, "Sr", "n"),
    (-1.0, 0, 0, 1, 0, "PLapn", "n"),
    (-1.0, 0, 0, 1, 0, "S2", None),
    (-1.0, 1, 1, 0, 1, "P", None),
    (-1.0, 0, 1, 0, 1, "Pr", "n"),
    (-0.5, 1, 0, 0, 1, "S", None),
    (1.0, 1, 1, 0, 1, "P", None),
    # printed with a redundant P w factor; the H-projection chain-rule term
    # is (n.r)(r.w) P r, the only reading linear in w
    (-2.0, 1, 1, 0, 2, "Pr", "r"),
    (0.5, 1, 0, 0, 1, "PDn", "r"),
    (0.5, 0, 0, 0, 1, "S2r", "r"),
    (1.0, 0, 1, 0, 1, "Pr", "n"),
    (-2.0, 1, 1, 0, 2, "Pr", "r"),
    (-1.0, 1, 0, 0, 2, "Pr", "n"),
    (-1.0, 2, 0, 0, 2, "P", None),
    (4.0, 2, 0, 0, 3, "Pr", "r"),
    (0.5, 0, 0, 0, 1, "Sr", "n"),
    (-1.0, 1, 0, 0, 2, "Sr", "r"),
    (0.5, 1, 0, 0, 1, "Pgrad", "r"),
    (0.5, 0, 0, 0, 1, "S2r", "r"),
    (0.5, 1, 0, 0, 1, "SP", None),
    (-1.0, 1, 0, 0, 2, "Sr", "r"),
    (1.0, 1, 0, 0, 2, "Pr", "n"),
)


def _target_source_arrays(target, source):
    """Displacements and target fields broadcast to (nt, ns, ...)."""
    tx = np.atleast_2d(target.pos)
    sx = np.atleast_2d(source.pos)
    r = tx[:, None, :] - sx[None, :, :]
    r2 = np.einsum("tsi,tsi->ts", r, r)
    if np.any(r2 <= 0.0):
        raise SingularEvaluationError("coincident target and source points")
    return r, r2


def _ingredients(target, source):
    """Everything the four kernels (and the ansatz kernels) share for one
    target x source batch, computed once."""
    r, r2 = _target_source_arrays(target, source)
    inv_r2 = 1.0 / r2
    n = np.atleast_2d(target.normal)[:, None, :]
    a = np.einsum("tsi,tsi->ts", np.broadcast_to(n, r.shape), r)
    lg = 0.5 * np.log(r2)
    P = target.proj.reshape(-1, 3, 3)
    S = target.shape_op.reshape(-1, 3, 3)
    H = np.atleast_1d(target.mean_curv).reshape(-1)[:, None]
    Pr = np.matmul(r, np.swapaxes(P, -1, -2))
    Sr = np.matmul(r, np.swapaxes(S, -1, -2))
    S2r = np.matmul(Sr, np.swapaxes(S, -1, -2))
    PDn = np.einsum("tij,tj->ti", P, np.atleast_2d(target.lap_minus_nn))[:, None, :]
    Pg = np.atleast_2d(target.pgrad_div_pfn)[:, None, :]
    Ps = np.atleast_3d(source.proj.reshape(-1, 3, 3))
    return dict(
        target=target, r=r, r2=r2, inv_r2=inv_r2, n=n, a=a, lg=lg,
        P=P, S=S, H=H, Pr=Pr, Sr=Sr, S2r=S2r, PDn=PDn, Pg=Pg, Ps=Ps,
    )


def _kg1_core(g):
    r, r2, a, lg, H = g["r"], g["r2"], g["a"], g["lg"], g["H"]
    ir1 = g["inv_r2"]
    ir = {1: ir1, 2: ir1 * ir1}
    ir[3] = ir[2] * ir1
    P4 = g["P"][:, None]
    S4 = g["S"][:, None]
    vec = {
        "Pr": g["Pr"],
        "Sr": g["Sr"],
        "S2r": g["S2r"],
        "PLapn": np.broadcast_to(
            np.einsum(
                "tij,tj->ti", g["P"], np.atleast_2d(g["target"].lap_normal)
            )[:, None, :],
            r.shape,
        ),
        "PDn": np.broadcast_to(g["PDn"], r.shape),
        "Pgrad": np.broadcast_to(g["Pg"], r.shape),
    }
    S2 = np.matmul(S4, S4)
    mat = {"P": P4, "S": S4, "SP": np.matmul(S4, P4), "S2": S2}
    nvec = np.broadcast_to(g["n"], r.shape)
    # the scalar prefactors are cheap; the rank-one outer products are not, so
    # terms sharing a (left, right) pair are summed at the scalar level first,
    # and the distinct power combinations are computed once
    combined = {}
    prefactors = {}
    for coef, ap, hp, lf, mp, left, right in KG1_TERMS:
        pkey = (ap, hp, lf, mp)
        if pkey not in prefactors:
            pre = None
            if ap:
                pre = a if ap == 1 else a * a
            if mp:
                pre = ir[mp] if pre is None else pre * ir[mp]
            if hp:
                pre = H * np.ones(r2.shape) if pre is None else H * pre
            if lf:
                pre = lg if pre is None else lg * pre
            prefactors[pkey] = np.ones(r2.shape) if pre is None else pre
        scal = coef * prefactors[pkey]
        key = (left, right)
        if key in combined:
            combined[key] += scal
        else:
            combined[key] = scal
    # one outer product per right-hand factor: sum the scaled left vectors
    # first, then take a single rank-one product with r (resp. n)
    out = np.zeros(r.shape[:2] + (3, 3))
    for rv, tag in ((r, "r"), (nvec, "n")):
        acc = None
        for (left, right), scal in combined.items():
            if right != tag:
                continue
            term = scal[:, :, None] * vec[left]
            acc = term if acc is None else acc + term
        if acc is not None:
            out += acc[:, :, :, None] * rv[:, :, None, :]
    for (left, right), scal in combined.items():
        if right is None:
            out += scal[:, :, None, None] * mat[left]
    return np.matmul(out, g["Ps"])


def _kg2_core(g):
    r, a, H, lg = g["r"], g["a"], g["H"], g["lg"]
    ir1 = g["inv_r2"]
    # 2[(n.r)^2 (r.w)/r^4 + H log r (n.w) - H (n.r)(r.w)/r^2]
    row = (
        2.0 * (a * a * ir1 * ir1)[:, :, None] * r
        + 2.0 * (H * lg)[:, :, None] * np.broadcast_to(g["n"], r.shape)
        - 2.0 * (H * a * ir1)[:, :, None] * r
    )
    return np.matmul(row[:, :, None, :], g["Ps"])[:, :, 0, :]


def _kk1_core(g):
    a, H = g["a"], g["H"]
    ir1 = g["inv_r2"]
    ir2 = ir1 * ir1
    a_ir1 = a * ir1
    out = (
        (-16.0 * (a * a * ir1 * ir2) + 8.0 * (H * a * ir2))[:, :, None] * g["Pr"]
        + 8.0 * (a * ir2)[:, :, None] * g["Sr"]
        - a_ir1[:, :, None] * g["PDn"]
        - 2.0 * ir1[:, :, None] * g["S2r"]
        - a_ir1[:, :, None] * g["Pg"]
    )
    return out / (2.0 * np.pi)


def _kk2_core(g):
    a, H, ir1 = g["a"], g["H"], g["inv_r2"]
    return (2.0 * a * a * ir1 * ir1 - 2.0 * H * a * ir1) / (2.0 * np.pi)


def _stokeslet_core(g):
    r, r2, lg, P = g["r"], g["r2"], g["lg"], g["P"]
    eye = np.eye(3)
    core = -lg[:, :, None, None] * eye + r[:, :, :, None] * r[:, :, None, :] / r2[
        :, :, None, None
    ]
    G = np.einsum("tij,tsjk->tsik", P, core)
    P_G = r * g["inv_r2"][:, :, None]
    K = np.einsum("tij,tsj->tsi", P, r) * (g["inv_r2"] / (2.0 * np.pi))[:, :, None]
    return G, P_G, K


def eval_kg1_matrix(target, source):
    """K_G1 as (nt, ns, 3, 3) matrices, source projection included."""
    return _kg1_core(_ingredients(target, source))


def eval_kg2_row(target, source):
    """k_G2 composed with the source projection, (nt, ns, 3) row vectors."""
    return _kg2_core(_ingredients(target, source))


def eval_kk1_vector(target, source):
    """k_K1 as (nt, ns, 3) vectors (already divided by 2 pi)."""
    return _kk1_core(_ingredients(target, source))


def eval_kk2_scalar(target, source):
    """k_K2 as (nt, ns) scalars; constant -1/(4 pi) on the unit sphere."""
    return _kk2_core(_ingredients(target, source))


def eval_stokeslet_batch(target, source):
    """(G, P_G, K): the ansatz kernels, batched over targets x sources."""
    return _stokeslet_core(_ingredients(target, source))


def eval_stokeslet(target, source):
    """Single-pair ansatz kernels: G (3x3), P_G (1x3), K (3x1)."""
    G, P_G, K = eval_stokeslet_batch(target, source)
    return G[0, 0], P_G[0, 0][None, :], K[0, 0][:, None]


def eval_KG1(target, source):
    return eval_kg1_matrix(target, source)[0, 0]


def eval_KG2(target, source):
    return eval_kg2_row(target, source)[0, 0][None, :]


def eval_KK1(target, source):
    return eval_kk1_vector(target, source)[0, 0][:, None]


def eval_KK2(target, source):
    return float(eval_kk2_scalar(target, source)[0, 0])


def eval_KT_batch(target, source, area, lam=0.0, mu_momentum_factor=-0.5):
    """The 4x4 system kernel over target x source batches, (nt, ns, 4, 4).

    Row/column blocks: sigma (3) then mu (1).  The momentum rows are divided
    by 2 pi so the assembled operator is identity + compact; the mu-mu entry
    carries the mean-zero augmentation 1/area.  lam adds the zeroth-order
    regularization lam * u to the momentum equation through the ansatz
    kernels G and K.

    The momentum-row mu column enters with weight -1/2: applying the
    momentum operator to the pressure-compensating velocity term produces
    half the k_K1 remainder with opposite sign, a fact pinned down
    numerically against spectral reference operators on a refined sphere.
    """
    if area <= 0.0:
        raise ValueError("area must be positive")
    return _KT_core(_ingredients(target, source), area, lam, mu_momentum_factor)


def _KT_core(g, area, lam, mu_momentum_factor, stokeslets=None):
    kg1 = _kg1_core(g)
    kk1 = _kk1_core(g)
    kg2 = _kg2_core(g)
    kk2 = _kk2_core(g)
    if lam != 0.0:
        G, _, K = _stokeslet_core(g) if stokeslets is None else stokeslets
        kg1 = kg1 + lam * G
        kk1 = mu_momentum_factor * kk1 + lam * K
    elif mu_momentum_factor != 1.0:
        kk1 = mu_momentum_factor * kk1
    nt, ns = kg1.shape[:2]
    out = np.empty((nt, ns, 4, 4))
    out[:, :, :3, :3] = kg1 / (2.0 * np.pi)
    out[:, :, :3, 3] = kk1 / (2.0 * np.pi)
    out[:, :, 3, :3] = kg2
    out[:, :, 3, 3] = kk2 + 1.0 / area
    return out


def eval_KT(target, source, area, lam=0.0, mu_momentum_factor=-0.5):
    """Single-pair 4x4 system kernel block."""
    return eval_KT_batch(target, source, area, lam, mu_momentum_factor)[0, 0]


def eval_velocity_kernel(target, source):
    """Representation kernel [G | K] for velocity, (nt, ns, 3, 4)."""
    G, _, K = eval_stokeslet_batch(target, source)
    out = np.empty(G.shape[:2] + (3, 4))
    out[:, :, :, :3] = G
    out[:, :, :, 3] = K
    return out


def eval_pressure_kernel(target, source):
    """Representation kernel [P_G | 0] for pressure, (nt, ns, 1, 4).

    The local mu(x) term of the pressure ansatz is added by the caller when
    the target is a surface node; it is not part of the integral kernel.
    """
    _, P_G, _ = eval_stokeslet_batch(target, source)
    out = np.zeros(P_G.shape[:2] + (1, 4))
    out[:, :, 0, :3] = P_G
    return out


def eval_system_velocity_pressure(target, source, area, lam=0.0,
                                  mu_momentum_factor=-0.5):
    """System, velocity and pressure kernel rows in one pass, (nt, ns, 8, 4).

    Row layout: system 4x4, then [G | K] 3x4, then [P_G | 0] 1x4.  Sharing
    the pairwise geometry across the three kernels roughly halves the cost
    of evaluating them separately during assembly.
    """
    if area <= 0.0:
        raise ValueError("area must be positive")
    g = _ingredients(target, source)
    G, P_G, K = _stokeslet_core(g)
    kt = _KT_core(g, area, lam, mu_momentum_factor, stokeslets=(G, P_G, K))
    nt, ns = kt.shape[:2]
    out = np.zeros((nt, ns, 8, 4))
    out[:, :, :4, :] = kt
    out[:, :, 4:7, :3] = G
    out[:, :, 4:7, 3] = K
    out[:, :, 7, :3] = P_G
    return out


def eval_representation(density_sources, target):
    """Far-field velocity and pressure from weighted point densities.

    density_sources: list of (SurfaceSample, weight, sigma, mu) tuples.
    Returns (u, p) where p excludes the local mu term (added by the caller
    for on-surface targets).
    """
    u = np.zeros(3)
    p = 0.0
    for sample, w, sigma, mu in density_sources:
        G, P_G, K = eval_stokeslet(target, sample)
        u += w * (G @ sigma + K[:, 0] * mu)
        p += w * float(P_G[0] @ sigma)
    return u, p
