"""Spherical harmonics and log-kernel multipole machinery.

Everything here supports the proxy compression: evaluating orthonormal
spherical harmonics, the Chebyshev-to-Legendre connection coefficients
that appear in the two-dimensional multipole expansion of the log kernel,
the resulting separated expansion of a field of log charges, and sparse
shift tables for multiplying by coordinates or differentiating in the
harmonic basis.
"""

import numpy as np
from dataclasses import dataclass, field
from scipy.special import gammaln, sph_harm_y


def eval_ylm(L, theta, phi):
    """All orthonormal Y_l^m for l <= L at the given angles.

    Returns a complex array of shape (L+1, 2L+1) + shape(theta), indexed
    [l, m] with negative m wrapping around pythonically, so Y[l, -2] is
    the m = -2 harmonic.  Entries with |m| > l are zero.
    """
    if L > 200:
        raise ValueError("harmonic degree capped at 200")
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    out = np.zeros((L + 1, 2 * L + 1) + theta.shape, dtype=complex)
    ls = np.arange(L + 1)
    for m in range(-L, L + 1):
        lv = ls[ls >= abs(m)]
        vals = sph_harm_y(
            lv.reshape(lv.shape + (1,) * theta.ndim), m, theta[None], phi[None]
        )
        out[lv, m] = vals
    return out


def _ylm_single(l, m, theta, phi):
    return sph_harm_y(l, m, np.asarray(theta, float), np.asarray(phi, float))


def _lam(z):
    """Lambda(z) = Gamma(z + 1/2) / Gamma(z + 1), via log-Gamma."""
    z = np.asarray(z, dtype=float)
    return np.exp(gammaln(z + 0.5) - gammaln(z + 1.0))


def cheb_to_legendre(n):
    """Coefficients L_{nl} with T_n(x) = sum_l L_{nl} P_l(x), length n+1.

    Only entries with n + l even are nonzero; the diagonal is
    sqrt(pi)/(2 Lambda(n)) and the interior entries combine two Lambda
    factors.  Log-Gamma keeps everything finite up to n = 200.
    """
    if n > 200:
        raise ValueError("connection coefficients capped at n = 200")
    out = np.zeros(n + 1)
    if n == 0:
        out[0] = 1.0
        return out
    out[n] = np.sqrt(np.pi) / (2.0 * _lam(n))
    for l in range(n - 2, -1, -2):
        out[l] = (
            -n * (l + 0.5) / ((n + l + 1.0) * (n - l))
            * _lam((n - l - 2) / 2.0) * _lam((n + l - 1) / 2.0)
        )
    return out


def lnl_bound_check(N):
    """sup over n <= N of max_l |L_{nl}| / sqrt(n+1)."""
    if N > 200:
        raise ValueError("connection coefficients capped at n = 200")
    best = 0.0
    for n in range(N + 1):
        best = max(best, np.abs(cheb_to_legendre(n)).max() / np.sqrt(n + 1.0))
    return best


# ---------------------------------------------------------------------------
# Log-kernel multipole expansion.


@dataclass
class MultipoleCoeffs:
    """Truncated separated expansion of a sum of log charges."""

    L: int
    alpha: np.ndarray  # complex, (L+1, L+1, 2L+1): [n, l, m]
    monopole: float
    center: np.ndarray
    rho: float
    sep: float = 0.0  # evaluation excluded inside (1+sep)*rho


def log_expand(sources, charges, center, L, rho=None, sep=0.0):
    """Expand sum_k charges_k log|x - sources_k| about center.

    Sources must lie within radius rho of the center (rho defaults to the
    tightest such radius).  Coefficients follow the separated form
    alpha_{n,l,m} = sqrt(4pi/(2l+1)) L_{nl} sum_k (r_k/rho)^n Q_m^l(y_k)
    with Q_m^l the conjugated, renormalized harmonic of the source
    direction.
    """
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    charges = np.asarray(charges, dtype=float)
    center = np.asarray(center, dtype=float)
    y = sources - center
    r = np.linalg.norm(y, axis=1)
    if rho is None:
        rho = max(r.max(), 1e-300)
    elif np.any(r > rho * (1.0 + 1e-12)):
        raise ValueError("sources outside the stated expansion radius")
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.arccos(np.clip(np.where(r > 0, y[:, 2] / np.where(r > 0, r, 1.0), 1.0), -1, 1))
    phi = np.arctan2(y[:, 1], y[:, 0])
    Y = eval_ylm(L, theta, phi)  # (L+1, 2L+1, nsrc)
    ls = np.arange(L + 1)
    qnorm = np.sqrt(4.0 * np.pi / (2.0 * ls + 1.0))
    # Q_m^l(y_k) charge-weighted moments at each radial power n
    rad = (r[None, :] / rho) ** np.arange(1, L + 1)[:, None]  # (L, nsrc)
    alpha = np.zeros((L + 1, L + 1, 2 * L + 1), dtype=complex)
    Lnl = np.zeros((L + 1, L + 1))
    for n in range(1, L + 1):
        Lnl[n, : n + 1] = cheb_to_legendre(n)[: min(n, L) + 1][: n + 1]
    conjY = np.conj(Y)
    for l in range(L + 1):
        mom = np.einsum("ms,s,ns->nm", conjY[l], charges, rad)  # (L, 2L+1)
        for n in range(max(l, 1), L + 1):
            alpha[n, l] = (qnorm[l] ** 2) * Lnl[n, l] * mom[n - 1]
    return MultipoleCoeffs(
        L=L,
        alpha=alpha,
        monopole=float(charges.sum()),
        center=center.copy(),
        rho=float(rho),
        sep=float(sep),
    )


def log_eval(coeffs, target):
    """Evaluate the truncated expansion at one target point."""
    d = np.asarray(target, dtype=float) - coeffs.center
    R = np.linalg.norm(d)
    if R <= (1.0 + coeffs.sep) * coeffs.rho:
        raise ValueError("target inside the expansion's exclusion radius")
    theta = np.arccos(np.clip(d[2] / R, -1.0, 1.0))
    phi = np.arctan2(d[1], d[0])
    L = coeffs.L
    Y = eval_ylm(L, theta, phi)  # (L+1, 2L+1)
    ns = np.arange(1, L + 1)
    radial = (coeffs.rho / R) ** ns / ns  # (L,)
    total = coeffs.monopole * np.log(R)
    acc = np.tensordot(radial, coeffs.alpha[1:], axes=(0, 0))  # (L+1, 2L+1)
    total -= np.real(np.sum(acc * Y))
    return float(total)


# ---------------------------------------------------------------------------
# Shift tables in the harmonic basis.


def ylm_shift_tables(L):
    """Sparse maps for coordinate multiplication and differentiation.

    Returns a dict with keys "xpy", "xmy", "z" (multiplication by x+iy,
    x-iy, z; coefficients carry one positive power of rho) and "dp", "dm",
    "dz" (the operators d_x + i d_y, d_x - i d_y, d_z; coefficients carry
    one negative power of rho).  Each map sends (l, m) to a list of
    ((l', m'), coefficient) pairs; targets with l' < |m'| are omitted.
    """
    if L < 1:
        raise ValueError("need L >= 1")
    tables = {k: {} for k in ("xpy", "xmy", "z", "dp", "dm", "dz")}

    def put(table, l, m, lp, mp, coef):
        if lp < abs(mp) or lp < 0 or coef == 0.0:
            return
        tables[table].setdefault((l, m), []).append(((lp, mp), coef))

    for l in range(L + 1):
        for m in range(-l, l + 1):
            for s, mul_key, der_key in ((1, "xpy", "dp"), (-1, "xmy", "dm")):
                up = -s * np.sqrt(((l + s * m + 1.5) ** 2 - 0.25) / (4.0 * (l + 1) ** 2 - 1.0))
                down = s * np.sqrt(max(((l - s * m - 0.5) ** 2 - 0.25), 0.0) / (4.0 * l * l - 1.0)) if l > 0 else 0.0
                put(mul_key, l, m, l + 1, m + s, up)
                put(mul_key, l, m, l - 1, m + s, down)
                d_down = s * (l + 1) * np.sqrt(max((l - s * m) * (l - s * m - 1.0), 0.0) / (4.0 * l * l - 1.0)) if l > 0 else 0.0
                d_up = s * l * np.sqrt((l + s * m + 1.0) * (l + s * m + 2.0) / (4.0 * (l + 1) ** 2 - 1.0))
                put(der_key, l, m, l - 1, m + s, d_down)
                put(der_key, l, m, l + 1, m + s, d_up)
            z_up = np.sqrt(((l + 1.0) ** 2 - m * m) / (4.0 * (l + 1) ** 2 - 1.0))
            z_down = np.sqrt(max(l * l - m * m, 0.0) / (4.0 * l * l - 1.0)) if l > 0 else 0.0
            put("z", l, m, l + 1, m, z_up)
            put("z", l, m, l - 1, m, z_down)
            dz_down = (l + 1) * np.sqrt(max(l * l - m * m, 0.0) / (4.0 * l * l - 1.0)) if l > 0 else 0.0
            dz_up = -l * np.sqrt(((l + 1.0) ** 2 - m * m) / (4.0 * (l + 1) ** 2 - 1.0))
            put("dz", l, m, l - 1, m, dz_down)
            put("dz", l, m, l + 1, m, dz_up)
    return tables


def apply_shift(table, coeffs_lm, l, m):
    """Convenience: list of ((l', m'), c * coef) for one source harmonic."""
    return [(tgt, coeffs_lm * c) for tgt, c in table.get((l, m), [])]
