"""Experiment drivers behind the command line interface.

Each driver takes a configuration dictionary and an output directory,
writes one CSV with its measurements, and renders a matplotlib figure
next to it.  Runs are deterministic for a fixed seed.
"""

import csv
import time
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import basis, compression, geometry, quadrature, solver


# ---------------------------------------------------------------------------
# Configuration.


def _coerce(text):
    text = text.strip()
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def load_config(path=None, overrides=()):
    """key = value lines from a file, then --set overrides on top."""
    cfg = {}
    if path:
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {line!r}")
            key, val = line.split("=", 1)
            cfg[key.strip()] = _coerce(val)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"bad override: {item!r}")
        key, val = item.split("=", 1)
        cfg[key.strip()] = _coerce(val)
    return cfg


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# Shared machinery.


def manufactured_rhs(surface, u, p, lam=0.0):
    """Right-hand side vector for a prescribed tangential velocity and
    pressure, computed through the spectral surface operators.

    Returns (rhs, f, g): the stacked collocation right-hand side (momentum
    rows carry Pf / 2pi), the momentum forcing, and the divergence data.
    """
    f = basis.stokes_momentum(surface, u) + basis.surface_gradient(surface, p)
    if lam:
        f = f + lam * u
    g = basis.surface_divergence(surface, u)
    gnorm = np.sqrt(geometry.surface_integral(surface, g * g))
    mean = abs(geometry.surface_integral(surface, g))
    if mean > 1e-6 * max(gnorm, 1e-30):
        raise ValueError(f"divergence data is not mean-zero: {mean:.3e}")
    N = surface.n_nodes
    rhs = np.zeros(4 * N)
    rhs.reshape(N, 4)[:, :3] = f / (2.0 * np.pi)
    rhs[3::4] = g
    return rhs, f, g


def apply_potential(surface, rho, cfg, pair_classes=None, oracle=None):
    """On-surface velocity and pressure of the layer representation,
    evaluated block by block through the same quadrature rules.

    Passing the solver's stacked entry oracle reuses the near and self
    quadrature passes already paid for during factorization.
    """
    if pair_classes is None:
        pair_classes = (
            oracle.pcls if oracle is not None
            else quadrature.classify_pairs(surface, cfg.alpha)
        )
    N = surface.n_nodes
    M = surface.nodes_per_patch
    u = np.zeros(3 * N)
    p = np.zeros(N)
    vk = quadrature.VelocityKernel()
    pk = quadrature.PressureKernel()

    def vel_pre(k, i, cls):
        if oracle is not None and cls != quadrature.PairClass.FAR.value:
            return oracle.velocity_block(k, i), oracle.pressure_block(k, i)
        if cls == quadrature.PairClass.FAR.value:
            return (quadrature.far_block(surface, k, i, vk),
                    quadrature.far_block(surface, k, i, pk))
        if cls == quadrature.PairClass.NEAR.value:
            return (quadrature.near_block(surface, k, i, cfg, vk),
                    quadrature.near_block(surface, k, i, cfg, pk))
        return (quadrature.self_block(surface, k, cfg, vk),
                quadrature.self_block(surface, k, cfg, pk))

    npat = len(surface.patches)
    for k in range(npat):
        rs3 = slice(3 * k * M, 3 * (k + 1) * M)
        rs1 = slice(k * M, (k + 1) * M)
        for i in range(npat):
            seg = rho[4 * i * M : 4 * (i + 1) * M]
            V, P = vel_pre(k, i, pair_classes[k, i])
            u[rs3] += V @ seg
            p[rs1] += P @ seg
    return u.reshape(N, 3), p + rho[3::4]


def rel_l2(surface, err_field, ref_field):
    num = geometry.surface_integral(surface, np.sum(err_field**2, axis=-1).ravel()
                                    if err_field.ndim > 1 else err_field**2)
    den = geometry.surface_integral(surface, np.sum(ref_field**2, axis=-1).ravel()
                                    if ref_field.ndim > 1 else ref_field**2)
    return float(np.sqrt(num / den))


def _solve_manufactured(surface, u_exact, p_exact, lam, eps, eps_id):
    """Factor, solve, and evaluate one manufactured-solution problem."""
    cfg = quadrature.QuadConfig(eps=eps)
    rhs, _, _ = manufactured_rhs(surface, u_exact, p_exact, lam)
    scfg = solver.SolverConfig(lam=lam)
    scfg.proxy.eps_id = eps_id
    scfg.proxy.R = 10.0 * float(surface.diameters.max())
    oracle = solver._EntryOracle(surface, cfg, lam, stacked=True)
    t0 = time.perf_counter()
    fac = solver.build_factorization(surface, cfg, scfg, oracle=oracle)
    t_build = time.perf_counter() - t0
    t0 = time.perf_counter()
    rho = fac.solve(rhs)
    t_solve = time.perf_counter() - t0
    rho, _ = solver.project_tangential(surface, rho)
    u, p = apply_potential(surface, rho, cfg, oracle=oracle)
    return u, p, t_build, t_solve


# ---------------------------------------------------------------------------
# Experiments.


def _torus_fields(g):
    """A smooth manufactured pair on any surface: tangential projection of
    a fixed ambient field, and a polynomial pressure."""
    x, y, z = g.pos.T
    w = np.stack([np.sin(y), z * z, np.cos(x)], axis=1)
    u = np.einsum("kij,kj->ki", g.proj, w)
    p = x * z
    return u, p


def run_convergence(cfg, outdir):
    """Velocity error under refinement of the slanted torus."""
    q = int(cfg.get("q", 8))
    eps = float(cfg.get("eps", 1e-7))
    eps_id = float(cfg.get("eps_id", 1e-8))
    lam = float(cfg.get("lam", 0.0))
    grids = str(cfg.get("grids", "4x2,8x2,8x4"))
    rows = []
    for token in grids.split(","):
        n_u, n_v = (int(t) for t in token.split("x"))
        s = geometry.build_surface("slanted_torus", q=q, n_u=n_u, n_v=n_v)
        u_exact, p_exact = _torus_fields(s.geom)
        u, p, t_build, t_solve = _solve_manufactured(
            s, u_exact, p_exact, lam, eps, eps_id
        )
        err = rel_l2(s, u - u_exact, u_exact)
        rows.append([s.n_nodes, err, t_build, t_solve])
    _write_csv(
        Path(outdir) / "convergence.csv",
        ["n_nodes", "rel_l2_velocity_err", "build_seconds", "solve_seconds"],
        rows,
    )
    ns = [r[0] for r in rows]
    es = [r[1] for r in rows]
    fig, ax = plt.subplots()
    ax.loglog(ns, es, "o-")
    ax.set_xlabel("nodes")
    ax.set_ylabel("relative L2 velocity error")
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(Path(outdir) / "convergence.png", dpi=150)
    plt.close(fig)
    return rows


def run_ellipsoid(cfg, outdir):
    """Manufactured solution on the 1.5:1:1 ellipsoid with lambda = 1."""
    q = int(cfg.get("q", 8))
    refine = int(cfg.get("refine", 3))
    eps = float(cfg.get("eps", 1e-6))
    eps_id = float(cfg.get("eps_id", 1e-8))
    s = geometry.build_surface("ellipsoid", q=q, refine=refine, axes=(1.5, 1.0, 1.0))
    g = s.geom
    x, y, z = g.pos.T
    w = np.stack([z, x, y], axis=1)
    u_exact = np.einsum("kij,kj->ki", g.proj, w)
    p_exact = z
    u, p, t_build, t_solve = _solve_manufactured(s, u_exact, p_exact, 1.0, eps, eps_id)
    err_u = rel_l2(s, u - u_exact, u_exact)
    # pressure is determined up to a constant
    shift = geometry.surface_integral(s, p - p_exact) / s.area
    err_p = rel_l2(s, p - p_exact - shift, p_exact)
    rows = [[s.n_nodes, err_u, err_p, t_build, t_solve]]
    _write_csv(
        Path(outdir) / "ellipsoid.csv",
        ["n_nodes", "rel_l2_velocity_err", "rel_l2_pressure_err",
         "build_seconds", "solve_seconds"],
        rows,
    )
    fig = plt.figure(figsize=(7, 5))
    ax = fig.add_subplot(projection="3d")
    mag = np.linalg.norm(u - u_exact, axis=1)
    sc = ax.scatter(x, y, z, c=mag, s=6, cmap="viridis")
    fig.colorbar(sc, label="|velocity error|")
    fig.savefig(Path(outdir) / "ellipsoid.png", dpi=150)
    plt.close(fig)
    return rows


def run_compress_sweep(cfg, outdir):
    """Proxy-shell accuracy over shell count and rule order, for the log
    kernel and for the full system kernel between seeded point clouds."""
    seed = int(cfg.get("seed", 12))
    n_src = int(cfg.get("n_src", 1000))
    n_tgt = int(cfg.get("n_tgt", 1000))
    R = float(cfg.get("R", 1000.0))
    eps_id = float(cfg.get("eps_id", 1e-10))
    shells = [int(t) for t in str(cfg.get("shells", "2,4,8")).split(",")]
    orders = [int(t) for t in str(cfg.get("orders", "4,8,12,16")).split(",")]

    rng = np.random.default_rng(seed)
    src = rng.normal(size=(n_src, 3))
    src /= np.linalg.norm(src, axis=1)[:, None]
    src *= rng.uniform(0.0, 1.0, n_src)[:, None] ** (1 / 3)
    tgt = rng.normal(size=(n_tgt, 3))
    tgt /= np.linalg.norm(tgt, axis=1)[:, None]
    # targets uniform in the volume of the shell B_R \ B_2
    tgt *= (rng.uniform(2.0**3 / R**3, 1.0, n_tgt)[:, None] ** (1 / 3)) * R
    center = np.zeros(3)

    from . import geometry, kernels

    # the surface quantities entering the remainder kernel are irrelevant to
    # the rank structure; set them to one shared draw of uniform [-1, 1]
    # noise (per-point noise on the source side is not a surface and would
    # defeat any interpolation scheme)
    def noisy_geometry(pos):
        n = pos.shape[0]
        u = lambda *shape: np.broadcast_to(
            rng.uniform(-1.0, 1.0, shape), (n,) + shape
        ).copy()
        return geometry.GeometryBatch(
            pos=pos, ru=u(3), rv=u(3), normal=u(3), proj=u(3, 3),
            detg=np.ones(n), shape_op=u(3, 3), mean_curv=u(),
            lap_normal=u(3), lap_minus_nn=u(3), pgrad_div_pfn=u(3),
        )

    sources = noisy_geometry(src)
    targets = noisy_geometry(tgt)
    A_log = compression.log_proxy_rows(tgt, src, center)
    A_kt = kernels.eval_KT_batch(targets, sources, 4 * np.pi)
    A_kt = A_kt.transpose(0, 2, 1, 3).reshape(4 * n_tgt, 4 * n_src)

    rows = []
    for P in shells:
        for L in orders:
            pc = compression.ProxyConfig(
                c=1.0, shells=P, order=L, R=R, eps_id=eps_id
            )
            proxies = compression.proxy_points(center, 1.0, pc)
            # the skeleton comes from the log kernel alone; the same index
            # set then serves the full system kernel (tensored with I4)
            D = np.vstack([
                compression.log_proxy_rows(proxies, src, center),
                np.ones((1, n_src)),
            ])
            skel, X, _ = compression.interp_id(D, eps_id)
            e_log = np.abs(A_log - A_log[:, skel] @ X).max()
            X4 = compression.expand4(X)
            skel4 = (4 * skel[:, None] + np.arange(4)[None]).ravel()
            e_kt = np.abs(A_kt - A_kt[:, skel4] @ X4).max() / np.abs(A_kt).max()
            rows.append([P, L, len(skel), e_log, e_kt])
    _write_csv(
        Path(outdir) / "compress_sweep.csv",
        ["shells", "order", "skeleton", "err_log", "err_system_rel"],
        rows,
    )
    fig, ax = plt.subplots()
    for P in shells:
        sub = [(r[1], max(r[3], 1e-17)) for r in rows if r[0] == P]
        ax.semilogy([t[0] for t in sub], [t[1] for t in sub], "o-", label=f"{P} shells")
    ax.set_xlabel("spherical rule order")
    ax.set_ylabel("max log-kernel error")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(Path(outdir) / "compress_sweep.png", dpi=150)
    plt.close(fig)
    return rows


def run_sourcesink(cfg, outdir):
    """Flow on the star torus driven by a localized source/sink pair."""
    q = int(cfg.get("q", 8))
    n_u = int(cfg.get("n_u", 8))
    n_v = int(cfg.get("n_v", 4))
    eps = float(cfg.get("eps", 1e-6))
    eps_id = float(cfg.get("eps_id", 1e-8))
    s = geometry.build_surface("star_torus", q=q, n_u=n_u, n_v=n_v)
    g = s.geom
    x0 = np.array([-1.6, 1.0, 0.2])
    x1 = np.array([1.5, 0.0, 0.4])

    def bump(center):
        d2 = np.sum((g.pos - center[None]) ** 2, axis=1)
        return np.exp(-3.0 * d2)

    plus, minus = bump(x0), bump(x1)
    # balance the sink against the source and normalize the source peak
    minus *= geometry.surface_integral(s, plus) / geometry.surface_integral(s, minus)
    gdata = plus - minus
    gdata = gdata / plus.max()

    N = s.n_nodes
    rhs = np.zeros(4 * N)
    rhs[3::4] = gdata - geometry.surface_integral(s, gdata) / s.area
    qcfg = quadrature.QuadConfig(eps=eps)
    scfg = solver.SolverConfig()
    scfg.proxy.eps_id = eps_id
    scfg.proxy.R = 10.0 * float(s.diameters.max())
    oracle = solver._EntryOracle(s, qcfg, 0.0, stacked=True)
    fac = solver.build_factorization(s, qcfg, scfg, oracle=oracle)
    rho = fac.solve(rhs)
    rho, _ = solver.project_tangential(s, rho)
    u, p = apply_potential(s, rho, qcfg, oracle=oracle)

    rows = [
        [*g.pos[k], *u[k], p[k]]
        for k in range(N)
    ]
    _write_csv(
        Path(outdir) / "sourcesink.csv",
        ["x", "y", "z", "u1", "u2", "u3", "p"],
        rows,
    )
    fig = plt.figure(figsize=(8, 6))
    ax = fig.add_subplot(projection="3d")
    speed = np.linalg.norm(u, axis=1)
    sc = ax.scatter(g.pos[:, 0], g.pos[:, 1], g.pos[:, 2], c=speed, s=6, cmap="magma")
    step = max(1, N // 400)
    ax.quiver(
        g.pos[::step, 0], g.pos[::step, 1], g.pos[::step, 2],
        u[::step, 0], u[::step, 1], u[::step, 2],
        length=0.3, normalize=True, color="steelblue", linewidth=0.5,
    )
    fig.colorbar(sc, label="|u|")
    fig.savefig(Path(outdir) / "sourcesink.png", dpi=150)
    plt.close(fig)
    return u, p


EXPERIMENTS = {
    "convergence": run_convergence,
    "ellipsoid": run_ellipsoid,
    "compress": run_compress_sweep,
    "sourcesink": run_sourcesink,
}
