"""Least-squares monopole solves on an annulus with the radial-profile
ansatz A = A0 + sum_a f_a(r) Theta_a, sigma = u(r) Sigma0.

The residual at a sample point is an affine-quadratic function of the
profiles and their radial derivatives, so the geometric blocks are
assembled once per solve and the Levenberg-Marquardt normal equations use
exact Jacobians with the banded radial differentiation matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forms import (
    DIM,
    FormError,
    MetricTensor,
    hodge_operator,
    index_sets,
)
from .forms import _wedge_table  # structure constants, shared with wedge
from .fields import (
    DecayTable,
    G2Field,
    OneFormTemplate,
    RadialProfilePair,
    ZeroFormTemplate,
)
from .model_connection import CHART_MINUS, CHART_PLUS, ConeConnection, sphere_samples

__all__ = [
    "SolverConfig",
    "SolveReport",
    "NonConvergenceError",
    "solve_monopole",
    "fit_decay_rate",
    "log_mesh",
]


class NonConvergenceError(RuntimeError):
    """Raised by callers that require the tolerance; carries the report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SolverConfig:
    theta: float = 0.5
    p: float = -2.2  # weight exponent, must lie in (-5/2, theta - 5/2)
    delta0: float = 0.05
    lam: float = 16.0
    gauge_penalty: float = 0.0
    tol: float = 1e-10
    max_iter: int = 200
    r_in: float = 1.0 / 64.0
    r_out: float = 0.25
    n_mesh: int = 128
    n_sphere: int = 12
    seed: int = 0
    r0: float = 1.0
    C: float = 1.0
    pin_u_outer: bool = False

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise FormError("theta must lie in (0, 1)")
        if not -2.5 < self.p < self.theta - 2.5:
            raise FormError(
                f"p = {self.p} outside (-5/2, theta - 5/2) = "
                f"(-2.5, {self.theta - 2.5})"
            )
        if self.delta0 <= 0 or self.lam <= 0:
            raise FormError("delta0 and lambda must be positive")
        if not 1.0 / (4.0 * self.lam) < self.r0 / 2.0:
            raise FormError("lambda too small: need 1/(4 lambda) < R0/2")
        if not 0 < self.r_in < self.r_out:
            raise FormError("need 0 < r_in < r_out")
        if self.gauge_penalty < 0:
            raise FormError("gauge penalty must be nonnegative")

    def mesh(self) -> np.ndarray:
        return np.geomspace(self.r_in, self.r_out, self.n_mesh)

    def weights(self, mesh: np.ndarray) -> np.ndarray:
        return mesh ** (-2.0 * self.p - 7.0)


@dataclass
class SolveReport:
    iterations: int
    initial_residual: float
    final_residual: float
    history: list[float]
    boundary_mismatch: float
    decay_exponent: float
    converged: bool
    message: str = ""

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "initial_residual": self.initial_residual,
            "final_residual": self.final_residual,
            "history": self.history,
            "boundary_mismatch": self.boundary_mismatch,
            "decay_exponent": self.decay_exponent,
            "converged": self.converged,
            "message": self.message,
        }


def log_mesh(r_in: float, r_out: float, n: int) -> np.ndarray:
    return np.geomspace(r_in, r_out, n)


def diff_matrix(mesh: np.ndarray) -> np.ndarray:
    """Second-order differentiation matrix on a non-uniform mesh."""
    n = len(mesh)
    D = np.zeros((n, n))
    for i in range(n):
        if i == 0:
            h1 = mesh[1] - mesh[0]
            h2 = mesh[2] - mesh[1]
            D[0, 0] = -(2 * h1 + h2) / (h1 * (h1 + h2))
            D[0, 1] = (h1 + h2) / (h1 * h2)
            D[0, 2] = -h1 / (h2 * (h1 + h2))
        elif i == n - 1:
            h1 = mesh[-2] - mesh[-3]
            h2 = mesh[-1] - mesh[-2]
            D[-1, -3] = h2 / (h1 * (h1 + h2))
            D[-1, -2] = -(h1 + h2) / (h1 * h2)
            D[-1, -1] = (h1 + 2 * h2) / (h2 * (h1 + h2))
        else:
            h1 = mesh[i] - mesh[i - 1]
            h2 = mesh[i + 1] - mesh[i]
            D[i, i - 1] = -h2 / (h1 * (h1 + h2))
            D[i, i] = (h2 - h1) / (h1 * h2)
            D[i, i + 1] = h1 / (h2 * (h1 + h2))
    return D


def _wedge_tensor_24() -> np.ndarray:
    """Dense structure constants W[ia, ib, j] of Lambda^2 x Lambda^4 ->
    Lambda^6."""
    ia, ib, j, s = _wedge_table(2, 4)
    W = np.zeros((21, 35, 7))
    W[ia, ib, j] = s
    return W


_W24 = None


@dataclass
class Assembly:
    """Precomputed geometric blocks at the (radius, direction) samples.

    With profiles f_a and u evaluated at mesh[i], the residual at sample
    (i, s) is
      R = T0 + sum_a (f_a' T1[a] + f_a T2[a])
            + sum_{a,b} f_a f_b T3[a][b]
            + u' T4 + u T5 + sum_a f_a u T6[a],
    every block of shape (n, ns, 7, m, m); the gauge penalty residual is
    Rg = sum_a (f_a' G1[a] + f_a G2[a]).
    """

    mesh: np.ndarray
    dirs: np.ndarray
    m: int
    n_ang: int
    T0: np.ndarray
    T1: list[np.ndarray]
    T2: list[np.ndarray]
    T3: list[list[np.ndarray]]
    T4: np.ndarray
    T5: np.ndarray
    T6: list[np.ndarray]
    G1: list[np.ndarray]
    G2: list[np.ndarray]
    D: np.ndarray
    weights: np.ndarray


def build_assembly(
    G: G2Field,
    a0: ConeConnection,
    mesh: np.ndarray,
    dirs: np.ndarray,
    thetas: list[OneFormTemplate],
    sigma0: ZeroFormTemplate,
    weights: np.ndarray,
) -> Assembly:
    global _W24
    if _W24 is None:
        _W24 = _wedge_tensor_24()
    n, ns, m = len(mesh), len(dirs), a0.m
    n_ang = len(thetas)
    X = mesh[:, None, None] * dirs[None, :, :]  # (n, ns, 7)
    Xf = X.reshape(-1, DIM)
    N = Xf.shape[0]

    # chart-pinned batched evaluations, grouped by direction hemisphere
    A0 = np.empty((N, DIM, m, m))
    F0 = np.empty((N, 21, m, m))
    s7 = Xf[:, 6] / np.linalg.norm(Xf, axis=1)
    for chart in (CHART_PLUS, CHART_MINUS):
        mask = (s7 >= 0.0) if chart is CHART_PLUS else (s7 < 0.0)
        if not np.any(mask):
            continue
        A0[mask] = a0.coefficients(Xf[mask], chart=chart)
        F0[mask] = a0.curvature(Xf[mask], chart=chart)

    Th = [t.value(Xf) for t in thetas]  # each (N, 7, m, m)
    dTh = [t.derivative(Xf) for t in thetas]
    Sg = sigma0.value(Xf)  # (N, m, m)
    dSg = sigma0.derivative(Xf)
    rhat = Xf / np.linalg.norm(Xf, axis=1, keepdims=True)

    pairs = index_sets(2)

    def two_form_blocks(a):
        """d Theta_a + [A0 ^ Theta_a] and r-hat ^ Theta_a as 2-forms."""
        lin = np.empty((N, 21, m, m))
        rad = np.empty((N, 21, m, m))
        for k, (i, j) in enumerate(pairs):
            lin[:, k] = (
                dTh[a][:, i, j]
                - dTh[a][:, j, i]
                + A0[:, i] @ Th[a][:, j]
                - Th[a][:, j] @ A0[:, i]
                + Th[a][:, i] @ A0[:, j]
                - A0[:, j] @ Th[a][:, i]
            )
            rad[:, k] = (
                rhat[:, i, None, None] * Th[a][:, j]
                - rhat[:, j, None, None] * Th[a][:, i]
            )
        return lin, rad

    def quad_block(a, b):
        """The (i, j) -> Theta_a_i Theta_b_j - Theta_a_j Theta_b_i part of
        the curvature's quadratic term."""
        out = np.empty((N, 21, m, m))
        for k, (i, j) in enumerate(pairs):
            out[:, k] = Th[a][:, i] @ Th[b][:, j] - Th[a][:, j] @ Th[b][:, i]
        return out

    # Higgs 1-form blocks
    rsig = rhat[:, :, None, None] * Sg[:, None, :, :]
    covsig = dSg + np.einsum("nimp,npq->nimq", A0, Sg) - np.einsum(
        "nmp,nipq->nimq", Sg, A0
    )
    thsig = [
        np.einsum("nimp,npq->nimq", Th[a], Sg)
        - np.einsum("nmp,nipq->nimq", Sg, Th[a])
        for a in range(n_ang)
    ]

    # per-point structure: psi and the 1-form Hodge operator
    psi = np.empty((N, 35))
    H16 = np.empty((N, DIM, DIM))
    for k in range(N):
        st = G.at(Xf[k])
        psi[k] = st.psi.coeffs
        H16[k] = hodge_operator(st.g, 1)

    def wpsi(two_form):
        return np.einsum("abj,namp,nb->njmp", _W24, two_form, psi)

    def star1(one_form):
        return np.einsum("nji,nimp->njmp", H16, one_form)

    T1, T2 = [], []
    for a in range(n_ang):
        lin, rad = two_form_blocks(a)
        T1.append(wpsi(rad))
        T2.append(wpsi(lin))
    T3 = [[wpsi(quad_block(a, b)) for b in range(n_ang)] for a in range(n_ang)]
    T0 = wpsi(F0)
    T4 = star1(rsig)
    T5 = star1(covsig)
    T6 = [star1(thsig[a]) for a in range(n_ang)]

    # gauge blocks: the Coulomb-type penalty star d_{A0} star (f Theta)
    # with the Euclidean star (penalty convention)
    Heu1 = hodge_operator(MetricTensor(np.eye(DIM)), 1)  # (7, 7)
    ia16, ib16, _, s16 = _wedge_table(1, 6)
    G1, G2 = [], []
    for a in range(n_ang):
        star_th = np.einsum("ji,nimp->njmp", Heu1, Th[a])
        dstar_th = np.einsum("ji,nkimp->nkjmp", Heu1, dTh[a])
        dB = np.zeros((N, m, m))
        covB = np.zeros((N, m, m))
        rB = np.zeros((N, m, m))
        for i1, i6, s in zip(ia16, ib16, s16):
            dB += s * dstar_th[:, i1, i6]
            covB += s * (A0[:, i1] @ star_th[:, i6] - star_th[:, i6] @ A0[:, i1])
            rB += s * rhat[:, i1, None, None] * star_th[:, i6]
        G1.append(rB)
        G2.append(dB + covB)

    sh = (n, ns)

    def rs(x):
        return x.reshape(sh + x.shape[1:])

    return Assembly(
        mesh=mesh,
        dirs=dirs,
        m=m,
        n_ang=n_ang,
        T0=rs(T0),
        T1=[rs(t) for t in T1],
        T2=[rs(t) for t in T2],
        T3=[[rs(t) for t in row] for row in T3],
        T4=rs(T4),
        T5=rs(T5),
        T6=[rs(t) for t in T6],
        G1=[rs(g) for g in G1],
        G2=[rs(g) for g in G2],
        D=diff_matrix(mesh),
        weights=np.asarray(weights, dtype=float),
    )


def _bc(v):
    return v[:, None, None, None, None]


def residual_blocks(asm: Assembly, fs: list[np.ndarray], u: np.ndarray):
    up = asm.D @ u
    R = asm.T0 + _bc(up) * asm.T4 + _bc(u) * asm.T5
    Rg = 0.0
    for a, f in enumerate(fs):
        fp = asm.D @ f
        R = R + _bc(fp) * asm.T1[a] + _bc(f) * asm.T2[a] + _bc(f * u) * asm.T6[a]
        for b, fb in enumerate(fs):
            R = R + _bc(f * fb) * asm.T3[a][b]
        Rg = Rg + fp[:, None, None, None] * asm.G1[a] + f[:, None, None, None] * asm.G2[a]
    if isinstance(Rg, float):
        Rg = np.zeros(asm.T0.shape[:2] + (asm.m, asm.m))
    return R, Rg


def _objective(asm, R, Rg, gp):
    per_r = np.sum(R * R, axis=(1, 2, 3, 4)) + gp * np.sum(Rg * Rg, axis=(1, 2, 3))
    return float(np.sum(asm.weights * per_r))


def _normal_system(asm: Assembly, fs, u, R, Rg, gp):
    """Exact J^T J and J^T r for the weighted least squares in the stacked
    parameter vector (f_0, ..., u): each sample block depends on the local
    mesh value directly and on all of them through the banded
    differentiation matrix."""
    w = asm.weights
    n = len(asm.mesh)
    n_ang = asm.n_ang

    # direct (a) and derivative (b) sensitivity blocks per parameter family
    a_vecs, b_vecs, ag_vecs, bg_vecs = [], [], [], []
    for c in range(n_ang):
        ac = asm.T2[c] + _bc(u) * asm.T6[c]
        for b, fb in enumerate(fs):
            ac = ac + _bc(fb) * (asm.T3[c][b] + asm.T3[b][c])
        a_vecs.append(ac)
        b_vecs.append(asm.T1[c])
        ag_vecs.append(asm.G2[c])
        bg_vecs.append(asm.G1[c])
    au = asm.T5
    for a, f in enumerate(fs):
        au = au + _bc(f) * asm.T6[a]
    a_vecs.append(au)
    b_vecs.append(asm.T4)
    ag_vecs.append(None)
    bg_vecs.append(None)

    def dot(x, y):
        if x is None or y is None:
            return 0.0
        return np.sum(x * y, axis=tuple(range(1, x.ndim)))

    def ip(x, y, xg, yg):
        val = w * dot(x, y)
        if gp > 0.0:
            val = val + gp * w * dot(xg, yg)
        return val

    D = asm.D
    n_par = n_ang + 1
    H = np.zeros((n_par * n, n_par * n))
    g = np.zeros(n_par * n)
    for P in range(n_par):
        aP, bP = a_vecs[P], b_vecs[P]
        gP = ip(aP, R, ag_vecs[P], Rg) + D.T @ ip(bP, R, bg_vecs[P], Rg)
        g[P * n : (P + 1) * n] = gP
        for Q in range(P, n_par):
            aQ, bQ = a_vecs[Q], b_vecs[Q]
            blk = (
                np.diag(ip(aP, aQ, ag_vecs[P], ag_vecs[Q]))
                + np.diag(ip(aP, bQ, ag_vecs[P], bg_vecs[Q])) @ D
                + D.T @ np.diag(ip(bP, aQ, bg_vecs[P], ag_vecs[Q]))
                + D.T @ np.diag(ip(bP, bQ, bg_vecs[P], bg_vecs[Q])) @ D
            )
            H[P * n : (P + 1) * n, Q * n : (Q + 1) * n] = blk
            if Q > P:
                H[Q * n : (Q + 1) * n, P * n : (P + 1) * n] = blk.T
    return H, g


def solve_monopole(
    G: G2Field,
    a0: ConeConnection,
    cfg: SolverConfig,
    init: RadialProfilePair,
    target: tuple | None = None,
    phi_field=None,
):
    """Damped Gauss-Newton / Levenberg-Marquardt minimization of the
    weighted monopole residual plus an optional Coulomb-type gauge penalty.

    `target` prescribes a manufactured right-hand side: the residual blocks
    evaluated at the given profiles (one array per angular template, then
    u) are subtracted, so the known profiles solve the shifted problem
    exactly.  `phi_field` (polynomial) enables the deviation precondition
    check against delta0.
    """
    if phi_field is not None:
        from .rescale import ScaleMap, c5_deviation

        rep = c5_deviation(phi_field, ScaleMap(cfg.lam), C=cfg.C)
        if not rep.c_phi / cfg.lam < cfg.delta0 / 2.0:
            raise FormError(
                f"deviation precondition violated: c_phi/lambda = "
                f"{rep.c_phi / cfg.lam:.3g} >= delta0/2 = {cfg.delta0 / 2.0:.3g}"
            )

    mesh = init.mesh
    thetas = init.angular_templates()
    n_ang = len(thetas)
    dirs = sphere_samples(cfg.n_sphere, cfg.seed)
    asm = build_assembly(
        G, a0, mesh, dirs, thetas, init.sigma0, cfg.weights(mesh)
    )
    gp = cfg.gauge_penalty

    rho = rho_g = None
    if target is not None:
        tgt = [np.asarray(t, dtype=float) for t in target]
        if len(tgt) != n_ang + 1:
            raise FormError("target must carry one profile per template plus u")
        rho, rho_g = residual_blocks(asm, tgt[:n_ang], tgt[-1])

    n = len(mesh)
    fs = [f.copy() for f in init.angular_profiles()]
    u = init.u.copy()
    for f in fs:
        f[0] = 0.0  # inner boundary pinned to the model connection

    n_par = n_ang + 1
    free = np.ones(n_par * n, dtype=bool)
    for a in range(n_ang):
        free[a * n] = False  # f_a at r_in
    if cfg.pin_u_outer:
        free[n_par * n - 1] = False

    def eval_res(fv, uv):
        R, Rg = residual_blocks(asm, fv, uv)
        if rho is not None:
            R = R - rho
            Rg = Rg - rho_g
        return R, Rg

    R, Rg = eval_res(fs, u)
    phi_val = _objective(asm, R, Rg, gp)
    initial = np.sqrt(phi_val)
    history = [float(initial)]
    mu = 1e-8
    it = 0
    while it < cfg.max_iter and np.sqrt(phi_val) > cfg.tol:
        H, g = _normal_system(asm, fs, u, R, Rg, gp)
        Hf = H[np.ix_(free, free)]
        gf = g[free]
        if np.linalg.norm(gf) <= 1e-15 * max(1.0, np.sqrt(phi_val)):
            break
        accepted = False
        for _ in range(40):
            diag = np.diag(Hf).copy()
            diag[diag <= 0] = 1.0
            try:
                sol = np.linalg.solve(Hf + mu * np.diag(diag), -gf)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            step = np.zeros(n_par * n)
            step[free] = sol
            fs_new = [fs[a] + step[a * n : (a + 1) * n] for a in range(n_ang)]
            u_new = u + step[n_ang * n :]
            R_new, Rg_new = eval_res(fs_new, u_new)
            phi_new = _objective(asm, R_new, Rg_new, gp)
            if phi_new < phi_val:
                fs, u = fs_new, u_new
                R, Rg, phi_val = R_new, Rg_new, phi_new
                mu = max(mu / 3.0, 1e-14)
                accepted = True
                break
            mu *= 10.0
        it += 1
        if not accepted:
            break
        history.append(float(np.sqrt(phi_val)))

    final = float(np.sqrt(phi_val))
    result = RadialProfilePair(
        mesh=mesh,
        f=fs[0],
        u=u,
        base=init.base,
        theta=init.theta,
        sigma0=init.sigma0,
        theta2=init.theta2,
        f2=fs[1] if n_ang > 1 else None,
    )
    decay = _fit_result_decay(result, cfg)
    report = SolveReport(
        iterations=it,
        initial_residual=float(initial),
        final_residual=final,
        history=history,
        boundary_mismatch=float(max(abs(f[0]) for f in fs)),
        decay_exponent=decay,
        converged=final <= cfg.tol,
        message="tolerance met" if final <= cfg.tol else "best effort",
    )
    return result, report


def _fit_result_decay(pair: RadialProfilePair, cfg: SolverConfig) -> float:
    """Cheap l = 0 decay fit of |A - A0| over the mesh, for the report."""
    mesh = pair.mesh
    sub = mesh[:: max(1, len(mesh) // 16)]
    dirs = sphere_samples(8, cfg.seed + 1)
    rows = []
    for r in sub:
        X = r * dirs
        dev = 0.0
        for th, f in zip(pair.angular_templates(), pair.angular_profiles()):
            fval = float(np.interp(r, mesh, f))
            dev = dev + fval * th.value(X)
        sup = float(np.max(np.sqrt(np.sum(np.asarray(dev) ** 2, axis=(1, 2, 3)))))
        rows.append((float(r), 0, sup, sup))
    table = DecayTable(rows=rows, samples_per_sphere=len(dirs))
    try:
        return fit_decay_rate(table, cfg.theta)
    except FormError:
        return float("nan")


def fit_decay_rate(table: DecayTable, theta: float) -> float:
    """Log-log slope of the l = 0 supremum over the inner half of the
    annulus; NaN for an identically zero difference field."""
    rs, sups = table.sups(0)
    if len(rs) < 4 or rs.max() / rs.min() < 10.0 * (1.0 - 1e-9):
        raise FormError("need at least 4 radii spanning a decade")
    if np.all(sups == 0.0):
        return float("nan")
    cut = np.sqrt(rs.min() * rs.max())
    mask = (rs <= cut) & (sups > 0.0)
    if np.count_nonzero(mask) < 2:
        mask = sups > 0.0
    slope = np.polyfit(np.log(rs[mask]), np.log(sups[mask]), 1)[0]
    return float(slope)
