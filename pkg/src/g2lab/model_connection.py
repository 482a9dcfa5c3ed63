"""Model connections on bundles over S^6, pulled back to R^7 \\ {O}.

The canonical connection on TS^6 is realized concretely: the 7-dimensional
cross product u x v read off the Euclidean 3-form gives the almost complex
structure J_s(v) = s x v on the sphere, and the connection is the projected
flat derivative corrected by the nearly-Kahler torsion term
-(1/2) J (nabla J).  Two stereographic charts (excluding the poles -e7 and
+e7) carry orthonormal frames obtained by rescaling the conformal chart
frame, so all coefficients are analytic in the chart coordinates.

Everything is vectorized over batches of points: chart maps take (N, 6)
arrays, cone evaluations take (N, 7) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .forms import DIM, FormError, LieValuedKForm, index_sets
from .g2 import euclidean_phi

__all__ = [
    "cross_product_tensor",
    "cross",
    "Chart",
    "CHART_PLUS",
    "CHART_MINUS",
    "ChartConnection",
    "ConeConnection",
    "canonical_connection",
    "flat_connection",
    "torsion_template",
    "higgs_template",
    "pullback_to_cone",
    "instanton_defect",
    "transition_residual",
]


def _batch(X) -> np.ndarray:
    """Batched array, float64 unless already complex: every evaluation
    below is a rational-analytic expression, so complex-step inputs pass
    straight through and derivatives come out exact."""
    X = np.atleast_2d(np.asarray(X))
    if not np.iscomplexobj(X):
        X = X.astype(float)
    return X


def _rnorm(X: np.ndarray) -> np.ndarray:
    """Analytic continuation of the Euclidean norm (no absolute values)."""
    return np.sqrt(np.sum(X * X, axis=1))


def cross_product_tensor() -> np.ndarray:
    """Totally antisymmetric (7,7,7) structure constants of the cross
    product, <u x v, w> = phi0(u, v, w)."""
    phi0 = euclidean_phi()
    T = np.zeros((DIM, DIM, DIM))
    import itertools

    for (i, j, k), c in zip(index_sets(3), phi0.coeffs):
        if c == 0.0:
            continue
        for perm in itertools.permutations((i, j, k)):
            sign = _perm_parity(perm, (i, j, k))
            T[perm] = sign * c
    return T


def _perm_parity(perm, base):
    order = [base.index(p) for p in perm]
    inv = sum(
        1
        for a in range(len(order))
        for b in range(a + 1, len(order))
        if order[a] > order[b]
    )
    return -1.0 if inv % 2 else 1.0


_CROSS = None


def cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Batched 7-dimensional cross product on the last axis."""
    global _CROSS
    if _CROSS is None:
        _CROSS = cross_product_tensor()
    return np.einsum("ijk,...i,...j->...k", _CROSS, u, v)


# ---------------------------------------------------------------------------
# stereographic charts


@dataclass(frozen=True)
class Chart:
    """Stereographic chart of S^6: sign=+1 covers s7 > -1 (centered at
    +e7), sign=-1 covers s7 < 1 (centered at -e7)."""

    sign: int

    def embed(self, U: np.ndarray) -> np.ndarray:
        U = _batch(U)
        w = 1.0 + np.sum(U * U, axis=1)
        S = np.empty((U.shape[0], DIM), dtype=U.dtype)
        S[:, :6] = 2.0 * U / w[:, None]
        S[:, 6] = self.sign * (2.0 - w) / w  # (1 - |u|^2) / (1 + |u|^2)
        return S

    def coords(self, S: np.ndarray) -> np.ndarray:
        S = _batch(S)
        den = 1.0 + self.sign * S[:, 6]
        if np.any(den.real <= 1e-12):
            raise FormError("point outside chart domain")
        return S[:, :6] / den[:, None]

    def contains(self, S: np.ndarray, margin: float = 1e-6) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        return 1.0 + self.sign * S[:, 6] > margin

    def frame(self, U: np.ndarray) -> np.ndarray:
        """Orthonormal frame E[n, a, :] of T S^6 at embed(U[n]); the
        stereographic chart is conformal so this is the normalized
        coordinate frame, analytic in u."""
        U = _batch(U)
        N = U.shape[0]
        w = 1.0 + np.sum(U * U, axis=1)
        E = np.zeros((N, 6, DIM), dtype=U.dtype)
        E[:, :, :6] = np.eye(6)[None, :, :] - 2.0 * (
            U[:, :, None] * U[:, None, :]
        ) / w[:, None, None]
        E[:, :, 6] = -2.0 * self.sign * U / w[:, None]
        return E

    def frame_derivative(self, U: np.ndarray) -> np.ndarray:
        """dE[n, b, a, :] = d(E_a)/du_b, analytic."""
        U = _batch(U)
        N = U.shape[0]
        w = 1.0 + np.sum(U * U, axis=1)
        dE = np.zeros((N, 6, 6, DIM), dtype=U.dtype)
        eye = np.eye(6)
        # ambient components 0..5
        dE[:, :, :, :6] = (
            -2.0
            * (
                eye[None, :, :, None] * U[:, None, None, :]
                + U[:, None, :, None] * eye[None, :, None, :]
            )
            / w[:, None, None, None]
            + 4.0
            * U[:, None, :, None]
            * U[:, :, None, None]
            * U[:, None, None, :]
            / (w * w)[:, None, None, None]
        )
        # ambient component 6
        dE[:, :, :, 6] = -2.0 * self.sign * (
            eye[None, :, :] / w[:, None, None]
            - 2.0 * U[:, :, None] * U[:, None, :] / (w * w)[:, None, None]
        )
        return dE

    def jacobian_from_ambient(self, X: np.ndarray) -> np.ndarray:
        """J[n, a, i] = du_a / dx_i for u = coords(x / |x|)."""
        X = _batch(X)
        r = _rnorm(X)
        S = X / r[:, None]
        den = 1.0 + self.sign * S[:, 6]
        # du/ds
        duds = np.zeros((X.shape[0], 6, DIM), dtype=X.dtype)
        duds[:, :, :6] = np.eye(6)[None, :, :] / den[:, None, None]
        duds[:, :, 6] = -self.sign * S[:, :6] / (den * den)[:, None]
        # ds/dx = (I - s s^T) / r
        dsdx = (np.eye(DIM)[None, :, :] - S[:, :, None] * S[:, None, :]) / r[
            :, None, None
        ]
        return np.einsum("naj,nji->nai", duds, dsdx)


CHART_PLUS = Chart(+1)
CHART_MINUS = Chart(-1)


def _project(S: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Project ambient vectors V (..., 7) onto the tangent space at S."""
    return V - S * np.sum(S * V, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# chart connections


@dataclass(frozen=True)
class ChartConnection:
    """Connection on an SO(m)-bundle over S^6 in two stereographic gauges.

    coeff(chart, U) returns the six so(m)-valued du^a coefficients, shape
    (N, 6, m, m).  gauge(S) is the transition h with E_minus = E_plus h on
    the overlap (identity for trivialized bundles).
    """

    m: int
    coeff: Callable[[Chart, np.ndarray], np.ndarray]
    gauge: Callable[[np.ndarray], np.ndarray]


def _canonical_coeff(chart: Chart, U: np.ndarray) -> np.ndarray:
    U = _batch(U)
    S = chart.embed(U)
    E = chart.frame(U)  # (N, 6, 7)
    dE = chart.frame_derivative(U)  # (N, b, a, 7)
    w = 1.0 + np.sum(U * U, axis=1)

    nabla = _project(S[:, None, None, :], dE)  # Levi-Civita derivative
    # d_b sigma = (2/w) E_b
    dsig = 2.0 * E / w[:, None, None]  # (N, b, 7)
    JE = cross(S[:, None, :], E)  # (N, a, 7)
    dJE = cross(dsig[:, :, None, :], E[:, None, :, :]) + cross(
        S[:, None, None, :], dE
    )
    nabla_J_E = _project(S[:, None, None, :], dJE) - cross(
        S[:, None, None, :], nabla
    )
    torsion = -0.5 * cross(S[:, None, None, :], nabla_J_E)
    covar = nabla + torsion  # (N, b, a, 7)
    A = np.einsum("nci,nbai->nbca", E, covar)  # (A_b)_{c a} = <E_c, covar_b E_a>
    return 0.5 * (A - np.swapaxes(A, 2, 3))  # roundoff cleanup


def _canonical_gauge(S: np.ndarray) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    Ep = CHART_PLUS.frame(CHART_PLUS.coords(S))
    Em = CHART_MINUS.frame(CHART_MINUS.coords(S))
    return np.einsum("nai,nbi->nab", Ep, Em)  # h[a, b] = <E+_a, E-_b>


def canonical_connection(m: int = 6) -> ChartConnection:
    """The G2-invariant canonical connection on TS^6 (rank 6 only)."""
    if m != 6:
        raise FormError("canonical connection is only built for rank 6")
    return ChartConnection(m=6, coeff=_canonical_coeff, gauge=_canonical_gauge)


def flat_connection(m: int) -> ChartConnection:
    if m < 1:
        raise FormError("bundle rank must be positive")

    def zero(chart: Chart, U: np.ndarray) -> np.ndarray:
        U = _batch(U)
        return np.zeros((U.shape[0], 6, m, m), dtype=U.dtype)

    def identity(S: np.ndarray) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        return np.broadcast_to(np.eye(m), (S.shape[0], m, m)).copy()

    return ChartConnection(m=m, coeff=zero, gauge=identity)


def torsion_template(chart: Chart, U: np.ndarray) -> np.ndarray:
    """The nearly-Kahler torsion -(1/2) J (nabla J) as an ad-valued chart
    1-form: the difference between the canonical and Levi-Civita
    connections, so a genuine tensor."""
    U = _batch(U)
    S = chart.embed(U)
    E = chart.frame(U)
    dE = chart.frame_derivative(U)
    w = 1.0 + np.sum(U * U, axis=1)
    nabla = _project(S[:, None, None, :], dE)
    dsig = 2.0 * E / w[:, None, None]
    dJE = cross(dsig[:, :, None, :], E[:, None, :, :]) + cross(
        S[:, None, None, :], dE
    )
    nabla_J_E = _project(S[:, None, None, :], dJE) - cross(
        S[:, None, None, :], nabla
    )
    torsion = -0.5 * cross(S[:, None, None, :], nabla_J_E)
    T = np.einsum("nci,nbai->nbca", E, torsion)
    return 0.5 * (T - np.swapaxes(T, 2, 3))


def higgs_template(chart: Chart, U: np.ndarray) -> np.ndarray:
    """Matrix of the almost complex structure J in the chart frame: the
    equivariant so(6)-valued 0-form (N, m, m)."""
    U = _batch(U)
    S = chart.embed(U)
    E = chart.frame(U)
    JE = cross(S[:, None, :], E)
    M = np.einsum("nbi,nai->nba", E, JE)
    return 0.5 * (M - np.swapaxes(M, 1, 2))


# ---------------------------------------------------------------------------
# cone pullback


# 4th-order central difference weights at offsets (-2, -1, 1, 2) * h
_FD4_OFFSETS = np.array([-2.0, -1.0, 1.0, 2.0])
_FD4_WEIGHTS = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0


@dataclass(frozen=True)
class ConeConnection:
    """Chart data pulled back to R^7 \\ {O} via x -> x/|x|; coefficients are
    homogeneous of degree -1 with zero radial component."""

    base: ChartConnection

    @property
    def m(self) -> int:
        return self.base.m

    def chart_for(self, X: np.ndarray) -> Chart:
        X = np.real(np.atleast_2d(np.asarray(X)))
        s7 = X[:, 6] / np.linalg.norm(X, axis=1)
        return CHART_PLUS if np.mean(s7) >= 0.0 else CHART_MINUS

    def coefficients(self, X: np.ndarray, chart: Chart | None = None) -> np.ndarray:
        """A_i(x), shape (N, 7, m, m)."""
        X = _batch(X)
        r = _rnorm(X)
        if np.any(r.real == 0.0):
            raise FormError("cone connection is singular at the origin")
        if chart is None:
            chart = self.chart_for(X)
        U = chart.coords(X / r[:, None])
        A = self.base.coeff(chart, U)  # (N, 6, m, m)
        Jac = chart.jacobian_from_ambient(X)  # (N, 6, 7)
        return np.einsum("nai,namp->nimp", Jac, A)

    def derivative(
        self, X: np.ndarray, chart: Chart | None = None, h_rel: float = 1e-100
    ) -> np.ndarray:
        """Ambient coordinate derivative dA[n, i, j] = d_i A_j by the
        complex-step rule (the whole evaluation is rational-analytic), so
        exact to roundoff; shape (N, 7, 7, m, m)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        r = np.sqrt(np.sum(X * X, axis=1))
        if chart is None:
            chart = self.chart_for(X)
        out = np.empty((X.shape[0], DIM, DIM, self.m, self.m))
        h = h_rel * r
        for i in range(DIM):
            Xs = X.astype(complex)
            Xs[:, i] += 1j * h
            out[:, i] = self.coefficients(Xs, chart=chart).imag / h[
                :, None, None, None
            ]
        return out

    def curvature(self, X: np.ndarray, chart: Chart | None = None) -> np.ndarray:
        """F_ij = d_i A_j - d_j A_i + [A_i, A_j], as (N, 21, m, m) over the
        sorted degree-2 multi-indices."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if chart is None:
            chart = self.chart_for(X)
        A = self.coefficients(X, chart=chart)
        dA = self.derivative(X, chart=chart)
        pairs = index_sets(2)
        F = np.empty((X.shape[0], len(pairs), self.m, self.m))
        for n, (i, j) in enumerate(pairs):
            comm = A[:, i] @ A[:, j] - A[:, j] @ A[:, i]
            F[:, n] = dA[:, i, j] - dA[:, j, i] + comm
        return F

    def curvature_form(self, x: np.ndarray) -> LieValuedKForm:
        return LieValuedKForm(2, self.curvature(np.asarray(x)[None, :])[0])


def pullback_to_cone(a0: ChartConnection) -> ConeConnection:
    return ConeConnection(base=a0)


# ---------------------------------------------------------------------------
# diagnostics


def sphere_samples(n: int, seed: int = 0) -> np.ndarray:
    """Deterministic low-discrepancy points on S^6."""
    from scipy.stats import qmc
    from scipy.special import ndtri

    sob = qmc.Sobol(d=DIM, scramble=True, seed=seed)
    n_draw = 1 << max(0, (n - 1).bit_length())
    pts = ndtri(np.clip(sob.random(n_draw)[:n], 1e-12, 1 - 1e-12))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def instanton_defect(a0: ConeConnection, phi, samples: np.ndarray | None = None,
                     n_samples: int = 200, seed: int = 0):
    """max_x |F_{A0} wedge psi(phi)| over sphere samples, with the per-point
    table; the connection is an instanton for phi iff this vanishes."""
    from .forms import wedge_lie_scalar
    from .g2 import coassociative

    psi = coassociative(phi)
    if samples is None:
        samples = sphere_samples(n_samples, seed)
    per_point = np.empty(samples.shape[0])
    for sign in (+1, -1):
        mask = (samples[:, 6] >= 0.0) if sign == +1 else (samples[:, 6] < 0.0)
        if not np.any(mask):
            continue
        chart = CHART_PLUS if sign == +1 else CHART_MINUS
        F = a0.curvature(samples[mask], chart=chart)
        for k, Fk in zip(np.nonzero(mask)[0], F):
            res = wedge_lie_scalar(LieValuedKForm(2, Fk), psi)
            per_point[k] = res.norm()
    return float(np.max(per_point)), per_point


def transition_residual(a0: ChartConnection, n_samples: int = 50,
                        seed: int = 0, h: float = 1e-5) -> float:
    """Max overlap mismatch of A_minus against the gauge transport of
    A_plus, with dh by finite differences in chart-minus coordinates."""
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((n_samples, DIM))
    S /= np.linalg.norm(S, axis=1, keepdims=True)
    S[:, 6] = 0.5 * np.tanh(S[:, 6])  # keep well inside the overlap
    S /= np.linalg.norm(S, axis=1, keepdims=True)

    Um = CHART_MINUS.coords(S)
    Am = a0.coeff(CHART_MINUS, Um)  # (N, 6, m, m)
    Up = CHART_PLUS.coords(S)
    Ap = a0.coeff(CHART_PLUS, Up)
    h_gauge = a0.gauge(S)  # (N, m, m)
    hin = np.linalg.inv(h_gauge)

    # convert A_plus du^b coefficients to the chart-minus coordinate basis
    worst = 0.0
    for n in range(n_samples):
        # d(u_plus)/d(u_minus) at this point, by central differences
        Jpm = np.empty((6, 6))
        dh = np.empty((6, a0.m, a0.m))
        for a in range(6):
            up_h = []
            h_h = []
            for off in (+h, -h):
                u = Um[n].copy()
                u[a] += off
                s = CHART_MINUS.embed(u[None, :])[0]
                up_h.append(CHART_PLUS.coords(s[None, :])[0])
                h_h.append(a0.gauge(s[None, :])[0])
            Jpm[a] = (up_h[0] - up_h[1]) / (2 * h)
            dh[a] = (h_h[0] - h_h[1]) / (2 * h)
        Ap_in_minus = np.einsum("ab,bmp->amp", Jpm, Ap[n])
        pred = (
            np.einsum("mp,apq,qr->amr", hin[n], Ap_in_minus, h_gauge[n])
            + np.einsum("mp,apq->amq", hin[n], dh)
        )
        worst = max(worst, float(np.max(np.abs(Am[n] - pred))))
    return worst
