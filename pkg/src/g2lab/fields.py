"""Discretized connections and Higgs fields near the singular point:
curvature, covariant derivative, the monopole residual, and decay
profiling against a model cone connection."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .forms import (
    DIM,
    FormError,
    KForm,
    LieValuedKForm,
    MetricTensor,
    hodge_lie,
    index_position,
    index_sets,
    wedge_lie_scalar,
)
from .g2 import G2Structure, structure_from_phi
from .model_connection import ConeConnection, sphere_samples
from .polyfield import PolyFormField

__all__ = [
    "FieldPair",
    "G2Field",
    "ConstantG2Field",
    "PolyG2Field",
    "DecayTable",
    "curvature",
    "covariant_d",
    "monopole_residual",
    "decay_profile",
    "abelian_generator",
    "save_field_pair",
    "load_field_pair",
    "OneFormTemplate",
    "ZeroFormTemplate",
    "RadialProfilePair",
    "canonical_templates",
    "abelian_templates",
    "rotation_templates",
    "euclidean_field",
    "linear_perturbation_field",
    "interior_perturbation_field",
    "radial_perturbation_field",
    "poly_field_pair",
]


def abelian_generator() -> np.ndarray:
    """so(2) generator; fields proportional to it commute, giving an
    exactly abelian model."""
    return np.array([[0.0, 1.0], [-1.0, 0.0]])


@dataclass
class FieldPair:
    """Connection coefficients A_i(x) (7, m, m) and Higgs field sigma(x)
    (m, m) on an annulus, with optional analytic derivatives
    dA(x)[i, j] = d_i A_j and dsigma(x)[i]."""

    m: int
    A: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    dA: Callable[[np.ndarray], np.ndarray] | None = None
    dsigma: Callable[[np.ndarray], np.ndarray] | None = None
    r_in: float = 0.0
    r_out: float = np.inf
    fd_step: float = 1e-4  # relative to |x|

    def check_point(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x)
        if not (self.r_in <= r <= self.r_out):
            raise FormError(f"point at radius {r:.3g} outside the annulus")
        return x

    def _fd_dA(self, x: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(x)
        h = self.fd_step * r
        out = np.empty((DIM, DIM, self.m, self.m))
        for i in range(DIM):
            xp = x.copy()
            xm = x.copy()
            xp[i] += h
            xm[i] -= h
            out[i] = (self.A(xp) - self.A(xm)) / (2.0 * h)
        return out

    def _fd_dsigma(self, x: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(x)
        h = self.fd_step * r
        out = np.empty((DIM, self.m, self.m))
        for i in range(DIM):
            xp = x.copy()
            xm = x.copy()
            xp[i] += h
            xm[i] -= h
            out[i] = (self.sigma(xp) - self.sigma(xm)) / (2.0 * h)
        return out

    def derivative_A(self, x: np.ndarray) -> np.ndarray:
        return self.dA(x) if self.dA is not None else self._fd_dA(x)

    def derivative_sigma(self, x: np.ndarray) -> np.ndarray:
        return self.dsigma(x) if self.dsigma is not None else self._fd_dsigma(x)


def curvature(p: FieldPair, point: np.ndarray) -> LieValuedKForm:
    """F = dA + A ^ A with F_ij = d_i A_j - d_j A_i + [A_i, A_j]."""
    x = p.check_point(point)
    A = p.A(x)
    dA = p.derivative_A(x)
    F = np.empty((len(index_sets(2)), p.m, p.m))
    for n, (i, j) in enumerate(index_sets(2)):
        F[n] = dA[i, j] - dA[j, i] + A[i] @ A[j] - A[j] @ A[i]
    return LieValuedKForm(2, F)


def covariant_d(p: FieldPair, point: np.ndarray) -> LieValuedKForm:
    """d_A sigma = d sigma + [A, sigma], componentwise."""
    x = p.check_point(point)
    A = p.A(x)
    sig = p.sigma(x)
    ds = p.derivative_sigma(x)
    out = np.empty((DIM, p.m, p.m))
    for i in range(DIM):
        out[i] = ds[i] + A[i] @ sig - sig @ A[i]
    return LieValuedKForm(1, out)


# ---------------------------------------------------------------------------
# G2-structure fields


class G2Field:
    """Evaluable G2-structure over the domain."""

    def at(self, point: np.ndarray) -> G2Structure:
        raise NotImplementedError


@dataclass
class ConstantG2Field(G2Field):
    structure: G2Structure

    def at(self, point: np.ndarray) -> G2Structure:
        return self.structure


@dataclass
class PolyG2Field(G2Field):
    phi_field: PolyFormField

    def at(self, point: np.ndarray) -> G2Structure:
        return structure_from_phi(self.phi_field.at(point))


def monopole_residual(p: FieldPair, G: G2Field, point: np.ndarray) -> LieValuedKForm:
    """F_A ^ psi + star_g(d_A sigma); the pair is a monopole at the point
    iff this degree-6 form vanishes."""
    x = p.check_point(point)
    st = G.at(x)
    F = curvature(p, x)
    dsig = covariant_d(p, x)
    return wedge_lie_scalar(F, st.psi) + hodge_lie(st.g, dsig)


# ---------------------------------------------------------------------------
# decay profiling


@dataclass
class DecayTable:
    """Rows (r, l, sup |grad^l (A - A0)|, sup |grad^l_{A0} (A - A0)|),
    radii sorted decreasing toward the inner boundary."""

    rows: list[tuple[float, int, float, float]]
    samples_per_sphere: int
    fitted_C: float = float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("r,l,coord_sup,cov_sup\n")
            for r, l, cs, vs in self.rows:
                fh.write(f"{r!r},{l},{cs!r},{vs!r}\n")

    @classmethod
    def from_csv(cls, path) -> "DecayTable":
        rows = []
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "r,l,coord_sup,cov_sup":
                raise FormError(f"{path}: unexpected decay-table header")
            for ln in fh:
                if not ln.strip():
                    continue
                r, l, cs, vs = ln.strip().split(",")
                rows.append((float(r), int(l), float(cs), float(vs)))
        return cls(rows=rows, samples_per_sphere=0)

    def sups(self, l: int) -> tuple[np.ndarray, np.ndarray]:
        rs = np.array([row[0] for row in self.rows if row[1] == l])
        ss = np.array([row[2] for row in self.rows if row[1] == l])
        return rs, ss


def _difference_field(p: FieldPair, a0: ConeConnection):
    def delta(x):
        return p.A(x) - a0.coefficients(x[None, :])[0]

    return delta


def _fd_partial(f, x, i, h):
    xp = x.copy()
    xm = x.copy()
    xp[i] += h
    xm[i] -= h
    return (f(xp) - f(xm)) / (2.0 * h)


def _coord_derivative_norm(delta, x, l, h):
    """Frobenius norm of the full order-l coordinate derivative tensor,
    via nested central differences over distinct multi-indices with their
    multiplicities."""
    from itertools import combinations_with_replacement
    from math import factorial

    if l == 0:
        return float(np.linalg.norm(delta(x)))
    total = 0.0
    for combo in combinations_with_replacement(range(DIM), l):
        def nested(y, todo=combo):
            if not todo:
                return delta(y)
            return _fd_partial(lambda z: nested(z, todo[1:]), y, todo[0], h)

        val = nested(x)
        counts = [combo.count(i) for i in set(combo)]
        mult = factorial(l)
        for c in counts:
            mult //= factorial(c)
        total += mult * float(np.sum(val**2))
    return float(np.sqrt(total))


def _covariant_derivative_norm(delta, a0_coeff, x, l, h):
    """Norm of the order-l covariant derivative with respect to the model
    connection, built recursively: T_{l+1, i} = d_i T_l + [A0_i, T_l]."""

    def T(y, order):
        if order == 0:
            return delta(y)
        prev_shape_field = lambda z: T(z, order - 1)
        A0 = a0_coeff(y)
        base = prev_shape_field(y)
        out = np.empty((DIM,) + base.shape)
        for i in range(DIM):
            out[i] = _fd_partial(prev_shape_field, y, i, h) + (
                np.einsum("ab,...bc->...ac", A0[i], base)
                - np.einsum("...ab,bc->...ac", base, A0[i])
            )
        return out

    return float(np.linalg.norm(T(x, l)))


def decay_profile(
    p: FieldPair,
    a0: ConeConnection,
    radii,
    samples_per_sphere: int = 50,
    l_max: int = 3,
    seed: int = 0,
) -> DecayTable:
    """Sphere-sample suprema of |grad^l (A - A0)| and the covariant variant
    for l in 0..l_max at each radius."""
    radii = sorted(float(r) for r in radii)
    if not radii:
        raise FormError("empty radius list")
    for r in radii:
        if not (p.r_in <= r <= p.r_out):
            raise FormError(f"radius {r} outside the annulus")
    dirs = sphere_samples(samples_per_sphere, seed)
    delta = _difference_field(p, a0)
    a0_coeff = lambda y: a0.coefficients(y[None, :])[0]

    rows = []
    for r in sorted(radii, reverse=True):
        for l in range(l_max + 1):
            h = (1e-4 if l <= 1 else 1e-3) * r
            coord = 0.0
            cov = 0.0
            for d in dirs:
                x = r * d
                coord = max(coord, _coord_derivative_norm(delta, x, l, h))
                if l == 0:
                    cov = coord
                else:
                    cov = max(
                        cov, _covariant_derivative_norm(delta, a0_coeff, x, l, h)
                    )
            rows.append((r, l, coord, cov))

    # fitted constant in: covariant <= C * sum of coordinate sups of order <= l
    fitted = 0.0
    by_rl = {(r, l): (cs, vs) for r, l, cs, vs in rows}
    for (r, l), (_, vs) in by_rl.items():
        ssum = sum(by_rl[(r, k)][0] for k in range(l + 1))
        if ssum > 0:
            fitted = max(fitted, vs / ssum)
    return DecayTable(rows=rows, samples_per_sphere=len(dirs), fitted_C=fitted)


# ---------------------------------------------------------------------------
# angular templates and the radial-profile ansatz


_FD4_OFFSETS = np.array([-2.0, -1.0, 1.0, 2.0])
_FD4_WEIGHTS = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0


def _hemisphere_split(X):
    """(mask, chart) pairs grouping points by the chart that keeps the
    trivialization consistent with the cone connection's convention."""
    from .model_connection import CHART_MINUS, CHART_PLUS

    s7 = X[:, 6] / np.linalg.norm(X, axis=1)
    return [
        (s7 >= 0.0, CHART_PLUS),
        (s7 < 0.0, CHART_MINUS),
    ]


class _ChartedTemplate:
    """Shared machinery: value_fn(X, chart) evaluated per hemisphere when
    no chart is pinned; ambient derivatives by high-order differences with
    the chart pinned per base point so the local gauge never jumps inside
    a stencil."""

    def __init__(self, m: int, value_fn, name: str = "custom",
                 analytic: bool = True):
        self.m = m
        self._value = value_fn
        self.name = name
        self.analytic = analytic

    def value(self, X: np.ndarray, chart=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if chart is not None:
            return self._value(X, chart)
        out = None
        for mask, ch in _hemisphere_split(X):
            if not np.any(mask):
                continue
            block = self._value(X[mask], ch)
            if out is None:
                out = np.empty((X.shape[0],) + block.shape[1:])
            out[mask] = block
        return out

    def derivative(self, X: np.ndarray, h_rel: float | None = None) -> np.ndarray:
        """Ambient derivatives: exact complex-step when the template is
        analytic (value_fn then evaluates on complex inputs; all shipped
        rational-analytic templates do), otherwise a 4th-order real
        stencil for templates whose evaluation is itself complex-step
        based and cannot be perturbed imaginarily a second time."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        shape_tail = self.value(X[:1]).shape[1:]
        out = np.zeros((X.shape[0], DIM) + shape_tail)
        for mask, chart in _hemisphere_split(X):
            if not np.any(mask):
                continue
            Xm = X[mask]
            r = np.linalg.norm(Xm, axis=1)
            if self.analytic:
                h = (1e-100 if h_rel is None else h_rel) * r
                hb = h.reshape((-1,) + (1,) * len(shape_tail))
                for i in range(DIM):
                    Xs = Xm.astype(complex)
                    Xs[:, i] += 1j * h
                    out[mask, i] = self._value(Xs, chart).imag / hb
            else:
                h = (1e-4 if h_rel is None else h_rel) * r
                hb = h.reshape((-1,) + (1,) * len(shape_tail))
                for i in range(DIM):
                    acc = 0.0
                    for off, wgt in zip(_FD4_OFFSETS, _FD4_WEIGHTS):
                        Xs = Xm.copy()
                        Xs[:, i] += off * h
                        acc = acc + wgt * self._value(Xs, chart)
                    out[mask, i] = acc / hb
        return out


class OneFormTemplate(_ChartedTemplate):
    """so(m)-valued angular 1-form on the cone, homogeneous of degree 0;
    value shape (N, 7, m, m), derivative d[n, i, j] = d_i Theta_j of shape
    (N, 7, 7, m, m)."""


class ZeroFormTemplate(_ChartedTemplate):
    """so(m)-valued 0-form on the cone, homogeneous of degree 0; value
    shape (N, m, m), derivative shape (N, 7, m, m)."""


def canonical_templates():
    """(theta, theta_j, sigma0) for the rank-6 canonical model: the
    normalized nearly-Kahler torsion 1-form, its partner rotated by the
    almost complex structure, and the J matrix as Higgs template."""
    from .model_connection import (
        ChartConnection,
        ConeConnection,
        _canonical_gauge,
        higgs_template,
        torsion_template,
    )

    cone_t = ConeConnection(
        ChartConnection(6, torsion_template, _canonical_gauge)
    )
    ref_pt = np.array([[0.3, 0.1, -0.2, 0.05, 0.4, -0.1, 0.25]])
    # coefficients are homogeneous of degree -1 and G2-invariant in norm,
    # so one evaluation fixes the unit-radius normalization
    scale = float(np.linalg.norm(cone_t.coefficients(ref_pt))) * float(
        np.linalg.norm(ref_pt)
    )

    def theta_value(X, chart):
        r = np.sqrt(np.sum(X * X, axis=1))
        return cone_t.coefficients(X, chart=chart) * (r / scale)[
            :, None, None, None
        ]

    def jmat(X, chart):
        S = X / np.sqrt(np.sum(X * X, axis=1))[:, None]
        return higgs_template(chart, chart.coords(S))

    def theta_j_value(X, chart):
        T = theta_value(X, chart)
        J = jmat(X, chart)
        return 0.5 * (
            np.einsum("nab,nibc->niac", J, T)
            - np.einsum("niab,nbc->niac", T, J)
        )

    theta = OneFormTemplate(6, theta_value, name="torsion")
    theta_j = OneFormTemplate(6, theta_j_value, name="torsion-J")
    sigma0 = ZeroFormTemplate(6, jmat, name="acs")
    return theta, theta_j, sigma0


def abelian_templates():
    """(theta, sigma0) for the rank-2 abelian model: a fixed unit angular
    1-form and the constant generator."""
    J2 = abelian_generator()

    def theta_value(X, chart):
        r = np.sqrt(np.sum(X * X, axis=1))
        w = np.zeros((X.shape[0], DIM), dtype=X.dtype)
        w[:, 0] = -X[:, 1] / r
        w[:, 1] = X[:, 0] / r
        w[:, 2] = -X[:, 3] / r
        w[:, 3] = X[:, 2] / r
        return w[:, :, None, None] * J2[None, None, :, :]

    def sigma_value(X, chart):
        return np.broadcast_to(
            J2, (X.shape[0], 2, 2)
        ).astype(X.dtype, copy=True)

    return (
        OneFormTemplate(2, theta_value, name="abelian-angular"),
        ZeroFormTemplate(2, sigma_value, name="abelian-constant"),
    )


def _frame_rotation_rate(X: np.ndarray, P: np.ndarray, chart) -> np.ndarray:
    """chi[n] = d/dt <E_a(s), e^{-tX} E_b(e^{tX} s)> at t = 0: the so(6)
    rotation rate of the chart frame along the flow of the linear vector
    field W = Xx, antisymmetrized; analytic in the points."""
    S = P / np.sqrt(np.sum(P * P, axis=1))[:, None]
    U = chart.coords(S)
    E = chart.frame(U)
    dE = chart.frame_derivative(U)
    V = S @ X.T
    den = 1.0 + chart.sign * S[:, 6]
    duds = np.zeros(S.shape[:1] + (6, DIM), dtype=S.dtype)
    duds[:, :, :6] = np.eye(6)[None] / den[:, None, None]
    duds[:, :, 6] = -chart.sign * S[:, :6] / (den * den)[:, None]
    udot = np.einsum("nci,ni->nc", duds, V)
    dEb = np.einsum("ncbi,nc->nbi", dE, udot)
    h = np.einsum("nai,nbi->nab", E, dEb) - np.einsum(
        "nai,ij,nbj->nab", E, X, E
    )
    return 0.5 * (h - np.swapaxes(h, 1, 2))


def rotation_templates(X: np.ndarray, base: ConeConnection | None = None):
    """(theta, sigma) adapted to an infinitesimal rotation X stabilizing
    the Euclidean 3-form, with W = Xx the induced vector field.

    theta is r * interior(W, F0), the angular 1-form sourced at linear
    order when the structure is perturbed along the rotation; sigma is
    the gauge compensator chi - interior(W, A0) whose covariant
    differential equals interior(W, F0) exactly (Cartan's formula plus
    the invariance of A0 under the rotated frame), so a radially constant
    Higgs multiple of it absorbs that linear-order residual.  Both are
    homogeneous of degree 0 and normalized at a reference direction."""
    from .model_connection import canonical_connection, pullback_to_cone

    X = np.asarray(X, dtype=float)
    if X.shape != (DIM, DIM) or np.max(np.abs(X + X.T)) > 1e-12:
        raise FormError("rotation template needs an antisymmetric 7x7 matrix")
    a0 = pullback_to_cone(canonical_connection()) if base is None else base
    pairs = index_sets(2)

    def sigma_value(P, chart):
        A = a0.coefficients(P, chart=chart)
        W = P @ X.T
        return _frame_rotation_rate(X, P, chart) - np.einsum(
            "ni,nimp->nmp", W, A
        )

    def theta_value(P, chart):
        r = np.linalg.norm(P, axis=1)
        F = a0.curvature(P, chart=chart)
        W = P @ X.T
        out = np.zeros((P.shape[0], DIM, a0.m, a0.m))
        for k, (i, j) in enumerate(pairs):
            out[:, j] += W[:, i, None, None] * F[:, k]
            out[:, i] -= W[:, j, None, None] * F[:, k]
        return out * r[:, None, None, None]

    ref_pt = np.array([[0.3, 0.1, -0.2, 0.05, 0.4, -0.1, 0.25]])
    ref_pt /= np.linalg.norm(ref_pt)
    from .model_connection import CHART_PLUS

    tscale = float(np.linalg.norm(theta_value(ref_pt, CHART_PLUS)))
    sscale = float(np.linalg.norm(sigma_value(ref_pt, CHART_PLUS)))
    if tscale == 0.0 or sscale == 0.0:
        raise FormError("rotation templates vanish at the reference point")

    def theta_n(P, chart):
        return theta_value(P, chart) / tscale

    def sigma_n(P, chart):
        return sigma_value(P, chart) / sscale

    return (
        OneFormTemplate(a0.m, theta_n, name="rotation-curvature",
                        analytic=False),
        ZeroFormTemplate(a0.m, sigma_n, name="rotation-compensator"),
    )


@dataclass
class RadialProfilePair:
    """Equivariant ansatz A = A0 + f(r) Theta [+ f2(r) Theta2],
    sigma = u(r) Sigma0 on a strictly increasing radial mesh.

    The optional second 1-form template covers models whose space of
    symmetric angular deformations is two-dimensional."""

    mesh: np.ndarray
    f: np.ndarray
    u: np.ndarray
    base: ConeConnection
    theta: OneFormTemplate
    sigma0: ZeroFormTemplate
    theta2: OneFormTemplate | None = None
    f2: np.ndarray | None = None

    def __post_init__(self):
        self.mesh = np.asarray(self.mesh, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if np.any(np.diff(self.mesh) <= 0):
            raise FormError("mesh must be strictly increasing")
        if self.f.shape != self.mesh.shape or self.u.shape != self.mesh.shape:
            raise FormError("profile arrays must match the mesh")
        if (self.theta2 is None) != (self.f2 is None):
            raise FormError("theta2 and f2 must be supplied together")
        if self.f2 is not None:
            self.f2 = np.asarray(self.f2, dtype=float)
            if self.f2.shape != self.mesh.shape:
                raise FormError("profile arrays must match the mesh")

    @property
    def m(self) -> int:
        return self.base.m

    def angular_templates(self) -> list[OneFormTemplate]:
        out = [self.theta]
        if self.theta2 is not None:
            out.append(self.theta2)
        return out

    def angular_profiles(self) -> list[np.ndarray]:
        out = [self.f]
        if self.f2 is not None:
            out.append(self.f2)
        return out

    def _splines(self):
        from scipy.interpolate import CubicSpline

        fsp = [CubicSpline(self.mesh, f) for f in self.angular_profiles()]
        return fsp, CubicSpline(self.mesh, self.u)

    def as_field_pair(self) -> FieldPair:
        fsp, usp = self._splines()
        base = self.base
        thetas = self.angular_templates()
        sigma0 = self.sigma0

        def A(x):
            x = np.asarray(x, dtype=float)
            r = np.linalg.norm(x)
            out = base.coefficients(x[None, :])[0]
            for sp, th in zip(fsp, thetas):
                out = out + float(sp(r)) * th.value(x[None, :])[0]
            return out

        def sigma(x):
            x = np.asarray(x, dtype=float)
            r = np.linalg.norm(x)
            return float(usp(r)) * sigma0.value(x[None, :])[0]

        def dA(x):
            x = np.asarray(x, dtype=float)
            r = np.linalg.norm(x)
            rhat = x / r
            out = base.derivative(x[None, :])[0]
            for sp, th in zip(fsp, thetas):
                out = out + (
                    float(sp(r, 1))
                    * rhat[:, None, None, None]
                    * th.value(x[None, :])[0][None]
                    + float(sp(r)) * th.derivative(x[None, :])[0]
                )
            return out

        def dsigma(x):
            x = np.asarray(x, dtype=float)
            r = np.linalg.norm(x)
            rhat = x / r
            s0 = sigma0.value(x[None, :])[0]
            ds0 = sigma0.derivative(x[None, :])[0]
            return (
                float(usp(r, 1)) * rhat[:, None, None] * s0[None]
                + float(usp(r)) * ds0
            )

        return FieldPair(
            m=self.m,
            A=A,
            sigma=sigma,
            dA=dA,
            dsigma=dsigma,
            r_in=float(self.mesh[0]),
            r_out=float(self.mesh[-1]),
        )

    def save(self, path) -> None:
        cols = self.angular_profiles() + [self.u]
        save_field_pair(path, self.m, 1, self.mesh, np.column_stack(cols))

    @classmethod
    def load(cls, path, base: ConeConnection, theta: OneFormTemplate,
             sigma0: ZeroFormTemplate,
             theta2: OneFormTemplate | None = None) -> "RadialProfilePair":
        m, _deg, mesh, block = load_field_pair(path)
        if m != base.m:
            raise FormError(f"rank mismatch: file {m}, base {base.m}")
        if block.shape[1] == 3 and theta2 is None:
            raise FormError("file carries two angular profiles; pass theta2")
        f2 = block[:, 1] if block.shape[1] == 3 else None
        return cls(mesh=mesh, f=block[:, 0], u=block[:, -1], base=base,
                   theta=theta, sigma0=sigma0,
                   theta2=theta2 if f2 is not None else None, f2=f2)


# ---------------------------------------------------------------------------
# shipped polynomial 3-form families


def euclidean_field() -> PolyFormField:
    """The constant Euclidean structure as a polynomial field."""
    from .g2 import euclidean_phi

    return PolyFormField.from_constant(euclidean_phi())


def linear_perturbation_field(eps: float) -> PolyFormField:
    """phi0 + eps * y_1 dy^123: the simplest linear deviation."""
    from .g2 import euclidean_phi
    from .polyfield import Poly7

    phi0 = euclidean_phi()
    polys = [Poly7.constant(c) for c in phi0.coeffs]
    pos3 = index_position(3)
    polys[pos3[(0, 1, 2)]] = polys[pos3[(0, 1, 2)]] + Poly7.variable(0) * eps
    return PolyFormField(3, polys)


def interior_perturbation_field(
    eps: float, M: np.ndarray | None = None
) -> PolyFormField:
    """phi0 + eps * interior(W, psi0) with W = Mx (M = identity gives the
    radial coassociative contraction; M in the stabilizer algebra gives
    the rotational family)."""
    from .g2 import coassociative, euclidean_phi
    from .polyfield import Poly7

    M = np.eye(DIM) if M is None else np.asarray(M, dtype=float)
    if M.shape != (DIM, DIM):
        raise FormError("vector-field matrix must be 7x7")
    phi0 = euclidean_phi()
    psi0 = coassociative(phi0)
    pos3 = index_position(3)
    polys = [Poly7.constant(c) for c in phi0.coeffs]
    for K, cK in zip(index_sets(4), psi0.coeffs):
        if cK == 0.0:
            continue
        for t in range(4):
            rest = K[:t] + K[t + 1:]
            sign = (-1.0) ** t
            w_comp = Poly7()
            for a in range(DIM):
                if M[K[t], a] != 0.0:
                    w_comp = w_comp + Poly7.variable(a) * float(M[K[t], a])
            polys[pos3[rest]] = polys[pos3[rest]] + w_comp * (eps * sign * cK)
    return PolyFormField(3, polys)


def radial_perturbation_field(
    eps: float, M: np.ndarray | None = None
) -> PolyFormField:
    """phi0 + eps * y-flat ^ interior(W, phi0) with W = Mx (M = identity
    gives the radial quadratic family; M in the stabilizer algebra gives
    half the Lie drag of phi0 along the flow of r^2 Mx, whose exact
    monopoles are gauged pullbacks of the model connection)."""
    from .g2 import euclidean_phi
    from .polyfield import Poly7

    M = np.eye(DIM) if M is None else np.asarray(M, dtype=float)
    if M.shape != (DIM, DIM):
        raise FormError("vector-field matrix must be 7x7")
    phi0 = euclidean_phi()
    pos3 = index_position(3)
    polys = [Poly7.constant(c) for c in phi0.coeffs]
    for K, cK in zip(index_sets(3), phi0.coeffs):
        if cK == 0.0:
            continue
        for t in range(3):
            rest = K[:t] + K[t + 1:]
            sgn_t = (-1.0) ** t
            w_comp = Poly7()
            for b in range(DIM):
                if M[K[t], b] != 0.0:
                    w_comp = w_comp + Poly7.variable(b) * float(M[K[t], b])
            for a in range(DIM):
                if a in rest:
                    continue
                trip = tuple(sorted(rest + (a,)))
                # parity of sorting dy^a dy^rest into increasing order
                sgn_a = 1.0
                for b in rest:
                    if b < a:
                        sgn_a = -sgn_a
                polys[pos3[trip]] = polys[pos3[trip]] + (
                    Poly7.variable(a)
                    * w_comp
                    * (eps * sgn_t * sgn_a * cK)
                )
    return PolyFormField(3, polys)


# ---------------------------------------------------------------------------
# polynomial test fields (exact derivatives)


def poly_field_pair(A_polys, sigma_polys, m: int, r_in: float = 0.0,
                    r_out: float = np.inf) -> FieldPair:
    """FieldPair from Poly7 coefficient tables: A_polys[i][a][b] and
    sigma_polys[a][b]; derivatives are exact."""

    def A(x):
        out = np.empty((DIM, m, m))
        for i in range(DIM):
            for a in range(m):
                for b in range(m):
                    out[i, a, b] = A_polys[i][a][b](x)
        return out

    def sigma(x):
        out = np.empty((m, m))
        for a in range(m):
            for b in range(m):
                out[a, b] = sigma_polys[a][b](x)
        return out

    def dA(x):
        out = np.empty((DIM, DIM, m, m))
        for i in range(DIM):
            for j in range(DIM):
                for a in range(m):
                    for b in range(m):
                        out[i, j, a, b] = A_polys[j][a][b].deriv(i)(x)
        return out

    def dsigma(x):
        out = np.empty((DIM, m, m))
        for i in range(DIM):
            for a in range(m):
                for b in range(m):
                    out[i, a, b] = sigma_polys[a][b].deriv(i)(x)
        return out

    return FieldPair(m=m, A=A, sigma=sigma, dA=dA, dsigma=dsigma,
                     r_in=r_in, r_out=r_out)


# ---------------------------------------------------------------------------
# binary serialization of radial-profile data
#
# Layout (little-endian): magic "G2FLD1\0\0", uint32 rank m, uint32 degree,
# uint32 mesh length n, n float64 mesh radii, then the row-major float64
# coefficient block (n rows, one per mesh radius; columns as documented by
# the writer, for profile pairs: f then u).


_MAGIC = b"G2FLD1\x00\x00"


def save_field_pair(path, m: int, degree: int, mesh: np.ndarray,
                    block: np.ndarray) -> None:
    mesh = np.asarray(mesh, dtype="<f8")
    block = np.ascontiguousarray(block, dtype="<f8")
    if block.shape[0] != mesh.shape[0]:
        raise FormError("coefficient block rows must match the mesh")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", m, degree, mesh.shape[0]))
        fh.write(struct.pack("<I", 1 if block.ndim == 1 else block.shape[1]))
        fh.write(mesh.tobytes())
        fh.write(block.tobytes())


def load_field_pair(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise FormError(f"{path}: bad magic {magic!r}")
        m, degree, n = struct.unpack("<III", fh.read(12))
        (ncols,) = struct.unpack("<I", fh.read(4))
        mesh = np.frombuffer(fh.read(8 * n), dtype="<f8")
        block = np.frombuffer(fh.read(8 * n * ncols), dtype="<f8")
        block = block.reshape(n, ncols) if ncols > 1 else block
    return m, degree, mesh.copy(), block.copy()
