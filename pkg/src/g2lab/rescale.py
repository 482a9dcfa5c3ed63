"""The dilation pipeline x = lambda * y: rescaled 3-form fields, C^5
deviation bookkeeping on shrinking balls, pullback of monopole data, and
the Hodge covariance identity connecting the big-ball and small-ball
monopole equations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forms import DIM, FormError, KForm, MetricTensor, hodge, pullback
from .polyfield import Poly7, PolyFormField, sup_norm_ball

__all__ = [
    "InconsistencyError",
    "ScaleMap",
    "C5Report",
    "rescale_phi",
    "c5_deviation",
    "pullback_monopole",
    "check_star_covariance",
]

MAX_ORDER = 5


class InconsistencyError(RuntimeError):
    """A chain-rule bound that is a theorem failed numerically: a bug."""


@dataclass(frozen=True)
class ScaleMap:
    """The dilation x = Gamma(y) = lambda * y."""

    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise FormError("scale factor must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return self.lam * np.eye(DIM)


def rescale_phi(phi: PolyFormField, s: ScaleMap) -> PolyFormField:
    """Coefficientwise transport to the big ball: the output at x carries
    the coefficients of phi at y = x / lambda.  Constant fields are
    fixed points."""
    if phi.degree != 3:
        raise FormError("rescale_phi expects a 3-form field")
    return phi.substitute_scaled(1.0 / s.lam)


@dataclass
class C5Report:
    c_phi: float
    sup_norms: list[float]  # s_0 .. s_5 (max over components, small ball)
    margins: list[float]  # c_phi/lambda minus rescaled sup, orders 0..5
    ball_radius: float
    rescaled_ball_radius: float
    lam: float
    C: float
    sampled: bool  # True when any supremum came from a grid, not exact

    def as_dict(self) -> dict:
        return {
            "c_phi": self.c_phi,
            "sup_norms": self.sup_norms,
            "margins": self.margins,
            "ball_radius": self.ball_radius,
            "rescaled_ball_radius": self.rescaled_ball_radius,
            "lambda": self.lam,
            "C": self.C,
            "sampled": self.sampled,
        }


def _derivative_components(p: Poly7, order: int) -> list[Poly7]:
    """All distinct order-th partials, each repeated per its multiplicity
    so that the vector norm equals the full derivative-tensor norm."""
    from itertools import combinations_with_replacement
    from math import factorial

    out = []
    for combo in combinations_with_replacement(range(DIM), order):
        q = p
        for i in combo:
            q = q.deriv(i)
        if q.is_zero():
            continue
        counts = [combo.count(i) for i in set(combo)]
        mult = factorial(order)
        for c in counts:
            mult //= factorial(c)
        # repeat sqrt(mult) times in norm: scale the component instead
        out.append(q * float(np.sqrt(mult)))
    return out


def c5_deviation(
    phi: PolyFormField, s: ScaleMap, C: float = 1.0, grid_points: int = 10_000
) -> C5Report:
    """The deviation constant c_phi and the ladder for the rescaled field.

    c_phi is C times the sum over components of the C^5 norm (sum of the
    per-order sups) of phi - phi(O) on B(1/(4 lambda)).  The k-th
    x-derivative of the transported coefficients is lambda^{-k} times the
    k-th y-derivative at y = x/lambda, so the rescaled order-k sup on
    B(1/4) equals s_k / lambda^k; each must stay below c_phi/lambda, and
    a violation raises, since the bound is a theorem for C >= 1 and
    lambda >= 1.
    """
    if C <= 0:
        raise FormError("C must be positive")
    if s.lam < 1.0:
        raise FormError("deviation ladder needs lambda >= 1")
    r_small = 1.0 / (4.0 * s.lam)
    deviations = [
        p - p.value_at_origin() for p in phi.coeff_polys
    ]
    sup_norms = []
    sampled = False
    per_component_c5 = np.zeros(len(deviations))
    for order in range(MAX_ORDER + 1):
        worst = 0.0
        for n, p in enumerate(deviations):
            comps = _derivative_components(p, order)
            exact = all(q.degree() <= 1 for q in comps) or (
                len(comps) <= 1 and all(q.degree() <= 2 for q in comps)
            )
            sampled = sampled or (bool(comps) and not exact)
            val = sup_norm_ball(comps, r_small, grid_points)
            worst = max(worst, val)
            per_component_c5[n] += val
        sup_norms.append(worst)
    c_phi = float(C * np.sum(per_component_c5))

    margins = [
        c_phi / s.lam - sup_norms[order] / s.lam**order
        for order in range(MAX_ORDER + 1)
    ]
    tol = -1e-12 * max(1.0, c_phi)
    if any(m < tol for m in margins):
        raise InconsistencyError(
            f"chain-rule deviation bound violated: margins {margins}"
        )
    return C5Report(
        c_phi=c_phi,
        sup_norms=sup_norms,
        margins=margins,
        ball_radius=r_small,
        rescaled_ball_radius=0.25,
        lam=s.lam,
        C=C,
        sampled=sampled,
    )


def pullback_monopole(pair, s: ScaleMap):
    """Transport (A, sigma) on B(1/4) to B(1/(4 lambda)): the connection
    pulls back as a 1-form and the Higgs field picks up the factor lambda."""
    from .fields import FieldPair

    lam = s.lam

    def A(x):
        return lam * pair.A(np.asarray(x, dtype=float) * lam)

    def sigma(x):
        return lam * pair.sigma(np.asarray(x, dtype=float) * lam)

    dA = None
    if pair.dA is not None:
        dA = lambda x: lam * lam * pair.dA(np.asarray(x, dtype=float) * lam)
    dsigma = None
    if pair.dsigma is not None:
        dsigma = lambda x: lam * lam * pair.dsigma(np.asarray(x, dtype=float) * lam)

    return FieldPair(
        m=pair.m,
        A=A,
        sigma=sigma,
        dA=dA,
        dsigma=dsigma,
        r_in=pair.r_in / lam,
        r_out=pair.r_out / lam,
    )


def check_star_covariance(g: MetricTensor, s: ScaleMap, a: KForm) -> float:
    """Defect of Gamma^*(star_{g~} alpha) = lambda^5 star_g (Gamma^* alpha)
    for 1-forms, where g~ is the pushed metric with Gamma^* g~ = lambda^2 g
    (so g~ = g for the dilation).  Identically zero in exact arithmetic."""
    if a.degree != 1:
        raise FormError("covariance check is stated for 1-forms")
    M = s.matrix
    lhs = pullback(M, hodge(g, a))
    rhs = (s.lam**5) * hodge(g, pullback(M, a))
    # normalized so the contract is scale-free
    return (lhs - rhs).norm() / max(1.0, rhs.norm())
