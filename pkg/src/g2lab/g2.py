"""Deriving metric, coassociative 4-form and volume from a 3-form, and
normalizing a pointwise nondegenerate 3-form to the Euclidean model.

The phi -> g construction is the classical contraction formula:
B_ij = coefficient of dy^{1...7} in (i_{e_i} phi) ^ (i_{e_j} phi) ^ phi,
g = B * det(B)^{-1/9} up to the constant fixed by phi0 -> identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .forms import (
    DIM,
    FormError,
    KForm,
    MetricTensor,
    basis_form,
    hodge,
    interior,
    pullback,
    pullback_operator,
    rep_derivative,
    wedge,
)

__all__ = [
    "DegenerateStructureError",
    "G2Structure",
    "NormalizationResult",
    "euclidean_phi",
    "metric_from_phi",
    "coassociative",
    "structure_from_phi",
    "normalize",
    "stabilizer_basis",
]


class DegenerateStructureError(ValueError):
    """The 3-form does not define a positive G2-structure."""


_PHI0_TERMS = (
    ((0, 1, 2), 1.0),
    ((0, 3, 4), -1.0),
    ((0, 5, 6), -1.0),
    ((1, 3, 5), -1.0),
    ((1, 4, 6), 1.0),
    ((2, 3, 6), -1.0),
    ((2, 4, 5), -1.0),
)

# B(phi0) = 6 * Id, so the anchor constant making phi0 map to the identity
_B_CALIBRATION = 6.0 ** (-2.0 / 9.0)


def euclidean_phi() -> KForm:
    """The constant Euclidean G2 3-form
    dy^123 - dy^145 - dy^167 - dy^246 + dy^257 - dy^347 - dy^356."""
    out = KForm(3, np.zeros(35))
    for idx, val in _PHI0_TERMS:
        out = out + val * basis_form(idx)
    return out


def _b_matrix(phi: KForm) -> np.ndarray:
    if phi.degree != 3:
        raise FormError("metric derivation needs a 3-form")
    contractions = [interior(np.eye(DIM)[i], phi) for i in range(DIM)]
    B = np.empty((DIM, DIM))
    for i in range(DIM):
        for j in range(i, DIM):
            top = wedge(wedge(contractions[i], contractions[j]), phi)
            B[i, j] = B[j, i] = top.coeffs[0]
    return B


def metric_from_phi(phi: KForm) -> MetricTensor:
    """Metric of a nondegenerate 3-form; homogeneous of degree 2/3."""
    B = _b_matrix(phi)
    detB = np.linalg.det(B)
    if detB <= 0 or np.linalg.eigvalsh(B).min() <= 0:
        raise DegenerateStructureError(
            "contraction matrix is not positive definite; "
            "the 3-form is not a (positively oriented) G2-form"
        )
    g = B * detB ** (-1.0 / 9.0) * _B_CALIBRATION
    return MetricTensor(g)


def coassociative(phi: KForm) -> KForm:
    """psi = *_{g(phi)} phi."""
    return hodge(metric_from_phi(phi), phi)


@dataclass(frozen=True)
class G2Structure:
    phi: KForm
    g: MetricTensor
    psi: KForm
    vol: KForm

    def __post_init__(self):
        if (self.psi - hodge(self.g, self.phi)).norm() > 1e-10 * max(
            1.0, self.psi.norm()
        ):
            raise DegenerateStructureError("psi is not the Hodge dual of phi")
        ref_vol = hodge(self.g, KForm(0, np.ones(1)))
        if (self.vol - ref_vol).norm() > 1e-10 * max(1.0, ref_vol.norm()):
            raise DegenerateStructureError("vol is not the metric volume form")


def structure_from_phi(phi: KForm) -> G2Structure:
    g = metric_from_phi(phi)
    return G2Structure(phi, g, hodge(g, phi), hodge(g, KForm(0, np.ones(1))))


# ---------------------------------------------------------------------------
# normalization to the Euclidean model


@dataclass(frozen=True)
class NormalizationResult:
    L: np.ndarray
    residual: float
    converged: bool
    restarts_used: int
    iterations: int


def _so7_basis() -> list[np.ndarray]:
    basis = []
    for i in range(DIM):
        for j in range(i + 1, DIM):
            X = np.zeros((DIM, DIM))
            X[i, j] = 1.0
            X[j, i] = -1.0
            basis.append(X)
    return basis


def stabilizer_basis(phi: KForm | None = None, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (k, 7, 7) of the infinitesimal stabilizer of phi
    inside so(7): the X with d/dt pullback(exp(tX), phi) = 0.  For a
    3-form defining a positive structure this algebra is 14-dimensional."""
    from .forms import rep_derivative

    target = euclidean_phi() if phi is None else phi
    basis = _so7_basis()
    M = np.stack([rep_derivative(X, 3) @ target.coeffs for X in basis])
    _, S, Vt = np.linalg.svd(M.T, full_matrices=True)
    null = Vt[np.sum(S > tol * max(1.0, S[0] if len(S) else 1.0)):]
    return np.einsum("kb,bij->kij", null, np.stack(basis))


def _align_so7(phi_w: KForm, Q0: np.ndarray, phi0: np.ndarray, tol: float,
               max_iter: int):
    """Minimize |pullback(Q, phi_w) - phi0| over SO(7) by Gauss-Newton with
    the exponential retraction Q <- Q expm(X)."""
    basis = _so7_basis()
    reps = [rep_derivative(X, 3) for X in basis]
    Q = Q0.copy()
    c = pullback_operator(Q, 3) @ phi_w.coeffs
    r = c - phi0
    fval = r @ r
    it = 0
    while it < max_iter:
        it += 1
        if np.sqrt(fval) <= tol:
            break
        J = np.stack([D @ c for D in reps], axis=1)  # (35, 21)
        x, *_ = np.linalg.lstsq(J, -r, rcond=None)
        grad = J.T @ r
        # backtracking on the retracted step; gradient fallback if GN stalls
        step = x
        accepted = False
        for fallback in range(2):
            alpha = 1.0
            for _ in range(30):
                X = sum(a * B for a, B in zip(alpha * step, basis))
                Q_new = Q @ expm(X)
                c_new = pullback_operator(Q_new, 3) @ phi_w.coeffs
                r_new = c_new - phi0
                f_new = r_new @ r_new
                if f_new <= fval + 1e-4 * alpha * (grad @ step):
                    Q, c, r, fval = Q_new, c_new, r_new, f_new
                    accepted = True
                    break
                alpha *= 0.5
            if accepted:
                break
            step = -grad  # steepest descent retry
        if not accepted:
            break
    return Q, float(np.sqrt(fval)), it


def normalize(
    phi_at_point: KForm,
    tol: float = 1e-8,
    max_iter: int = 500,
    restarts: int = 16,
    seed: int = 0,
) -> NormalizationResult:
    """Find L with pullback(L, phi) ~ phi0.

    Stage 1 whitens by g^{-1/2} so the induced metric becomes the identity;
    stage 2 aligns within SO(7) by retracted Gauss-Newton, with random
    restarts since the quotient SO(7)/G2 landscape has saddles.
    """
    g = metric_from_phi(phi_at_point)
    w, V = np.linalg.eigh(g.entries)
    L1 = V @ np.diag(w ** -0.5) @ V.T
    phi_w = pullback(L1, phi_at_point)
    phi0 = euclidean_phi().coeffs

    rng = np.random.default_rng(seed)
    best = None
    total_iters = 0
    for t in range(max(1, restarts)):
        if t == 0:
            Q0 = np.eye(DIM)
        else:
            A = rng.standard_normal((DIM, DIM))
            Q0, _ = np.linalg.qr(A)
            if np.linalg.det(Q0) < 0:
                Q0[:, 0] *= -1.0
        Q, res, iters = _align_so7(phi_w, Q0, phi0, tol, max_iter)
        total_iters += iters
        if best is None or res < best[1]:
            best = (Q, res, t + 1)
        if res <= tol:
            break
    Q, res, used = best
    return NormalizationResult(
        L=L1 @ Q,
        residual=res,
        converged=res <= tol,
        restarts_used=used,
        iterations=total_iters,
    )
