"""Polynomial coefficient fields on R^7.

Test fields are polynomial so that derivatives, dilations and suprema are
exact (or exactly bounded), turning the rescaling inequalities into
machine-checkable statements.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.optimize import brentq

from .forms import DIM, FormError, KForm, index_position, index_sets

__all__ = ["Poly7", "PolyFormField", "max_quadratic_ball", "sup_abs_ball",
           "sup_norm_ball", "ball_grid"]


class Poly7:
    """Polynomial in y_1..y_7 as a map {exponent 7-tuple: coefficient}."""

    __slots__ = ("terms",)

    def __init__(self, terms: dict[tuple[int, ...], float] | None = None):
        self.terms = {}
        if terms:
            for e, c in terms.items():
                if c != 0.0:
                    self.terms[tuple(int(x) for x in e)] = float(c)

    @classmethod
    def constant(cls, c: float) -> "Poly7":
        return cls({(0,) * DIM: float(c)})

    @classmethod
    def variable(cls, i: int) -> "Poly7":
        e = [0] * DIM
        e[i] = 1
        return cls({tuple(e): 1.0})

    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Poly7.constant(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0.0) + c
        return Poly7(out)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Poly7.constant(other)
        return self + (-1.0) * other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Poly7({e: c * other for e, c in self.terms.items()})
        out: dict[tuple[int, ...], float] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Poly7(out)

    __rmul__ = __mul__

    def __neg__(self):
        return (-1.0) * self

    def deriv(self, i: int) -> "Poly7":
        out = {}
        for e, c in self.terms.items():
            if e[i] > 0:
                e2 = list(e)
                e2[i] -= 1
                out[tuple(e2)] = out.get(tuple(e2), 0.0) + c * e[i]
        return Poly7(out)

    def scale_vars(self, s: float) -> "Poly7":
        """p(s*y) as a new polynomial."""
        return Poly7({e: c * s ** sum(e) for e, c in self.terms.items()})

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        """Evaluate on points of shape (..., 7)."""
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1])
        for e, c in self.terms.items():
            mon = np.ones(pts.shape[:-1])
            for i, p in enumerate(e):
                if p:
                    mon = mon * pts[..., i] ** p
            out += c * mon
        return out

    def value_at_origin(self) -> float:
        return self.terms.get((0,) * DIM, 0.0)

    def is_zero(self) -> bool:
        return not self.terms

    # quadratic decomposition p = c0 + b.y + y^T Q y (requires degree <= 2)
    def quadratic_parts(self):
        c0 = 0.0
        b = np.zeros(DIM)
        Q = np.zeros((DIM, DIM))
        for e, c in self.terms.items():
            d = sum(e)
            if d == 0:
                c0 = c
            elif d == 1:
                b[e.index(1)] += c
            elif d == 2:
                nz = [i for i, p in enumerate(e) if p]
                if len(nz) == 1:
                    Q[nz[0], nz[0]] += c
                else:
                    i, j = nz
                    Q[i, j] += c / 2.0
                    Q[j, i] += c / 2.0
            else:
                raise ValueError("polynomial degree exceeds 2")
        return c0, b, Q


# ---------------------------------------------------------------------------
# exact maximization of quadratics over a ball (for exact sup norms)


def max_quadratic_ball(c0: float, b: np.ndarray, Q: np.ndarray, r: float) -> float:
    """max of c0 + b.y + y^T Q y over |y| <= r (exact, Q symmetric)."""
    b = np.asarray(b, dtype=float)
    Q = 0.5 * (np.asarray(Q, dtype=float) + np.asarray(Q, dtype=float).T)
    w, V = np.linalg.eigh(Q)
    beta = V.T @ b
    best = c0  # y = 0 always feasible
    # interior stationary point (only a max candidate if Q <= 0)
    if w.max() < 0:
        y = -0.5 * np.linalg.solve(Q, b) if np.linalg.norm(b) else np.zeros(DIM)
        if np.linalg.norm(y) <= r:
            best = max(best, c0 + b @ y + y @ Q @ y)
    # boundary: y(mu) = (2 mu I - 2 Q)^{-1} b with mu >= w.max()
    lam = w.max()
    tol = 1e-13 * max(1.0, abs(lam), np.linalg.norm(b) / max(r, 1e-300))

    def norm2(mu):
        d = 2.0 * (mu - w)
        return float(np.sum((beta / d) ** 2))

    top = np.abs(beta[np.abs(w - lam) < 1e-12 * max(1.0, abs(lam))])
    hard = top.size == 0 or np.all(top < 1e-14 * max(1.0, np.linalg.norm(b)))
    if np.linalg.norm(b) == 0.0:
        y = r * V[:, np.argmax(w)]
        best = max(best, c0 + y @ Q @ y)
    elif hard:
        # b has no component on the top eigenspace: fill up with eigenvector
        d = 2.0 * (lam - w)
        safe = np.abs(d) > 1e-12 * max(1.0, abs(lam))
        y0 = V[:, safe] @ (beta[safe] / d[safe])
        n0 = np.linalg.norm(y0)
        if n0 <= r:
            t = np.sqrt(max(r * r - n0 * n0, 0.0))
            vtop = V[:, np.argmax(w)]
            for s in (t, -t):
                y = y0 + s * vtop
                best = max(best, c0 + b @ y + y @ Q @ y)
        else:
            best = max(best, _boundary_max(c0, b, Q, w, V, beta, r, lam))
    else:
        best = max(best, _boundary_max(c0, b, Q, w, V, beta, r, lam))
    return float(best)


def _boundary_max(c0, b, Q, w, V, beta, r, lam):
    # solve |y(mu)| = r on (lam, inf); |y| decreases monotonically there
    lo = lam + 1e-14 * max(1.0, abs(lam))
    while np.sqrt(max(_n2(beta, w, lo), 0.0)) < r:
        lo = lam + (lo - lam) * 0.5
        if lo - lam < 1e-200:
            break
    hi = lam + max(1.0, abs(lam))
    while np.sqrt(_n2(beta, w, hi)) > r:
        hi = lam + (hi - lam) * 2.0
    f = lambda mu: np.sqrt(_n2(beta, w, mu)) - r
    if f(lo) < 0:
        mu = lo  # degenerate; accept closest
    else:
        mu = brentq(f, lo, hi, xtol=1e-15, rtol=1e-15)
    y = V @ (beta / (2.0 * (mu - w)))
    return c0 + b @ y + y @ Q @ y


def _n2(beta, w, mu):
    return float(np.sum((beta / (2.0 * (mu - w))) ** 2))


def ball_grid(r: float, n: int = 10_000, seed: int = 0) -> np.ndarray:
    """Deterministic radial-angular sample grid of the closed ball."""
    rng = np.random.default_rng(seed)
    n_dir = max(1, n // 25)
    dirs = rng.standard_normal((n_dir, DIM))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.linspace(0.0, r, 25)
    pts = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, DIM)
    return pts


def sup_abs_ball(p: Poly7, r: float, grid_points: int = 10_000) -> float:
    """sup |p| over the closed ball of radius r; exact for degree <= 2."""
    if p.is_zero():
        return 0.0
    if p.degree() <= 2:
        c0, b, Q = p.quadratic_parts()
        return max(
            max_quadratic_ball(c0, b, Q, r),
            max_quadratic_ball(-c0, -b, -Q, r),
        )
    pts = ball_grid(r, grid_points)
    return float(np.max(np.abs(p(pts))))


def sup_norm_ball(polys: list[Poly7], r: float, grid_points: int = 10_000) -> float:
    """sup of the Euclidean norm of a vector of polynomials over the ball.

    Exact when all components are affine (the squared norm is then a
    quadratic, maximized in closed form); dense-grid supremum otherwise.
    """
    polys = [p for p in polys if not p.is_zero()]
    if not polys:
        return 0.0
    if len(polys) == 1:
        return sup_abs_ball(polys[0], r, grid_points)
    if all(p.degree() <= 1 for p in polys):
        c0 = 0.0
        b = np.zeros(DIM)
        Q = np.zeros((DIM, DIM))
        for p in polys:
            a0, bv, _ = p.quadratic_parts()
            c0 += a0 * a0
            b += 2.0 * a0 * bv
            Q += np.outer(bv, bv)
        return float(np.sqrt(max(max_quadratic_ball(c0, b, Q, r), 0.0)))
    pts = ball_grid(r, grid_points)
    vals = np.stack([p(pts) for p in polys])
    return float(np.max(np.sqrt(np.sum(vals**2, axis=0))))


# ---------------------------------------------------------------------------
# polynomial-coefficient differential forms


@dataclass
class PolyFormField:
    """Degree-k form field whose coefficients are polynomials in y."""

    degree: int
    coeff_polys: list[Poly7]

    def __post_init__(self):
        n = comb(DIM, self.degree)
        if len(self.coeff_polys) != n:
            raise FormError(f"need {n} coefficient polynomials")

    @classmethod
    def from_constant(cls, form: KForm) -> "PolyFormField":
        return cls(form.degree, [Poly7.constant(c) for c in form.coeffs])

    @classmethod
    def zero(cls, degree: int) -> "PolyFormField":
        return cls(degree, [Poly7() for _ in range(comb(DIM, degree))])

    def at(self, point: np.ndarray) -> KForm:
        pt = np.asarray(point, dtype=float)
        return KForm(self.degree, np.array([p(pt) for p in self.coeff_polys]))

    def value_at_origin(self) -> KForm:
        return KForm(
            self.degree, np.array([p.value_at_origin() for p in self.coeff_polys])
        )

    def substitute_scaled(self, s: float) -> "PolyFormField":
        """Coefficients become p(s * y)."""
        return PolyFormField(
            self.degree, [p.scale_vars(s) for p in self.coeff_polys]
        )

    def __add__(self, other: "PolyFormField") -> "PolyFormField":
        if self.degree != other.degree:
            raise FormError("degree mismatch")
        return PolyFormField(
            self.degree,
            [a + b for a, b in zip(self.coeff_polys, other.coeff_polys)],
        )

    def __mul__(self, s) -> "PolyFormField":
        if isinstance(s, Poly7):
            return PolyFormField(self.degree, [p * s for p in self.coeff_polys])
        return PolyFormField(self.degree, [p * float(s) for p in self.coeff_polys])

    __rmul__ = __mul__

    def max_poly_degree(self) -> int:
        return max(p.degree() for p in self.coeff_polys)

    # ---- text serialization: degree header, then per nonzero monomial one
    # line "i j k  e1 .. e7  value" (1-based form indices, exponents).

    def save(self, path) -> None:
        lines = [f"degree {self.degree}"]
        for idx, poly in zip(index_sets(self.degree), self.coeff_polys):
            head = " ".join(str(i + 1) for i in idx)
            for e, c in sorted(poly.terms.items()):
                exps = " ".join(str(x) for x in e)
                lines.append(f"{head} {exps} {c!r}".strip())
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "PolyFormField":
        with open(path) as fh:
            raw = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
        if not raw or not raw[0].startswith("degree"):
            raise FormError(f"{path}: missing 'degree k' header")
        k = int(raw[0].split()[1])
        pos = index_position(k)
        polys = [Poly7() for _ in range(comb(DIM, k))]
        for ln in raw[1:]:
            parts = ln.split()
            idx = tuple(int(p) - 1 for p in parts[:k])
            exps = tuple(int(p) for p in parts[k : k + DIM])
            val = float(parts[k + DIM])
            p = polys[pos[idx]]
            p.terms[exps] = p.terms.get(exps, 0.0) + val
        return cls(k, polys)
