"""Exterior algebra of alternating forms on R^7.

Forms are stored densely: a degree-k form is a vector of length C(7,k)
indexed by strictly increasing multi-indices in lexicographic order.
The orientation is fixed once and for all: dy^{1...7} is positive.

Indices are 0-based internally; the text serialization is 1-based.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

__all__ = [
    "FormError",
    "KForm",
    "LieValuedKForm",
    "MetricTensor",
    "index_sets",
    "index_position",
    "merge_sign",
    "complement",
    "wedge",
    "wedge_lie_scalar",
    "hodge",
    "hodge_operator",
    "hodge_lie",
    "interior",
    "pullback",
    "pullback_operator",
    "pullback_metric",
    "rep_derivative",
    "basis_form",
    "save_form",
    "load_form",
]

DIM = 7


class FormError(ValueError):
    """Rejected input: bad degree, singular matrix, non-SPD metric, ..."""


@lru_cache(maxsize=None)
def index_sets(k: int) -> tuple[tuple[int, ...], ...]:
    """All strictly increasing k-tuples from 0..6, lexicographic."""
    if not 0 <= k <= DIM:
        raise FormError(f"degree {k} out of range 0..7")
    return tuple(itertools.combinations(range(DIM), k))


@lru_cache(maxsize=None)
def index_position(k: int) -> dict[tuple[int, ...], int]:
    return {idx: n for n, idx in enumerate(index_sets(k))}


def merge_sign(a: tuple[int, ...], b: tuple[int, ...]) -> int:
    """Sign of the shuffle sorting the concatenation of two disjoint
    increasing tuples; 0 if they intersect."""
    if set(a) & set(b):
        return 0
    inversions = sum(1 for i in a for j in b if i > j)
    return -1 if inversions % 2 else 1


@lru_cache(maxsize=None)
def complement(idx: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(i for i in range(DIM) if i not in idx)


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class KForm:
    """Alternating k-form with dense coefficients over sorted multi-indices."""

    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (comb(DIM, self.degree),):
            raise FormError(
                f"degree-{self.degree} form needs {comb(DIM, self.degree)} "
                f"coefficients, got shape {c.shape}"
            )
        if not np.all(np.isfinite(c)):
            raise FormError("non-finite coefficient")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __add__(self, other: "KForm") -> "KForm":
        if self.degree != other.degree:
            raise FormError("degree mismatch in sum")
        return KForm(self.degree, self.coeffs + other.coeffs)

    def __sub__(self, other: "KForm") -> "KForm":
        if self.degree != other.degree:
            raise FormError("degree mismatch in difference")
        return KForm(self.degree, self.coeffs - other.coeffs)

    def __mul__(self, s: float) -> "KForm":
        return KForm(self.degree, self.coeffs * float(s))

    __rmul__ = __mul__

    def __neg__(self) -> "KForm":
        return KForm(self.degree, -self.coeffs)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))


@dataclass(frozen=True)
class LieValuedKForm:
    """k-form with so(m)-valued coefficients, shape (C(7,k), m, m)."""

    degree: int
    coeffs: np.ndarray  # (n_k, m, m)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        n = comb(DIM, self.degree)
        if c.ndim != 3 or c.shape[0] != n or c.shape[1] != c.shape[2]:
            raise FormError(f"expected shape ({n}, m, m), got {c.shape}")
        scale = max(1.0, float(np.max(np.abs(c)))) if c.size else 1.0
        skew = np.max(np.abs(c + np.swapaxes(c, 1, 2))) if c.size else 0.0
        if skew > 1e-12 * scale:
            raise FormError(f"coefficient matrices not antisymmetric ({skew:.2e})")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def rank(self) -> int:
        return self.coeffs.shape[1]

    def __add__(self, other: "LieValuedKForm") -> "LieValuedKForm":
        if self.degree != other.degree:
            raise FormError("degree mismatch in sum")
        return LieValuedKForm(self.degree, self.coeffs + other.coeffs)

    def __sub__(self, other: "LieValuedKForm") -> "LieValuedKForm":
        if self.degree != other.degree:
            raise FormError("degree mismatch in difference")
        return LieValuedKForm(self.degree, self.coeffs - other.coeffs)

    def __mul__(self, s: float) -> "LieValuedKForm":
        return LieValuedKForm(self.degree, self.coeffs * float(s))

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))


@dataclass(frozen=True)
class MetricTensor:
    """Symmetric positive-definite 7x7 metric."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        if m.shape != (DIM, DIM):
            raise FormError(f"metric must be 7x7, got {m.shape}")
        scale = max(1.0, float(np.max(np.abs(m))))
        if np.max(np.abs(m - m.T)) > 1e-12 * scale:
            raise FormError("metric not symmetric")
        if np.linalg.eigvalsh(m).min() <= 0:
            raise FormError("metric not positive definite")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)


def basis_form(idx: tuple[int, ...]) -> KForm:
    """dy^{idx} for a strictly increasing 0-based multi-index."""
    idx = tuple(idx)
    k = len(idx)
    c = np.zeros(comb(DIM, k))
    c[index_position(k)[idx]] = 1.0
    return KForm(k, c)


# ---------------------------------------------------------------------------
# wedge


@lru_cache(maxsize=None)
def _wedge_table(k: int, l: int):
    """COO triples (ia, ib, j, sign) for Lambda^k x Lambda^l -> Lambda^{k+l}."""
    rows_a, rows_b, rows_j, signs = [], [], [], []
    pos = index_position(k + l)
    for ia, A in enumerate(index_sets(k)):
        for ib, B in enumerate(index_sets(l)):
            s = merge_sign(A, B)
            if s == 0:
                continue
            rows_a.append(ia)
            rows_b.append(ib)
            rows_j.append(pos[tuple(sorted(A + B))])
            signs.append(float(s))
    return (
        np.array(rows_a, dtype=int),
        np.array(rows_b, dtype=int),
        np.array(rows_j, dtype=int),
        np.array(signs),
    )


def wedge(a: KForm, b: KForm) -> KForm:
    """Exterior product of scalar forms."""
    k, l = a.degree, b.degree
    if k + l > DIM:
        raise FormError(f"degree overflow: {k} + {l} > 7")
    ia, ib, j, s = _wedge_table(k, l)
    out = np.zeros(comb(DIM, k + l))
    np.add.at(out, j, s * a.coeffs[ia] * b.coeffs[ib])
    return KForm(k + l, out)


def wedge_lie_scalar(a: LieValuedKForm, b: KForm) -> LieValuedKForm:
    """Wedge of a Lie-algebra-valued form with a scalar form."""
    k, l = a.degree, b.degree
    if k + l > DIM:
        raise FormError(f"degree overflow: {k} + {l} > 7")
    ia, ib, j, s = _wedge_table(k, l)
    m = a.rank
    out = np.zeros((comb(DIM, k + l), m, m))
    np.add.at(out, j, (s * b.coeffs[ib])[:, None, None] * a.coeffs[ia])
    return LieValuedKForm(k + l, out)


# ---------------------------------------------------------------------------
# Hodge star


def _check_spd(g: MetricTensor) -> np.ndarray:
    return g.entries


def hodge_operator(g: MetricTensor, k: int) -> np.ndarray:
    """Matrix of *_g : Lambda^k -> Lambda^{7-k} in the multi-index bases.

    General-metric formula: raise the k indices with g^{-1} (minors of the
    inverse), contract with the Levi-Civita symbol, scale by sqrt(det g).
    """
    gm = _check_spd(g)
    idx_k = index_sets(k)
    n_k = len(idx_k)
    if np.allclose(gm, np.eye(DIM), atol=0.0, rtol=0.0):
        # Euclidean fast path
        raised = np.eye(n_k)
        root_det = 1.0
    else:
        ginv = np.linalg.inv(gm)
        if k == 0:
            raised = np.ones((1, 1))
        else:
            arr = np.array(idx_k)
            sub = ginv[arr[:, None, :, None], arr[None, :, None, :]]
            raised = np.linalg.det(sub)  # (n_k, n_k): minors of g^{-1}
        root_det = float(np.sqrt(np.linalg.det(gm)))
    pos_c = index_position(DIM - k)
    op = np.zeros((comb(DIM, DIM - k), n_k))
    for i, I in enumerate(idx_k):
        Ic = complement(I)
        op[pos_c[Ic]] += merge_sign(I, Ic) * root_det * raised[i]
    return op


def hodge(g: MetricTensor, a: KForm) -> KForm:
    return KForm(DIM - a.degree, hodge_operator(g, a.degree) @ a.coeffs)


def hodge_lie(g: MetricTensor, a: LieValuedKForm) -> LieValuedKForm:
    op = hodge_operator(g, a.degree)
    return LieValuedKForm(DIM - a.degree, np.tensordot(op, a.coeffs, axes=(1, 0)))


# ---------------------------------------------------------------------------
# interior product


def interior(v: np.ndarray, a: KForm) -> KForm:
    """Contraction of the first slot with a vector: an antiderivation."""
    if a.degree == 0:
        raise FormError("interior product of a 0-form")
    v = np.asarray(v, dtype=float)
    if v.shape != (DIM,):
        raise FormError("vector must have 7 components")
    k = a.degree
    pos = index_position(k - 1)
    out = np.zeros(comb(DIM, k - 1))
    for i, I in enumerate(index_sets(k)):
        ci = a.coeffs[i]
        if ci == 0.0:
            continue
        for t in range(k):
            rest = I[:t] + I[t + 1 :]
            out[pos[rest]] += ((-1) ** t) * v[I[t]] * ci
    return KForm(k - 1, out)


# ---------------------------------------------------------------------------
# pullbacks


def pullback_operator(M: np.ndarray, k: int) -> np.ndarray:
    """Matrix P with (M^* a)_J = sum_I P[J, I] a_I, P[J, I] = det M[I, J]."""
    M = np.asarray(M, dtype=float)
    if M.shape != (DIM, DIM):
        raise FormError("pullback matrix must be 7x7")
    if abs(np.linalg.det(M)) < 1e-300:
        raise FormError("singular pullback matrix")
    if k == 0:
        return np.ones((1, 1))
    arr = np.array(index_sets(k))
    sub = M[arr[None, :, None, :], arr[:, None, :, None]]
    # sub[J, I, a, b] = M[I_a, J_b]
    return np.linalg.det(sub)


def pullback(M: np.ndarray, a: KForm) -> KForm:
    return KForm(a.degree, pullback_operator(M, a.degree) @ a.coeffs)


def pullback_metric(M: np.ndarray, g: MetricTensor) -> MetricTensor:
    M = np.asarray(M, dtype=float)
    return MetricTensor(M.T @ g.entries @ M)


def rep_derivative(X: np.ndarray, k: int) -> np.ndarray:
    """d/dt at t=0 of pullback_operator(I + tX, k): the induced gl(7) action
    on Lambda^k."""
    X = np.asarray(X, dtype=float)
    pos = index_position(k)
    n = comb(DIM, k)
    D = np.zeros((n, n))
    for i, I in enumerate(index_sets(k)):
        for t in range(k):
            for j in range(DIM):
                if X[I[t], j] == 0.0:
                    continue
                if j in I and j != I[t]:
                    continue
                new = I[:t] + (j,) + I[t + 1 :]
                # sort and pick up the sign
                order = np.argsort(new)
                srt = tuple(new[o] for o in order)
                if len(set(srt)) < k:
                    continue
                sign = _perm_sign(tuple(order))
                D[pos[srt], i] += sign * X[I[t], j]
    return D


@lru_cache(maxsize=None)
def _perm_sign(order: tuple[int, ...]) -> int:
    inv = sum(
        1
        for a in range(len(order))
        for b in range(a + 1, len(order))
        if order[a] > order[b]
    )
    return -1 if inv % 2 else 1


# ---------------------------------------------------------------------------
# text serialization: degree header then one line per nonzero coefficient,
# 1-based indices followed by the value.


def save_form(a: KForm, path) -> None:
    lines = [f"degree {a.degree}"]
    for idx, c in zip(index_sets(a.degree), a.coeffs):
        if c != 0.0:
            ones = " ".join(str(i + 1) for i in idx)
            lines.append((ones + " " if ones else "") + repr(float(c)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_form(path) -> KForm:
    with open(path) as fh:
        raw = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not raw or not raw[0].startswith("degree"):
        raise FormError(f"{path}: missing 'degree k' header")
    k = int(raw[0].split()[1])
    coeffs = np.zeros(comb(DIM, k))
    pos = index_position(k)
    for ln in raw[1:]:
        parts = ln.split()
        idx = tuple(int(p) - 1 for p in parts[:k])
        if idx not in pos:
            raise FormError(f"{path}: bad multi-index {parts[:k]}")
        coeffs[pos[idx]] = float(parts[k])
    return KForm(k, coeffs)
