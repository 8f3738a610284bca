"""Subspaces and unital *-subalgebras of M_d(C).

Subspaces are held as orthonormal frames of column-stacked matrices, so the
frame inner product is the Hilbert-Schmidt inner product.  For a bcp map the
multiplicative domain is exactly the set of matrices whose Hilbert-Schmidt norm
the map preserves, i.e. the kernel of I - S^dag S, and that is how it is
computed here.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channels import (
    BcpValidationError,
    Channel,
    complex_from_json,
    complex_to_json,
    unvec,
    validate_bcp,
    vec,
)

DEFAULT_RANK_TOL = 1e-9
DEFAULT_CERT_TOL = 1e-6
DEFAULT_EQUALITY_TOL = 1e-7


class AlgebraError(RuntimeError):
    """A subspace that should be a unital *-algebra failed certification."""


class RankAmbiguityWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class Subspace:
    d: int
    frame: np.ndarray  # d^2 x k, orthonormal columns

    def __post_init__(self):
        b = np.array(self.frame, dtype=complex)
        if b.ndim == 1:
            b = b[:, np.newaxis]
        n = self.d * self.d
        if b.shape[0] != n or b.shape[1] > n:
            raise ValueError(f"frame for d={self.d} must be {n} x k with k <= {n}, got {b.shape}")
        if b.shape[1] and np.linalg.norm(b.conj().T @ b - np.eye(b.shape[1])) > 1e-10:
            raise ValueError("frame columns are not orthonormal")
        b.setflags(write=False)
        object.__setattr__(self, "frame", b)

    @property
    def k(self) -> int:
        return self.frame.shape[1]

    @property
    def dim(self) -> int:
        return self.k

    def projector(self) -> np.ndarray:
        return self.frame @ self.frame.conj().T

    def matrices(self) -> np.ndarray:
        """Frame columns as a (k, d, d) stack of matrices."""
        return np.stack([unvec(c, self.d) for c in self.frame.T]) if self.k else np.zeros((0, self.d, self.d))

    def residual(self, v: np.ndarray) -> float:
        """Norm of the component of ``v`` orthogonal to the subspace."""
        v = np.asarray(v)
        return float(np.linalg.norm(v - self.frame @ (self.frame.conj().T @ v)))

    def complement(self) -> "Subspace":
        n = self.d * self.d
        if self.k == 0:
            return Subspace(self.d, np.eye(n, dtype=complex))
        q, _ = np.linalg.qr(self.frame, mode="complete")
        return Subspace(self.d, q[:, self.k:])

    @classmethod
    def span(cls, d: int, vectors, tol: float = 1e-10) -> "Subspace":
        """Orthonormal frame for the span of the given vectorized matrices.

        Directions with singular value below ``tol`` times the largest are dropped.
        """
        v = np.asarray(vectors, dtype=complex)
        if v.ndim == 1:
            v = v[:, np.newaxis]
        if v.size == 0 or v.shape[1] == 0:
            return cls(d, np.zeros((d * d, 0), dtype=complex))
        u, s, _ = np.linalg.svd(v, full_matrices=False)
        if s[0] == 0:
            return cls(d, np.zeros((d * d, 0), dtype=complex))
        r = int(np.sum(s > tol * s[0]))
        return cls(d, u[:, :r])

    @classmethod
    def from_matrices(cls, mats, tol: float = 1e-10) -> "Subspace":
        mats = [np.asarray(m, dtype=complex) for m in mats]
        d = mats[0].shape[0]
        return cls.span(d, np.stack([vec(m) for m in mats], axis=1), tol)

    @classmethod
    def full(cls, d: int) -> "Subspace":
        return cls(d, np.eye(d * d, dtype=complex))

    @classmethod
    def scalars(cls, d: int) -> "Subspace":
        return cls(d, vec(np.eye(d))[:, np.newaxis] / np.sqrt(d))


@dataclass(frozen=True)
class AlgebraCertificate:
    ok: bool
    worst_residual: float


@dataclass(frozen=True, eq=False)
class AlgebraSubspace:
    """A subspace certified to be a unital *-subalgebra of M_d(C)."""

    base: Subspace
    certified_tol: float
    notes: tuple[str, ...] = field(default=())

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def k(self) -> int:
        return self.base.k

    @property
    def dim(self) -> int:
        return self.base.k

    @property
    def frame(self) -> np.ndarray:
        return self.base.frame


def as_subspace(x: Subspace | AlgebraSubspace) -> Subspace:
    return x.base if isinstance(x, AlgebraSubspace) else x


def _closure_residuals(sub: Subspace) -> tuple[float, float, float]:
    d, b = sub.d, sub.frame
    if sub.k == 0:
        return (1.0, 0.0, 0.0)
    eye = vec(np.eye(d)) / np.sqrt(d)
    r_unit = sub.residual(eye)
    mats = sub.matrices()
    adj = np.stack([vec(m.conj().T) for m in mats], axis=1)
    r_adj = float(np.max(np.linalg.norm(adj - b @ (b.conj().T @ adj), axis=0)))
    # products b_i b_j for all pairs, vectorized column-major
    prods = np.einsum("iab,jbc->ijac", mats, mats).reshape(sub.k * sub.k, d, d)
    pv = prods.transpose(0, 2, 1).reshape(sub.k * sub.k, d * d).T
    r_mul = float(np.max(np.linalg.norm(pv - b @ (b.conj().T @ pv), axis=0)))
    return (r_unit, r_adj, r_mul)


def verify_algebra(sub: Subspace | AlgebraSubspace, tol: float = DEFAULT_CERT_TOL) -> AlgebraCertificate:
    """Check that ``sub`` contains the identity and is closed under * and products."""
    worst = max(_closure_residuals(as_subspace(sub)))
    return AlgebraCertificate(ok=worst <= tol, worst_residual=worst)


def certify(sub: Subspace, tol: float = DEFAULT_CERT_TOL, notes=()) -> AlgebraSubspace:
    cert = verify_algebra(sub, tol)
    if not cert.ok:
        raise AlgebraError(
            f"subspace of dimension {sub.k} is not a unital *-algebra "
            f"(worst residual {cert.worst_residual:.3g} > {tol:.3g})"
        )
    return AlgebraSubspace(sub, tol, tuple(notes))


def multiplicative_domain(
    ch: Channel,
    tol: float = DEFAULT_RANK_TOL,
    cert_tol: float = DEFAULT_CERT_TOL,
) -> AlgebraSubspace:
    """Multiplicative domain of a bcp channel as the kernel of I - S^dag S.

    Eigenvalues of I - S^dag S in (tol, 10 tol] make the rank decision
    fragile; they trigger a :class:`RankAmbiguityWarning` and a note on the
    result.  The kernel is certified as a unital *-algebra before returning.
    """
    s = ch.superop
    g = np.eye(s.shape[0]) - s.conj().T @ s
    g = 0.5 * (g + g.conj().T)
    w, v = np.linalg.eigh(g)
    keep = w <= tol
    notes = []
    band = (w > tol) & (w <= 10 * tol)
    if np.any(band):
        msg = f"{int(band.sum())} eigenvalue(s) of I - S^dag S in the ambiguous band ({tol:.1e}, {10 * tol:.1e}]"
        warnings.warn(msg, RankAmbiguityWarning, stacklevel=2)
        notes.append(msg)
    sub = Subspace(ch.d, v[:, keep])
    return certify(sub, cert_tol, notes)


def is_abelian(alg: AlgebraSubspace | Subspace, tol: float = 1e-8) -> bool:
    mats = as_subspace(alg).matrices()
    if len(mats) == 0:
        return True
    ab = np.einsum("iab,jbc->ijac", mats, mats)
    comm = ab - ab.transpose(1, 0, 2, 3)
    return float(np.max(np.linalg.norm(comm, axis=(2, 3)))) <= tol


def conditional_expectation(alg: AlgebraSubspace, tol: float | None = None) -> Channel:
    """Hilbert-Schmidt orthogonal projection onto ``alg`` as a bcp channel."""
    b = alg.frame
    ch = Channel(alg.d, b @ b.conj().T, None, "E")
    report = validate_bcp(ch, tol)
    if not report.ok:
        raise BcpValidationError(
            "projection is not bcp; the subspace is not a unital *-algebra at working precision",
            report,
        )
    return ch


def one_sided_deviation(v: Subspace, w: Subspace) -> float:
    """sup over unit v in V of the distance from v to W."""
    if v.k == 0:
        return 0.0
    r = v.frame - w.frame @ (w.frame.conj().T @ v.frame)
    return float(np.linalg.norm(r, 2))


def grassmann_distance(v: Subspace | AlgebraSubspace, w: Subspace | AlgebraSubspace) -> float:
    """Grassmannian metric: the larger of the two one-sided sup-inf deviations.

    The infimum runs over the whole target subspace, so the value lies in
    [0, 1]; for equal dimensions it is the sine of the largest principal
    angle, and it is 1 whenever the dimensions differ.
    """
    v, w = as_subspace(v), as_subspace(w)
    if v.d != w.d:
        raise ValueError(f"ambient dimension mismatch: {v.d} vs {w.d}")
    return max(one_sided_deviation(v, w), one_sided_deviation(w, v))


def subspaces_equal(v, w, tol: float = DEFAULT_EQUALITY_TOL) -> bool:
    return as_subspace(v).k == as_subspace(w).k and grassmann_distance(v, w) <= tol


def contained_residual(v, w) -> float:
    """How far V is from lying inside W (0 iff V is a subspace of W)."""
    return one_sided_deviation(as_subspace(v), as_subspace(w))


def intersect(v: Subspace | AlgebraSubspace, w: Subspace | AlgebraSubspace, tol: float = 1e-8) -> Subspace:
    """Numerical intersection: directions of V whose principal angle to W is at most ``tol``.

    The singular values of (I - P_W) B_V are the sines of the principal angles
    between V and W; the right singular vectors with small sines, mapped back
    through B_V, span the intersection.
    """
    v, w = as_subspace(v), as_subspace(w)
    if v.d != w.d:
        raise ValueError(f"ambient dimension mismatch: {v.d} vs {w.d}")
    if v.k == 0 or w.k == 0:
        return Subspace(v.d, np.zeros((v.d * v.d, 0), dtype=complex))
    r = v.frame - w.frame @ (w.frame.conj().T @ v.frame)
    _, s, vh = np.linalg.svd(r, full_matrices=True)
    sines = np.zeros(v.k)
    sines[: len(s)] = s
    keep = sines <= np.sin(tol)
    coeffs = vh.conj().T[:, keep]
    return Subspace(v.d, v.frame @ coeffs)


def _adjoin(frame: np.ndarray, candidates: np.ndarray, tol: float) -> np.ndarray:
    """Extend an orthonormal frame by the parts of ``candidates`` outside its span."""
    cols = [frame[:, i] for i in range(frame.shape[1])]
    for c in candidates.T:
        r = c.copy()
        for _ in range(2):  # classical Gram-Schmidt, repeated once for stability
            if cols:
                b = np.stack(cols, axis=1)
                r = r - b @ (b.conj().T @ r)
        nr = np.linalg.norm(r)
        if nr > tol * max(1.0, np.linalg.norm(c)):
            cols.append(r / nr)
    n = frame.shape[0]
    return np.stack(cols, axis=1) if cols else np.zeros((n, 0), dtype=complex)


def algebra_closure(
    seed: Subspace | AlgebraSubspace,
    tol: float = 1e-8,
    max_iter: int | None = None,
    cert_tol: float = DEFAULT_CERT_TOL,
) -> AlgebraSubspace:
    """Smallest unital *-algebra containing ``seed``.

    Each sweep adjoins the unit, adjoints and all pairwise products of the
    current frame; the loop ends after a sweep that adds nothing.
    """
    seed = as_subspace(seed)
    d = seed.d
    if max_iter is None:
        max_iter = d * d + 2
    eye = vec(np.eye(d))[:, np.newaxis] / np.sqrt(d)
    frame = _adjoin(np.zeros((d * d, 0), dtype=complex), np.hstack([eye, seed.frame]), tol)
    for _ in range(max_iter):
        k = frame.shape[1]
        sub = Subspace(d, frame)
        mats = sub.matrices()
        adj = np.stack([vec(m.conj().T) for m in mats], axis=1)
        prods = np.einsum("iab,jbc->ijac", mats, mats).reshape(k * k, d, d)
        pv = prods.transpose(0, 2, 1).reshape(k * k, d * d).T
        frame = _adjoin(frame, np.hstack([adj, pv]), tol)
        if frame.shape[1] == k:
            return certify(Subspace(d, frame), cert_tol)
    raise AlgebraError(f"algebra closure did not stabilize within {max_iter} sweeps")


def peripheral_algebra(
    ch: Channel,
    tol: float = DEFAULT_RANK_TOL,
    cert_tol: float = DEFAULT_CERT_TOL,
) -> AlgebraSubspace:
    """Algebra generated by the eigenvectors of ``ch`` with unimodular eigenvalue."""
    w, v = np.linalg.eig(ch.superop)
    keep = np.abs(w) >= 1.0 - tol
    span = Subspace.span(ch.d, v[:, keep])
    return algebra_closure(span, cert_tol=cert_tol)


# -- persistence ----------------------------------------------------------------


def subspace_to_dict(sub: Subspace | AlgebraSubspace) -> dict:
    sub = as_subspace(sub)
    # column-major: a list of frame columns
    return {"d": sub.d, "frame": [complex_to_json(c) for c in sub.frame.T]}


def subspace_from_dict(data: dict) -> Subspace:
    d = int(data["d"])
    cols = data["frame"]
    if not cols:
        return Subspace(d, np.zeros((d * d, 0), dtype=complex))
    return Subspace(d, complex_from_json(cols).T)


def save_subspace(sub, path: str | Path) -> None:
    Path(path).write_text(json.dumps(subspace_to_dict(sub)))


def load_subspace(path: str | Path) -> Subspace:
    return subspace_from_dict(json.loads(Path(path).read_text()))
