"""Bistochastic completely positive (bcp) maps on M_d(C).

A channel is stored as its d^2 x d^2 superoperator ``S`` acting on
column-stacked matrices, so that ``vec(psi(a)) = S @ vec(a)``.  With this
convention a Kraus family {K_i} has superoperator

    S = sum_i conj(K_i) (x) K_i,

because vec(K a K^dag) = (conj(K) (x) K) vec(a).  The standard inner product
on vectorized matrices is the Hilbert-Schmidt inner product tr(a^* b), so the
Hilbert-Schmidt adjoint of a channel is simply ``S.conj().T``.

The superoperator is the source of truth; Kraus operators are kept only as an
optional annotation and are dropped by composition.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_TOL = 1e-9


class ChannelError(ValueError):
    """Structurally malformed channel data (wrong shapes, non-finite entries)."""


class BcpValidationError(ValueError):
    """A channel that was required to be bcp failed validation."""

    def __init__(self, message: str, report: "ValidationReport"):
        super().__init__(message)
        self.report = report


def vec(a: np.ndarray) -> np.ndarray:
    """Column-stack a matrix: [[a, b], [c, d]] -> (a, c, b, d)."""
    return np.asarray(a).reshape(-1, order="F")


def unvec(v: np.ndarray, d: int | None = None) -> np.ndarray:
    """Inverse of :func:`vec` for square matrices."""
    v = np.asarray(v)
    if d is None:
        d = int(round(np.sqrt(v.size)))
    return v.reshape((d, d), order="F")


def default_tol(d: int) -> float:
    return DEFAULT_TOL * d * d


@dataclass(frozen=True, eq=False)
class Channel:
    """A linear map M_d(C) -> M_d(C) held as a column-stacking superoperator.

    Construction only checks structure; use :func:`validate_bcp` (or the
    generators in this module, which validate) for the bcp properties.
    """

    d: int
    superop: np.ndarray
    kraus: tuple[np.ndarray, ...] | None = None
    label: str = ""

    def __post_init__(self):
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise ChannelError(f"dimension must be a positive integer, got {self.d!r}")
        s = np.array(self.superop, dtype=complex)
        n = self.d * self.d
        if s.shape != (n, n):
            raise ChannelError(f"superoperator for d={self.d} must be {n}x{n}, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ChannelError("superoperator has non-finite entries")
        s.setflags(write=False)
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "superop", s)
        if self.kraus is not None:
            ks = []
            for k in self.kraus:
                k = np.array(k, dtype=complex)
                if k.shape != (self.d, self.d):
                    raise ChannelError(f"Kraus operator has shape {k.shape}, expected {(self.d, self.d)}")
                k.setflags(write=False)
                ks.append(k)
            object.__setattr__(self, "kraus", tuple(ks))

    def __call__(self, a: np.ndarray) -> np.ndarray:
        return unvec(self.superop @ vec(a), self.d)

    def __repr__(self) -> str:
        return f"Channel(d={self.d}, label={self.label!r})"

    def with_label(self, label: str) -> "Channel":
        return Channel(self.d, self.superop, self.kraus, label)


@dataclass(frozen=True)
class ValidationReport:
    unital: bool
    trace_preserving: bool
    cp: bool
    contraction: bool
    #: max residuals, in order (unital, trace_preserving, cp, contraction)
    worst_violations: tuple[float, float, float, float] = field(default=(0.0, 0.0, 0.0, 0.0))
    tol: float = DEFAULT_TOL

    @property
    def ok(self) -> bool:
        return self.unital and self.trace_preserving and self.cp and self.contraction

    def failures(self) -> list[str]:
        names = ("unital", "trace_preserving", "cp", "contraction")
        return [n for n in names if not getattr(self, n)]

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "unital": self.unital,
            "trace_preserving": self.trace_preserving,
            "cp": self.cp,
            "contraction": self.contraction,
            "worst_violations": list(self.worst_violations),
            "tol": self.tol,
        }


def choi_matrix(superop: np.ndarray, d: int) -> np.ndarray:
    """Unnormalized Choi matrix C = sum_ij psi(E_ij) (x) E_ij of a superoperator.

    Pure index permutation of ``superop``: psi(E_ij)[a, b] = S[a + d b, i + d j],
    and C[(a, i), (b, j)] = psi(E_ij)[a, b].
    """
    s4 = np.asarray(superop).reshape(d, d, d, d)  # [b, a, j, i]
    return s4.transpose(1, 3, 0, 2).reshape(d * d, d * d)


def validate_bcp(ch: Channel, tol: float | None = None) -> ValidationReport:
    """Check unitality, trace preservation, complete positivity and HS contraction.

    ``tol`` defaults to ``1e-9 * d**2``.  Each flag is true iff the matching
    residual is at most ``tol``.
    """
    if not isinstance(ch, Channel):
        raise ChannelError(f"expected a Channel, got {type(ch).__name__}")
    d = ch.d
    if tol is None:
        tol = default_tol(d)
    if tol <= 0:
        raise ValueError("tol must be positive")
    s = ch.superop
    e = vec(np.eye(d))
    r_unital = float(np.linalg.norm(s @ e - e))
    r_tp = float(np.linalg.norm(s.conj().T @ e - e))
    c = choi_matrix(s, d)
    c = 0.5 * (c + c.conj().T)
    r_cp = float(max(0.0, -np.linalg.eigvalsh(c)[0]))
    r_contr = float(max(0.0, np.linalg.norm(s, 2) - 1.0))
    return ValidationReport(
        unital=r_unital <= tol,
        trace_preserving=r_tp <= tol,
        cp=r_cp <= tol,
        contraction=r_contr <= tol,
        worst_violations=(r_unital, r_tp, r_cp, r_contr),
        tol=tol,
    )


def require_bcp(ch: Channel, tol: float | None = None) -> Channel:
    report = validate_bcp(ch, tol)
    if not report.ok:
        raise BcpValidationError(
            f"channel {ch.label!r} is not bcp: fails {', '.join(report.failures())}", report
        )
    return ch


def kraus_to_superop(kraus: Sequence[np.ndarray]) -> np.ndarray:
    return sum(np.kron(np.conj(k), k) for k in kraus)


def from_kraus(kraus: Sequence[np.ndarray], tol: float | None = None, label: str = "") -> Channel:
    """Build a bcp channel from Kraus operators.

    Besides the superoperator checks, the Kraus sums sum K^dag K and sum K K^dag
    must both equal the identity.  Anything else raises
    :class:`BcpValidationError` carrying the report.
    """
    ks = [np.asarray(k, dtype=complex) for k in kraus]
    if not ks:
        raise ChannelError("empty Kraus list")
    d = ks[0].shape[0]
    for k in ks:
        if k.ndim != 2 or k.shape != (d, d):
            raise ChannelError("Kraus operators must be square and of equal dimension")
    ch = Channel(d, kraus_to_superop(ks), tuple(ks), label)
    tol = default_tol(d) if tol is None else tol
    report = validate_bcp(ch, tol)
    eye = np.eye(d)
    r_left = float(np.linalg.norm(sum(k.conj().T @ k for k in ks) - eye))
    r_right = float(np.linalg.norm(sum(k @ k.conj().T for k in ks) - eye))
    if not report.ok or r_left > tol or r_right > tol:
        raise BcpValidationError(
            f"Kraus family is not bcp (sum K^dag K residual {r_left:.3g}, "
            f"sum K K^dag residual {r_right:.3g}, failures {report.failures()})",
            report,
        )
    return ch


def compose(outer: Channel, inner: Channel, label: str | None = None) -> Channel:
    """The channel ``outer o inner`` (``inner`` is applied first)."""
    if outer.d != inner.d:
        raise ChannelError(f"dimension mismatch: {outer.d} vs {inner.d}")
    if label is None:
        label = f"{outer.label}*{inner.label}" if outer.label or inner.label else ""
    return Channel(outer.d, outer.superop @ inner.superop, None, label)


def adjoint(ch: Channel) -> Channel:
    """Hilbert-Schmidt adjoint; for Kraus {K_i} the adjoint has Kraus {K_i^dag}."""
    kraus = None if ch.kraus is None else tuple(k.conj().T for k in ch.kraus)
    label = f"{ch.label}^*" if ch.label else ""
    return Channel(ch.d, ch.superop.conj().T, kraus, label)


def identity_channel(d: int) -> Channel:
    return Channel(d, np.eye(d * d), (np.eye(d),), "id")


def completely_depolarizing(d: int) -> Channel:
    """Delta_1(X) = tr(X) I / d."""
    e = vec(np.eye(d))
    return Channel(d, np.outer(e, e.conj()) / d, None, "delta1")


def unitary_channel(u: np.ndarray, label: str = "") -> Channel:
    u = np.asarray(u, dtype=complex)
    d = u.shape[0]
    if u.shape != (d, d) or not np.allclose(u.conj().T @ u, np.eye(d), atol=1e-10):
        raise ChannelError("conjugating matrix must be unitary")
    return Channel(d, np.kron(u.conj(), u), (u,), label)


# -- generators ---------------------------------------------------------------


def make_rng(seed: int | np.random.Generator | None) -> np.random.Generator:
    """Counter-based (Philox) generator; every random object is a function of its seed."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ValueError("an explicit seed is required")
    return np.random.Generator(np.random.Philox(seed))


def haar_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar unitary from the QR decomposition of a complex Ginibre matrix.

    The phases of R's diagonal are moved into Q; without this step the
    distribution depends on the QR implementation and is not Haar.
    """
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    diag = np.diag(r)
    phases = diag / np.abs(diag)
    return q * phases[np.newaxis, :]


def _block_haar_unitary(block_sizes: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    d = int(sum(block_sizes))
    u = np.zeros((d, d), dtype=complex)
    start = 0
    for b in block_sizes:
        u[start:start + b, start:start + b] = haar_unitary(b, rng)
        start += b
    return u


def random_mixed_unitary(
    d: int,
    m: int,
    seed: int | np.random.Generator,
    block_sizes: Sequence[int] | None = None,
    label: str = "",
) -> Channel:
    """psi(a) = sum_i w_i U_i a U_i^dag with Haar U_i and uniform simplex weights.

    With ``block_sizes`` the U_i are drawn block-diagonally (independent Haar
    blocks), which gives channels with a nontrivial multiplicative domain
    containing the block-scalar matrices.
    """
    if d < 1 or m < 1:
        raise ValueError("need d >= 1 and m >= 1")
    rng = make_rng(seed)
    if block_sizes is not None:
        if sum(block_sizes) != d or min(block_sizes) < 1:
            raise ValueError(f"block sizes {block_sizes} do not partition {d}")
        us = [_block_haar_unitary(block_sizes, rng) for _ in range(m)]
    else:
        us = [haar_unitary(d, rng) for _ in range(m)]
    w = rng.exponential(size=m)
    w = w / w.sum()
    kraus = [np.sqrt(wi) * u for wi, u in zip(w, us)]
    return from_kraus(kraus, label=label or f"mu(d={d},m={m})")


def clock_matrix(d: int) -> np.ndarray:
    return np.diag(np.exp(2j * np.pi * np.arange(d) / d))


def fourier_matrix(d: int) -> np.ndarray:
    j = np.arange(d)
    return np.exp(2j * np.pi * np.outer(j, j) / d) / np.sqrt(d)


def _resolve_basis(d: int, basis) -> np.ndarray:
    if isinstance(basis, str):
        if basis == "computational":
            return np.eye(d, dtype=complex)
        if basis == "fourier":
            return fourier_matrix(d)
        raise ValueError(f"unknown basis {basis!r}")
    u = np.asarray(basis, dtype=complex)
    if u.shape != (d, d) or not np.allclose(u.conj().T @ u, np.eye(d), atol=1e-10):
        raise ValueError("basis must be a d x d unitary")
    return u


def dephasing(d: int, basis="computational", p: float = 0.5, label: str = "") -> Channel:
    """psi(a) = p a + (1 - p) Z a Z^dag with Z the clock matrix of ``basis``.

    For d = 2 in the computational basis the Kraus operators are
    {sqrt(p) I, sqrt(1 - p) Z}; the "fourier" basis gives X-dephasing.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    u = _resolve_basis(d, basis)
    z = u @ clock_matrix(d) @ u.conj().T
    return from_kraus([np.sqrt(p) * np.eye(d), np.sqrt(1.0 - p) * z], label=label or f"deph({p})")


def pinching(d: int, basis="computational", label: str = "") -> Channel:
    """Conditional expectation onto the diagonal of ``basis``; equals dephasing(p=1/2) at d = 2."""
    u = _resolve_basis(d, basis)
    kraus = [u @ np.diag(np.eye(d)[k]) @ u.conj().T for k in range(d)]
    return from_kraus(kraus, label=label or "pinch")


# -- persistence ----------------------------------------------------------------


def complex_to_json(a: np.ndarray):
    """Nested lists with complex entries as [re, im] pairs."""
    a = np.asarray(a, dtype=complex)
    if a.ndim == 0:
        return [float(a.real), float(a.imag)]
    return [complex_to_json(x) for x in a]


def complex_from_json(obj) -> np.ndarray:
    arr = np.asarray(obj, dtype=float)
    if arr.shape[-1] != 2:
        raise ChannelError("complex entries must be [re, im] pairs")
    out = np.empty(arr.shape[:-1], dtype=complex)
    out.real, out.imag = arr[..., 0], arr[..., 1]  # keeps signed zeros, unlike re + 1j * im
    return out


def channel_to_dict(ch: Channel) -> dict:
    out = {"d": ch.d, "label": ch.label, "superop": complex_to_json(ch.superop)}
    if ch.kraus is not None:
        out["kraus"] = [complex_to_json(k) for k in ch.kraus]
    return out


def channel_from_dict(data: dict) -> Channel:
    try:
        d = int(data["d"])
        s = complex_from_json(data["superop"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ChannelError(f"malformed channel record: {exc}") from exc
    kraus = None
    if data.get("kraus") is not None:
        kraus = tuple(complex_from_json(k) for k in data["kraus"])
    return Channel(d, s, kraus, str(data.get("label", "")))


def save_channel(ch: Channel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(channel_to_dict(ch)))


def load_channel(path: str | Path) -> Channel:
    return channel_from_dict(json.loads(Path(path).read_text()))
