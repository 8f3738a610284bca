"""Choi matrices, PPT tests and entanglement-breaking certificates.

Exact EB decisions are only made for qubits, where a two-qubit state is
separable iff it has positive partial transpose.  For d >= 3 the functions
here give certificates only: PPT is necessary for EB, while the separable
ball around the maximally mixed state and the abelian-range construction are
sufficient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .algebra import AlgebraSubspace, conditional_expectation, is_abelian
from .channels import Channel, choi_matrix
from .cocycle import CocycleRun, _m_inf, replay

DEFAULT_PPT_TOL = 1e-9


class UnsupportedDimensionError(ValueError):
    pass


def separable_ball_radius(d: int) -> float:
    """Frobenius radius of a separable ball around I/D, D = d^2.

    Every D x D state with ||rho - I/D||_F <= 1/sqrt(D (D - 1)) is separable,
    and this is also the largest ball of states around I/D.
    """
    n = d * d
    if n == 1:
        return np.inf
    return 1.0 / np.sqrt(n * (n - 1))


#: configured radii per dimension; validated against the exact qubit test in the suite
SEPARABLE_BALL_RADIUS = {d: separable_ball_radius(d) for d in range(1, 9)}


@dataclass(frozen=True, eq=False)
class ChoiMatrix:
    d: int
    matrix: np.ndarray

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def partial_transpose(self) -> np.ndarray:
        return partial_transpose(self.matrix, self.d)

    def partial_trace_first(self) -> np.ndarray:
        d = self.d
        return np.einsum("aiaj->ij", self.matrix.reshape(d, d, d, d))

    def partial_trace_second(self) -> np.ndarray:
        d = self.d
        return np.einsum("aibi->ab", self.matrix.reshape(d, d, d, d))


def choi(ch: Channel) -> ChoiMatrix:
    """C = sum_ij psi(E_ij) (x) E_ij, unnormalized (trace d)."""
    c = choi_matrix(ch.superop, ch.d)
    return ChoiMatrix(ch.d, 0.5 * (c + c.conj().T))


def partial_transpose(c: np.ndarray, d: int) -> np.ndarray:
    """Transpose on the second tensor factor: an index permutation, no arithmetic."""
    return np.asarray(c).reshape(d, d, d, d).transpose(0, 3, 2, 1).reshape(d * d, d * d)


def is_ppt(ch: Channel, tol: float = DEFAULT_PPT_TOL) -> bool:
    """Completely positive and completely copositive, both up to ``tol``."""
    c = choi(ch)
    if c.eigenvalues()[0] < -tol:
        return False
    pt = c.partial_transpose()
    return bool(np.linalg.eigvalsh(0.5 * (pt + pt.conj().T))[0] >= -tol)


def ppt_margin(ch: Channel) -> float:
    """Smallest eigenvalue of the partially transposed Choi matrix."""
    pt = choi(ch).partial_transpose()
    return float(np.linalg.eigvalsh(0.5 * (pt + pt.conj().T))[0])


def is_eb_qubit(ch: Channel, tol: float = DEFAULT_PPT_TOL) -> bool:
    if ch.d != 2:
        raise UnsupportedDimensionError(f"exact EB decision is only available for d=2, got d={ch.d}")
    return is_ppt(ch, tol)


def ball_distance(ch: Channel) -> float:
    """||C/d - I/d^2||_F, the Choi-state distance from the maximally mixed state."""
    d = ch.d
    c = choi(ch).matrix / d
    return float(np.linalg.norm(c - np.eye(d * d) / (d * d)))


def eb_sufficient_ball(ch: Channel, radius: float | None = None) -> bool:
    """Sufficient EB test: the normalized Choi state lies in the separable ball."""
    r = SEPARABLE_BALL_RADIUS.get(ch.d, separable_ball_radius(ch.d)) if radius is None else radius
    return ball_distance(ch) <= r


def is_eb(ch: Channel, tol: float = DEFAULT_PPT_TOL) -> tuple[bool, str]:
    """EB certificate: ``(True, how)`` if certified, ``(False, why)`` otherwise."""
    if ch.d == 2:
        return (is_eb_qubit(ch, tol), "qubit-ppt")
    if eb_sufficient_ball(ch):
        return (True, "ball")
    if not is_ppt(ch, tol):
        return (False, "npt")
    return (False, "undecided")


def eb_distance_upper(run_: CocycleRun, m_inf: AlgebraSubspace | None = None,
                      checkpoints=None) -> list[tuple[int, float]] | None:
    """Upper bound on d_HS(Phi^(n), EB) at each checkpoint, or None for a non-abelian core.

    Phi^(n) o E, with E the conditional expectation onto the abelian core, has
    range inside an abelian algebra and is therefore EB; its distance
    ||Phi^(n) o (Id - E)|| to Phi^(n) bounds the distance to the EB set.
    """
    m_inf = _m_inf(run_, m_inf)
    if not is_abelian(m_inf):
        return None
    e = conditional_expectation(m_inf).superop
    comp = np.eye(len(e)) - e
    if checkpoints is None:
        checkpoints = [r.n for r in run_.domain_chain]
    pts = set(checkpoints)
    out = []
    for n, s in replay(run_):
        if n in pts:
            out.append((n, float(np.linalg.norm(s @ comp, 2))))
    return out


@dataclass
class EbReport:
    rows: list[dict] = field(default_factory=list)
    abelian_core: bool = False
    verdict: str = ""

    def to_dict(self) -> dict:
        return {"abelian_core": self.abelian_core, "verdict": self.verdict, "rows": self.rows}


def asymptotic_eb_report(run_: CocycleRun, m_inf: AlgebraSubspace | None = None,
                         tol: float = DEFAULT_PPT_TOL) -> EbReport:
    """Per-checkpoint PPT / EB certificates plus the abelian-core verdict."""
    m_inf = _m_inf(run_, m_inf)
    abelian = is_abelian(m_inf)
    checkpoints = [r.n for r in run_.domain_chain]
    upper = dict(eb_distance_upper(run_, m_inf, checkpoints) or [])
    rows = []
    pts = set(checkpoints)
    for n, s in replay(run_):
        if n not in pts:
            continue
        ch = Channel(run_.d, s)
        ppt = is_ppt(ch, tol)
        row = {
            "n": n,
            "ppt": ppt,
            "eb_lower_flag": not ppt,
            "eb_ball": eb_sufficient_ball(ch),
            "eb_qubit": is_eb_qubit(ch, tol) if run_.d == 2 else None,
            "dist_upper": upper.get(n) if abelian else None,
        }
        row["eb_sufficient"] = bool(row["eb_ball"] or row["eb_qubit"])
        rows.append(row)
    verdict = "asymptotically EB (certified)" if abelian else "not asymptotically EB"
    return EbReport(rows, abelian, verdict)


@dataclass
class FirstEbTime:
    n: int | None
    exact: bool
    method: str

    @property
    def pending(self) -> bool:
        return self.n is None

    def to_dict(self) -> dict:
        return {"n": self.n if self.n is not None else "pending", "exact": self.exact,
                "method": self.method}


def first_eb_time(run_: CocycleRun, tol: float = DEFAULT_PPT_TOL) -> FirstEbTime:
    """First n at which Phi^(n) is certified EB.

    Exact (up to ``tol``) at d = 2.  For d >= 3 only the separable-ball
    certificate is available and the result is an upper bound on the true
    first EB time.
    """
    exact = run_.d == 2
    method = "qubit-ppt" if exact else "ball (upper bound)"
    for n, s in replay(run_):
        ch = Channel(run_.d, s)
        if (is_eb_qubit(ch, tol) if exact else eb_sufficient_ball(ch)):
            return FirstEbTime(n, exact, method)
    return FirstEbTime(None, exact, method)

