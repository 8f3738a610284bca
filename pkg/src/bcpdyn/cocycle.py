"""Composition engine for driven products of bcp maps.

``run`` composes Phi^(n) = phi_{n-1} o ... o phi_0 on superoperators, keeping
the chain of multiplicative domains M_{Phi^(n)} at a schedule of checkpoints.
The analysis functions work from the finished run and, when they need the
products again, replay them from the stored index log; the replay reproduces
the composed superoperators bit for bit.

Norms that decay exponentially are accumulated in log space with periodic
renormalization, so runs of 10^4 steps and more do not underflow.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .algebra import (
    DEFAULT_CERT_TOL,
    DEFAULT_EQUALITY_TOL,
    DEFAULT_RANK_TOL,
    AlgebraSubspace,
    Subspace,
    grassmann_distance,
    multiplicative_domain,
    subspaces_equal,
)
from .channels import Channel, completely_depolarizing, haar_unitary, make_rng, validate_bcp, vec
from .drivers import ChannelFamily, Driver

log = logging.getLogger(__name__)

#: one-step contraction below this factor is reported as a floor crossing (-inf)
FLOOR_RATIO = 1e-13


class BcpDriftError(RuntimeError):
    """Accumulated rounding pushed the composed map out of the bcp set."""


class MetStructureError(AssertionError):
    def __init__(self, report: "MetReport"):
        super().__init__(f"core structure check failed: {', '.join(report.failures)}")
        self.report = report


class EspInconsistencyError(RuntimeError):
    """Trivial stabilized domain but no exponential decay towards Delta_1."""


@dataclass
class RunOptions:
    tol: float = DEFAULT_RANK_TOL
    equality_tol: float = DEFAULT_EQUALITY_TOL
    cert_tol: float = DEFAULT_CERT_TOL
    #: fixed checkpoint spacing; None means every step up to 4 d^2, then doubling
    domain_every: int | None = None
    #: stabilization window in recorded domains; None means d^2
    window: int | None = None
    block: int = 16
    guard_tol: float = 1e-7
    drift_tol: float = 1e-9

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DomainRecord:
    n: int
    algebra: AlgebraSubspace

    @property
    def dim(self) -> int:
        return self.algebra.dim


@dataclass
class CocycleRun:
    family: ChannelFamily
    driver_config: dict
    n_steps: int
    options: RunOptions
    composed: Channel
    index_log: np.ndarray
    domain_chain: list[DomainRecord]
    #: ||Phi^(n) - Delta_1|| for n = 1..n_steps
    dist_delta1: np.ndarray
    reprojections: list[int] = field(default_factory=list)
    period: int | None = None
    m_infinity: AlgebraSubspace | None = None
    tau_hat: int | None = None

    @property
    def d(self) -> int:
        return self.family.d

    @property
    def chain_dims(self) -> list[tuple[int, int]]:
        return [(r.n, r.dim) for r in self.domain_chain]


def domain_schedule(n_steps: int, d: int, domain_every: int | None = None) -> list[int]:
    if domain_every is not None:
        if domain_every < 1:
            raise ValueError("domain_every must be positive")
        pts = set(range(domain_every, n_steps + 1, domain_every))
    else:
        dense = min(4 * d * d, n_steps)
        pts = set(range(1, dense + 1))
        m = 2 * dense
        while m <= n_steps:
            pts.add(m)
            m *= 2
    pts.add(n_steps)
    return sorted(pts)


def _unit_vector(d: int) -> np.ndarray:
    return vec(np.eye(d)) / np.sqrt(d)


def _reproject(s: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Restore S u = u and u^dag S = u^dag for the unit vector u along the identity."""
    p = np.eye(len(u)) - np.outer(u, u.conj())
    return p @ s @ p + np.outer(u, u.conj())


def _advance(s: np.ndarray, step: np.ndarray, u: np.ndarray, drift_tol: float) -> tuple[np.ndarray, bool]:
    s = step @ s
    drift = max(np.linalg.norm(s @ u - u), np.linalg.norm(s.conj().T @ u - u))
    if drift > drift_tol:
        return _reproject(s, u), True
    return s, False


def iter_products(family: ChannelFamily, indices: Sequence[int], drift_tol: float = 1e-9) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (n, S of Phi^(n)) for n = 1..len(indices), using the same arithmetic as :func:`run`."""
    d = family.d
    u = _unit_vector(d)
    s = np.eye(d * d, dtype=complex)
    sups = [c.superop for c in family.channels]
    for n, i in enumerate(indices, start=1):
        s, _ = _advance(s, sups[int(i)], u, drift_tol)
        yield n, s


def replay(run_: CocycleRun) -> Iterator[tuple[int, np.ndarray]]:
    return iter_products(run_.family, run_.index_log, run_.options.drift_tol)


def product_at(run_: CocycleRun, n: int) -> np.ndarray:
    if not 1 <= n <= run_.n_steps:
        raise ValueError(f"n must lie in [1, {run_.n_steps}]")
    for m, s in replay(run_):
        if m == n:
            return s.copy()
    raise AssertionError("unreachable")


def _domain_chain(family: ChannelFamily, indices, opts: RunOptions, schedule, dist=None, rep_log=None, guard=True):
    d = family.d
    u = _unit_vector(d)
    s = np.eye(d * d, dtype=complex)
    s_delta = completely_depolarizing(d).superop
    sups = [c.superop for c in family.channels]
    checkpoints = set(schedule)
    chain = []
    for n, i in enumerate(indices, start=1):
        s, rep = _advance(s, sups[int(i)], u, opts.drift_tol)
        if rep and rep_log is not None:
            rep_log.append(n)
            log.debug("re-projected composed map onto bcp constraints at n=%d", n)
        if dist is not None:
            dist[n - 1] = np.linalg.norm(s - s_delta, 2)
        if n in checkpoints:
            ch = Channel(d, s)
            if guard:
                report = validate_bcp(ch, opts.guard_tol)
                if not report.ok:
                    raise BcpDriftError(
                        f"composed map left the bcp set at n={n}: {report.failures()} "
                        f"(residuals {report.worst_violations})"
                    )
            chain.append(DomainRecord(n, multiplicative_domain(ch, opts.tol, opts.cert_tol)))
    return s, chain


def run(family: ChannelFamily, driver: Driver, n_steps: int, opts: RunOptions | None = None) -> CocycleRun:
    """Compose ``n_steps`` channels drawn by ``driver`` (new channel applied on the left).

    The driver is copied, so the caller's driver state is left untouched.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    opts = opts or RunOptions()
    drv = driver.copy()
    config = drv.config()
    indices = drv.take(n_steps)
    if indices.min() < 0 or indices.max() >= len(family):
        raise IndexError("driver emitted an index outside the channel family")
    dist = np.empty(n_steps)
    reps: list[int] = []
    schedule = domain_schedule(n_steps, family.d, opts.domain_every)
    s, chain = _domain_chain(family, indices, opts, schedule, dist, reps)
    return CocycleRun(
        family=family,
        driver_config=config,
        n_steps=n_steps,
        options=opts,
        composed=Channel(family.d, s, None, "Phi"),
        index_log=indices,
        domain_chain=chain,
        dist_delta1=dist,
        reprojections=reps,
        period=driver.period,
    )


# -- stabilized domain ---------------------------------------------------------------


@dataclass
class StabilizedDomain:
    algebra: AlgebraSubspace
    tau_hat: int | None

    @property
    def pending(self) -> bool:
        return self.tau_hat is None

    def __iter__(self):
        return iter((self.algebra, self.tau_hat))


def _stabilize(chain: list[DomainRecord], window: int, equality_tol: float) -> StabilizedDomain:
    final = chain[-1].algebra
    i = len(chain) - 1
    while i > 0 and subspaces_equal(chain[i - 1].algebra, final, equality_tol):
        i -= 1
    after = len(chain) - 1 - i
    if after < window:
        return StabilizedDomain(final, None)
    return StabilizedDomain(chain[i].algebra, chain[i].n)


def stabilized_domain(run_: CocycleRun, window: int | None = None, tol: float | None = None) -> StabilizedDomain:
    """Estimate M^infinity and the multiplicative index from the recorded chain.

    The estimate is the last recorded domain; tau_hat is the first checkpoint
    from which the chain stays equal to it (Grassmannian distance at most
    ``tol``), provided at least ``window`` later records confirm it.  Otherwise
    tau_hat is None (pending) and the algebra is only the current best guess.
    The result is cached on the run.
    """
    w = window if window is not None else (run_.options.window or run_.d ** 2)
    tol = run_.options.equality_tol if tol is None else tol
    stab = _stabilize(run_.domain_chain, w, tol)
    run_.m_infinity = stab.algebra
    run_.tau_hat = stab.tau_hat
    return stab


def _m_inf(run_: CocycleRun, m_inf) -> AlgebraSubspace:
    if m_inf is not None:
        return m_inf
    if run_.m_infinity is None:
        stabilized_domain(run_)
    return run_.m_infinity


def index_contraction(run_: CocycleRun, stab: StabilizedDomain | None = None) -> float | None:
    """||Phi^(tau_hat) restricted to the complement of M^infinity||; below 1 by theory."""
    stab = stab or stabilized_domain(run_)
    if stab.pending:
        return None
    comp = stab.algebra.base.complement()
    if comp.k == 0:
        return 0.0
    s = product_at(run_, stab.tau_hat)
    return float(np.linalg.norm(s @ comp.frame, 2))


# -- Lyapunov exponents ----------------------------------------------------------------


@dataclass
class LyapunovEstimate:
    kappa_hat: float | None
    neg_inf: bool
    n_used: int
    #: (n, cumulative log norm of the leading column) at each renormalization
    partial_sums: list[tuple[int, float]] = field(default_factory=list)
    fit_residual: float | None = None
    core_exponent: float | None = None
    status: str = "ok"

    def to_dict(self) -> dict:
        return {
            "kappa_hat": _finite_or_sentinel(self.kappa_hat),
            "neg_inf": self.neg_inf,
            "n_used": self.n_used,
            "fit_residual": self.fit_residual,
            "core_exponent": self.core_exponent,
            "status": self.status,
        }


def _finite_or_sentinel(x):
    if x is None:
        return None
    if np.isneginf(x):
        return "-inf"
    return float(x)


def lyapunov_kappa(run_: CocycleRun, m_inf: AlgebraSubspace | None = None, block: int | None = None) -> LyapunovEstimate:
    """Top exponent of the cocycle on the complement of M^infinity.

    Each frame column of the complement is pushed through the replayed
    products and renormalized every ``block`` steps, accumulating its log norm;
    kappa_hat is the largest per-column rate.  The image of M^infinity is
    propagated alongside and projected out at every step, which keeps rounding
    leakage into the norm-preserving directions from masking the decay.  A
    column contracting by more than ``FLOOR_RATIO`` in one step is treated as
    annihilated; if all are, the estimate is -inf.
    """
    m_inf = _m_inf(run_, m_inf)
    block = block or run_.options.block
    comp = m_inf.base.complement()
    n = run_.n_steps
    if comp.k == 0:
        return LyapunovEstimate(None, False, 0, status="no-complement")
    core = m_inf.frame.copy()
    x = comp.frame.copy()
    alive = np.ones(x.shape[1], dtype=bool)
    acc = np.zeros(x.shape[1])
    core_acc = 0.0
    prev = np.ones(x.shape[1])
    sums: list[tuple[int, float]] = []
    sups = [c.superop for c in run_.family.channels]
    for step, i in enumerate(run_.index_log, start=1):
        s = sups[int(i)]
        x = s @ x
        if core.shape[1]:
            core = s @ core
            core_norm = np.linalg.norm(core[:, 0])
            q, _ = np.linalg.qr(core)
            core_acc += np.log(core_norm)
            core = q
            x = x - core @ (core.conj().T @ x)
        norms = np.linalg.norm(x, axis=0)
        dead = alive & (norms < FLOOR_RATIO * prev)
        if np.any(dead):
            alive &= ~dead
            x[:, dead] = 0.0
        if not alive.any():
            return LyapunovEstimate(-np.inf, True, step, sums, status="floor-crossed")
        prev = np.where(alive, norms, 1.0)
        if step % block == 0 or step == n or np.min(norms[alive]) < 1e-100:
            acc[alive] += np.log(norms[alive])
            x[:, alive] /= norms[alive]
            prev = np.ones_like(prev)
            sums.append((step, float(np.max(acc[alive]))))
    rates = np.where(alive, acc / n, -np.inf)
    kappa = float(np.max(rates))
    resid = None
    if len(sums) >= 3:
        ns = np.array([p[0] for p in sums], dtype=float)
        ys = np.array([p[1] for p in sums])
        coef = np.polyfit(ns, ys, 1)
        resid = float(np.sqrt(np.mean((np.polyval(coef, ns) - ys) ** 2)))
    core_exp = float(core_acc / n) if m_inf.dim else None
    return LyapunovEstimate(kappa, False, n, sums, resid, core_exp)


@dataclass
class SpectrumEstimate:
    exponents: np.ndarray  # sorted descending; -inf marks floor crossings
    n_used: int
    zero_band: float
    m_inf_dim: int | None = None

    @property
    def zero_count(self) -> int:
        return int(np.sum(np.abs(self.exponents) <= self.zero_band))

    @property
    def top_is_zero(self) -> bool:
        return bool(abs(self.exponents[0]) <= self.zero_band)

    @property
    def consistent(self) -> bool | None:
        """Top exponent ~0 and the count of ~0 exponents equals dim M^infinity."""
        if self.m_inf_dim is None:
            return None
        return self.top_is_zero and self.zero_count == self.m_inf_dim

    def to_dict(self) -> dict:
        return {
            "exponents": [_finite_or_sentinel(x) for x in self.exponents],
            "n_used": self.n_used,
            "zero_band": self.zero_band,
            "zero_count": self.zero_count,
            "m_inf_dim": self.m_inf_dim,
            "consistent": self.consistent,
        }


def lyapunov_spectrum(run_: CocycleRun, block: int = 1, zero_band: float = 0.02, seed: int = 0) -> SpectrumEstimate:
    """Full Lyapunov spectrum of the superoperator cocycle by QR re-orthonormalization.

    The starting frame is a seeded Haar unitary so that the QR columns are in
    general position.  Re-orthonormalizing every step (``block=1``) keeps
    strongly contracting directions resolvable.
    """
    d2 = run_.d ** 2
    q = haar_unitary(d2, make_rng(seed))
    acc = np.zeros(d2)
    dead = np.zeros(d2, dtype=bool)
    sups = [c.superop for c in run_.family.channels]
    since = 0
    n = run_.n_steps
    for step, i in enumerate(run_.index_log, start=1):
        q = sups[int(i)] @ q
        since += 1
        if since >= block or step == n:
            q, r = np.linalg.qr(q)
            diag = np.abs(np.diag(r))
            newly = ~dead & (diag < FLOOR_RATIO ** since)
            dead |= newly
            acc[~dead] += np.log(diag[~dead])
            since = 0
    exps = np.where(dead, -np.inf, acc / n)
    m_dim = run_.m_infinity.dim if run_.m_infinity is not None else None
    return SpectrumEstimate(np.sort(exps)[::-1], n, zero_band, m_dim)


# -- structure checks along the orbit ---------------------------------------------------


@dataclass
class MetReport:
    shifts: list[int]
    dims: list[int | None]
    isometry: float
    onto: float
    homomorphism: float
    adjoint_inverse: float
    complement: float
    tol: float
    failures: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "shifts": self.shifts,
            "dims": self.dims,
            "residuals": {
                "isometry": self.isometry,
                "onto": self.onto,
                "homomorphism": self.homomorphism,
                "adjoint_inverse": self.adjoint_inverse,
                "complement": self.complement,
            },
            "tol": self.tol,
            "failures": self.failures,
        }


def shifted_core(run_: CocycleRun, shift: int, horizon: int | None = None) -> StabilizedDomain:
    """Stabilized domain of the trajectory started ``shift`` steps later."""
    opts = run_.options
    idx = run_.index_log[shift:]
    if horizon is not None:
        idx = idx[:horizon]
    if len(idx) == 0:
        raise ValueError("shift leaves no steps to replay")
    sched = domain_schedule(len(idx), run_.d, opts.domain_every)
    _, chain = _domain_chain(run_.family, idx, opts, sched, guard=False)
    return _stabilize(chain, opts.window or run_.d ** 2, opts.equality_tol)


def verify_met_structure(
    run_: CocycleRun,
    m_inf: AlgebraSubspace | None = None,
    tol: float = 1e-6,
    n_shifts: int = 8,
    horizon: int | None = 1000,
    strict: bool = True,
) -> MetReport:
    """Check the structure of the stabilized cores along the orbit.

    For start points shifted by 0..n_shifts-1 the core M^infinity is
    recomputed; then for each step phi between consecutive shifts:

    * phi maps the core isometrically and *-homomorphically onto the next core,
    * phi^* phi is the identity on the core and phi phi^* on the next core,
    * phi maps the orthogonal complement of the core into the next complement,
    * the core dimension is the same at every shift.

    With ``strict`` a failing clause raises :class:`MetStructureError`.
    """
    n_shifts = max(1, min(n_shifts, run_.n_steps))
    cores: list[StabilizedDomain] = []
    for s in range(n_shifts):
        if s == 0 and m_inf is not None:
            cores.append(StabilizedDomain(m_inf, 1))
        else:
            cores.append(shifted_core(run_, s, horizon))
    failures = []
    if any(c.pending for c in cores):
        failures.append("stabilization")
    dims = [c.algebra.dim for c in cores]
    if len(set(dims)) > 1:
        failures.append("dimension")
    iso = onto = hom = adj = comp = 0.0
    d = run_.d
    for s in range(n_shifts - 1):
        ch = run_.family[int(run_.index_log[s])]
        sop = ch.superop
        b0, b1 = cores[s].algebra.frame, cores[s + 1].algebra.frame
        img = sop @ b0
        iso = max(iso, float(np.linalg.norm(img.conj().T @ img - np.eye(b0.shape[1]), 2)) if b0.shape[1] else 0.0)
        if b0.shape[1] == b1.shape[1]:
            img_sub = Subspace.span(d, img)
            onto = max(onto, grassmann_distance(img_sub, cores[s + 1].algebra) if img_sub.k == b1.shape[1] else 1.0)
            pre = Subspace.span(d, sop.conj().T @ b1)
            onto = max(onto, grassmann_distance(pre, cores[s].algebra) if pre.k == b0.shape[1] else 1.0)
        else:
            onto = 1.0
        mats = cores[s].algebra.base.matrices()
        for a in mats:
            for b in mats:
                hom = max(hom, float(np.linalg.norm(ch(a @ b) - ch(a) @ ch(b))))
        adj = max(adj, float(np.linalg.norm(sop.conj().T @ img - b0)) if b0.shape[1] else 0.0)
        adj = max(adj, float(np.linalg.norm(sop @ (sop.conj().T @ b1) - b1)) if b1.shape[1] else 0.0)
        perp = np.eye(d * d) - b0 @ b0.conj().T
        comp = max(comp, float(np.linalg.norm(b1.conj().T @ sop @ perp, 2)) if b1.shape[1] else 0.0)
    for name, val in (("isometry", iso), ("onto", onto), ("homomorphism", hom),
                      ("adjoint_inverse", adj), ("complement", comp)):
        if val > tol:
            failures.append(name)
    report = MetReport(list(range(n_shifts)), dims, iso, onto, hom, adj, comp, tol, failures)
    if strict and failures:
        raise MetStructureError(report)
    return report


# -- recurrence and convergence to the depolarizing map ---------------------------------


def kuperberg_records(run_: CocycleRun, e: Channel) -> list[tuple[int, float]]:
    """Strict running minima of ||Phi^(n) - E|| with the step at which each occurs."""
    records: list[tuple[int, float]] = []
    best = np.inf
    for n, s in replay(run_):
        dist = float(np.linalg.norm(s - e.superop, 2))
        if dist < best:
            best = dist
            records.append((n, dist))
    return records


@dataclass
class EspResult:
    holds: bool
    gamma_hat: float | None = None
    fit_residual: float | None = None
    stride: int = 1
    points_used: int = 0
    monotone_tail: bool | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def esp_check(run_: CocycleRun, tol: float | None = None, stride: int | None = None, floor: float = 1e-12) -> EspResult:
    """Check M^infinity = C I and fit the exponential approach to Delta_1.

    log ||Phi^(n) - Delta_1|| is fitted against n by least squares over the
    tail of the recorded distances above ``floor``.  Only n that are multiples
    of ``stride`` enter the fit (default: the driver period, so that a
    periodic cocycle is sampled once per period); gamma_hat is exp(slope).
    """
    tol = run_.options.equality_tol if tol is None else tol
    m_inf = _m_inf(run_, None)
    holds = m_inf.dim == 1 and grassmann_distance(m_inf, Subspace.scalars(run_.d)) <= tol
    if not holds:
        return EspResult(False)
    stride = stride or run_.period or 1
    ns = np.arange(stride, run_.n_steps + 1, stride)
    dist = run_.dist_delta1[ns - 1]
    above = dist > floor
    if not above.any():
        return EspResult(True, 0.0, 0.0, stride, 0, True)
    last = int(np.flatnonzero(above)[-1])
    ns, dist = ns[: last + 1], dist[: last + 1]
    mask = dist > floor
    ns, dist = ns[mask], dist[mask]
    if len(ns) < 2:
        return EspResult(True, 0.0, 0.0, stride, len(ns), True)
    start = len(ns) // 2 if len(ns) >= 6 else 0
    ns, y = ns[start:], np.log(dist[start:])
    coef = np.polyfit(ns.astype(float), y, 1)
    resid = float(np.sqrt(np.mean((np.polyval(coef, ns) - y) ** 2)))
    if coef[0] >= 0:
        raise EspInconsistencyError(
            f"stabilized domain is trivial but log-distance to Delta_1 has slope {coef[0]:.3g} >= 0"
        )
    return EspResult(True, float(np.exp(coef[0])), resid, stride, len(ns), bool(np.all(np.diff(y) <= 1e-12)))
