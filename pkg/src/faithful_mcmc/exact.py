"""Exact analysis of kernels on enumerable state spaces.

Transition matrices are dense ``S x S`` row-stochastic numpy arrays and
distributions are length-``S`` probability vectors, both indexed by the
lexicographic order of :class:`StateSpace`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .energy import EmbeddingTable, EnergyModel, SequenceState
from .errors import (
    ContractViolation,
    InfeasibleIntegralError,
    NonReversibleError,
    NoUniqueStationaryError,
    StateSpaceTooLarge,
    UnsupportedKernelError,
)
from .samplers import (
    GwLConfig,
    KernelSpec,
    MucolaConfig,
    PNCGConfig,
    gwl_log_probs,
    mucola_mean,
    pncg_log_probs,
)

DEFAULT_CAP = 10**6


class StateSpace:
    """All K^N token sequences in lexicographic order (position 0 most significant)."""

    def __init__(self, table: EmbeddingTable, n_positions: int):
        self.table = table
        self.n_positions = n_positions
        K, N = table.n_tokens, n_positions
        self.size = K**N
        self._radix = K ** np.arange(N - 1, -1, -1, dtype=np.int64)
        idx = np.arange(self.size, dtype=np.int64)
        self.tokens = ((idx[:, None] // self._radix) % K).astype(np.int32)
        self.embeddings = table.vectors[self.tokens].reshape(self.size, -1)

    def __len__(self) -> int:
        return self.size

    def index_of(self, tokens) -> np.ndarray | int:
        t = np.asarray(tokens, dtype=np.int64)
        out = t @ self._radix
        return int(out) if t.ndim == 1 else out

    def state(self, i: int) -> SequenceState:
        return SequenceState(tuple(self.tokens[i].tolist()), self.table)

    def states(self):
        return [self.state(i) for i in range(self.size)]

    @property
    def labels(self) -> list[str]:
        lab = self.table.labels
        return [" ".join(lab[t] for t in row) for row in self.tokens]


def enumerate_states(table: EmbeddingTable, n_positions: int, cap: int = DEFAULT_CAP) -> StateSpace:
    size = table.n_tokens**n_positions
    if size > cap:
        raise StateSpaceTooLarge(size, cap)
    return StateSpace(table, n_positions)


def _check_space(model: EnergyModel, space: StateSpace):
    if not model.table.same_as(space.table) or model.n_positions != space.n_positions:
        raise ContractViolation("state space does not match the model's table and length")


def exact_target(model: EnergyModel, space: StateSpace) -> np.ndarray:
    _check_space(model, space)
    logits = -model.energies(space.embeddings)
    return np.exp(logits - logsumexp(logits))


def tv_distance(mu, nu) -> float:
    mu, nu = np.asarray(mu, dtype=float), np.asarray(nu, dtype=float)
    if mu.shape != nu.shape:
        raise ContractViolation(f"distribution shapes differ: {mu.shape} vs {nu.shape}")
    return float(0.5 * np.abs(mu - nu).sum())


# Transition matrices


def _single_site_log_q(space: StateSpace, table_fn, position_weight: float) -> np.ndarray:
    # table_fn(i) -> (N, K) per-position log-probs with -inf at the current token
    S, N, K = space.size, space.n_positions, space.table.n_tokens
    logQ = np.full((S, S), -np.inf)
    for i in range(S):
        L = table_fn(i)
        cur = space.tokens[i]
        for n in range(N):
            for k in range(K):
                if k == cur[n]:
                    continue
                j = i + (k - int(cur[n])) * int(space._radix[n])
                logQ[i, j] = position_weight + L[n, k]
    return logQ


def proposal_log_matrix(kernel_spec: KernelSpec, model: EnergyModel, space: StateSpace) -> np.ndarray:
    """``log q(y | x)`` for every pair; -inf marks impossible moves."""
    _check_space(model, space)
    name = kernel_spec.name
    states = space.states()
    N = space.n_positions
    if name == "pncg":
        cfg = PNCGConfig(kernel_spec.alpha, kernel_spec.p)
        rows = np.arange(N)
        return np.stack(
            [pncg_log_probs(model, s, cfg)[rows, space.tokens].sum(axis=1) for s in states]
        )
    if name == "gwl":
        cfg = GwLConfig(kernel_spec.alpha, kernel_spec.p, kernel_spec.scan)
        if cfg.scan != "random":
            raise UnsupportedKernelError("systematic-scan GwL is not a time-homogeneous kernel")
        return _single_site_log_q(space, lambda i: gwl_log_probs(model, states[i], cfg), -math.log(N))
    if name == "rwm":
        K = space.table.n_tokens
        uniform = np.full((N, K), -math.log(K - 1))
        return _single_site_log_q(space, lambda i: uniform, -math.log(N))
    raise UnsupportedKernelError(f"kernel {name!r} has no closed-form proposal probability")


def _rows_from_offdiag(off: np.ndarray) -> np.ndarray:
    P = off.copy()
    np.fill_diagonal(P, 0.0)
    np.fill_diagonal(P, 1.0 - P.sum(axis=1))
    return P


def build_transition_matrix(kernel_spec: KernelSpec, model: EnergyModel, space: StateSpace) -> np.ndarray:
    """Exact transition matrix of p-NCG, random-scan GwL or RWM, with or without MH.

    Off-diagonal entries are ``q(y|x) * a(y|x)``; the diagonal absorbs every
    rejected or self-transition mass. MUCOLA is routed to
    :func:`mucola_exact_matrix`.
    """
    if kernel_spec.name == "mucola":
        if kernel_spec.adjusted:
            raise InfeasibleIntegralError("metropolized MUCOLA needs Gaussian volumes of Voronoi cells")
        return mucola_exact_matrix(model, space, MucolaConfig(kernel_spec.alpha))
    logQ = proposal_log_matrix(kernel_spec, model, space)
    if not kernel_spec.adjusted:
        return _rows_from_offdiag(np.exp(logQ))
    log_pi = -model.energies(space.embeddings)
    with np.errstate(invalid="ignore"):
        log_ratio = log_pi[None, :] + logQ.T - log_pi[:, None] - logQ
        log_accept = np.minimum(0.0, log_ratio)
        off = np.where(np.isfinite(logQ), np.exp(logQ + log_accept), 0.0)
    return _rows_from_offdiag(off)


def mucola_exact_matrix(model: EnergyModel, space: StateSpace, cfg: MucolaConfig) -> np.ndarray:
    """Exact MUCOLA kernel for a binary vocabulary with scalar embeddings.

    Each position's Voronoi cells are half-lines split at the midpoint of the
    two embeddings, so the Gaussian move factorizes into univariate CDFs.
    """
    _check_space(model, space)
    V = space.table.vectors
    if V.shape != (2, 1):
        raise InfeasibleIntegralError(
            f"exact MUCOLA transitions need K=2, h=1 (got K={V.shape[0]}, h={V.shape[1]}): "
            "general Voronoi-cell Gaussian integrals are intractable"
        )
    hi = int(np.argmax(V[:, 0]))
    mid = 0.5 * (V[0, 0] + V[1, 0])
    sd = math.sqrt(cfg.alpha)
    is_hi = space.tokens == hi
    P = np.empty((space.size, space.size))
    for i, s in enumerate(space.states()):
        z = (mucola_mean(model, s, cfg) - mid) / sd
        log_up, log_down = log_ndtr(z), log_ndtr(-z)
        P[i] = np.exp(np.where(is_hi, log_up, log_down).sum(axis=1))
    return P


# Stationary distributions and reversibility


def is_primitive(P: np.ndarray) -> bool:
    """True iff some power of P is entrywise positive (irreducible and aperiodic)."""
    S = P.shape[0]
    M = (P > 0).astype(float)
    if M.all():
        return True
    bound = (S - 1) ** 2 + 1
    power = 1
    while power < bound:
        M = ((M @ M) > 0).astype(float)
        power *= 2
        if M.all():
            return True
    return bool(M.all())


def _gth(P: np.ndarray) -> np.ndarray:
    # Grassmann-Taksar-Heyman elimination; uses only off-diagonal mass, no subtraction
    A = np.array(P, dtype=float)
    S = A.shape[0]
    for n in range(S - 1, 0, -1):
        s = A[n, :n].sum()
        if s <= 0:
            raise NoUniqueStationaryError("chain is reducible")
        A[:n, n] /= s
        A[:n, :n] += np.outer(A[:n, n], A[n, :n])
    v = np.zeros(S)
    v[0] = 1.0
    for n in range(1, S):
        v[n] = v[:n] @ A[:n, n]
    return v / v.sum()


def stationary_distribution(P: np.ndarray, method: str = "gth", check: bool = True) -> np.ndarray:
    """Unique stationary vector of an ergodic kernel.

    ``gth`` (default) is subtraction-free elimination and stays accurate
    when P is numerically close to the identity; ``solve`` replaces one
    equation of ``(P^T - I) v = 0`` by the normalization; ``eig`` takes the
    left eigenvector of eigenvalue 1.
    """
    P = np.asarray(P, dtype=float)
    S = P.shape[0]
    if check and not is_primitive(P):
        raise NoUniqueStationaryError("chain is reducible or periodic")
    if method == "gth":
        v = _gth(P)
    elif method == "solve":
        M = P.T - np.eye(S)
        M[-1, :] = 1.0
        rhs = np.zeros(S)
        rhs[-1] = 1.0
        v = np.linalg.solve(M, rhs)
    elif method == "eig":
        w, vecs = np.linalg.eig(P.T)
        v = np.real(vecs[:, np.argmin(np.abs(w - 1.0))])
        v = v / v.sum()
    else:
        raise ContractViolation(f"unknown method {method!r}")
    v = np.clip(v, 0.0, None)
    v /= v.sum()
    residual = np.abs(v @ P - v).max()
    if residual > 1e-10:
        raise NoUniqueStationaryError(f"stationary residual {residual:.2e} exceeds 1e-10")
    return v


def detailed_balance_residual(P: np.ndarray, pi) -> float:
    F = np.asarray(pi)[:, None] * P
    return float(np.abs(F - F.T).max())


def invariance_residual(P: np.ndarray, pi) -> float:
    pi = np.asarray(pi)
    return float(np.abs(pi @ P - pi).max())


def pi_alpha(model: EnergyModel, space: StateSpace, cfg: PNCGConfig) -> np.ndarray:
    """Closed-form reversing distribution of unadjusted p-NCG on a quadratic energy.

    ``pi_alpha(x) ∝ Z_alpha(x) pi(x)`` where ``Z_alpha(x)`` sums
    ``exp(-(U(y)-U(x))/2 + (y-x)^T H (y-x)/4 - ||y-x||_p^p / (2 alpha))``
    over all states ``y`` and ``H`` is the constant Hessian of ``U``.
    """
    _check_space(model, space)
    H = model.hessian()
    if H is None:
        raise UnsupportedKernelError("pi_alpha needs an exactly quadratic energy")
    E = space.embeddings
    U = model.energies(E)
    EH = E @ H
    qd = np.einsum("si,si->s", EH, E)
    log_Z = np.empty(space.size)
    for i in range(space.size):
        quad = qd + qd[i] - 2.0 * (EH[i] @ E.T)
        pen = np.sum(np.abs(E - E[i]) ** cfg.p, axis=1)
        log_Z[i] = logsumexp(-0.5 * (U - U[i]) + 0.25 * quad - pen / (2.0 * cfg.alpha))
    logits = log_Z - U
    return np.exp(logits - logsumexp(logits))


# Spectra and mixing


class SpectralGap(NamedTuple):
    gamma: float
    lambda2: float


def _check_reversible(P, pi, tol=1e-10):
    F = np.asarray(pi)[:, None] * P
    R = np.abs(F - F.T)
    worst = np.unravel_index(np.argmax(R), R.shape)
    if R[worst] > tol:
        raise NonReversibleError((int(worst[0]), int(worst[1])), float(R[worst]))


def reversible_eigenvalues(P: np.ndarray, pi) -> np.ndarray:
    """Eigenvalues (descending) of a reversible kernel via its symmetrization."""
    _check_reversible(P, pi)
    r = np.sqrt(np.asarray(pi, dtype=float))
    A = r[:, None] * P / r[None, :]
    return np.linalg.eigvalsh(0.5 * (A + A.T))[::-1]


def spectral_gap(P: np.ndarray, pi) -> SpectralGap:
    lam = reversible_eigenvalues(P, pi)
    return SpectralGap(float(1.0 - lam[1]), float(lam[1]))


def absolute_spectral_gap(P: np.ndarray, pi) -> float:
    lam = reversible_eigenvalues(P, pi)
    return float(1.0 - np.abs(lam[1:]).max())


class GershgorinReport(NamedTuple):
    discs: list
    contained: bool
    eigenvalues: np.ndarray


def gershgorin_check(P: np.ndarray, tol: float = 1e-8) -> GershgorinReport:
    P = np.asarray(P, dtype=float)
    centers = np.diag(P).copy()
    radii = np.abs(P).sum(axis=1) - np.abs(centers)
    eig = np.linalg.eigvals(P)
    dist = np.abs(eig[:, None] - centers[None, :])
    contained = bool(np.all(np.any(dist <= radii[None, :] + tol, axis=1)))
    return GershgorinReport(list(zip(centers.tolist(), radii.tolist())), contained, eig)


class LowerBoundOnly(int):
    """Mixing time not reached within the cap; the value is a lower bound."""

    def __repr__(self):
        return f">={int(self)}"


def tv_to_stationary(Pt: np.ndarray, pi) -> float:
    return float(0.5 * np.abs(Pt - np.asarray(pi)[None, :]).sum(axis=1).max())


def exact_mixing_time(P: np.ndarray, pi, epsilon: float = 0.25, cap: int = DEFAULT_CAP) -> int:
    """Smallest t >= 1 with worst-start TV(P^t(x, .), pi) <= epsilon.

    The worst-start distance is non-increasing in t, so powers P^(2^k) are
    built by repeated squaring and the crossing point is located by binary
    search over their products.
    """
    if not 0 < epsilon < 1:
        raise ContractViolation("epsilon must lie in (0, 1)")
    P = np.asarray(P, dtype=float)
    if tv_to_stationary(P, pi) <= epsilon:
        return 1
    powers = [P]
    while 2 ** len(powers) <= cap:
        nxt = powers[-1] @ powers[-1]
        powers.append(nxt)
        if tv_to_stationary(nxt, pi) <= epsilon:
            break
    else:
        if _exceeds_after(powers, cap, pi, epsilon):
            return LowerBoundOnly(cap)
    # largest t with distance > epsilon, assembled bit by bit
    t, Pt = 0, None
    for k in range(len(powers) - 1, -1, -1):
        if t + 2**k > cap:
            continue
        cand = powers[k] if Pt is None else Pt @ powers[k]
        if tv_to_stationary(cand, pi) > epsilon:
            t, Pt = t + 2**k, cand
    return t + 1


def _exceeds_after(powers, t: int, pi, epsilon) -> bool:
    Pt = None
    for k, Pk in enumerate(powers):
        if t >> k & 1:
            Pt = Pk if Pt is None else Pt @ Pk
    return tv_to_stationary(Pt, pi) > epsilon


def relaxation_bracket(P: np.ndarray, pi, epsilon: float) -> tuple[float, float]:
    """Spectral bracket on t_mix: ``(1/gamma - 1) log(1/2eps) <= t_mix <= log(1/(eps pi_min)) / gamma_abs``."""
    gamma = spectral_gap(P, pi).gamma
    gamma_abs = absolute_spectral_gap(P, pi)
    lower = (1.0 / gamma - 1.0) * math.log(1.0 / (2.0 * epsilon)) if gamma > 0 else math.inf
    upper = math.log(1.0 / (epsilon * float(np.min(pi)))) / gamma_abs if gamma_abs > 0 else math.inf
    return lower, upper


def min_pairwise_power_distance(space: StateSpace, q: float) -> float:
    """min over distinct states of ||x - x'||_q^q."""
    E = space.embeddings
    best = math.inf
    for i in range(space.size - 1):
        d = np.sum(np.abs(E[i + 1 :] - E[i]) ** q, axis=1)
        best = min(best, float(d.min()))
    return best


@dataclass
class MixingReport:
    alpha: float
    p: float
    epsilon: float
    t_mix: int | None
    t_mix_capped: bool
    lower_bound: float
    c1: float
    c2: float
    Z: float
    lambda_min: float
    d_2: float
    d_p: float
    gamma: float
    lambda2: float
    gershgorin_contained: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _exp_or_inf(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def mixing_time_lower_bound(
    model: EnergyModel,
    space: StateSpace,
    cfg: PNCGConfig,
    epsilon: float = 0.25,
    cap: int = DEFAULT_CAP,
) -> MixingReport:
    """Mixing-time lower bound for unadjusted p-NCG, alongside the exact value.

    Constants use the quadratic-form matrix ``A = -H/2`` (so that
    ``pi ∝ exp(x^T A x + ...)``) and energies shifted to have maximum 0.
    """
    _check_space(model, space)
    H = model.hessian()
    if H is None:
        raise UnsupportedKernelError("the mixing bound needs an exactly quadratic energy")
    A = -0.5 * H
    lam_min = float(np.linalg.eigvalsh(0.5 * (A + A.T)).min())
    d2 = min_pairwise_power_distance(space, 2.0)
    dp = min_pairwise_power_distance(space, cfg.p)
    U = model.energies(space.embeddings)
    log_Z = float(logsumexp(-(U - U.max())))
    log_c1 = math.log(0.5) + lam_min * d2 / 2.0
    bound = (_exp_or_inf(log_c1 - log_Z + dp / (2.0 * cfg.alpha)) - 1.0) * math.log(1.0 / (2.0 * epsilon))

    P = build_transition_matrix(KernelSpec("pncg", cfg.alpha, cfg.p, adjusted=False), model, space)
    target = pi_alpha(model, space, cfg)
    t_mix = exact_mixing_time(P, target, epsilon, cap)
    gap = spectral_gap(P, target)
    return MixingReport(
        alpha=cfg.alpha,
        p=cfg.p,
        epsilon=epsilon,
        t_mix=int(t_mix),
        t_mix_capped=isinstance(t_mix, LowerBoundOnly),
        lower_bound=bound,
        c1=math.exp(log_c1),
        c2=dp,
        Z=_exp_or_inf(log_Z),
        lambda_min=lam_min,
        d_2=d2,
        d_p=dp,
        gamma=gap.gamma,
        lambda2=gap.lambda2,
        gershgorin_contained=gershgorin_check(P).contained,
    )


# Export


def write_matrix_csv(path, P: np.ndarray, labels: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from"] + labels)
        for lab, row in zip(labels, P):
            w.writerow([lab] + [repr(float(v)) for v in row])


def write_distribution_csv(path, pi, labels: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state", "probability"])
        for lab, v in zip(labels, pi):
            w.writerow([lab, repr(float(v))])


def mixing_report_json(reports: list[MixingReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)
