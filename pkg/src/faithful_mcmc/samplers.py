"""Proposal kernels, Metropolis-Hastings correction and the chain runner.

Kernels implemented here:

* p-NCG: every position is resampled in parallel from a softmax over
  ``-0.5 * grad_n^T (v - x_n) - ||v - x_n||_p^p / (2 alpha)``.
* GwL: one position is resampled from a softmax over
  ``-grad_n^T (v - x_n) - ||v - x_n||_p^p / alpha`` with the current token
  excluded.
* RWM: one uniformly chosen position moves to a uniformly chosen other token.
* MUCOLA: unadjusted Langevin step in embedding space followed by a
  nearest-embedding projection.

All acceptance arithmetic is done in log space.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import log_softmax

from .energy import EnergyModel, SequenceState
from .errors import ChainAborted, ContractViolation, NoLegalMoveError

SCANS = ("random", "systematic")


@dataclass(frozen=True)
class PNCGConfig:
    alpha: float = 1.0
    p: float = 2.0

    def __post_init__(self):
        _check_alpha(self.alpha)
        _check_p(self.p)


@dataclass(frozen=True)
class GwLConfig:
    alpha: float = 1.0
    p: float = 2.0
    scan: str = "random"

    def __post_init__(self):
        _check_alpha(self.alpha)
        _check_p(self.p)
        if self.scan not in SCANS:
            raise ContractViolation(f"scan must be one of {SCANS}, got {self.scan!r}")


@dataclass(frozen=True)
class MucolaConfig:
    alpha: float = 1.5

    def __post_init__(self):
        _check_alpha(self.alpha)


@dataclass(frozen=True)
class HybridConfig:
    window: int = 100
    change_threshold: float = 1.0
    max_pncg_steps: int = 5000

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 1:
            raise ContractViolation(f"window must be a positive integer, got {self.window}")
        if not self.change_threshold >= 0:
            raise ContractViolation("change_threshold must be non-negative")
        if int(self.max_pncg_steps) != self.max_pncg_steps or self.max_pncg_steps < 1:
            raise ContractViolation("max_pncg_steps must be a positive integer")


def _check_alpha(alpha):
    if not (isinstance(alpha, (int, float)) and math.isfinite(alpha) and alpha > 0):
        raise ContractViolation(f"step size alpha must be a positive finite number, got {alpha!r}")


def _check_p(p):
    if not (isinstance(p, (int, float)) and math.isfinite(p) and p >= 1):
        raise ContractViolation(f"norm exponent p must be >= 1, got {p!r}")


KERNELS = ("pncg", "gwl", "rwm", "mucola", "hybrid")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel name plus parameters; hybrid uses the p-NCG/GwL fields for both phases."""

    name: str
    alpha: float = 1.0
    p: float = 2.0
    scan: str = "random"
    adjusted: bool = True
    window: int = 100
    change_threshold: float = 1.0
    max_pncg_steps: int = 5000

    def __post_init__(self):
        if self.name not in KERNELS:
            raise ContractViolation(f"unknown kernel {self.name!r}; expected one of {KERNELS}")
        _check_alpha(self.alpha)
        _check_p(self.p)
        if self.scan not in SCANS:
            raise ContractViolation(f"scan must be one of {SCANS}, got {self.scan!r}")
        if self.name == "mucola" and self.adjusted:
            raise ContractViolation("MUCOLA has no tractable MH correction; set adjusted=false")
        if self.name == "hybrid":
            HybridConfig(self.window, self.change_threshold, self.max_pncg_steps)

    @property
    def label(self) -> str:
        if self.name in ("mucola", "hybrid"):
            return self.name
        return f"{self.name}+mh" if self.adjusted else self.name


@dataclass(frozen=True)
class Candidate:
    state: SequenceState
    log_q: float
    changes: int


@dataclass(frozen=True)
class StepRecord:
    accepted: bool
    energy: float
    log_ratio: float
    changes: int
    kernel: str = ""
    flagged: bool = False


# p-NCG


def _position_diffs(model: EnergyModel, state: SequenceState):
    V = model.table.vectors
    X = state.x.reshape(model.n_positions, model.table.dim)
    g = model.gradient(state.x).reshape(X.shape)
    return g, V[None, :, :] - X[:, None, :]


def pncg_logits(model: EnergyModel, state: SequenceState, cfg: PNCGConfig) -> np.ndarray:
    """Unnormalized log-probabilities for every position, shape (N, K)."""
    model.check_state(state)
    g, diffs = _position_diffs(model, state)
    linear = -0.5 * np.einsum("nh,nkh->nk", g, diffs)
    penalty = np.sum(np.abs(diffs) ** cfg.p, axis=-1) / (2.0 * cfg.alpha)
    return linear - penalty


def pncg_position_logits(
    model: EnergyModel, state: SequenceState, cfg: PNCGConfig, position: int
) -> np.ndarray:
    return pncg_logits(model, state, cfg)[position]


def pncg_log_probs(model: EnergyModel, state: SequenceState, cfg: PNCGConfig) -> np.ndarray:
    return log_softmax(pncg_logits(model, state, cfg), axis=1)


def _sample_rows(log_probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # inverse-CDF draw, one uniform per row
    cdf = np.cumsum(np.exp(log_probs), axis=1)
    u = rng.random(log_probs.shape[0]) * cdf[:, -1]
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, log_probs.shape[1] - 1)


def _pncg_draw(log_probs: np.ndarray, state: SequenceState, rng) -> Candidate:
    tokens = _sample_rows(log_probs, rng)
    log_q = float(log_probs[np.arange(len(tokens)), tokens].sum())
    new = SequenceState(tuple(tokens.tolist()), state.table)
    return Candidate(new, log_q, new.hamming(state))


def pncg_propose(model: EnergyModel, state: SequenceState, cfg: PNCGConfig, rng) -> Candidate:
    return _pncg_draw(pncg_log_probs(model, state, cfg), state, rng)


def pncg_log_q(model: EnergyModel, src: SequenceState, dst: SequenceState, cfg: PNCGConfig) -> float:
    L = pncg_log_probs(model, src, cfg)
    return float(L[np.arange(len(dst.tokens)), list(dst.tokens)].sum())


# GwL


def gwl_position_logits(
    model: EnergyModel, state: SequenceState, cfg: GwLConfig, position: int
) -> np.ndarray:
    """Logits over all K tokens at ``position``; the current token gets -inf."""
    model.check_state(state)
    h = model.table.dim
    g = model.gradient(state.x)[position * h : (position + 1) * h]
    diffs = model.table.vectors - state.x[position * h : (position + 1) * h]
    logits = -diffs @ g - np.sum(np.abs(diffs) ** cfg.p, axis=1) / cfg.alpha
    logits[state.tokens[position]] = -np.inf
    return logits


def _gwl_position_log_probs(model, state, cfg, position) -> np.ndarray:
    if model.table.n_tokens < 2:
        raise NoLegalMoveError("GwL needs at least two tokens")
    return log_softmax(gwl_position_logits(model, state, cfg, position))


def gwl_log_probs(model: EnergyModel, state: SequenceState, cfg: GwLConfig) -> np.ndarray:
    """Per-position GwL conditionals for all positions at once, shape (N, K)."""
    model.check_state(state)
    if model.table.n_tokens < 2:
        raise NoLegalMoveError("GwL needs at least two tokens")
    g, diffs = _position_diffs(model, state)
    logits = -np.einsum("nh,nkh->nk", g, diffs) - np.sum(np.abs(diffs) ** cfg.p, axis=-1) / cfg.alpha
    logits[np.arange(model.n_positions), list(state.tokens)] = -np.inf
    return log_softmax(logits, axis=1)


def _scan_log_prob(cfg: GwLConfig, n_positions: int) -> float:
    return -math.log(n_positions) if cfg.scan == "random" else 0.0


def gwl_propose(
    model: EnergyModel, state: SequenceState, cfg: GwLConfig, position: int, rng
) -> Candidate:
    L = _gwl_position_log_probs(model, state, cfg, position)
    token = int(_sample_rows(L[None, :], rng)[0])
    log_q = float(L[token]) + _scan_log_prob(cfg, model.n_positions)
    return Candidate(state.replace(position, token), log_q, 1)


def gwl_log_q(model: EnergyModel, src: SequenceState, dst: SequenceState, cfg: GwLConfig) -> float:
    """Log-probability of the single-site move src -> dst; -inf when impossible."""
    diff = [n for n, (a, b) in enumerate(zip(src.tokens, dst.tokens)) if a != b]
    if len(diff) != 1:
        return -math.inf
    n = diff[0]
    L = _gwl_position_log_probs(model, src, cfg, n)
    return float(L[dst.tokens[n]]) + _scan_log_prob(cfg, model.n_positions)


# random-walk Metropolis


def rwm_propose(state: SequenceState, rng) -> Candidate:
    K = state.table.n_tokens
    if K < 2:
        raise NoLegalMoveError("RWM needs at least two tokens")
    N = state.n_positions
    position = int(rng.integers(N))
    token = int(rng.integers(K - 1))
    if token >= state.tokens[position]:
        token += 1
    return Candidate(state.replace(position, token), -math.log(N) - math.log(K - 1), 1)


def rwm_log_q(src: SequenceState, dst: SequenceState) -> float:
    if src.hamming(dst) != 1:
        return -math.inf
    return -math.log(src.n_positions) - math.log(src.table.n_tokens - 1)


# Proposal objects used by the MH machinery


class PNCGProposal:
    name = "pncg"

    def __init__(self, cfg: PNCGConfig, cache_size: int = 4096):
        self.cfg = cfg
        # accepted candidates reuse the reverse-move gradient on the next step
        self._log_probs = lru_cache(maxsize=cache_size)(self._compute)

    def _compute(self, model, state):
        L = pncg_log_probs(model, state, self.cfg)
        L.setflags(write=False)
        return L

    def propose(self, model, state, rng, t: int = 0) -> Candidate:
        return _pncg_draw(self._log_probs(model, state), state, rng)

    def log_q(self, model, src, dst) -> float:
        L = self._log_probs(model, src)
        return float(L[np.arange(len(dst.tokens)), list(dst.tokens)].sum())


class GwLProposal:
    name = "gwl"

    def __init__(self, cfg: GwLConfig, cache_size: int = 4096):
        self.cfg = cfg
        self._log_probs = lru_cache(maxsize=cache_size)(self._compute)

    def _compute(self, model, state):
        L = gwl_log_probs(model, state, self.cfg)
        L.setflags(write=False)
        return L

    def position(self, model, rng, t: int) -> int:
        if self.cfg.scan == "random":
            return int(rng.integers(model.n_positions))
        return t % model.n_positions

    def propose(self, model, state, rng, t: int = 0) -> Candidate:
        n = self.position(model, rng, t)
        row = self._log_probs(model, state)[n]
        token = int(_sample_rows(row[None, :], rng)[0])
        log_q = float(row[token]) + _scan_log_prob(self.cfg, model.n_positions)
        return Candidate(state.replace(n, token), log_q, 1)

    def log_q(self, model, src, dst) -> float:
        diff = [n for n, (a, b) in enumerate(zip(src.tokens, dst.tokens)) if a != b]
        if len(diff) != 1:
            return -math.inf
        n = diff[0]
        row = self._log_probs(model, src)[n]
        return float(row[dst.tokens[n]]) + _scan_log_prob(self.cfg, model.n_positions)


class RWMProposal:
    name = "rwm"

    def propose(self, model, state, rng, t: int = 0) -> Candidate:
        return rwm_propose(state, rng)

    def log_q(self, model, src, dst) -> float:
        return rwm_log_q(src, dst)


def mh_step(model: EnergyModel, proposal, state: SequenceState, rng, t: int = 0):
    """One Metropolis-Hastings step; returns ``(next_state, StepRecord)``."""
    cand = proposal.propose(model, state, rng, t)
    u = rng.random()
    name = getattr(proposal, "name", "")
    U_old = model.energy(state.x)
    if cand.state == state:
        return state, StepRecord(True, U_old, 0.0, 0, name)
    U_new = model.energy(cand.state.x)
    if not math.isfinite(U_new):
        return state, StepRecord(False, U_old, -math.inf, cand.changes, name, flagged=True)
    log_ratio = -U_new + U_old + proposal.log_q(model, cand.state, state) - cand.log_q
    # never exponentiate a positive log-ratio
    accepted = log_ratio >= 0 or u < math.exp(log_ratio)
    if accepted:
        return cand.state, StepRecord(True, U_new, log_ratio, cand.changes, name)
    return state, StepRecord(False, U_old, log_ratio, cand.changes, name)


# MUCOLA


def _project(model: EnergyModel, y: np.ndarray) -> np.ndarray:
    """Nearest-embedding token per position for rows of ``y``; ties go to the lowest index."""
    V = model.table.vectors
    Y = y.reshape(*y.shape[:-1], model.n_positions, 1, model.table.dim)
    d2 = np.sum((Y - V) ** 2, axis=-1)
    return np.argmin(d2, axis=-1)


def mucola_mean(model: EnergyModel, state: SequenceState, cfg: MucolaConfig) -> np.ndarray:
    return state.x - 0.5 * cfg.alpha * model.gradient(state.x)


def mucola_step(model: EnergyModel, state: SequenceState, cfg: MucolaConfig, rng) -> SequenceState:
    model.check_state(state)
    y = mucola_mean(model, state, cfg) + math.sqrt(cfg.alpha) * rng.standard_normal(model.dim)
    return SequenceState(tuple(_project(model, y).tolist()), state.table)


def mucola_sample(model: EnergyModel, state: SequenceState, cfg: MucolaConfig, rng, size: int) -> np.ndarray:
    """``size`` independent MUCOLA moves from one state, as a (size, N) token array."""
    model.check_state(state)
    y = mucola_mean(model, state, cfg) + math.sqrt(cfg.alpha) * rng.standard_normal((size, model.dim))
    return _project(model, y)


# Chain kernels


class MHKernel:
    def __init__(self, model: EnergyModel, proposal):
        self.model = model
        self.proposal = proposal
        self.name = f"{proposal.name}+mh"

    def step(self, state, rng, t: int = 0):
        return mh_step(self.model, self.proposal, state, rng, t)


class UnadjustedKernel:
    """Accepts every proposal."""

    def __init__(self, model: EnergyModel, proposal):
        self.model = model
        self.proposal = proposal
        self.name = proposal.name

    def step(self, state, rng, t: int = 0):
        cand = self.proposal.propose(self.model, state, rng, t)
        return cand.state, StepRecord(
            True, self.model.energy(cand.state.x), math.nan, cand.changes, self.name
        )


class MucolaKernel:
    name = "mucola"

    def __init__(self, model: EnergyModel, cfg: MucolaConfig):
        self.model = model
        self.cfg = cfg

    def step(self, state, rng, t: int = 0):
        new = mucola_step(self.model, state, self.cfg, rng)
        return new, StepRecord(True, self.model.energy(new.x), math.nan, new.hamming(state), self.name)


def hybrid_should_switch(
    history: Sequence[StepRecord], cfg: HybridConfig, steps_taken: int | None = None
) -> bool:
    """Switch once recent p-NCG proposals barely move, or after the step cap."""
    if steps_taken is not None and steps_taken >= cfg.max_pncg_steps:
        return True
    if len(history) < cfg.window:
        return False
    recent = list(history)[-cfg.window :]
    return sum(r.changes for r in recent) / cfg.window <= cfg.change_threshold


class HybridKernel:
    """p-NCG+MH until the proposals settle, then GwL+MH for the rest of the chain."""

    name = "hybrid"

    def __init__(self, model: EnergyModel, pncg: PNCGConfig, gwl: GwLConfig, cfg: HybridConfig):
        self.model = model
        self.cfg = cfg
        self.pncg = MHKernel(model, PNCGProposal(pncg))
        self.gwl = MHKernel(model, GwLProposal(gwl))
        self.switch_step: int | None = None
        self._history: deque[StepRecord] = deque(maxlen=cfg.window)
        self._pncg_steps = 0

    def step(self, state, rng, t: int = 0):
        if self.switch_step is not None:
            return self.gwl.step(state, rng, t - self.switch_step)
        state, record = self.pncg.step(state, rng, t)
        self._pncg_steps += 1
        self._history.append(record)
        if hybrid_should_switch(self._history, self.cfg, self._pncg_steps):
            self.switch_step = self._pncg_steps
        return state, record


@dataclass
class ChainTrace:
    initial: tuple[int, ...]
    tokens: np.ndarray
    energies: np.ndarray
    accepted: np.ndarray
    changes: np.ndarray
    log_ratios: np.ndarray
    flagged: np.ndarray
    kernel: str = ""
    switch_step: int | None = None
    final: tuple[int, ...] | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.energies)

    def truncated(self, n: int) -> "ChainTrace":
        return ChainTrace(
            self.initial,
            self.tokens[:n],
            self.energies[:n],
            self.accepted[:n],
            self.changes[:n],
            self.log_ratios[:n],
            self.flagged[:n],
            self.kernel,
            self.switch_step,
            tuple(self.tokens[n - 1].tolist()) if n else self.initial,
            self.meta,
        )


def run_chain(
    kernel,
    initial: SequenceState,
    steps: int,
    rng: np.random.Generator,
    callbacks: Iterable[Callable] = (),
) -> ChainTrace:
    """Iterate ``kernel.step`` and record every post-step state.

    Each callback is invoked as ``cb(t, state, record)`` with ``t`` counting
    from 1. If a callback raises, ``ChainAborted`` carries the partial trace.
    """
    if int(steps) != steps or steps < 1:
        raise ContractViolation(f"steps must be a positive integer, got {steps}")
    callbacks = list(callbacks)
    N = initial.n_positions
    tokens = np.empty((steps, N), dtype=np.int32)
    energies = np.empty(steps)
    accepted = np.empty(steps, dtype=bool)
    changes = np.empty(steps, dtype=np.int32)
    log_ratios = np.empty(steps)
    flagged = np.empty(steps, dtype=bool)
    trace = ChainTrace(
        initial.tokens, tokens, energies, accepted, changes, log_ratios, flagged,
        getattr(kernel, "name", ""),
    )
    state = initial
    for t in range(steps):
        state, rec = kernel.step(state, rng, t)
        tokens[t] = state.tokens
        energies[t] = rec.energy
        accepted[t] = rec.accepted
        changes[t] = rec.changes
        log_ratios[t] = rec.log_ratio
        flagged[t] = rec.flagged
        for cb in callbacks:
            try:
                cb(t + 1, state, rec)
            except Exception as exc:
                partial = trace.truncated(t + 1)
                partial.switch_step = getattr(kernel, "switch_step", None)
                raise ChainAborted(f"callback failed at step {t + 1}: {exc}", partial) from exc
    trace.final = state.tokens
    trace.switch_step = getattr(kernel, "switch_step", None)
    return trace


def random_state(table, n_positions: int, rng) -> SequenceState:
    return SequenceState(tuple(rng.integers(table.n_tokens, size=n_positions).tolist()), table)


def make_kernel(spec: KernelSpec, model: EnergyModel):
    name = spec.name
    if name == "pncg":
        prop = PNCGProposal(PNCGConfig(spec.alpha, spec.p))
    elif name == "gwl":
        prop = GwLProposal(GwLConfig(spec.alpha, spec.p, spec.scan))
    elif name == "rwm":
        prop = RWMProposal()
    elif name == "mucola":
        return MucolaKernel(model, MucolaConfig(spec.alpha))
    elif name == "hybrid":
        return HybridKernel(
            model,
            PNCGConfig(spec.alpha, spec.p),
            GwLConfig(spec.alpha, spec.p, spec.scan),
            HybridConfig(spec.window, spec.change_threshold, spec.max_pncg_steps),
        )
    else:
        raise ContractViolation(f"unknown kernel {name!r}")
    return MHKernel(model, prop) if spec.adjusted else UnadjustedKernel(model, prop)
