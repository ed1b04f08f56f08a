"""Embedded discrete states and energy models with analytic gradients.

Energies follow ``pi(x) ∝ exp(-U(x))`` where ``x`` is the flat concatenation
of per-position embedding vectors. The log-quadratic family uses

    U(x) = -beta * (0.5 * x^T J x + b^T x)

so its Hessian is the constant ``-beta * J``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractViolation


class EmbeddingTable:
    """K distinct token embeddings of dimension h."""

    def __init__(self, vectors, labels: Sequence[str] | None = None):
        vectors = np.array(vectors, dtype=float)
        if vectors.ndim == 1:
            vectors = vectors[:, None]
        if vectors.ndim != 2:
            raise ContractViolation("embedding vectors must form a K x h array")
        K, h = vectors.shape
        if K < 2:
            raise ContractViolation(f"need at least 2 tokens, got {K}")
        if h < 1:
            raise ContractViolation("embedding dimension must be at least 1")
        if len(np.unique(vectors, axis=0)) != K:
            raise ContractViolation("embedding vectors must be pairwise distinct")
        if labels is None:
            labels = [str(i) for i in range(K)]
        if len(labels) != K:
            raise ContractViolation(f"{len(labels)} labels for {K} tokens")
        vectors.setflags(write=False)
        self.vectors = vectors
        self.labels = [str(lab) for lab in labels]

    @property
    def n_tokens(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def embed(self, tokens) -> np.ndarray:
        return self.vectors[np.asarray(tokens, dtype=int)].reshape(-1)

    def state(self, tokens) -> "SequenceState":
        return SequenceState(tuple(int(t) for t in tokens), self)

    def same_as(self, other: "EmbeddingTable") -> bool:
        return self is other or (
            self.vectors.shape == other.vectors.shape and np.array_equal(self.vectors, other.vectors)
        )

    def __repr__(self) -> str:
        return f"EmbeddingTable(K={self.n_tokens}, h={self.dim})"


def binary_table() -> EmbeddingTable:
    """The spin vocabulary {-1, +1} with one-dimensional embeddings."""
    return EmbeddingTable([[-1.0], [1.0]], labels=["-1", "+1"])


@dataclass(frozen=True, eq=False)
class SequenceState:
    tokens: tuple[int, ...]
    table: EmbeddingTable = field(repr=False)

    def __post_init__(self):
        K = self.table.n_tokens
        for t in self.tokens:
            if not 0 <= t < K:
                raise ContractViolation(f"token index {t} outside [0, {K})")

    @property
    def n_positions(self) -> int:
        return len(self.tokens)

    @property
    def x(self) -> np.ndarray:
        cached = self.__dict__.get("_x")
        if cached is None:
            cached = self.table.embed(self.tokens)
            cached.setflags(write=False)
            object.__setattr__(self, "_x", cached)
        return cached

    def replace(self, position: int, token: int) -> "SequenceState":
        tokens = list(self.tokens)
        tokens[position] = int(token)
        return SequenceState(tuple(tokens), self.table)

    def hamming(self, other: "SequenceState") -> int:
        return sum(a != b for a, b in zip(self.tokens, other.tokens))

    def __eq__(self, other):
        if not isinstance(other, SequenceState):
            return NotImplemented
        return self.tokens == other.tokens and self.table.same_as(other.table)

    def __hash__(self):
        return hash(self.tokens)


class EnergyModel:
    """Base class: an energy over N positions of an embedding table.

    Subclasses implement ``energy`` and ``gradient`` for any real vector of
    length ``N * h``; lattice points are just a special case.
    """

    table: EmbeddingTable
    n_positions: int

    @property
    def dim(self) -> int:
        return self.n_positions * self.table.dim

    def energy(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self) -> np.ndarray | None:
        """Constant Hessian if the energy is exactly quadratic, else None."""
        return None

    def energies(self, X: np.ndarray) -> np.ndarray:
        """Energies of each row of ``X``."""
        return np.array([self.energy(row) for row in X])

    def check_state(self, state: SequenceState) -> None:
        if not state.table.same_as(self.table):
            raise ContractViolation("state uses a different embedding table than the model")
        if state.n_positions != self.n_positions:
            raise ContractViolation(
                f"state has {state.n_positions} positions, model expects {self.n_positions}"
            )


def cycle_adjacency(n: int) -> np.ndarray:
    """Adjacency matrix of the n-cycle (position n-1 wraps to 0)."""
    if n < 2:
        raise ContractViolation("a cycle needs at least 2 positions")
    A = np.zeros((n, n))
    for i in range(n):
        j = (i + 1) % n
        A[i, j] = A[j, i] = 1.0
    return A


class LogQuadraticEnergy(EnergyModel):
    def __init__(self, table: EmbeddingTable, J, b=None, beta: float = 1.0):
        J = np.array(J, dtype=float)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ContractViolation("J must be a square matrix")
        d = J.shape[0]
        if d % table.dim:
            raise ContractViolation(f"J has size {d}, not a multiple of embedding dim {table.dim}")
        if beta < 0 or not np.isfinite(beta):
            raise ContractViolation(f"beta must be a non-negative finite number, got {beta}")
        b = np.zeros(d) if b is None else np.array(b, dtype=float).reshape(-1)
        if b.shape != (d,):
            raise ContractViolation(f"b has length {b.size}, expected {d}")
        self.table = table
        self.n_positions = d // table.dim
        self.J = 0.5 * (J + J.T)
        self.b = b
        self.beta = float(beta)
        self._H = -self.beta * self.J

    @classmethod
    def cycle(cls, n: int, beta: float, table: EmbeddingTable | None = None, b=None):
        table = binary_table() if table is None else table
        J = np.kron(cycle_adjacency(n), np.eye(table.dim))
        return cls(table, J, b, beta)

    def energy(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(-self.beta * (0.5 * x @ self.J @ x + self.b @ x))

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return -self.beta * (self.J @ x + self.b)

    def hessian(self) -> np.ndarray:
        return self._H

    def energies(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return -self.beta * (0.5 * np.einsum("si,ij,sj->s", X, self.J, X) + X @ self.b)


class CompositeEnergy(EnergyModel):
    """Weighted sum of energies sharing one table and sequence length."""

    def __init__(self, terms: Sequence[tuple[EnergyModel, float]]):
        if not terms:
            raise ContractViolation("composite energy needs at least one term")
        first = terms[0][0]
        for model, _ in terms:
            if not model.table.same_as(first.table) or model.n_positions != first.n_positions:
                raise ContractViolation("all composite terms must share the table and length")
        self.terms = [(model, float(w)) for model, w in terms]
        self.table = first.table
        self.n_positions = first.n_positions

    def energy(self, x) -> float:
        return float(sum(w * m.energy(x) for m, w in self.terms))

    def gradient(self, x) -> np.ndarray:
        return sum(w * m.gradient(x) for m, w in self.terms)

    def hessian(self) -> np.ndarray | None:
        parts = [m.hessian() for m, _ in self.terms]
        if any(H is None for H in parts):
            return None
        return sum(w * H for (_, w), H in zip(self.terms, parts))

    def energies(self, X) -> np.ndarray:
        return sum(w * m.energies(X) for m, w in self.terms)


def energy_eval(model: EnergyModel, state: SequenceState) -> float:
    model.check_state(state)
    return model.energy(state.x)


def gradient_eval(model: EnergyModel, state: SequenceState) -> np.ndarray:
    model.check_state(state)
    return model.gradient(state.x)


def finite_diff_gradient(model: EnergyModel, x, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``model.energy`` at an arbitrary real point."""
    if step <= 0:
        raise ContractViolation("finite-difference step must be positive")
    x = np.array(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (model.energy(x + e) - model.energy(x - e)) / (2 * step)
    return grad


# JSON model documents


def _table_from_doc(doc: dict, table: EmbeddingTable | None) -> EmbeddingTable:
    if "embeddings" in doc:
        return EmbeddingTable(doc["embeddings"], doc.get("labels"))
    if table is not None:
        return table
    raise ContractViolation("model document needs an 'embeddings' array")


_LOG_QUADRATIC_KEYS = {"type", "beta", "J", "b", "embeddings", "labels"}
_COMPOSITE_KEYS = {"type", "terms", "embeddings", "labels"}


def model_from_dict(doc: dict, table: EmbeddingTable | None = None) -> EnergyModel:
    """Build an energy model from its JSON document.

    ``J`` is either a dense row-major matrix or ``{"cycle": N}``. Composite
    terms are ``{"weight": w, "model": {...}}`` and inherit the outer
    embeddings unless they declare their own.
    """
    kind = doc.get("type")
    if kind == "log_quadratic":
        unknown = set(doc) - _LOG_QUADRATIC_KEYS
        if unknown:
            raise ContractViolation(f"unknown model keys: {sorted(unknown)}")
        table = _table_from_doc(doc, table)
        if "J" not in doc:
            raise ContractViolation("log_quadratic model needs 'J'")
        J = doc["J"]
        if isinstance(J, dict):
            if set(J) != {"cycle"}:
                raise ContractViolation("J object form must be {'cycle': N}")
            J = np.kron(cycle_adjacency(int(J["cycle"])), np.eye(table.dim))
        return LogQuadraticEnergy(table, J, doc.get("b"), float(doc.get("beta", 1.0)))
    if kind == "composite":
        unknown = set(doc) - _COMPOSITE_KEYS
        if unknown:
            raise ContractViolation(f"unknown model keys: {sorted(unknown)}")
        outer = _table_from_doc(doc, table) if "embeddings" in doc or table else None
        terms = []
        for term in doc.get("terms", []):
            if set(term) - {"weight", "model"} or "model" not in term:
                raise ContractViolation("composite terms must be {'weight': w, 'model': {...}}")
            terms.append((model_from_dict(term["model"], outer), float(term.get("weight", 1.0))))
        return CompositeEnergy(terms)
    raise ContractViolation(f"unknown model type {kind!r}")


def model_to_dict(model: EnergyModel) -> dict:
    if isinstance(model, LogQuadraticEnergy):
        return {
            "type": "log_quadratic",
            "beta": model.beta,
            "J": model.J.tolist(),
            "b": model.b.tolist(),
            "embeddings": model.table.vectors.tolist(),
            "labels": list(model.table.labels),
        }
    if isinstance(model, CompositeEnergy):
        return {
            "type": "composite",
            "terms": [{"weight": w, "model": model_to_dict(m)} for m, w in model.terms],
        }
    raise ContractViolation(f"cannot serialize {type(model).__name__}")
