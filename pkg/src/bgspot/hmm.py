"""Discrete HMMs: scaled forward pass and multi-sequence Baum-Welch."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .features import N_SYMBOLS

logger = logging.getLogger(__name__)

ROW_TOL = 1e-9
DEFAULT_FLOOR = 1e-5


class Topology(enum.IntEnum):
    LEFT_TO_RIGHT = 0
    ERGODIC = 1


@dataclass(eq=False)
class HmmModel:
    initial: np.ndarray
    transitions: np.ndarray
    emissions: np.ndarray
    topology: Topology = Topology.LEFT_TO_RIGHT

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=np.float64)
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.emissions = np.asarray(self.emissions, dtype=np.float64)
        self.topology = Topology(self.topology)

    @property
    def n_states(self) -> int:
        return len(self.initial)

    @property
    def n_symbols(self) -> int:
        return self.emissions.shape[1]

    def validate(self, tol=ROW_TOL):
        n = self.n_states
        if self.transitions.shape != (n, n) or self.emissions.shape[0] != n:
            raise ValueError("inconsistent HMM shapes")
        for name, rows in (("initial", self.initial[None, :]), ("transitions", self.transitions),
                           ("emissions", self.emissions)):
            if (rows < 0).any() or np.abs(rows.sum(axis=1) - 1).max() > tol:
                raise ValueError("%s rows are not stochastic" % name)
        if self.topology == Topology.LEFT_TO_RIGHT:
            i, j = np.indices((n, n))
            if np.any(self.transitions[(j < i) | (j > i + 1)] != 0):
                raise ValueError("left-to-right transitions outside {i, i+1}")
            if self.initial[0] != 1.0:
                raise ValueError("left-to-right model must start in state 0")
        return self

    def __eq__(self, other):
        if not isinstance(other, HmmModel):
            return NotImplemented
        return (self.topology == other.topology
                and all(a.shape == b.shape and a.tobytes() == b.tobytes()
                        for a, b in ((self.initial, other.initial), (self.transitions, other.transitions),
                                     (self.emissions, other.emissions))))

    def final_mask(self) -> np.ndarray:
        """States a training sequence may end in (the last state for left-to-right)."""
        if self.topology == Topology.LEFT_TO_RIGHT:
            f = np.zeros(self.n_states)
            f[-1] = 1.0
            return f
        return np.ones(self.n_states)

    def sample(self, length: int, rng: np.random.Generator) -> np.ndarray:
        """Draw an observation sequence from the model."""
        obs = np.empty(length, dtype=np.int64)
        state = rng.choice(self.n_states, p=self.initial)
        for t in range(length):
            obs[t] = rng.choice(self.n_symbols, p=self.emissions[state])
            state = rng.choice(self.n_states, p=self.transitions[state])
        return obs


def _symbols(obs) -> np.ndarray:
    return np.asarray(getattr(obs, "symbols", obs), dtype=np.int64)


@njit(cache=True)
def _forward_loglik(pi, A, B, obs):
    n = pi.shape[0]
    alpha = np.empty(n)
    nxt = np.empty(n)
    ll = 0.0
    for i in range(n):
        alpha[i] = pi[i] * B[i, obs[0]]
    for t in range(obs.shape[0]):
        if t > 0:
            o = obs[t]
            for j in range(n):
                s = 0.0
                for i in range(n):
                    s += alpha[i] * A[i, j]
                nxt[j] = s * B[j, o]
            alpha[:] = nxt
        c = alpha.sum()
        if c == 0.0:
            return -np.inf
        alpha /= c
        ll += np.log(c)
    return ll


def forward_log_likelihood(model: HmmModel, obs) -> float:
    """log P(obs | model) by the scaled forward recursion."""
    sym = _symbols(obs)
    if sym.size == 0:
        raise ValueError("observation sequence is empty")
    if sym.min() < 0 or sym.max() >= model.n_symbols:
        raise ValueError("symbol outside alphabet of size %d" % model.n_symbols)
    return float(_forward_loglik(model.initial, model.transitions, model.emissions, sym))


@njit(cache=True)
def _accumulate(pi, A, B, final, obs, offsets, acc_pi, acc_A, acc_B):
    n = pi.shape[0]
    total = 0.0
    for s in range(offsets.shape[0] - 1):
        seq = obs[offsets[s]:offsets[s + 1]]
        T = seq.shape[0]
        alpha = np.empty((T, n))
        beta = np.empty((T, n))
        c = np.empty(T)
        for i in range(n):
            alpha[0, i] = pi[i] * B[i, seq[0]]
        for t in range(T):
            if t > 0:
                for j in range(n):
                    acc = 0.0
                    for i in range(n):
                        acc += alpha[t - 1, i] * A[i, j]
                    alpha[t, j] = acc * B[j, seq[t]]
            c[t] = alpha[t].sum()
            if c[t] == 0.0:
                return -np.inf
            alpha[t] /= c[t]
        z = 0.0
        for i in range(n):
            z += alpha[T - 1, i] * final[i]
        if z == 0.0:
            return -np.inf
        total += np.log(c).sum() + np.log(z)

        beta[T - 1] = final
        for t in range(T - 2, -1, -1):
            o = seq[t + 1]
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += A[i, j] * B[j, o] * beta[t + 1, j]
                beta[t, i] = acc / c[t + 1]
        for t in range(T):
            for i in range(n):
                g = alpha[t, i] * beta[t, i] / z
                acc_B[i, seq[t]] += g
                if t == 0:
                    acc_pi[i] += g
        for t in range(T - 1):
            o = seq[t + 1]
            for i in range(n):
                for j in range(n):
                    if A[i, j] > 0.0:
                        acc_A[i, j] += alpha[t, i] * A[i, j] * B[j, o] * beta[t + 1, j] / (c[t + 1] * z)
    return total


def floored_normalize(counts: np.ndarray, floor: float) -> np.ndarray:
    """Maximise sum(c_k log b_k) subject to sum(b) == 1 and b_k >= floor.

    The solution is ``b_k = max(floor, c_k / lam)``; ``lam`` is found by
    shrinking the set of unclamped entries until it is consistent.
    """
    counts = np.asarray(counts, dtype=np.float64)
    m = counts.size
    if floor * m >= 1.0:
        raise ValueError("emission floor %g too large for %d symbols" % (floor, m))
    free = counts > 0
    while True:
        lam = counts[free].sum() / (1.0 - floor * (m - free.sum()))
        still = free & (counts / lam > floor)
        if still.sum() == free.sum():
            break
        free = still
    out = np.where(free, counts / lam, floor)
    return out / out.sum()


@dataclass
class TrainingResult:
    model: HmmModel
    log_likelihoods: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_iterations(self):
        return len(self.log_likelihoods) - 1


def initial_model(n_states: int, topology: Topology, n_symbols: int, seed) -> HmmModel:
    rng = np.random.default_rng(seed)
    topology = Topology(topology)
    if topology == Topology.LEFT_TO_RIGHT:
        A = np.zeros((n_states, n_states))
        for i in range(n_states - 1):
            A[i, i], A[i, i + 1] = 0.6, 0.4
        A[-1, -1] = 1.0
        pi = np.zeros(n_states)
        pi[0] = 1.0
    else:
        A = 1.0 + rng.uniform(-0.01, 0.01, (n_states, n_states))
        A /= A.sum(axis=1, keepdims=True)
        pi = np.full(n_states, 1.0 / n_states)
    B = 1.0 + rng.uniform(-0.01, 0.01, (n_states, n_symbols))
    B /= B.sum(axis=1, keepdims=True)
    return HmmModel(pi, A, B, topology)


def baum_welch(sequences, n_states: int = 4, topology=Topology.LEFT_TO_RIGHT, seed=0,
               n_symbols: int = N_SYMBOLS, emission_floor: float = DEFAULT_FLOOR,
               max_iter: int = 200, tol: float = 1e-6, init: HmmModel | None = None) -> TrainingResult:
    """Multi-sequence Baum-Welch.

    Left-to-right models are trained with sequences constrained to end in
    the last state. Emission rows use the floor-constrained M-step, which
    keeps every iteration monotone in log-likelihood.
    """
    seqs = [_symbols(s) for s in sequences]
    if not seqs:
        raise ValueError("need at least one training sequence")
    for s in seqs:
        if len(s) < n_states:
            raise ValueError("sequence of length %d shorter than %d states" % (len(s), n_states))
        if s.min() < 0 or s.max() >= n_symbols:
            raise ValueError("symbol outside alphabet of size %d" % n_symbols)
    obs = np.concatenate(seqs)
    offsets = np.concatenate([[0], np.cumsum([len(s) for s in seqs])]).astype(np.int64)

    model = init if init is not None else initial_model(n_states, topology, n_symbols, seed)
    topology = model.topology
    final = model.final_mask()
    history = []
    converged = False
    for it in range(max_iter + 1):
        acc_pi = np.zeros(n_states)
        acc_A = np.zeros((n_states, n_states))
        acc_B = np.zeros((n_states, n_symbols))
        ll = _accumulate(model.initial, model.transitions, model.emissions, final, obs, offsets,
                         acc_pi, acc_A, acc_B)
        history.append(float(ll))
        if not np.isfinite(ll):
            raise ValueError("training data has zero likelihood under the model")
        if it > 0:
            prev = history[-2]
            if (ll - prev) / abs(prev) < tol:
                converged = True
                break
        if it == max_iter:
            break

        A = model.transitions.copy()
        rows = acc_A.sum(axis=1)
        used = rows > 0
        A[used] = acc_A[used] / rows[used, None]
        B = model.emissions.copy()
        for i in range(n_states):
            if acc_B[i].sum() > 0:
                B[i] = floored_normalize(acc_B[i], emission_floor)
        pi = model.initial if topology == Topology.LEFT_TO_RIGHT else acc_pi / acc_pi.sum()
        model = HmmModel(pi, A, B, topology)
    logger.debug("baum-welch: %d iterations, log L %.6f", len(history) - 1, history[-1])
    return TrainingResult(model, history, converged)


def expected_occupancy(model: HmmModel, sequences) -> np.ndarray:
    """Posterior frames spent in each state, summed over ``sequences``."""
    seqs = [_symbols(s) for s in sequences]
    obs = np.concatenate(seqs)
    offsets = np.concatenate([[0], np.cumsum([len(s) for s in seqs])]).astype(np.int64)
    n, m = model.n_states, model.n_symbols
    acc_B = np.zeros((n, m))
    ll = _accumulate(model.initial, model.transitions, model.emissions, model.final_mask(), obs, offsets,
                     np.zeros(n), np.zeros((n, n)), acc_B)
    if not np.isfinite(ll):
        raise ValueError("sequences have zero likelihood under the model")
    return acc_B.sum(axis=1)


def baum_welch_train(sequences, n_states: int = 4, topology=Topology.LEFT_TO_RIGHT, seed=0,
                     **kwargs) -> HmmModel:
    return baum_welch(sequences, n_states, topology, seed, **kwargs).model


def uniform_model(n_states: int, n_symbols: int = N_SYMBOLS, topology=Topology.LEFT_TO_RIGHT) -> HmmModel:
    m = initial_model(n_states, topology, n_symbols, 0)
    m.emissions = np.full((n_states, n_symbols), 1.0 / n_symbols)
    return m
