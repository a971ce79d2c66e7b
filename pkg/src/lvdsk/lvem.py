"""EM estimation of the speaker mass and keyword-given-speaker mass, and decoding.

The mixture-frame model is

    p(x_j) = sum_k beta_k sum_l delta_kl p(x_j; lambda_kl)

with the speaker-keyword densities ``lambda`` held fixed. Everything is
evaluated in the log domain: with 38-dimensional features the per-frame
densities underflow in linear arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .features import FeatureMatrix
from .models import ModelBank

SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class LVState:
    """Speaker mass ``beta`` (M,) and conditional keyword mass ``delta`` (M, N).

    Rows of ``delta`` belonging to speakers with zero mass may be all-zero.
    """

    beta: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64))
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=np.float64))
        if self.beta.ndim != 1 or self.delta.shape[:1] != self.beta.shape or self.delta.ndim != 2:
            raise ValueError(f"shape mismatch: beta {self.beta.shape}, delta {self.delta.shape}")

    @property
    def M(self) -> int:
        return self.beta.size

    @property
    def N(self) -> int:
        return self.delta.shape[1]

    @property
    def passive(self) -> np.ndarray:
        """Indices of speakers whose keyword row carries no mass."""
        return np.flatnonzero(self.delta.sum(axis=1) == 0.0)

    def violations(self, tol: float = SIMPLEX_TOL) -> list[str]:
        errs = []
        if np.any(self.beta < 0) or np.any(self.delta < 0):
            errs.append("negative probability mass")
        if abs(self.beta.sum() - 1.0) > tol:
            errs.append(f"beta sums to {self.beta.sum()!r}")
        rows = self.delta.sum(axis=1)
        for k in np.flatnonzero(np.abs(rows - 1.0) > tol):
            if rows[k] == 0.0 and self.beta[k] == 0.0:
                continue
            errs.append(f"delta row {k} sums to {rows[k]!r}")
        return errs

    def validate(self, tol: float = SIMPLEX_TOL) -> "LVState":
        errs = self.violations(tol)
        if errs:
            raise ValueError("invalid LVState: " + "; ".join(errs))
        return self


@dataclass(frozen=True)
class Posteriors:
    """Frame posteriors: ``eta`` (T, M) over speakers and ``zeta`` (T, M, N) over pairs."""

    eta: np.ndarray
    zeta: np.ndarray
    frame_loglik: np.ndarray | None = field(default=None, compare=False)


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 100
    rel_tol: float = 1e-6

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class JointProbabilityMatrix:
    values: np.ndarray


@dataclass(frozen=True)
class DecodePolicy:
    """Active-speaker rule: ``known`` takes the top ``value`` speakers by mass,
    ``threshold`` keeps speakers with mass >= value * max mass."""

    kind: str = "known"
    value: float = 2

    def __post_init__(self):
        if self.kind == "known":
            if int(self.value) != self.value or self.value < 1:
                raise ValueError("known-count policy needs an integer count >= 1")
            object.__setattr__(self, "value", int(self.value))
        elif self.kind == "threshold":
            if not 0.0 < self.value < 1.0:
                raise ValueError("threshold policy needs tau in (0, 1)")
        else:
            raise ValueError(f"unknown decode policy {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "DecodePolicy":
        kind, _, value = text.partition(":")
        kind = kind.strip().lower()
        if kind == "known":
            return cls("known", int(value or 2))
        if kind == "threshold":
            return cls("threshold", float(value or 0.3))
        raise ValueError(f"cannot parse decode policy {text!r}; use known:<n> or threshold:<tau>")

    def __str__(self):
        return f"{self.kind}:{self.value}"


@dataclass(frozen=True)
class DetectionResult:
    pairs: list
    beta_star: np.ndarray

    @property
    def speakers(self) -> list[int]:
        return [k for k, _, _ in self.pairs]

    @property
    def keywords(self) -> list[int]:
        return [l for _, l, _ in self.pairs]


def frame_loglik_table(X: FeatureMatrix, bank: ModelBank) -> np.ndarray:
    """log p(x_j; lambda_kl) for every frame and cell, shape (T, M, N)."""
    if X.dim != bank.dim:
        raise ValueError(f"dimension mismatch: features D={X.dim}, bank D={bank.dim}")
    table = _kernels.bank_loglik(X.by_frame, *bank.stacked())
    return table.reshape(X.frames, bank.M, bank.N)


def _log_joint(table: np.ndarray, state: LVState) -> np.ndarray:
    if table.shape[1:] != state.delta.shape:
        raise ValueError(f"table shape {table.shape} does not match state {state.delta.shape}")
    with np.errstate(divide="ignore"):
        return table + np.log(state.beta)[None, :, None] + np.log(state.delta)[None, :, :]


def e_step(table: np.ndarray, state: LVState) -> Posteriors:
    T, M, N = table.shape
    post, ll = _kernels.log_posterior(_log_joint(table, state).reshape(T, M * N))
    if not np.all(np.isfinite(ll)):
        raise ValueError("degenerate state: zero total mass for some frame")
    zeta = post.reshape(T, M, N)
    return Posteriors(zeta.sum(axis=2), zeta, ll)


def m_step(post: Posteriors) -> LVState:
    """Closed-form maximiser of the expected complete-data log-likelihood."""
    T = post.eta.shape[0]
    beta = post.eta.sum(axis=0) / T
    counts = post.zeta.sum(axis=0)
    totals = counts.sum(axis=1)
    delta = np.zeros_like(counts)
    live = totals > 0
    delta[live] = counts[live] / totals[live, None]
    return LVState(beta, delta)


def _xlogy(coef, x):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(coef > 0, coef * np.log(x), 0.0)


def q_value(post: Posteriors, state: LVState, table: np.ndarray) -> float:
    """Expected complete-data log-likelihood, with 0 * ln 0 taken as 0."""
    return float(
        _xlogy(post.eta, state.beta[None, :]).sum()
        + _xlogy(post.zeta, state.delta[None, :, :]).sum()
        + (post.zeta * table).sum()
    )


def log_likelihood(table: np.ndarray, state: LVState) -> float:
    T, M, N = table.shape
    _, ll = _kernels.log_posterior(_log_joint(table, state).reshape(T, M * N))
    if not np.all(np.isfinite(ll)):
        raise ValueError("degenerate state: zero total mass for some frame")
    return float(ll.sum())


def init_flat(M: int, N: int) -> LVState:
    if M < 1 or N < 1:
        raise ValueError("need M, N >= 1")
    return LVState(np.full(M, 1.0 / M), np.full((M, N), 1.0 / N))


def _index_set(idx: Iterable[int], size: int, what: str) -> np.ndarray:
    idx = np.unique(np.asarray(list(idx), dtype=int))
    if idx.size == 0:
        raise ValueError(f"empty {what} set")
    if idx.min() < 0 or idx.max() >= size:
        raise ValueError(f"{what} index out of range 0..{size - 1}: {idx.tolist()}")
    return idx


def init_oracle_speakers(M: int, N: int, active: Iterable[int]) -> LVState:
    """Mass only on the known active speakers (0-based indices)."""
    idx = _index_set(active, M, "active speaker")
    beta = np.zeros(M)
    beta[idx] = 1.0 / idx.size
    delta = np.zeros((M, N))
    delta[idx] = 1.0 / N
    return LVState(beta, delta)


def init_oracle_keywords(M: int, N: int, spoken: Iterable[int]) -> LVState:
    """Flat speaker mass, keyword mass shared equally by the known spoken keywords."""
    idx = _index_set(spoken, N, "spoken keyword")
    delta = np.zeros((M, N))
    delta[:, idx] = 1.0 / idx.size
    return LVState(np.full(M, 1.0 / M), delta)


@dataclass
class EmResult:
    state: LVState
    loglik: list
    converged: bool

    @property
    def n_iter(self) -> int:
        return len(self.loglik) - 1

    def __iter__(self):
        # unpacks as (state, loglik)
        return iter((self.state, self.loglik))


def run_em_table(table: np.ndarray, init: LVState, cfg: EmConfig = EmConfig()) -> EmResult:
    init.validate()
    state = init
    post = e_step(table, state)
    ll = float(post.frame_loglik.sum())
    history = [ll]
    converged = False
    for _ in range(cfg.max_iters):
        state = m_step(post)
        post = e_step(table, state)
        new_ll = float(post.frame_loglik.sum())
        history.append(new_ll)
        if abs(new_ll - ll) <= cfg.rel_tol * abs(ll):
            converged = True
            break
        ll = new_ll
    return EmResult(state, history, converged)


def run_em(X: FeatureMatrix, bank: ModelBank, init: LVState, cfg: EmConfig = EmConfig()) -> EmResult:
    return run_em_table(frame_loglik_table(X, bank), init, cfg)


def compute_jpm(state: LVState) -> JointProbabilityMatrix:
    return JointProbabilityMatrix(state.beta[:, None] * state.delta)


def active_speakers(beta: np.ndarray, policy: DecodePolicy) -> np.ndarray:
    if policy.kind == "known":
        order = np.argsort(-beta, kind="stable")
        return np.sort(order[: min(policy.value, beta.size)])
    return np.flatnonzero(beta >= policy.value * beta.max())


def decode(jpm: JointProbabilityMatrix, state: LVState, policy: DecodePolicy = DecodePolicy()) -> DetectionResult:
    """Pick active speakers from beta, then one keyword (row peak) per active speaker."""
    pairs = []
    for k in active_speakers(state.beta, policy):
        l = int(np.argmax(jpm.values[k]))
        pairs.append((int(k), l, float(jpm.values[k, l])))
    return DetectionResult(pairs, state.beta.copy())


def is_non_decreasing(seq: Sequence[float], rel_tol: float = 1e-8) -> bool:
    return all(b >= a - rel_tol * abs(a) for a, b in zip(seq, seq[1:]))


def inference_report(bank: ModelBank, em: EmResult, result: DetectionResult, **extra) -> dict:
    jpm = compute_jpm(em.state)
    return {
        "speakers": list(bank.speakers),
        "keywords": list(bank.keywords),
        "beta_star": em.state.beta.tolist(),
        "delta_star": em.state.delta.tolist(),
        "jpm": jpm.values.tolist(),
        "pairs": [
            {"speaker": bank.speakers[k], "keyword": bank.keywords[l],
             "speaker_index": k, "keyword_index": l, "score": s}
            for k, l, s in result.pairs
        ],
        "loglik": list(em.loglik),
        "iterations": em.n_iter,
        "converged": em.converged,
        **extra,
    }
