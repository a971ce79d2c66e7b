"""Speaker-specific-keyword density models: diagonal Gaussian and Student's-t mixtures."""

from __future__ import annotations

import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import digamma, gammaln

from . import _kernels
from .features import FeatureMatrix

GAUSSIAN = "gaussian"
STUDENT_T = "student_t"
FAMILIES = (GAUSSIAN, STUDENT_T)
FAMILY_ALIASES = {"gmm": GAUSSIAN, "tmm": STUDENT_T, GAUSSIAN: GAUSSIAN, STUDENT_T: STUDENT_T}

DOF_MIN, DOF_MAX = 2.1, 1e6
DOF_SEARCH_MAX = 200.0
DOF_FALLBACK = 5.0
DOF_START = 30.0


def canonical_family(name: str) -> str:
    try:
        return FAMILY_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown model family {name!r}; use gmm/tmm") from None


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: np.ndarray
    var: np.ndarray
    dof: float | None = None


@dataclass(frozen=True)
class MixtureModel:
    """K-component mixture with diagonal covariance (scale) matrices.

    ``dof`` is None for the Gaussian family and a length-K array for
    Student's-t.
    """

    family: str
    weights: np.ndarray
    means: np.ndarray
    vars: np.ndarray
    dof: np.ndarray | None = None

    def __post_init__(self):
        fam = canonical_family(self.family)
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        var = np.atleast_2d(np.asarray(self.vars, dtype=np.float64))
        if w.ndim != 1 or mu.shape != var.shape or mu.shape[0] != w.size:
            raise ValueError("inconsistent component shapes")
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise ValueError(f"weights must form a probability vector (sum={w.sum()!r})")
        dof = None
        if fam == STUDENT_T:
            if self.dof is None:
                raise ValueError("student_t components need degrees of freedom")
            dof = np.broadcast_to(np.asarray(self.dof, dtype=np.float64), w.shape).copy()
            if np.any(dof <= 0):
                raise ValueError("degrees of freedom must be positive")
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "vars", var)
        object.__setattr__(self, "dof", dof)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def components(self) -> list[MixtureComponent]:
        return [
            MixtureComponent(
                float(self.weights[i]),
                self.means[i],
                self.vars[i],
                None if self.dof is None else float(self.dof[i]),
            )
            for i in range(self.n_components)
        ]

    def log_norm(self) -> np.ndarray:
        D = self.dim
        half_logdet = 0.5 * np.log(self.vars).sum(axis=1)
        if self.family == GAUSSIAN:
            return -0.5 * D * np.log(2 * np.pi) - half_logdet
        nu = self.dof
        return gammaln(0.5 * (nu + D)) - gammaln(0.5 * nu) - 0.5 * D * np.log(nu * np.pi) - half_logdet

    def kernel_args(self):
        dof = self.dof if self.dof is not None else np.ones(self.n_components)
        return self.means, 1.0 / self.vars, self.log_norm(), dof, self.family == STUDENT_T

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "vars": self.vars.tolist(),
            "dof": None if self.dof is None else self.dof.tolist(),
        }

    @classmethod
    def from_dict(cls, family: str, d: Mapping) -> "MixtureModel":
        return cls(family, np.array(d["weights"]), np.array(d["means"]), np.array(d["vars"]),
                   None if d.get("dof") is None else np.array(d["dof"]))


def component_log_pdf(model: MixtureModel, X: np.ndarray):
    """Per-component log-densities (T, K) and squared Mahalanobis distances (T, K)."""
    means, inv_var, log_norm, dof, student = model.kernel_args()
    return _kernels.component_terms(X, means, inv_var, log_norm, dof, student)


def log_pdf(model: MixtureModel, x) -> float | np.ndarray:
    """Log-density of a D-vector (returns a float) or of each row of a T x D array."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise ValueError(f"dimension mismatch: model has D={model.dim}, input has shape {x.shape}")
    means, inv_var, log_norm, dof, student = model.kernel_args()
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    out = _kernels.bank_loglik(X, log_w[None], means[None], inv_var[None], log_norm[None], dof[None], student)[:, 0]
    return float(out[0]) if single else out


@dataclass(frozen=True)
class TrainConfig:
    n_components: int = 8
    max_iters: int = 200
    rel_tol: float = 1e-6
    var_floor_frac: float = 1e-3
    seed: int = 0
    n_restarts: int = 3
    dof_mode: str = "estimate"
    fixed_dof: float = DOF_FALLBACK

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.dof_mode not in ("estimate", "fixed"):
            raise ValueError("dof_mode must be 'estimate' or 'fixed'")
        if not DOF_MIN <= self.fixed_dof <= DOF_MAX:
            raise ValueError(f"fixed_dof must lie in [{DOF_MIN}, {DOF_MAX:g}]")


@dataclass
class FitResult:
    model: MixtureModel
    history: list = field(default_factory=list)


def _dof_equation(nu, const):
    return -digamma(0.5 * nu) + np.log(0.5 * nu) + const


def _update_dof(nu_old, resp, u, nk, D, n_bisect=45):
    """Root of the Student's-t degrees-of-freedom likelihood equation per component.

    Vectorised bisection on [DOF_MIN, DOF_SEARCH_MAX]; the equation is
    decreasing in the unknown, so a missing sign change clamps to the
    nearer end.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = (resp * (np.log(u) - u)).sum(axis=0) / nk
    const = 1.0 + stat + digamma(0.5 * (nu_old + D)) - np.log(0.5 * (nu_old + D))
    ok = np.isfinite(const)
    c = np.where(ok, const, 0.0)
    lo = np.full_like(c, DOF_MIN)
    hi = np.full_like(c, DOF_SEARCH_MAX)
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        pos = _dof_equation(mid, c) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    out = 0.5 * (lo + hi)
    out = np.where(_dof_equation(DOF_MIN, c) <= 0, DOF_MIN, out)
    out = np.where(_dof_equation(DOF_SEARCH_MAX, c) >= 0, DOF_SEARCH_MAX, out)
    return np.where(ok, out, DOF_FALLBACK)


def _m_step(X, resp, u, floor, family, dof, cfg, prev=None, rng=None):
    T, D = X.shape
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / nk.sum()
    ru = resp * u
    su = ru.sum(axis=0)
    dead = su < 1e-300
    with np.errstate(invalid="ignore", divide="ignore"):
        means = (ru.T @ X) / su[:, None]
    diff = X[:, None, :] - means[None, :, :]
    var = np.einsum("tk,tkd->kd", ru, np.nan_to_num(diff * diff)) / nk[:, None]
    if dead.any():
        # keep the previous parameters; an empty k-means cluster gets a random frame instead
        means[dead] = prev.means[dead] if prev is not None else X[rng.choice(T, int(dead.sum()))]
        var[dead] = prev.vars[dead] if prev is not None else X.var(axis=0)
    var = np.maximum(var, floor[None, :])
    if family == STUDENT_T and cfg.dof_mode == "estimate":
        dof = _update_dof(dof, resp, u, nk, D)
    return MixtureModel(family, weights, means, var, dof if family == STUDENT_T else None)


def _evaluate(model, X):
    comp, maha = component_log_pdf(model, X)
    with np.errstate(divide="ignore"):
        resp, ll_t = _kernels.log_posterior(comp + np.log(model.weights)[None, :])
    if model.family == STUDENT_T:
        u = (model.dof[None, :] + X.shape[1]) / (model.dof[None, :] + maha)
    else:
        u = np.ones_like(resp)
    return float(ll_t.sum()), resp, u


def _fit_once(X, family, cfg, floor, rng) -> FitResult:
    T, D = X.shape
    K = cfg.n_components
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, labels = kmeans2(X, K, minit="++", seed=rng, iter=10)
    resp = np.zeros((T, K))
    resp[np.arange(T), labels] = 1.0
    dof = np.full(K, DOF_START if cfg.dof_mode == "estimate" else cfg.fixed_dof)
    init_cfg = replace(cfg, dof_mode="fixed")
    model = _m_step(X, resp, np.ones_like(resp), floor, family, dof, init_cfg, rng=rng)
    ll, resp, u = _evaluate(model, X)
    history = [ll]
    for _ in range(cfg.max_iters):
        model = _m_step(X, resp, u, floor, family, model.dof, cfg, prev=model)
        new_ll, resp, u = _evaluate(model, X)
        history.append(new_ll)
        if abs(new_ll - ll) <= cfg.rel_tol * abs(ll):
            break
        ll = new_ll
    return FitResult(model, history)


def fit_mixture(X: np.ndarray, family: str, cfg: TrainConfig = TrainConfig()) -> FitResult:
    """EM fit on a T x D frame array; best of ``cfg.n_restarts`` k-means++ starts."""
    family = canonical_family(family)
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a T x D frame array")
    if not np.all(np.isfinite(X)):
        raise ValueError("training features contain non-finite values")
    if X.shape[0] < cfg.n_components:
        raise ValueError(f"{X.shape[0]} frames is too few for {cfg.n_components} components")
    floor = np.maximum(cfg.var_floor_frac * X.var(axis=0), 1e-12)
    best = None
    for child in np.random.SeedSequence(cfg.seed).spawn(max(1, cfg.n_restarts)):
        fit = _fit_once(X, family, cfg, floor, np.random.default_rng(child))
        if best is None or fit.history[-1] > best.history[-1]:
            best = fit
    return best


def train_mixture(features: FeatureMatrix, family: str, cfg: TrainConfig = TrainConfig()) -> MixtureModel:
    return fit_mixture(features.by_frame, family, cfg).model


@dataclass(frozen=True)
class ModelBank:
    """M x N grid of mixtures; ``models[k][l]`` models speaker k saying keyword l."""

    speakers: tuple
    keywords: tuple
    models: tuple
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        speakers = tuple(self.speakers)
        keywords = tuple(self.keywords)
        models = tuple(tuple(row) for row in self.models)
        if len(models) != len(speakers) or any(len(row) != len(keywords) for row in models):
            raise ValueError("model grid does not match the label lists")
        flat = [m for row in models for m in row]
        if any(m is None for m in flat):
            raise ValueError("model grid is not fully populated")
        if len({m.dim for m in flat}) != 1 or len({m.family for m in flat}) != 1:
            raise ValueError("all models in a bank must share dim and family")
        object.__setattr__(self, "speakers", speakers)
        object.__setattr__(self, "keywords", keywords)
        object.__setattr__(self, "models", models)

    @property
    def M(self) -> int:
        return len(self.speakers)

    @property
    def N(self) -> int:
        return len(self.keywords)

    @property
    def dim(self) -> int:
        return self.models[0][0].dim

    @property
    def family(self) -> str:
        return self.models[0][0].family

    def stacked(self):
        """Parameters of all M*N models padded to a common K, cell index k*N + l."""
        flat = [m for row in self.models for m in row]
        C, K, D = len(flat), max(m.n_components for m in flat), self.dim
        log_w = np.full((C, K), -np.inf)
        means = np.zeros((C, K, D))
        inv_var = np.ones((C, K, D))
        log_norm = np.zeros((C, K))
        dof = np.ones((C, K))
        for c, m in enumerate(flat):
            k = m.n_components
            mu, iv, ln, nu, _ = m.kernel_args()
            with np.errstate(divide="ignore"):
                log_w[c, :k] = np.log(m.weights)
            means[c, :k], inv_var[c, :k], log_norm[c, :k], dof[c, :k] = mu, iv, ln, nu
        return log_w, means, inv_var, log_norm, dof, self.family == STUDENT_T

    def permute_speakers(self, order: Sequence[int]) -> "ModelBank":
        order = list(order)
        return ModelBank([self.speakers[i] for i in order], self.keywords,
                         [self.models[i] for i in order], dict(self.meta))

    def to_dict(self) -> dict:
        return {
            "format": "lvdsk-bank-1",
            "family": self.family,
            "dim": self.dim,
            "speakers": list(self.speakers),
            "keywords": list(self.keywords),
            "cells": [[m.to_dict() for m in row] for row in self.models],
            **({"meta": self.meta} if self.meta else {}),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelBank":
        fam = d["family"]
        models = [[MixtureModel.from_dict(fam, c) for c in row] for row in d["cells"]]
        bank = cls(d["speakers"], d["keywords"], models, dict(d.get("meta", {})))
        if bank.dim != d["dim"]:
            raise ValueError(f"bank declares dim {d['dim']} but cells have dim {bank.dim}")
        return bank


def cell_seed(seed: int, speaker, keyword) -> int:
    """Per-cell seed derived from the labels, so relabelling the grid does not reseed cells."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(str(speaker).encode()), zlib.crc32(str(keyword).encode())]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def _train_cell(args):
    frames, family, cfg = args
    return fit_mixture(frames, family, cfg).model


def train_bank(corpus: Mapping, family: str, cfg: TrainConfig = TrainConfig(),
               speakers: Sequence | None = None, keywords: Sequence | None = None,
               jobs: int = 1) -> ModelBank:
    """Fit one mixture per (speaker, keyword) cell of ``corpus``.

    ``corpus`` maps ``(speaker, keyword)`` to a list of FeatureMatrix.
    Label order follows first appearance in the mapping unless given.
    """
    family = canonical_family(family)
    if speakers is None:
        speakers = list(dict.fromkeys(s for s, _ in corpus))
    if keywords is None:
        keywords = list(dict.fromkeys(w for _, w in corpus))
    dims = {f.dim for utts in corpus.values() for f in utts}
    if len(dims) > 1:
        raise ValueError(f"dimension mismatch across corpus: found D in {sorted(dims)}")
    jobs_args = []
    for s in speakers:
        for w in keywords:
            utts = corpus.get((s, w))
            if not utts:
                raise ValueError(f"corpus cell ({s}, {w}) has no utterances")
            frames = np.vstack([f.by_frame for f in utts])
            cell_cfg = replace(cfg, seed=cell_seed(cfg.seed, s, w))
            jobs_args.append((frames, family, cell_cfg))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            flat = list(pool.map(_train_cell, jobs_args))
    else:
        flat = [_train_cell(a) for a in jobs_args]
    N = len(keywords)
    grid = [flat[i * N:(i + 1) * N] for i in range(len(speakers))]
    return ModelBank(speakers, keywords, grid)
