"""Scoring against ground truth and the experiment driver."""

from __future__ import annotations

import csv
import io
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .features import AudioSignal, FeatureMatrix, MfccConfig, compute_features
from .lvem import (DecodePolicy, EmConfig, compute_jpm, decode, frame_loglik_table,
                   init_flat, init_oracle_keywords, init_oracle_speakers, run_em_table)
from .mixer import GroundTruth, MixSpec, enumerate_tasks, interleave, mix
from .models import ModelBank, TrainConfig, canonical_family, train_bank

METRICS = ("at_least_one_speaker", "both_speakers", "at_least_one_keyword",
           "both_keywords", "at_least_one_pair", "both_pairs")
METRIC_HEADERS = ("At least 1 speaker detected correctly", "Both speakers detected correctly",
                  "At least 1 phrase detected correctly", "Both phrases detected correctly",
                  "At least 1 speaker-phrase detected correctly", "Both speaker-phrases detected correctly")
TASK_DKW, TASK_SKW, TASK_ALL = "MSpDKW", "MSpSKW", "Overall"
INITS = ("flat", "oracle_speakers", "oracle_keywords")
INIT_LABELS = {"flat": "LVDSK-Flat", "oracle_speakers": "Oracle-SpID", "oracle_keywords": "Oracle-KWID"}
FAMILY_LABELS = {"gaussian": "LVDSK-GMM", "student_t": "LVDSK-tMM"}


class Score(NamedTuple):
    at_least_one_speaker: bool
    both_speakers: bool
    at_least_one_keyword: bool
    both_keywords: bool
    at_least_one_pair: bool
    both_pairs: bool


@dataclass(frozen=True)
class MetricRow:
    at_least_one_speaker: float
    both_speakers: float
    at_least_one_keyword: float
    both_keywords: float
    at_least_one_pair: float
    both_pairs: float
    n_utterances: int
    task: str = TASK_ALL
    family: str = ""
    init: str = ""

    @property
    def values(self) -> tuple:
        return tuple(getattr(self, m) for m in METRICS)

    def violations(self) -> list[str]:
        v = self.values
        errs = [f"{m}={x} outside [0, 100]" for m, x in zip(METRICS, v) if not 0.0 <= x <= 100.0]
        for i in (0, 2, 4):
            if v[i + 1] > v[i]:
                errs.append(f"{METRICS[i + 1]} > {METRICS[i]}")
        if self.both_pairs > min(self.both_speakers, self.both_keywords):
            errs.append("both_pairs exceeds min(both_speakers, both_keywords)")
        return errs


def score_utterance(pairs: Iterable, truth: GroundTruth) -> Score:
    """Six hit flags for one decoded utterance.

    ``pairs`` holds ``(speaker, keyword)`` or ``(speaker, keyword, score)``
    items in the same label space as ``truth``. Keywords are matched as
    multisets, so a keyword shared by both true speakers must be decoded
    twice to count twice.
    """
    if len(truth.pairs) != 2:
        raise ValueError("scoring expects a two-speaker ground truth")
    decoded = [tuple(p[:2]) for p in pairs]
    spk = len({s for s, _ in decoded} & set(truth.speakers))
    kw = sum((Counter(w for _, w in decoded) & Counter(truth.keywords)).values())
    pr = len(set(decoded) & set(truth.pairs))
    return Score(spk >= 1, spk >= 2, kw >= 1, kw >= 2, pr >= 1, pr >= 2)


def aggregate(records: Sequence[Score], task: str = TASK_ALL, family: str = "", init: str = "") -> MetricRow:
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    arr = np.asarray(records, dtype=bool)
    pct = 100.0 * arr.sum(axis=0) / arr.shape[0]
    return MetricRow(*(float(x) for x in pct), n_utterances=arr.shape[0], task=task, family=family, init=init)


def loo_split(corpus: dict, held_out: int):
    """Hold out repetition ``held_out`` of every cell; the rest is training data."""
    train, test = {}, {}
    for cell, utts in corpus.items():
        if len(utts) < 2:
            raise ValueError(f"cell {cell} has {len(utts)} utterance(s); leave-one-out needs >= 2")
        if not 0 <= held_out < len(utts):
            raise ValueError(f"held-out index {held_out} out of range for cell {cell}")
        train[cell] = [u for i, u in enumerate(utts) if i != held_out]
        test[cell] = utts[held_out]
    return train, test


@dataclass
class ExperimentConfig:
    families: tuple = ("student_t",)
    inits: tuple = INITS
    policy: DecodePolicy = field(default_factory=DecodePolicy)
    folds: tuple = (0,)
    max_per_task: int | None = None
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    em: EmConfig = field(default_factory=EmConfig)
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    jobs: int = 1


def _features_of(item, mfcc):
    return item if isinstance(item, FeatureMatrix) else compute_features(item, mfcc)


def build_mixture(spec: MixSpec, test: dict, mfcc: MfccConfig = MfccConfig()) -> FeatureMatrix:
    """Features of the mixture a spec describes.

    Audio sources are mixed as waveforms; feature sources are interleaved
    frame by frame.
    """
    a = test[spec.source_a[:2]]
    b = test[spec.source_b[:2]]
    if isinstance(a, AudioSignal):
        return compute_features(mix(a, b, spec).audio, mfcc)
    return interleave(a, b)


def _init_state(kind, bank, truth):
    M, N = bank.M, bank.N
    if kind == "flat":
        return init_flat(M, N)
    if kind == "oracle_speakers":
        return init_oracle_speakers(M, N, [bank.speakers.index(s) for s in truth.speakers])
    if kind == "oracle_keywords":
        return init_oracle_keywords(M, N, [bank.keywords.index(w) for w in truth.keywords])
    raise ValueError(f"unknown init {kind!r}")


def evaluate_spec(bank: ModelBank, X: FeatureMatrix, truth: GroundTruth, inits, policy, em_cfg) -> dict:
    """Scores of one mixture under each init condition."""
    table = frame_loglik_table(X, bank)
    out = {}
    for kind in inits:
        em = run_em_table(table, _init_state(kind, bank, truth), em_cfg)
        res = decode(compute_jpm(em.state), em.state, policy)
        labelled = [(bank.speakers[k], bank.keywords[l]) for k, l, _ in res.pairs]
        out[kind] = score_utterance(labelled, truth)
    return out


def _eval_chunk(args):
    bank, items, inits, policy, em_cfg, mfcc = args
    return [(task, evaluate_spec(bank, build_mixture(spec, test, mfcc), spec.truth, inits, policy, em_cfg))
            for task, spec, test in items]


def _subsample(specs, limit, rng):
    if limit is None or limit >= len(specs):
        return specs
    idx = np.sort(rng.choice(len(specs), size=limit, replace=False))
    return [specs[i] for i in idx]


def run_experiment(corpus: dict, cfg: ExperimentConfig = ExperimentConfig(),
                   speakers=None, keywords=None) -> list[MetricRow]:
    """Leave-one-out experiment; one MetricRow per (family, task, init).

    ``corpus`` maps ``(speaker, keyword)`` to repetitions, either
    AudioSignal or FeatureMatrix.
    """
    speakers = list(dict.fromkeys(s for s, _ in corpus)) if speakers is None else list(speakers)
    keywords = list(dict.fromkeys(w for _, w in corpus)) if keywords is None else list(keywords)
    families = [canonical_family(f) for f in cfg.families]
    records = {(f, t, i): [] for f in families for t in (TASK_DKW, TASK_SKW) for i in cfg.inits}
    feature_corpus = {cell: [_features_of(u, cfg.mfcc) for u in utts] for cell, utts in corpus.items()}
    for fold in cfg.folds:
        train, _ = loo_split(feature_corpus, fold)
        _, test = loo_split(corpus, fold)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, fold]))
        dkw, skw = enumerate_tasks(len(speakers), len(keywords), fold, cfg.seed + fold, speakers, keywords)
        items = [(TASK_DKW, s, test) for s in _subsample(dkw, cfg.max_per_task, rng)]
        items += [(TASK_SKW, s, test) for s in _subsample(skw, cfg.max_per_task, rng)]
        for fam in families:
            bank = train_bank(train, fam, cfg.train, speakers, keywords, jobs=cfg.jobs)
            if cfg.jobs > 1:
                n = cfg.jobs * 4
                chunks = [(bank, items[i::n], cfg.inits, cfg.policy, cfg.em, cfg.mfcc) for i in range(n)]
                with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
                    results = [r for part in pool.map(_eval_chunk, chunks) for r in part]
            else:
                results = _eval_chunk((bank, items, cfg.inits, cfg.policy, cfg.em, cfg.mfcc))
            for task, scores in results:
                for kind, sc in scores.items():
                    records[fam, task, kind].append(sc)
    rows = []
    for fam in families:
        for kind in cfg.inits:
            for task in (TASK_DKW, TASK_SKW):
                rows.append(aggregate(records[fam, task, kind], task, fam, kind))
            pooled = records[fam, TASK_DKW, kind] + records[fam, TASK_SKW, kind]
            rows.append(aggregate(pooled, TASK_ALL, fam, kind))
    return rows


CSV_FIELDS = ("family", "task", "init", "n_utterances") + METRICS


def rows_to_csv(rows: Sequence[MetricRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in rows:
        writer.writerow([r.family, r.task, r.init, r.n_utterances] + [f"{v:.2f}" for v in r.values])
    return buf.getvalue()


def row_label(r: MetricRow) -> str:
    return f"{FAMILY_LABELS.get(r.family, r.family)} / {INIT_LABELS.get(r.init, r.init)} / {r.task} ({r.n_utterances})"


def format_table(rows: Sequence[MetricRow], title: str = "% recognition accuracy") -> str:
    """Plain-text table with one line per row and the six accuracy columns."""
    labels = [row_label(r) for r in rows]
    w0 = max([len(x) for x in labels] + [10])
    heads = [h.replace(" detected correctly", "") for h in METRIC_HEADERS]
    widths = [max(len(h), 6) for h in heads]
    lines = [title, " | ".join([" " * w0] + [h.rjust(w) for h, w in zip(heads, widths)])]
    lines.append("-" * len(lines[-1]))
    for lab, r in zip(labels, rows):
        lines.append(" | ".join([lab.ljust(w0)] + [f"{v:.2f}".rjust(w) for v, w in zip(r.values, widths)]))
    return "\n".join(lines) + "\n"
