"""Evaluation mixtures and synthetic corpora."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .features import AudioSignal, FeatureMatrix, MfccConfig, compute_features
from .models import GAUSSIAN, MixtureModel, ModelBank

PEAK_LEVEL = 0.99


@dataclass(frozen=True)
class MixSpec:
    """Two sources ``(speaker, keyword, utterance)`` to be mixed.

    ``offset``, when set, forces the start of ``source_b`` relative to the
    start of ``source_a`` in samples (or frames for feature mixtures).
    """

    source_a: tuple
    source_b: tuple
    target_rpr_db: float = 0.0
    min_overlap: float = 0.9
    seed: int = 0
    offset: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "source_a", tuple(self.source_a))
        object.__setattr__(self, "source_b", tuple(self.source_b))
        if not 0.0 < self.min_overlap <= 1.0:
            raise ValueError("min_overlap must lie in (0, 1]")
        if self.source_a[0] == self.source_b[0]:
            raise ValueError(f"both sources come from speaker {self.source_a[0]!r}")

    @property
    def truth(self) -> "GroundTruth":
        return GroundTruth([self.source_a[:2], self.source_b[:2]])

    def to_dict(self) -> dict:
        return {"source_a": list(self.source_a), "source_b": list(self.source_b),
                "target_rpr_db": self.target_rpr_db, "min_overlap": self.min_overlap,
                "seed": self.seed, "offset": self.offset}


@dataclass(frozen=True)
class GroundTruth:
    pairs: tuple

    def __post_init__(self):
        pairs = tuple(sorted({tuple(p) for p in self.pairs}, key=repr))
        if not 1 <= len(pairs) <= 2:
            raise ValueError(f"ground truth needs 1-2 pairs, got {len(pairs)}")
        if len({s for s, _ in pairs}) != len(pairs):
            raise ValueError("ground-truth pairs must have distinct speakers")
        object.__setattr__(self, "pairs", pairs)

    @property
    def speakers(self) -> list:
        return [s for s, _ in self.pairs]

    @property
    def keywords(self) -> list:
        return [w for _, w in self.pairs]


@dataclass(frozen=True)
class Mixture:
    audio: AudioSignal
    truth: GroundTruth
    rpr_db: float
    overlap: float
    offset: int


def power(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x))


def compute_rpr(a: AudioSignal, b: AudioSignal) -> float:
    """Relative power ratio in dB, each power taken over that signal's own samples."""
    if a.sample_rate != b.sample_rate:
        raise ValueError("signals have different sample rates")
    pa, pb = power(a.samples), power(b.samples)
    if pa == 0.0 or pb == 0.0:
        raise ValueError("zero-power input")
    return 10.0 * np.log10(pa / pb)


def overlap_fraction(len_a: int, len_b: int, offset_b: int) -> float:
    """Shared support divided by the shorter length; ``offset_b`` is b's start relative to a."""
    shared = min(len_a, offset_b + len_b) - max(0, offset_b)
    return max(shared, 0) / min(len_a, len_b)


def draw_offset(len_a: int, len_b: int, min_overlap: float, rng) -> int:
    """Uniform placement of the shorter source against the longer one meeting ``min_overlap``.

    Depends only on the two lengths, so swapping distinct-length sources
    mirrors the draw.
    """
    b_shorter = len_b <= len_a
    short, long_ = (len_b, len_a) if b_shorter else (len_a, len_b)
    lo = -int(np.floor((1.0 - min_overlap) * short + 1e-9))
    hi = int(np.floor(long_ - min_overlap * short + 1e-9))
    o = int(rng.integers(lo, hi + 1))
    return o if b_shorter else -o


def _place(xa: np.ndarray, xb: np.ndarray, offset_b: int) -> np.ndarray:
    start = min(0, offset_b)
    stop = max(xa.shape[0], offset_b + xb.shape[0])
    out = np.zeros((stop - start,) + xa.shape[1:])
    out[-start: -start + xa.shape[0]] += xa
    out[offset_b - start: offset_b - start + xb.shape[0]] += xb
    return out


def mix(a: AudioSignal, b: AudioSignal, spec: MixSpec) -> Mixture:
    """Sum two utterances at ``spec.target_rpr_db`` with the overlap constraint.

    Both sources are rescaled about their geometric-mean power, which makes
    ``mix(a, b, r)`` and ``mix(b, a, -r)`` produce the same samples.
    """
    if a.sample_rate != b.sample_rate:
        raise ValueError("signals have different sample rates")
    pa, pb = power(a.samples), power(b.samples)
    if pa == 0.0 or pb == 0.0:
        raise ValueError("zero-power input")
    level = np.sqrt(pa * pb)
    half = 10.0 ** (spec.target_rpr_db / 20.0)
    xa = a.samples * np.sqrt(level * half / pa)
    xb = b.samples * np.sqrt(level / half / pb)
    if spec.offset is None:
        offset = draw_offset(len(a), len(b), spec.min_overlap, np.random.default_rng(spec.seed))
    else:
        offset = int(spec.offset)
    ov = overlap_fraction(len(a), len(b), offset)
    if ov < spec.min_overlap - 1e-12:
        raise ValueError(f"offset {offset} gives overlap {ov:.3f} < required {spec.min_overlap}")
    y = _place(xa, xb, offset)
    peak = np.max(np.abs(y))
    if peak > 1.0:
        g = PEAK_LEVEL / peak
        y, xa, xb = y * g, xa * g, xb * g
    rpr = 10.0 * np.log10(power(xa) / power(xb))
    return Mixture(AudioSignal(y, a.sample_rate), spec.truth, float(rpr), float(ov), offset)


def interleave(fa: FeatureMatrix, fb: FeatureMatrix) -> FeatureMatrix:
    """Feature-level mixture: alternate frames of the two sources.

    Both are truncated to the shorter length so each contributes the same
    number of frames.
    """
    if fa.dim != fb.dim:
        raise ValueError("feature dimensions differ")
    n = min(fa.frames, fb.frames)
    out = np.empty((2 * n, fa.dim))
    out[0::2] = fa.by_frame[:n]
    out[1::2] = fb.by_frame[:n]
    return FeatureMatrix.from_frames(out)


def _spec_seed(seed: int, task: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, task, i]).generate_state(1)[0])


def enumerate_tasks(M: int = 10, N: int = 10, utterance=0, seed: int = 0,
                    speakers=None, keywords=None, target_rpr_db: float = 0.0,
                    min_overlap: float = 0.9):
    """All different-keyword and same-keyword two-speaker specs.

    For speakers s1 < s2 and keywords w1 < w2 the different-keyword task
    has s1 saying w1 and s2 saying w2 (one assignment per combination).
    """
    if M < 2 or N < 2:
        raise ValueError("need M, N >= 2")
    speakers = list(range(M)) if speakers is None else list(speakers)
    keywords = list(range(N)) if keywords is None else list(keywords)
    if len(speakers) != M or len(keywords) != N:
        raise ValueError("label lists do not match M, N")
    dkw, skw = [], []
    for s1, s2 in combinations(speakers, 2):
        for w1, w2 in combinations(keywords, 2):
            dkw.append(MixSpec((s1, w1, utterance), (s2, w2, utterance), target_rpr_db,
                               min_overlap, _spec_seed(seed, 0, len(dkw))))
        for w in keywords:
            skw.append(MixSpec((s1, w, utterance), (s2, w, utterance), target_rpr_db,
                               min_overlap, _spec_seed(seed, 1, len(skw))))
    return dkw, skw


@dataclass
class SynthCorpus:
    speakers: list
    keywords: list
    features: dict
    audio: dict | None = None
    bank: ModelBank | None = None
    meta: dict = field(default_factory=dict)


def _separated_points(n, dim, lo, hi, min_dist, rng, max_tries=200000):
    pts = np.empty((0, dim))
    tries = 0
    while pts.shape[0] < n:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(f"could not place {n} means {min_dist} apart in [{lo},{hi}]^{dim}")
        p = rng.uniform(lo, hi, dim)
        if pts.shape[0] == 0 or np.min(np.linalg.norm(pts - p, axis=1)) >= min_dist:
            pts = np.vstack([pts, p])
    return pts


def random_bank(M: int, N: int, dim: int = 5, n_components: int = 8, seed: int = 0,
                min_dist: float = 1.5, var_range=(0.02, 0.06), speakers=None, keywords=None) -> ModelBank:
    """Gaussian-mixture bank whose component means lie in [-5, 5]^dim, pairwise >= min_dist apart."""
    rng = np.random.default_rng(seed)
    speakers = speakers or [f"S{k + 1}" for k in range(M)]
    keywords = keywords or [f"V{l + 1}" for l in range(N)]
    means = _separated_points(M * N * n_components, dim, -5.0, 5.0, min_dist, rng)
    means = means.reshape(M, N, n_components, dim)
    grid = []
    for k in range(M):
        row = []
        for l in range(N):
            w = rng.dirichlet(np.full(n_components, 5.0))
            var = rng.uniform(*var_range, (n_components, dim))
            row.append(MixtureModel(GAUSSIAN, w, means[k, l], var))
        grid.append(row)
    return ModelBank(speakers, keywords, grid)


def sample_frames(model: MixtureModel, n: int, rng) -> np.ndarray:
    comp = rng.choice(model.n_components, size=n, p=model.weights)
    z = rng.standard_normal((n, model.dim))
    if model.dof is not None:
        g = rng.chisquare(model.dof[comp]) / model.dof[comp]
        z = z / np.sqrt(g)[:, None]
    return model.means[comp] + z * np.sqrt(model.vars[comp])


RATE = 16000


def keyword_signature(k: int, l: int, rng, rate: int = RATE) -> np.ndarray:
    """Crude multi-tone utterance: speaker sets the harmonic series, keyword the envelope and band."""
    dur = 0.35 + 0.06 * (l % 6) + rng.uniform(-0.02, 0.02)
    n = int(dur * rate)
    t = np.arange(n) / rate
    f0 = (95.0 + 17.0 * k) * (1.0 + 0.01 * rng.standard_normal())
    tilt = 0.6 + 0.08 * (k % 5)
    band = 400.0 + 260.0 * l
    syllables = 1 + l % 3
    sig = np.zeros(n)
    h = 1
    while f0 * h < 0.45 * rate:
        f = f0 * h
        amp = h ** -tilt * (1.0 + 3.0 * np.exp(-0.5 * ((f - band) / 200.0) ** 2))
        sig += amp * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        h += 1
    phase = t / dur
    env = np.sin(np.pi * phase) * (0.55 + 0.45 * np.cos(2 * np.pi * syllables * phase + 0.3 * l))
    sig = sig * np.abs(env) + 0.003 * rng.standard_normal(n)
    return 0.3 * sig / np.max(np.abs(sig))


def synth_corpus(M: int, N: int, reps: int, mode: str = "feature", seed: int = 0, dim: int = 5,
                 n_components: int = 8, frames=(30, 60), min_dist: float = 1.5,
                 var_range=(0.02, 0.06), mfcc: MfccConfig = MfccConfig()) -> SynthCorpus:
    """Seeded synthetic training corpus.

    ``feature`` mode samples frames from a random well-separated Gaussian
    bank (returned as ``bank``); ``waveform`` mode renders multi-tone
    signatures and runs them through the MFCC front-end.
    """
    if min(M, N, reps) < 1:
        raise ValueError("need M, N, reps >= 1")
    speakers = [f"S{k + 1}" for k in range(M)]
    keywords = [f"V{l + 1}" for l in range(N)]
    feats, audio, bank = {}, None, None
    if mode == "feature":
        bank = random_bank(M, N, dim, n_components, seed, min_dist, var_range, speakers, keywords)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        for k, s in enumerate(speakers):
            for l, w in enumerate(keywords):
                feats[s, w] = [
                    FeatureMatrix.from_frames(sample_frames(bank.models[k][l], int(rng.integers(frames[0], frames[1] + 1)), rng))
                    for _ in range(reps)
                ]
    elif mode == "waveform":
        audio = {}
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
        for k, s in enumerate(speakers):
            for l, w in enumerate(keywords):
                audio[s, w] = [AudioSignal(keyword_signature(k, l, rng), RATE) for _ in range(reps)]
                feats[s, w] = [compute_features(a, mfcc) for a in audio[s, w]]
    else:
        raise ValueError(f"unknown synth mode {mode!r}")
    return SynthCorpus(speakers, keywords, feats, audio, bank,
                       {"mode": mode, "seed": seed, "M": M, "N": N, "reps": reps, "dim": dim})
