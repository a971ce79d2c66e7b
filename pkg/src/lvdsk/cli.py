"""Command-line entry point: ``lvdsk {mfcc,train,synth,mix,infer,eval}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_write_text, read_jsonl, write_json, write_jsonl
from .evaluation import (INITS, ExperimentConfig, build_mixture, format_table, rows_to_csv,
                         run_experiment)
from .features import (AudioSignal, FeatureMatrix, MfccConfig, compute_features, load_wav,
                       read_features, write_features, write_wav)
from .lvem import (DecodePolicy, EmConfig, compute_jpm, decode, inference_report, init_flat,
                   init_oracle_keywords, init_oracle_speakers, is_non_decreasing, run_em)
from .mixer import enumerate_tasks, interleave, mix, synth_corpus
from .models import ModelBank, TrainConfig, canonical_family, train_bank

log = logging.getLogger("lvdsk")


class CheckFailed(RuntimeError):
    pass


# ---------------------------------------------------------------- config

def _section(cls, file_cfg: dict, overrides: dict):
    names = {f.name for f in fields(cls)}
    merged = {k: v for k, v in file_cfg.items() if k in names}
    merged.update({k: v for k, v in overrides.items() if k in names and v is not None})
    return cls(**merged)


def load_config(args) -> dict:
    """Effective configuration: CLI flag > config file > built-in default."""
    file_cfg = {}
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text())
    flags = vars(args)
    seed = flags.get("seed")
    if seed is None:
        seed = int(file_cfg.get("seed", 0))
    jobs = flags.get("jobs") or int(file_cfg.get("jobs", 1))
    mfcc = _section(MfccConfig, file_cfg.get("mfcc", {}), {})
    train_flags = {"n_components": flags.get("components"), "max_iters": flags.get("train_iters"),
                   "n_restarts": flags.get("restarts"), "seed": seed}
    dof = flags.get("dof")
    if dof:
        if dof == "estimate":
            train_flags["dof_mode"] = "estimate"
        else:
            kind, _, value = dof.partition(":")
            if kind != "fixed":
                raise ValueError(f"--dof expects 'estimate' or 'fixed:<nu>', got {dof!r}")
            train_flags.update(dof_mode="fixed", fixed_dof=float(value or 5.0))
    train = _section(TrainConfig, file_cfg.get("train", {}), train_flags)
    em = _section(EmConfig, file_cfg.get("em", {}),
                  {"max_iters": flags.get("em_iters"), "rel_tol": flags.get("em_tol")})
    policy = DecodePolicy.parse(flags.get("policy") or file_cfg.get("decode", "known:2"))
    return {"seed": seed, "jobs": jobs, "mfcc": mfcc, "train": train, "em": em, "decode": policy}


def config_record(cfg: dict, command: str, **extra) -> dict:
    return {
        "command": command,
        "version": __version__,
        "seed": cfg["seed"],
        "mfcc": asdict(cfg["mfcc"]),
        "train": asdict(cfg["train"]),
        "em": asdict(cfg["em"]),
        "decode": str(cfg["decode"]),
        **extra,
    }


# ---------------------------------------------------------------- corpus I/O

def read_input(path, mfcc: MfccConfig) -> FeatureMatrix:
    path = Path(path)
    if path.suffix.lower() == ".wav":
        return compute_features(load_wav(path), mfcc)
    return read_features(path)


def load_corpus(manifest, raw: bool = False, mfcc: MfccConfig = MfccConfig()):
    """Read a corpus manifest (JSON lines with speaker, keyword, rep, path).

    Returns ``(corpus, speakers, keywords)``; items are AudioSignal or
    FeatureMatrix when ``raw``, otherwise always FeatureMatrix.
    """
    manifest = Path(manifest)
    recs = read_jsonl(manifest)
    if not recs:
        raise ValueError(f"{manifest}: empty corpus manifest")
    cells: dict = {}
    for r in recs:
        p = manifest.parent / r["path"]
        item = load_wav(p) if p.suffix.lower() == ".wav" else read_features(p)
        if not raw and isinstance(item, AudioSignal):
            item = compute_features(item, mfcc)
        cells.setdefault((r["speaker"], r["keyword"]), []).append((r.get("rep", 0), item))
    corpus = {cell: [it for _, it in sorted(items, key=lambda x: x[0])] for cell, items in cells.items()}
    speakers = list(dict.fromkeys(r["speaker"] for r in recs))
    keywords = list(dict.fromkeys(r["keyword"] for r in recs))
    return corpus, speakers, keywords


def _resolve(tokens: str, labels, what: str) -> list[int]:
    """Map comma-separated labels (or 1-based indices) to 0-based indices."""
    labels = [str(x) for x in labels]
    out = []
    for tok in (t.strip() for t in tokens.split(",") if t.strip()):
        if tok in labels:
            out.append(labels.index(tok))
        elif tok.isdigit() and 1 <= int(tok) <= len(labels):
            out.append(int(tok) - 1)
        else:
            raise ValueError(f"unknown {what} {tok!r}")
    return out


def _check(ok: bool, msg: str):
    if not ok:
        raise CheckFailed(msg)


# ---------------------------------------------------------------- commands

def cmd_mfcc(args, cfg):
    audio = load_wav(args.wav)
    feats = compute_features(audio, cfg["mfcc"])
    write_features(args.out, feats)
    write_json(str(args.out) + ".json", config_record(cfg, "mfcc", input=str(args.wav), dim=feats.dim, frames=feats.frames))
    print(f"D={feats.dim} T={feats.frames}")
    if args.check:
        _check(feats.dim == cfg["mfcc"].output_dim, "unexpected feature dimension")
        _check(np.array_equal(read_features(args.out).data, feats.data), "feature file does not round-trip")


def cmd_train(args, cfg):
    corpus, speakers, keywords = load_corpus(args.corpus, mfcc=cfg["mfcc"])
    family = canonical_family(args.family)
    bank = train_bank(corpus, family, cfg["train"], speakers, keywords, jobs=cfg["jobs"])
    bank.meta.update(config_record(cfg, "train", corpus=str(args.corpus), family=family))
    write_json(args.out, bank.to_dict())
    print(f"trained {bank.M}x{bank.N} {family} bank, K={cfg['train'].n_components}, D={bank.dim} -> {args.out}")
    if args.check:
        for row in bank.models:
            for m in row:
                _check(abs(m.weights.sum() - 1.0) <= 1e-12, "mixture weights do not sum to 1")
                _check(np.all(m.vars > 0), "non-positive variance")


def cmd_synth(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = synth_corpus(args.M, args.N, args.reps, args.mode, cfg["seed"], dim=args.dim,
                          n_components=cfg["train"].n_components, mfcc=cfg["mfcc"])
    records = []
    for (s, w), utts in corpus.features.items():
        for rep in range(len(utts)):
            if corpus.audio is not None:
                name = f"{s}_{w}_{rep:02d}.wav"
                write_wav(out / name, corpus.audio[s, w][rep])
            else:
                name = f"{s}_{w}_{rep:02d}.lvf"
                write_features(out / name, utts[rep])
            records.append({"speaker": s, "keyword": w, "rep": rep, "path": name})
    write_jsonl(out / "corpus.jsonl", records)
    if corpus.bank is not None:
        corpus.bank.meta.update(config_record(cfg, "synth", role="generator"))
        write_json(out / "generator_bank.json", corpus.bank.to_dict())
    write_json(out / "config.json", config_record(cfg, "synth", **corpus.meta), indent=2)
    print(f"wrote {len(records)} utterances ({args.mode}) to {out}")
    if args.check:
        _check(len(records) == args.M * args.N * args.reps, "utterance count mismatch")


def cmd_mix(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus, speakers, keywords = load_corpus(args.corpus, raw=True)
    speakers = speakers[: args.M] if args.M else speakers
    keywords = keywords[: args.N] if args.N else keywords
    dkw, skw = enumerate_tasks(len(speakers), len(keywords), args.held_out, cfg["seed"], speakers, keywords,
                               target_rpr_db=args.rpr, min_overlap=args.min_overlap)
    tasks = {"all": [("MSpDKW", dkw), ("MSpSKW", skw)], "dkw": [("MSpDKW", dkw)], "skw": [("MSpSKW", skw)]}[args.tasks]
    records = []
    for task, specs in tasks:
        for i, spec in enumerate(specs):
            a = corpus[spec.source_a[:2]][args.held_out]
            b = corpus[spec.source_b[:2]][args.held_out]
            if isinstance(a, AudioSignal):
                m = mix(a, b, spec)
                name = f"{task}_{i:05d}.wav"
                write_wav(out / name, m.audio)
                rpr, ov = m.rpr_db, m.overlap
            else:
                name = f"{task}_{i:05d}.lvf"
                write_features(out / name, interleave(a, b))
                rpr, ov = 0.0, 1.0
            records.append({"path": name, "task": task, "pairs": [list(p) for p in spec.truth.pairs],
                            "rpr_db": rpr, "overlap": ov, "seed": spec.seed, "held_out": args.held_out})
            if args.check:
                _check(abs(rpr - args.rpr) <= 0.5, f"{name}: RPR {rpr:.3f} dB off target")
                _check(ov >= args.min_overlap, f"{name}: overlap {ov:.3f} below {args.min_overlap}")
    write_jsonl(out / "mixtures.jsonl", records)
    write_json(out / "config.json", config_record(cfg, "mix", corpus=str(args.corpus), tasks=args.tasks,
                                                  held_out=args.held_out, rpr_db=args.rpr,
                                                  min_overlap=args.min_overlap), indent=2)
    print(f"wrote {len(records)} mixtures to {out}")


def cmd_infer(args, cfg):
    bank = ModelBank.from_dict(json.loads(Path(args.bank).read_text()))
    X = read_input(args.input, cfg["mfcc"])
    if args.oracle_speakers and args.oracle_keywords:
        raise ValueError("use at most one of --oracle-speakers / --oracle-keywords")
    if args.oracle_speakers:
        init = init_oracle_speakers(bank.M, bank.N, _resolve(args.oracle_speakers, bank.speakers, "speaker"))
    elif args.oracle_keywords:
        init = init_oracle_keywords(bank.M, bank.N, _resolve(args.oracle_keywords, bank.keywords, "keyword"))
    else:
        init = init_flat(bank.M, bank.N)
    em = run_em(X, bank, init, cfg["em"])
    result = decode(compute_jpm(em.state), em.state, cfg["decode"])
    report = inference_report(bank, em, result, input=str(args.input),
                              config=config_record(cfg, "infer", bank=str(args.bank)))
    if args.out:
        write_json(args.out, report, indent=2)
    for p in report["pairs"]:
        print(f"{p['speaker']}\t{p['keyword']}\t{p['score']:.4f}")
    if args.check:
        _check(is_non_decreasing(em.loglik), "log-likelihood decreased during EM")
        errs = em.state.violations()
        _check(not errs, "; ".join(errs))
        _check(len(set(result.speakers)) == len(result.speakers), "more than one keyword for a speaker")


def cmd_eval(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus, speakers, keywords = load_corpus(args.corpus, raw=True)
    inits = tuple(i.replace("-", "_") for i in args.inits.split(","))
    bad = [i for i in inits if i not in INITS]
    if bad:
        raise ValueError(f"unknown init condition(s) {bad}")
    exp = ExperimentConfig(
        families=tuple(canonical_family(f) for f in args.families.split(",")),
        inits=inits, policy=cfg["decode"],
        folds=tuple(int(f) for f in args.folds.split(",")),
        max_per_task=args.max_per_task, seed=cfg["seed"], train=cfg["train"], em=cfg["em"],
        mfcc=cfg["mfcc"], jobs=cfg["jobs"])
    rows = run_experiment(corpus, exp, speakers, keywords)
    atomic_write_text(out / "results.csv", rows_to_csv(rows))
    table = format_table(rows)
    atomic_write_text(out / "results.txt", table)
    write_json(out / "config.json", config_record(cfg, "eval", corpus=str(args.corpus), families=list(exp.families),
                                                  inits=list(inits), folds=list(exp.folds),
                                                  max_per_task=args.max_per_task), indent=2)
    print(table, end="")
    if args.check:
        for r in rows:
            errs = r.violations()
            _check(not errs, f"{r.task}/{r.init}: " + "; ".join(errs))


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (flags override it)")
    common.add_argument("--seed", type=int, help="global seed (default 0)")
    common.add_argument("--jobs", type=int, help="worker processes (default 1)")
    common.add_argument("--check", action="store_true", help="verify output invariants; exit 1 on failure")
    common.add_argument("-v", "--verbose", action="store_true")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--components", type=int, help="mixture components per cell (default 8)")
    model.add_argument("--restarts", type=int, help="k-means++ restarts (default 3)")
    model.add_argument("--train-iters", type=int, help="EM iterations for model training (default 200)")
    model.add_argument("--dof", help="Student's-t dof: 'estimate' or 'fixed:<nu>'")

    em = argparse.ArgumentParser(add_help=False)
    em.add_argument("--em-iters", type=int, help="LV-EM iteration cap (default 100)")
    em.add_argument("--em-tol", type=float, help="LV-EM relative tolerance (default 1e-6)")
    em.add_argument("--policy", help="decode policy known:<n> or threshold:<tau> (default known:2)")

    p = argparse.ArgumentParser(prog="lvdsk", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("mfcc", parents=[common], help="WAV -> LVF1 feature file")
    s.add_argument("wav")
    s.add_argument("out")
    s.set_defaults(func=cmd_mfcc)

    s = sub.add_parser("train", parents=[common, model], help="train a speaker-keyword model bank")
    s.add_argument("corpus", help="corpus manifest (JSON lines)")
    s.add_argument("--family", default="tmm", help="gmm or tmm (default tmm)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", parents=[common, model], help="generate a synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--M", type=int, default=10)
    s.add_argument("--N", type=int, default=10)
    s.add_argument("--reps", type=int, default=10)
    s.add_argument("--mode", choices=("feature", "waveform"), default="feature")
    s.add_argument("--dim", type=int, default=5, help="feature dimension in feature mode")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("mix", parents=[common], help="build two-speaker evaluation mixtures")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--tasks", choices=("all", "dkw", "skw"), default="all")
    s.add_argument("--M", type=int, help="use the first M speakers")
    s.add_argument("--N", type=int, help="use the first N keywords")
    s.add_argument("--held-out", type=int, default=0, help="repetition index to mix")
    s.add_argument("--rpr", type=float, default=0.0, help="target RPR in dB")
    s.add_argument("--min-overlap", type=float, default=0.9)
    s.set_defaults(func=cmd_mix)

    s = sub.add_parser("infer", parents=[common, em], help="detect speaker-keyword pairs in a mixture")
    s.add_argument("input", help="mixture WAV or LVF1 feature file")
    s.add_argument("--bank", required=True)
    s.add_argument("--out", help="inference report JSON")
    s.add_argument("--oracle-speakers", help="known active speakers (labels or 1-based indices)")
    s.add_argument("--oracle-keywords", help="known spoken keywords (labels or 1-based indices)")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", parents=[common, model, em], help="leave-one-out evaluation tables")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--families", default="tmm")
    s.add_argument("--inits", default="flat,oracle-speakers,oracle-keywords")
    s.add_argument("--folds", default="0", help="comma-separated held-out repetition indices")
    s.add_argument("--max-per-task", type=int, help="subsample each task to this many mixtures")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        args.func(args, cfg)
    except CheckFailed as exc:
        print(f"lvdsk: check failed: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError) as exc:
        print(f"lvdsk: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
