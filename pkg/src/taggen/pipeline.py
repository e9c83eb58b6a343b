"""Stage orchestration: config schema, artifacts, manifests and the work-dir lock.

Each stage reads only the artifacts of earlier stages and writes into its
own directory under the work dir, together with a ``manifest.json`` holding
the config snapshot, seeds and checksums of everything it read and wrote.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable

from . import __version__
from .classifier import NgramClassifier, accuracy, train_classifier
from .corpus import (StyleCorpus, bucket_by_score, bucket_scored, ingest_corpus, read_corpus_jsonl,
                     read_scored_jsonl, split_corpus, target_style_train_set, tokenize,
                     write_buckets_jsonl, write_corpus_jsonl)
from .decode import read_transfers_jsonl, transfer, write_transfers_jsonl
from .evaluation import (MetricReport, ablation_harness, evaluate, format_table,
                         naive_baseline)
from .markers import (extract_markers, read_markers_tsv, style_impact, write_markers_tsv,
                      write_stats_tsv)
from .seq2seq import (ModelConfig, NoiseConfig, Seq2SeqModel, TrainConfig, load_checkpoint,
                      train)
from .tagdata import (make_add_pairs, make_combined_pairs, make_generator_pairs,
                      make_replace_pairs, read_pairs_tsv, write_pairs_tsv)
from .tokenizer import BpeVocab, ConfigError as _BaseConfigError, train_bpe

log = logging.getLogger(__name__)

STAGES = ("preprocess", "classify", "markers", "tagdata", "train-tagger", "train-generator",
          "transfer", "evaluate", "ablate")
TAGGER_MODES = ("add", "replace", "combined")
PRESET_NAMES = ("paper", "desk")


class ConfigError(_BaseConfigError):
    def __init__(self, problems: dict[str, str]):
        self.problems = problems
        super().__init__("invalid config: " + "; ".join(f"{k}: {v}" for k, v in problems.items()))


class DependencyError(RuntimeError):
    def __init__(self, stage: str, missing: Path, prerequisite: str):
        self.stage, self.missing, self.prerequisite = stage, missing, prerequisite
        super().__init__(f"stage {stage!r} needs {missing}; run the {prerequisite!r} stage first")


class LockError(RuntimeError):
    pass


def _opt(x):
    return None if x in (None, "", "none", "None") else x


@dataclass
class RunConfig:
    source_corpus: str = ""
    target_corpus: str = ""
    work_dir: str = "work"
    source_style: str = "source"
    target_style: str = "target"
    pool_corpus: str | None = None
    transfer_input: str | None = None
    references: str | None = None
    seed: int = 0
    n_range: tuple[int, int] = (1, 4)
    gamma: float = 0.75
    k: float = 0.9
    tag_budget: int = 20
    sample_prob_scale: float = math.inf
    vocab_size: int = 16000
    tagger_mode: str = "add"
    preset: str = "paper"
    layers: int | None = None
    heads: int | None = None
    dim: int | None = None
    dropout: float | None = None
    max_len: int = 128
    dtype: str = "float32"
    epochs: int = 30
    lr: float | None = None
    warmup: int | None = None
    batch_size: int | None = None
    clip_norm: float = 1.0
    checkpoint_every: int = 0
    generator_noise: bool = True
    noise_shuffle_window: int = 3
    noise_drop_prob: float = 0.1
    noise_replace_prob: float = 0.1
    classifier_epochs: int = 200
    classifier_lr: float = 0.5
    classifier_l2: float = 1e-4
    beam: int = 5
    alpha: float = 0.0
    ablate: bool = False

    # -- construction ------------------------------------------------------

    @classmethod
    def from_mapping(cls, raw: dict, base_dir: Path | None = None) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        problems = {k: "unknown key" for k in raw if k not in known}
        kw = {}
        for key, value in raw.items():
            if key not in known:
                continue
            try:
                kw[key] = _coerce(key, value, cls.__dataclass_fields__[key].default)
            except (TypeError, ValueError) as exc:
                problems[key] = str(exc)
        if problems:
            raise ConfigError(problems)
        cfg = cls(**kw)
        if base_dir is not None:
            cfg = cfg._resolved(Path(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "RunConfig":
        path = Path(path)
        raw = parse_config_text(path.read_text(encoding="utf-8"), str(path))
        raw.update(overrides or {})
        return cls.from_mapping(raw, base_dir=path.parent)

    def _resolved(self, base: Path) -> "RunConfig":
        d = asdict(self)
        for key in ("source_corpus", "target_corpus", "work_dir", "pool_corpus",
                    "transfer_input", "references"):
            if d[key] and not Path(d[key]).is_absolute():
                d[key] = str((base / d[key]).resolve())
        return RunConfig(**d)

    def validate(self) -> None:
        problems = {}
        for key in ("source_corpus", "target_corpus"):
            if not getattr(self, key):
                problems[key] = "required"
            elif not Path(getattr(self, key)).is_file():
                problems[key] = f"no such file: {getattr(self, key)}"
        for key in ("pool_corpus", "transfer_input", "references"):
            v = getattr(self, key)
            if v and not Path(v).is_file():
                problems[key] = f"no such file: {v}"
        if self.references and not self.transfer_input:
            problems["references"] = "references need an aligned transfer_input file"
        lo, hi = self.n_range
        if not 1 <= lo <= hi:
            problems["n_range"] = "need 1 <= n_min <= n_max"
        if not self.gamma > 0:
            problems["gamma"] = "must be positive"
        if not 0 <= self.k:
            problems["k"] = "must be >= 0"
        if self.tagger_mode not in TAGGER_MODES:
            problems["tagger_mode"] = f"must be one of {', '.join(TAGGER_MODES)}"
        if self.preset not in PRESET_NAMES:
            problems["preset"] = f"must be one of {', '.join(PRESET_NAMES)}"
        if self.source_style == self.target_style:
            problems["target_style"] = "must differ from source_style"
        if self.dtype not in ("float32", "float64"):
            problems["dtype"] = "must be float32 or float64"
        if self.dropout is not None and not 0 <= self.dropout < 1:
            problems["dropout"] = "must lie in [0, 1)"
        for key in ("tag_budget", "vocab_size", "epochs", "beam", "max_len", "classifier_epochs",
                    "noise_shuffle_window"):
            if getattr(self, key) < 1:
                problems[key] = "must be >= 1"
        for key in ("noise_drop_prob", "noise_replace_prob"):
            if not 0 <= getattr(self, key) <= 1:
                problems[key] = "must lie in [0, 1]"
        if not self.sample_prob_scale > 0:
            problems["sample_prob_scale"] = "must be positive (inf replaces every marker)"
        if problems:
            raise ConfigError(problems)

    # -- derived settings ----------------------------------------------------

    def model_config(self, vocab: BpeVocab, seed: int) -> ModelConfig:
        overrides = {k: getattr(self, k) for k in ("layers", "heads", "dim", "dropout")
                     if getattr(self, k) is not None}
        return ModelConfig.from_preset(self.preset, vocab, max_len=self.max_len, seed=seed,
                                       dtype=self.dtype, **overrides)

    def train_config(self, noise: bool) -> TrainConfig:
        overrides = {k: getattr(self, k) for k in ("lr", "warmup", "batch_size")
                     if getattr(self, k) is not None}
        nc = None
        if noise:
            nc = NoiseConfig(self.noise_shuffle_window, self.noise_drop_prob, self.noise_replace_prob)
        return TrainConfig.from_preset(self.preset, epochs=self.epochs, clip_norm=self.clip_norm,
                                       seed=self.seed, noise=nc,
                                       checkpoint_every=self.checkpoint_every, **overrides)

    def snapshot(self) -> dict:
        d = asdict(self)
        d["n_range"] = list(self.n_range)
        if math.isinf(self.sample_prob_scale):
            d["sample_prob_scale"] = "inf"
        return d


def _coerce(key, value, default):
    if isinstance(value, str):
        value = value.strip()
    if key == "n_range":
        if isinstance(value, str):
            parts = [p for p in value.replace("-", ",").split(",") if p.strip()]
        else:
            parts = list(value)
        if len(parts) != 2:
            raise ValueError("expected 'n_min,n_max'")
        return (int(parts[0]), int(parts[1]))
    if key in ("layers", "heads", "dim", "lr", "warmup", "batch_size", "dropout", "pool_corpus",
               "transfer_input", "references"):
        if _opt(value) is None:
            return None
        kind = {"lr": float, "dropout": float, "pool_corpus": str, "transfer_input": str,
                "references": str}.get(key, int)
        return kind(value)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        low = str(value).lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError({f"line {lineno}": f"{source}: expected 'key = value'"})
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = value
    return raw


def format_config(cfg: RunConfig) -> str:
    out = []
    for key, value in cfg.snapshot().items():
        if value is None:
            continue
        if isinstance(value, list):
            value = ",".join(map(str, value))
        out.append(f"{key} = {value}")
    return "\n".join(out) + "\n"


# -- artifacts ---------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Run:
    """Paths and bookkeeping for one work dir."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = Path(cfg.work_dir)

    def dir(self, stage: str) -> Path:
        return self.root / stage

    def need(self, stage: str, prerequisite: str, name: str) -> Path:
        p = self.dir(prerequisite) / name
        if not p.exists():
            raise DependencyError(stage, p, prerequisite)
        return p

    def fresh(self, stage: str) -> Path:
        d = self.dir(stage)
        d.mkdir(parents=True, exist_ok=True)
        for p in sorted(d.rglob("*"), reverse=True):
            if p.is_file():
                p.unlink()
            elif p.is_dir():
                p.rmdir()
        return d

    def manifest(self, stage: str, inputs: list[Path], seeds: dict, extra: dict | None = None) -> dict:
        d = self.dir(stage)
        outputs = {str(p.relative_to(d)): sha256_file(p) for p in sorted(d.rglob("*"))
                   if p.is_file() and p.name != "manifest.json"}
        man = {
            "stage": stage,
            "tool": "taggen",
            "tool_version": __version__,
            "config": self.cfg.snapshot(),
            "seeds": seeds,
            "inputs": {self._rel(p): sha256_file(p) for p in inputs},
            "outputs": outputs,
        }
        if extra:
            man.update(extra)
        write_json(man, d / "manifest.json")
        return man

    def _rel(self, p: Path) -> str:
        try:
            return str(Path(p).resolve().relative_to(self.root.resolve()))
        except ValueError:
            return str(p)


@contextlib.contextmanager
def work_dir_lock(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    lock = root / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"{root} is locked by another run (remove {lock} if it is stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


# -- stages ------------------------------------------------------------------

def _corpus_path(run: Run, stage: str, role: str, split: str) -> Path:
    return run.need(stage, "preprocess", f"{role}_{split}.jsonl")


def _load_split(run: Run, stage: str, role: str, split: str) -> StyleCorpus:
    style = run.cfg.source_style if role == "source" else run.cfg.target_style
    return read_corpus_jsonl(_corpus_path(run, stage, role, split), style)


def _target_train(run: Run, stage: str) -> tuple[StyleCorpus, Path]:
    """Target-style training corpus: the top bucket of the pool when one is configured."""
    if run.cfg.pool_corpus:
        p = run.need(stage, "classify", "target_p9_train.jsonl")
        return read_corpus_jsonl(p, run.cfg.target_style), p
    p = _corpus_path(run, stage, "target", "train")
    return read_corpus_jsonl(p, run.cfg.target_style), p


def stage_preprocess(run: Run) -> dict:
    cfg = run.cfg
    d = run.fresh("preprocess")
    summary = {}
    for role, path, style in (("source", cfg.source_corpus, cfg.source_style),
                              ("target", cfg.target_corpus, cfg.target_style)):
        corpus = ingest_corpus(path, style)
        splits = split_corpus(corpus, cfg.seed)
        for split, part in splits.items():
            write_corpus_jsonl(part, d / f"{role}_{split}.jsonl", split)
        summary[role] = {"size": corpus.size, "filtered": dict(sorted(corpus.filter_counts.items())),
                         "splits": {k: v.size for k, v in splits.items()}}
    write_json(summary, d / "summary.json")
    run.manifest("preprocess", [Path(cfg.source_corpus), Path(cfg.target_corpus)],
                 {"split": cfg.seed})
    return summary


def stage_classify(run: Run) -> dict:
    cfg = run.cfg
    inputs = [_corpus_path(run, "classify", r, s) for r in ("source", "target")
              for s in ("train", "dev")]
    src_train, tgt_train = _load_split(run, "classify", "source", "train"), _load_split(run, "classify", "target", "train")
    d = run.fresh("classify")
    clf = train_classifier(tgt_train, src_train, epochs=cfg.classifier_epochs, lr=cfg.classifier_lr,
                           l2=cfg.classifier_l2, seed=cfg.seed,
                           label_map={0: cfg.source_style, 1: cfg.target_style})
    clf.save(d / "classifier.json")
    dev = accuracy(clf, _load_split(run, "classify", "target", "dev").sentences,
                   _load_split(run, "classify", "source", "dev").sentences)
    summary = {"dev_accuracy": dev, "final_loss": clf.loss_history[-1],
               "n_features": len(clf.weights)}
    if cfg.pool_corpus:
        if str(cfg.pool_corpus).endswith(".jsonl"):
            # externally scored {"text", "score"} lines bypass our classifier
            buckets = bucket_scored(read_scored_jsonl(cfg.pool_corpus), cfg.seed)
            summary["pool_scorer"] = "external"
        else:
            buckets = bucket_by_score(ingest_corpus(cfg.pool_corpus, "pool"), clf.score, cfg.seed)
            summary["pool_scorer"] = "classifier"
        write_buckets_jsonl(buckets, d / "buckets.jsonl")
        p9 = target_style_train_set(buckets, cfg.target_style)
        write_corpus_jsonl(p9, d / "target_p9_train.jsonl", "train")
        summary["p9_train"] = p9.size
        inputs.append(Path(cfg.pool_corpus))
    write_json(summary, d / "summary.json")
    run.manifest("classify", inputs, {"bucket_split": cfg.seed})
    return summary


def stage_markers(run: Run) -> dict:
    cfg = run.cfg
    src_path = _corpus_path(run, "markers", "source", "train")
    X1 = read_corpus_jsonl(src_path, cfg.source_style)
    X2, tgt_path = _target_train(run, "markers")
    d = run.fresh("markers")
    to_target = style_impact(X1, X2, cfg.n_range, cfg.gamma)
    to_source = style_impact(X2, X1, cfg.n_range, cfg.gamma)
    g_source = extract_markers(to_source, cfg.k, cfg.source_style)
    g_target = extract_markers(to_target, cfg.k, cfg.target_style)
    write_markers_tsv(g_source, d / "markers_source.tsv")
    write_markers_tsv(g_target, d / "markers_target.tsv")
    write_stats_tsv(to_target, d / "impact_to_target.tsv")
    write_stats_tsv(to_source, d / "impact_to_source.tsv")
    summary = {"shared_ngrams": len(to_target), "source_markers": len(g_source),
               "target_markers": len(g_target),
               "top_target": [" ".join(w) for w, _ in g_target.ranked()[:10]],
               "top_source": [" ".join(w) for w, _ in g_source.ranked()[:10]],
               "warnings": [w for w in (g_source.warning, g_target.warning) if w]}
    write_json(summary, d / "summary.json")
    run.manifest("markers", [src_path, tgt_path], {})
    return summary


def stage_tagdata(run: Run) -> dict:
    cfg = run.cfg
    src_path = _corpus_path(run, "tagdata", "source", "train")
    X1 = read_corpus_jsonl(src_path, cfg.source_style)
    X2, tgt_path = _target_train(run, "tagdata")
    ms_path = run.need("tagdata", "markers", "markers_source.tsv")
    mt_path = run.need("tagdata", "markers", "markers_target.tsv")
    g_source = read_markers_tsv(ms_path, cfg.source_style, cfg.k)
    g_target = read_markers_tsv(mt_path, cfg.target_style, cfg.k)
    d = run.fresh("tagdata")

    vocab = train_bpe(list(X1.sentences) + list(X2.sentences), cfg.vocab_size, cfg.tag_budget)
    vocab.save(d / "vocab.json")
    add = make_add_pairs(X2, g_target, cfg.tag_budget)
    replace = make_replace_pairs(X1, g_source, cfg.sample_prob_scale, cfg.seed, cfg.tag_budget)
    combined = make_combined_pairs(add, replace, cfg.seed)
    generator = make_generator_pairs(X2, g_target, cfg.tag_budget)
    for name, pairs in (("add", add), ("replace", replace), ("combined", combined),
                        ("generator", generator)):
        write_pairs_tsv(pairs, d / f"pairs_{name}.tsv")
    summary = {"vocab_size": len(vocab), "merges": len(vocab.merges), "add": len(add),
               "replace": len(replace), "combined": len(combined), "generator": len(generator)}
    write_json(summary, d / "summary.json")
    run.manifest("tagdata", [src_path, tgt_path, ms_path, mt_path],
                 {"marker_sampling": cfg.seed, "combined_shuffle": cfg.seed})
    return summary


def _train_model(run: Run, stage: str, role: str, pairs_name: str, seed: int, noise: bool,
                 out_dir: Path | None = None) -> tuple[Seq2SeqModel, list[Path]]:
    cfg = run.cfg
    vocab_path = run.need(stage, "tagdata", "vocab.json")
    pairs_path = run.need(stage, "tagdata", f"pairs_{pairs_name}.tsv")
    vocab = BpeVocab.load(vocab_path)
    pairs = read_pairs_tsv(pairs_path)
    model = Seq2SeqModel(cfg.model_config(vocab, seed), role)
    train(model, pairs, vocab, cfg.train_config(noise), checkpoint_dir=out_dir or run.dir(stage))
    return model, [vocab_path, pairs_path]


def stage_train_tagger(run: Run) -> dict:
    cfg = run.cfg
    run.need("train-tagger", "tagdata", "vocab.json")
    d = run.fresh("train-tagger")
    model, inputs = _train_model(run, "train-tagger", "tagger", cfg.tagger_mode, cfg.seed, False)
    summary = {"mode": cfg.tagger_mode, "loss": model.history}
    write_json(summary, d / "history.json")
    run.manifest("train-tagger", inputs, {"init": cfg.seed, "batches": cfg.seed})
    return {"mode": cfg.tagger_mode, "final_loss": model.history[-1]}


def stage_train_generator(run: Run) -> dict:
    cfg = run.cfg
    run.need("train-generator", "tagdata", "vocab.json")
    d = run.fresh("train-generator")
    model, inputs = _train_model(run, "train-generator", "generator", "generator", cfg.seed + 1,
                                 cfg.generator_noise)
    write_json({"loss": model.history}, d / "history.json")
    run.manifest("train-generator", inputs, {"init": cfg.seed + 1, "batches": cfg.seed,
                                             "noise": cfg.seed})
    return {"final_loss": model.history[-1]}


def _transfer_sources(run: Run, stage: str) -> tuple[list[list[str]], Path]:
    if run.cfg.transfer_input:
        path = Path(run.cfg.transfer_input)
        lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
        return [tokenize(ln) for ln in lines], path
    path = _corpus_path(run, stage, "source", "test")
    return [list(s.tokens) for s in read_corpus_jsonl(path, run.cfg.source_style).sentences], path


def stage_transfer(run: Run) -> dict:
    cfg = run.cfg
    vocab_path = run.need("transfer", "tagdata", "vocab.json")
    tagger_path = run.need("transfer", "train-tagger", "model.ckpt")
    gen_path = run.need("transfer", "train-generator", "model.ckpt")
    sources, src_path = _transfer_sources(run, "transfer")
    vocab = BpeVocab.load(vocab_path)
    tagger = load_checkpoint(tagger_path, vocab)
    generator = load_checkpoint(gen_path, vocab)
    d = run.fresh("transfer")
    results = [transfer(tagger, generator, s, vocab, cfg.beam, cfg.alpha) for s in sources]
    write_transfers_jsonl(results, d / "transfers.jsonl")
    n_warn = sum(bool(r.warnings) for r in results)
    run.manifest("transfer", [vocab_path, tagger_path, gen_path, src_path], {},
                 {"truncation_warnings": n_warn})
    return {"n": len(results), "truncation_warnings": n_warn}


def _references(cfg: RunConfig):
    if not cfg.references:
        return None
    lines = [ln for ln in Path(cfg.references).read_text(encoding="utf-8").splitlines() if ln.strip()]
    # several references per sentence may be separated by tabs
    return [[tokenize(r) for r in ln.split("\t")] for ln in lines]


def stage_evaluate(run: Run) -> dict:
    cfg = run.cfg
    tr_path = run.need("evaluate", "transfer", "transfers.jsonl")
    clf_path = run.need("evaluate", "classify", "classifier.json")
    records = read_transfers_jsonl(tr_path)
    clf = NgramClassifier.load(clf_path)
    refs = _references(cfg)
    d = run.fresh("evaluate")
    sources = [r["text"].split() for r in records]
    report = evaluate(sources, [r["output"].split() for r in records], clf, 1, refs,
                      [r["tagged"].split() for r in records])
    report.metadata.update({"direction": f"{cfg.source_style}->{cfg.target_style}",
                            "tagger_mode": cfg.tagger_mode, "preset": cfg.preset})
    naive = evaluate(sources, [naive_baseline(s, 1) for s in sources], clf, 1, refs)
    naive.metadata.update({"system": "naive suffix baseline"})
    copy = evaluate(sources, sources, clf, 1, refs)
    copy.metadata.update({"system": "copy input"})
    report.save(d / "report.json")
    naive.save(d / "naive_report.json")
    table = format_table({"copy": copy, "naive": naive, cfg.tagger_mode: report})
    (d / "report.txt").write_text(table + "\n", encoding="utf-8")
    inputs = [tr_path, clf_path] + ([Path(cfg.references)] if cfg.references else [])
    run.manifest("evaluate", inputs, {})
    return {"report": report.to_dict(), "table": table}


def stage_ablate(run: Run) -> dict:
    cfg = run.cfg
    vocab_path = run.need("ablate", "tagdata", "vocab.json")
    gen_path = run.need("ablate", "train-generator", "model.ckpt")
    clf_path = run.need("ablate", "classify", "classifier.json")
    for mode in TAGGER_MODES:
        run.need("ablate", "tagdata", f"pairs_{mode}.tsv")
    sources, src_path = _transfer_sources(run, "ablate")
    vocab = BpeVocab.load(vocab_path)
    generator = load_checkpoint(gen_path, vocab)
    clf = NgramClassifier.load(clf_path)
    d = run.fresh("ablate")
    taggers, inputs = {}, [vocab_path, gen_path, clf_path, src_path]
    for mode in TAGGER_MODES:
        out = d / f"tagger_{mode}"
        model, used = _train_model(run, "ablate", "tagger", mode, cfg.seed, False, out)
        taggers[mode] = model
        inputs += used[1:]
    result = ablation_harness(taggers, generator, vocab, sources, clf, 1, _references(cfg), cfg.beam)
    write_json(result.to_dict(), d / "ablation.json")
    table = format_table(result.reports)
    (d / "table.txt").write_text(table + "\n", encoding="utf-8")
    for mode, results in result.transfers.items():
        write_transfers_jsonl(results, d / f"transfers_{mode}.jsonl")
    run.manifest("ablate", inputs, {"init": cfg.seed, "batches": cfg.seed})
    return {"table": table, **result.to_dict()}


STAGE_FUNCS: dict[str, Callable[[Run], dict]] = {
    "preprocess": stage_preprocess,
    "classify": stage_classify,
    "markers": stage_markers,
    "tagdata": stage_tagdata,
    "train-tagger": stage_train_tagger,
    "train-generator": stage_train_generator,
    "transfer": stage_transfer,
    "evaluate": stage_evaluate,
    "ablate": stage_ablate,
}


def run_pipeline(cfg: RunConfig, stage: str) -> dict:
    """Run one stage, or every stage in dependency order for ``stage='all'``."""
    if stage != "all" and stage not in STAGE_FUNCS:
        raise ValueError(f"unknown stage {stage!r}")
    order = [s for s in STAGES if s != "ablate" or cfg.ablate] if stage == "all" else [stage]
    run = Run(cfg)
    results = {}
    with work_dir_lock(run.root):
        for s in order:
            log.info("stage %s", s)
            results[s] = STAGE_FUNCS[s](run)
    return results


def load_report(work_dir) -> MetricReport:
    d = json.loads((Path(work_dir) / "evaluate" / "report.json").read_text(encoding="utf-8"))
    return MetricReport(**d)
