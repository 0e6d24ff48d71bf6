"""Command-line front end.

Subcommands: train, eval, extract-cooc, export, make-planted, oracle-check.
``train`` reads a flat TOML config; every key can also be given as a flag
(``batch_size`` <-> ``--batch-size``) and flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .data import (
    DataFormatError,
    CheckpointError,
    Vocabulary,
    build_vocabulary,
    export_embeddings,
    extract_cooccurrences,
    load_checkpoint,
    load_triples,
    save_checkpoint,
    strip_sense_ids,
    tokenize,
    write_triples,
)
from .evaluation import NoValidCorruption, corrupt_batch, evaluate, known_set, make_planted_instance, oracle_check
from .model import ConfigurationError, EnergyKind, init_params
from .trainer import NonFiniteParameterError, TrainConfig, Trainer, TripleBatch

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

logger = logging.getLogger("relboltz")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NONFINITE = 0, 1, 2, 3
THREADS_ENV = "RELBOLTZ_THREADS"


class ConfigError(Exception):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


@dataclass
class RunConfig(TrainConfig):
    train_files: list[str] = field(default_factory=list)
    train_weights: list[float] = field(default_factory=list)
    corpus_files: list[str] = field(default_factory=list)
    corpus_weight: float = 1.0
    window: int = 5
    cooc_relation: str = "appears_in_sentence_with"
    min_count: int = 1
    strip_senses: bool = False
    valid_file: str = ""
    test_file: str = ""
    corrupt_seed: int = 0
    out_dir: str = "runs/default"
    threads: int = 1

    def validate(self):
        super().validate()
        if self.train_weights and len(self.train_weights) != len(self.train_files):
            raise ConfigurationError("train_weights must match train_files in length")
        if any(w <= 0 for w in self.train_weights) or self.corpus_weight <= 0:
            raise ConfigurationError("source weights must be positive")
        if self.window < 1 or self.min_count < 1 or self.threads < 1:
            raise ConfigurationError("window, min_count and threads must be positive")

    def train_keys(self) -> dict:
        return {k: getattr(self, k) for k in TrainConfig.keys()}


def _field_types() -> dict[str, str]:
    return {f.name: (f.type if isinstance(f.type, str) else f.type.__name__) for f in fields(RunConfig)}


def _coerce(key: str, value, typ: str):
    try:
        if typ.startswith("list[float]"):
            if not isinstance(value, list):
                raise TypeError
            return [float(v) for v in value]
        if typ.startswith("list"):
            if not isinstance(value, list):
                raise TypeError
            return [str(v) for v in value]
        if typ == "bool":
            if isinstance(value, bool):
                return value
            if str(value).lower() in ("1", "true", "yes"):
                return True
            if str(value).lower() in ("0", "false", "no"):
                return False
            raise ValueError
        if typ == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if typ == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected {typ}, got {value!r}") from None


def resolve_config(config_path: str | None, overrides: dict) -> RunConfig:
    """Config file values, then flag overrides; unknown keys are rejected."""
    types = _field_types()
    values: dict = {}
    if config_path:
        try:
            with open(config_path, "rb") as fh:
                raw = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError("config", str(exc)) from None
        for k, v in raw.items():
            if k not in types:
                raise ConfigError(k, "unknown key")
            if isinstance(v, dict):
                raise ConfigError(k, "config must be flat (no tables)")
            values[k] = _coerce(k, v, types[k])
    for k, v in overrides.items():
        if v is not None:
            values[k] = _coerce(k, v, types[k])
    if "threads" not in values and os.environ.get(THREADS_ENV):
        values["threads"] = _coerce("threads", os.environ[THREADS_ENV], "int")
    try:
        return RunConfig(**values)
    except ConfigurationError as exc:
        msg = str(exc)
        key = next((k for k in types if msg.startswith(k)), "config")
        raise ConfigError(key, msg) from None


def _add_config_flags(p: argparse.ArgumentParser):
    for name, typ in _field_types().items():
        flag = "--" + name.replace("_", "-")
        if typ.startswith("list"):
            p.add_argument(flag, dest=name, nargs="+", default=None)
        else:
            p.add_argument(flag, dest=name, default=None)


def manifest(config: RunConfig | dict, argv: list[str], command: str) -> dict:
    import scipy

    cfg = asdict(config) if not isinstance(config, dict) else config
    return {
        "command": command,
        "argv": argv,
        "config": cfg,
        "seed": cfg.get("seed"),
        "threads": cfg.get("threads", 1),
        "versions": {"relboltz": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "kernel_backend": BACKEND},
    }


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_corpus(paths, vocab=None):
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                yield tokenize(line, vocab)


def _sense_stripped_copy(path: Path, out: Path):
    with open(path, encoding="utf-8") as src, open(out, "w", encoding="utf-8") as dst:
        for line in src:
            if line.startswith("#") or not line.strip():
                dst.write(line)
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) >= 3:
                parts[0], parts[2] = strip_sense_ids(parts[0]), strip_sense_ids(parts[2])
            dst.write("\t".join(parts) + "\n")


def cmd_train(args, argv) -> int:
    overrides = {k: getattr(args, k) for k in _field_types()}
    cfg = resolve_config(args.config, overrides)
    out = Path(cfg.out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    _write_json(out / "manifest.json", manifest(cfg, argv, "train"))

    files = [Path(f) for f in cfg.train_files]
    eval_files = [Path(f) for f in (cfg.valid_file, cfg.test_file) if f]
    if cfg.strip_senses:
        stripped = []
        for f in files + eval_files:
            dst = out / f"stripped_{f.name}"
            _sense_stripped_copy(f, dst)
            stripped.append(dst)
        files, eval_files = stripped[:len(files)], stripped[len(files):]
    if not files and not cfg.corpus_files:
        raise ConfigError("train_files", "no training data given")
    extra_rel = [cfg.cooc_relation] if cfg.corpus_files else []
    streams = [(tok for sent in _read_corpus(cfg.corpus_files) for tok in sent)] if cfg.corpus_files else []
    vocab = build_vocabulary(files + eval_files, streams, cfg.min_count, extra_rel)
    vocab.save(out / "vocab.json")

    weights = cfg.train_weights or [1.0] * len(files)
    parts = [load_triples(f, vocab, w) for f, w in zip(files, weights)]
    if cfg.corpus_files:
        rel = vocab.relation(cfg.cooc_relation)
        cooc = list(extract_cooccurrences(_read_corpus(cfg.corpus_files, vocab), cfg.window, vocab, rel))
        if cooc:
            parts.append(TripleBatch.from_triples(cooc).with_weight(cfg.corpus_weight))
    data = TripleBatch.concat([p for p in parts if len(p)])
    if len(data) == 0:
        raise ConfigError("train_files", "training data is empty")

    tc = TrainConfig(**cfg.train_keys())
    rng = np.random.default_rng(tc.seed)
    params = init_params(vocab.n_words, vocab.n_relations, tc.dim, rng, tc.operator_init_noise)
    trainer = Trainer(params, data, tc, rng=rng)
    meta = {"energy": tc.energy, "vocab": json.loads(vocab.to_json())}

    def checkpoint(tr: Trainer, rec=None):
        m = dict(meta, epoch=tr.epoch, trainer_rng=tr.rng.bit_generator.state)
        path = out / "checkpoints" / f"epoch_{tr.epoch:04d}.rblt"
        save_checkpoint(path, tr.params, tr.adam, tr.pool, m)
        save_checkpoint(out / "latest.rblt", tr.params, tr.adam, tr.pool, m)
        if rec is not None:
            with open(out / "train_log.jsonl", "a", encoding="utf-8") as fh:
                fh.write(rec.to_json() + "\n")
            print(rec.to_json(), flush=True)

    (out / "train_log.jsonl").write_text("", encoding="utf-8")
    checkpoint(trainer)
    trainer.fit(callback=checkpoint)

    if len(eval_files) == 2:
        report = _evaluate_files(trainer.params, tc.energy, vocab, eval_files[0], eval_files[1],
                                 files, cfg.corrupt_seed)
        _write_report(out, report)
    return EXIT_OK


def _evaluate_files(params, energy, vocab, valid_path, test_path, known_paths, seed):
    valid = load_triples(valid_path, vocab)
    test = load_triples(test_path, vocab)
    known = known_set(valid, test, *(load_triples(p, vocab) for p in known_paths))
    rng = np.random.default_rng(seed)
    vneg = corrupt_batch(valid, vocab.n_words, known, rng)
    tneg = corrupt_batch(test, vocab.n_words, known, rng)
    return evaluate(params, energy, valid, vneg, test, tneg, vocab.relations)


def _write_report(out: Path, report):
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_table() + "\n", encoding="utf-8")
    (out / "report.jsonl").write_text(report.to_jsonl(), encoding="utf-8")
    print(report.to_table())


def _checkpoint_vocab(ck, vocab_path):
    if vocab_path:
        return Vocabulary.load(vocab_path)
    if "vocab" in ck.meta:
        v = ck.meta["vocab"]
        return Vocabulary(v["words"], v["relations"])
    raise ConfigError("vocab", "checkpoint has no vocabulary; pass --vocab")


def cmd_eval(args, argv) -> int:
    ck = load_checkpoint(args.checkpoint)
    vocab = _checkpoint_vocab(ck, args.vocab)
    energy = args.energy or ck.meta.get("energy", "cosine")
    EnergyKind.parse(energy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "manifest.json", manifest(
        {"checkpoint": args.checkpoint, "valid": args.valid, "test": args.test, "known": args.known or [],
         "energy": energy, "seed": args.seed}, argv, "eval"))
    report = _evaluate_files(ck.params, energy, vocab, args.valid, args.test, args.known or [], args.seed)
    _write_report(out, report)
    return EXIT_OK


def cmd_extract_cooc(args, argv) -> int:
    if args.window < 1:
        raise ConfigError("window", "must be at least 1")
    if args.vocab:
        vocab = Vocabulary.load(args.vocab)
    elif args.triples:
        vocab = build_vocabulary(args.triples)
        if args.strip_senses:
            vocab = Vocabulary(sorted({strip_sense_ids(w) for w in vocab.words}), vocab.relations)
    else:
        toks = (tok for sent in _read_corpus([args.inp]) for tok in sent)
        vocab = build_vocabulary([], [toks], args.min_count, [args.relation])
    vocab = Vocabulary(vocab.words, [args.relation])
    n = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for x in extract_cooccurrences(_read_corpus([args.inp], vocab), args.window, vocab, 0):
            fh.write(f"{vocab.words[x.s]}\t{args.relation}\t{vocab.words[x.t]}\n")
            n += 1
    print(json.dumps({"triples": n, "out": args.out, "window": args.window}))
    return EXIT_OK


def cmd_export(args, argv) -> int:
    ck = load_checkpoint(args.checkpoint)
    vocab = _checkpoint_vocab(ck, args.vocab)
    export_embeddings(ck.params, vocab, args.which, args.out)
    return EXIT_OK


def cmd_make_planted(args, argv) -> int:
    inst = make_planted_instance(args.vocab, args.relations, args.dim, args.triples, args.seed, args.sharpness)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    width = len(str(args.vocab - 1))
    vocab = Vocabulary([f"w{i:0{width}d}" for i in range(args.vocab)], [f"r{i}" for i in range(args.relations)])
    for name in ("train", "valid", "test"):
        write_triples(out / f"{name}.tsv", getattr(inst, name).to_triples(), vocab)
    vocab.save(out / "vocab.json")
    save_checkpoint(out / "truth.rblt", inst.params, meta={"energy": "dot", "vocab": json.loads(vocab.to_json())})
    _write_json(out / "meta.json", inst.meta)
    print(json.dumps({k: len(getattr(inst, k)) for k in ("train", "valid", "test")}))
    return EXIT_OK


def cmd_oracle_check(args, argv) -> int:
    res = oracle_check(args.vocab, args.relations, args.dim, args.sweeps, args.chains, args.seed, args.energy)
    print(json.dumps(res))
    print(f"gradient cosine: {res['cosine']:.4f}")
    return EXIT_OK if res["cosine"] >= args.min_cosine else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="relboltz", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from triple files and/or a corpus")
    p.add_argument("--config", default=None, help="flat TOML file with run settings")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score true and corrupted triples against a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--valid", required=True, help="validation triples (true)")
    p.add_argument("--test", required=True, help="test triples (true)")
    p.add_argument("--known", nargs="+", help="extra files of true triples excluded from corruptions")
    p.add_argument("--vocab", default=None)
    p.add_argument("--energy", default=None)
    p.add_argument("--seed", type=int, default=0, help="corruption seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("extract-cooc", help="corpus (one sentence per line) -> co-occurrence triples")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--vocab", default=None, help="vocabulary JSON restricting the words")
    p.add_argument("--triples", nargs="+", help="triple files whose words restrict the vocabulary")
    p.add_argument("--strip-senses", action="store_true")
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--relation", default="appears_in_sentence_with")
    p.set_defaults(func=cmd_extract_cooc)

    p = sub.add_parser("export", help="write embeddings in text format")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--which", choices=("source", "target"), default="source")
    p.add_argument("--vocab", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("make-planted", help="synthetic dataset drawn from a known model")
    p.add_argument("--vocab", type=int, default=200)
    p.add_argument("--relations", type=int, default=4)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--triples", type=int, default=20000)
    p.add_argument("--sharpness", type=float, default=12.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_planted)

    p = sub.add_parser("oracle-check", help="compare chain-averaged and exact model gradients")
    p.add_argument("--vocab", type=int, default=15)
    p.add_argument("--relations", type=int, default=3)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--sweeps", type=int, default=10_000)
    p.add_argument("--chains", type=int, default=10)
    p.add_argument("--energy", default="cosine")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-cosine", type=float, default=0.95)
    p.set_defaults(func=cmd_oracle_check)
    return ap


def run_cli(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args, argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except (ConfigurationError, DataFormatError, CheckpointError, NoValidCorruption, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main():
    sys.exit(run_cli())
