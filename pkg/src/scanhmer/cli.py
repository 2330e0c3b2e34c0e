"""Command-line entry point: preprocess, train, decode, eval, viz, synth, selftest."""

from __future__ import annotations

import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import argparse
import json
import logging
import sys
from pathlib import Path

from . import cache
from .config import ConfigError, RunConfig, format_config, load_config
from .corpus import VOCAB_FILE, CorpusError, Expression, Vocabulary, corpus_files, load_corpus, load_expression
from .diffcore.checkpoint import CheckpointError
from .inference import alpha_records, beam_search, format_line, parse_line
from .metrics import report, write_report
from .model import Sample, ScanModel, featurize, featurize_for
from .trainer import NumericError, TrainConfig, load_weights, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_SELFTEST = 0, 1, 2, 3, 4

log = logging.getLogger("scanhmer")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- helpers ----------------------------------------------------------------

def _resolve(path: str, base: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def load_samples(directory: Path, model: ScanModel, vocab: Vocabulary, cfg: RunConfig) -> list[Sample]:
    """Samples from ``.feat`` caches if present, otherwise from raw expressions."""
    feats = sorted(directory.glob("*" + cache.SUFFIX))
    want = (model.cfg.online.factor, model.cfg.offline.factor)
    if feats:
        out = []
        for p in feats:
            s, factors = cache.load(p)
            if tuple(factors) != want:
                raise CorpusError(f"{p}: cached with factors {factors}, model needs {want}")
            out.append(s)
        return out
    return [featurize_for(model, e, vocab, cfg.raster) for e in load_corpus(directory)]


def _find_vocab(cfg: RunConfig, base: Path, data_dir: Path) -> Vocabulary:
    """The explicit vocabulary file: ``vocab=`` from the config, else DIR/vocab.txt."""
    if cfg.vocab:
        return Vocabulary.load(_resolve(cfg.vocab, base))
    if (data_dir / VOCAB_FILE).exists():
        return Vocabulary.load(data_dir / VOCAB_FILE)
    raise UsageError(f"no vocabulary: set vocab= in the config or provide {data_dir / VOCAB_FILE}")


def save_bundle(ckpt: Path, cfg: RunConfig, vocab: Vocabulary) -> None:
    Path(str(ckpt) + ".cfg").write_text(format_config(cfg), encoding="utf-8")
    vocab.save(str(ckpt) + ".vocab")


def load_bundle(ckpt: Path) -> tuple[ScanModel, Vocabulary, RunConfig]:
    cfg_path, vocab_path = Path(str(ckpt) + ".cfg"), Path(str(ckpt) + ".vocab")
    for p in (ckpt, cfg_path, vocab_path):
        if not p.exists():
            raise CorpusError(f"missing checkpoint file {p}")
    cfg = load_config(cfg_path)
    vocab = Vocabulary.load(vocab_path)
    model = ScanModel(cfg.model, len(vocab), cfg.mode, cfg.seed)
    load_weights(model, ckpt)
    return model, vocab, cfg


# -- subcommands ------------------------------------------------------------

def cmd_preprocess(args) -> int:
    cfg = load_config(args.config)
    base = Path(args.config).parent
    src, out = Path(args.inp), Path(args.out)
    exprs = load_corpus(src)
    vocab = _find_vocab(cfg, base, src)
    # featurization depends only on the downsampling factors, not on weights
    factors = (cfg.model.online.factor, cfg.model.offline.factor)
    out.mkdir(parents=True, exist_ok=True)
    for e in exprs:
        s = featurize(e, vocab, cfg.raster, *factors)
        cache.save(out / f"{e.name}{cache.SUFFIX}", s, factors)
    vocab.save(out / VOCAB_FILE)
    print(f"cached {len(exprs)} expressions in {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.epochs is not None:
        cfg.epochs = args.epochs
    base = Path(args.config).parent
    if not cfg.data:
        raise UsageError("config needs data=DIR")
    data = _resolve(cfg.data, base)
    vocab = _find_vocab(cfg, base, data)
    model = ScanModel(cfg.model, len(vocab), cfg.mode, cfg.seed)
    samples = load_samples(data, model, vocab, cfg)
    if not samples:
        raise CorpusError(f"no expressions in {data}")
    ckpt = Path(args.out)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_bundle(ckpt, cfg, vocab)
    tcfg = TrainConfig(cfg.lam, cfg.weight_decay, cfg.rho, cfg.eps, cfg.lr, cfg.clip, cfg.epochs, cfg.seed)
    metrics = Path(args.metrics) if args.metrics else Path(str(ckpt) + ".metrics.csv")
    hist = train(model, samples, tcfg, vocab.sos, vocab.eos, ckpt, metrics)
    last = hist[-1]
    print(f"trained {cfg.mode} for {last.epoch} epochs: objective {last.objective:.4f} token_acc {last.token_acc:.3f}")
    return EXIT_OK


def _inputs(path: Path) -> list[Path]:
    if path.is_dir():
        feats = sorted(path.glob("*" + cache.SUFFIX))
        return feats or corpus_files(path)
    return [path]


def _sample_for(path: Path, model: ScanModel, vocab: Vocabulary, cfg: RunConfig) -> Sample:
    if path.suffix == cache.SUFFIX:
        return cache.load(path)[0]
    e = load_expression(path)
    # labels may be absent or use tokens the model never saw; decoding needs neither
    bare = Expression(e.xy, e.stroke_ids, (), None, e.name)
    return featurize_for(model, bare, vocab, cfg.raster)


def _check_mode(args, cfg: RunConfig) -> None:
    if getattr(args, "mode", None) and args.mode != cfg.mode:
        raise UsageError(f"checkpoint was trained in mode {cfg.mode!r}, not {args.mode!r}")


def cmd_decode(args) -> int:
    model, vocab, cfg = load_bundle(Path(args.ckpt))
    _check_mode(args, cfg)
    beam = args.beam if args.beam is not None else cfg.beam
    max_len = args.max_len if args.max_len is not None else cfg.max_len
    lines, recs = [], []
    for path in _inputs(Path(args.inp)):
        s = _sample_for(path, model, vocab, cfg)
        best = beam_search(model, s, beam, max_len, vocab.sos, vocab.eos)[0]
        lines.append(format_line(s.name, vocab.decode(best.output), best.score))
        if args.records:
            recs += [dict(r, id=s.name) for r in alpha_records(best, vocab, model.mode)]
    Path(args.out).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")
    if args.records:
        with open(args.records, "w", encoding="utf-8") as fh:
            for r in recs:
                fh.write(json.dumps(r) + "\n")
    print(f"decoded {len(lines)} expressions to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    preds = {}
    for ln in Path(args.pred).read_text(encoding="utf-8").splitlines():
        if ln.strip():
            try:
                name, toks, _ = parse_line(ln)
            except ValueError:
                raise CorpusError(f"malformed prediction line: {ln!r}") from None
            preds[name] = toks
    refs = {}
    for path in _inputs(Path(args.ref)):
        e = cache.load(path)[0].expression if path.suffix == cache.SUFFIX else load_expression(path)
        refs[e.name] = list(e.tokens)
    missing = sorted(set(refs) - set(preds))
    if missing:
        raise CorpusError(f"no prediction for {len(missing)} reference(s), e.g. {missing[0]!r}")
    structural = Vocabulary.load(args.vocab).structural if args.vocab else None
    names = sorted(refs)
    kw = {} if structural is None else {"structural": structural}
    rep = report([preds[n] for n in names], [refs[n] for n in names], **kw)
    write_report(args.out, rep)
    print(json.dumps(rep, sort_keys=True))
    return EXIT_OK


def cmd_viz(args) -> int:
    from .viz import write_svgs

    model, vocab, cfg = load_bundle(Path(args.ckpt))
    path = Path(args.inp)
    s = _sample_for(path, model, vocab, cfg)
    beam = args.beam if args.beam is not None else cfg.beam
    best = beam_search(model, s, beam, cfg.max_len, vocab.sos, vocab.eos)[0]
    records = alpha_records(best, vocab, model.mode)
    out = Path(args.out)
    paths = write_svgs(s.expression, records, out, s.masks)
    with open(out / "alpha.jsonl", "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
    print(f"{' '.join(vocab.decode(best.output))}\n{len(paths)} SVGs in {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import NESTED_LABEL, render_expression, synthetic_corpus, synthetic_vocab, write_corpus

    import numpy as np

    exprs = synthetic_corpus(args.n, seed=args.seed)
    if args.nested:
        exprs.append(render_expression(NESTED_LABEL, np.random.default_rng(args.seed), name="nested"))
    out = write_corpus(args.out, exprs)
    synthetic_vocab().save(out / VOCAB_FILE)
    print(f"wrote {len(exprs)} synthetic expressions and vocab.txt to {out}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_all

    results = run_all(quick=args.quick)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_SELFTEST


def build_parser() -> Parser:
    p = Parser(prog="scanhmer", description="Stroke-level handwritten math expression recognition.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=Parser)
    sub.required = True

    q = sub.add_parser("preprocess", help="parse and featurize a corpus into a SCANFEAT1 cache")
    q.add_argument("--in", dest="inp", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--config", required=True)
    q.set_defaults(func=cmd_preprocess)

    q = sub.add_parser("train", help="train a model")
    q.add_argument("--config", required=True)
    q.add_argument("--out", required=True, help="checkpoint path")
    q.add_argument("--seed", type=int)
    q.add_argument("--epochs", type=int)
    q.add_argument("--metrics", help="CSV log (default CKPT.metrics.csv)")
    q.set_defaults(func=cmd_train)

    q = sub.add_parser("decode", help="beam-search decode a directory of expressions")
    q.add_argument("--ckpt", required=True)
    q.add_argument("--in", dest="inp", required=True)
    q.add_argument("--mode")
    q.add_argument("--beam", type=int)
    q.add_argument("--max-len", type=int)
    q.add_argument("--out", required=True)
    q.add_argument("--records", help="write alpha-records as JSON lines")
    q.set_defaults(func=cmd_decode)

    q = sub.add_parser("eval", help="score predictions against references")
    q.add_argument("--pred", required=True)
    q.add_argument("--ref", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--vocab", help="vocabulary file whose structural set drives StruRate")
    q.set_defaults(func=cmd_eval)

    q = sub.add_parser("viz", help="one attention SVG per decoded token")
    q.add_argument("--ckpt", required=True)
    q.add_argument("--in", dest="inp", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--beam", type=int)
    q.set_defaults(func=cmd_viz)

    q = sub.add_parser("synth", help="write a synthetic aligned corpus")
    q.add_argument("--out", required=True)
    q.add_argument("--n", type=int, default=10)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--nested", action="store_true", help=r"also add \frac { 9 } { 9 + \sqrt { 9 } }")
    q.set_defaults(func=cmd_synth)

    q = sub.add_parser("selftest", help="gradient, oracle and search checks")
    q.add_argument("--quick", action="store_true")
    q.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        for flag in ("beam", "max_len"):
            if getattr(args, flag, None) is not None and getattr(args, flag) < 1:
                raise UsageError(f"--{flag.replace('_', '-')} must be >= 1")
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusError, CheckpointError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
