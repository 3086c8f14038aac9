"""Command-line interface: ``train``, ``eval``, ``gradcheck``, ``inspect``, ``stats``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
Log lines on stdout use a ``key=value`` grammar.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import model as M
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import BASELINES, RunConfig, build_config, read_config_file
from .data import Dataset, class_stats, load_fnc1, make_synthetic, make_synthetic_splits, synthetic_embeddings
from .embeddings import load_pretrained, tokenize
from .estimator import ESTIMATORS
from .exceptions import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    EmptyDatasetError,
    EmptyEmbeddingError,
    NumericalError,
)
from .metrics import evaluate
from .model import LABELS, ModelShape, PairBatch, VsamParameters
from .variational import draw_noise

logger = logging.getLogger("vsam")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

GRADCHECK_DEFAULTS = {"n_max_headline": 8, "n_max_body": 8, "embedding_dim": 8, "hidden": 8, "proj": 8,
                      "latent_dim": 4}
GRADCHECK_LIMITS = {"n_max_headline": 8, "n_max_body": 8, "latent_dim": 4, "hidden": 8}
GRADCHECK_TOL = 1e-4
GRADCHECK_STEP = 1e-5

# synthetic-data keys an evaluation inherits from the training run echo
_INHERITED = ("synthetic", "synthetic_train", "synthetic_test", "vocab_size", "seed", "embedding_dim")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--embeddings", help="plain-text embedding file")
    common.add_argument("--stances", help="FNC-1 stances csv")
    common.add_argument("--bodies", help="FNC-1 bodies csv")
    common.add_argument("--test-stances", dest="test_stances")
    common.add_argument("--test-bodies", dest="test_bodies")
    common.add_argument("--checkpoint")
    common.add_argument("--synthetic", action="store_true", default=None)
    common.add_argument("--split", choices=("train", "test"))
    common.add_argument("--baseline", choices=BASELINES)
    common.add_argument("--predict-mode", dest="predict_mode", choices=("mean", "sample"))
    common.add_argument("--samples", type=int, help="samples L at evaluation")
    common.add_argument("--out")
    common.add_argument("--epochs", type=int)
    common.add_argument("--learning-rate", dest="learning_rate", type=float)
    common.add_argument("--batch-size", dest="batch_size", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="vsam", description="Variational self-attention stance detection")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("train", parents=[common], help="train a model and write checkpoints")
    sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every parameter")
    p = sub.add_parser("inspect", parents=[common], help="show attention and prediction for one pair")
    p.add_argument("--headline")
    p.add_argument("--body")
    sub.add_parser("stats", parents=[common], help="per-class dataset statistics")
    return parser


_NON_CONFIG = {"command", "config", "verbose"}


def resolve_config(args: argparse.Namespace, inherited: Optional[dict] = None) -> RunConfig:
    flags = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG and v is not None}
    layers = []
    if args.command == "gradcheck":
        layers.append(GRADCHECK_DEFAULTS)
    file_layer = read_config_file(args.config) if args.config else {}
    if inherited:
        explicit = set(file_layer) | set(flags)
        data_given = any(k in explicit for k in ("stances", "bodies"))
        if not data_given:
            layers.append({k: inherited[k] for k in _INHERITED if k in inherited and k not in explicit})
    layers += [file_layer, flags]
    return build_config(layers)


def _check_paths(cfg: RunConfig, *keys: str) -> None:
    for key in keys:
        value = getattr(cfg, key)
        if value is not None and not Path(value).exists():
            raise ConfigError(f"{key} path does not exist: {value}")


def _emit(line: str, sink=None) -> None:
    print(line, flush=True)
    if sink is not None:
        sink.write(line + "\n")


def _fmt(x: float) -> str:
    return f"{x:.6f}"


# -- data ------------------------------------------------------------------


def _synthetic(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    return make_synthetic_splits(cfg.synthetic_train, cfg.synthetic_test, cfg.vocab_size, cfg.seed)


def _dataset(cfg: RunConfig, default_split: str) -> Dataset:
    split = cfg.split or default_split
    if cfg.synthetic:
        train, test = _synthetic(cfg)
        return train if split == "train" else test
    if cfg.stances is None or cfg.bodies is None:
        raise ConfigError("need --synthetic or both --stances and --bodies")
    return load_fnc1(cfg.stances, cfg.bodies, split)


def _embeddings(cfg: RunConfig):
    if cfg.embeddings is not None:
        return load_pretrained(cfg.embeddings, cfg.embedding_dim)
    if cfg.synthetic:
        return synthetic_embeddings(cfg.vocab_size, cfg.embedding_dim, cfg.seed)
    logger.warning("no --embeddings given: using random vectors over the training vocabulary")
    return None


def _estimator(cfg: RunConfig, embeddings):
    cls = ESTIMATORS[cfg.baseline]
    kw = dict(embeddings=embeddings, embedding_dim=cfg.embedding_dim, n_max_headline=cfg.n_max_headline,
              n_max_body=cfg.n_max_body, learning_rate=cfg.learning_rate, epochs=cfg.epochs,
              batch_size=cfg.batch_size, class_weight=cfg.class_weight,
              fine_tune_embeddings=cfg.fine_tune_embeddings, random_state=cfg.seed)
    if cfg.baseline != "mean":
        kw.update(hidden=cfg.hidden, proj=cfg.proj, latent_dim=cfg.latent_dim)
    if cfg.baseline == "vsam":
        kw.update(n_samples=cfg.n_samples, kl_warmup=cfg.kl_warmup, predict_mode=cfg.predict_mode,
                  predict_samples=cfg.samples)
    return cls(**kw)


# -- commands --------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> int:
    if cfg.checkpoint is None:
        raise ConfigError("train needs --checkpoint")
    _check_paths(cfg, "embeddings", "stances", "bodies")
    data = _dataset(cfg, "train")
    est = _estimator(cfg, _embeddings(cfg))
    ckpt = Path(cfg.checkpoint)
    ckpt.with_name(ckpt.name + ".config").write_text(cfg.to_text(), encoding="utf-8")
    run_config = cfg.to_dict()
    sink = open(cfg.out, "w", encoding="utf-8") if cfg.out else None
    try:
        def on_epoch(estimator, rec):
            keys = [k for k in ("elbo", "reconstruction", "kl", "kl_weight", "loss") if k in rec]
            parts = [f"epoch={rec['epoch']}"] + [f"{k}={_fmt(rec[k])}" for k in keys]
            parts.append(f"train_micro_f1={_fmt(rec['train_accuracy'])}")
            _emit(" ".join(parts), sink)
            save_checkpoint(ckpt, estimator, run_config)

        est.fit(data, data.labels, epoch_callback=on_epoch)
        _emit(f"done model={cfg.baseline} epochs={cfg.epochs} examples={len(data)} checkpoint={ckpt}", sink)
    finally:
        if sink is not None:
            sink.close()
    return EXIT_OK


def _load(cfg_args: argparse.Namespace) -> tuple[RunConfig, object]:
    pre = resolve_config(cfg_args)
    if pre.checkpoint is None:
        raise ConfigError(f"{cfg_args.command} needs --checkpoint")
    _check_paths(pre, "checkpoint")
    est = load_checkpoint(pre.checkpoint)
    cfg = resolve_config(cfg_args, est.run_config_)
    if cfg.baseline != est.params_.kind and cfg_args.baseline is not None:
        raise ConfigError(f"checkpoint holds a {est.params_.kind!r} model, not {cfg.baseline!r}")
    if est.params_.kind == "vsam":
        est.set_params(predict_mode=cfg.predict_mode, predict_samples=cfg.samples)
    est.set_params(random_state=cfg.seed)
    return cfg, est


def cmd_eval(args: argparse.Namespace) -> int:
    cfg, est = _load(args)
    _check_paths(cfg, "stances", "bodies")
    data = _dataset(cfg, "test")
    report = evaluate(est.predict(data), [ex.stance for ex in data])
    for line in report.to_text().splitlines():
        print(line)
    if cfg.out:
        txt, js = report.save(cfg.out)
        print(f"report_text={txt} report_json={js}")
    return EXIT_OK


def gradcheck_problem(cfg: RunConfig):
    """Tiny fixed problem: parameters, batch and a zero-argument loss with frozen noise."""
    rng = np.random.default_rng(cfg.seed)
    vocab_size = 16
    data = make_synthetic(4, vocab_size, cfg.seed, headline_length=(4, 6), body_length=(5, 8),
                          distractors=(1, 1))
    vocab, emb = synthetic_embeddings(vocab_size, cfg.embedding_dim, cfg.seed)
    width = max(cfg.n_max_headline, cfg.n_max_body)
    est = ESTIMATORS[cfg.baseline](embeddings=(vocab, emb), n_max_headline=cfg.n_max_headline,
                                   n_max_body=cfg.n_max_body)
    est.vocabulary_ = vocab
    batch = est._encode(data.pairs(), data.labels)
    shape = ModelShape(cfg.embedding_dim, cfg.hidden, cfg.proj, cfg.latent_dim, width, len(LABELS))
    params = VsamParameters.initialize(shape, rng, cfg.baseline)
    for t in params.values():
        # move off the symmetric zero initialisation so every path carries gradient
        t.data = t.data + rng.normal(0.0, 0.3, size=t.shape)
    embedding = T.Tensor(emb.weight, requires_grad=cfg.fine_tune_embeddings, name="embedding.weight")
    noise = [(draw_noise((len(batch), cfg.latent_dim), rng), draw_noise((len(batch), cfg.latent_dim), rng))
             for _ in range(cfg.n_samples)]

    def loss() -> T.Tensor:
        b = batch.embedded(embedding)
        if cfg.baseline == "vsam":
            objective, _ = M.elbo(params, b, cfg.n_samples, noise=noise, kl_weight=1.0)
            return -objective
        return M.cross_entropy(params, b)

    targets = dict(params.items())
    if cfg.fine_tune_embeddings:
        targets["embedding.weight"] = embedding
    return targets, loss


def cmd_gradcheck(cfg: RunConfig) -> int:
    too_big = {k: getattr(cfg, k) for k, lim in GRADCHECK_LIMITS.items() if getattr(cfg, k) > lim}
    if too_big:
        raise ConfigError(f"gradcheck is limited to n_max <= 8, latent_dim <= 4, hidden <= 8 "
                          f"(finite differences are slow); got {too_big}")
    targets, loss = gradcheck_problem(cfg)
    with T.Tape() as tape:
        value = loss()
    T.backward(tape, value)
    failed = 0
    for name, t in targets.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = T.numerical_gradient(lambda: loss().item(), t, h=GRADCHECK_STEP)
        err = T.relative_error(analytic, numeric)
        ok = err < GRADCHECK_TOL
        failed += not ok
        print(f"param={name} size={t.size} max_rel_err={err:.3e} status={'pass' if ok else 'FAIL'}")
    print(f"gradcheck tensors={len(targets)} failed={failed} tolerance={GRADCHECK_TOL:g}")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def cmd_inspect(args: argparse.Namespace) -> int:
    cfg, est = _load(args)
    head = tokenize(cfg.headline or "")
    body = tokenize(cfg.body or "")
    if not head or not body:
        raise DegenerateInputError("inspect needs a non-empty --headline and --body")
    det = est.predict_details([(head, body)])
    probs = det.probabilities[0]
    for side, toks, att, n_max in (("headline", head, det.attention_head, est.n_max_headline),
                                   ("body", body, det.attention_body, est.n_max_body)):
        print(f"[{side}]")
        shown = toks[:n_max]
        if att.shape[1]:
            weights = att[0, :len(shown)]
            for tok, w in zip(shown, weights):
                print(f"{tok}\t{w:.6f}")
            print(f"{side}_attention_sum={weights.sum():.6f}")
        else:
            for tok in shown:
                print(f"{tok}\t{1.0 / len(shown):.6f}")
    print(f"prediction={LABELS[int(det.classes[0])]}")
    for name, p in zip(LABELS, probs):
        print(f"prob.{name}={p:.6f}")
    print(f"prob_sum={probs.sum():.6f}")
    return EXIT_OK


def _stats_rows(datasets: list[Dataset]) -> str:
    stats = [class_stats(d) for d in datasets]
    header = ["stance"]
    for d in datasets:
        header += [f"{d.split}_count", f"{d.split}_pct"]
    rows = [header]
    for name in LABELS:
        row = [name]
        for s in stats:
            row += [f"{s.counts[name]:,}", f"{s.percentages[name]:.2f}"]
        rows.append(row)
    total = ["total"]
    for s in stats:
        total += [f"{s.total:,}", ""]
    rows.append(total)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for r in rows:
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def cmd_stats(cfg: RunConfig) -> int:
    _check_paths(cfg, "stances", "bodies", "test_stances", "test_bodies")
    if cfg.synthetic:
        train, test = _synthetic(cfg)
        datasets = [train] + ([test] if len(test) else [])
    else:
        if cfg.stances is None or cfg.bodies is None:
            raise ConfigError("stats needs --synthetic or --stances and --bodies")
        datasets = [load_fnc1(cfg.stances, cfg.bodies, "train")]
        if cfg.test_stances and cfg.test_bodies:
            datasets.append(load_fnc1(cfg.test_stances, cfg.test_bodies, "test"))
    table = _stats_rows(datasets)
    sys.stdout.write(table)
    if cfg.out:
        Path(cfg.out).write_text(table, encoding="utf-8")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("eval", "inspect"):
            return cmd_eval(args) if args.command == "eval" else cmd_inspect(args)
        cfg = resolve_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg)
        return cmd_stats(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EmptyDatasetError, EmptyEmbeddingError, DegenerateInputError, ContractError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
