"""Command-line entry point.

Subcommands: synth-data, build-vocab, train, evaluate, generate, grad-check.
Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import oracles
from .dataset import (ReviewExample, Vocabulary, build_vocab, load_dataset,
                      read_features_bin, save_dataset, synth_dataset, tokenize)
from .errors import (ConfigError, ContractError, DataError, NumericError, ShapeError)
from .inference import beam_search, predict_class, strip_end
from .metrics import EvalPair, MetricReport, overall_accuracy, report_table, score_corpus
from .model import ModelConfig, ReviewerModel, Variant, load_checkpoint, save_checkpoint
from .tensor import (Tensor, add, backward, channel_bias, concat, conv2d,
                     cross_entropy, dropout, embedding_lookup, flatten, matmul,
                     max_pool2, mean_stack, mul, relu, sigmoid, slice1d, softmax,
                     sum_all, tanh)
from .trainer import TrainConfig, train, tune_alpha_beta, write_metrics_csv


@dataclass
class EvalOutcome:
    report: MetricReport
    generations: list[tuple[str, list[str]]]
    predictions: list[tuple[str, int, float]]


def evaluate_examples(model: ReviewerModel, examples: list[ReviewExample],
                      vocab: Vocabulary | None, *, beam_size: int = 20,
                      max_len: int = 30) -> EvalOutcome:
    """Decode and classify a split, returning the metric report and raw outputs."""
    report = MetricReport()
    generations: list[tuple[str, list[str]]] = []
    predictions: list[tuple[str, int, float]] = []
    pairs: list[EvalPair] = []
    if model.variant.has_generator and vocab is None:
        raise DataError("evaluating a captioning variant needs vocab.txt in the data directory")
    for ex in examples:
        if model.variant.has_generator:
            top = beam_search(model, ex.inputs(), beam_size, max_len)[0]
            words = vocab.decode(strip_end(list(top.tokens)))
            generations.append((ex.example_id, words))
            pairs.append(EvalPair(words, [tokenize(c) for c in ex.comments]))
        if model.variant.has_classifier:
            label, prob = predict_class(model, ex.inputs())
            predictions.append((ex.example_id, int(label), prob))
    if predictions:
        report.overall_accuracy = overall_accuracy(
            [p for _, p, _ in predictions], [int(ex.label) for ex in examples])
    if pairs:
        for key, value in score_corpus(pairs).items():
            setattr(report, key, value)
    return EvalOutcome(report, generations, predictions)


# ---------------------------------------------------------------------------
# finite-difference self check


def _loss_through(params: list[Tensor], build) -> tuple[float, list[np.ndarray]]:
    for p in params:
        p.zero_grad()
    loss = build()
    backward(loss)
    return float(loss.data), [p.grad.copy() for p in params]


def _check(params: list[Tensor], build, *, sample: int | None = None,
           rng: np.random.Generator | None = None) -> float:
    """Worst relative error of analytic gradients vs difference quotients.

    Every coordinate must match the central quotient or one of the one-sided
    quotients; the latter covers kinks (relu corners, pooling argmax flips)
    sitting inside the probe interval, where the analytic subgradient equals
    exactly one side.
    """
    value0, grads = _loss_through(params, build)

    def value() -> float:
        return float(build().data)

    worst = 0.0
    for p, grad in zip(params, grads):
        if sample is None or p.data.size <= sample:
            slopes = oracles.finite_diff_slopes(value, p.data)
            worst = max(worst, oracles.subgradient_rel_error(grad, *slopes))
        else:
            flat_indices = rng.choice(p.data.size, size=sample, replace=False)
            for flat in flat_indices:
                idx = np.unravel_index(int(flat), p.data.shape)
                slopes = oracles.finite_diff_slopes_at(value, p.data, idx, value0)
                worst = max(worst, oracles.subgradient_rel_error(grad[idx], *slopes))
    return worst


def _primitive_cases(rng: np.random.Generator):
    """(name, params, loss builder) triples covering every primitive."""

    def param(*shape):
        return Tensor(rng.normal(0.0, 1.0, size=shape), requires_grad=True)

    def reduce(t: Tensor, seed_vec: np.ndarray) -> Tensor:
        return sum_all(mul(t, Tensor(seed_vec)))

    a, b = param(3, 4), param(4, 2)
    r_mm, r5, r5b, r10, r32 = (rng.normal(size=s) for s in [(3, 2), 5, 5, 10, 32])
    x_img, kern = param(2, 6, 6), param(3, 2, 3, 3)
    # keep relu inputs away from the kink so finite differences stay clean
    u = Tensor(rng.normal(size=7) + np.where(rng.normal(size=7) > 0, 0.5, -0.5),
               requires_grad=True)
    v, w = param(5), param(5)
    tab = param(6, 4)
    pool_in = param(2, 4, 4)
    cb_x, cb_b = param(3, 4, 4), param(3)
    mask = rng.random(5) < 0.7
    cases = [
        ("matmul", [a, b], lambda: reduce(matmul(a, b), r_mm)),
        ("conv2d", [x_img, kern], lambda: sum_all(conv2d(x_img, kern, 1))),
        ("relu", [u], lambda: sum_all(relu(u))),
        ("sigmoid", [v], lambda: sum_all(sigmoid(v))),
        ("tanh", [v], lambda: sum_all(tanh(v))),
        ("softmax", [v], lambda: reduce(softmax(v), r5)),
        ("cross_entropy", [v], lambda: cross_entropy(v, 2)),
        ("add", [v, w], lambda: reduce(add(v, w), r5b)),
        ("mul", [v, w], lambda: sum_all(mul(v, w))),
        ("concat", [v, w], lambda: reduce(concat([v, w]), r10)),
        ("slice1d", [v], lambda: sum_all(slice1d(v, 1, 4))),
        ("embedding", [tab], lambda: sum_all(add(embedding_lookup(tab, 2),
                                                 embedding_lookup(tab, 2)))),
        ("dropout", [v], lambda: sum_all(dropout(v, 0.7, mask=mask))),
        ("mean_stack", [v, w], lambda: sum_all(mean_stack([v, w, v]))),
        ("max_pool2", [pool_in], lambda: sum_all(max_pool2(pool_in))),
        ("flatten", [pool_in], lambda: reduce(flatten(pool_in), r32)),
        ("channel_bias", [cb_x, cb_b], lambda: sum_all(channel_bias(cb_x, cb_b))),
    ]
    return cases


def _variant_cases(seed: int):
    """Tiny model per variant with a loss closure over a fixed instance."""
    rng = np.random.default_rng(seed)
    caption = [4, 5, 6]
    cases = []
    for variant in Variant:
        if variant is Variant.MT_BASELINE:
            config = ModelConfig(vocab_size=10, feature_dim=8, embed_dim=8, hidden_dim=8)
            inputs = rng.random((3, 32, 32))
        else:
            config = ModelConfig(vocab_size=10, feature_dim=8, embed_dim=8, hidden_dim=8,
                                 shared_dim=8 if variant is Variant.MODEL_I else 4,
                                 specific_dim=4)
            inputs = rng.normal(size=8)
        model = ReviewerModel(variant, config, seed=seed + 1)

        def build(m=model, x=inputs):
            if m.variant.multi_task:
                return m.joint_loss(x, 1, caption, 1.0, 1.0)
            out = m.forward(x, label=1 if m.variant.has_classifier else None,
                            caption=caption if m.variant.has_generator else None)
            return out.aesthetics if m.variant.has_classifier else out.language
        cases.append((variant.value, model, build))
    return cases


def gradient_check_suite(seed: int, *, coord_sample: int = 25) -> float:
    """Finite-difference check of every primitive and every variant's loss.

    Tensors above ``coord_sample`` entries are spot-checked at seeded
    coordinates; smaller ones are differenced exhaustively. Returns the worst
    relative error seen, printing one line per group.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, params, build in _primitive_cases(rng):
        err = _check(params, build, sample=coord_sample, rng=rng)
        worst = max(worst, err)
        print(f"primitive {name:<14} max rel error {err:.3e}")
    for name, model, build in _variant_cases(seed):
        err = _check(list(model.params.values()), build, sample=coord_sample, rng=rng)
        worst = max(worst, err)
        print(f"variant   {name:<14} max rel error {err:.3e}")
    return worst


# ---------------------------------------------------------------------------
# commands


def _cmd_synth_data(args) -> int:
    ds = synth_dataset(args.seed, args.n_images, feature_dim=args.feature_dim,
                       modality=args.modality)
    save_dataset(ds, args.out)
    print(f"wrote {args.n_images} {ds.modality} examples to {args.out}")
    return 0


def _cmd_build_vocab(args) -> int:
    ds = load_dataset(args.data)
    corpus = [tokenize(c) for ex in ds.split("train") for c in ex.comments]
    if not corpus:
        raise DataError("the train split has no comments to build a vocabulary from")
    vocab = build_vocab(corpus, min_count=args.min_count)
    vocab.save(Path(args.data) / "vocab.txt")
    print(f"vocabulary of {len(vocab)} tokens (including 4 reserved specials)")
    return 0


def _cmd_train(args) -> int:
    ds = load_dataset(args.data)
    variant = Variant(args.variant)
    if variant is Variant.MT_BASELINE and ds.modality != "images":
        raise DataError("the mt-baseline variant trains its own encoder and needs an image dataset")
    if variant is not Variant.MT_BASELINE and ds.modality != "features":
        raise DataError(f"variant {variant.value} consumes precomputed features, got an image dataset")
    needs_vocab = variant.has_generator
    if needs_vocab and ds.vocab is None:
        raise DataError("no vocab.txt in the data directory; run build-vocab first")

    feature_dim = args.encoder_dim if ds.modality == "images" else ds.feature_dim
    config = ModelConfig(
        vocab_size=len(ds.vocab) if needs_vocab else 4,
        feature_dim=feature_dim,
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden_dim,
        shared_dim=args.shared_dim,
        specific_dim=args.specific_dim,
        lstm_layers=args.lstm_layers,
    )
    tcfg = TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, dropout_keep=args.dropout_keep,
        epochs=args.epochs, seed=args.seed, alpha=args.alpha, beta=args.beta,
        max_caption_len=args.max_caption_len, clip_norm=args.clip_norm,
    )
    if args.tune_grid:
        if not variant.multi_task:
            raise ConfigError("--tune-grid only applies to multi-task variants")
        values = [float(v) for v in args.tune_grid.split(",") if v.strip()]
        grid = [(a, b) for a in values for b in values]
        alpha, beta = tune_alpha_beta(
            lambda: ReviewerModel(variant, config, seed=args.seed), ds, grid,
            replace(tcfg, epochs=args.tune_epochs))
        print(f"selected alpha={alpha} beta={beta} from the {len(grid)}-point grid")
        tcfg = replace(tcfg, alpha=alpha, beta=beta)

    model = ReviewerModel(variant, config, seed=args.seed)
    result = train(model, ds, tcfg)
    save_checkpoint(model, args.out)
    log_path = args.log or f"{args.out}.metrics.csv"
    write_metrics_csv(result.log, log_path)
    if result.log:
        print(f"saved {args.out} (best epoch {result.best_epoch}, "
              f"valid loss {result.best_valid_loss:.6f}); log at {log_path}")
    else:
        print(f"saved untrained model to {args.out} (epochs=0)")
    return 0


def _cmd_evaluate(args) -> int:
    ds = load_dataset(args.data)
    model = load_checkpoint(args.ckpt)
    examples = ds.split(args.split)
    if not examples:
        raise DataError(f"split {args.split!r} is empty")
    outcome = evaluate_examples(model, examples, ds.vocab,
                                beam_size=args.beam, max_len=args.max_len)
    report = outcome.report.to_json_dict()
    report["variant"] = model.variant.value
    report["split"] = args.split
    report["predictions"] = [
        {"id": ex_id, "label": "high" if label else "low", "probability": prob}
        for ex_id, label, prob in outcome.predictions
    ]
    report["generations"] = [
        {"id": ex_id, "caption": " ".join(words)} for ex_id, words in outcome.generations
    ]
    Path(args.report).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    if args.generations:
        lines = "\n".join(" ".join(words) for _, words in outcome.generations)
        Path(args.generations).write_text(lines + "\n", encoding="utf-8")
    print(report_table([(model.variant.value, outcome.report)]))
    return 0


def _cmd_generate(args) -> int:
    features = read_features_bin(args.features)
    vocab = Vocabulary.load(args.vocab)
    model = load_checkpoint(args.ckpt)
    if not model.variant.has_generator:
        raise ConfigError(f"variant {model.variant.value} has no language head")
    lines = []
    for row in features:
        top = beam_search(model, row, args.beam, args.max_len)[0]
        lines.append(" ".join(vocab.decode(strip_end(list(top.tokens)))))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_grad_check(args) -> int:
    worst = gradient_check_suite(args.seed)
    print(f"max relative error: {worst:.3e}")
    if worst >= 1e-4:
        raise NumericError(f"gradient check failed with max relative error {worst:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reviewnet",
        description="Train and evaluate joint aesthetic classifiers and review generators.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a deterministic synthetic dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-images", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--modality", choices=["features", "images"], default="features")
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("build-vocab", help="build vocab.txt from the train split comments")
    p.add_argument("--data", required=True)
    p.add_argument("--min-count", type=int, default=4)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("train", help="train one variant and save the best checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", required=True, choices=[v.value for v in Variant])
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--tune-grid", default=None,
                   help="comma-separated weight values; trains every (alpha, beta) pair briefly")
    p.add_argument("--tune-epochs", type=int, default=2)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="metrics CSV path (default: <out>.metrics.csv)")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--dropout-keep", type=float, default=0.7)
    p.add_argument("--embed-dim", type=int, default=512)
    p.add_argument("--hidden-dim", type=int, default=512)
    p.add_argument("--shared-dim", type=int, default=None)
    p.add_argument("--specific-dim", type=int, default=None)
    p.add_argument("--lstm-layers", type=int, default=1)
    p.add_argument("--encoder-dim", type=int, default=64,
                   help="tiny encoder output width (image datasets only)")
    p.add_argument("--max-caption-len", type=int, default=30)
    p.add_argument("--clip-norm", type=float, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="decode a split and write the metric report")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--beam", type=int, default=20)
    p.add_argument("--split", default="test", choices=["train", "valid", "test", "all"])
    p.add_argument("--max-len", type=int, default=30)
    p.add_argument("--report", required=True)
    p.add_argument("--generations", default=None,
                   help="also write decoded captions, one per line")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("generate", help="decode captions for a features file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--beam", type=int, default=20)
    p.add_argument("--max-len", type=int, default=30)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("grad-check", help="finite-difference check of gradients")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_cmd_grad_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, ContractError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ShapeError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
