"""Command-line entry point.

Subcommands: synth, train, sample, eval, export.  Exit codes: 0 success,
1 I/O failure, 2 usage error, 3 training divergence.
"""

import argparse
import json
import os
import sys

import numpy as np

from .dataset import GeneratorSpec, generate_synthetic_dataset, read_sequences, \
    write_sequences, LabeledDataset
from .errors import DivergenceError, ParseError, SchemaError, VocabularyError
from .metrics import ClassifierConfig, evaluate_all, train_classifier
from .sampler import PRESETS, build_vocab, generate, load_train_checkpoint, \
    train_model, write_loss_csv
from .schedule import build_linear_schedule

def _parse_bool(s):
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


_OVERRIDE_TYPES = {
    # training
    "T": int, "lr": float, "batch_size": int, "epochs": int, "seed": int,
    "beta_start": float, "beta_end": float, "checkpoint_every": int,
    # denoiser
    "d_l": int, "num_layers": int, "num_heads": int, "text_layers": int,
    "text_heads": int, "max_len": int, "graph_len": int, "graph_channels": int,
    "k": int, "ffn_mult": int, "dropout": float,
    "bigraph_enabled": _parse_bool, "tie_streams": _parse_bool,
}


class UsageError(Exception):
    pass


def parse_overrides(pairs):
    """key=value strings -> typed config patch; rejects unknown keys."""
    patch = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        if key not in _OVERRIDE_TYPES:
            raise UsageError(f"unknown override key {key!r}")
        try:
            patch[key] = _OVERRIDE_TYPES[key](value)
        except ValueError:
            raise UsageError(f"cannot parse override {key}={value!r}")
    return patch


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="bigraphdiff",
        description="Two-person interaction generation with a diffusion model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", default="default",
                   help="'default' or a path to a generator spec JSON")
    p.add_argument("--out", required=True, help="output dataset (JSON lines)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the spec's seed")

    p = sub.add_parser("train", help="train the denoiser")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="config override (repeatable)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("sample", help="generate sequences from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="config override (repeatable)")

    p = sub.add_parser("eval", help="evaluate a checkpoint against a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-class", type=int, default=0,
                   help="generated samples per class (default: test-set count)")

    p = sub.add_parser("export", help="dump per-frame joint JSON files")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _cmd_synth(args):
    if args.spec == "default":
        spec = GeneratorSpec()
    else:
        with open(args.spec, encoding="utf-8") as f:
            spec = GeneratorSpec.from_dict(json.load(f))
    if args.seed is not None:
        spec.seed = args.seed
    dataset = generate_synthetic_dataset(spec)
    write_sequences(dataset, args.out)
    print(f"wrote {len(dataset.sequences)} sequences to {args.out}")
    return 0


def _cmd_train(args):
    dataset = read_sequences(args.data)
    patch = parse_overrides(args.overrides)
    try:
        cfg = PRESETS[args.preset](**patch)
    except KeyError as exc:
        raise UsageError(f"unknown config key {exc}")
    progress = None
    if not args.quiet:
        progress = lambda epoch, loss: print(f"epoch {epoch}: loss {loss:.6f}")
    try:
        result = train_model(dataset, cfg, checkpoint_path=args.out,
                             progress=progress)
    except DivergenceError as exc:
        print(f"error: divergence: {exc} "
              f"(last checkpoint: {exc.checkpoint_path})", file=sys.stderr)
        return 3
    write_loss_csv(result.loss_history, args.out + ".loss.csv")
    print(f"trained {result.step} steps; checkpoint at {args.out}")
    return 0


def _load_for_sampling(path, overrides):
    state = load_train_checkpoint(path)
    patch = parse_overrides(overrides)
    for key in ("max_len", "graph_len"):
        if key in patch:
            setattr(state.weights.config, key, patch.pop(key))
    for key in ("T", "beta_start", "beta_end"):
        if key in patch:
            setattr(state.config, key, patch.pop(key))
    if patch:
        raise UsageError(f"overrides not usable at sampling time: {sorted(patch)}")
    sched = build_linear_schedule(state.config.T, state.config.beta_start,
                                  state.config.beta_end)
    return state, sched


def _cmd_sample(args):
    state, sched = _load_for_sampling(args.ckpt, args.overrides)
    rng = np.random.default_rng(args.seed)
    os.makedirs(args.out, exist_ok=True)
    sequences = [generate(args.label, args.frames, state.weights, sched, rng)
                 for _ in range(args.count)]
    out = os.path.join(args.out, "samples.jsonl")
    write_sequences(LabeledDataset(
        sequences=sequences, classes=[args.label],
        split=["test"] * len(sequences)), out)
    print(f"wrote {len(sequences)} samples to {out}")
    return 0


def _cmd_eval(args):
    state, sched = _load_for_sampling(args.ckpt, [])
    dataset = read_sequences(args.data)
    rng = np.random.default_rng(args.seed)
    clf = train_classifier(dataset, ClassifierConfig(seed=args.seed),
                           np.random.default_rng(args.seed))
    test = dataset.test
    counts = {c: sum(1 for s in test if s.label == c) for c in dataset.classes}
    if args.per_class:
        counts = {c: args.per_class for c in dataset.classes}
    n_frames = max(s.num_frames for s in dataset.sequences)
    generated = []
    for c in dataset.classes:
        for _ in range(counts[c]):
            generated.append(generate(c, n_frames, state.weights, sched, rng))
    gen_ds = LabeledDataset(sequences=generated, classes=list(dataset.classes),
                            split=["test"] * len(generated))
    ref_ds = LabeledDataset(sequences=test, classes=list(dataset.classes),
                            split=["test"] * len(test))
    report = evaluate_all(gen_ds, ref_ds, clf, rng, provenance={
        "checkpoint": args.ckpt, "data": args.data, "seed": args.seed,
        "classifier_held_out_accuracy": clf.held_out_accuracy,
    })
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(report.to_json() + "\n")
    print(f"average accuracy {report.average_accuracy:.3f}, "
          f"fvd {report.fvd:.3f}, multimodality {report.multimodality:.3f}")
    return 0


def _cmd_export(args):
    dataset = read_sequences(args.inp)
    os.makedirs(args.out, exist_ok=True)
    for si, seq in enumerate(dataset.sequences):
        seq_dir = os.path.join(args.out, f"seq{si:03d}")
        os.makedirs(seq_dir, exist_ok=True)
        for fi in range(seq.num_frames):
            record = {
                "label": seq.label,
                "fps": seq.fps,
                "frame": fi,
                "persons": np.transpose(seq.frames[fi], (2, 0, 1)).tolist(),
            }
            with open(os.path.join(seq_dir, f"frame{fi:04d}.json"), "w",
                      encoding="utf-8") as f:
                json.dump(record, f, sort_keys=True)
                f.write("\n")
    print(f"exported {len(dataset.sequences)} sequences to {args.out}")
    return 0


_COMMANDS = {"synth": _cmd_synth, "train": _cmd_train, "sample": _cmd_sample,
             "eval": _cmd_eval, "export": _cmd_export}


def run(argv):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (UsageError, VocabularyError) as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except (ParseError, SchemaError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run(sys.argv[1:]))
