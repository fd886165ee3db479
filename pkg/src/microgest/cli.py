"""Command-line surface: synth, train, eval, compress, estimate, infer.

Every command prints its effective configuration (including the seed)
before doing anything, so a run can be reproduced from its own output.
``--json`` switches stdout to a single machine-readable object carrying
the same information.  Exit code 0 means success; any domain error prints
one line to stderr and exits 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .compression import CompressionOptions, compress_model
from .errors import InvalidParams, MicrogestError, ShapeMismatch
from .estimator import Budget, CostModel, check_fit, load_config
from .features import (
    LABEL_KIND_GESTURE,
    LABEL_KIND_PHASE,
    AnnotatedSequence,
    Annotation,
    RollingStats,
    build_features,
    update_rolling,
)
from .inference import step_rnn
from .model import RnnState, format_arch, parse_arch
from .model_io import (
    compressed_payload_size,
    load_dataset,
    load_model,
    save_compressed,
    save_dataset,
    save_model,
)
from .pipeline import (
    FfnnRecognizer,
    GestureClass,
    N_PHASE_STATES,
    candidate_features,
    extract_candidates,
    fsm_postprocess,
    label_candidates,
    match_events,
    scale_candidate,
)
from .synth import build_corpus
from .training import (
    TrainingConfig,
    classification_accuracy,
    init_params,
    retrain_pruned,
    retrain_quantized,
    train_ffnn,
    train_rnn_bptt,
)

ARCH_HELP = (
    "architecture string: layer sizes joined by '-', first number is the "
    "feature count; a layer is [r]N[activation] where the optional 'r' "
    "marks it recurrent, e.g. 180-8relu-5softmax or 12-9relu-9relu-"
    "r17softmax; hidden layers default to relu, the last layer to softmax"
)


def _config_dict(args: argparse.Namespace) -> dict:
    skip = {"func", "json"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        out[key] = str(value) if isinstance(value, Path) else value
    return out


def _emit(args: argparse.Namespace, human: list[str], payload: dict) -> None:
    """Print either the human lines or one JSON object, never both."""
    if args.json:
        payload = {"config": _config_dict(args), **payload}
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print("config:")
        for key, value in _config_dict(args).items():
            print(f"  {key} = {value}")
        for line in human:
            print(line)


# --- shared dataset plumbing -------------------------------------------------

def _candidate_dataset(
    ds: AnnotatedSequence, target_frames: int
) -> tuple[np.ndarray, np.ndarray]:
    """Detected candidates as a feature matrix with auto-assigned labels."""
    cands = extract_candidates(np.asarray(ds.frames))
    labelled = label_candidates(cands, ds.annotations)
    n_features = target_frames * ds.width * ds.height
    if not labelled:
        return np.zeros((0, n_features)), np.zeros(0, dtype=int)
    X = np.stack(
        [candidate_features(scale_candidate(c, target_frames)) for c, _ in labelled]
    )
    y = np.array([label for _, label in labelled], dtype=int)
    return X, y


def _phase_sequence(ds: AnnotatedSequence) -> tuple[np.ndarray, np.ndarray]:
    """Rolling-statistics feature stream plus per-frame phase targets."""
    stats = RollingStats()
    rows = []
    for t in range(len(ds)):
        image = ds.image(t)
        stats = update_rolling(stats, image)
        rows.append(build_features(image, stats))
    X = np.stack(rows) if rows else np.zeros((0, ds.width * ds.height + 3))
    targets = -np.ones(len(ds), dtype=int)
    for ann in ds.annotations:
        targets[ann.frame] = ann.label
    return X, targets


def _run_rnn_stream(spec, params, ds: AnnotatedSequence) -> list[np.ndarray]:
    """Per-frame network outputs over a recorded stream."""
    pixels = ds.width * ds.height
    if spec.features == pixels + 3:
        with_stats = True
    elif spec.features == pixels:
        with_stats = False
    else:
        raise ShapeMismatch(
            f"model wants {spec.features} features but frames provide "
            f"{pixels} pixels (+3 rolling statistics)"
        )
    state = RnnState(spec)
    stats = RollingStats()
    outputs = []
    for t in range(len(ds)):
        image = ds.image(t)
        stats = update_rolling(stats, image)
        feats = build_features(image, stats if with_stats else None)
        outputs.append(step_rnn(spec, params, feats, state))
    return outputs


def _phase_events(ds: AnnotatedSequence) -> list[tuple[int, GestureClass]]:
    """Ground-truth gesture events implied by per-frame phase labels."""
    by_frame = {ann.frame: ann.label for ann in ds.annotations}
    events = []
    for t in range(len(ds) - 1):
        here = by_frame.get(t)
        after = by_frame.get(t + 1)
        if here is None or after != 0:
            continue
        for g in GestureClass:
            if g is GestureClass.NO_GESTURE:
                continue
            if here == 4 * int(g) + 4:
                events.append((t + 1, g))
    return events


# --- commands ----------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    corpus = build_corpus(
        args.per_class,
        seed=args.seed,
        width=args.width,
        height=args.height,
        label_kind=args.labels,
        fps=args.fps,
    )
    save_dataset(args.out, corpus)
    counts: dict[str, int] = {}
    for ann in corpus.annotations:
        if args.labels == LABEL_KIND_GESTURE:
            name = GestureClass(ann.label).name.lower()
        else:
            name = f"state_{ann.label}"
        counts[name] = counts.get(name, 0) + 1
    human = [
        f"wrote {args.out}: {len(corpus)} frames, "
        f"{len(corpus.annotations)} annotations"
    ]
    for name in sorted(counts):
        human.append(f"  {name}: {counts[name]}")
    _emit(
        args,
        human,
        {
            "path": str(args.out),
            "frames": len(corpus),
            "annotations": len(corpus.annotations),
            "counts": counts,
        },
    )
    return 0


def _split(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = int(round(fraction * n))
    return perm[n_val:], perm[:n_val]


def cmd_train(args: argparse.Namespace) -> int:
    spec = parse_arch(args.arch)
    ds = load_dataset(args.data)
    cfg = TrainingConfig(
        optimizer=args.optimizer,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    params = init_params(spec, args.seed)
    payload: dict = {"arch": format_arch(spec)}
    human: list[str] = []

    if ds.label_kind == LABEL_KIND_PHASE:
        X, targets = _phase_sequence(ds)
        if X.shape[0] and X.shape[1] != spec.features:
            raise ShapeMismatch(
                f"model wants {spec.features} features, stream provides {X.shape[1]}"
            )
        if targets.max(initial=-1) >= spec.output_size:
            raise ShapeMismatch(
                f"phase label {targets.max()} needs more than "
                f"{spec.output_size} outputs"
            )
        n_val = int(round(args.val_fraction * len(ds)))
        cut = len(ds) - n_val
        params, history = train_rnn_bptt(
            spec, params, [(X[:cut], targets[:cut])], cfg, horizon=args.horizon
        )
        stats = {"final_loss": history[-1] if history else None}
        if n_val:
            outs = []
            state = RnnState(spec)
            for t in range(cut, len(ds)):
                outs.append(step_rnn(spec, params, X[t], state))
            labelled = targets[cut:] >= 0
            if labelled.any():
                preds = np.array([int(np.argmax(o)) for o in outs])
                stats["val_accuracy"] = float(
                    np.mean(preds[labelled] == targets[cut:][labelled])
                )
        payload.update(stats)
        human.append(f"trained {format_arch(spec)} on {cut} frames")
        for key, value in stats.items():
            human.append(f"  {key} = {value}")
    else:
        X, y = _candidate_dataset(ds, args.target_frames)
        if X.shape[0] == 0:
            raise InvalidParams("dataset yielded no training candidates")
        if X.shape[1] != spec.features:
            raise ShapeMismatch(
                f"model wants {spec.features} features, candidates provide "
                f"{X.shape[1]}"
            )
        if y.max(initial=0) >= spec.output_size:
            raise ShapeMismatch(
                f"label {y.max()} needs more than {spec.output_size} outputs"
            )
        train_idx, val_idx = _split(X.shape[0], args.val_fraction, args.seed)
        params, history = train_ffnn(spec, params, X[train_idx], y[train_idx], cfg)
        stats = {
            "final_loss": history[-1] if history else None,
            "train_accuracy": classification_accuracy(
                spec, params, X[train_idx], y[train_idx]
            ),
            "candidates": int(X.shape[0]),
        }
        if val_idx.size:
            stats["val_accuracy"] = classification_accuracy(
                spec, params, X[val_idx], y[val_idx]
            )
        payload.update(stats)
        human.append(
            f"trained {format_arch(spec)} on {train_idx.size} candidates"
        )
        for key, value in stats.items():
            human.append(f"  {key} = {value}")

    save_model(
        args.out,
        spec,
        params,
        meta={"arch": format_arch(spec), "seed": args.seed, "epochs": args.epochs},
    )
    human.append(f"saved model to {args.out}")
    payload["path"] = str(args.out)
    _emit(args, human, payload)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    spec, params = load_model(args.model)
    ds = load_dataset(args.data)
    if ds.label_kind == LABEL_KIND_PHASE:
        if spec.output_size != N_PHASE_STATES:
            raise InvalidParams(
                f"phase evaluation needs a {N_PHASE_STATES}-output model, "
                f"got {spec.output_size}"
            )
        events = fsm_postprocess(_run_rnn_stream(spec, params, ds))
        annotations = [Annotation(f, int(c)) for f, c in _phase_events(ds)]
    else:
        events = FfnnRecognizer(spec, params, target_frames=args.target_frames)(ds)
        annotations = ds.annotations
    report = match_events(events, annotations, tolerance=args.tolerance)
    human = [
        f"accuracy: {report.accuracy:.4f} ({report.correct}/{report.total})",
        "confusion (annotation -> outcome):",
    ]
    confusion = {}
    for (label, outcome), count in sorted(report.confusion().items()):
        name = GestureClass(label).name.lower()
        human.append(f"  {name} -> {outcome}: {count}")
        confusion[f"{name}->{outcome}"] = count
    _emit(
        args,
        human,
        {
            "accuracy": report.accuracy,
            "correct": report.correct,
            "total": report.total,
            "events": len(events),
            "confusion": confusion,
        },
    )
    return 0


def cmd_compress(args: argparse.Namespace) -> int:
    spec, params = load_model(args.model)
    clusters: int | list[int] | None
    if args.clusters is None:
        clusters = None
    elif "," in args.clusters:
        clusters = [int(v) for v in args.clusters.split(",")]
    else:
        clusters = int(args.clusters)
    options = CompressionOptions(
        target_density=args.density,
        threshold=args.threshold,
        clusters=clusters,
        huffman=not args.no_huffman,
    )

    after_prune = None
    after_quantize = None
    if args.retrain_data is not None:
        ds = load_dataset(args.retrain_data)
        X, y = _candidate_dataset(ds, args.target_frames)
        if X.shape[0] == 0:
            raise InvalidParams("retraining dataset yielded no candidates")
        if X.shape[1] != spec.features:
            raise ShapeMismatch(
                f"model wants {spec.features} features, candidates provide "
                f"{X.shape[1]}"
            )
        cfg = TrainingConfig(
            learning_rate=args.lr,
            epochs=args.retrain_epochs,
            batch_size=32,
            seed=args.seed,
        )

        def after_prune(pruned, removed):
            out, _ = retrain_pruned(spec, pruned, removed, X, y, cfg)
            return out

        def after_quantize(assignments, centroids, current):
            new_centroids, out, _ = retrain_quantized(
                spec, current, assignments, centroids, X, y, cfg
            )
            return new_centroids, out

    cm = compress_model(
        spec,
        params,
        options,
        retrain_after_prune=after_prune,
        retrain_after_quantize=after_quantize,
    )
    save_compressed(args.out, cm)
    on_disk = compressed_payload_size(args.out)
    naive = cm.stage_sizes["naive"]
    human = [f"stage sizes (bytes):"]
    for stage, size in cm.stage_sizes.items():
        human.append(f"  {stage}: {size}")
    human.append(f"on-disk parameter payload: {on_disk} bytes")
    human.append(f"compression factor vs naive: {naive / on_disk:.2f}x")
    human.append(f"saved compressed model to {args.out}")
    _emit(
        args,
        human,
        {
            "path": str(args.out),
            "stage_sizes": cm.stage_sizes,
            "payload_bytes": on_disk,
            "factor": naive / on_disk,
            "surviving_weights": cm.surviving_weights(),
        },
    )
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    if (args.model is None) == (args.arch is None):
        raise InvalidParams("give exactly one of --model or --arch")
    if args.model is not None:
        spec, _ = load_model(args.model)
    else:
        spec = parse_arch(args.arch)
    if args.config is not None:
        cost, budget = load_config(args.config)
    else:
        cost, budget = CostModel(), Budget()
    if args.bytes_per_param is not None:
        budget = replace(budget, bytes_per_parameter=args.bytes_per_param)
    report = check_fit(spec, budget, cost)
    limiting = spec.layers[report.ram_limiting_layer]
    act_us = report.exec_time_us - report.weights * cost.mac_us
    human = [
        f"architecture: {format_arch(spec)}",
        f"weights (multiplications): {report.weights}",
        f"parameters: {report.parameters}",
        f"activation calls: {report.activation_calls}",
        f"ram variables: {report.ram_variables} "
        f"(limited by layer {report.ram_limiting_layer}: "
        f"{limiting.kind.value} {limiting.neurons} {limiting.activation.value})",
        f"flash: {report.flash_bytes} / {budget.flash_bytes} bytes "
        f"({'fits' if report.fits_flash else 'DOES NOT FIT'})",
        f"ram: {report.ram_bytes_needed} / "
        f"{budget.ram_fraction_for_layers * budget.ram_bytes:.0f} bytes "
        f"({'fits' if report.fits_ram else 'DOES NOT FIT'})",
        f"activation time: {act_us / 1000.0:.2f} ms",
        f"execution time: {report.exec_time_us / 1000.0:.2f} ms",
    ]
    _emit(
        args,
        human,
        {
            "arch": format_arch(spec),
            "weights": report.weights,
            "parameters": report.parameters,
            "activation_calls": report.activation_calls,
            "ram_variables": report.ram_variables,
            "ram_limiting_layer": report.ram_limiting_layer,
            "flash_bytes": report.flash_bytes,
            "flash_budget": budget.flash_bytes,
            "ram_bytes_needed": report.ram_bytes_needed,
            "ram_bytes_allowed": budget.ram_fraction_for_layers * budget.ram_bytes,
            "activation_time_us": act_us,
            "exec_time_us": report.exec_time_us,
            "fits_flash": report.fits_flash,
            "fits_ram": report.fits_ram,
            "fits": report.fits,
        },
    )
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    spec, params = load_model(args.model)
    ds = load_dataset(args.data)
    if args.mode == "rnn-phases":
        if spec.output_size != N_PHASE_STATES:
            raise InvalidParams(
                f"rnn-phases mode needs a {N_PHASE_STATES}-output model, "
                f"got {spec.output_size}"
            )
        events = fsm_postprocess(_run_rnn_stream(spec, params, ds))
    else:
        events = FfnnRecognizer(spec, params, target_frames=args.target_frames)(ds)
    human = [f"{len(events)} event(s)"]
    for frame, cls in events:
        human.append(f"  frame {frame}: {GestureClass(int(cls)).name.lower()}")
    _emit(
        args,
        human,
        {
            "events": [
                {"frame": int(frame), "label": int(cls),
                 "name": GestureClass(int(cls)).name.lower()}
                for frame, cls in events
            ]
        },
    )
    return 0


# --- parser ------------------------------------------------------------------

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=0, help="master random seed")
    sub.add_argument("--json", action="store_true", help="machine-readable output")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="microgest",
        description=(
            "tiny gesture classifiers for 8-bit microcontrollers: synthesis, "
            "training, compression, cost estimation, inference"
        ),
        epilog=ARCH_HELP,
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate an annotated synthetic corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument(
        "--labels",
        choices=(LABEL_KIND_GESTURE, LABEL_KIND_PHASE),
        default=LABEL_KIND_GESTURE,
    )
    p.add_argument("--width", type=int, default=3)
    p.add_argument("--height", type=int, default=3)
    p.add_argument("--fps", type=float, default=40.0)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--arch", required=True, help=ARCH_HELP)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--target-frames", type=int, default=20)
    p.add_argument("--horizon", type=int, default=32)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="score a model against a dataset")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--tolerance", type=int, default=10)
    p.add_argument("--target-frames", type=int, default=20)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("compress", help="prune, quantize, and encode a model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--density", type=float, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument(
        "--clusters",
        default=None,
        help="shared weights per layer: one integer or a comma list",
    )
    p.add_argument("--no-huffman", action="store_true")
    p.add_argument("--retrain-data", type=Path, default=None)
    p.add_argument("--retrain-epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--target-frames", type=int, default=20)
    _add_common(p)
    p.set_defaults(func=cmd_compress)

    p = subs.add_parser("estimate", help="static resource and timing report")
    p.add_argument("--model", type=Path, default=None)
    p.add_argument("--arch", default=None, help=ARCH_HELP)
    p.add_argument("--config", type=Path, default=None,
                   help="key=value cost and budget file")
    p.add_argument("--bytes-per-param", type=int, choices=(1, 2, 4), default=None)
    _add_common(p)
    p.set_defaults(func=cmd_estimate)

    p = subs.add_parser("infer", help="run a model over a recorded stream")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument(
        "--mode", choices=("ffnn-candidates", "rnn-phases"), required=True
    )
    p.add_argument("--target-frames", type=int, default=20)
    _add_common(p)
    p.set_defaults(func=cmd_infer)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MicrogestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
