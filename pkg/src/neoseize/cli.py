"""Command-line front end.

Every command prints its resolved configuration as one ``config: {...}`` JSON
line before doing any work, and is deterministic for a given ``--seed`` and
input files. Exit codes: 0 success, 1 usage error, 2 data or format error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, eeg_io, fcnn, pipeline, svm_baseline, training
from .features import FEATURE_NAMES
from .postproc_metrics import write_mask, write_traces
from .preprocess import SVM_POLICY, TARGET_FS, preprocess_recording, standardize

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
RESULTS_HEADER = ("subject", "auc_svm", "auc_fcnn", "auc90_svm", "auc90_fcnn")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _unit_float(text):
    value = float(text)
    if not 0 <= value <= 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


def _int_range(text):
    parts = text.split("-")
    try:
        lo, hi = (int(parts[0]), int(parts[-1])) if len(parts) <= 2 else (None, None)
    except ValueError:
        lo = hi = None
    if lo is None or lo < 0 or lo > hi:
        raise argparse.ArgumentTypeError(f"expected N or LO-HI, got {text!r}")
    return lo, hi


def build_parser():
    p = _Parser(prog="neoseize", description="Neonatal EEG seizure detection experiments.")
    p.add_argument("--version", action="version", version=f"neoseize {__version__}")
    p.add_argument("--seed", type=int, default=0, help="global random seed (default 0)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    seed_kw = dict(type=int, default=argparse.SUPPRESS, help="random seed (overrides global)")

    s = sub.add_parser("synth", help="write a synthetic corpus")
    s.add_argument("--subjects", type=int, default=6)
    s.add_argument("--hours", type=_positive_float, default=0.5)
    s.add_argument("--seizures-per-subject", type=_int_range, default=(2, 4), metavar="N|LO-HI")
    s.add_argument("--seed", **seed_kw)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--force", action="store_true", help="write into a non-empty directory")

    f = sub.add_parser("features", help="feature table of every 4 s-stride window")
    f.add_argument("--corpus", required=True)
    f.add_argument("-o", "--output", required=True)

    for name in ("train-fcnn", "train-svm"):
        t = sub.add_parser(name, help=f"leave-one-out training ({name[6:]})")
        t.add_argument("--corpus", required=True)
        t.add_argument("--held-out", default=None,
                       help="subject to hold out (default: every subject in turn)")
        t.add_argument("--iterations", type=_positive_int, default=None)
        t.add_argument("--batch-size", type=_positive_int, default=None)
        t.add_argument("--lr", type=_positive_float, default=None)
        t.add_argument("--seed", **seed_kw)
        t.add_argument("-o", "--output", required=True, help="experiment directory")

    d = sub.add_parser("detect", help="probability traces and decisions for one recording")
    d.add_argument("--model", required=True)
    d.add_argument("--recording", required=True)
    d.add_argument("--threshold", type=_unit_float, default=0.5)
    d.add_argument("--collar", type=int, default=pipeline.COLLAR_S)
    d.add_argument("-o", "--output", required=True, help="output prefix")

    e = sub.add_parser("evaluate", help="per-subject AUC / AUC90 of both pipelines")
    e.add_argument("--corpus", required=True)
    e.add_argument("--experiment-dir", required=True)
    e.add_argument("--jobs", type=_positive_int, default=1)
    e.add_argument("-o", "--output", required=True)

    lo = sub.add_parser("localize", help="input windows behind the strongest seizure activations")
    lo.add_argument("--model", required=True)
    lo.add_argument("--recording", required=True)
    lo.add_argument("--channel", required=True, help="channel name or 0-based index")
    lo.add_argument("--epoch-start", type=float, nargs="+", required=True, metavar="SECONDS")
    lo.add_argument("--top-n", type=_positive_int, default=1)
    lo.add_argument("-o", "--output", required=True)

    i = sub.add_parser("inspect-model", help="layer table, parameter totals, receptive fields")
    i.add_argument("--model", required=True)
    return p


def _print_config(args):
    cfg = {k: v for k, v in vars(args).items()}
    print("config: " + json.dumps(cfg, sort_keys=True, default=list))


def _ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create directory {path}: {exc}") from exc


def _load_subjects(corpus):
    if not os.path.isdir(corpus):
        raise DataError(f"corpus directory {corpus} does not exist")
    pairs = eeg_io.load_corpus(corpus)
    if not pairs:
        raise DataError(f"{corpus}: no *.rec.csv recordings found")
    return [pipeline.prepare_subject(rec, ann) for rec, ann in pairs]


def _load_any_model(path):
    if not os.path.exists(path):
        raise DataError(f"model file {path} does not exist")
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"FCN1":
        return fcnn.load_model(path)
    if magic == b"SVM1":
        return svm_baseline.load_model(path)
    raise DataError(f"{path}: unrecognized model file")


def _read_recording_32(path):
    rec = eeg_io.read_recording(path)
    ratio = rec.sample_rate_hz / TARGET_FS
    if ratio < 1 or ratio != int(ratio):
        raise DataError(f"{path}: sample rate {rec.sample_rate_hz:g} Hz does not match the "
                        f"models' {TARGET_FS:g} Hz input (need an integer multiple)")
    return rec, preprocess_recording(rec)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    if args.subjects < 1:
        raise UsageError("--subjects must be at least 1")
    out = args.output
    if os.path.isdir(out) and os.listdir(out) and not args.force:
        raise UsageError(f"{out} is not empty (use --force to overwrite)")
    duration = int(round(args.hours * 3600))
    events = tuple(args.seizures_per_subject)
    # short corpora get shorter seizures so the 50% cap still holds
    lo, hi = eeg_io.SynthConfig.seizure_duration_s
    if events[1] > 0:
        hi = min(hi, duration // (2 * events[1]))
        lo = min(lo, hi)
    cfg = eeg_io.SynthConfig(n_subjects=args.subjects, duration_s=duration,
                             seizure_events=events, seizure_duration_s=(lo, hi),
                             rng_seed=args.seed)
    try:
        cfg.validate()
    except eeg_io.ConfigError as exc:
        raise UsageError(str(exc)) from exc
    _ensure_dir(out)
    files = []
    for k in range(1, cfg.n_subjects + 1):
        rec, ann = eeg_io.generate_synthetic_subject(cfg, k)
        rec_path, ann_path = eeg_io.corpus_paths(out, rec.subject_id)
        eeg_io.write_recording(rec, rec_path)
        eeg_io.write_annotations(ann, ann_path)
        files += [os.path.basename(rec_path), os.path.basename(ann_path)]
        print(f"wrote {rec.subject_id}: {int(ann.fused.sum())} s of seizure")
    manifest = {"generator": cfg.__dict__, "seed": args.seed, "files": files}
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


def cmd_features(args):
    subjects = _load_subjects(args.corpus)
    with open(args.output, "w") as fh:
        fh.write(",".join(["subject", "channel", "start_s", "label",
                           *[f"f{i}" for i in range(len(FEATURE_NAMES))]]) + "\n")
        for s in subjects:
            feats, starts = pipeline.svm_features(s.recording)
            labels = pipeline.epoch_labels(s, starts, SVM_POLICY)
            for ch, name in enumerate(s.recording.channel_names):
                for k, start in enumerate(starts):
                    values = ",".join(f"{v:.12g}" for v in feats[ch, k])
                    fh.write(f"{s.subject_id},{name},{start:g},{labels[ch, k]},{values}\n")
            print(f"{s.subject_id}: {feats.shape[0] * feats.shape[1]} windows")
    return EXIT_OK


def cmd_train(args):
    kind = args.command[len("train-"):]
    if kind == "svm":
        for flag in ("iterations", "batch_size", "lr"):
            if getattr(args, flag) is not None:
                raise UsageError(f"--{flag.replace('_', '-')} does not apply to train-svm")
    subjects = _load_subjects(args.corpus)
    ids = [s.subject_id for s in subjects]
    if len(ids) < 3:
        raise DataError("leave-one-out training needs at least 3 subjects")
    if args.held_out is not None and args.held_out not in ids:
        raise UsageError(f"--held-out {args.held_out!r} is not in the corpus ({', '.join(ids)})")
    folds = [args.held_out] if args.held_out else ids
    defaults = training.TrainConfig()
    tcfg = training.TrainConfig(
        initial_lr=args.lr or defaults.initial_lr,
        batch_size=args.batch_size or defaults.batch_size,
        total_iterations=args.iterations or defaults.total_iterations,
        seed=args.seed)
    scfg = svm_baseline.SvmTrainConfig(seed=args.seed)
    resolved = training.config_dict(tcfg if kind == "fcnn" else scfg)
    print("train_config: " + json.dumps(resolved, sort_keys=True))
    _ensure_dir(args.output)
    cache = {}
    for held in folds:
        model, extra = training.train_fold(subjects, held, kind, tcfg, scfg, args.seed,
                                           feature_cache=cache)
        base = os.path.join(args.output, f"fold_{held}")
        if kind == "fcnn":
            fcnn.save_model(model, base + ".fcn")
            training.write_history(extra, base + ".history.csv")
            print(f"fold {held}: {len(extra)} iterations, batch {extra.batch_size}, "
                  f"final lr {extra.lr[-1]:.6g}, final loss {extra.train_loss[-1]:.4f}")
        else:
            svm_baseline.save_model(model, base + ".svm")
            print(f"fold {held}: C={extra.C:g} gamma={extra.gamma:.6g} "
                  f"support vectors {model.n_support}")
    return EXIT_OK


def cmd_detect(args):
    if args.collar < 0:
        raise UsageError("--collar must be >= 0")
    model = _load_any_model(args.model)
    rec, rec32 = _read_recording_32(args.recording)
    det = pipeline.detect(model, rec32, args.threshold, args.collar)
    write_traces(args.output + ".trace.csv", rec.channel_names, det.channel_traces, det.fused)
    write_mask(args.output + ".mask.csv", det.mask)
    print(f"{rec.subject_id}: {len(det.mask)} s, {int(det.mask.sum())} s flagged")
    return EXIT_OK


def _evaluate_one(task):
    corpus, exp_dir, sid = task
    rec_path, ann_path = eeg_io.corpus_paths(corpus, sid)
    rec, ann = eeg_io.read_recording(rec_path), eeg_io.read_annotations(ann_path)
    subject = pipeline.prepare_subject(rec, ann)
    out = {}
    for kind, ext in (("svm", ".svm"), ("fcnn", ".fcn")):
        path = os.path.join(exp_dir, f"fold_{sid}{ext}")
        load = svm_baseline.load_model if kind == "svm" else fcnn.load_model
        score = pipeline.score_subject(load(path), subject)
        out[kind] = (score.auc, score.auc90)
    return out


def _fmt(v):
    return "undefined" if np.isnan(v) else f"{v:.4f}"


def cmd_evaluate(args):
    if not os.path.isdir(args.corpus):
        raise DataError(f"corpus directory {args.corpus} does not exist")
    ids = eeg_io.list_corpus(args.corpus)
    if not ids:
        raise DataError(f"{args.corpus}: no *.rec.csv recordings found")
    missing = [f"fold_{sid}{ext}" for sid in ids for ext in (".svm", ".fcn")
               if not os.path.exists(os.path.join(args.experiment_dir, f"fold_{sid}{ext}"))]
    if missing:
        raise DataError(f"missing fold model(s) in {args.experiment_dir}: {', '.join(missing)}")
    tasks = [(args.corpus, args.experiment_dir, sid) for sid in ids]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_evaluate_one, tasks))
    else:
        results = [_evaluate_one(t) for t in tasks]
    table = np.array([[r["svm"][0], r["fcnn"][0], r["svm"][1], r["fcnn"][1]] for r in results])
    with open(args.output, "w") as fh:
        fh.write(",".join(RESULTS_HEADER) + "\n")
        for sid, row in zip(ids, table):
            fh.write(",".join([sid, *map(_fmt, row)]) + "\n")
        with np.errstate(all="ignore"):
            means = [np.nanmean(col) if np.isfinite(col).any() else np.nan for col in table.T]
        fh.write(",".join(["average", *map(_fmt, means)]) + "\n")
    print(f"average AUC svm {_fmt(means[0])} fcnn {_fmt(means[1])}; "
          f"AUC90 svm {_fmt(means[2])} fcnn {_fmt(means[3])}")
    return EXIT_OK


def cmd_localize(args):
    model = _load_any_model(args.model)
    if not isinstance(model, fcnn.FcnnModel):
        raise DataError("localization needs a network (.fcn) model")
    rec, rec32 = _read_recording_32(args.recording)
    names = rec.channel_names
    if args.channel in names:
        ch = names.index(args.channel)
    else:
        try:
            ch = int(args.channel)
        except ValueError:
            raise UsageError(f"unknown channel {args.channel!r}") from None
        if not 0 <= ch < len(names):
            raise UsageError(f"channel index {ch} out of range 0..{len(names) - 1}")
    n = rec32.n_samples
    rows = []
    for start_s in args.epoch_start:
        first = start_s * TARGET_FS
        if first != int(first) or first < 0 or first + fcnn.INPUT_LENGTH > n:
            raise DataError(f"epoch starting at {start_s:g} s is outside the recording "
                            f"(valid starts: 0..{(n - fcnn.INPUT_LENGTH) / TARGET_FS:g} s "
                            f"on the 1/32 s grid)")
        first = int(first)
        window = standardize(rec32.samples[ch, first:first + fcnn.INPUT_LENGTH])
        for lo, hi, score in fcnn.localize(model, window, args.top_n):
            rows.append((names[ch], start_s + lo / TARGET_FS, start_s + hi / TARGET_FS, score))
    with open(args.output, "w") as fh:
        fh.write("channel,start_s,end_s,score\n")
        for name, lo, hi, score in rows:
            fh.write(f"{name},{lo:.5f},{hi:.5f},{score:.9g}\n")
    print(f"{len(rows)} window(s) written")
    return EXIT_OK


def cmd_inspect_model(args):
    model = _load_any_model(args.model)
    if isinstance(model, svm_baseline.SvmModel):
        print(f"Gaussian-kernel SVM: {model.n_support} support vectors of dimension "
              f"{model.dim}, gamma {model.gamma:.6g}, bias {model.bias:.6g}, "
              f"Platt (a, b) = ({model.platt_a:.6g}, {model.platt_b:.6g})")
        return EXIT_OK
    per_layer, with_bn, without_bn = fcnn.count_params(model)
    trace = fcnn.forward(model, np.zeros(fcnn.INPUT_LENGTH), mode="infer")
    print(f"{'layer':<8}{'output':>10}{'params':>9}{'rf':>6}{'jump':>6}")
    print(f"{'input':<8}{'1x256':>10}")
    params = iter(per_layer)
    conv_index = 0
    for name, kind, _, _ in fcnn.ARCHITECTURE:
        maps, length = trace.outputs[name].shape[1:]
        shape = f"{maps}x{length}"
        if kind == "conv":
            conv_index += 1
            rf, jump = fcnn.receptive_field(conv_index)
            print(f"{name:<8}{shape:>10}{next(params):>9}{rf:>6}{jump:>6}")
        elif kind == "bn":
            print(f"{name:<8}{shape:>10}{next(params):>9}")
        else:
            print(f"{name:<8}{shape:>10}{0:>9}")
    print(f"{'gap':<8}{'2':>10}")
    print(f"{'softmax':<8}{'2':>10}")
    print(f"total parameters without batch norm: {without_bn}")
    print(f"total parameters with batch norm: {with_bn}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "features": cmd_features, "train-fcnn": cmd_train,
    "train-svm": cmd_train, "detect": cmd_detect, "evaluate": cmd_evaluate,
    "localize": cmd_localize, "inspect-model": cmd_inspect_model,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    _print_config(args)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"neoseize: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"neoseize: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, eeg_io.FormatError, fcnn.ModelFormatError,
            svm_baseline.ModelFormatError, OSError, ValueError, KeyError) as exc:
        print(f"neoseize: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
