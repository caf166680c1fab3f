"""Command-line pipeline: generate, ingest, train, infer, eval, rerun.

Every command writes a manifest.json into its output directory recording
the resolved arguments, seeds, package versions, and timings; `rerun
--manifest <path>` replays the recorded invocation. CSV reports are the
contract; plots are optional renderings of the same numbers.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 internal invariant violation.
"""

import argparse
import glob
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import (ConfigError, EmptyCorpusError, GespotError,
                     InvalidFpsError, InvalidMorError, InvariantViolation,
                     NoGroundTruthError, NoMatchesError, OutOfRangeError,
                     ParseError, SequenceTooShortError, ShapeError,
                     SingleSubjectError, SpecError)
from .infer import (ATTRIBUTIONS, load_detections, measure_step_latency,
                    run_offline_batched, write_detections)
from .metrics import evaluate
from .model import load_checkpoint
from .pose_io import AdapterConfig, load_corpus, save_corpus
from .synth import SynthConfig, generate_corpus
from .train import TrainConfig, train
from .util import write_text_atomic

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

_USAGE_ERRORS = (ConfigError, InvalidMorError, InvalidFpsError,
                 FileNotFoundError, NotADirectoryError)
_DATA_ERRORS = (ParseError, EmptyCorpusError, SequenceTooShortError,
                NoGroundTruthError, NoMatchesError, SingleSubjectError,
                OutOfRangeError)
_INTERNAL_ERRORS = (InvariantViolation, SpecError, ShapeError,
                    AssertionError)


def _write_manifest(out_dir, command, args_dict, timings=None, outputs=None):
    args_dict = {k: v for k, v in args_dict.items()
                 if k not in ("func", "command") and not callable(v)}
    manifest = {
        "command": command,
        "args": args_dict,
        "argv_resolved": _argv_from_args(command, args_dict),
        "versions": {"gespot": __version__,
                     "python": sys.version.split()[0],
                     "numpy": np.__version__},
        "timings": timings or {},
        "outputs": outputs or [],
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = os.path.join(out_dir, "manifest.json")
    write_text_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _argv_from_args(command, args_dict):
    argv = [command]
    for key, val in sorted(args_dict.items()):
        if val is None or val is False:
            continue
        flag = "--" + key.replace("_", "-")
        if val is True:
            argv.append(flag)
        elif isinstance(val, (list, tuple)):
            for v in val:
                argv.extend([flag, str(v)])
        else:
            argv.extend([flag, str(val)])
    return argv


def _load_synth_config(args):
    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        cfg = SynthConfig.from_yaml(args.config)
    else:
        cfg = SynthConfig.six_class()
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    return cfg.validate()


def cmd_generate(args):
    cfg = _load_synth_config(args)
    t0 = time.perf_counter()
    corpus = generate_corpus(cfg, args.n)
    os.makedirs(args.out, exist_ok=True)
    n_test = args.test or 0
    if n_test >= args.n:
        raise ConfigError(f"--test {n_test} must be < --n {args.n}")
    if n_test:
        paths = save_corpus(corpus[:args.n - n_test],
                            os.path.join(args.out, "train"))
        paths += save_corpus(corpus[args.n - n_test:],
                             os.path.join(args.out, "test"))
    else:
        paths = save_corpus(corpus, args.out)
    cfg_path = os.path.join(args.out, "synth_config.yaml")
    write_text_atomic(cfg_path, cfg.to_yaml())
    dict_path = os.path.join(args.out, "dictionary.json")
    write_text_atomic(dict_path, json.dumps(cfg.dictionary().to_mapping(),
                                            indent=2) + "\n")
    resolved = dict(vars(args))
    resolved["config"] = cfg_path
    _write_manifest(args.out, "generate", resolved,
                    timings={"generate_s": time.perf_counter() - t0},
                    outputs=[os.path.basename(p) for p in paths])
    print(f"wrote {len(paths)} sequences to {args.out}")
    return EXIT_OK


def _load_train_config(args):
    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        cfg = TrainConfig.from_yaml(args.config)
    else:
        cfg = TrainConfig()
    overrides = {}
    for name in ("w", "stride", "batch_size", "epochs", "seed"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    if args.lr is not None:
        overrides["lr"] = args.lr
    if args.optimizer:
        overrides["optimizer"] = args.optimizer
    if args.head_set:
        overrides["head_set"] = args.head_set
    if args.on_off_policy:
        policy = args.on_off_policy
        if ":" in policy:
            policy, p = policy.split(":", 1)
            try:
                overrides["policy_p"] = float(p)
            except ValueError:
                raise ConfigError(f"bad policy probability {p!r}") from None
        overrides["on_off_policy"] = policy
    if overrides:
        from dataclasses import replace
        cfg = replace(cfg, **overrides)
    return cfg.validate()


def cmd_train(args):
    cfg = _load_train_config(args)
    corpus = load_corpus(args.data)
    t0 = time.perf_counter()
    last_row = {}

    def progress(row):
        last_row.update(row)
        if args.verbose:
            print(f"epoch {row['epoch']}: loss {row['loss']:.4f} "
                  f"acc {row['window_accuracy']:.3f}")

    result = train(corpus, cfg, out_dir=args.out, progress=progress)
    train_s = time.perf_counter() - t0
    resolved = dict(vars(args))
    resolved["config"] = os.path.join(args.out, "train_config.yaml")
    _write_manifest(args.out, "train", resolved,
                    timings={"train_s": train_s,
                             "final_window_accuracy":
                                 last_row.get("window_accuracy")},
                    outputs=["checkpoint_last.ckpt", "checkpoint_best.ckpt",
                             "train_log.csv", "train_config.yaml"])
    print(f"trained {cfg.epochs} epochs in {train_s:.1f}s; "
          f"best epoch {result.best_epoch} "
          f"(window accuracy "
          f"{result.log[result.best_epoch]['window_accuracy']:.3f})")
    return EXIT_OK


def cmd_infer(args):
    if not os.path.exists(args.checkpoint):
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    params, feature, _ = load_checkpoint(args.checkpoint)
    if args.w is not None and args.w != params.spec.w:
        raise ConfigError(
            f"--w {args.w} does not match checkpoint W={params.spec.w}")
    corpus = load_corpus(args.data)
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    t0 = time.perf_counter()
    total_frames = 0
    for seq in corpus:
        events, _track = run_offline_batched(seq, params, feature=feature,
                                             attribution=args.attribution)
        name = f"{seq.source_id}.det"
        write_detections(os.path.join(args.out, name), seq.source_id, events)
        outputs.append(name)
        total_frames += len(seq)
    wall = time.perf_counter() - t0
    timings = {"infer_s": wall, "frames": total_frames,
               "ms_per_frame_batched": 1e3 * wall / max(total_frames, 1)}
    if args.latency:
        timings["step_latency"] = measure_step_latency(params, n_frames=1000,
                                                       feature=feature)
    _write_manifest(args.out, "infer", dict(vars(args)), timings=timings,
                    outputs=outputs)
    print(f"wrote detections for {len(corpus)} sequences to {args.out} "
          f"({timings['ms_per_frame_batched']:.2f} ms/frame batched)")
    if args.latency:
        s = timings["step_latency"]
        print(f"per-step latency p50 {s['p50_ms']:.2f} ms, "
              f"p95 {s['p95_ms']:.2f} ms, max {s['max_ms']:.2f} ms")
    return EXIT_OK


def _parse_sweep(text):
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(
            f"bad sweep {text!r}, expected lo:hi:step") from None
    if step <= 0 or lo <= 0 or hi > 1.0 or lo > hi:
        raise ConfigError(f"bad sweep range {text!r}")
    vals = []
    v = lo
    while v <= hi + 1e-12:
        vals.append(round(v, 10))
        v += step
    return vals


def cmd_eval(args):
    corpus = load_corpus(args.gt)
    gt = {seq.source_id: seq.annotations for seq in corpus}
    det = {}
    if os.path.isdir(args.detections):
        files = sorted(glob.glob(os.path.join(args.detections, "*.det")))
        if not files:
            raise EmptyCorpusError(f"no .det files in {args.detections}")
        for path in files:
            for seq_id, events in load_detections(path).items():
                det.setdefault(seq_id, []).extend(events)
    elif os.path.exists(args.detections):
        det = load_detections(args.detections)
    else:
        raise ConfigError(f"detections not found: {args.detections}")
    categories = None
    dict_path = args.dictionary
    if dict_path is None:
        guess = os.path.join(args.gt, "dictionary.json")
        dict_path = guess if os.path.exists(guess) else None
    if dict_path:
        with open(dict_path) as f:
            mapping = json.load(f)
        categories = {int(k): v for k, v in
                      (mapping.get("categories") or {}).items() if v}
    sweep = _parse_sweep(args.ji_mor_sweep) if args.ji_mor_sweep else None
    fps = args.fps if args.fps is not None else (
        corpus[0].fps if corpus else None)
    report = evaluate(gt, det, mor=args.mor, protocol=args.protocol,
                      fps=fps, ji_sweep=sweep, categories=categories)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.csv")
    write_text_atomic(report_path, report.to_csv())
    outputs = ["report.csv"]
    if args.plots:
        outputs += _render_plots(report, args.out)
    _write_manifest(args.out, "eval", dict(vars(args)), outputs=outputs)
    print(f"DR {report.dr:.3f} ({report.dr_std:.3f})  "
          f"FP {report.fp:.3f} ({report.fp_std:.3f})  "
          f"JI {report.ji:.3f} ({report.ji_std:.3f})  "
          f"delay {report.mean_delay:.2f}")
    return EXIT_OK


def _render_plots(report, out_dir):
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not installed; skipping plots", file=sys.stderr)
        return []
    written = []
    if report.ji_mor:
        fig, ax = plt.subplots()
        xs, ys = zip(*report.ji_mor)
        ax.plot(xs, ys, marker="o")
        ax.set_xlabel("minimum overlap ratio")
        ax.set_ylabel("Jaccard index")
        fig.savefig(os.path.join(out_dir, "ji_mor.png"), dpi=120)
        plt.close(fig)
        written.append("ji_mor.png")
    if report.per_class_dr:
        fig, ax = plt.subplots()
        labels = sorted(report.per_class_dr)
        drs = [report.per_class_dr[l][0] / max(report.per_class_dr[l][1], 1)
               for l in labels]
        ax.bar([str(l) for l in labels], drs)
        ax.set_xlabel("class")
        ax.set_ylabel("detection rate")
        fig.savefig(os.path.join(out_dir, "per_class_dr.png"), dpi=120)
        plt.close(fig)
        written.append("per_class_dr.png")
    if report.fp_by_category or report.fp_by_label:
        fig, ax = plt.subplots()
        src = report.fp_by_category or report.fp_by_label
        keys = sorted(src, key=str)
        ax.bar([str(k) for k in keys], [src[k] for k in keys])
        ax.set_xlabel("category" if report.fp_by_category else "label")
        ax.set_ylabel("false positives")
        fig.savefig(os.path.join(out_dir, "fp_breakdown.png"), dpi=120)
        plt.close(fig)
        written.append("fp_breakdown.png")
    return written


def cmd_ingest(args):
    if args.adapter:
        adapter = AdapterConfig.from_yaml(args.adapter)
    elif args.format == "shrec22":
        adapter = AdapterConfig.shrec22()
    elif args.format == "shrec19":
        adapter = AdapterConfig.shrec19()
    else:
        raise ConfigError("ingest needs --format shrec22|shrec19 or --adapter")
    corpus = load_corpus(args.data, format=args.format or "shrec22",
                         adapter=adapter, annotations_file=args.annotations)
    os.makedirs(args.out, exist_ok=True)
    paths = save_corpus(corpus, args.out)
    _write_manifest(args.out, "ingest", dict(vars(args)),
                    outputs=[os.path.basename(p) for p in paths])
    print(f"ingested {len(paths)} sequences into {args.out}")
    return EXIT_OK


def cmd_rerun(args):
    if not os.path.exists(args.manifest):
        raise ConfigError(f"manifest not found: {args.manifest}")
    with open(args.manifest) as f:
        manifest = json.load(f)
    argv = manifest.get("argv_resolved")
    if not argv:
        raise ConfigError(f"{args.manifest}: no argv_resolved entry")
    print(f"replaying: gespot {' '.join(argv)}")
    return main(argv)


def build_parser():
    p = argparse.ArgumentParser(
        prog="gespot",
        description="Continuous hand-gesture recognition: synthetic data, "
                    "gated multi-task training, streaming inference, and "
                    "benchmark evaluation.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic corpus")
    g.add_argument("--config", help="synth config YAML (default: built-in "
                                    "6-class dictionary)")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=20, help="number of sequences")
    g.add_argument("--test", type=int, default=0,
                   help="reserve this many trailing sequences under test/")
    g.add_argument("--seed", type=int, default=None)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a recognizer on a corpus")
    t.add_argument("--data", required=True, help="canonical corpus directory")
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="train config YAML")
    t.add_argument("--w", type=int, default=None)
    t.add_argument("--stride", type=int, default=None)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--optimizer", choices=("adafactor", "adam"), default=None)
    t.add_argument("--head-set", dest="head_set", default=None,
                   choices=("FG", "FG+GS/GE", "FG+SDN", "FG+SDN+GC", "full"))
    t.add_argument("--on-off-policy", dest="on_off_policy", default=None,
                   help="exact | index_error | window_error[:p]")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="run streaming inference over sequences")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--w", type=int, default=None,
                   help="assert the checkpoint window length")
    i.add_argument("--attribution", choices=ATTRIBUTIONS, default="center")
    i.add_argument("--latency", action="store_true",
                   help="measure true per-step latency")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="evaluate detections against ground truth")
    e.add_argument("--gt", required=True, help="canonical corpus directory")
    e.add_argument("--detections", required=True,
                   help="directory of .det files or a single file")
    e.add_argument("--out", required=True)
    e.add_argument("--mor", type=float, default=0.5)
    e.add_argument("--protocol", choices=("shrec22", "shrec19"),
                   default="shrec22")
    e.add_argument("--fps", type=float, default=None)
    e.add_argument("--ji-mor-sweep", dest="ji_mor_sweep", default=None,
                   help="lo:hi:step, e.g. 0.05:1.0:0.05")
    e.add_argument("--dictionary", default=None,
                   help="dictionary.json for the category breakdown")
    e.add_argument("--plots", action="store_true")
    e.set_defaults(func=cmd_eval)

    n = sub.add_parser("ingest", help="convert external recordings to the "
                                      "canonical format")
    n.add_argument("--data", required=True)
    n.add_argument("--out", required=True)
    n.add_argument("--format", choices=("shrec22", "shrec19"), default=None)
    n.add_argument("--annotations", default=None)
    n.add_argument("--adapter", default=None, help="adapter YAML")
    n.set_defaults(func=cmd_ingest)

    r = sub.add_parser("rerun", help="replay a recorded run")
    r.add_argument("--manifest", required=True)
    r.set_defaults(func=cmd_rerun)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except _USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except _INTERNAL_ERRORS as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except GespotError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()
