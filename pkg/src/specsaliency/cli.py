"""Batch command-line driver.

Subcommands: featurize, segment, explain, evaluate, analyze, render.
Exit codes: 0 success, 1 partial failure, 2 configuration error.

Configuration may come from a flat-key JSON file (--config); command-line
flags override file values. Every explain run echoes its fully resolved
scientific configuration both into each bundle and into run.json, so a run
can be reproduced from its own outputs.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, engine, metrics
from .audio import cmvn, log_mel, read_spectrogram, read_wav, write_spectrogram
from .errors import DomainError, FormatError
from .masks import BubbleConfig, PerturbationConfig
from .oracle import RemoteOracle, ToyOracle
from .segmentation import (
    SegmentationConfig,
    multiscale_segment,
    patch_count,
    slic,
    write_segmentation,
)

log = logging.getLogger("specsaliency")

ORACLE_URL_ENV = "SPECSALIENCY_ORACLE_URL"
TAU_BY_TASK = {"asr": 7.5, "st": 5.0}
FIXED_K = (2000, 2500, 3000)  # duration-adaptation ablation

METHOD_DEFAULTS = {
    engine.METHOD_SPES: {"n_spec_iters": 20000, "p_spec": 0.5, "p_tok": 0.4},
    engine.METHOD_FEATURE_WISE: {
        "n_spec_iters": 20000, "p_spec": 0.7, "p_tok": 0.1,
    },
    engine.METHOD_BUBBLE: {"n_spec_iters": 1000, "p_spec": 0.5, "p_tok": 0.4},
}

CONFIG_KEYS = (
    "n_spec_iters", "n_tok_iters", "p_spec", "p_tok", "rng_seed",
    "phis", "tau_s", "compactness", "n_iters", "sigma",
)


class ConfigError(Exception):
    pass


def load_manifest(path):
    path = Path(path)
    try:
        entries = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"manifest {path} must be a non-empty JSON list")
    seen = set()
    for entry in entries:
        for key in ("id", "wav_path", "reference"):
            if key not in entry:
                raise ConfigError(f"manifest entry missing '{key}': {entry}")
        if entry["id"] in seen:
            raise ConfigError(f"duplicate manifest id '{entry['id']}'")
        seen.add(entry["id"])
        entry.setdefault("target_task", "asr")
        if entry["target_task"] not in TAU_BY_TASK:
            raise ConfigError(
                f"unknown target_task '{entry['target_task']}' "
                f"for id '{entry['id']}'"
            )
    return entries, path.parent


def _file_config(path):
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    unknown = set(cfg) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def resolve_configs(args, method):
    """Merge method defaults, config file, and CLI flags (flags win)."""
    resolved = {
        "n_spec_iters": 20000, "n_tok_iters": 2000,
        "p_spec": 0.5, "p_tok": 0.4, "rng_seed": 0,
        "phis": [400.0, 500.0, 600.0], "tau_s": None,
        "compactness": 10.0, "n_iters": 10, "sigma": 0.0,
    }
    resolved.update(METHOD_DEFAULTS[method])
    resolved.update(_file_config(getattr(args, "config", None)))
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    if getattr(args, "no_multiscale", False):
        resolved["phis"] = [500.0]
    if getattr(args, "grid", False):
        resolved["sigma"] = 10.0
    return resolved


def _configs_from_resolved(resolved, tau_s):
    try:
        pert = PerturbationConfig(
            n_spec_iters=int(resolved["n_spec_iters"]),
            n_tok_iters=int(resolved["n_tok_iters"]),
            p_spec=float(resolved["p_spec"]),
            p_tok=float(resolved["p_tok"]),
            rng_seed=int(resolved["rng_seed"]),
        )
        seg = SegmentationConfig(
            phis=tuple(float(p) for p in resolved["phis"]),
            tau_s=float(tau_s),
            compactness=float(resolved["compactness"]),
            n_iters=int(resolved["n_iters"]),
            sigma=float(resolved["sigma"]),
        )
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    return pert, seg


def make_oracle(spec):
    if spec == "toy":
        return ToyOracle()
    if spec == "remote":
        url = os.environ.get(ORACLE_URL_ENV)
        if not url:
            raise ConfigError(
                f"--oracle remote needs {ORACLE_URL_ENV} or remote:URL"
            )
        return RemoteOracle(url)
    if spec.startswith("remote:"):
        return RemoteOracle(spec.split(":", 1)[1])
    raise ConfigError(f"unknown oracle '{spec}' (expected toy or remote:URL)")


def _featurize_wav(path):
    return cmvn(log_mel(read_wav(path)))


def _echo_command_config(out_dir, command, payload):
    """Every directory-producing command leaves its resolved settings behind."""
    path = Path(out_dir) / f"{command}_run.json"
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))


def cmd_featurize(args):
    spec = log_mel(read_wav(args.wav))
    if not args.no_cmvn:
        spec = cmvn(spec)
    write_spectrogram(args.out, spec)
    print(f"wrote {args.out} ({spec.n_frames}x{spec.n_mels})")
    return 0


def cmd_segment(args):
    x = read_spectrogram(args.spec)
    resolved = resolve_configs(args, engine.METHOD_SPES)
    tau = resolved["tau_s"] if resolved["tau_s"] is not None else TAU_BY_TASK["asr"]
    _, seg_cfg = _configs_from_resolved(resolved, tau)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for phi in seg_cfg.phis:
        k = patch_count(x.duration_s, seg_cfg.tau_s, phi)
        seg = slic(x, k, seg_cfg)
        seg.scale_phi = float(phi)
        out = out_dir / f"phi{int(phi)}.seg"
        write_segmentation(out, seg, k)
        print(f"wrote {out} (k={k}, patches={seg.n_patches})")
    _echo_command_config(
        out_dir, "segment",
        {"spec": str(args.spec), "config": {k: resolved[k] for k in CONFIG_KEYS},
         "tau_s": seg_cfg.tau_s},
    )
    return 0


def _bundle_meta(resolved, method, impact, tau_s):
    cfg = {key: resolved[key] for key in CONFIG_KEYS if key != "tau_s"}
    cfg["tau_s"] = tau_s
    return {"method": method, "impact": impact, "config": cfg}


def cmd_explain(args):
    entries, root = load_manifest(args.manifest)
    oracle = make_oracle(args.oracle)
    resolved = resolve_configs(args, args.method)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = []
    timings = {}
    for entry in entries:
        utt_id = entry["id"]
        started = time.perf_counter()
        try:
            tau = resolved["tau_s"]
            if tau is None:
                tau = TAU_BY_TASK[entry["target_task"]]
            pert, seg_cfg = _configs_from_resolved(resolved, tau)
            x = _featurize_wav(root / entry["wav_path"])
            y = oracle.decode(x)
            seg_maps = None
            if args.method == engine.METHOD_SPES and args.no_duration_adaptation:
                ks = FIXED_K if len(seg_cfg.phis) > 1 else (FIXED_K[1],)
                seg_maps = [slic(x, k, seg_cfg) for k in ks]
            bundle = engine.explain_utterance(
                oracle, x, y, pert,
                seg_cfg=seg_cfg, seg_maps=seg_maps,
                method=args.method, impact=args.impact,
                bubble_cfg=BubbleConfig(frame_stride_s=x.frame_stride_s),
                workers=args.workers, utt_id=utt_id,
                meta=_bundle_meta(resolved, args.method, args.impact, tau),
            )
            engine.write_bundle(out_dir / f"{utt_id}.bundle", bundle)
        except Exception as exc:
            log.error("utterance %s failed: %s", utt_id, exc)
            failures.append({"id": utt_id, "error": str(exc)})
            continue
        timings[utt_id] = round(time.perf_counter() - started, 3)
    config_blob = json.dumps(
        {k: resolved[k] for k in CONFIG_KEYS}, sort_keys=True
    )
    run_log = {
        "oracle": args.oracle,
        "method": args.method,
        "impact": args.impact,
        "seed": resolved["rng_seed"],
        "config": json.loads(config_blob),
        "config_hash": hashlib.sha256(config_blob.encode()).hexdigest(),
        "workers": args.workers,
        "timings_s": timings,
        "failures": failures,
    }
    (out_dir / "run.json").write_text(json.dumps(run_log, indent=1, sort_keys=True))
    print(
        f"explained {len(timings)}/{len(entries)} utterances -> {out_dir}"
        + (f" ({len(failures)} failed)" if failures else "")
    )
    return 1 if failures else 0


def _load_bundles(bundles_dir, entries):
    bundles = {}
    missing = []
    for entry in entries:
        path = Path(bundles_dir) / f"{entry['id']}.bundle"
        if not path.exists():
            missing.append(entry["id"])
            continue
        bundles[entry["id"]] = engine.read_bundle(path)
    if missing:
        raise ConfigError(
            f"missing bundles for manifest ids: {', '.join(missing)}"
        )
    return bundles


def cmd_evaluate(args):
    entries, root = load_manifest(args.manifest)
    bundles = _load_bundles(args.bundles_dir, entries)
    out_dir = Path(args.out_dir or args.bundles_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.metric == "size":
        curve = metrics.size_curve([bundles[e["id"]] for e in entries])
        metric_name = "size"
    else:
        if args.oracle is None:
            raise ConfigError("deletion evaluation needs --oracle")
        oracle = make_oracle(args.oracle)
        task_metric = args.task_metric
        if task_metric is None:
            task_metric = "wer" if entries[0]["target_task"] == "asr" else "bleu"
        corpus = [
            (e["id"], _featurize_wav(root / e["wav_path"]), e["reference"])
            for e in entries
        ]
        curve = metrics.deletion_curve(oracle, corpus, bundles, task_metric)
        metric_name = f"deletion-{task_metric}"
    csv_path = out_dir / f"{metric_name}.csv"
    csv_path.write_text(metrics.curve_to_csv(curve))
    json_path = out_dir / f"{metric_name}.json"
    json_path.write_text(metrics.curve_to_json(curve, metric_name))
    _echo_command_config(
        out_dir, "evaluate",
        {"metric": args.metric, "task_metric": getattr(args, "task_metric", None),
         "oracle": args.oracle, "bundles_dir": str(args.bundles_dir)},
    )
    print(f"{metric_name} auc={curve.auc:.4f} -> {csv_path}")
    return 0


def _load_alignments(entries, root):
    alignments = {}
    for entry in entries:
        path = entry.get("alignment_path")
        if not path:
            continue
        items = json.loads((root / path).read_text())
        alignments[entry["id"]] = [
            analysis.WordAlignment(a["word"], a["start_s"], a["end_s"])
            for a in items
        ]
    return alignments


def _write_report(out_dir, name, rows, header):
    path = Path(out_dir) / f"{name}.csv"
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def cmd_analyze(args):
    entries, root = load_manifest(args.manifest)
    bundles_by_id = _load_bundles(args.bundles_dir, entries)
    bundles = [bundles_by_id[e["id"]] for e in entries]
    out_dir = Path(args.out_dir or args.bundles_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.report == "time":
        alignments = _load_alignments(entries, root)
        if not alignments:
            raise ConfigError("time report needs alignment_path entries")
        res = analysis.time_alignment_test(bundles, alignments)
        path = _write_report(
            out_dir, "time",
            [[res.mean_in, res.mean_out, res.t_stat, res.p_value,
              res.n_words, res.n_skipped]],
            ["mean_in", "mean_out", "t_stat", "p_value", "n_words", "n_skipped"],
        )
        print(
            f"inside {res.mean_in:.4f} vs outside {res.mean_out:.4f} "
            f"(t={res.t_stat:.3f}, p={res.p_value:.2e}) -> {path}"
        )
    elif args.report == "frequency":
        if not args.word:
            raise ConfigError("frequency report needs --word")
        alignments = _load_alignments(entries, root)
        occurrences = [
            (utt_id, a.start_s, a.end_s)
            for utt_id, aligns in alignments.items()
            for a in aligns
            if a.word.lower() == args.word.lower()
        ]
        profile = analysis.frequency_profile(bundles, args.word, occurrences)
        if profile is None:
            raise ConfigError(f"no aligned occurrences of '{args.word}'")
        path = _write_report(
            out_dir, f"frequency_{args.word}",
            [[c, v] for c, v in enumerate(profile)],
            ["channel", "mean_time_max_saliency"],
        )
        print(f"profile over {len(profile)} channels -> {path}")
    elif args.report == "kurtosis":
        rows = analysis.kurtosis_by_token(bundles, min_count=args.min_count)
        path = _write_report(
            out_dir, "kurtosis",
            [[r["token"], r["occurrences"], r["mean_kurtosis"], r["skipped"]]
             for r in rows],
            ["token", "occurrences", "mean_kurtosis", "skipped"],
        )
        print(f"{len(rows)} token types -> {path}")
    elif args.report == "positions":
        stats = analysis.positional_stats(bundles)
        rows = []
        for name, vals in stats.groups.items():
            mean = float(np.mean(vals)) if vals else float("nan")
            rows.append([name, len(vals), mean])
        tests = [
            ["lt_gt_it"] + (list(stats.lt_vs_it) if stats.lt_vs_it else ["", ""]),
            ["start_gt_it"]
            + (list(stats.start_vs_it) if stats.start_vs_it else ["", ""]),
        ]
        path = _write_report(
            out_dir, "positions", rows, ["group", "count", "mean"]
        )
        _write_report(out_dir, "positions_tests", tests, ["test", "t", "p"])
        print(f"group means -> {path}")
    elif args.report == "intermediate":
        rows = analysis.intermediate_token_report(bundles, min_count=args.min_count)
        path = _write_report(
            out_dir, "intermediate",
            [[r["token"], r["occurrences"], round(r["it_max_pct"], 2),
              ";".join(f"{t}:{c}" for t, c in r["top_its"])]
             for r in rows],
            ["token", "occurrences", "it_max_pct", "top_its"],
        )
        print(f"{len(rows)} tokens -> {path}")
    else:
        raise ConfigError(f"unknown report '{args.report}'")
    _echo_command_config(
        out_dir, "analyze",
        {"report": args.report, "word": args.word, "min_count": args.min_count,
         "bundles_dir": str(args.bundles_dir)},
    )
    return 0


def cmd_render(args):
    try:
        bundle = engine.read_bundle(args.bundle)
    except FormatError as exc:
        raise ConfigError(str(exc)) from exc
    overlay_frames = None
    if args.overlay:
        if not args.spec:
            raise ConfigError("--overlay needs --spec for the background")
        overlay_frames = read_spectrogram(args.spec).frames
    from .render import render_bundle

    render_bundle(
        bundle, args.out, token=args.token,
        overlay_frames=overlay_frames, scale=args.scale,
    )
    print(f"wrote {args.out}")
    return 0


def _add_config_flags(parser):
    parser.add_argument("--config", help="flat-key JSON config file")
    parser.add_argument("--n-spec-iters", dest="n_spec_iters", type=int)
    parser.add_argument("--n-tok-iters", dest="n_tok_iters", type=int)
    parser.add_argument("--p-spec", dest="p_spec", type=float)
    parser.add_argument("--p-tok", dest="p_tok", type=float)
    parser.add_argument("--seed", dest="rng_seed", type=int)
    parser.add_argument("--phi", dest="phis", type=float, nargs="+")
    parser.add_argument("--tau", dest="tau_s", type=float)
    parser.add_argument("--compactness", type=float)
    parser.add_argument("--slic-iters", dest="n_iters", type=int)
    parser.add_argument("--sigma", type=float)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="specsaliency",
        description="Perturbation-based saliency for speech-to-text models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="WAV to normalized log-mel file")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-cmvn", action="store_true")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("segment", help="segment a spectrogram file")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("explain", help="produce saliency bundles")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--oracle", default="toy", help="toy or remote:URL")
    p.add_argument(
        "--method",
        choices=[engine.METHOD_SPES, engine.METHOD_FEATURE_WISE,
                 engine.METHOD_BUBBLE],
        default=engine.METHOD_SPES,
    )
    p.add_argument(
        "--impact", choices=[engine.IMPACT_KL, engine.IMPACT_PROB_DIFF],
        default=engine.IMPACT_KL,
    )
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-multiscale", action="store_true",
                   help="single scale, phi = 500")
    p.add_argument("--grid", action="store_true",
                   help="grid-like segmentation (sigma = 10)")
    p.add_argument("--no-duration-adaptation", action="store_true",
                   help=f"fixed patch counts {FIXED_K}")
    _add_config_flags(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", help="deletion or size curves")
    p.add_argument("--manifest", required=True)
    p.add_argument("--bundles-dir", required=True)
    p.add_argument("--metric", choices=["deletion", "size"], required=True)
    p.add_argument("--oracle", help="needed for deletion")
    p.add_argument("--task-metric", choices=["wer", "bleu"])
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="plausibility reports")
    p.add_argument("--manifest", required=True)
    p.add_argument("--bundles-dir", required=True)
    p.add_argument(
        "--report", required=True,
        choices=["time", "frequency", "kurtosis", "positions", "intermediate"],
    )
    p.add_argument("--word")
    p.add_argument("--min-count", type=int, default=100)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("render", help="heatmap PNG from a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--token", type=int, help="token index (default: sentence map)")
    p.add_argument("--overlay", action="store_true")
    p.add_argument("--spec", help="spectrogram file for the overlay")
    p.add_argument("--scale", type=int, default=4)
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    except (DomainError, FormatError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
