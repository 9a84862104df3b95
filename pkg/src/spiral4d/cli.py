"""Command-line orchestration of the full pipeline.

Commands: precompute | synth-data | train | generate | evaluate | baseline |
classify | interpolate. Each command reads an optional flat config file,
applies flag overrides, echoes the resolved configuration and seed, and
stamps the config hash into everything it writes. Exit code 0 on success,
nonzero with a one-line diagnostic on failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import baseline as baseline_mod
from . import evaluate as eval_mod
from . import model as model_mod
from .config import RunConfig, resolve_config
from .labels import (EXPRESSIONS, MotionLabel, ExpressionSequence,
                     load_dataset, load_split, save_dataset, split_sequences,
                     synth_dataset)
from .mesh import load_mesh, save_mesh
from .sampling import build_hierarchy, load_cache, save_cache
from .spiral import build_spiral_table, choose_reference_vertex, nearest_vertex


def _require(cfg: RunConfig, *keys):
    for k in keys:
        if not getattr(cfg, k):
            raise ValueError(f"config key {k!r} is required for this command")


def _canonical_phases(frames: int):
    raw = [round(0.10 * frames), round(0.30 * frames),
           round(0.80 * frames), round(0.95 * frames)]
    ts = np.minimum(np.maximum.accumulate(raw), frames - 1)
    return tuple(int(t) for t in ts)


def _label_from_config(cfg: RunConfig) -> MotionLabel:
    ts = (cfg.t_onset, cfg.t_apex_start, cfg.t_apex_end, cfg.t_offset_end)
    if any(t < 0 for t in ts):
        ts = _canonical_phases(cfg.frames)
    return MotionLabel(expression=cfg.expression, frames=cfg.frames,
                       t_onset=ts[0], t_apex_start=ts[1], t_apex_end=ts[2],
                       t_offset_end=ts[3], scale=cfg.scale)


def _write_meta(directory, cfg: RunConfig, extra=None):
    meta = {"config_hash": cfg.config_hash()}
    meta.update(extra or {})
    with open(os.path.join(directory, "run_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def _load_cache_checked(cfg: RunConfig):
    _require(cfg, "cache")
    hierarchy, tables, meta, content_hash = load_cache(cfg.cache)
    return hierarchy, tables, meta, content_hash


def _load_generator_checked(path, cache_hash):
    params, meta = model_mod.load_generator(path)
    stored = meta.get("hierarchy_hash", "")
    if stored and stored != cache_hash:
        raise ValueError(
            f"checkpoint {path} was trained against a different hierarchy "
            f"(hash {stored[:12]}.. vs cache {cache_hash[:12]}..)"
        )
    return params, meta


def _train_split(cfg: RunConfig):
    sequences, stats = load_dataset(cfg.dataset)
    test_ids = load_split(cfg.dataset)
    return split_sequences(sequences, test_ids) + (stats,)


def cmd_precompute(cfg: RunConfig) -> int:
    _require(cfg, "template", "cache")
    template = load_mesh(cfg.template)
    hierarchy = build_hierarchy(template, cfg.factor_list())
    ref_fine = choose_reference_vertex(template, cfg.reference_spec())
    ref_pos = template.vertices[ref_fine]
    length = cfg.spiral_length or None
    tables = []
    for lvl, mesh in enumerate(hierarchy.levels):
        ref = nearest_vertex(mesh, ref_pos)
        tables.append(build_spiral_table(mesh, k=cfg.spiral_k, length=length,
                                         reference_vertex=ref, level=lvl))
    content_hash = save_cache(cfg.cache, hierarchy, tables, meta={
        "config_hash": cfg.config_hash(),
        "template": cfg.template,
        "factors": cfg.factors,
        "spiral_k": str(cfg.spiral_k),
        "reference_vertex": str(cfg.reference_vertex),
    })
    print(f"levels: {hierarchy.sizes}")
    print(f"spiral lengths: {[t.length for t in tables]}")
    print(f"cache written: {cfg.cache} (hash {content_hash[:16]})")
    return 0


def cmd_synth_data(cfg: RunConfig) -> int:
    _require(cfg, "template", "dataset")
    template = load_mesh(cfg.template)
    sequences, stats = synth_dataset(
        template, n_subjects=cfg.subjects, expressions=EXPRESSIONS,
        frames=cfg.frames, seed=cfg.seed, noise_std=cfg.noise_std,
    )
    subjects = sorted({s.subject for s in sequences})
    n_test = min(cfg.test_subjects, max(0, len(subjects) - 1))
    test_ids = subjects[len(subjects) - n_test:] if n_test else []
    save_dataset(cfg.dataset, sequences, test_subjects=test_ids)
    _write_meta(cfg.dataset, cfg, {"subjects": len(subjects),
                                   "test_subjects": len(test_ids),
                                   "sequences": len(sequences)})
    print(f"wrote {len(sequences)} sequences for {len(subjects)} subjects "
          f"({len(test_ids)} held out) under {cfg.dataset}")
    return 0


def _history_paths(checkpoint_path):
    base = os.path.splitext(checkpoint_path)[0]
    return base + ".history.json", base + ".metrics.log"


def _write_history(checkpoint_path, cfg, history, extra=None):
    hist_path, log_path = _history_paths(checkpoint_path)
    payload = {"config_hash": cfg.config_hash(), "history": history}
    payload.update(extra or {})
    with open(hist_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash {cfg.config_hash()}\n")
        fh.write("# epoch lr loss\n")
        for h in history:
            fh.write(f"{h['epoch']} {h['lr']:.9g} {h['loss']:.9g}\n")


def _train_config(cfg: RunConfig) -> model_mod.TrainConfig:
    return model_mod.TrainConfig(
        epochs=cfg.epochs, learning_rate=cfg.learning_rate,
        lr_decay=cfg.lr_decay, weight_decay=cfg.weight_decay,
        seed=cfg.seed, precision=cfg.precision,
    )


def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, "cache", "dataset", "checkpoint")
    hierarchy, tables, _, cache_hash = _load_cache_checked(cfg)
    train_seqs, test_seqs, _ = _train_split(cfg)
    if not train_seqs:
        raise ValueError("no training sequences after the split")
    print(f"training on {len(train_seqs)} sequences "
          f"({len(test_seqs)} held out)")
    params, history = model_mod.train(train_seqs, _train_config(cfg),
                                      hierarchy, tables, log=print)
    model_mod.save_generator(cfg.checkpoint, params, meta={
        "hierarchy_hash": cache_hash,
        "config_hash": cfg.config_hash(),
    })
    _write_history(cfg.checkpoint, cfg, history)
    print(f"checkpoint written: {cfg.checkpoint}")
    return 0


def cmd_baseline(cfg: RunConfig) -> int:
    _require(cfg, "cache", "dataset", "checkpoint")
    _, _, _, cache_hash = _load_cache_checked(cfg)
    train_seqs, test_seqs, _ = _train_split(cfg)
    if not train_seqs:
        raise ValueError("no training sequences after the split")
    print(f"training baseline on {len(train_seqs)} sequences "
          f"({len(test_seqs)} held out)")
    params, history = baseline_mod.train_baseline(train_seqs,
                                                  _train_config(cfg), log=print)
    baseline_mod.save_baseline(cfg.checkpoint, params, meta={
        "hierarchy_hash": cache_hash,
        "config_hash": cfg.config_hash(),
    })
    _write_history(cfg.checkpoint, cfg, history)
    print(f"baseline checkpoint written: {cfg.checkpoint}")
    return 0


def cmd_generate(cfg: RunConfig) -> int:
    _require(cfg, "cache", "checkpoint", "neutral", "output")
    hierarchy, tables, _, cache_hash = _load_cache_checked(cfg)
    params, _ = _load_generator_checked(cfg.checkpoint, cache_hash)
    neutral = load_mesh(cfg.neutral)
    label = _label_from_config(cfg)
    frames = model_mod.generate(neutral, label, params, hierarchy, tables)
    os.makedirs(cfg.output, exist_ok=True)
    for t, frame in enumerate(frames):
        save_mesh(frame, os.path.join(cfg.output, f"frame_{t:04d}.obj"))
    _write_meta(cfg.output, cfg, {
        "hierarchy_hash": cache_hash,
        "expression": label.expression,
        "frames": label.frames,
        "scale": label.scale,
    })
    print(f"wrote {len(frames)} frames to {cfg.output}")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    _require(cfg, "cache", "dataset", "checkpoint", "report")
    hierarchy, tables, _, cache_hash = _load_cache_checked(cfg)
    params, _ = _load_generator_checked(cfg.checkpoint, cache_hash)
    _, test_seqs, _ = _train_split(cfg)
    if not test_seqs:
        raise ValueError("no held-out sequences to evaluate on")
    generators = {
        "proposed": lambda neutral, label: model_mod.generate(
            neutral, label, params, hierarchy, tables),
    }
    if cfg.baseline_checkpoint:
        bparams, bmeta = baseline_mod.load_baseline(cfg.baseline_checkpoint)
        stored = bmeta.get("hierarchy_hash", "")
        if stored and stored != cache_hash:
            raise ValueError(
                "baseline checkpoint was trained against a different hierarchy"
            )
        generators["baseline"] = lambda neutral, label: \
            baseline_mod.generate_baseline(neutral, label, bparams)
    report = eval_mod.evaluate_models(test_seqs, generators)
    report.header["config_hash"] = cfg.config_hash()
    report.header["hierarchy_hash"] = cache_hash
    report.header["test_sequences"] = len(test_seqs)
    os.makedirs(cfg.report, exist_ok=True)
    report.save(os.path.join(cfg.report, "report.txt"),
                os.path.join(cfg.report, "report.json"))
    for name, curve in report.curves.items():
        eval_mod.save_curve(os.path.join(cfg.report, f"curve_{name}.txt"), curve)
    print(report.to_text())
    return 0


def cmd_classify(cfg: RunConfig) -> int:
    _require(cfg, "dataset", "report")
    train_seqs, test_seqs, _ = _train_split(cfg)
    if not train_seqs or not test_seqs:
        raise ValueError("classification needs both train and test sequences")
    clf_cfg = eval_mod.ClassifierConfig(
        n_frames=cfg.classifier_frames, epochs=cfg.classifier_epochs,
        seed=cfg.seed,
    )
    clf = eval_mod.train_classifier(train_seqs, clf_cfg, log=print)
    report = eval_mod.EvalReport()
    report.header["config_hash"] = cfg.config_hash()
    report.classifier["ground_truth"] = eval_mod.classify_and_report(clf, test_seqs)

    def generated_sequences(make_frames):
        out = []
        for seq in test_seqs:
            frames = make_frames(seq)
            out.append(ExpressionSequence(neutral=seq.neutral, frames=frames,
                                          label=seq.label, subject=seq.subject))
        return out

    if cfg.checkpoint:
        _require(cfg, "cache")
        hierarchy, tables, _, cache_hash = _load_cache_checked(cfg)
        params, _ = _load_generator_checked(cfg.checkpoint, cache_hash)
        gen_seqs = generated_sequences(
            lambda s: model_mod.generate(s.neutral, s.label, params,
                                         hierarchy, tables))
        report.classifier["proposed"] = eval_mod.classify_and_report(clf, gen_seqs)
        report.header["hierarchy_hash"] = cache_hash
    if cfg.baseline_checkpoint:
        bparams, _ = baseline_mod.load_baseline(cfg.baseline_checkpoint)
        base_seqs = generated_sequences(
            lambda s: baseline_mod.generate_baseline(s.neutral, s.label, bparams))
        report.classifier["baseline"] = eval_mod.classify_and_report(clf, base_seqs)
    os.makedirs(cfg.report, exist_ok=True)
    report.save(os.path.join(cfg.report, "classify.txt"),
                os.path.join(cfg.report, "classify.json"))
    print(report.to_text())
    return 0


def cmd_interpolate(cfg: RunConfig) -> int:
    _require(cfg, "cache", "checkpoint", "neutral", "output")
    hierarchy, tables, _, cache_hash = _load_cache_checked(cfg)
    params, _ = _load_generator_checked(cfg.checkpoint, cache_hash)
    neutral = load_mesh(cfg.neutral)
    ph = _canonical_phases(cfg.frames)
    labels = [
        MotionLabel(expression=e, frames=cfg.frames, t_onset=ph[0],
                    t_apex_start=ph[1], t_apex_end=ph[2], t_offset_end=ph[3],
                    scale=cfg.scale)
        for e in (cfg.expression_a, cfg.expression_b)
    ]
    z_a = eval_mod.apex_latent(labels[0], params)
    z_b = eval_mod.apex_latent(labels[1], params)
    frames = eval_mod.interpolate_latents(z_a, z_b, cfg.steps, neutral, params,
                                          hierarchy, tables)
    os.makedirs(cfg.output, exist_ok=True)
    for t, frame in enumerate(frames):
        save_mesh(frame, os.path.join(cfg.output, f"frame_{t:04d}.obj"))
    _write_meta(cfg.output, cfg, {
        "hierarchy_hash": cache_hash,
        "expression_a": cfg.expression_a,
        "expression_b": cfg.expression_b,
        "steps": cfg.steps,
    })
    print(f"wrote {len(frames)} interpolation frames to {cfg.output}")
    return 0


_COMMANDS = {
    "precompute": cmd_precompute,
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "baseline": cmd_baseline,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "classify": cmd_classify,
    "interpolate": cmd_interpolate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spiral4d",
        description="4D facial expression synthesis with spiral mesh "
                    "convolutions",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", help="flat key = value config file")
        for key, default in RunConfig().items():
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, default=None,
                           help=f"override {key} (default {default!r})")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config")}
    try:
        cfg = resolve_config(args.config, overrides)
        cfg.echo()
        print(f"seed: {cfg.seed}")
        return _COMMANDS[args.command](cfg)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
