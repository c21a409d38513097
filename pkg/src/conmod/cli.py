"""Command-line entry point: gen-data, train, render, eval, eval-long, interp."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import config as config_mod
from .evaluator import evaluate_grid, interpolate_embedding_render, long_sequence_eval, predict
from .oracles import DatasetManifest, build_dataset
from .signals import generate_test_signal, wav_read, wav_write
from .trainer import load_checkpoint, train

log = logging.getLogger("conmod")


def _load_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config) if getattr(args, "config", None) else config_mod.resolve()
    train_over = {}
    if getattr(args, "epochs", None) is not None:
        train_over["epochs"] = args.epochs
    if getattr(args, "seed", None) is not None:
        train_over["seed"] = args.seed
    if train_over:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **train_over))
    return cfg


def _check_feedback(pct: float) -> None:
    if not 0 <= pct <= 95:
        raise ValueError(f"--feedback {pct} outside [0, 95] percent")


def cmd_gen_data(args) -> None:
    cfg = _load_config(args)
    out = Path(args.out)
    config_mod.write_resolved(cfg, out)
    o = cfg.oracle
    for i, grid in enumerate(o.effects):
        m = build_dataset(grid.effect_id, grid.lfo_freqs, grid.feedback_pcts, o.shared_phase, o.duration_s,
                          o.sample_rate, out, template=grid.template(), append=i > 0)
    print(f"wrote {len(m)} pairs to {out}")


def cmd_train(args) -> None:
    cfg = _load_config(args)
    out = Path(args.out)
    config_mod.write_resolved(cfg, out)
    manifest = DatasetManifest.load(Path(args.data))
    resume = load_checkpoint(args.resume) if args.resume else None

    def report(rec):
        if rec["epoch"] % max(1, args.log_every) == 0:
            log.info("epoch %d lr %.3g loss %.4f z_a %s", rec["epoch"], rec["lr"], rec["mean_loss"], rec["z_a"])

    ckpt = train(manifest, cfg.model, cfg.train, out, cfg.stft, resume=resume, on_epoch=report)
    print(f"trained {ckpt.epoch} epochs; checkpoint {out / 'final.ckpt'}")


def cmd_render(args) -> None:
    _check_feedback(args.feedback)
    ckpt = load_checkpoint(args.checkpoint)
    x = wav_read(args.input)
    if args.alpha is not None:
        y = interpolate_embedding_render(ckpt, args.alpha, args.lfo_freq, args.feedback, x)
    else:
        y, _ = predict(ckpt, x, args.lfo_freq, args.feedback, args.effect or _default_effect(ckpt))
    wav_write(args.output, y)
    print(f"wrote {args.output}")


def _default_effect(ckpt):
    return ckpt.model.effect_ids[0] if ckpt.model.effect_ids else None


def cmd_eval(args) -> None:
    cfg = _load_config(args)
    out = Path(args.out)
    config_mod.write_resolved(cfg, out)
    ckpt = load_checkpoint(args.checkpoint)
    manifest = DatasetManifest.load(Path(args.data)) if args.data else None
    x = generate_test_signal(cfg.eval.test_duration_s, cfg.stft.sample_rate, cfg.eval.test_seed)
    for eid, template in cfg.templates().items():
        report = evaluate_grid(ckpt, template, cfg.eval.lfo_freqs, cfg.eval.feedback_pcts, x, manifest, eid)
        report.to_csv(out / f"eval_{eid}.csv")
        report.to_json(out / f"eval_{eid}.json")
        print(f"{eid}: {len(report.rows)} rows -> {out / f'eval_{eid}.csv'}")


def cmd_eval_long(args) -> None:
    cfg = _load_config(args)
    out = Path(args.out)
    config_mod.write_resolved(cfg, out)
    ckpt = load_checkpoint(args.checkpoint)
    freq, fb = cfg.eval.long_condition
    rows = {}
    for eid, template in cfg.templates().items():
        rows[eid] = long_sequence_eval(ckpt, cfg.eval.long_durations, template, freq, fb, eid, cfg.eval.test_seed)
    (out / "eval_long.json").write_text(json.dumps(rows, indent=2), encoding="utf-8")
    for eid, r in rows.items():
        print(eid, " ".join(f"{d:g}s:{e:.3f}%" for d, e in r))


def cmd_interp(args) -> None:
    _check_feedback(args.feedback)
    ckpt = load_checkpoint(args.checkpoint)
    x = wav_read(args.input)
    y = interpolate_embedding_render(ckpt, args.alpha, args.lfo_freq, args.feedback, x)
    wav_write(args.output, y)
    print(f"wrote {args.output}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conmod", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render chirp-train dry/wet pairs and a manifest")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume")
    p.add_argument("--log-every", type=int, default=50)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="process a WAV file with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--lfo-freq", type=float, required=True)
    p.add_argument("--feedback", type=float, required=True)
    p.add_argument("--effect")
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_render)

    for name, func, helptext in (("eval", cmd_eval, "ESR grid over LFO frequency x feedback"),
                                 ("eval-long", cmd_eval_long, "ESR versus input length")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--config")
        p.add_argument("--out", required=True)
        if name == "eval":
            p.add_argument("--data", help="training data directory (marks seen grid points)")
        p.set_defaults(func=func)

    p = sub.add_parser("interp", help="render with an interpolated effect embedding")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--lfo-freq", type=float, required=True)
    p.add_argument("--feedback", type=float, default=0.0)
    p.set_defaults(func=cmd_interp)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"conmod {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
