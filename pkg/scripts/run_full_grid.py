"""End-to-end run over the default 3 x 4 phaser grid: data, training, grid eval, long eval, spectrograms.

usage: python3 scripts/run_full_grid.py --out runs/full [--config cfg.json] [--epochs N] [--desk]

--desk swaps in the reduced STFT/model/loss so the whole chain finishes in well under an hour.
"""

import argparse
import json
from pathlib import Path

from conmod import cli
from conmod.evaluator import export_spectrogram, predict
from conmod.signals import generate_test_signal
from conmod.trainer import load_checkpoint

DESK_OVERRIDES = {
    "oracle": {"duration_s": 2.0},
    "stft": {"frame_size": 440, "fft_size": 1024, "hop": 110},
    "model": {"lstm_hidden": 16, "mlp_hidden": 128},
    "train": {"epochs": 500, "loss_weights": {"lam": 100.0, "reduction": "mean"}},
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--config")
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--desk", action="store_true")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = args.config
    if args.desk and cfg_path is None:
        cfg_path = str(out / "desk.json")
        Path(cfg_path).write_text(json.dumps(DESK_OVERRIDES, indent=2), encoding="utf-8")
    cfg_flag = ["--config", cfg_path] if cfg_path else []
    epoch_flag = ["--epochs", str(args.epochs)] if args.epochs else []

    steps = [
        ["gen-data", *cfg_flag, "--out", str(out / "data")],
        ["train", *cfg_flag, "--data", str(out / "data"), "--out", str(out / "run"), *epoch_flag],
        ["eval", "--checkpoint", str(out / "run" / "final.ckpt"), *cfg_flag, "--out", str(out / "eval"),
         "--data", str(out / "data")],
        ["eval-long", "--checkpoint", str(out / "run" / "final.ckpt"), *cfg_flag, "--out", str(out / "eval")],
    ]
    for argv in steps:
        print("conmod", " ".join(argv), flush=True)
        rc = cli.main(argv)
        if rc:
            raise SystemExit(rc)

    ckpt = load_checkpoint(out / "run" / "final.ckpt")
    x = generate_test_signal(10.0, ckpt.stft_cfg.sample_rate, 0)
    (out / "spectrograms").mkdir(exist_ok=True)
    for freq in (0.23, 1.13, 2.0):
        y, _ = predict(ckpt, x, freq, 0.0)
        paths = export_spectrogram(y, out / "spectrograms" / f"model_{freq:g}hz")
        print("spectrogram", paths[0])


if __name__ == "__main__":
    main()
