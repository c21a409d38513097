"""Quick desk-scale probes used to size the acceptance runs.

usage: python3 scripts/desk_probe.py {single,perturbed,feedback,ablation,dual} [--epochs N] [--out DIR]
"""

import argparse
import logging
import time

from conmod.desk import (
    DESK_PHASER,
    DESK_PHASER_ALT,
    condition_esr,
    desk_dataset,
    desk_train,
    ensure_dir,
    held_out_signal,
)


def progress(every):
    t0 = time.time()

    def cb(rec):
        if rec["epoch"] % every == 0:
            print(f"  epoch {rec['epoch']:4d} loss {rec['mean_loss']:.3f} z_a {[round(z, 4) for z in rec['z_a']]} "
                  f"{time.time() - t0:.0f}s", flush=True)

    return cb


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("probe", choices=["single", "perturbed", "feedback", "ablation", "dual"])
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--out", default="/tmp/desk_probe")
    ap.add_argument("--every", type=int, default=50)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    out = ensure_dir(f"{args.out}/{args.probe}")
    x = held_out_signal()
    cb = progress(args.every)

    if args.probe in ("single", "perturbed"):
        m = desk_dataset(out / "data", {"phaser2": (DESK_PHASER, [1.0], [0.0])})
        ck = desk_train(m, args.epochs, "exact" if args.probe == "single" else "perturbed", on_epoch=cb)
        print("z_a", ck.model.bank.freqs, "test esr", condition_esr(ck, DESK_PHASER, 1.0, 0.0, x))
    elif args.probe == "feedback":
        m = desk_dataset(out / "data", {"phaser2": (DESK_PHASER, [1.0], [0.0, 50.0])})
        ck = desk_train(m, args.epochs, on_epoch=cb)
        for fb in (0.0, 25.0, 50.0):
            print("fb", fb, "esr", condition_esr(ck, DESK_PHASER, 1.0, fb, x))
    elif args.probe == "ablation":
        for freqs, epochs in (([0.5, 1.5], args.epochs), ([0.5], 2 * args.epochs), ([0.5], args.epochs)):
            m = desk_dataset(out / f"data_{len(freqs)}", {"phaser2": (DESK_PHASER, freqs, [0.0])})
            ck = desk_train(m, epochs, on_epoch=cb)
            print(freqs, epochs, "probe 1.0 Hz esr", condition_esr(ck, DESK_PHASER, 1.0, 0.0, x))
    else:
        grids = {"phA": (DESK_PHASER, [0.37, 1.13], [0.0, 25.0, 50.0, 75.0]),
                 "phB": (DESK_PHASER_ALT, [0.37, 1.13], [0.0, 25.0, 50.0, 75.0])}
        m = desk_dataset(out / "data", grids)
        ck = desk_train(m, args.epochs, on_epoch=cb)
        for eid, (tmpl, freqs, fbs) in grids.items():
            for f in freqs:
                print(eid, f, [round(condition_esr(ck, tmpl, f, fb, x, eid), 4) for fb in fbs], flush=True)


if __name__ == "__main__":
    main()
