"""Render a clip and its distilled frames as PPM images next to the transform P.

Uses a TSD checkpoint from ``tsdistill train``; without one, the untrained
block (near-uniform P) shows the ghosting of averaged frames.

    python scripts/distill_frames.py --checkpoint out/checkpoint.tsdp --out runs/frames
"""
import argparse
import os

import numpy as np

from tsdistill import cli, nets, synthvid
from tsdistill.nets import NetConfig
from tsdistill.synthvid import SynthSpec
from tsdistill.tensor import Tensor
from tsdistill.tsd import distill


def write_strip(path, frames, zoom=4):
    """Frames side by side, separated by one white column, as a binary PPM."""
    t, h, w, _ = frames.shape
    gap = np.ones((h, 1, 3))
    strip = np.concatenate([x for f in frames for x in (f, gap)][:-1], axis=1)
    strip = np.kron(strip, np.ones((zoom, zoom, 1)))
    pixels = (np.clip(strip, 0, 1) * 255).round().astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6 {pixels.shape[1]} {pixels.shape[0]} 255\n".encode())
        fh.write(pixels.tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--checkpoint", default="")
    ap.add_argument("--out", default="runs/frames")
    ap.add_argument("--label", type=int, default=2)
    ap.add_argument("--seed", type=int, default=1 << 30)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    cfg = NetConfig()
    if args.checkpoint:
        params, _ = cli.load_checkpoint(args.checkpoint)
    else:
        params = nets.init_params(cfg, 0, "tsd")
    spec = SynthSpec()
    lc = synthvid.generate_clip(spec, args.label, args.seed)
    x = Tensor(lc.clip)
    p = nets.tsd_transform(x, params, cfg).data
    y = distill(x, Tensor(p)).data
    write_strip(os.path.join(args.out, "input.ppm"), lc.clip)
    write_strip(os.path.join(args.out, "distilled.ppm"), y)
    start = synthvid.signal_start(spec, args.seed)
    np.set_printoptions(precision=2, suppress=True, linewidth=120)
    print(f"label {lc.label}, signal frames {start} and {start + 1}")
    print("P transposed (rows: distilled frames, columns: input frames)")
    print(p.T)


if __name__ == "__main__":
    main()
