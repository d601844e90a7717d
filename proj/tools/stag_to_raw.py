#!/usr/bin/env python3
"""Export the STAG classification release (metadata.mat) to the raw layout
read by `tvgcn convert --raw DIR`.

Output files in DIR:
  meta.json        num_frames, class_names, calib_min, calib_max
  frames.f32       num_frames x 32 x 32 little-endian float32, raw sensor counts
  labels.u16       num_frames little-endian uint16
  split.u8         num_frames bytes, 0 = train, 1 = test
  empty_hand.f32   32 x 32 mean of the empty-hand frames (only if that class exists)

The empty-hand class is used as the baseline and dropped from the labels.
Best effort: the upstream file layout is not under our control.
"""

import argparse
import json
import pathlib
import sys

import numpy as np


def load_mat(path):
    try:
        import h5py
    except ImportError:
        h5py = None
    if h5py is not None:
        try:
            with h5py.File(path, "r") as f:
                pressure = np.asarray(f["pressure"])
                object_id = np.asarray(f["objectId"]).reshape(-1)
                split_id = np.asarray(f["splitId"]).reshape(-1)
                valid = np.asarray(f["hasValidLabel"]).reshape(-1) if "hasValidLabel" in f else None
                names = []
                for ref in np.asarray(f["objects"]).reshape(-1):
                    chars = np.asarray(f[ref]).reshape(-1)
                    names.append("".join(chr(int(c)) for c in chars))
            # MATLAB v7.3 stores arrays column-major.
            if pressure.shape[-1] != 32 or pressure.shape[1] != 32:
                pressure = np.transpose(pressure, (2, 1, 0))
            return pressure, object_id, split_id, valid, names
        except OSError:
            pass
    from scipy.io import loadmat

    m = loadmat(path)
    pressure = np.asarray(m["pressure"])
    if pressure.shape[0] == 32 and pressure.shape[1] == 32:
        pressure = np.transpose(pressure, (2, 0, 1))
    names = [str(np.asarray(o).reshape(-1)[0]) for o in np.asarray(m["objects"]).reshape(-1)]
    valid = np.asarray(m["hasValidLabel"]).reshape(-1) if "hasValidLabel" in m else None
    return pressure, np.asarray(m["objectId"]).reshape(-1), np.asarray(m["splitId"]).reshape(-1), valid, names


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("mat", type=pathlib.Path, help="classification/metadata.mat")
    ap.add_argument("out", type=pathlib.Path)
    ap.add_argument("--calib-min", type=float, default=None, help="raw count mapped to 0 (default: 1st percentile)")
    ap.add_argument("--calib-max", type=float, default=None, help="raw count mapped to 1 (default: 99.9th percentile)")
    ap.add_argument("--empty-name", default="empty_hand")
    args = ap.parse_args()

    pressure, object_id, split_id, valid, names = load_mat(args.mat)
    pressure = pressure.astype(np.float32).reshape(-1, 32, 32)
    object_id = object_id.astype(np.int64)
    split_id = split_id.astype(np.int64)
    if not (len(pressure) == len(object_id) == len(split_id)):
        sys.exit("stag_to_raw: pressure, objectId and splitId lengths differ")

    keep = np.ones(len(pressure), dtype=bool) if valid is None else valid.astype(bool)
    empty = None
    if args.empty_name in names:
        e = names.index(args.empty_name)
        empty = pressure[object_id == e].mean(axis=0)
        keep &= object_id != e
        remap = {old: new for new, old in enumerate(i for i in range(len(names)) if i != e)}
        names = [n for i, n in enumerate(names) if i != e]
    else:
        remap = {i: i for i in range(len(names))}

    pressure, object_id, split_id = pressure[keep], object_id[keep], split_id[keep]
    labels = np.array([remap[int(o)] for o in object_id], dtype="<u2")
    split = (split_id != 0).astype(np.uint8)

    lo = args.calib_min if args.calib_min is not None else float(np.percentile(pressure, 1.0))
    hi = args.calib_max if args.calib_max is not None else float(np.percentile(pressure, 99.9))
    if not hi > lo:
        sys.exit("stag_to_raw: calibration range is empty")

    args.out.mkdir(parents=True, exist_ok=True)
    pressure.astype("<f4").tofile(args.out / "frames.f32")
    labels.tofile(args.out / "labels.u16")
    split.tofile(args.out / "split.u8")
    if empty is not None:
        empty.astype("<f4").tofile(args.out / "empty_hand.f32")
    meta = {"num_frames": int(len(pressure)), "class_names": names, "calib_min": lo, "calib_max": hi}
    (args.out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"stag_to_raw: {len(pressure)} frames, {len(names)} classes, "
          f"{int((split == 0).sum())} train, calibration [{lo:.1f}, {hi:.1f}]")


if __name__ == "__main__":
    main()
