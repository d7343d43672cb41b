#!/usr/bin/env python3
"""Write a phoneme inventory JSON: the deterministic default, or one whose
diphone list is frequency-ranked from phoneme annotation TSVs."""

import argparse
from pathlib import Path

from resid_align.data_model import load_annotation
from resid_align.stimulus_features import (default_inventory, inventory_from_annotations,
                                           save_inventory)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--phones-dir", type=Path, default=None,
                    help="directory of per-story phoneme TSVs; omit for the default inventory")
    args = ap.parse_args()
    if args.phones_dir:
        stories = [load_annotation(p, "phoneme") for p in sorted(args.phones_dir.glob("*.tsv"))]
        inv = inventory_from_annotations(stories)
    else:
        inv = default_inventory()
    save_inventory(inv, args.out)
    print(f"wrote {args.out} ({len(inv.monophones)} monophones, {len(inv.diphones)} diphones)")


if __name__ == "__main__":
    main()
