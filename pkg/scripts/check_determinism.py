#!/usr/bin/env python3
"""Compare the PLY, PPM and CSV outputs of two pipeline runs byte for byte."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[1]
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from pointmorph.io_utils import sha256_file  # noqa: E402

CHECKED_SUFFIXES = {".ply", ".ppm", ".csv"}


def compute_hashes(run_dir: Path) -> dict[str, str]:
    """SHA-256 of every checked output under *run_dir*, keyed by relative path."""
    if not run_dir.is_dir():
        raise FileNotFoundError(f"Run directory not found at {run_dir}")

    hashes: dict[str, str] = {}
    for path in sorted(run_dir.rglob("*")):
        if path.is_file() and path.suffix.lower() in CHECKED_SUFFIXES:
            hashes[path.relative_to(run_dir).as_posix()] = sha256_file(path)
    return hashes


def compare(first: dict[str, str], second: dict[str, str], verbose: bool = False) -> bool:
    ok = True
    for rel_path in sorted(set(first) | set(second)):
        a = first.get(rel_path)
        b = second.get(rel_path)
        if a != b:
            ok = False
            if a is None:
                print(f"[ERROR] Only in second run: {rel_path}")
            elif b is None:
                print(f"[ERROR] Only in first run: {rel_path}")
            else:
                print(f"[ERROR] Outputs differ for {rel_path}: {a} vs {b}")
        elif verbose:
            print(f"[OK] {rel_path}")
    return ok


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("first", type=Path, help="output root of the first run")
    parser.add_argument("second", type=Path, help="output root of the second run")
    parser.add_argument(
        "--verbose",
        action="store_true",
        help="Print matching entries as well as differences.",
    )
    args = parser.parse_args(argv)

    first = compute_hashes(args.first)
    second = compute_hashes(args.second)
    if not first:
        print(f"No PLY, PPM or CSV outputs under {args.first}", file=sys.stderr)
        return 1

    if not compare(first, second, args.verbose):
        print("Determinism check failed.", file=sys.stderr)
        return 1

    if args.verbose:
        print(f"Determinism check passed for {len(first)} files.")
    return 0


if __name__ == "__main__":
    sys.exit(main())
