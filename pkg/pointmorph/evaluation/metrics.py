"""Masked PSNR and the evaluation report."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from ..errors import DimMismatch, EmptyMask
from ..io_utils import atomic_write_bytes, write_csv
from ..render.volume import RenderedFrame

PSNR_CAP_DB = 99.0
PEAK = 1.0
CSV_COLUMNS = ["frame", "variant", "n_kp", "bending", "psnr_db", "masked_pixels"]

Image = Union[RenderedFrame, np.ndarray]


def _pixels(image: Image) -> np.ndarray:
    return np.asarray(image.rgb if isinstance(image, RenderedFrame) else image, dtype=np.float64)


def masked_psnr(rendered: Image, truth: Image, mask: np.ndarray) -> Tuple[float, bool, int]:
    """PSNR in dB over the pixels selected by *mask*, channels averaged.

    Returns ``(psnr_db, capped, masked_pixels)``. A zero error reports
    :data:`PSNR_CAP_DB` with ``capped`` set.
    """
    a, b = _pixels(rendered), _pixels(truth)
    mask = np.asarray(mask, dtype=bool)
    if a.shape != b.shape:
        raise DimMismatch(f"rendered {a.shape} vs truth {b.shape}")
    if mask.shape != a.shape[:2]:
        raise DimMismatch(f"mask {mask.shape} vs image {a.shape[:2]}")
    count = int(mask.sum())
    if count == 0:
        raise EmptyMask("mask selects no pixels")

    mse = float(np.mean((a[mask] - b[mask]) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB, True, count
    db = 10.0 * math.log10(PEAK**2 / mse)
    if db >= PSNR_CAP_DB:
        return PSNR_CAP_DB, True, count
    return db, False, count


@dataclass
class EvalRow:
    frame: int
    variant: str
    n_kp: int
    bending: bool
    psnr_db: float
    masked_pixels: int
    capped: bool = False

    def csv_row(self) -> List[Any]:
        return [
            self.frame,
            self.variant,
            self.n_kp,
            "true" if self.bending else "false",
            f"{self.psnr_db:.6f}",
            self.masked_pixels,
        ]


@dataclass
class EvalReport:
    rows: List[EvalRow] = field(default_factory=list)
    meta: Dict[str, Any] = field(default_factory=dict)

    def add(self, row: EvalRow) -> None:
        self.rows.append(row)

    @property
    def variants(self) -> List[str]:
        seen: Dict[str, None] = {}
        for row in self.rows:
            seen.setdefault(row.variant, None)
        return list(seen)

    def select(self, variant: str) -> List[EvalRow]:
        return [row for row in self.rows if row.variant == variant]

    def mean_psnr(self, variant: Optional[str] = None) -> float:
        rows = self.rows if variant is None else self.select(variant)
        if not rows:
            raise KeyError(f"no rows for variant {variant!r}")
        return float(np.mean([row.psnr_db for row in rows]))

    def means(self) -> Dict[str, float]:
        return {variant: self.mean_psnr(variant) for variant in self.variants}

    def write_csv(self, path: Path) -> None:
        write_csv(Path(path), CSV_COLUMNS, (row.csv_row() for row in self.rows))

    def table(self) -> str:
        lines = [
            "| frame | variant | n_kp | bending | PSNR (dB) | masked px |",
            "|---|---|---:|---|---:|---:|",
        ]
        for row in self.rows:
            psnr = f"{row.psnr_db:.2f}" + (" (cap)" if row.capped else "")
            lines.append(
                f"| {row.frame} | {row.variant} | {row.n_kp} | {'on' if row.bending else 'off'} | {psnr} | {row.masked_pixels} |"
            )
        lines.append("")
        lines.append("| variant | mean PSNR (dB) |")
        lines.append("|---|---:|")
        for variant, mean in self.means().items():
            lines.append(f"| {variant} | {mean:.2f} |")
        return "\n".join(lines) + "\n"

    def write_table(self, path: Path) -> None:
        atomic_write_bytes(Path(path), self.table().encode("utf-8"))
