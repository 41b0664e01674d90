"""Keypoint-supervised residual coordinate networks, one per target frame.

A fitted :class:`DeformationField` maps canonical positions ``x`` to
displacements ``g(x)`` so that ``x + g(x)`` lands on the target pose. The
network sees inputs normalized to ``[-1, 1]^3`` by an isotropic scale and
starts as the zero map.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn
from tqdm import tqdm

from ..errors import DivergedFit, FormatError, IoError
from ..io_utils import atomic_write_bytes, read_json, write_json
from ..radiance.neural_points import GROUP_CHARACTER, NeuralPointCloud

logger = logging.getLogger(__name__)

FIELD_FORMAT = "pointmorph-deformation"
FIELD_VERSION = 1
MIN_KEYPOINTS = 4
EVAL_CHUNK = 65536

LossCallback = Callable[[int, float], None]


@dataclass
class KeypointFrame:
    canonical_kp: np.ndarray  # (n, 3)
    target_kp: np.ndarray  # (n, 3)
    t: int = 0

    def __post_init__(self) -> None:
        self.canonical_kp = np.asarray(self.canonical_kp, dtype=np.float64).reshape(-1, 3)
        self.target_kp = np.asarray(self.target_kp, dtype=np.float64).reshape(-1, 3)
        if self.canonical_kp.shape != self.target_kp.shape:
            raise ValueError(
                f"frame {self.t}: {len(self.canonical_kp)} canonical vs {len(self.target_kp)} target keypoints"
            )
        if len(self.canonical_kp) < MIN_KEYPOINTS:
            raise ValueError(f"frame {self.t}: need at least {MIN_KEYPOINTS} keypoints")

    def __len__(self) -> int:
        return self.canonical_kp.shape[0]

    def subset(self, indices: Sequence[int]) -> "KeypointFrame":
        idx = np.asarray(indices, dtype=np.int64)
        return KeypointFrame(self.canonical_kp[idx], self.target_kp[idx], self.t)


MotionSequence = List[KeypointFrame]


def save_keypoints(path: Path, frames: Sequence[KeypointFrame]) -> None:
    write_json(
        Path(path),
        {
            "frames": [
                {"t": f.t, "canonical": f.canonical_kp.tolist(), "target": f.target_kp.tolist()}
                for f in frames
            ]
        },
    )


def load_keypoints(path: Path) -> MotionSequence:
    data = read_json(Path(path))
    try:
        return [KeypointFrame(f["canonical"], f["target"], int(f["t"])) for f in data["frames"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad keypoint frames ({exc})") from exc


def positional_encoding(x: torch.Tensor, octaves: int) -> torch.Tensor:
    """``[x, sin(2^l pi x), cos(2^l pi x)]`` for ``l`` in ``0..octaves-1``."""
    out = [x]
    for level in range(octaves):
        freq = (2.0**level) * math.pi
        out.append(torch.sin(x * freq))
        out.append(torch.cos(x * freq))
    return torch.cat(out, dim=-1)


class DeformationField(nn.Module):
    """Positional encoding, a ReLU MLP and a zero-initialized linear head."""

    def __init__(
        self,
        center: Sequence[float],
        half_extent: float,
        octaves: int = 6,
        hidden_layers: int = 4,
        hidden_units: int = 128,
    ) -> None:
        super().__init__()
        if not half_extent > 0:
            raise ValueError("half_extent must be > 0")
        self.octaves = int(octaves)
        self.hidden_layers = int(hidden_layers)
        self.hidden_units = int(hidden_units)
        self.register_buffer("center", torch.as_tensor(np.asarray(center, dtype=np.float64).reshape(3)))
        self.register_buffer("half_extent", torch.tensor(float(half_extent), dtype=torch.float64))

        layers: List[nn.Module] = []
        width = 3 + 6 * self.octaves
        for _ in range(self.hidden_layers):
            layers += [nn.Linear(width, self.hidden_units), nn.ReLU()]
            width = self.hidden_units
        self.mlp = nn.Sequential(*layers)
        self.head = nn.Linear(width, 3)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        self.to(torch.float64)

        self.loss_history: List[float] = []
        self.keypoint_rms: float = float("nan")

    @classmethod
    def from_bounds(
        cls, lo: Sequence[float], hi: Sequence[float], **architecture: Any
    ) -> "DeformationField":
        lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
        half = float(np.max(hi - lo)) / 2.0
        return cls((lo + hi) / 2.0, half if half > 0 else 1.0, **architecture)

    def architecture(self) -> Dict[str, Any]:
        return {
            "octaves": self.octaves,
            "hidden_layers": self.hidden_layers,
            "hidden_units": self.hidden_units,
            "center": self.center.tolist(),
            "half_extent": float(self.half_extent),
        }

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        unit = (x - self.center) / self.half_extent
        return self.head(self.mlp(positional_encoding(unit, self.octaves))) * self.half_extent

    def displacement(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        out = np.empty_like(pts)
        with torch.no_grad():
            for start in range(0, len(pts), EVAL_CHUNK):
                chunk = torch.from_numpy(pts[start : start + EVAL_CHUNK])
                out[start : start + EVAL_CHUNK] = self(chunk).numpy()
        return out


@dataclass
class FitOptions:
    """Parameters of a per-frame deformation fit."""

    lr: float = 1e-3
    octaves: int = 6
    hidden_layers: int = 4
    hidden_units: int = 128
    smoothness_weight: float = 0.0
    smoothness_pairs: int = 256
    seed: int = 0
    progress: bool = False
    bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None


def _smoothness_penalty(
    model: DeformationField, generator: torch.Generator, pairs: int
) -> torch.Tensor:
    """Finite-difference penalty on random nearby point pairs inside the normalized box."""
    scale = model.half_extent
    a = (torch.rand((pairs, 3), generator=generator, dtype=torch.float64) * 2.0 - 1.0) * scale + model.center
    step = torch.randn((pairs, 3), generator=generator, dtype=torch.float64) * (0.05 * scale)
    b = a + step
    diff = model(a) - model(b)
    return torch.mean(torch.sum(diff**2, dim=1) / torch.sum(step**2, dim=1))


def fit_deformation(
    frame: KeypointFrame,
    iters: int = 2000,
    *,
    options: Optional[FitOptions] = None,
    init: Optional[DeformationField] = None,
    callback: Optional[LossCallback] = None,
) -> DeformationField:
    """Fit ``g`` so that ``canonical_kp + g(canonical_kp)`` matches ``target_kp``.

    Full-batch Adam on the mean squared keypoint residual. ``init`` warm-starts
    from another field's parameters (its normalization is reused).
    """
    opts = options or FitOptions()
    if len(frame) < MIN_KEYPOINTS:
        raise ValueError(f"need at least {MIN_KEYPOINTS} keypoints")

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(opts.seed)
        if init is not None:
            model = DeformationField(
                init.center.numpy(), float(init.half_extent), init.octaves, init.hidden_layers, init.hidden_units
            )
            model.load_state_dict(init.state_dict())
        else:
            lo, hi = opts.bounds if opts.bounds is not None else (
                frame.canonical_kp.min(axis=0),
                frame.canonical_kp.max(axis=0),
            )
            model = DeformationField.from_bounds(
                lo, hi, octaves=opts.octaves, hidden_layers=opts.hidden_layers, hidden_units=opts.hidden_units
            )

    generator = torch.Generator().manual_seed(opts.seed)
    x = torch.from_numpy(frame.canonical_kp)
    residual = torch.from_numpy(frame.target_kp - frame.canonical_kp)
    optimizer = torch.optim.Adam(model.parameters(), lr=opts.lr)

    history: List[float] = []
    for iteration in tqdm(range(iters), desc=f"deform t={frame.t}", disable=not opts.progress, leave=False):
        optimizer.zero_grad()
        data_loss = torch.mean(torch.sum((model(x) - residual) ** 2, dim=1))
        loss = data_loss
        if opts.smoothness_weight > 0.0:
            loss = loss + opts.smoothness_weight * _smoothness_penalty(model, generator, opts.smoothness_pairs)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise DivergedFit(f"deformation fit for frame {frame.t} diverged at iteration {iteration}")
        loss.backward()
        optimizer.step()
        history.append(value)
        if callback is not None:
            callback(iteration, value)

    with torch.no_grad():
        final = float(torch.mean(torch.sum((model(x) - residual) ** 2, dim=1)))
    if not math.isfinite(final):
        raise DivergedFit(f"deformation fit for frame {frame.t} produced a non-finite residual")
    model.loss_history = history
    model.keypoint_rms = math.sqrt(final)
    logger.info("frame %d: keypoint RMS %.3e after %d iterations", frame.t, model.keypoint_rms, iters)
    return model


def fit_sequence(
    frames: Sequence[KeypointFrame],
    iters: int = 2000,
    *,
    options: Optional[FitOptions] = None,
    warm_start: bool = False,
    callback: Optional[Callable[[int, int, float], None]] = None,
) -> List[DeformationField]:
    """Fit every frame of a motion sequence, optionally chaining warm starts."""
    fields: List[DeformationField] = []
    previous: Optional[DeformationField] = None
    for frame in frames:
        per_frame = None if callback is None else (lambda i, loss, t=frame.t: callback(t, i, loss))
        fitted = fit_deformation(
            frame, iters, options=options, init=previous if warm_start else None, callback=per_frame
        )
        fields.append(fitted)
        previous = fitted
    return fields


def apply_deformation(field: DeformationField, cloud: NeuralPointCloud) -> NeuralPointCloud:
    """Move character points by ``g``; features and background points stay as they are."""
    moving = cloud.groups == GROUP_CHARACTER
    positions = cloud.positions.copy()
    if np.any(moving):
        positions[moving] = positions[moving] + field.displacement(positions[moving])
    return cloud.with_positions(positions)


def save_field(path: Path, model: DeformationField) -> None:
    """One JSON header line, then the parameters as little-endian float64."""
    state = model.state_dict()
    names = [name for name in state if name not in ("center", "half_extent")]
    header = {
        "format": FIELD_FORMAT,
        "version": FIELD_VERSION,
        **model.architecture(),
        "keypoint_rms": model.keypoint_rms,
        "parameters": [[name, list(state[name].shape)] for name in names],
    }
    buffer = io.BytesIO()
    buffer.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
    for name in names:
        buffer.write(state[name].detach().numpy().astype("<f8").tobytes())
    atomic_write_bytes(Path(path), buffer.getvalue())


def load_field(path: Path) -> DeformationField:
    path = Path(path)
    if not path.exists():
        raise IoError(f"missing input: {path}")
    payload = path.read_bytes()
    line, sep, body = payload.partition(b"\n")
    if not sep:
        raise FormatError(f"{path}: missing header line")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: line 1: bad header ({exc})") from exc
    if header.get("format") != FIELD_FORMAT:
        raise FormatError(f"{path}: not a deformation field file")

    model = DeformationField(
        header["center"], header["half_extent"], header["octaves"], header["hidden_layers"], header["hidden_units"]
    )
    state = model.state_dict()
    offset = 0
    for name, shape in header["parameters"]:
        if name not in state or list(state[name].shape) != shape:
            raise FormatError(f"{path}: parameter {name} does not match the architecture")
        count = int(np.prod(shape)) * 8
        chunk = body[offset : offset + count]
        if len(chunk) != count:
            raise FormatError(f"{path}: truncated at byte offset {len(line) + 1 + offset}")
        state[name] = torch.from_numpy(np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64))
        offset += count
    if offset != len(body):
        raise FormatError(f"{path}: {len(body) - offset} trailing bytes")
    model.load_state_dict(state)
    model.keypoint_rms = float(header.get("keypoint_rms", float("nan")))
    return model
