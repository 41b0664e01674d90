"""Run configuration: defaults, JSON files, command-line overrides."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional

from .errors import ConfigError

THREADS_ENV = "POINTMORPH_THREADS"
LOG_LEVEL = os.getenv("POINTMORPH_LOG_LEVEL", "INFO")

SCENE_KINDS = [
    "sphere",
    "textured_sphere",
    "two_segment_limb",
    "articulated_biped",
    "box_room_background",
]

RESOLVED_CONFIG_NAME = "config.resolved.json"


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_list(item: Callable[[str], Any]) -> Callable[[str], List[Any]]:
    def parse(text: str) -> List[Any]:
        text = text.strip()
        if text.startswith("["):
            return [item(str(v)) if not isinstance(v, bool) else v for v in json.loads(text)]
        return [item(part) for part in text.split(",") if part.strip()]

    return parse


def _parse_optional_int(text: str) -> Optional[int]:
    if text.strip().lower() in {"", "none", "null"}:
        return None
    return int(text)


def _opt(default: Any, help: str, parse: Callable[[str], Any], **kwargs: Any) -> Any:
    meta = {"help": help, "parse": parse}
    if isinstance(default, list):
        return field(default_factory=lambda: list(default), metadata=meta, **kwargs)
    return field(default=default, metadata=meta, **kwargs)


@dataclass
class Config:
    """Every tunable of the pipeline. Field metadata drives the CLI flag table."""

    # run
    seed: int = _opt(0, "master seed for every random draw", int)
    threads: Optional[int] = _opt(None, f"worker cap (fallback: ${THREADS_ENV}, then 1)", _parse_optional_int)
    log_level: str = _opt(LOG_LEVEL, "logging level", str)
    progress: bool = _opt(False, "show tqdm progress bars while fitting", _parse_bool)
    ci: bool = _opt(False, "CI mode: --seed must be given explicitly", _parse_bool)
    bundle_dir: str = _opt("runs/bundle", "scene bundle directory (generate writes, others read)", str)
    work_dir: str = _opt("runs/work", "output directory for fitted, deformed and rendered artifacts", str)

    # scene generation
    scene_kind: str = _opt("two_segment_limb", "one of " + ", ".join(SCENE_KINDS), str)
    n_points: int = _opt(4000, "character point count", int)
    n_keypoints: int = _opt(300, "keypoints sampled from the character surface", int)
    texture_frequency: int = _opt(4, "checker frequency of the procedural albedo", int)
    view_dependence: float = _opt(0.6, "amplitude of the higher SH bands (0 disables)", float)
    motion_angles: List[float] = _opt([0.0, 22.5, 45.0], "per-frame motion angles in degrees", _parse_list(float))
    joint_band: float = _opt(0.2, "width of the blended joint zone in scene units", float)
    point_density: float = _opt(40.0, "ground-truth volume density of every point", float)

    # cameras
    n_train_views: int = _opt(8, "training views on the sphere orbit", int)
    image_width: int = _opt(64, "image width in pixels", int)
    image_height: int = _opt(64, "image height in pixels", int)
    fov_deg: float = _opt(40.0, "horizontal field of view in degrees", float)
    camera_radius: float = _opt(4.0, "orbit radius in scene units", float)
    near: float = _opt(0.5, "near bound", float)
    far: float = _opt(8.0, "far bound", float)

    # radiance
    sh_degree: int = _opt(2, "spherical-harmonics degree L (0-3)", int)
    k_agg: int = _opt(8, "aggregation neighbor count", int)
    r_agg_factor: float = _opt(2.5, "aggregation radius as a multiple of median neighbor spacing", float)
    radiance_iters: int = _opt(2000, "radiance fitting iterations", int)
    radiance_lr: float = _opt(1e-2, "radiance fitting step size", float)
    radiance_batch: int = _opt(1024, "rays per radiance fitting minibatch", int)
    initial_density: float = _opt(10.0, "density assigned before radiance fitting", float)

    # deformation
    pe_octaves: int = _opt(6, "positional-encoding frequency octaves", int)
    hidden_layers: int = _opt(4, "hidden layers of the deformation network", int)
    hidden_units: int = _opt(128, "units per hidden layer", int)
    deform_iters: int = _opt(2000, "deformation fitting iterations per frame", int)
    deform_lr: float = _opt(1e-3, "deformation fitting step size", float)
    smoothness_weight: float = _opt(0.0, "weight of the displacement-smoothness penalty (0 disables)", float)
    warm_start: bool = _opt(False, "initialize each frame from the previous frame's network", _parse_bool)
    k_rot: int = _opt(8, "neighbors per local rotation estimate", int)

    # rendering
    n_samples: int = _opt(128, "stratified samples per ray", int)
    background: List[float] = _opt([0.0, 0.0, 0.0], "background RGB in [0,1]", _parse_list(float))
    bending: bool = _opt(True, "bend view directions back to canonical space", _parse_bool)
    leaf_size: int = _opt(16, "KD-tree leaf size", int)
    write_png: bool = _opt(False, "also write PNG copies of rendered frames", _parse_bool)

    # evaluation
    ablation_n_kp: List[int] = _opt([20, 200, 2000], "keypoint counts swept by evaluate", _parse_list(int))
    ablation_bending: List[bool] = _opt([True, False], "bending variants swept by evaluate", _parse_list(_parse_bool))
    use_fitted_cloud: bool = _opt(True, "evaluate with the fitted cloud when present", _parse_bool)

    def validate(self) -> "Config":
        problems: List[str] = []

        def check(ok: bool, message: str) -> None:
            if not ok:
                problems.append(message)

        check(self.seed >= 0, "seed must be >= 0")
        check(self.threads is None or self.threads >= 1, "threads must be >= 1")
        check(self.log_level.upper() in {"DEBUG", "INFO", "WARNING", "ERROR"}, "unknown log_level")
        check(self.scene_kind in SCENE_KINDS, f"scene_kind must be one of {SCENE_KINDS}")
        check(self.n_points >= 16, "n_points must be >= 16")
        check(self.n_keypoints >= 4, "n_keypoints must be >= 4")
        check(self.texture_frequency >= 1, "texture_frequency must be >= 1")
        check(self.view_dependence >= 0.0, "view_dependence must be >= 0")
        check(len(self.motion_angles) >= 1, "motion_angles needs at least one frame")
        check(self.joint_band >= 0.0, "joint_band must be >= 0")
        check(self.point_density > 0.0, "point_density must be > 0")
        check(self.n_train_views >= 2, "n_train_views must be >= 2")
        check(self.image_width >= 1 and self.image_height >= 1, "image size must be positive")
        check(0.0 < self.fov_deg < 180.0, "fov_deg must lie in (0, 180)")
        check(self.camera_radius > 0.0, "camera_radius must be > 0")
        check(0.0 < self.near < self.far, "need 0 < near < far")
        check(0 <= self.sh_degree <= 3, "sh_degree must lie in [0, 3]")
        check(self.k_agg >= 1, "k_agg must be >= 1")
        check(self.r_agg_factor > 0.0, "r_agg_factor must be > 0")
        check(self.radiance_iters >= 0, "radiance_iters must be >= 0")
        check(self.radiance_lr > 0.0, "radiance_lr must be > 0")
        check(self.radiance_batch >= 1, "radiance_batch must be >= 1")
        check(self.initial_density >= 0.0, "initial_density must be >= 0")
        check(self.pe_octaves >= 0, "pe_octaves must be >= 0")
        check(self.hidden_layers >= 1 and self.hidden_units >= 1, "network must have hidden units")
        check(self.deform_iters >= 0, "deform_iters must be >= 0")
        check(self.deform_lr > 0.0, "deform_lr must be > 0")
        check(self.smoothness_weight >= 0.0, "smoothness_weight must be >= 0")
        check(self.k_rot >= 3, "k_rot must be >= 3")
        check(self.n_samples >= 2, "n_samples must be >= 2")
        check(
            len(self.background) == 3 and all(0.0 <= c <= 1.0 for c in self.background),
            "background must be three values in [0, 1]",
        )
        check(self.leaf_size >= 1, "leaf_size must be >= 1")
        check(bool(self.ablation_n_kp) and all(n >= 4 for n in self.ablation_n_kp), "ablation_n_kp entries must be >= 4")
        check(len(self.ablation_bending) >= 1, "ablation_bending needs at least one variant")

        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def resolved_threads(self) -> int:
        if self.threads is not None:
            return self.threads
        raw = os.getenv(THREADS_ENV)
        if raw:
            try:
                value = int(raw)
            except ValueError as exc:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
            if value < 1:
                raise ConfigError(f"{THREADS_ENV} must be >= 1")
            return value
        return 1

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def save(self, path: Path) -> None:
        from .io_utils import write_json

        write_json(Path(path), self.to_dict())


def config_fields() -> Dict[str, Any]:
    return {f.name: f for f in fields(Config)}


_BOOL_FIELDS = {f.name for f in fields(Config) if f.metadata["parse"] is _parse_bool}


def _coerce(name: str, value: Any) -> Any:
    """Coerce a JSON or command-line value onto the field type via its parser."""
    parse = config_fields()[name].metadata["parse"]
    if value is None:
        if name != "threads":
            raise ValueError("null is not allowed")
        return None
    if isinstance(value, str):
        return parse(value)
    if name in _BOOL_FIELDS:
        if not isinstance(value, bool):
            raise ValueError("expected true or false")
        return value
    if isinstance(value, bool):
        raise ValueError("booleans are only valid for switches")
    if isinstance(value, list):
        return parse(json.dumps(value))
    return parse(str(value))


def load_config(
    path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None
) -> Config:
    """Resolve a Config with precedence overrides > file > defaults."""
    known = config_fields()
    values: Dict[str, Any] = {}

    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        except (OSError, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"{path}: unknown keys {unknown}")
        values.update(data)

    for key, value in (overrides or {}).items():
        if key not in known:
            raise ConfigError(f"unknown option {key!r}")
        values[key] = value

    coerced: Dict[str, Any] = {}
    for key, value in values.items():
        try:
            coerced[key] = _coerce(key, value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc

    return Config(**coerced).validate()
