"""Command-line entry point: generate | fit-radiance | deform | render | evaluate."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from .config import RESOLVED_CONFIG_NAME, THREADS_ENV, Config, config_fields, load_config
from .errors import BadParams, ConfigError, IoError, PointMorphError
from .evaluation.ablation import AblationSettings, run_ablation
from .evaluation.bundle import SceneBundle, load_array, read_bundle, save_array, write_bundle
from .evaluation.synthetic import SceneParams, generate_scene
from .geometry.spatial_index import KdTree
from .io_utils import digest_outputs, update_manifest
from .motion.deformation import FitOptions, apply_deformation, fit_sequence, load_keypoints, save_field
from .motion.rotation_field import RotationField, estimate_rotation_field
from .radiance.fitting import fit_radiance
from .radiance.neural_points import NeuralPointCloud
from .radiance.ply_io import load_cloud, save_cloud
from .radiance.sh import num_bases, rgb_to_dc
from .render.image_io import write_png, write_ppm
from .render.volume import render

logger = logging.getLogger(__name__)

FITTED_CLOUD_NAME = "cloud_fitted.ply"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
INITIAL_GREY = 0.5


def field_path(work: Path, t: int) -> Path:
    return work / "fields" / f"field_{t:03d}.bin"


def deformed_path(work: Path, t: int) -> Path:
    return work / "frames" / f"deformed_{t:03d}.ply"


def rotations_path(work: Path, t: int) -> Path:
    return work / "frames" / f"rotations_{t:03d}.npy"


def render_path(work: Path, t: int, suffix: str = ".ppm") -> Path:
    return work / "renders" / f"frame_{t:03d}{suffix}"


def _finish(cfg: Config, out_dir: Path, command: str, outputs: List[Path]) -> None:
    """Save the resolved config next to the outputs and record their digests."""
    cfg.save(out_dir / RESOLVED_CONFIG_NAME)
    update_manifest(out_dir, {command: {"seed": cfg.seed, "outputs": digest_outputs(outputs, out_dir)}})
    logger.info("%s: %d outputs in %s", command, len(outputs), out_dir)


def _settings(cfg: Config, threads: int, quantize: bool = False) -> AblationSettings:
    return AblationSettings(
        deform_iters=cfg.deform_iters,
        fit=_fit_options(cfg),
        warm_start=cfg.warm_start,
        k_rot=cfg.k_rot,
        n_samples=cfg.n_samples,
        background=tuple(cfg.background),
        threads=threads,
        seed=cfg.seed,
        leaf_size=cfg.leaf_size,
        quantize=quantize,
    )


def _fit_options(cfg: Config) -> FitOptions:
    return FitOptions(
        lr=cfg.deform_lr,
        octaves=cfg.pe_octaves,
        hidden_layers=cfg.hidden_layers,
        hidden_units=cfg.hidden_units,
        smoothness_weight=cfg.smoothness_weight,
        seed=cfg.seed,
        progress=cfg.progress,
    )


def _radiance_cloud(cfg: Config, bundle: SceneBundle) -> NeuralPointCloud:
    """The fitted cloud when present and requested, otherwise the ground truth."""
    fitted = Path(cfg.work_dir) / FITTED_CLOUD_NAME
    if cfg.use_fitted_cloud and fitted.exists():
        logger.info("using fitted radiance from %s", fitted)
        return load_cloud(fitted)
    return bundle.scene.cloud


def cmd_generate(cfg: Config, threads: int) -> int:
    root = Path(cfg.bundle_dir)
    try:
        scene = generate_scene(cfg.scene_kind, SceneParams.from_config(cfg), cfg.seed)
    except BadParams as exc:
        raise ConfigError(str(exc)) from exc
    outputs = write_bundle(root, scene, _settings(cfg, threads))
    _finish(cfg, root, "generate", outputs)
    return 0


def cmd_fit_radiance(cfg: Config, threads: int) -> int:
    bundle = read_bundle(Path(cfg.bundle_dir))
    scene = bundle.scene
    n = len(scene.cloud)
    sh = np.zeros((n, 3, num_bases(cfg.sh_degree)))
    sh[:, :, 0] = rgb_to_dc(np.full(3, INITIAL_GREY))
    start = scene.cloud.with_features(sh_coeffs=sh, density=np.full(n, cfg.initial_density))

    fitted = fit_radiance(
        start,
        list(zip(scene.train_cameras, bundle.train_images)),
        cfg.radiance_iters,
        lr=cfg.radiance_lr,
        batch_size=cfg.radiance_batch,
        n_samples=cfg.n_samples,
        seed=cfg.seed,
        background=cfg.background,
        progress=cfg.progress,
        leaf_size=cfg.leaf_size,
    )
    work = Path(cfg.work_dir)
    save_cloud(work / FITTED_CLOUD_NAME, fitted)
    _finish(cfg, work, "fit-radiance", [work / FITTED_CLOUD_NAME])
    return 0


def cmd_deform(cfg: Config, threads: int) -> int:
    bundle = read_bundle(Path(cfg.bundle_dir))
    cloud = _radiance_cloud(cfg, bundle)
    frames = load_keypoints(Path(cfg.bundle_dir) / "keypoints.json")
    options = _fit_options(cfg)
    options.bounds = bundle.scene.character_box()
    fields = fit_sequence(frames, cfg.deform_iters, options=options, warm_start=cfg.warm_start)

    work = Path(cfg.work_dir)
    outputs: List[Path] = []
    for frame, model in zip(frames, fields):
        t = frame.t
        deformed = apply_deformation(model, cloud)
        rotations = estimate_rotation_field(cloud, deformed, cfg.k_rot, leaf_size=cfg.leaf_size, threads=threads)
        save_field(field_path(work, t), model)
        save_cloud(deformed_path(work, t), deformed)
        save_array(rotations_path(work, t), rotations.quats)
        outputs += [field_path(work, t), deformed_path(work, t), rotations_path(work, t)]
    _finish(cfg, work, "deform", outputs)
    return 0


def cmd_render(cfg: Config, threads: int) -> int:
    bundle = read_bundle(Path(cfg.bundle_dir))
    cloud = _radiance_cloud(cfg, bundle)
    work = Path(cfg.work_dir)
    outputs: List[Path] = []
    for t, cam in enumerate(bundle.scene.test_cameras):
        deformed = load_cloud(deformed_path(work, t))
        if len(deformed) != len(cloud):
            raise IoError(f"{deformed_path(work, t)} does not match the radiance cloud; rerun deform")
        index = KdTree(deformed.positions, cfg.leaf_size)
        field = RotationField(load_array(rotations_path(work, t)), index, cfg.k_rot, deformed.r_agg)
        frame = render(
            cloud,
            cam,
            deformed=deformed,
            field=field,
            bending=cfg.bending,
            seed=cfg.seed,
            n_samples=cfg.n_samples,
            background=cfg.background,
            threads=threads,
            index=index,
            frame_index=t,
        )
        write_ppm(render_path(work, t), frame.rgb)
        outputs.append(render_path(work, t))
        if cfg.write_png:
            write_png(render_path(work, t, ".png"), frame.rgb)
            outputs.append(render_path(work, t, ".png"))
    _finish(cfg, work, "render", outputs)
    return 0


def cmd_evaluate(cfg: Config, threads: int) -> int:
    bundle = read_bundle(Path(cfg.bundle_dir))
    report = run_ablation(
        bundle.scene,
        cfg.ablation_n_kp,
        cfg.ablation_bending,
        _settings(cfg, threads, quantize=True),
        cloud=_radiance_cloud(cfg, bundle),
        truth=bundle.truth_images,
        masks=bundle.masks,
        train_images=bundle.train_images,
    )
    work = Path(cfg.work_dir)
    report.write_csv(work / "report.csv")
    report.write_table(work / "report.md")
    print(report.table(), end="")
    _finish(cfg, work, "evaluate", [work / "report.csv", work / "report.md"])
    return 0


COMMANDS: Dict[str, Callable[[Config, int], int]] = {
    "generate": cmd_generate,
    "fit-radiance": cmd_fit_radiance,
    "deform": cmd_deform,
    "render": cmd_render,
    "evaluate": cmd_evaluate,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON config file")
    for name, field in config_fields().items():
        flag = "--" + name.replace("_", "-")
        default = field.default_factory() if callable(field.default_factory) else field.default
        help_text = f"{field.metadata['help']} (default: {default})"
        if isinstance(default, bool):
            parser.add_argument(flag, dest=name, nargs="?", const="true", default=argparse.SUPPRESS, help=help_text)
        else:
            parser.add_argument(flag, dest=name, default=argparse.SUPPRESS, help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointmorph",
        description=__doc__,
        epilog=f"{THREADS_ENV} caps worker threads when --threads is not given. "
        "Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numeric divergence.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler in COMMANDS.items():
        _add_config_flags(sub.add_parser(name, help=handler.__name__.replace("cmd_", "").replace("_", " ")))
    return parser


def _configure_logging(level: str) -> None:
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config")
    overrides: Dict[str, Any] = args

    _configure_logging("INFO")
    try:
        cfg = load_config(config_path, overrides)
        if cfg.ci and "seed" not in overrides:
            raise ConfigError("--seed is required in CI mode")
        _configure_logging(cfg.log_level)
        threads = cfg.resolved_threads()
        torch.set_num_threads(threads)
        torch.use_deterministic_algorithms(True)
        return COMMANDS[command](cfg, threads)
    except PointMorphError as exc:
        logger.error("%s: %s", exc.category, exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
