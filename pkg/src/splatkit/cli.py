"""``splatkit`` command line.

    splatkit synth --out data/ --seed 7
    splatkit fit --data data/ --out run/ --iters 2000
    splatkit render --scene run/scene.splat --data data/ --out frames/ --view 0,3 --labels
    splatkit edit --scene run/scene.splat --data data/ --out edit/ --mock-editor --prompt "dye the hair blue"
    splatkit eval --rendered frames/ --reference data/images --out report/
    splatkit gradcheck

Flags are validated into a :class:`RunConfig`, copied onto the setting sections
and every resolved option is written to ``resolved.ini`` in the output directory.
Exit codes: 0 success, 2 usage or configuration error, 3 edit refused, 1 any
other failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Literal

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import settings
from .dataset import load_dataset
from .editing import KeywordRefiner, MockEditor
from .exceptions import (
    ConfigError,
    DatasetError,
    DimensionMismatchError,
    InvalidConverterError,
    MissingFileError,
    PromptRefusedError,
    SplatkitError,
    TopologyMismatchError,
)
from .ext.pydantic import apply_model
from .gradcheck import run_gradcheck
from .log import configure_logging
from .metrics import compute_metrics, load_metric_plugin, write_metrics_csv
from .pipeline import contact_sheet, dataset_nodes, render_nodes, run_edit
from .renderer import render
from .rig import pose_splats
from .segmentation import LABEL_NAMES
from .storage import DirectoryLock, load_image, load_obj, load_scene, save_image, save_label_map
from .synthetic import generate_synthetic_scene
from .training import fit_modeling_stage

if TYPE_CHECKING:
    from collections.abc import Sequence

    from .editing import Editor, Refiner

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_REFUSED = 3
RESOLVED = "resolved.ini"
CONTACT_SHEET = "contact_sheet.png"
SHEET_NODES = 4

Command = Literal["synth", "fit", "render", "edit", "eval", "gradcheck"]


class ModelingFlags(BaseModel):  # noqa: D101
    iterations: int | None = Field(None, ge=0)
    seed: int | None = None
    lambda_rgb: float | None = Field(None, ge=0.0, le=1.0)
    lambda_track: float | None = Field(None, ge=0.0, le=1.0)
    lambda_rec: float | None = Field(None, ge=0.0, le=1.0)
    initial_splats: int | None = Field(None, ge=1)
    holdout: tuple[int, ...] | None = None


class DensityFlags(BaseModel):  # noqa: D101
    interval: int | None = Field(None, ge=1)
    max_splats: int | None = Field(None, ge=1)


class EditingFlags(BaseModel):  # noqa: D101
    iterations: int | None = Field(None, ge=0)
    seed: int | None = None
    workers: int | None = Field(None, ge=1)
    weights: tuple[float, float, float] | None = None


class SyntheticFlags(BaseModel):  # noqa: D101
    cameras: int | None = Field(None, ge=1)
    frames: int | None = Field(None, ge=1)
    width: int | None = Field(None, ge=8)
    height: int | None = Field(None, ge=8)
    splats: int | None = Field(None, ge=1)


class GradcheckFlags(BaseModel):  # noqa: D101
    configs: int | None = Field(None, ge=1)
    seed: int | None = None


class RunConfig(BaseModel):
    """Validated command line of one run."""

    model_config = ConfigDict(frozen=True)

    command: Command
    out: Path | None = None
    data: Path | None = None
    scene: Path | None = None
    config: Path | None = None
    env_file: Path | None = None
    seed: int | None = None
    verbose: bool = False
    progress: bool = False
    modeling: ModelingFlags = ModelingFlags()
    density: DensityFlags = DensityFlags()
    editing: EditingFlags = EditingFlags()
    synthetic: SyntheticFlags = SyntheticFlags()
    gradcheck: GradcheckFlags = GradcheckFlags()
    resume: Path | None = None
    views: list[tuple[int, int]] = []
    mesh: Path | None = None
    labels: bool = False
    prompt: str = ""
    mock_editor: bool = False
    editor_url: str | None = None
    refiner_url: str | None = None
    cache_dir: Path | None = None
    rendered: Path | None = None
    reference: Path | None = None
    perceptual: str | None = None

    @model_validator(mode="after")
    def _exclusive_editor(self) -> RunConfig:
        if self.mock_editor and self.editor_url:
            msg = "--mock-editor and --editor-url are mutually exclusive."
            raise ValueError(msg)
        return self

    @model_validator(mode="after")
    def _writable_out(self) -> RunConfig:
        if self.out is not None and self.out.exists() and not self.out.is_dir():
            msg = f"--out {self.out} exists and is not a directory."
            raise ValueError(msg)
        return self


def _view(text: str) -> tuple[int, int]:
    match text.split(","):
        case [t, p] if t.strip().lstrip("-").isdigit() and p.strip().lstrip("-").isdigit():
            return int(t), int(p)
        case _:
            msg = f"expected FRAME,CAMERA, got {text!r}"
            raise argparse.ArgumentTypeError(msg)


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        msg = f"expected comma separated integers, got {text!r}"
        raise argparse.ArgumentTypeError(msg) from exc


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError as exc:
        msg = f"expected comma separated numbers, got {text!r}"
        raise argparse.ArgumentTypeError(msg) from exc


def build_parser() -> argparse.ArgumentParser:
    """Argument parser of every subcommand; defaults are shown from the setting sections."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    common.add_argument("--config", type=Path, help="settings file (.ini, .json, .toml, .yaml)")
    common.add_argument("--env-file", type=Path, help=".env file with EDITOR_URL, REFINER_URL, SERVICE_TOKEN")
    common.add_argument("--seed", type=int, help="random seed (default: 0)")
    common.add_argument("--progress", action="store_true", help="show progress bars")

    parser = argparse.ArgumentParser(prog="splatkit", description="Dynamic Gaussian splat avatars: fit, render and edit.")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    synth.add_argument("--out", type=Path, required=True)
    synth.add_argument("--cameras", type=int, help=f"camera count (default: {settings.Synthetic.cameras})")
    synth.add_argument("--frames", type=int, help=f"frame count (default: {settings.Synthetic.frames})")
    synth.add_argument("--width", type=int, help=f"image width (default: {settings.Synthetic.width})")
    synth.add_argument("--height", type=int, help=f"image height (default: {settings.Synthetic.height})")
    synth.add_argument("--splats", type=int, help=f"ground-truth splats (default: {settings.Synthetic.splats})")

    fit = sub.add_parser("fit", parents=[common], help="modeling stage: fit splats to a dataset")
    fit.add_argument("--data", type=Path, required=True)
    fit.add_argument("--out", type=Path, required=True)
    fit.add_argument("--iters", type=int, help=f"iterations (default: {settings.Modeling.iterations})")
    fit.add_argument("--lambda-rgb", type=float, help=f"L1/perceptual blend (default: {settings.Modeling.lambda_rgb})")
    fit.add_argument("--lambda-track", type=float, help=f"tracking blend (default: {settings.Modeling.lambda_track})")
    fit.add_argument("--lambda-rec", type=float, help=f"color/tracking blend (default: {settings.Modeling.lambda_rec})")
    fit.add_argument("--initial-splats", type=int, help=f"initial splats (default: {settings.Modeling.initial_splats})")
    fit.add_argument("--densify-interval", type=int, help=f"densify every N iterations (default: {settings.Density.interval})")
    fit.add_argument("--max-splats", type=int, help=f"splat cap (default: {settings.Density.max_splats})")
    fit.add_argument("--holdout", type=_ints, help="comma separated cameras left out of training")
    fit.add_argument("--resume", type=Path, help="checkpoint .splat file to continue from")

    rend = sub.add_parser("render", parents=[common], help="render a scene at dataset views or a driving mesh")
    rend.add_argument("--scene", type=Path, required=True)
    rend.add_argument("--data", type=Path, required=True)
    rend.add_argument("--out", type=Path, required=True)
    rend.add_argument("--view", dest="views", type=_view, action="append", default=[], help="FRAME,CAMERA (repeatable)")
    rend.add_argument("--mesh", type=Path, help="OBJ with the dataset topology to drive the avatar")
    rend.add_argument("--labels", action="store_true", help="also write label maps")

    edit = sub.add_parser("edit", parents=[common], help="edit a scene from a text prompt")
    edit.add_argument("--scene", type=Path, required=True)
    edit.add_argument("--data", type=Path, required=True)
    edit.add_argument("--out", type=Path, required=True)
    edit.add_argument("--prompt", required=True)
    edit.add_argument("--mock-editor", action="store_true", help="use the local deterministic editor")
    edit.add_argument("--editor-url", help="image editor endpoint (env EDITOR_URL)")
    edit.add_argument("--refiner-url", help="prompt refiner endpoint (env REFINER_URL); keyword refiner otherwise")
    edit.add_argument("--cache-dir", type=Path, help="cache remote responses here")
    edit.add_argument("--iters", type=int, help=f"iterations (default: {settings.Editing.iterations})")
    edit.add_argument("--workers", type=int, help=f"concurrent editor requests (default: {settings.Editing.workers})")
    edit.add_argument("--weights", type=_floats, help="rgb,anchor,adversarial weights (default: 1.0,1.0,0.1)")

    ev = sub.add_parser("eval", parents=[common], help="PSNR/SSIM of rendered images against references")
    ev.add_argument("--rendered", type=Path, required=True)
    ev.add_argument("--reference", type=Path, required=True)
    ev.add_argument("--out", type=Path, required=True)
    ev.add_argument("--perceptual", help="perceptual metric plugin as module:factory")

    grad = sub.add_parser("gradcheck", parents=[common], help="check analytic gradients against finite differences")
    grad.add_argument("--out", type=Path)
    grad.add_argument("--configs", type=int, help=f"random scenes (default: {settings.Gradcheck.configs})")
    return parser


def run_config(args: argparse.Namespace) -> RunConfig:
    """Validate parsed flags."""
    flags = vars(args)
    seed = flags.get("seed")
    return RunConfig(
        command=args.command,
        out=flags.get("out"),
        data=flags.get("data"),
        scene=flags.get("scene"),
        config=flags.get("config"),
        env_file=flags.get("env_file"),
        seed=seed,
        verbose=flags.get("verbose", False),
        progress=flags.get("progress", False),
        modeling=ModelingFlags(
            iterations=flags.get("iters") if args.command == "fit" else None,
            seed=seed,
            lambda_rgb=flags.get("lambda_rgb"),
            lambda_track=flags.get("lambda_track"),
            lambda_rec=flags.get("lambda_rec"),
            initial_splats=flags.get("initial_splats"),
            holdout=flags.get("holdout"),
        ),
        density=DensityFlags(interval=flags.get("densify_interval"), max_splats=flags.get("max_splats")),
        editing=EditingFlags(
            iterations=flags.get("iters") if args.command == "edit" else None,
            seed=seed,
            workers=flags.get("workers"),
            weights=flags.get("weights"),
        ),
        synthetic=SyntheticFlags(
            cameras=flags.get("cameras"),
            frames=flags.get("frames"),
            width=flags.get("width"),
            height=flags.get("height"),
            splats=flags.get("splats"),
        ),
        gradcheck=GradcheckFlags(configs=flags.get("configs"), seed=seed),
        resume=flags.get("resume"),
        views=flags.get("views", []),
        mesh=flags.get("mesh"),
        labels=flags.get("labels", False),
        prompt=flags.get("prompt", ""),
        mock_editor=flags.get("mock_editor", False),
        editor_url=flags.get("editor_url"),
        refiner_url=flags.get("refiner_url"),
        cache_dir=flags.get("cache_dir"),
        rendered=flags.get("rendered"),
        reference=flags.get("reference"),
        perceptual=flags.get("perceptual"),
    )


def apply_config(config: RunConfig) -> None:
    """Bind the settings file, then copy flags onto the sections."""
    if config.config is not None:
        if not config.config.exists():
            msg = f"Settings file {config.config} does not exist."
            raise ConfigError(msg)
        settings.RunSetting.set_file(config.config)
    if config.env_file is not None:
        settings.ServiceSetting.load_dotenv(config.env_file)
    apply_model(settings.Modeling, config.modeling)
    apply_model(settings.Density, config.density)
    apply_model(settings.Editing, config.editing)
    apply_model(settings.Synthetic, config.synthetic)
    apply_model(settings.Gradcheck, config.gradcheck)
    if config.editor_url:
        settings.Services.editor_url = config.editor_url
    if config.refiner_url:
        settings.Services.refiner_url = config.refiner_url


def cmd_synth(config: RunConfig) -> int:
    """Write a synthetic dataset to ``--out``."""
    out = config.out
    generate_synthetic_scene(config.seed or 0, settings.synthetic_config(), out)
    settings.RunSetting.dump(out / RESOLVED)
    return EXIT_OK


def cmd_fit(config: RunConfig) -> int:
    """Run the modeling stage; writes ``scene.splat``, checkpoints and ``train_log.csv``."""
    dataset = load_dataset(config.data)
    with DirectoryLock(config.out):
        settings.RunSetting.dump(config.out / RESOLVED)
        result = fit_modeling_stage(
            dataset,
            settings.fit_options(),
            out_dir=config.out,
            resume=config.resume,
            progress=config.progress,
        )
    logger.info(f"Wrote {config.out / 'scene.splat'} ({len(result.scene)} splats)")
    return EXIT_OK


def cmd_render(config: RunConfig) -> int:
    """Render ``--scene`` at the requested views, or driven by ``--mesh``."""
    dataset = load_dataset(config.data)
    scene = load_scene(config.scene)
    views = config.views or list(dataset.cells())
    for t, p in views:
        if not (0 <= t < dataset.frame_count and 0 <= p < dataset.camera_count):
            msg = f"View ({t}, {p}) is outside {dataset.frame_count} frames x {dataset.camera_count} cameras."
            raise DatasetError(msg, cell=(t, p))
    driver = None
    if config.mesh is not None:
        driver = load_obj(config.mesh)
        rest = dataset.mesh(0)
        if rest is not None and not rest.same_topology(driver):
            msg = f"{config.mesh} does not share the dataset's mesh topology."
            raise TopologyMismatchError(msg)
    with DirectoryLock(config.out):
        settings.RunSetting.dump(config.out / RESOLVED)
        for t, p in views:
            mesh = driver if driver is not None else dataset.mesh(t)
            world = scene if mesh is None else pose_splats(scene, mesh)
            output = render(world, dataset.cameras[p])
            stem = f"{t:03d}_{p:02d}" if driver is None else f"mesh_{t:03d}_{p:02d}"
            save_image(config.out / f"render_{stem}.png", output.color)
            if config.labels:
                save_label_map(config.out / f"labels_{stem}.png", output.labels)
    logger.info(f"Rendered {len(views)} view(s) to {config.out}")
    return EXIT_OK


def _services(config: RunConfig) -> tuple[Refiner, Editor]:
    options = settings.service_options(config.cache_dir)
    refiner: Refiner = KeywordRefiner()
    if options.refiner_url:
        from .ext.remote import RemoteRefiner  # noqa: PLC0415

        refiner = RemoteRefiner(options)
    if config.mock_editor:
        return refiner, MockEditor()
    if not options.editor_url:
        msg = "No editor: pass --mock-editor or --editor-url (or set EDITOR_URL)."
        raise ConfigError(msg)
    from .ext.remote import RemoteEditor  # noqa: PLC0415

    return refiner, RemoteEditor(options)


def cmd_edit(config: RunConfig) -> int:
    """Refine the prompt, edit every node and fit the edited scene; writes ``scene.splat`` and a contact sheet."""
    dataset = load_dataset(config.data)
    scene = load_scene(config.scene)
    refiner, editor = _services(config)
    label_names = dict(dataset.label_names) or dict(LABEL_NAMES)
    with DirectoryLock(config.out):
        settings.RunSetting.dump(config.out / RESOLVED)
        outcome = run_edit(
            scene,
            dataset,
            config.prompt,
            refiner=refiner,
            editor=editor,
            label_names=label_names,
            options=settings.pipeline_options(),
            out_dir=config.out,
            progress=config.progress,
        )
        (config.out / "plan.json").write_text(outcome.plan.model_dump_json(indent=2), encoding="utf-8")
        shown = dataset_nodes(dataset)[:SHEET_NODES]
        after = render_nodes(outcome.scene, dataset, shown)
        save_image(config.out / CONTACT_SHEET, contact_sheet([outcome.before[n] for n in shown], [after[n] for n in shown]))
    logger.info(f"Edited scene written to {config.out}")
    return EXIT_OK


def cmd_eval(config: RunConfig) -> int:
    """Write ``metrics.csv`` comparing same-named PNGs of two directories."""
    perceptual = None if config.perceptual is None else load_metric_plugin(config.perceptual)
    names = sorted(path.name for path in config.rendered.glob("*.png"))
    if not names:
        msg = f"No PNG images in {config.rendered}."
        raise MissingFileError(msg)
    rows = []
    for name in names:
        reference = config.reference / name
        if not reference.exists():
            msg = f"No reference image {reference} for {name}."
            raise MissingFileError(msg)
        rows.append((name, compute_metrics(load_image(config.rendered / name), load_image(reference), perceptual)))
    path = write_metrics_csv(config.out / "metrics.csv", rows)
    settings.RunSetting.dump(config.out / RESOLVED)
    mean_psnr = float(np.mean([m.psnr for _, m in rows]))
    mean_ssim = float(np.mean([m.ssim for _, m in rows]))
    logger.info(f"{len(rows)} image(s): PSNR {mean_psnr:.2f} dB, SSIM {mean_ssim:.4f} -> {path}")
    return EXIT_OK


def cmd_gradcheck(config: RunConfig) -> int:
    """Report the worst relative gradient error per parameter class."""
    report = run_gradcheck(settings.gradcheck_options(), progress=config.progress)
    lines = [f"{name:<10} {error:.3e}" for name, error in report.per_class.items()]
    lines.append(f"max relative error {report.max_error:.3e} over {report.coordinates} coordinates in {report.configs} scenes")
    for line in lines:
        logger.info(line)
    sys.stdout.write("\n".join(lines) + "\n")
    if config.out is not None:
        config.out.mkdir(parents=True, exist_ok=True)
        (config.out / "gradcheck.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        settings.RunSetting.dump(config.out / RESOLVED)
    return EXIT_OK if report.passed else EXIT_FAILURE


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "render": cmd_render,
    "edit": cmd_edit,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        config = run_config(args)
    except ValidationError as exc:
        sys.stderr.write(f"splatkit {args.command}: invalid arguments\n{exc}\n")
        return EXIT_USAGE
    sinks = configure_logging(config.out, verbose=config.verbose)
    try:
        apply_config(config)
        return COMMANDS[config.command](config)
    except PromptRefusedError as exc:
        logger.error(f"Edit refused: {exc.reason}")
        return EXIT_REFUSED
    except (ConfigError, DatasetError, DimensionMismatchError, InvalidConverterError, ValidationError) as exc:
        logger.error(str(exc))
        return EXIT_USAGE
    except SplatkitError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return EXIT_FAILURE
    finally:
        settings.RunSetting.reset()
        settings.ServiceSetting.reset()
        for sink in sinks:
            logger.remove(sink)


__all__ = ["RunConfig", "build_parser", "main", "run_config"]
