"""Desk-scale dynamic Gaussian splat avatars.

Splats are bound to the triangles of a tracked mesh, fitted to multi-view
captures (modeling stage) and edited from text prompts through a conditional
image editor (editing stage). Logging is disabled for library use; enable it
with ``logger.enable("splatkit")`` or :func:`splatkit.log.configure_logging`.
"""
from __future__ import annotations

from loguru import logger

from .camera import Camera, orbit_cameras
from .dataset import Dataset, load_dataset, save_dataset
from .editing import EditPlan, Instruction, KeywordRefiner, MockEditor, edit_image, plan_to_region, refine_prompt
from .exceptions import (
    ConfigError,
    DatasetError,
    InvalidConverterError,
    InvalidDefaultError,
    NoTargetError,
    PromptRefusedError,
    ServiceError,
    SplatkitError,
)
from .masks import MaskGrid, SplatSelection, build_mask_grid, select_splats, warp_mask
from .metrics import compute_metrics
from .pipeline import run_edit
from .renderer import render, render_label_mask
from .rig import MeshFrame, bind_splats, pose_splats
from .splat import GaussianSplat, Scene, pack_params, unpack_params
from .storage import load_scene, save_scene
from .synthetic import generate_synthetic_scene
from .training import fit_editing_stage, fit_modeling_stage

logger.disable("splatkit")

__all__ = [
    "Camera",
    "ConfigError",
    "Dataset",
    "DatasetError",
    "EditPlan",
    "GaussianSplat",
    "Instruction",
    "InvalidConverterError",
    "InvalidDefaultError",
    "KeywordRefiner",
    "MaskGrid",
    "MeshFrame",
    "MockEditor",
    "NoTargetError",
    "PromptRefusedError",
    "Scene",
    "ServiceError",
    "SplatSelection",
    "SplatkitError",
    "bind_splats",
    "build_mask_grid",
    "compute_metrics",
    "edit_image",
    "fit_editing_stage",
    "fit_modeling_stage",
    "generate_synthetic_scene",
    "load_dataset",
    "load_scene",
    "orbit_cameras",
    "pack_params",
    "plan_to_region",
    "pose_splats",
    "refine_prompt",
    "render",
    "render_label_mask",
    "run_edit",
    "save_dataset",
    "save_scene",
    "select_splats",
    "unpack_params",
    "warp_mask",
]
