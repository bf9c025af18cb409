"""Two-stage coarse-to-fine registration driver.

The coarse stage runs on 4x-downsampled images with the multi-scale NCC
metric; the fine stage runs at full resolution with gradient correlation,
starting from the coarse result.  Both stages minimize the negated
similarity with CMA-ES over the 6-vector (rx, ry, rz, tx, ty, tz) in
degrees and mm.

A candidate DRR with no intensity variation (anatomy off the detector)
receives a +1e6 penalty, which keeps the loss total; CMA-ES is rank-based
so the penalty only needs to dominate every valid loss.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import similarity
from .cmaes import CmaesConfig, MinimizeResult, Termination, minimize
from .drr import downsample, render_drr
from .errors import RadregError
from .geometry import CameraIntrinsics, Pose6
from .similarity import VARIANCE_EPS, ZeroVariance, gc, make_patch_grid, mncc
from .volume import Image2D, Volume

OFFSCREEN_PENALTY = 1e6


@dataclass(frozen=True)
class StageConfig:
    resolution: tuple = (256, 256)
    metric: str = "mncc"              # "mncc" or "gc"
    lam: float = 1.0
    patch_radius: int = 6
    sigma0: float = 15.0
    loss_threshold: Optional[float] = None  # None = metric-specific default
    stagnation_generations: int = 100
    max_evaluations: int = 20000
    population: Optional[int] = None

    def __post_init__(self):
        w, h = (int(v) for v in self.resolution)
        if w < 1 or h < 1:
            raise ValueError("stage resolution must be positive")
        if self.metric not in ("mncc", "gc"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.metric == "mncc" and self.patch_radius < 1:
            raise ValueError("patch_radius must be >= 1 for the mncc metric")
        object.__setattr__(self, "resolution", (w, h))

    def resolved_threshold(self) -> float:
        """Metric-specific convergence threshold when none was configured.

        mncc: 95% of the perfect score 1+K for this resolution and patch
        radius; gc: -0.995.
        """
        if self.loss_threshold is not None:
            return self.loss_threshold
        if self.metric == "gc":
            return -0.995
        k = len(make_patch_grid(self.resolution[0], self.resolution[1], self.patch_radius))
        return -0.95 * (1.0 + self.lam * k)


def default_coarse_stage() -> StageConfig:
    return StageConfig(resolution=(256, 256), metric="mncc", sigma0=15.0)


def default_fine_stage() -> StageConfig:
    return StageConfig(resolution=(1024, 1024), metric="gc", sigma0=2.0)


@dataclass(frozen=True)
class RegistrationConfig:
    coarse: StageConfig = field(default_factory=default_coarse_stage)
    fine: StageConfig = field(default_factory=default_fine_stage)
    seed: int = 0
    workers: Optional[int] = None


@dataclass(frozen=True)
class StageResult:
    pose: Pose6
    curve: tuple                 # per-generation best loss
    termination: Termination
    initial_loss: float
    final_loss: float
    evaluations: int


@dataclass(frozen=True)
class RegistrationResult:
    initial_pose: Pose6
    coarse_pose: Pose6
    final_pose: Pose6
    coarse: StageResult
    fine: StageResult
    config: RegistrationConfig
    wall_time_s: float


def stage_loss(fixed: Image2D, vol: Volume, intr: CameraIntrinsics,
               pose: Pose6, stage: StageConfig) -> float:
    """Negated stage similarity between the fixed image and the pose's DRR."""
    w, h = stage.resolution
    if (fixed.width, fixed.height) != (w, h):
        raise RadregError(
            f"fixed image is {fixed.width}x{fixed.height}, stage expects {w}x{h}"
        )
    drr = render_drr(vol, intr, pose, w, h)
    dc = drr.data - drr.data.mean()
    if np.mean(dc * dc) <= VARIANCE_EPS**2:
        return OFFSCREEN_PENALTY
    try:
        if stage.metric == "gc":
            return -gc(fixed, drr)
        return -mncc(fixed, drr, lam=stage.lam, r=stage.patch_radius)
    except ZeroVariance:
        return OFFSCREEN_PENALTY


def _fixed_for_stage(fixed_full: Image2D, stage: StageConfig) -> Image2D:
    w, h = stage.resolution
    if (fixed_full.width, fixed_full.height) == (w, h):
        return fixed_full
    if fixed_full.width % w or fixed_full.height % h:
        raise RadregError(
            f"stage resolution {w}x{h} does not divide the fixed image "
            f"{fixed_full.width}x{fixed_full.height}"
        )
    fx = fixed_full.width // w
    fy = fixed_full.height // h
    if fx != fy:
        raise RadregError("stage downsampling factors differ between axes")
    return downsample(fixed_full, fx)


def register_stage(fixed: Image2D, vol: Volume, intr: CameraIntrinsics,
                   init: Pose6, stage: StageConfig, seed: int = 0,
                   workers: Optional[int] = None) -> StageResult:
    """One CMA-ES stage; never returns a pose worse than its initialization."""
    threshold = stage.resolved_threshold()

    def loss(x) -> float:
        return stage_loss(fixed, vol, intr, Pose6.from_vector(x), stage)

    init_loss = loss(init.as_vector())
    cfg = CmaesConfig(
        n=6,
        mean0=init.as_vector(),
        sigma0=stage.sigma0,
        population=stage.population,
        seed=seed,
        max_evaluations=stage.max_evaluations,
        loss_threshold=threshold,
        stagnation_generations=stage.stagnation_generations,
    )
    res: MinimizeResult = minimize(loss, cfg, workers=workers)
    if res.best_loss < init_loss:
        pose, final_loss = Pose6.from_vector(res.best_x), res.best_loss
    else:
        pose, final_loss = init, init_loss
    return StageResult(
        pose=pose,
        curve=tuple(res.history),
        termination=res.termination,
        initial_loss=init_loss,
        final_loss=final_loss,
        evaluations=res.evaluations,
    )


def register(fixed_full: Image2D, vol: Volume, intr: CameraIntrinsics,
             init: Pose6, config: RegistrationConfig = RegistrationConfig()) -> RegistrationResult:
    """Full coarse-to-fine registration starting from ``init``."""
    t_start = time.perf_counter()
    coarse_fixed = _fixed_for_stage(fixed_full, config.coarse)
    fine_fixed = _fixed_for_stage(fixed_full, config.fine)

    coarse = register_stage(
        coarse_fixed, vol, intr, init, config.coarse,
        seed=2 * config.seed, workers=config.workers,
    )
    fine = register_stage(
        fine_fixed, vol, intr, coarse.pose, config.fine,
        seed=2 * config.seed + 1, workers=config.workers,
    )
    return RegistrationResult(
        initial_pose=init,
        coarse_pose=coarse.pose,
        final_pose=fine.pose,
        coarse=coarse,
        fine=fine,
        config=config,
        wall_time_s=time.perf_counter() - t_start,
    )


# --- flat key-value config files -------------------------------------------

_STAGE_KEYS = {
    "resolution", "metric", "lambda", "patch_radius", "sigma0",
    "loss_threshold", "stagnation_generations", "max_evaluations", "population",
}


def _parse_resolution(text: str) -> tuple:
    parts = text.replace("x", " ").split()
    if len(parts) == 1:
        return (int(parts[0]), int(parts[0]))
    if len(parts) == 2:
        return (int(parts[0]), int(parts[1]))
    raise RadregError(f"bad resolution {text!r}")


def _apply_stage_key(stage: StageConfig, key: str, value: str) -> StageConfig:
    if key == "resolution":
        return replace(stage, resolution=_parse_resolution(value))
    if key == "metric":
        return replace(stage, metric=value.strip().lower())
    if key == "lambda":
        return replace(stage, lam=float(value))
    if key == "patch_radius":
        return replace(stage, patch_radius=int(value))
    if key == "sigma0":
        return replace(stage, sigma0=float(value))
    if key == "loss_threshold":
        v = value.strip().lower()
        return replace(stage, loss_threshold=None if v == "auto" else float(value))
    if key == "stagnation_generations":
        return replace(stage, stagnation_generations=int(value))
    if key == "max_evaluations":
        return replace(stage, max_evaluations=int(value))
    if key == "population":
        v = value.strip().lower()
        return replace(stage, population=None if v in ("auto", "default") else int(value))
    raise RadregError(f"unknown stage key {key!r}")


def parse_config_text(lines) -> dict:
    """Parse ``key = value`` lines ('#' comments) into a flat mapping."""
    mapping = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise RadregError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        mapping[key] = value
    return mapping


def config_from_mapping(mapping: dict,
                        base: Optional[RegistrationConfig] = None) -> RegistrationConfig:
    """Build a RegistrationConfig from flat ``coarse.*`` / ``fine.*`` keys.

    Unrelated keys (``camera.*``, ``output_dir``) are ignored here; callers
    that own those settings read them from the same mapping.
    """
    cfg = base if base is not None else RegistrationConfig()
    coarse, fine = cfg.coarse, cfg.fine
    seed, workers = cfg.seed, cfg.workers
    for key, value in mapping.items():
        if key.startswith("coarse."):
            sub = key[len("coarse."):]
            if sub not in _STAGE_KEYS:
                raise RadregError(f"unknown config key {key!r}")
            coarse = _apply_stage_key(coarse, sub, value)
        elif key.startswith("fine."):
            sub = key[len("fine."):]
            if sub not in _STAGE_KEYS:
                raise RadregError(f"unknown config key {key!r}")
            fine = _apply_stage_key(fine, sub, value)
        elif key == "seed":
            seed = int(value)
        elif key == "workers":
            workers = int(value) if int(value) > 1 else None
        elif key.startswith("camera.") or key == "output_dir":
            continue
        else:
            raise RadregError(f"unknown config key {key!r}")
    return RegistrationConfig(coarse=coarse, fine=fine, seed=seed, workers=workers)


def load_config(path, base: Optional[RegistrationConfig] = None) -> RegistrationConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_mapping(parse_config_text(fh), base=base)


def _stage_config_lines(prefix: str, stage: StageConfig):
    yield f"{prefix}.resolution = {stage.resolution[0]} {stage.resolution[1]}"
    yield f"{prefix}.metric = {stage.metric}"
    yield f"{prefix}.lambda = {stage.lam:.17g}"
    yield f"{prefix}.patch_radius = {stage.patch_radius}"
    yield f"{prefix}.sigma0 = {stage.sigma0:.17g}"
    yield f"{prefix}.loss_threshold = {stage.resolved_threshold():.17g}"
    yield f"{prefix}.stagnation_generations = {stage.stagnation_generations}"
    yield f"{prefix}.max_evaluations = {stage.max_evaluations}"
    yield f"{prefix}.population = {stage.population if stage.population else 'auto'}"


def format_report(result: RegistrationResult) -> str:
    """Key-value text report for one registration (no timing: reruns with
    the same seed must produce identical bytes)."""
    p = result.final_pose
    lines = ["[registration]"]
    for name, pose in (
        ("initial_pose", result.initial_pose),
        ("coarse_pose", result.coarse_pose),
        ("final_pose", result.final_pose),
    ):
        lines.append(
            f"{name} = {pose.rx:.17g} {pose.ry:.17g} {pose.rz:.17g} "
            f"{pose.tx:.17g} {pose.ty:.17g} {pose.tz:.17g}"
        )
    for name, stage in (("coarse", result.coarse), ("fine", result.fine)):
        lines.append(f"{name}.termination = {stage.termination.value}")
        lines.append(f"{name}.initial_loss = {stage.initial_loss:.17g}")
        lines.append(f"{name}.final_loss = {stage.final_loss:.17g}")
        lines.append(f"{name}.evaluations = {stage.evaluations}")
        lines.append(f"{name}.generations = {len(stage.curve)}")
    lines.append("")
    lines.append("[config]")
    lines.append(f"seed = {result.config.seed}")
    lines.extend(_stage_config_lines("coarse", result.config.coarse))
    lines.extend(_stage_config_lines("fine", result.config.fine))
    return "\n".join(lines) + "\n"


def format_loss_curves(result: RegistrationResult) -> str:
    """CSV of per-generation best losses for both stages."""
    rows = ["stage,generation,best_loss"]
    for name, stage in (("coarse", result.coarse), ("fine", result.fine)):
        for g, loss in enumerate(stage.curve):
            rows.append(f"{name},{g},{loss:.17g}")
    return "\n".join(rows) + "\n"
