"""Tiled sampling loops.

One run draws seeded noise on the canvas, then repeats: crop every planned
tile, denoise the tiles (concurrently if configured), merge the predictions
with the prior-regularized closed form, and take one Euler step in sigma.
The state convention is x = clean + sigma * (noise - clean), so the model
output approximates noise - clean, the one-step clean estimate is
x - sigma * y, and integration follows x' = x + (sigma' - sigma) * y.

Accumulation always happens in plan order after the (possibly parallel)
predictions are gathered, so runs are bitwise reproducible regardless of the
worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .blending import DEFAULT_MIN_WEIGHT, ramp_weight_map
from .denoisers import DenoiserRequest
from .errors import ConfigError, DenoiseError, ShapeError
from .fusion import FusionAccumulator, accumulate, fuse_fd_flow, fuse_md
from .planner import TilePlan, plan_tiles
from .schedules import PriorScheduleConfig, SigmaSchedule
from .tensor import as_latent, crop, ensure_finite, trilinear_resize

RUN_MODES = ("md", "fd", "fd_regional")
PREDICTION_KINDS = ("flow", "eps")
WORKER_CAP_ENV = "TILEFUSE_MAX_WORKERS"


@dataclass(frozen=True)
class SamplerConfig:
    canvas_shape: tuple[int, int, int, int]
    steps: int = 6
    sigmas: tuple[float, ...] | None = None  # custom sampled levels, sans final 0
    window_h: int = 60
    window_w: int = 104
    overlap: float = 0.3
    ramp: int | tuple[int, int] | None = None  # None: span the overlap extent
    min_weight: float = DEFAULT_MIN_WEIGHT
    prior: PriorScheduleConfig = field(default_factory=PriorScheduleConfig)
    mode: str = "fd"
    prediction: str = "flow"
    seed: int = 0
    workers: int = 1
    strict: bool = True
    conditioning: str = ""

    def __post_init__(self):
        if self.mode not in RUN_MODES:
            raise ConfigError(f"unknown run mode {self.mode!r}")
        if self.prediction not in PREDICTION_KINDS:
            raise ConfigError(f"unknown prediction kind {self.prediction!r}")
        if len(self.canvas_shape) != 4 or min(self.canvas_shape) < 1:
            raise ConfigError(f"bad canvas shape {self.canvas_shape}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit value, got {self.seed}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.mode == "fd_regional":
            if self.prior.mode != "regional":
                raise ConfigError("fd_regional mode needs a regional prior schedule")
            a = self.prior.activity_map
            if a.shape != self.canvas_shape[2:]:
                raise ConfigError(
                    f"activity map {a.shape} does not match canvas "
                    f"{self.canvas_shape[2:]}"
                )
        elif self.mode == "fd" and self.prior.mode == "regional":
            raise ConfigError("regional prior schedule requires fd_regional mode")

    def schedule(self) -> SigmaSchedule:
        if self.sigmas is not None:
            sched = SigmaSchedule.from_list(list(self.sigmas))
            if sched.steps != self.steps:
                raise ConfigError(
                    f"custom schedule has {sched.steps} steps, config says {self.steps}"
                )
            return sched
        return SigmaSchedule.linear(self.steps)

    def plan(self) -> TilePlan:
        return plan_tiles(
            self.canvas_shape[2],
            self.canvas_shape[3],
            self.window_h,
            self.window_w,
            self.overlap,
        )

    def effective_workers(self) -> int:
        cap = os.environ.get(WORKER_CAP_ENV)
        if cap:
            try:
                return max(1, min(self.workers, int(cap)))
            except ValueError as exc:
                raise ConfigError(
                    f"{WORKER_CAP_ENV} must be an integer, got {cap!r}"
                ) from exc
        return self.workers


@dataclass(frozen=True)
class StepRecord:
    step: int
    t: float
    sigma: float
    lam_min: float
    lam_max: float
    fg_mse: float | None
    bg_mse: float | None


@dataclass
class RunTrace:
    records: list[StepRecord] = field(default_factory=list)

    HEADER = "step\tt\tsigma\tlambda_min\tlambda_max\tfg_mse\tbg_mse"

    def to_tsv(self) -> str:
        def cell(v):
            return "-" if v is None else f"{v:.8g}"

        lines = [self.HEADER]
        for r in self.records:
            lines.append(
                f"{r.step}\t{r.t:.8g}\t{r.sigma:.8g}\t{cell(r.lam_min)}"
                f"\t{cell(r.lam_max)}\t{cell(r.fg_mse)}\t{cell(r.bg_mse)}"
            )
        return "\n".join(lines) + "\n"


def make_noise(canvas_shape, seed: int, stream: int = 0) -> np.ndarray:
    """Standard-normal canvas from the counter-based Philox generator,
    filled in canonical layout order. Distinct streams of one seed are
    independent (stage separation in the pipeline)."""
    key = np.array([seed, stream], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal(canvas_shape, dtype=np.float32)


def build_prior(prior_latent: np.ndarray, canvas_shape) -> np.ndarray:
    """Upsample a native-resolution prior onto the canvas grid."""
    prior_latent = as_latent(prior_latent, "prior")
    c, t, h, w = canvas_shape
    if prior_latent.shape[0] != c:
        raise ShapeError(
            f"prior has {prior_latent.shape[0]} channels, canvas has {c}"
        )
    return trilinear_resize(prior_latent, t, h, w)


def euler_update(x: np.ndarray, y: np.ndarray, dsigma: float) -> np.ndarray:
    return (x.astype(np.float64) + dsigma * y.astype(np.float64)).astype(np.float32)


def trace_prior_mse(x_t, sigma_t, y, x_prior, activity=None):
    """Mean squared distance of the one-step clean estimate from the prior,
    split by the activity partition. Empty partitions report None."""
    x0 = x_t.astype(np.float64) - sigma_t * y.astype(np.float64)
    sq = (x0 - x_prior.astype(np.float64)) ** 2
    if activity is None:
        return float(sq.mean()), None
    mask = np.broadcast_to(np.asarray(activity, dtype=bool), sq.shape)
    fg = float(sq[mask].mean()) if mask.any() else None
    bg = float(sq[~mask].mean()) if not mask.all() else None
    return fg, bg


class TiledSampler:
    """Bound sampling state: plan, schedule, weight maps, prior, denoiser."""

    def __init__(self, cfg: SamplerConfig, denoiser, prior=None):
        if cfg.prediction == "eps":
            raise ConfigError(
                "the sampling loop integrates flow velocities; epsilon "
                "prediction is supported at the fusion level only"
            )
        self.cfg = cfg
        self.denoiser = denoiser
        self.plan = cfg.plan()
        self.schedule = cfg.schedule()

        needs_prior = cfg.mode != "md" and cfg.prior.lambda_base > 0
        if prior is None:
            if needs_prior:
                raise ConfigError("prior-regularized run needs a prior latent")
            self.prior = np.zeros(cfg.canvas_shape, dtype=np.float32)
        else:
            self.prior = build_prior(prior, cfg.canvas_shape)

        if cfg.ramp is None:
            ramp = (
                max(0, self.plan.window_h - self.plan.stride_h),
                max(0, self.plan.window_w - self.plan.stride_w),
            )
        else:
            ramp = cfg.ramp
        self._weights = {
            (r.height, r.width): ramp_weight_map(r.height, r.width, ramp, cfg.min_weight)
            for r in self.plan.tiles
        }

    def _predict_tile(self, x, i, t, sigma, k, rect):
        req = DenoiserRequest(
            tile=crop(x, rect),
            step_index=i,
            t=t,
            sigma=sigma,
            conditioning=self.cfg.conditioning,
            rect=rect,
        )
        try:
            resp = self.denoiser(req)
        except Exception as exc:
            raise DenoiseError(
                f"step {i}, tile {k} at ({rect.row},{rect.col}): {exc}"
            ) from exc
        if resp.kind != self.cfg.prediction:
            raise DenoiseError(
                f"step {i}, tile {k}: denoiser returned {resp.kind!r} "
                f"prediction, run expects {self.cfg.prediction!r}"
            )
        pred = resp.prediction
        if pred.shape != req.tile.shape:
            raise DenoiseError(
                f"step {i}, tile {k}: prediction shape {pred.shape} does not "
                f"match tile {req.tile.shape}"
            )
        ensure_finite(pred, f"step {i} tile {k} prediction")
        return pred

    def step(self, x: np.ndarray, i: int):
        """One sampler step; returns (x_next, StepRecord)."""
        t = self.schedule.times[i]
        sigma = self.schedule.sigmas[i]
        sigma_next = self.schedule.sigmas[i + 1]
        lam = 0.0 if self.cfg.mode == "md" else self.cfg.prior.strength_at(t)

        workers = self.cfg.effective_workers()
        tiles = list(enumerate(self.plan.tiles))
        if workers > 1 and len(tiles) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                preds = list(
                    pool.map(lambda kr: self._predict_tile(x, i, t, sigma, *kr), tiles)
                )
        else:
            preds = [self._predict_tile(x, i, t, sigma, k, r) for k, r in tiles]

        acc = FusionAccumulator.zeros(self.cfg.canvas_shape)
        for (_, rect), pred in zip(tiles, preds):
            accumulate(acc, pred, rect, self._weights[(rect.height, rect.width)])

        if np.ndim(lam) == 0 and float(lam) == 0.0:
            y = fuse_md(acc)
        else:
            y = fuse_fd_flow(acc, x, self.prior, lam, sigma)

        fg, bg = trace_prior_mse(x, sigma, y, self.prior, self.cfg.prior.activity_map)
        lam_arr = np.asarray(lam, dtype=np.float64)
        record = StepRecord(
            step=i,
            t=t,
            sigma=sigma,
            lam_min=float(lam_arr.min()),
            lam_max=float(lam_arr.max()),
            fg_mse=fg,
            bg_mse=bg,
        )
        return euler_update(x, y, sigma_next - sigma), record

    def run(self, initial_noise=None):
        if initial_noise is None:
            x = make_noise(self.cfg.canvas_shape, self.cfg.seed)
        else:
            x = as_latent(initial_noise, "initial noise")
            if x.shape != self.cfg.canvas_shape:
                raise ShapeError(
                    f"initial noise {x.shape} does not match canvas "
                    f"{self.cfg.canvas_shape}"
                )
        ensure_finite(x, "initial noise")
        trace = RunTrace()
        for i in range(self.schedule.steps):
            x, record = self.step(x, i)
            trace.records.append(record)
        ensure_finite(x, "final latent")
        return x, trace


def run(cfg: SamplerConfig, denoiser, prior=None, initial_noise=None):
    """Configure and execute a full sampling run."""
    return TiledSampler(cfg, denoiser, prior).run(initial_noise)
