"""Pluggable per-tile denoisers.

A denoiser is any callable mapping a DenoiserRequest to a DenoiserResponse
and must be a pure function of the request given fixed parameters. Two
verifiable built-ins ship here: an exact posterior-mean model for i.i.d.
Gaussian data and a driver that steers every tile toward a fixed target
canvas. Real backbones attach through the FDP1 worker protocol.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .protocol import DEFAULT_TIMEOUT, WorkerClient, WorkerPool
from .tensor import Rect, as_latent, crop, ensure_finite


@dataclass(frozen=True)
class DenoiserRequest:
    tile: np.ndarray
    step_index: int
    t: float
    sigma: float
    conditioning: str = ""
    rect: Rect | None = None


@dataclass(frozen=True)
class DenoiserResponse:
    prediction: np.ndarray
    kind: str = "flow"

    def __post_init__(self):
        if self.kind not in ("flow", "eps"):
            raise DomainError(f"unknown prediction kind {self.kind!r}")


def gaussian_posterior_mean(x: np.ndarray, sigma: float, mu: float, s: float) -> np.ndarray:
    """Posterior mean of the clean value under i.i.d. N(mu, s^2) data when
    the observation is x = (1-sigma)*clean + sigma*noise."""
    d = (1.0 - sigma) ** 2 * s**2 + sigma**2
    return (((1.0 - sigma) * s**2) * x.astype(np.float64) + sigma**2 * mu) / d


class GaussianAnalytic:
    """Exact velocity for a Gaussian data law: y = (x - posterior_mean)/sigma.

    The s = 0 point-mass limit is allowed and collapses the posterior mean
    to mu.
    """

    def __init__(self, mu: float, s: float):
        if s < 0:
            raise DomainError(f"standard deviation must be nonnegative, got {s}")
        self.mu = float(mu)
        self.s = float(s)

    def __call__(self, req: DenoiserRequest) -> DenoiserResponse:
        if not 0.0 < req.sigma <= 1.0:
            raise DomainError(f"sigma must lie in (0, 1], got {req.sigma}")
        x = as_latent(req.tile, "tile")
        x0 = gaussian_posterior_mean(x, req.sigma, self.mu, self.s)
        y = ((x.astype(np.float64) - x0) / req.sigma).astype(np.float32)
        return DenoiserResponse(prediction=y, kind="flow")


class TargetDriver:
    """Velocity that points every tile straight at a fixed target canvas:
    the one-step clean estimate equals the target crop exactly."""

    def __init__(self, target: np.ndarray):
        self.target = ensure_finite(as_latent(target, "target"), "target")

    def __call__(self, req: DenoiserRequest) -> DenoiserResponse:
        if req.sigma <= 0.0:
            raise DomainError(f"sigma must be positive, got {req.sigma}")
        if req.rect is None:
            raise ShapeError("target driver needs the tile window position")
        x = as_latent(req.tile, "tile")
        goal = crop(self.target, req.rect)
        if goal.shape != x.shape:
            raise ShapeError(
                f"tile shape {x.shape} does not match target crop {goal.shape}"
            )
        y = (
            (x.astype(np.float64) - goal.astype(np.float64)) / req.sigma
        ).astype(np.float32)
        return DenoiserResponse(prediction=y, kind="flow")


class ExternalDenoiser:
    """Denoiser served by one or more FDP1 worker processes.

    With size > 1 the call is thread-safe and requests fan out across the
    pool, one in flight per child.
    """

    def __init__(self, command, size: int = 1, timeout: float = DEFAULT_TIMEOUT):
        if size == 1:
            self._backend = WorkerClient(command, timeout)
        else:
            self._backend = WorkerPool(command, size, timeout)

    def __call__(self, req: DenoiserRequest) -> DenoiserResponse:
        tile = as_latent(req.tile, "tile")
        rect = req.rect or Rect(0, 0, tile.shape[2], tile.shape[3])
        kind, pred = self._backend.denoise(
            req.step_index, req.t, req.sigma, rect, req.conditioning, tile
        )
        ensure_finite(pred, "worker prediction")
        return DenoiserResponse(prediction=pred, kind=kind)

    def close(self) -> None:
        self._backend.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
