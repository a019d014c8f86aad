"""Sample construction: score-based regular view selection, Bernoulli
occlusion with color fluctuation for the image-level contrastive branch,
random same-scene views for the scene-level branch, and the training-time
schedules for the occlusion rate and the image-consistency weight."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraView
from .grids import Image


class SamplingError(ValueError):
    pass


@dataclass
class Sample:
    """One reference view plus its source views, tagged by how it was built."""

    reference: CameraView
    sources: list[CameraView]
    kind: str = "regular"
    seed: int | None = None
    occlusion_masks: list[np.ndarray] | None = None

    def __post_init__(self):
        if len(self.sources) < 1:
            raise SamplingError("a sample needs at least one source view")
        if self.kind not in ("regular", "image_contrastive", "scene_contrastive"):
            raise SamplingError(f"unknown sample kind {self.kind!r}")

    @property
    def n_views(self) -> int:
        return 1 + len(self.sources)

    def source_ids(self) -> list[int]:
        return [s.view_id for s in self.sources]


@dataclass(frozen=True)
class Schedule:
    epoch: int
    occlusion_rate: float
    image_consist_weight: float


@dataclass(frozen=True)
class ColorFluctuation:
    """Per-image photometric augmentation ranges (gamma, brightness, contrast)."""

    gamma: tuple[float, float] = (0.8, 1.25)
    brightness: tuple[float, float] = (-0.1, 0.1)
    contrast: tuple[float, float] = (0.8, 1.2)


def select_regular_views(reference: CameraView, candidates: list[CameraView],
                         scores: list[tuple[int, float]], n_views: int) -> Sample:
    """Top-(N-1) candidates by score; ties broken by ascending view id."""
    if len(scores) < n_views - 1:
        raise SamplingError(f"need {n_views - 1} scored candidates, got {len(scores)}")
    by_id = {v.view_id: v for v in candidates}
    ranked = sorted(scores, key=lambda e: (-e[1], e[0]))
    chosen = []
    for vid, _ in ranked[:n_views - 1]:
        if vid not in by_id:
            raise SamplingError(f"scored view {vid} not among the candidates")
        chosen.append(by_id[vid])
    return Sample(reference, chosen, kind="regular")


def _fluctuate(img: np.ndarray, rng: np.random.Generator, fluct: ColorFluctuation) -> np.ndarray:
    gamma = rng.uniform(*fluct.gamma)
    brightness = rng.uniform(*fluct.brightness)
    contrast = rng.uniform(*fluct.contrast)
    out = np.power(img, gamma)
    out = (out - 0.5) * contrast + 0.5 + brightness
    return np.clip(out, 0.0, 1.0)


def make_image_contrastive(regular: Sample, occlusion_rate: float, rng_seed: int,
                           fluctuation: ColorFluctuation | None = ColorFluctuation()
                           ) -> Sample:
    """Zero out each source pixel independently with the given rate (a mask
    value of 1 means occluded), after an optional per-image color fluctuation.
    The reference view is never touched. Deterministic given the seed."""
    if not (0.0 <= occlusion_rate <= 1.0):
        raise SamplingError("occlusion rate must lie in [0, 1]")
    sources = []
    masks = []
    for i, view in enumerate(regular.sources):
        rng = np.random.default_rng([rng_seed, i])
        data = view.image.data
        if fluctuation is not None:
            data = _fluctuate(data, rng, fluctuation)
        occ = rng.random(data.shape[:2]) < occlusion_rate
        data = data * (~occ[:, :, None])
        masks.append(occ)
        sources.append(CameraView(Image(data), view.camera, view.gt_depth, view.view_id))
    return Sample(regular.reference, sources, kind="image_contrastive",
                  seed=rng_seed, occlusion_masks=masks)


def make_scene_contrastive(scene_views: list[CameraView], reference: CameraView,
                           n_views: int, rng_seed: int) -> Sample:
    """N-1 source views drawn uniformly without replacement from the scene's
    non-reference views. Deterministic given the seed."""
    pool = [v for v in scene_views if v.view_id != reference.view_id]
    if len(pool) < n_views - 1:
        raise SamplingError(f"scene has {len(pool)} non-reference views, need {n_views - 1}")
    rng = np.random.default_rng([rng_seed, 7349])
    idx = rng.choice(len(pool), size=n_views - 1, replace=False)
    return Sample(reference, [pool[i] for i in idx], kind="scene_contrastive", seed=rng_seed)


def curriculum(epoch: int, total_epochs: int, max_rate: float = 0.1,
               base_weight: float = 0.01) -> Schedule:
    """Occlusion rate rises linearly from 0 to max_rate over the run; the
    image-consistency weight starts at base_weight and doubles every 2 epochs."""
    if not (0 <= epoch < total_epochs):
        raise SamplingError(f"epoch {epoch} outside [0, {total_epochs})")
    rate = max_rate * epoch / max(total_epochs - 1, 1)
    weight = base_weight * 2.0 ** (epoch // 2)
    return Schedule(epoch, rate, weight)
