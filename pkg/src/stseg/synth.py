"""Synthetic multi-date scene generator.

Each scene is a random road network rendered over a smooth terrain field,
observed on T acquisition days.  Every day applies its own global gain, bias
and gamma plus per-pixel sensor noise, and may hide part of the scene under
bright elliptical occluders (a cloud analog, capped at a fraction of the
area).  The label raster is the jitter-free ground truth, so samples that
differ only in radiometry share identical labels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dataset import SequenceSample
from .rasterize import VectorRoads, dilate, rasterize_roads

DEFAULT_ROAD_RADIUS = 3  # ~7 px wide roads at 10 m/px


@dataclass
class RadiometryJitter:
    gain: tuple[float, float] = (0.82, 1.18)
    bias: tuple[float, float] = (-0.06, 0.06)
    gamma: tuple[float, float] = (0.75, 1.30)
    noise_sigma: float = 0.02
    cloud_frac: float = 0.10          # per-date occluded-area cap
    clouds: tuple[int, int] = (2, 4)  # blob count range per date
    # occluders are bright clouds or dark cast shadows; shadows overlap the
    # road tones, so per-date predictions confuse them until fused
    cloud_shade: tuple[float, float] = (0.88, 0.96)
    shadow_shade: tuple[float, float] = (0.14, 0.30)
    shadow_frac: float = 0.6

    def validate(self) -> None:
        for name in ("gain", "bias", "gamma", "clouds", "cloud_shade",
                     "shadow_shade"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"degenerate jitter range for {name}: {lo} > {hi}")
        if self.noise_sigma < 0 or not 0 <= self.cloud_frac <= 0.10:
            raise ValueError("noise_sigma must be >= 0 and cloud_frac in [0, 0.10]")
        if not 0 <= self.shadow_frac <= 1:
            raise ValueError("shadow_frac must lie in [0, 1]")


JITTER_PRESETS = {
    "default": RadiometryJitter(),
    "none": RadiometryJitter(gain=(1.0, 1.0), bias=(0.0, 0.0), gamma=(1.0, 1.0),
                             noise_sigma=0.0, cloud_frac=0.0, clouds=(0, 0)),
    "strong": RadiometryJitter(gain=(0.7, 1.3), bias=(-0.1, 0.1), gamma=(0.6, 1.5),
                               noise_sigma=0.04, cloud_frac=0.10, clouds=(3, 5)),
}


def _bilinear_upsample(coarse: np.ndarray, height: int, width: int) -> np.ndarray:
    c, gh, gw = coarse.shape
    fy = np.linspace(0.0, gh - 1.0, height)
    fx = np.linspace(0.0, gw - 1.0, width)
    y0 = np.floor(fy).astype(np.intp)
    x0 = np.floor(fx).astype(np.intp)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    wy = (fy - y0)[None, :, None]
    wx = (fx - x0)[None, None, :]
    top = coarse[:, y0][:, :, x0] * (1 - wx) + coarse[:, y0][:, :, x1] * wx
    bot = coarse[:, y1][:, :, x0] * (1 - wx) + coarse[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def _border_point(rng: np.random.Generator, height: int, width: int,
                  side: int) -> np.ndarray:
    if side == 0:
        return np.array([rng.uniform(0, width - 1), 0.0])
    if side == 1:
        return np.array([rng.uniform(0, width - 1), height - 1.0])
    if side == 2:
        return np.array([0.0, rng.uniform(0, height - 1)])
    return np.array([width - 1.0, rng.uniform(0, height - 1)])


def make_road_network(rng: np.random.Generator, height: int, width: int) -> VectorRoads:
    """A handful of border-to-border polylines with jittered waypoints."""
    n_roads = int(rng.integers(4, 8))
    lines = []
    for _ in range(n_roads):
        s0 = int(rng.integers(0, 4))
        s1 = int((s0 + int(rng.integers(1, 4))) % 4)
        p0 = _border_point(rng, height, width, s0)
        p1 = _border_point(rng, height, width, s1)
        n_mid = int(rng.integers(1, 4))
        ts = np.sort(rng.uniform(0.2, 0.8, size=n_mid))
        wiggle = 0.08 * min(height, width)
        pts = [p0]
        for t in ts:
            mid = p0 + t * (p1 - p0) + rng.normal(0.0, wiggle, size=2)
            pts.append(mid)
        pts.append(p1)
        arr = np.array(pts)
        arr[:, 0] = np.clip(arr[:, 0], 0, width - 1)
        arr[:, 1] = np.clip(arr[:, 1], 0, height - 1)
        lines.append(arr)
    return VectorRoads(lines)


def _ellipse_mask(height: int, width: int, cy: float, cx: float,
                  ay: float, ax: float, theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    dy, dx = yy - cy, xx - cx
    ct, st = np.cos(theta), np.sin(theta)
    u = (ct * dx + st * dy) / ax
    v = (-st * dx + ct * dy) / ay
    return (u * u + v * v) <= 1.0


def _render_base(rng: np.random.Generator, height: int, width: int,
                 road_mask: np.ndarray) -> np.ndarray:
    cells = max(4, min(height, width) // 16)
    coarse = rng.random((3, cells + 1, cells + 1))
    field = _bilinear_upsample(coarse, height, width)
    tint = np.array([0.38, 0.46, 0.30])[:, None, None]
    terrain = tint + 0.26 * (field - 0.5)
    road_field = _bilinear_upsample(rng.random((1, cells + 1, cells + 1)),
                                    height, width)
    road_rgb = (np.array([0.22, 0.22, 0.26])[:, None, None]
                + 0.05 * (road_field - 0.5))
    m = road_mask[None].astype(np.float64)
    return terrain * (1.0 - m) + road_rgb * m


def synth_scene(seed: int, height: int, width: int, seq_len: int,
                jitter: RadiometryJitter | None = None,
                road_radius: int = DEFAULT_ROAD_RADIUS,
                jitter_seed: int | None = None) -> SequenceSample:
    """Deterministic scene: geometry from ``seed``, radiometry from
    ``jitter_seed`` (defaults to ``seed``), so two draws differing only in
    ``jitter_seed`` share identical geometry and labels."""
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    jitter = jitter or JITTER_PRESETS["default"]
    jitter.validate()
    jseed = seed if jitter_seed is None else jitter_seed
    rng_geom = np.random.default_rng([11, seed])
    rng_rad = np.random.default_rng([23, jseed])

    roads = make_road_network(rng_geom, height, width)
    label = dilate(rasterize_roads(roads, height, width), road_radius)
    base = _render_base(rng_geom, height, width, label)

    images: list[np.ndarray] = []
    day_params = []
    for _ in range(seq_len):
        gain = float(rng_rad.uniform(*jitter.gain))
        bias = float(rng_rad.uniform(*jitter.bias))
        gamma = float(rng_rad.uniform(*jitter.gamma))
        img = np.clip(base, 0.0, 1.0) ** gamma * gain + bias

        n_blobs = int(rng_rad.integers(jitter.clouds[0], jitter.clouds[1] + 1))
        cloud_cover = 0.0
        if n_blobs > 0 and jitter.cloud_frac > 0:
            budget = jitter.cloud_frac * height * width * float(rng_rad.uniform(0.8, 1.0))
            covered = np.zeros((height, width), dtype=bool)
            for _ in range(n_blobs):
                area = budget / n_blobs
                ratio = float(rng_rad.uniform(0.5, 2.0))
                ay = np.sqrt(area / np.pi * ratio)
                ax = area / np.pi / ay
                cy = float(rng_rad.uniform(0, height - 1))
                cx = float(rng_rad.uniform(0, width - 1))
                theta = float(rng_rad.uniform(0, np.pi))
                blob = _ellipse_mask(height, width, cy, cx, ay, ax, theta)
                shade_range = (jitter.shadow_shade
                               if rng_rad.uniform() < jitter.shadow_frac
                               else jitter.cloud_shade)
                shade = float(rng_rad.uniform(*shade_range))
                img = np.where(blob[None], shade, img)
                covered |= blob
            cloud_cover = float(covered.mean())

        if jitter.noise_sigma > 0:
            img = img + rng_rad.normal(0.0, jitter.noise_sigma, size=img.shape)
        img = np.clip(img, 0.0, 1.0)
        # quantize to the PNG grid so a disk round trip is bit-exact
        img = (np.round(img * 255.0) / 255.0).astype(np.float32)
        images.append(np.ascontiguousarray(img))
        day_params.append({"gain": gain, "bias": bias, "gamma": gamma,
                           "cloud_cover": cloud_cover})

    dates = [f"t{t}" for t in range(seq_len)]
    meta = {
        "seed": seed,
        "jitter_seed": jseed,
        "road_radius": road_radius,
        "jitter": asdict(jitter),
        "days": day_params,
    }
    return SequenceSample(images=images, label=label, dates=dates, meta=meta)
