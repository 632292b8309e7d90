"""Five-source input map generation.

Frame difference and block-matching optical flow are computed directly from
the image pair. Depth and density come from providers: a file-backed loader
(for exported outputs of real estimators) and small synthesizers. All maps in
a stack share the frame dimensions.

Map file format: raw little-endian 32-bit floats, row-major, channel-major
planes, with a JSON sidecar {"width": W, "height": H, "channels": C} at
<path>.json. Writer and reader are bit-exact inverses.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.ndimage import uniform_filter

from .geometry import BBox

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class MapError(ValueError):
    pass


@dataclass
class ImageFrame:
    """A single- or three-channel image, values nominally in [0, 1]."""

    data: np.ndarray  # (H, W, C)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3 or self.data.shape[2] not in (1, 3):
            raise MapError(f"image must be (H, W, 1|3), got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise MapError("image contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def luminance(self) -> np.ndarray:
        """(H, W) grayscale view; Rec.601 weights for RGB input."""
        if self.channels == 1:
            return self.data[:, :, 0]
        return self.data @ LUMA_WEIGHTS


@dataclass
class FlowField:
    """Per-pixel displacement in pixels/frame; pixel p in the current frame
    matches p - (u, v) in the previous one."""

    u: np.ndarray  # (H, W)
    v: np.ndarray  # (H, W)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise MapError("u and v must be matching 2-d arrays")

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]


@dataclass
class SourceStack:
    """The five aligned per-frame inputs fed to the fusion network."""

    rgb: ImageFrame
    diff: ImageFrame
    flow: FlowField
    depth: ImageFrame
    density: ImageFrame

    def __post_init__(self):
        dims = (self.rgb.height, self.rgb.width)
        for name in ("diff", "flow", "depth", "density"):
            m = getattr(self, name)
            if (m.height, m.width) != dims:
                raise MapError(f"{name} map is {m.height}x{m.width}, "
                               f"expected {dims[0]}x{dims[1]}")
        for name in ("diff", "depth", "density"):
            if getattr(self, name).channels != 1:
                raise MapError(f"{name} map must be single-channel")

    @property
    def height(self) -> int:
        return self.rgb.height

    @property
    def width(self) -> int:
        return self.rgb.width


@dataclass
class FlowConfig:
    block_size: int = 5
    search_radius: int = 4
    levels: int = 3

    def __post_init__(self):
        if self.block_size < 3 or self.block_size % 2 == 0:
            raise MapError("block_size must be an odd integer >= 3")
        if self.search_radius < 1 or self.levels < 1:
            raise MapError("search_radius and levels must be >= 1")


def frame_difference(curr: ImageFrame, prev: ImageFrame) -> ImageFrame:
    """Per-pixel absolute luminance difference |curr - prev|."""
    if (curr.height, curr.width) != (prev.height, prev.width):
        raise MapError("frame_difference: dimension mismatch")
    return ImageFrame(np.abs(curr.luminance() - prev.luminance()))


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    if h % 2:
        img = np.concatenate([img, img[-1:]], axis=0)
        h += 1
    if w % 2:
        img = np.concatenate([img, img[:, -1:]], axis=1)
        w += 1
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _shift(img: np.ndarray, du: int, dv: int) -> np.ndarray:
    """Shift forward by (du, dv) with edge replication: out[y, x] = img[y-dv, x-du]."""
    h, w = img.shape
    ys = np.clip(np.arange(h) - dv, 0, h - 1)
    xs = np.clip(np.arange(w) - du, 0, w - 1)
    return img[np.ix_(ys, xs)]


def _sad_map(curr: np.ndarray, prev: np.ndarray, du: int, dv: int, block: int) -> np.ndarray:
    diff = np.abs(curr - _shift(prev, du, dv))
    return uniform_filter(diff, size=block, mode="nearest")


def _match_level(curr: np.ndarray, prev: np.ndarray, init_u: np.ndarray,
                 init_v: np.ndarray, cfg: FlowConfig) -> tuple[np.ndarray, np.ndarray]:
    r = cfg.search_radius
    offsets = [(du, dv) for dv in range(-r, r + 1) for du in range(-r, r + 1)]
    best_cost = np.full(curr.shape, np.inf)
    best_u = np.zeros(curr.shape)
    best_v = np.zeros(curr.shape)
    sad_cache: dict[tuple[int, int], np.ndarray] = {}
    pairs = np.stack([init_u, init_v], axis=-1).reshape(-1, 2)
    for u0, v0 in np.unique(pairs, axis=0):
        mask = (init_u == u0) & (init_v == v0)
        # search around the initial estimate and around zero displacement, so
        # a bad coarse-level guess cannot push the refinement out of reach;
        # ties broken toward smaller displacement magnitude, then lexicographic (u, v)
        cands = {(u0 + du, v0 + dv) for du, dv in offsets}
        cands |= {(du, dv) for du, dv in offsets}
        cands = sorted(cands, key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]))
        for u, v in cands:
            key = (int(u), int(v))
            if key not in sad_cache:
                sad_cache[key] = _sad_map(curr, prev, key[0], key[1], cfg.block_size)
            better = mask & (sad_cache[key] < best_cost)
            best_cost[better] = sad_cache[key][better]
            best_u[better] = u
            best_v[better] = v
    return best_u, best_v


def optical_flow(curr: ImageFrame, prev: ImageFrame, cfg: FlowConfig | None = None) -> FlowField:
    """Coarse-to-fine block matching with SAD cost and integer displacements."""
    cfg = cfg or FlowConfig()
    if (curr.height, curr.width) != (prev.height, prev.width):
        raise MapError("optical_flow: dimension mismatch")
    if curr.height < cfg.block_size or curr.width < cfg.block_size:
        raise MapError("optical_flow: frame smaller than one block")
    pyr_curr = [curr.luminance()]
    pyr_prev = [prev.luminance()]
    for _ in range(cfg.levels - 1):
        if min(pyr_curr[-1].shape) // 2 < cfg.block_size:
            break
        pyr_curr.append(_downsample2(pyr_curr[-1]))
        pyr_prev.append(_downsample2(pyr_prev[-1]))
    u = np.zeros(pyr_curr[-1].shape)
    v = np.zeros(pyr_curr[-1].shape)
    for level in range(len(pyr_curr) - 1, -1, -1):
        c, p = pyr_curr[level], pyr_prev[level]
        if u.shape != c.shape:  # upsample estimate from the coarser level
            u = 2.0 * np.repeat(np.repeat(u, 2, axis=0), 2, axis=1)[:c.shape[0], :c.shape[1]]
            v = 2.0 * np.repeat(np.repeat(v, 2, axis=0), 2, axis=1)[:c.shape[0], :c.shape[1]]
        u, v = _match_level(c, p, u, v, cfg)
    return FlowField(u, v)


def density_from_boxes(boxes: list[BBox], dims: tuple[int, int]) -> ImageFrame:
    """Sum of unit-mass isotropic Gaussians at box centers.

    sigma = 0.3 * min(w, h), truncated at 3 sigma, normalized over the
    truncated support so each fully visible box contributes mass 1.
    """
    h, w = dims
    out = np.zeros((h, w))
    for b in boxes:
        cx, cy = b.center
        sigma = 0.3 * min(b.width, b.height)
        rad = 3.0 * sigma
        x0, x1 = int(np.floor(cx - rad)), int(np.ceil(cx + rad)) + 1
        y0, y1 = int(np.floor(cy - rad)), int(np.ceil(cy + rad)) + 1
        xs = np.arange(x0, x1)
        ys = np.arange(y0, y1)
        dx2 = (xs - cx) ** 2
        dy2 = (ys - cy) ** 2
        kern = np.exp(-(dy2[:, None] + dx2[None, :]) / (2.0 * sigma * sigma))
        kern[dy2[:, None] + dx2[None, :] > rad * rad] = 0.0
        total = kern.sum()
        if total <= 0:
            continue
        kern /= total
        # clip the kernel window to the image
        sy0, sy1 = max(0, -y0), (y1 - y0) - max(0, y1 - h)
        sx0, sx1 = max(0, -x0), (x1 - x0) - max(0, x1 - w)
        if sy1 <= sy0 or sx1 <= sx0:
            continue
        out[max(0, y0):max(0, y0) + (sy1 - sy0),
            max(0, x0):max(0, x0) + (sx1 - sx0)] += kern[sy0:sy1, sx0:sx1]
    return ImageFrame(out)


def synth_depth(dims: tuple[int, int], mode: str = "vertical_gradient") -> ImageFrame:
    h, w = dims
    if mode == "constant":
        return ImageFrame(np.full((h, w), 0.5))
    if mode == "vertical_gradient":
        col = np.arange(h) / (h - 1) if h > 1 else np.zeros(1)
        return ImageFrame(np.tile(col[:, None], (1, w)))
    raise MapError(f"unknown depth mode {mode!r}")


def save_map(path, data: np.ndarray) -> None:
    """Write a raw float32 map with its JSON sidecar."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    planes = np.ascontiguousarray(arr.transpose(2, 0, 1))  # channel-major
    path = Path(path)
    path.write_bytes(planes.astype("<f4").tobytes())
    sidecar = {"width": arr.shape[1], "height": arr.shape[0], "channels": arr.shape[2]}
    Path(str(path) + ".json").write_text(json.dumps(sidecar))


def load_map(path, dims: tuple[int, int] | None = None) -> ImageFrame:
    """Read a raw float32 map; dims, when given, must match the sidecar."""
    path = Path(path)
    sidecar_path = Path(str(path) + ".json")
    if not path.exists() or not sidecar_path.exists():
        raise MapError(f"map file or sidecar missing: {path}")
    meta = json.loads(sidecar_path.read_text())
    h, w, c = meta["height"], meta["width"], meta["channels"]
    if dims is not None and (h, w) != tuple(dims):
        raise MapError(f"map is {h}x{w}, expected {dims[0]}x{dims[1]}")
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != h * w * c:
        raise MapError(f"map payload has {raw.size} floats, expected {h * w * c}")
    return ImageFrame(raw.reshape(c, h, w).transpose(1, 2, 0))


Provider = Callable[[int, int], ImageFrame]


def file_provider(path) -> Provider:
    return lambda h, w: load_map(path, (h, w))


def synth_depth_provider(mode: str = "vertical_gradient") -> Provider:
    return lambda h, w: synth_depth((h, w), mode)


def density_provider(boxes: list[BBox]) -> Provider:
    return lambda h, w: density_from_boxes(boxes, (h, w))


def build_stack(curr: ImageFrame, prev: ImageFrame | None,
                depth_provider: Provider, density_provider: Provider,
                flow_cfg: FlowConfig | None = None) -> SourceStack:
    """Assemble the five-source stack for one frame.

    With no predecessor frame, diff and flow are zero maps (the neutral
    element for the downstream fusion).
    """
    h, w = curr.height, curr.width
    if prev is None:
        diff = ImageFrame(np.zeros((h, w)))
        flow = FlowField(np.zeros((h, w)), np.zeros((h, w)))
    else:
        diff = frame_difference(curr, prev)
        flow = optical_flow(curr, prev, flow_cfg)
    maps = {}
    for name, provider in (("depth", depth_provider), ("density", density_provider)):
        try:
            m = provider(h, w)
        except Exception as e:
            raise MapError(f"{name} provider failed: {e}") from e
        if (m.height, m.width) != (h, w):
            raise MapError(f"{name} provider returned {m.height}x{m.width}, expected {h}x{w}")
        maps[name] = m
    rgb = curr if curr.channels == 3 else ImageFrame(np.repeat(curr.data, 3, axis=2))
    return SourceStack(rgb=rgb, diff=diff, flow=flow,
                       depth=maps["depth"], density=maps["density"])
