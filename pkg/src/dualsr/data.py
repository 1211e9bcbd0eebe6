"""Image I/O, color conversion, augmentation and training-pair sampling.

Images travel through the pipeline as float64 arrays in [0,1]; clamping
and 8-bit quantization happen only on export. Color is BT.601 full-range,
evaluated in a compensated form so gray inputs map to exactly neutral
chroma and back.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ConfigurationError
from .resize import bicubic_down, bicubic_up, rescale

# BT.601 luma weights and the chroma scales they induce.
_KR, _KG, _KB = 0.299, 0.587, 0.114
_CB_SCALE = 0.5 / (1.0 - _KB)
_CR_SCALE = 0.5 / (1.0 - _KR)

AUGMENT_SCALES = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


def rgb_to_ycbcr(img: np.ndarray) -> np.ndarray:
    """(H,W,3) RGB in [0,1] -> (H,W,3) YCbCr; gray maps to Cb=Cr=0.5 exactly."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ConfigurationError(f"expected (H,W,3) RGB image, got shape {img.shape}")
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    y = g + _KR * (r - g) + _KB * (b - g)
    cb = 0.5 + _CB_SCALE * (b - y)
    cr = 0.5 + _CR_SCALE * (r - y)
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(img: np.ndarray) -> np.ndarray:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ConfigurationError(f"expected (H,W,3) YCbCr image, got shape {img.shape}")
    y, cb, cr = img[..., 0], img[..., 1], img[..., 2]
    db = (cb - 0.5) / _CB_SCALE
    dr = (cr - 0.5) / _CR_SCALE
    r = y + dr
    b = y + db
    g = y - (_KR * dr + _KB * db) / _KG
    return np.stack([r, g, b], axis=-1)


def luminance(img: np.ndarray) -> np.ndarray:
    """Y channel of an RGB image; grayscale arrays pass through."""
    if img.ndim == 2:
        return img
    return rgb_to_ycbcr(img)[..., 0]


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("I;16", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
            return arr
        if im.mode == "L":
            return np.asarray(im, dtype=np.float64) / 255.0
        if im.mode != "RGB":
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path, img: np.ndarray) -> None:
    arr = to_uint8(img)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path)


def flip_rotate(img: np.ndarray, hflip: bool, vflip: bool, rot: int) -> np.ndarray:
    if hflip:
        img = img[:, ::-1]
    if vflip:
        img = img[::-1, :]
    if rot % 4:
        img = np.rot90(img, k=rot % 4)
    return np.ascontiguousarray(img)


def augment(patch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    hflip = bool(rng.integers(0, 2))
    vflip = bool(rng.integers(0, 2))
    rot = int(rng.integers(0, 4))
    return flip_rotate(patch, hflip, vflip, rot)


@dataclass
class SamplePair:
    lr: np.ndarray
    hr: np.ndarray
    residual: np.ndarray
    bicubic: np.ndarray


def make_pair(hr_patch: np.ndarray, scale: int) -> SamplePair:
    lr = bicubic_down(hr_patch, scale)
    up = bicubic_up(lr, scale)
    residual = hr_patch - up
    # hr is snapped onto up + residual (at most one ulp away) so that the
    # pair reconstructs bit-exactly
    return SamplePair(lr=lr, hr=up + residual, residual=residual, bicubic=up)


class Corpus:
    """Luminance images addressed by index, loaded lazily and cached."""

    def __init__(self, root, paths: list[str]):
        if not paths:
            raise ConfigurationError("corpus is empty")
        self.root = os.fspath(root)
        self.paths = list(paths)
        self._cache: dict[int, np.ndarray] = {}

    @classmethod
    def from_manifest(cls, root, manifest_path) -> "Corpus":
        paths = []
        with open(manifest_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line and not line.startswith("#"):
                    paths.append(line)
        return cls(root, paths)

    @classmethod
    def from_dir(cls, root, exts: tuple[str, ...] = (".png", ".bmp")) -> "Corpus":
        root = os.fspath(root)
        paths = sorted(p for p in os.listdir(root)
                       if os.path.splitext(p)[1].lower() in exts)
        return cls(root, paths)

    def __len__(self) -> int:
        return len(self.paths)

    def load_luminance(self, i: int) -> np.ndarray:
        if i not in self._cache:
            self._cache[i] = luminance(load_image(os.path.join(self.root, self.paths[i])))
        return self._cache[i]


def sample_pairs(corpus: Corpus, scale: int, patch: int = 128, batch: int = 16,
                 rng: np.random.Generator | None = None,
                 max_tries: int = 100) -> list[SamplePair]:
    """Random HR crops with flip/rotation/scale augmentation.

    The HR crop side is rounded down to a multiple of `scale`. When the
    scaled source image cannot fit a crop the draw is retried elsewhere.
    """
    if rng is None:
        rng = np.random.default_rng()
    crop = patch - patch % scale
    if crop < scale:
        raise ConfigurationError(f"patch {patch} too small for scale {scale}")
    out: list[SamplePair] = []
    tries = 0
    while len(out) < batch:
        if tries >= max_tries * batch:
            raise ConfigurationError(
                f"could not draw {batch} {crop}x{crop} crops from corpus "
                f"(images too small?)")
        tries += 1
        img = corpus.load_luminance(int(rng.integers(0, len(corpus))))
        factor = AUGMENT_SCALES[int(rng.integers(0, len(AUGMENT_SCALES)))]
        if factor != 1.0:
            img = rescale(img, factor)
        h, w = img.shape
        if h < crop or w < crop:
            continue
        top = int(rng.integers(0, h - crop + 1))
        left = int(rng.integers(0, w - crop + 1))
        hr = augment(img[top:top + crop, left:left + crop], rng)
        out.append(make_pair(hr, scale))
    return out


def batch_arrays(pairs: list[SamplePair], dtype) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack LR patches, bicubic upscales and residual targets into (B,1,...) arrays."""
    lr = np.stack([p.lr for p in pairs])[:, None].astype(dtype)
    up = np.stack([p.bicubic for p in pairs])[:, None].astype(dtype)
    res = np.stack([p.residual for p in pairs])[:, None].astype(dtype)
    return lr, up, res


def synthesize_corpus(root, count: int, size: int, rng: np.random.Generator) -> list[str]:
    """Write `count` edge-rich grayscale PNGs (flat shapes, strokes, mild
    gradients) useful as a tiny self-contained training corpus. Sharp
    edges are where plain bicubic upscaling loses the most, which gives a
    learned model measurable headroom."""
    os.makedirs(root, exist_ok=True)
    names = []
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    for i in range(count):
        img = 0.5 + 0.2 * np.sin(2 * np.pi * rng.uniform(0.5, 1.5) * xx
                                 + rng.uniform(0, 2 * np.pi)) \
            * np.sin(2 * np.pi * rng.uniform(0.5, 1.5) * yy + rng.uniform(0, 2 * np.pi))
        for _ in range(18):
            level = rng.uniform(0.05, 0.95)
            if rng.integers(0, 2):
                x0, y0 = rng.uniform(0, 0.8, size=2)
                wdt, hgt = rng.uniform(0.1, 0.5, size=2)
                mask = (xx >= x0) & (xx < x0 + wdt) & (yy >= y0) & (yy < y0 + hgt)
            else:
                cx, cy = rng.uniform(0.1, 0.9, size=2)
                rx, ry = rng.uniform(0.05, 0.3, size=2)
                mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 < 1.0
            img[mask] = level
        for _ in range(14):
            theta = rng.uniform(0, np.pi)
            dist = xx * np.cos(theta) + yy * np.sin(theta) - rng.uniform(0.2, 1.2)
            img[np.abs(dist) < rng.uniform(0.01, 0.03)] = rng.uniform(0.0, 1.0)
        name = f"synth_{i:03d}.png"
        save_image(os.path.join(root, name), np.clip(img, 0.0, 1.0))
        names.append(name)
    return names
