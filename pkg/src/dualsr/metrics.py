"""PSNR/SSIM on luminance with an explicit border convention, dataset
evaluation with CSV and text-table output, and the desk-scale ablation
runner comparing model variants under a shared training budget.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad
from .data import Corpus, load_image, luminance, to_uint8
from .errors import ConfigurationError
from .resize import bicubic_down, bicubic_up

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class EvalProtocol:
    border_crop: int = 0
    peak: float = 1.0
    quantize: bool = True

    def crop(self, img: np.ndarray) -> np.ndarray:
        c = self.border_crop
        if c < 0:
            raise ConfigurationError(f"border crop must be >= 0, got {c}")
        if c == 0:
            return img
        if img.shape[0] <= 2 * c or img.shape[1] <= 2 * c:
            raise ConfigurationError(
                f"image {img.shape} too small for border crop {c}")
        return img[c:-c, c:-c]


def quantize_8bit(img: np.ndarray) -> np.ndarray:
    return to_uint8(img).astype(np.float64) / 255.0


def psnr(a: np.ndarray, b: np.ndarray, protocol: EvalProtocol = EvalProtocol()) -> float:
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch: {a.shape} vs {b.shape}")
    a = protocol.crop(np.asarray(a, dtype=np.float64))
    b = protocol.crop(np.asarray(b, dtype=np.float64))
    mse = float(np.mean(np.square(a - b)))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(protocol.peak ** 2 / mse))


def _gaussian_window(n: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable correlation with 1-d window g, valid region only."""
    n = g.size
    h = img.shape[0] - n + 1
    w = img.shape[1] - n + 1
    tmp = np.zeros((h, img.shape[1]))
    for k in range(n):
        tmp += g[k] * img[k:k + h, :]
    out = np.zeros((h, w))
    for k in range(n):
        out += g[k] * tmp[:, k:k + w]
    return out


def ssim(a: np.ndarray, b: np.ndarray, protocol: EvalProtocol = EvalProtocol()) -> float:
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch: {a.shape} vs {b.shape}")
    a = protocol.crop(np.asarray(a, dtype=np.float64))
    b = protocol.crop(np.asarray(b, dtype=np.float64))
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ConfigurationError(
            f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = _gaussian_window()
    c1 = (SSIM_K1 * protocol.peak) ** 2
    c2 = (SSIM_K2 * protocol.peak) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# -- model inference ----------------------------------------------------


def super_resolve_luminance(model, y_lr: np.ndarray) -> np.ndarray:
    """SR of a luminance image; `model` may be the string "bicubic"."""
    up = bicubic_up(y_lr, model_scale(model))
    if model == "bicubic":
        return up
    dtype = model.params.tensors()[0].data.dtype
    x = (y_lr if model.input_kind == "lr" else up)[None, None].astype(dtype)
    with no_grad():
        out = model.forward(Tensor(x))
    return up + out.residual.data[0, 0].astype(np.float64)


def model_scale(model) -> int:
    if model == "bicubic":
        raise ConfigurationError("bicubic baseline needs an explicit scale")
    return model.scale


def _crop_to_multiple(img: np.ndarray, scale: int) -> np.ndarray:
    h = img.shape[0] - img.shape[0] % scale
    w = img.shape[1] - img.shape[1] % scale
    return img[:h, :w]


# -- dataset evaluation --------------------------------------------------


@dataclass
class ImageScore:
    name: str
    psnr_db: float
    ssim: float


def evaluate_dataset(model, dataset: Corpus, scale: int,
                     protocol: EvalProtocol | None = None,
                     out_dir: str | None = None,
                     model_label: str = "model",
                     dataset_label: str = "dataset") -> dict:
    """Degrade each HR image by `scale`, super-resolve, score luminance.

    Missing files are reported and skipped; scores come out in sorted
    filename order. Returns per-image scores, averages and the missing
    list; optionally writes scores.csv and table.txt under out_dir.
    """
    if protocol is None:
        protocol = EvalProtocol(border_crop=scale)
    scores: list[ImageScore] = []
    missing: list[str] = []
    for i, rel in enumerate(sorted(dataset.paths)):
        path = os.path.join(dataset.root, rel)
        if not os.path.exists(path):
            missing.append(rel)
            continue
        hr = _crop_to_multiple(luminance(load_image(path)), scale)
        lr = bicubic_down(hr, scale)
        if model == "bicubic":
            sr = bicubic_up(lr, scale)
        else:
            if model_scale(model) != scale:
                raise ConfigurationError(
                    f"model trained for scale {model_scale(model)}, asked for {scale}")
            sr = super_resolve_luminance(model, lr)
        if protocol.quantize:
            sr = quantize_8bit(sr)
            hr = quantize_8bit(hr)
        scores.append(ImageScore(rel, psnr(sr, hr, protocol), ssim(sr, hr, protocol)))
    finite = [s.psnr_db for s in scores if np.isfinite(s.psnr_db)]
    avg_psnr = float(np.mean(finite)) if finite else float("inf")
    avg_ssim = float(np.mean([s.ssim for s in scores])) if scores else float("nan")
    result = {
        "scores": scores,
        "avg_psnr": avg_psnr,
        "avg_ssim": avg_ssim,
        "missing": missing,
        "protocol": protocol,
        "model": model_label,
        "dataset": dataset_label,
        "scale": scale,
    }
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "scores.csv"), "w", encoding="utf-8") as fh:
            fh.write("image,psnr_db,ssim\n")
            for s in scores:
                fh.write(f"{s.name},{s.psnr_db:.6f},{s.ssim:.6f}\n")
            fh.write(f"average,{avg_psnr:.6f},{avg_ssim:.6f}\n")
        with open(os.path.join(out_dir, "table.txt"), "w", encoding="utf-8") as fh:
            fh.write(format_result_table([result]))
    return result


def format_result_table(results: list[dict]) -> str:
    lines = []
    crops = sorted({r["protocol"].border_crop for r in results})
    lines.append(f"# border crop: {', '.join(str(c) for c in crops)} px per side; "
                 "luminance channel; 8-bit quantized")
    lines.append("| Dataset | Scale | Model | PSNR (dB) | SSIM |")
    lines.append("|---------|-------|-------|-----------|------|")
    for r in results:
        lines.append(f"| {r['dataset']} | x{r['scale']} | {r['model']} "
                     f"| {r['avg_psnr']:.2f} | {r['avg_ssim']:.4f} |")
    return "\n".join(lines) + "\n"


# -- ablation ------------------------------------------------------------

ABLATION_VARIANTS = (
    ("single-state", {"dual": False}),
    ("dsrn-no-feedback", {"feedback": False}),
    ("dsrn", {}),
    ("dsrn-untied", {"tied": False}),
)


def split_corpus(data_root: str, out_dir: str, holdout: float = 0.25) -> tuple[str, Corpus]:
    """Split a corpus directory by filename order into a training manifest
    and a held-out tail (at least two images on each side). Returns the
    manifest path and the held-out Corpus."""
    corpus = Corpus.from_dir(data_root)
    k = max(2, int(round(len(corpus) * holdout)))
    if len(corpus) - k < 2:
        raise ConfigurationError(
            f"corpus of {len(corpus)} images is too small to hold {k} out")
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "train_split.txt")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(corpus.paths[:-k]) + "\n")
    return manifest_path, Corpus(data_root, corpus.paths[-k:])


def ablation_run(data_root: str, out_dir: str, scales=(2,), t_steps: int = 5,
                 width: int = 16, steps: int = 1600, seeds=(0, 1, 2),
                 batch: int = 4, patch: int = 24, lr0: float = 0.02,
                 val_interval: int = 200, holdout: float = 0.25) -> dict:
    """Train every variant with the same seeds and budget per scale, then
    score each run's best checkpoint on full held-out images.

    The corpus is split by filename order; the trailing `holdout` fraction
    is never trained on. Scoring whole held-out images keeps the
    comparison deterministic and charges memorization of the training
    images instead of rewarding it. All variants share the dsrn parameter
    layout, so the tied rows report identical counts and the untied row
    multiplies the transition-function count by t_steps."""
    from .training import RunConfig, Trainer, load_model_for_eval

    manifest_path, held = split_corpus(data_root, out_dir, holdout)
    rows = []
    for label, overrides in ABLATION_VARIANTS:
        by_scale = {}
        counts = None
        for scale in scales:
            psnrs = []
            for seed in seeds:
                run_dir = os.path.join(out_dir, f"{label}-x{scale}-seed{seed}")
                cfg = RunConfig(model="dsrn", scale=scale, t_steps=t_steps,
                                width=width, dual=overrides.get("dual", True),
                                feedback=overrides.get("feedback", True),
                                tied=overrides.get("tied", True), lr0=lr0,
                                batch=batch, patch=patch, steps=steps, seed=seed,
                                data_root=data_root, train_manifest=manifest_path,
                                val_batch=4, val_interval=val_interval,
                                out_dir=run_dir)
                trainer = Trainer(cfg)
                counts = trainer.model.parameter_counts()
                trainer.train()
                model, _ = load_model_for_eval(os.path.join(run_dir, "best.ckpt"))
                res = evaluate_dataset(model, held, scale,
                                       protocol=EvalProtocol(border_crop=scale))
                psnrs.append(res["avg_psnr"])
            by_scale[scale] = {"mean_psnr": float(np.mean(psnrs)), "psnrs": psnrs}
        rows.append({"variant": label, "by_scale": by_scale, "counts": counts})
    cols = "".join(f" x{s} PSNR (dB) |" for s in scales)
    table = [f"| Variant | Shared params | Per-step params |{cols}",
             "|---------|---------------|-----------------|"
             + "-------------|" * len(scales)]
    for r in rows:
        vals = "".join(f" {r['by_scale'][s]['mean_psnr']:.3f} |" for s in scales)
        table.append(f"| {r['variant']} | {r['counts']['shared']} "
                     f"| {r['counts']['per_step']} |{vals}")
    text = "\n".join(table) + "\n"
    with open(os.path.join(out_dir, "ablation.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    return {"rows": rows, "table": text}
