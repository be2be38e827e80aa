"""Image-quality metrics and held-out evaluation reports.

Conventions, fixed once: PSNR uses MAX=1 on [0,1] images and caps at 100 dB for
exact matches.  SSIM is single-scale with an 11x11 Gaussian window (sigma 1.5),
C1=0.01^2, C2=0.03^2, computed per channel with edge-inclusive reflection
padding and averaged.  Metrics run on full frames.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage

from .encoders import reenact, signal_from_sample
from .errors import ShapeError
from .perceptual import perceptual_distance

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """10*log10(1/MSE) on [0,1] images, capped at 100 dB."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def ssim_window() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2
    coords = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(coords**2) / (2 * SSIM_SIGMA**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a, b) -> float:
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    kernel = ssim_window()
    scores = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mu_x = ndimage.correlate(x, kernel, mode="reflect")
        mu_y = ndimage.correlate(y, kernel, mode="reflect")
        mu_xx = ndimage.correlate(x * x, kernel, mode="reflect")
        mu_yy = ndimage.correlate(y * y, kernel, mode="reflect")
        mu_xy = ndimage.correlate(x * y, kernel, mode="reflect")
        var_x = mu_xx - mu_x**2
        var_y = mu_yy - mu_y**2
        cov = mu_xy - mu_x * mu_y
        num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


@dataclass
class EvalReport:
    rows: list[dict]
    psnr: float
    ssim: float
    perceptual: float
    gram_offdiag_max: float

    def summary(self) -> dict:
        return {
            "psnr": self.psnr,
            "ssim": self.ssim,
            "perceptual": self.perceptual,
            "gram_offdiag_max": self.gram_offdiag_max,
            "n_frames": len(self.rows),
        }

    def write(self, rows_path, summary_path, csv_path=None) -> None:
        with open(rows_path, "w") as fh:
            for row in self.rows:
                fh.write(json.dumps(row) + "\n")
        with open(summary_path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
        if csv_path:
            with open(csv_path, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(self.rows[0].keys()))
                writer.writeheader()
                writer.writerows(self.rows)


def evaluate(generator, basis, encoder, samples, render_config, modality: str,
             perceptual_method: str = "gradient_pyramid") -> EvalReport:
    """Render every frame under its own camera and score it against ground truth."""
    rows = []
    dtype = generator.dtype
    with torch.no_grad():
        for sample in samples:
            signal = signal_from_sample(sample, modality, dtype=dtype)
            out = reenact(encoder, basis, generator, signal, sample.pose, render_config, seed=0)
            pred = out.rgb.detach().cpu().numpy().astype(np.float64)
            target = np.asarray(sample.image, dtype=np.float64)
            perc = float(perceptual_distance(
                torch.as_tensor(pred), torch.as_tensor(target), perceptual_method
            ))
            rows.append({
                "frame_id": sample.frame_id,
                "psnr": psnr(pred, target),
                "ssim": ssim(pred, target),
                "perceptual": perc,
            })
    return EvalReport(
        rows=rows,
        psnr=float(np.mean([r["psnr"] for r in rows])),
        ssim=float(np.mean([r["ssim"] for r in rows])),
        perceptual=float(np.mean([r["perceptual"] for r in rows])),
        gram_offdiag_max=basis.offdiag_max(),
    )


def mean_image_baseline(train_samples, eval_samples) -> float:
    """Held-out PSNR of always predicting the mean training image."""
    mean_img = np.mean([s.image for s in train_samples], axis=0)
    return float(np.mean([psnr(mean_img, s.image) for s in eval_samples]))
