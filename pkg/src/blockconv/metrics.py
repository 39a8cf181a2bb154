"""Recovery-quality metrics: relative error, PSNR, and windowed SSIM."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, StructureError
from .numerics import as_dense

__all__ = ["ImagePair", "rre", "psnr", "ssim", "SSIM_WINDOW"]

SSIM_WINDOW = 8


@dataclass(frozen=True)
class ImagePair:
    """A recovered signal against its ground truth, viewed as an image.

    Signals are flat row-major vectors of length width * height; ``peak``
    is the largest representable value (1.0 for signals scaled to [0, 1]).
    """

    recovered: np.ndarray
    truth: np.ndarray
    width: int
    height: int
    peak: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "recovered", as_dense(self.recovered, rank=1))
        object.__setattr__(self, "truth", as_dense(self.truth, rank=1))
        if self.recovered.shape != self.truth.shape:
            raise StructureError(
                f"recovered {self.recovered.shape} vs truth {self.truth.shape}"
            )
        if self.width * self.height != self.truth.shape[0]:
            raise StructureError(
                f"{self.width}x{self.height} does not tile {self.truth.shape[0]} values"
            )
        if self.peak <= 0.0:
            raise ParameterError(f"peak must be positive, got {self.peak}")


def rre(pair):
    """Relative restoration error: ||recovered - truth|| / ||truth||."""
    truth_norm = float(np.linalg.norm(pair.truth))
    if truth_norm == 0.0:
        raise ParameterError("relative error is undefined for an all-zero truth signal")
    return float(np.linalg.norm(pair.recovered - pair.truth)) / truth_norm


def psnr(pair):
    """Peak signal-to-noise ratio in dB: 20 log10(peak / rmse).

    rmse is the root of the mean squared pixel difference. Identical images
    have zero error; the result is then the +infinity sentinel (rendered as
    "inf" in reports and excluded from averages).
    """
    diff = pair.recovered - pair.truth
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(pair.peak / math.sqrt(mse))


def _windows(img, window):
    view = np.lib.stride_tricks.sliding_window_view(img, (window, window))
    return view.reshape(view.shape[0], view.shape[1], -1)


def ssim(pair, window=SSIM_WINDOW):
    """Mean local structural similarity over sliding windows (stride 1).

    Uniform window weights; local means/variances/covariance are the plain
    (population) moments of each window; stabilizers are C1 = (0.01 peak)^2
    and C2 = (0.03 peak)^2. The expression is symmetric in its arguments,
    so ssim(a, b) == ssim(b, a) exactly.
    """
    if pair.width < window or pair.height < window:
        raise ParameterError(
            f"image {pair.width}x{pair.height} is smaller than the "
            f"{window}x{window} window"
        )
    x = pair.recovered.reshape(pair.height, pair.width)
    y = pair.truth.reshape(pair.height, pair.width)
    wx = _windows(x, window)
    wy = _windows(y, window)
    mean_x = wx.mean(axis=-1)
    mean_y = wy.mean(axis=-1)
    var_x = (wx * wx).mean(axis=-1) - mean_x * mean_x
    var_y = (wy * wy).mean(axis=-1) - mean_y * mean_y
    cov = (wx * wy).mean(axis=-1) - mean_x * mean_y
    c1 = (0.01 * pair.peak) ** 2
    c2 = (0.03 * pair.peak) ** 2
    score = ((2.0 * mean_x * mean_y + c1) * (2.0 * cov + c2)) / (
        (mean_x * mean_x + mean_y * mean_y + c1) * (var_x + var_y + c2)
    )
    return float(score.mean())
