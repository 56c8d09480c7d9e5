"""Individual Typology Angle (ITA) from RGB images.

Pixels go sRGB -> linear RGB -> XYZ (D65) -> CIELab, and the per-pixel angle
is ``degrees(arctan((L - 50) / b))``. Two masking pipelines aggregate pixels
into one value per image: a luminance band mask for fundus photographs and
blurred per-region medians for faces.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw
from scipy.ndimage import gaussian_filter

from .errors import DomainError, MaskError

# sRGB primaries to XYZ, rounded to four decimals
SRGB_TO_XYZ = np.array([
    [0.4124, 0.3576, 0.1805],
    [0.2126, 0.7152, 0.0722],
    [0.0193, 0.1192, 0.9505],
])
D65_WHITE = np.array([0.95047, 1.0, 1.08883])
DEFAULT_CUTOFFS = {"fundus_mask": 19.0, "face_regions": 28.0, "whole_image": 28.0}
METHODS = tuple(DEFAULT_CUTOFFS)
BLUR_KERNEL = 11


@dataclass(frozen=True)
class LabPixel:
    L: float
    a: float
    b: float


@dataclass
class ItaResult:
    ita_degrees: float
    mask_coverage: float
    method: str
    binary_attribute: bool | None = None


def _linearize(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _lab_f(t):
    delta = 6.0 / 29.0
    return np.where(t > delta ** 3, np.cbrt(t), t / (3 * delta ** 2) + 4.0 / 29.0)


def rgb_to_lab_array(rgb):
    """Vectorized conversion of ``(..., 3)`` 8-bit RGB to ``(..., 3)`` Lab."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[-1] != 3:
        raise DomainError("RGB input needs a trailing channel axis of size 3")
    if rgb.min(initial=0) < 0 or rgb.max(initial=0) > 255:
        raise DomainError("RGB samples must lie in [0, 255]")
    xyz = _linearize(rgb / 255.0) @ SRGB_TO_XYZ.T
    f = _lab_f(xyz / D65_WHITE)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def srgb_to_lab(pixel):
    L, a, b = rgb_to_lab_array(np.asarray(pixel, dtype=np.float64).reshape(1, 3))[0]
    return LabPixel(float(L), float(a), float(b))


def ita_pixel(L, b):
    """Angle in degrees; with ``b == 0`` the sign of ``L - 50`` picks +-90 (0 at L = 50)."""
    L = np.asarray(L, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    num = L - 50.0
    safe_b = np.where(b == 0, 1.0, b)
    out = np.degrees(np.arctan(num / safe_b))
    out = np.where(b == 0, 90.0 * np.sign(num), out)
    return float(out) if out.ndim == 0 else out


def ita_of(lab):
    if isinstance(lab, LabPixel):
        return ita_pixel(lab.L, lab.b)
    lab = np.asarray(lab)
    return ita_pixel(lab[..., 0], lab[..., 2])


def fundus_mask(image, *, background_L=5.0, band=(10.0, 90.0)):
    """Foreground pixels of a fundus photo inside the central luminance band.

    Pixels darker than ``background_L`` are background; of the rest, only
    those between the band's lower and upper luminance percentiles are kept
    (this strips flash reflections and dark vessels).
    """
    lab = rgb_to_lab_array(image)
    L = lab[..., 0]
    fg = L >= background_L
    if not fg.any():
        raise MaskError("image has no foreground pixels")
    lo, hi = np.percentile(L[fg], band)
    return fg & (L >= lo) & (L <= hi)


def rasterize(polygon, shape):
    """Boolean mask of a polygon given as ``(x, y)`` vertices (column, row)."""
    h, w = shape
    canvas = Image.new("1", (w, h), 0)
    pts = [tuple(map(float, p)) for p in polygon]
    if len(pts) == 1:
        pts = pts * 3
    ImageDraw.Draw(canvas).polygon(pts, fill=1, outline=1)
    return np.array(canvas, dtype=bool)


def _region_mask(region, shape):
    if isinstance(region, np.ndarray) and region.dtype == bool:
        if region.shape != shape:
            raise MaskError("region mask shape differs from the image")
        return region
    return rasterize(region, shape)


def blurred_ita_map(image, kernel=BLUR_KERNEL):
    """Per-pixel ITA smoothed by a Gaussian of width ``kernel`` (sigma = kernel / 6)."""
    ita = ita_of(rgb_to_lab_array(image))
    sigma = kernel / 6.0
    radius = kernel // 2
    return gaussian_filter(ita, sigma=sigma, mode="nearest", truncate=radius / sigma)


def face_region_ita(image, regions, *, kernel=BLUR_KERNEL, cutoff=None):
    """Mean over regions of the median blurred ITA inside each region."""
    image = np.asarray(image)
    blurred = blurred_ita_map(image, kernel)
    shape = blurred.shape
    medians, union = [], np.zeros(shape, dtype=bool)
    for region in regions:
        m = _region_mask(region, shape)
        if not m.any():
            continue
        medians.append(float(np.median(blurred[m])))
        union |= m
    if not medians:
        raise MaskError("every face region is empty")
    value = float(np.mean(medians))
    flag = None if cutoff is None else binarize(value, cutoff)
    return ItaResult(value, float(union.mean()), "face_regions", flag)


def image_ita(image, method="fundus_mask", *, regions=None, cutoff=None):
    """Per-image ITA with the chosen masking pipeline.

    ``cutoff=None`` falls back to the method's default; pass ``False`` to
    skip binarization.
    """
    if method not in METHODS:
        raise DomainError(f"method must be one of {METHODS}")
    if cutoff is None:
        cutoff = DEFAULT_CUTOFFS[method]
    cutoff = None if cutoff is False else cutoff
    image = np.asarray(image)
    if method == "face_regions":
        if not regions:
            raise MaskError("face pipeline needs at least one region")
        return face_region_ita(image, regions, cutoff=cutoff)
    ita = ita_of(rgb_to_lab_array(image))
    mask = fundus_mask(image) if method == "fundus_mask" else np.ones(ita.shape, dtype=bool)
    value = float(np.mean(ita[mask]))
    return ItaResult(value, float(mask.mean()), method,
                     None if cutoff is None else binarize(value, cutoff))


def binarize(ita, cutoff):
    """Dark-skin flag: ``ita <= cutoff`` (inclusive)."""
    return bool(ita <= cutoff) if np.ndim(ita) == 0 else np.asarray(ita) <= cutoff


@dataclass
class CutoffSweep:
    cutoffs: np.ndarray
    correlations: np.ndarray
    best_cutoff: float
    best_correlation: float


def cutoff_sweep(itas, reference_labels, cutoff_range=range(-30, 61)):
    """Pearson correlation between ``ita <= c`` and the reference label per cutoff.

    Cutoffs where the thresholded ITA is constant give NaN and never win.
    Ties go to the lowest cutoff.
    """
    itas = np.asarray(itas, dtype=np.float64)
    ref = np.asarray(reference_labels, dtype=np.float64)
    if ref.min() == ref.max():
        raise DomainError("reference labels are constant; correlation undefined")
    cutoffs = np.asarray(list(cutoff_range), dtype=np.float64)
    corr = np.full(len(cutoffs), np.nan)
    for k, c in enumerate(cutoffs):
        flag = (itas <= c).astype(np.float64)
        if flag.min() != flag.max():
            corr[k] = np.corrcoef(flag, ref)[0, 1]
    if np.all(np.isnan(corr)):
        raise DomainError("no cutoff in range splits the ITA values")
    k = int(np.nanargmax(corr))
    return CutoffSweep(cutoffs, corr, float(cutoffs[k]), float(corr[k]))


def read_image(path):
    """8-bit RGB array from a PNG or binary PPM file."""
    with Image.open(path) as im:
        return np.array(im.convert("RGB"), dtype=np.uint8)


def write_image(array, path):
    Image.fromarray(np.asarray(array, dtype=np.uint8), "RGB").save(path)


def results_csv(rows):
    """CSV with ``image_id,ita,mask_coverage,binary_attribute`` from ``(id, ItaResult)`` pairs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image_id", "ita", "mask_coverage", "binary_attribute"])
    for image_id, res in rows:
        flag = "" if res.binary_attribute is None else int(res.binary_attribute)
        w.writerow([image_id, repr(res.ita_degrees), repr(res.mask_coverage), flag])
    return buf.getvalue()


def histogram_csv(itas, bins=36, value_range=(-90.0, 90.0)):
    """Density curve data (bin centre, density) for plotting ITA distributions."""
    dens, edges = np.histogram(np.asarray(itas, dtype=np.float64), bins=bins,
                               range=value_range, density=True)
    centres = (edges[:-1] + edges[1:]) / 2
    lines = ["bin_centre,density"] + [f"{c!r},{d!r}" for c, d in zip(centres.tolist(), dens.tolist())]
    return "\n".join(lines) + "\n"
