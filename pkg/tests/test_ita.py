import json
import math

import numpy as np
import pytest

from fairkit import ita
from fairkit.errors import DomainError, MaskError

SKIN_20 = (243, 122, 87)   # pixel ITA ~ 20.0
SKIN_40 = (174, 155, 126)  # pixel ITA ~ 40.0


def uniform(color, shape=(24, 24)):
    return np.broadcast_to(np.array(color, dtype=np.uint8), shape + (3,)).copy()


def test_white_and_black():
    w = ita.srgb_to_lab((255, 255, 255))
    assert w.L == pytest.approx(100.0, abs=1e-3)
    assert abs(w.a) < 0.02 and abs(w.b) < 0.02
    assert ita.srgb_to_lab((0, 0, 0)).L == 0.0


def test_mid_gray_matches_scalar_pipeline():
    c = 119 / 255
    lin = ((c + 0.055) / 1.055) ** 2.4
    Y = lin * (0.2126 + 0.7152 + 0.0722)
    L = 116 * Y ** (1 / 3) - 16
    g = ita.srgb_to_lab((119, 119, 119))
    assert g.L == pytest.approx(L, abs=1e-9)
    assert abs(g.a) < 0.02 and abs(g.b) < 0.02


def test_out_of_range_rgb_rejected():
    with pytest.raises(DomainError):
        ita.srgb_to_lab((300, 0, 0))


def test_pixel_angle_examples():
    assert ita.ita_pixel(50, 7.0) == 0.0
    assert ita.ita_pixel(60, 10) == 45.0
    assert ita.ita_pixel(40, 20) == pytest.approx(-26.565, abs=1e-3)
    assert ita.ita_pixel(40, 20) == pytest.approx(math.degrees(math.atan(-0.5)), abs=1e-12)


def test_pixel_angle_at_zero_b():
    assert ita.ita_pixel(70, 0) == 90.0
    assert ita.ita_pixel(30, 0) == -90.0
    assert ita.ita_pixel(50, 0) == 0.0


def test_pixel_angle_ignores_a():
    assert ita.ita_of(ita.LabPixel(62, -30, 12)) == ita.ita_of(ita.LabPixel(62, 45, 12))


def test_fundus_mask_uniform_foreground():
    img = np.zeros((20, 20, 3), dtype=np.uint8)
    img[4:16, 4:16] = SKIN_40
    mask = ita.fundus_mask(img)
    assert np.array_equal(mask, img.any(axis=2))


def test_fundus_mask_drops_flash_artifact():
    img = uniform(SKIN_40, (20, 20))
    artifact = np.zeros((20, 20), dtype=bool)
    artifact.ravel()[::20] = True  # 5% of pixels
    img[artifact] = (255, 255, 255)
    mask = ita.fundus_mask(img)
    assert not (mask & artifact).any()
    assert mask[~artifact].all()


def test_fundus_mask_all_background():
    with pytest.raises(MaskError):
        ita.fundus_mask(np.zeros((8, 8, 3), dtype=np.uint8))


@pytest.mark.parametrize("method", ["fundus_mask", "whole_image"])
def test_uniform_image_equals_pixel_ita(method):
    img = uniform(SKIN_20)
    expected = ita.ita_of(ita.srgb_to_lab(SKIN_20))
    assert ita.image_ita(img, method).ita_degrees == pytest.approx(expected, abs=1e-12)


def test_uniform_image_face_pipeline():
    img = uniform(SKIN_40, (40, 40))
    regions = [[(3, 3), (12, 3), (12, 12)], [(20, 20), (35, 22), (30, 36), (22, 30)]]
    expected = ita.ita_of(ita.srgb_to_lab(SKIN_40))
    res = ita.face_region_ita(img, regions)
    assert res.ita_degrees == pytest.approx(expected, abs=1e-6)
    assert 0 < res.mask_coverage <= 1


def test_two_tone_regions_average_medians():
    img = uniform(SKIN_20, (40, 60))
    img[:, 30:] = SKIN_40
    left = [(4, 8), (20, 8), (20, 30), (4, 30)]
    right = [(40, 8), (56, 8), (56, 30), (40, 30)]
    a = ita.ita_of(ita.srgb_to_lab(SKIN_20))
    b = ita.ita_of(ita.srgb_to_lab(SKIN_40))
    assert a == pytest.approx(20, abs=1e-3) and b == pytest.approx(40, abs=1e-3)
    res = ita.face_region_ita(img, [left, right])
    assert res.ita_degrees == pytest.approx((a + b) / 2, abs=1e-6)
    assert res.ita_degrees == pytest.approx(30, abs=1e-3)


def test_single_pixel_region_is_blurred_value():
    rng = np.random.default_rng(0)
    img = rng.integers(60, 230, size=(20, 20, 3)).astype(np.uint8)
    blurred = ita.blurred_ita_map(img)
    res = ita.face_region_ita(img, [[(7, 11)]])
    assert res.ita_degrees == pytest.approx(blurred[11, 7], abs=1e-12)


def test_face_pipeline_needs_regions():
    with pytest.raises(MaskError):
        ita.image_ita(uniform(SKIN_20), "face_regions")


def test_cutoff_inclusive_and_defaults():
    assert ita.binarize(19.0, 19) is True
    assert ita.binarize(19.0001, 19) is False
    assert ita.DEFAULT_CUTOFFS["fundus_mask"] == 19
    assert ita.DEFAULT_CUTOFFS["face_regions"] == 28
    assert ita.image_ita(uniform(SKIN_20), "whole_image").binary_attribute is True
    assert ita.image_ita(uniform(SKIN_40), "whole_image").binary_attribute is False
    assert ita.image_ita(uniform(SKIN_20), "whole_image", cutoff=False).binary_attribute is None


def test_sweep_perfect_separation():
    itas = np.r_[np.linspace(-10, 5, 50), np.linspace(30, 50, 50)]
    labels = np.r_[np.ones(50), np.zeros(50)]
    sweep = ita.cutoff_sweep(itas, labels)
    between = (sweep.cutoffs >= 5) & (sweep.cutoffs < 30)
    assert np.allclose(sweep.correlations[between], 1.0)
    assert 5 <= sweep.best_cutoff < 30


def test_sweep_null_labels():
    rng = np.random.default_rng(1)
    itas = rng.normal(20, 20, 10_000)
    labels = rng.integers(0, 2, 10_000)
    sweep = ita.cutoff_sweep(itas, labels)
    assert np.nanmax(np.abs(sweep.correlations)) < 0.1


def test_sweep_two_gaussians_hits_equal_posterior_point():
    rng = np.random.default_rng(2)
    dark = rng.normal(10, 8, 5000)
    light = rng.normal(40, 8, 5000)
    itas = np.r_[dark, light]
    labels = np.r_[np.ones(5000), np.zeros(5000)]
    # equal priors and variances: posteriors cross at the midpoint
    assert abs(ita.cutoff_sweep(itas, labels).best_cutoff - 25.0) <= 1.0


def test_sweep_constant_reference_rejected():
    with pytest.raises(DomainError):
        ita.cutoff_sweep([1.0, 2.0], [1, 1])


def test_png_round_trip_and_csv(tmp_path):
    img = uniform(SKIN_20, (10, 12))
    p = tmp_path / "x.png"
    ita.write_image(img, p)
    assert np.array_equal(ita.read_image(p), img)
    ppm = tmp_path / "x.ppm"
    ita.write_image(img, ppm)
    assert np.array_equal(ita.read_image(ppm), img)
    text = ita.results_csv([("x", ita.image_ita(img, "whole_image"))])
    assert text.splitlines()[0] == "image_id,ita,mask_coverage,binary_attribute"
    hist = ita.histogram_csv([10.0, 20.0]).splitlines()
    assert hist[0] == "bin_centre,density"
    assert [float(v) for v in hist[1].split(",")] == [-87.5, 0.0]


def test_cli_ita(tmp_path, capsys):
    from fairkit.cli import main

    img = uniform(SKIN_40, (30, 30))
    p = tmp_path / "face.png"
    ita.write_image(img, p)
    regions = tmp_path / "r.json"
    regions.write_text(json.dumps({"*": [[[2, 2], [20, 2], [20, 20]]]}))
    out = tmp_path / "o.csv"
    assert main(["ita", str(p), "--method", "face_regions", "--regions", str(regions),
                 "--out", str(out)]) == 0
    row = out.read_text().splitlines()[1].split(",")
    assert row[0] == "face" and row[3] == "0"
