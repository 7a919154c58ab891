import numpy as np
import pytest

from parcelsense import geodata, sampler
from parcelsense.sampler import SampleWindow, SamplerConfig

from conftest import make_map
from oracles import exact_valid_probability, window_membership


def test_draw_seed_degenerate_x_range():
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert sampler.draw_seed((5, 5, 7, 7), rng) == (5, 7)


def test_draw_seed_single_point():
    rng = np.random.default_rng(0)
    assert sampler.draw_seed((3, 3, 3, 3), rng) == (3, 3)


def test_draw_seed_uniform_frequencies():
    rng = np.random.default_rng(99)
    n = 100_000
    xs = np.zeros(10)
    ys = np.zeros(10)
    for _ in range(n):
        x, y = sampler.draw_seed((0, 9, 0, 9), rng)
        xs[x] += 1
        ys[y] += 1
    assert np.all(np.abs(xs / n - 0.1) < 0.01)
    assert np.all(np.abs(ys / n - 0.1) < 0.01)


def test_window_width_forced_minimum():
    rng = np.random.default_rng(0)
    # l = min(100-60, 100-90) = 10 < 20
    assert sampler.window_width((0, 100, 0, 100), (60, 90), 20, rng) == 20


def test_window_width_uniform_range():
    rng = np.random.default_rng(1)
    widths = {sampler.window_width((0, 100, 0, 100), (0, 0), 20, rng) for _ in range(5000)}
    assert min(widths) == 20 and max(widths) == 100
    assert widths == set(range(20, 101))


def test_window_width_zero_l():
    rng = np.random.default_rng(0)
    assert sampler.window_width((0, 100, 0, 100), (100, 100), 20, rng) == 20


def test_valid_window_inside_solid_parcel():
    pmap = make_map(50, 50, lambda ids: ids.__setitem__((slice(5, 45), slice(5, 45)), 3))
    assert sampler.is_valid_window(pmap, 3, SampleWindow(10, 10, 20), 0.8)


def test_valid_window_thin_line_never_valid():
    pmap = make_map(40, 40, lambda ids: ids.__setitem__((slice(0, 40), 7), 2))
    for x in range(0, 21):
        for y in range(0, 21):
            assert not sampler.is_valid_window(pmap, 2, SampleWindow(x, y, 20), 0.8)


def test_window_out_of_bounds_invalid():
    pmap = make_map(30, 30, lambda ids: ids.__setitem__((slice(None), slice(None)), 1))
    assert not sampler.is_valid_window(pmap, 1, SampleWindow(20, 0, 20), 0.8)
    assert not sampler.is_valid_window(pmap, 1, SampleWindow(-1, 0, 20), 0.8)
    assert sampler.is_valid_window(pmap, 1, SampleWindow(10, 10, 20), 0.8)


def test_membership_matches_direct_count():
    rng = np.random.default_rng(3)
    ids = rng.integers(0, 3, (25, 25)).astype(np.uint16)
    pmap = geodata.ParcelMap.from_array(ids)
    for _ in range(30):
        x, y, w = int(rng.integers(0, 22)), int(rng.integers(0, 22)), int(rng.integers(1, 6))
        got = sampler.membership_fraction(pmap, 1, SampleWindow(x, y, w))
        assert got == pytest.approx(window_membership(ids, 1, x, y, w), abs=0)


def test_sample_parcel_matches_enumeration_oracle():
    raster = geodata.RasterGrid.from_array(np.zeros((60, 60, 3), np.uint8))
    pmap = make_map(60, 60, lambda ids: ids.__setitem__((slice(4, 56), slice(8, 52)), 1))
    (record,) = geodata.build_parcel_records(pmap)
    config = SamplerConfig(w_min=20, attempts=20_000, seed=11)
    samples = sampler.sample_parcel(raster, pmap, record, config)
    p = exact_valid_probability(pmap.ids, record.id, record.bbox, 20, 0.8)
    sigma = np.sqrt(p * (1 - p) / config.attempts)
    assert abs(len(samples) / config.attempts - p) < 3 * sigma


def test_single_pixel_parcel_yields_nothing():
    raster = geodata.RasterGrid.from_array(np.zeros((50, 50, 3), np.uint8))
    pmap = make_map(50, 50, lambda ids: ids.__setitem__((10, 10), 4))
    (record,) = geodata.build_parcel_records(pmap)
    assert sampler.sample_parcel(raster, pmap, record, SamplerConfig(w_min=20, seed=0)) == []


def test_attempts_one_gives_at_most_one(solid_parcel):
    raster, pmap, record = solid_parcel
    samples = sampler.sample_parcel(raster, pmap, record, SamplerConfig(attempts=1, seed=5))
    assert len(samples) <= 1


def test_sampling_is_deterministic(solid_parcel):
    raster, pmap, record = solid_parcel
    config = SamplerConfig(seed=123)
    a = sampler.sample_parcel(raster, pmap, record, config)
    b = sampler.sample_parcel(raster, pmap, record, config)
    assert [(s.x, s.y, s.width) for s in a] == [(s.x, s.y, s.width) for s in b]
    assert all(np.array_equal(p.pixels, q.pixels) for p, q in zip(a, b))


def test_emitted_samples_satisfy_validity_and_bounds(solid_parcel):
    raster, pmap, _ = solid_parcel
    pmap = make_map(
        100, 100, lambda ids: ids.__setitem__((slice(10, 80), slice(25, 95)), 9)
    )
    (record,) = geodata.build_parcel_records(pmap)
    config = SamplerConfig(seed=7)
    for s in sampler.sample_parcel(raster, pmap, record, config):
        window = SampleWindow(s.x, s.y, s.width)
        assert sampler.is_valid_window(pmap, 9, window, config.membership_threshold)
        assert 0 <= s.x and s.x + s.width <= 100
        assert 0 <= s.y and s.y + s.height <= 100
        assert np.array_equal(s.pixels, raster.pixels[s.y : s.y + s.height, s.x : s.x + s.width])


def test_rect_patch_two_pixel_bbox():
    raster = geodata.RasterGrid.from_array(
        np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
    )
    pmap = make_map(3, 2, lambda ids: ids.__setitem__((0, slice(0, 2)), 1))
    (record,) = geodata.build_parcel_records(pmap)
    patch = sampler.rect_patch(raster, record)
    assert patch.pixels.shape == (1, 2, 3)
    assert np.array_equal(patch.pixels, raster.pixels[0:1, 0:2])


def test_rect_patch_whole_raster():
    raster = geodata.RasterGrid.from_array(np.full((10, 10, 3), 4, np.uint8))
    pmap = make_map(10, 10, lambda ids: ids.__setitem__((slice(None), slice(None)), 2))
    (record,) = geodata.build_parcel_records(pmap)
    assert np.array_equal(sampler.rect_patch(raster, record).pixels, raster.pixels)


def test_rect_patch_of_l_shape_contains_foreign_pixels():
    pmap = make_map(20, 20, lambda ids: (
        ids.__setitem__((slice(0, 20), slice(0, 5)), 1),
        ids.__setitem__((slice(15, 20), slice(5, 20)), 1),
    ))
    raster = geodata.RasterGrid.from_array(np.zeros((20, 20, 3), np.uint8))
    (record,) = geodata.build_parcel_records(pmap)
    patch = sampler.rect_patch(raster, record)
    block = pmap.ids[record.bbox[2] : record.bbox[3] + 1, record.bbox[0] : record.bbox[1] + 1]
    assert (block != 1).any()
    assert patch.pixels.shape[:2] == block.shape


def test_multiscale_full_scale_returns_whole_image():
    image = geodata.RasterGrid.from_array(np.arange(48, dtype=np.uint8).reshape(4, 4, 3))
    crops = sampler.multiscale_crops(image, 5, scale_lo=1.0, scale_hi=1.0, rng=np.random.default_rng(0))
    for crop in crops:
        assert np.array_equal(crop.pixels, image.pixels)


def test_multiscale_half_scale_in_bounds():
    image = geodata.RasterGrid.from_array(np.zeros((256, 256, 3), np.uint8))
    crops = sampler.multiscale_crops(image, 20, scale_lo=0.5, scale_hi=0.5, rng=np.random.default_rng(0))
    for crop in crops:
        assert crop.pixels.shape[:2] == (128, 128)
        assert 0 <= crop.x <= 128 and 0 <= crop.y <= 128


def test_multiscale_sides_within_range():
    image = geodata.RasterGrid.from_array(np.zeros((100, 100, 3), np.uint8))
    crops = sampler.multiscale_crops(image, 10_000, rng=np.random.default_rng(4))
    sides = {crop.width for crop in crops}
    assert min(sides) >= 50 and max(sides) <= 100
    assert all(crop.width == crop.height for crop in crops)


def test_multiscale_scale_errors():
    image = geodata.RasterGrid.from_array(np.zeros((4, 4, 3), np.uint8))
    with pytest.raises(ValueError):
        sampler.multiscale_crops(image, 1, scale_lo=0.0)
    with pytest.raises(ValueError):
        sampler.multiscale_crops(image, 1, scale_hi=1.2)
    with pytest.raises(ValueError):
        sampler.multiscale_crops(image, 1, scale_lo=0.9, scale_hi=0.6)


def test_export_patches_manifest_round_trip(tmp_path, solid_parcel):
    raster, pmap, record = solid_parcel
    samples = sampler.sample_parcel(raster, pmap, record, SamplerConfig(attempts=10, seed=2))
    manifest = sampler.export_patches(samples, tmp_path / "patches")
    lines = manifest.read_text().strip().splitlines()
    assert lines[0] == "parcel_id,x,y,w,path"
    assert len(lines) == len(samples) + 1
    first = lines[1].split(",")
    reloaded = geodata.load_raster(tmp_path / "patches" / first[4])
    assert np.array_equal(reloaded.pixels, samples[0].pixels)
