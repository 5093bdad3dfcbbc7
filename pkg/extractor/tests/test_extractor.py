"""Extractor shape arithmetic, image handling, and output layout.

Uses an untrained backbone throughout: pool5 shapes and nonnegativity do not
depend on the weights, so no download is needed.
"""

import struct

import numpy as np
import pytest
from PIL import Image

from vgg_extractor import build_job, extract, load_backbone, pool5_tensor
from vgg_extractor.extractor import prepare_image, write_dft1


@pytest.fixture(scope="module")
def backbone():
    return load_backbone("random")


def save_image(path, width, height, color=(200, 30, 30)):
    Image.new("RGB", (width, height), color).save(path)


class TestPool5Shapes:
    def test_square_224_gives_7x7(self, backbone):
        values = pool5_tensor(backbone, Image.new("RGB", (224, 224)))
        assert values.shape == (512, 7, 7)
        assert values.dtype == np.float32

    def test_stride_32_floor_arithmetic(self, backbone):
        values = pool5_tensor(backbone, Image.new("RGB", (500, 300)))
        assert values.shape == (512, 300 // 32, 500 // 32)

    def test_nonnegative_after_pooling(self, backbone):
        rng = np.random.default_rng(0)
        pixels = rng.integers(0, 256, size=(64, 96, 3), dtype=np.uint8)
        values = pool5_tensor(backbone, Image.fromarray(pixels))
        assert np.all(values >= 0.0)

    def test_too_small_image_rejected(self, backbone):
        with pytest.raises(ValueError):
            pool5_tensor(backbone, Image.new("RGB", (20, 20)))


class TestPrepareImage:
    def test_crop_applied_before_shape(self, tmp_path):
        path = tmp_path / "big.jpg"
        save_image(path, 640, 480)
        image = prepare_image(path, crop=(100.2, 50.8, 400.0, 250.0))
        assert image.size == (300, 200)

    def test_crop_clamped_to_bounds(self, tmp_path):
        path = tmp_path / "img.jpg"
        save_image(path, 100, 80)
        image = prepare_image(path, crop=(-10.0, -5.0, 500.0, 500.0))
        assert image.size == (100, 80)

    def test_degenerate_crop_rejected(self, tmp_path):
        path = tmp_path / "img.jpg"
        save_image(path, 100, 80)
        with pytest.raises(ValueError):
            prepare_image(path, crop=(90.0, 40.0, 30.0, 10.0))

    def test_max_side_cap_preserves_aspect(self, tmp_path):
        path = tmp_path / "wide.jpg"
        save_image(path, 2048, 1024)
        image = prepare_image(path, max_side=1024)
        assert image.size == (1024, 512)

    def test_exif_orientation_upright(self, tmp_path):
        path = tmp_path / "rotated.jpg"
        image = Image.new("RGB", (120, 60), (10, 200, 10))
        exif = image.getexif()
        exif[0x0112] = 6  # rotate 270 CW to display upright
        image.save(path, exif=exif)
        upright = prepare_image(path, upright=True)
        assert upright.size == (60, 120)
        ignored = prepare_image(path, upright=False)
        assert ignored.size == (120, 60)


class TestDft1Writer:
    def test_layout_matches_format_contract(self, tmp_path):
        values = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        path = tmp_path / "t.dft"
        write_dft1(values, path)
        data = path.read_bytes()
        assert data[:4] == b"DFT1"
        assert struct.unpack_from("<III", data, 4) == (2, 3, 4)
        payload = np.frombuffer(data, dtype="<f4", offset=16)
        assert np.array_equal(payload.reshape(2, 3, 4), values)
        assert len(data) == 16 + 4 * 24


class TestBuildJob:
    def _dataset(self, tmp_path, names):
        images = tmp_path / "images"
        images.mkdir()
        for name in names:
            save_image(images / f"{name}.jpg", 96, 64)
        return images

    def test_plain_lists_all_images(self, tmp_path):
        images = self._dataset(tmp_path, ["a", "b", "c"])
        job = build_job("plain", images)
        assert sorted(t.image_id for t in job.database) == ["a", "b", "c"]
        assert job.queries == []

    def test_oxford_queries_cropped_and_prefix_stripped(self, tmp_path):
        images = self._dataset(tmp_path, ["all_souls_000013"])
        gt = tmp_path / "gt"
        gt.mkdir()
        (gt / "all_souls_1_query.txt").write_text(
            "oxc1_all_souls_000013 10.5 4.0 90.0 60.0\n")
        job = build_job("oxford", images, gt)
        assert len(job.queries) == 1
        query = job.queries[0]
        assert query.image_id == "all_souls_1"
        assert query.path.stem == "all_souls_000013"
        assert query.crop == (10.5, 4.0, 90.0, 60.0)

    def test_oxford_requires_gt(self, tmp_path):
        images = self._dataset(tmp_path, ["a"])
        with pytest.raises(ValueError):
            build_job("oxford", images)

    def test_holidays_sets_upright_and_queries(self, tmp_path):
        images = self._dataset(tmp_path, ["100000", "100001", "100100"])
        job = build_job("holidays", images)
        assert all(t.upright for t in job.database)
        assert sorted(t.image_id for t in job.queries) == ["100000_query",
                                                           "100100_query"]

    def test_unknown_dataset(self, tmp_path):
        images = self._dataset(tmp_path, ["a"])
        with pytest.raises(ValueError):
            build_job("landsat", images)

    def test_empty_directory(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        with pytest.raises(ValueError):
            build_job("plain", empty)


class TestExtract:
    def test_end_to_end_npy_layout(self, backbone, tmp_path):
        images = tmp_path / "images"
        images.mkdir()
        for name, (w, h) in (("a", (96, 64)), ("b", (128, 64))):
            save_image(images / f"{name}.jpg", w, h)
        out = tmp_path / "out"
        job = build_job("plain", images)
        summary = extract(job, backbone, out, fmt="npy")
        assert summary.written == 2 and not summary.skipped

        manifest = dict(
            line.split("\t")
            for line in (out / "manifest.tsv").read_text().splitlines()
        )
        assert set(manifest) == {"a", "b"}
        loaded = np.load(out / manifest["a"])
        assert loaded.shape == (512, 64 // 32, 96 // 32)
        assert loaded.dtype == np.float32
        assert np.all(loaded >= 0.0)

    def test_unreadable_image_logged_and_omitted(self, backbone, tmp_path):
        images = tmp_path / "images"
        images.mkdir()
        save_image(images / "good.jpg", 64, 64)
        (images / "broken.jpg").write_bytes(b"not really a jpeg")
        out = tmp_path / "out"
        summary = extract(build_job("plain", images), backbone, out)
        assert summary.written == 1
        assert [image_id for image_id, _ in summary.skipped] == ["broken"]
        manifest_ids = [line.split("\t")[0]
                        for line in (out / "manifest.tsv").read_text().splitlines()]
        assert manifest_ids == ["good"]

    def test_query_tensor_reflects_crop(self, backbone, tmp_path):
        images = tmp_path / "images"
        images.mkdir()
        save_image(images / "site_000001.jpg", 256, 192)
        gt = tmp_path / "gt"
        gt.mkdir()
        (gt / "site_1_query.txt").write_text("oxc1_site_000001 0 0 128 96\n")
        (gt / "site_1_good.txt").write_text("site_000001\n")
        (gt / "site_1_ok.txt").write_text("")
        (gt / "site_1_junk.txt").write_text("")
        out = tmp_path / "out"
        job = build_job("oxford", images, gt)
        summary = extract(job, backbone, out, fmt="dft")
        assert summary.written == 2

        query_file = out / "tensors" / "site_1.dft"
        k, h, w = struct.unpack_from("<III", query_file.read_bytes(), 4)
        assert (k, h, w) == (512, 96 // 32, 128 // 32)
        database_file = out / "tensors" / "site_000001.dft"
        k2, h2, w2 = struct.unpack_from("<III", database_file.read_bytes(), 4)
        assert (k2, h2, w2) == (512, 192 // 32, 256 // 32)
        # ground truth copied alongside the manifests
        assert (out / "gt" / "site_1_query.txt").is_file()
        assert (out / "queries.tsv").read_text().startswith("site_1\t")
