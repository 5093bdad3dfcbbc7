"""Whitening fit/apply math and the WHM1 model file."""

import numpy as np
import pytest

from deepagg.core import GlobalDescriptor
from deepagg.errors import (
    DegenerateDescriptor,
    DimensionMismatch,
    InsufficientSamples,
    MalformedFile,
    ModelDimMismatch,
    RankDeficientWarning,
)
from deepagg.whitening import (
    WhiteningModel,
    apply_whitening,
    fit_whitening,
    load_model,
    save_model,
)


def unit_descriptors(rng, n, dim, prefix="d"):
    out = []
    for i in range(n):
        v = rng.standard_normal(dim)
        out.append(GlobalDescriptor(values=v / np.linalg.norm(v), image_id=f"{prefix}{i}"))
    return out


class TestFit:
    def test_whitened_training_covariance_is_identity(self):
        rng = np.random.default_rng(0)
        descs = unit_descriptors(rng, 100, 8)
        for k_prime in (4, 8):
            model = fit_whitening(descs, k_prime=k_prime)
            samples = np.stack([d.values for d in descs])
            projected = (samples - model.mean) @ model.projection.T
            cov = np.cov(projected.T)
            np.testing.assert_allclose(cov, np.eye(k_prime), atol=1e-6)

    def test_insufficient_samples(self):
        rng = np.random.default_rng(1)
        with pytest.raises(InsufficientSamples):
            fit_whitening(unit_descriptors(rng, 1, 4), k_prime=2)

    def test_mixed_dims_rejected(self):
        rng = np.random.default_rng(2)
        descs = unit_descriptors(rng, 3, 4) + unit_descriptors(rng, 3, 6)
        with pytest.raises(DimensionMismatch):
            fit_whitening(descs, k_prime=2)

    def test_k_prime_bounds(self):
        rng = np.random.default_rng(3)
        descs = unit_descriptors(rng, 10, 4)
        with pytest.raises(ValueError):
            fit_whitening(descs, k_prime=5)
        with pytest.raises(ValueError):
            fit_whitening(descs, k_prime=0)

    def test_rejects_whitened_inputs(self):
        rng = np.random.default_rng(4)
        v = rng.standard_normal(4)
        whitened = GlobalDescriptor(values=v / np.linalg.norm(v),
                                    stage="whitened-normalized")
        with pytest.raises(ValueError):
            fit_whitening([whitened, whitened], k_prime=2)

    def test_eigenvalues_sorted_and_match_full_spectrum(self):
        rng = np.random.default_rng(5)
        descs = unit_descriptors(rng, 60, 6)
        model = fit_whitening(descs, k_prime=4)
        assert np.all(np.diff(model.eigenvalues) <= 0)
        full = np.linalg.eigvalsh(np.cov(np.stack([d.values for d in descs]).T))[::-1]
        np.testing.assert_allclose(model.eigenvalues, full[:4], rtol=1e-9)

    def test_unscaled_rows_orthonormal(self):
        rng = np.random.default_rng(6)
        model = fit_whitening(unit_descriptors(rng, 50, 8), k_prime=5)
        unscaled = model.projection * np.sqrt(model.eigenvalues + model.eps_w)[:, None]
        np.testing.assert_allclose(unscaled @ unscaled.T, np.eye(5), atol=1e-6)

    def test_no_whiten_scale_is_plain_pca(self):
        rng = np.random.default_rng(7)
        model = fit_whitening(unit_descriptors(rng, 50, 8), k_prime=5, whiten_scale=False)
        np.testing.assert_allclose(model.projection @ model.projection.T,
                                   np.eye(5), atol=1e-9)

    def test_rank_deficient_warning(self):
        rng = np.random.default_rng(8)
        base = unit_descriptors(rng, 2, 6)
        # Ten copies of two points: covariance rank 1, retained dims 2+ degenerate
        descs = [GlobalDescriptor(values=d.values, image_id=f"c{i}")
                 for i, d in enumerate(base * 10)]
        with pytest.warns(RankDeficientWarning):
            fit_whitening(descs, k_prime=4)

    def test_sign_convention_deterministic(self):
        rng = np.random.default_rng(9)
        descs = unit_descriptors(rng, 40, 8)
        a = fit_whitening(descs, k_prime=8)
        b = fit_whitening(descs, k_prime=8)
        assert np.array_equal(a.projection, b.projection)
        first_nonzero_signs = []
        for row in (a.projection * np.sqrt(a.eigenvalues + a.eps_w)[:, None]):
            idx = np.nonzero(np.abs(row) > 1e-9)[0][0]
            first_nonzero_signs.append(np.sign(row[idx]))
        assert all(s > 0 for s in first_nonzero_signs)


class TestApply:
    def test_mean_input_is_degenerate(self):
        rng = np.random.default_rng(10)
        v = rng.standard_normal(4)
        v /= np.linalg.norm(v)
        model = WhiteningModel(mean=v, projection=np.eye(4)[:2], eigenvalues=np.ones(2),
                               eps_w=1e-8)
        with pytest.raises(DegenerateDescriptor):
            apply_whitening(model, GlobalDescriptor(values=v, image_id="m"))

    def test_toy_projection_matches_matrix_arithmetic(self):
        mean = np.array([0.1, 0.2, 0.3, 0.4])
        projection = np.array([[1.0, 0.0, 1.0, 0.0],
                               [0.0, 2.0, 0.0, -1.0]])
        model = WhiteningModel(mean=mean, projection=projection,
                               eigenvalues=np.array([2.0, 1.0]), eps_w=1e-8)
        v = np.array([0.5, 0.5, 0.5, 0.5])
        d = GlobalDescriptor(values=v, image_id="q")
        got = apply_whitening(model, d)
        y = np.empty(2)
        for r in range(2):
            y[r] = sum(projection[r, c] * (v[c] - mean[c]) for c in range(4))
        np.testing.assert_allclose(got.values, y / np.linalg.norm(y), rtol=1e-12)
        assert got.dim == 2

    def test_dim_mismatch(self):
        rng = np.random.default_rng(11)
        model = fit_whitening(unit_descriptors(rng, 20, 8), k_prime=4)
        short = unit_descriptors(rng, 1, 4)[0]
        with pytest.raises(ModelDimMismatch):
            apply_whitening(model, short)

    def test_unit_norm_output(self):
        rng = np.random.default_rng(12)
        descs = unit_descriptors(rng, 30, 6)
        model = fit_whitening(descs, k_prime=6)
        for d in descs[:5]:
            out = apply_whitening(model, d)
            assert abs(np.linalg.norm(out.values) - 1.0) < 1e-9

    def test_global_scaling_invariance(self):
        # Scaling every raw vector uniformly before normalization changes nothing;
        # the pipeline is affine after the (scale-free) mean subtraction.
        rng = np.random.default_rng(13)
        raw = rng.standard_normal((30, 6))
        descs = [GlobalDescriptor(values=v / np.linalg.norm(v), image_id=f"s{i}")
                 for i, v in enumerate(raw)]
        scaled = [GlobalDescriptor(values=(3.0 * v) / np.linalg.norm(3.0 * v),
                                   image_id=f"s{i}") for i, v in enumerate(raw)]
        m1 = fit_whitening(descs, k_prime=4)
        m2 = fit_whitening(scaled, k_prime=4)
        for d1, d2 in zip(descs[:5], scaled[:5]):
            np.testing.assert_allclose(apply_whitening(m1, d1).values,
                                       apply_whitening(m2, d2).values, atol=1e-9)


class TestModelFile:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(14)
        model = fit_whitening(unit_descriptors(rng, 40, 8), k_prime=5, eps_w=1e-8)
        path = tmp_path / "m.whm"
        save_model(model, path)
        loaded = load_model(path)
        assert np.array_equal(loaded.mean, model.mean)
        assert np.array_equal(loaded.projection, model.projection)
        assert np.array_equal(loaded.eigenvalues, model.eigenvalues)
        assert loaded.eps_w == model.eps_w

    def test_truncated_file(self, tmp_path):
        rng = np.random.default_rng(15)
        model = fit_whitening(unit_descriptors(rng, 10, 4), k_prime=2)
        path = tmp_path / "m.whm"
        save_model(model, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(MalformedFile):
            load_model(path)

    def test_version_mismatch(self, tmp_path):
        rng = np.random.default_rng(16)
        model = fit_whitening(unit_descriptors(rng, 10, 4), k_prime=2)
        path = tmp_path / "m.whm"
        save_model(model, path)
        data = bytearray(path.read_bytes())
        data[4] = 9  # version field
        path.write_bytes(bytes(data))
        with pytest.raises(MalformedFile):
            load_model(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.whm"
        path.write_bytes(b"JUNK" + b"\x00" * 40)
        with pytest.raises(MalformedFile):
            load_model(path)
