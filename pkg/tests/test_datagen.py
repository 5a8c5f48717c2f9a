"""Generators: sources, structured MLP, Moebius, flow mixing, triangles."""

import json

import numpy as np
import pytest

from sparseica.conditions import check_intersection_condition
from sparseica.datagen import (
    Dataset,
    GenerationError,
    MoebiusConfig,
    MoebiusMixing,
    StructureMask,
    gen_base,
    gen_ii,
    gen_ss,
    gen_vp,
    generate_dataset,
    jacobian_column_orthogonality,
    random_intersection_mask,
    read_pgm,
    render_triangles,
    ring_mask,
    sample_sources,
    write_pgm,
)
from sparseica.metrics import mcc
from sparseica.support import function_support


class TestSampleSources:
    def test_nearly_uncorrelated(self):
        S, _ = sample_sources(4, 10000, seed=0)
        corr = np.corrcoef(S.T)
        off = corr[~np.eye(4, dtype=bool)]
        assert np.max(np.abs(off)) < 0.05

    def test_variances_in_band(self):
        S, variances = sample_sources(5, 10000, seed=1)
        assert np.all(variances >= 0.5) and np.all(variances <= 3.0)
        sample_var = S.var(axis=0)
        assert np.all(sample_var > 0.4) and np.all(sample_var < 3.3)

    def test_deterministic(self):
        a, va = sample_sources(3, 100, seed=7)
        b, vb = sample_sources(3, 100, seed=7)
        assert np.array_equal(a, b) and np.array_equal(va, vb)

    def test_validates_arguments(self):
        with pytest.raises(ValueError):
            sample_sources(0, 10, seed=0)


class TestMasks:
    def test_structure_mask_validation(self):
        with pytest.raises(ValueError, match="parent"):
            StructureMask(np.array([[1, 0], [0, 0]]))
        with pytest.raises(ValueError, match="influence"):
            StructureMask(np.array([[1, 0], [1, 0]]))

    def test_ring_mask_satisfies_intersection_condition(self):
        for n in (3, 5, 8):
            for seed in (None, 0, 5):
                mask = ring_mask(n, seed=seed)
                assert mask.matrix.sum() == 2 * n
                assert np.all(mask.matrix.sum(axis=1) == 2)
                assert mask.ss_valid
                assert mask.primary is not None

    def test_random_intersection_mask(self):
        mask = random_intersection_mask(5, 4, seed=3)
        assert mask.ss_valid
        report = check_intersection_condition(mask.pattern())
        assert report.verdict


class TestGenSS:
    def test_identity_mask_gives_componentwise_monotone_maps(self):
        mask = StructureMask(np.eye(3), primary=np.arange(3))
        S, _ = sample_sources(3, 5000, seed=4)
        X, mlp = gen_ss(mask, S, seed=5)
        report = mcc(S, X, method="spearman")
        assert report.mcc > 0.999

    def test_sampled_jacobian_support_equals_mask(self):
        mask = ring_mask(4, seed=6)
        S, _ = sample_sources(4, 2000, seed=7)
        X, mlp = gen_ss(mask, S, seed=8)
        pts = [S[i] for i in range(256)]
        jacs = [mlp.jacobian(p) for p in pts]
        tol = 1e-9 * max(np.max(np.abs(J)) for J in jacs)
        support = function_support(mlp.jacobian, pts, tol)
        assert support.entries == mask.pattern().entries

    def test_all_ones_mask_rejected(self):
        with pytest.raises(GenerationError, match="intersection"):
            gen_ss(StructureMask(np.ones((3, 3))), np.zeros((10, 3)), seed=0)

    def test_deterministic(self):
        mask = ring_mask(3, seed=9)
        S, _ = sample_sources(3, 500, seed=10)
        X1, _ = gen_ss(mask, S, seed=11)
        X2, _ = gen_ss(mask, S, seed=11)
        assert np.array_equal(X1, X2)

    def test_empirical_invertibility_holds(self):
        mask = ring_mask(5, seed=12)
        S, _ = sample_sources(5, 2000, seed=13)
        X, mlp = gen_ss(mask, S, seed=14)
        dets = [abs(np.linalg.det(mlp.jacobian(S[i]))) for i in range(200)]
        assert min(dets) > 1e-6


class TestGenII:
    def test_pure_inversion_jacobian_closed_form(self):
        n = 3
        mix = MoebiusMixing(np.ones(n), np.eye(n), np.zeros(n), np.zeros(n),
                            1.0, True)
        s = np.array([0.6, -0.8, 0.0])  # unit norm
        J = mix.jacobian(s)
        expected = np.eye(n) - 2 * np.outer(s, s)
        np.testing.assert_allclose(J, expected, atol=1e-12)
        # conformal: columns orthogonal
        np.testing.assert_allclose(J.T @ J, np.eye(n) * (J[:, 0] @ J[:, 0]),
                                   atol=1e-12)

    def test_identity_parameters_give_scaled_sources(self):
        S, var = sample_sources(3, 500, seed=15)
        config = MoebiusConfig(invert=False, identity=True)
        X, mix, S_used = gen_ii(S, seed=16, config=config, variances=var)
        np.testing.assert_allclose(X, S_used * mix.scales, atol=1e-12)

    def test_equal_scales_refused(self):
        S, var = sample_sources(3, 500, seed=17)
        with pytest.raises(GenerationError, match="distinct"):
            gen_ii(S, seed=18, config=MoebiusConfig(scales=(1.0, 1.0, 1.0)),
                   variances=var)

    def test_orthogonality_statistic_below_threshold(self):
        S, var = sample_sources(4, 10000, seed=19)
        X, mix, S_used = gen_ii(S, seed=20, variances=var)
        pts = S_used[np.linspace(0, len(S_used) - 1, 256, dtype=int)]
        stat = jacobian_column_orthogonality(mix, pts)
        assert stat < 0.05

    def test_no_sample_at_the_pole(self):
        S, var = sample_sources(3, 10000, seed=21)
        X, mix, S_used = gen_ii(S, seed=22, variances=var)
        r = np.linalg.norm(S_used * mix.scales - mix.a, axis=1)
        assert r.min() >= 0.5 - 1e-12
        assert np.all(np.isfinite(X))

    def test_pole_evaluation_raises(self):
        mix = MoebiusMixing(np.ones(2), np.eye(2), np.zeros(2), np.zeros(2),
                            1.0, True)
        with pytest.raises(GenerationError, match="pole"):
            mix.jacobian(np.zeros(2))


class TestFlowGenerators:
    def test_vp_logdet_zero_by_finite_differences(self):
        S, _ = sample_sources(3, 500, seed=23)
        X, flow = gen_vp(S, seed=24)
        h = 1e-5
        for p in S[:10]:
            J = np.zeros((3, 3))
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                J[:, j] = (flow.forward(p + e) - flow.forward(p - e)) / (2 * h)
            assert abs(np.log(abs(np.linalg.det(J)))) < 1e-3

    def test_base_logdet_varies(self):
        S, _ = sample_sources(3, 500, seed=25)
        X, flow = gen_base(S, seed=26)
        lds = flow.log_det_jacobian(S[:50], "forward")
        assert np.std(lds) > 1e-3

    def test_both_invert_back_to_sources(self):
        S, _ = sample_sources(4, 300, seed=27)
        for gen in (gen_vp, gen_base):
            X, flow = gen(S, seed=28)
            assert np.max(np.abs(flow.inverse(X) - S)) < 1e-6


class TestTriangles:
    def test_zero_factors_match_reference_bitmap(self):
        img = render_triangles(np.zeros((1, 4)))[0]
        ref = read_pgm("tests/data/triangle_zero.pgm")
        assert np.array_equal(img, ref)

    def test_extreme_width_is_near_degenerate(self):
        img = render_triangles(np.array([[0.0, -3.0, 0.0, 0.0]]),
                               stds=np.ones(4) * 0.5)[0]
        assert int(np.sum(img < 255)) <= 40

    def test_identical_rows_render_identically(self):
        factors = np.array([[0.3, -0.2, 0.5, 0.1], [0.3, -0.2, 0.5, 0.1]])
        imgs = render_triangles(factors)
        assert np.array_equal(imgs[0], imgs[1])

    def test_pgm_round_trip(self, tmp_path):
        img = render_triangles(np.array([[0.5, 0.2, -0.4, 0.9]]))[0]
        path = tmp_path / "t.pgm"
        write_pgm(path, img)
        assert np.array_equal(read_pgm(path), img)

    def test_gray_level_changes_with_factor(self):
        dark = render_triangles(np.array([[0.0, 0.0, 0.0, -2.0]]))[0]
        light = render_triangles(np.array([[0.0, 0.0, 0.0, 2.0]]))[0]
        assert dark.min() < light[light < 255].min()


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        ds = generate_dataset("ss", n=4, k=200, seed=30)
        ds.save(tmp_path / "d")
        loaded = Dataset.load(tmp_path / "d")
        np.testing.assert_allclose(loaded.sources, ds.sources, rtol=1e-15)
        np.testing.assert_allclose(loaded.observations, ds.observations,
                                   rtol=1e-15)
        assert loaded.generator == "ss"
        assert np.array_equal(loaded.mask, ds.mask)
        assert loaded.k == 200

    def test_csv_headers(self, tmp_path):
        ds = generate_dataset("vp", n=3, k=50, seed=31)
        ds.save(tmp_path / "d")
        src_header = (tmp_path / "d" / "sources.csv").read_text().splitlines()[0]
        obs_header = (tmp_path / "d" / "observations.csv").read_text().splitlines()[0]
        assert src_header == "s1,s2,s3"
        assert obs_header == "x1,x2,x3"

    def test_meta_contents(self, tmp_path):
        ds = generate_dataset("base", n=3, k=50, seed=32)
        ds.save(tmp_path / "d")
        meta = json.loads((tmp_path / "d" / "meta.json").read_text())
        assert meta["generator"] == "base"
        assert meta["n"] == 3 and meta["m"] == 3 and meta["k"] == 50
        assert len(meta["variances"]) == 3

    def test_generation_deterministic_end_to_end(self, tmp_path):
        a = generate_dataset("ii", n=3, k=500, seed=33)
        b = generate_dataset("ii", n=3, k=500, seed=33)
        assert np.array_equal(a.observations, b.observations)
        assert np.array_equal(a.sources, b.sources)
