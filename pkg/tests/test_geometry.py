import math
import types

import numpy as np
import pytest

from spinodoid import geometry as geo


def bisect_erfinv(target, lo=-6.0, hi=6.0):
    """Independent inverse-erf oracle by bisection on math.erf."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if math.erf(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestStructureParams:
    def test_valid_construction(self):
        s = geo.StructureParams((20.0, 0.0, 60.0), 0.5)
        assert s.n_nonzero == 2

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            geo.StructureParams((0.0, 0.0, 0.0), 0.5)

    def test_forbidden_band_rejected(self):
        with pytest.raises(ValueError):
            geo.StructureParams((10.0, 0.0, 0.0), 0.5)

    def test_rho_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            geo.StructureParams((20.0, 0.0, 0.0), 0.2)
        with pytest.raises(ValueError):
            geo.StructureParams((20.0, 0.0, 0.0), 1.2)

    def test_closed_boundaries_accepted(self):
        geo.StructureParams((15.0, 90.0, 0.0), 1.0)

    def test_permuted(self):
        s = geo.StructureParams((20.0, 0.0, 60.0), 0.5)
        assert s.permuted((2, 0, 1)).theta == (60.0, 20.0, 0.0)


class TestThresholdLevel:
    def test_median(self):
        assert geo.threshold_level(0.5) == 0.0

    def test_against_bisection_oracle(self):
        for rho in (0.3, 0.35, 0.5, 0.72, 0.9, 0.999):
            expected = math.sqrt(2.0) * bisect_erfinv(2 * rho - 1)
            assert geo.threshold_level(rho) == pytest.approx(expected, abs=1e-12)

    def test_known_value_rho_03(self):
        assert geo.threshold_level(0.3) == pytest.approx(-0.5244, abs=1e-4)

    def test_standard_normal_cdf_of_one(self):
        rho = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))  # Phi(1)
        assert geo.threshold_level(rho) == pytest.approx(1.0, abs=1e-12)

    def test_monotone(self):
        grid = np.linspace(0.05, 0.95, 19)
        values = [geo.threshold_level(r) for r in grid]
        assert np.all(np.diff(values) > 0)

    def test_domain_errors(self):
        for rho in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(ValueError):
                geo.threshold_level(rho)


class TestWaveSampling:
    def test_single_cap_constraint_by_construction(self):
        s = geo.StructureParams((20.0, 0.0, 0.0), 0.5)
        dirs = geo.sample_wave_vectors(s, 2000, rng=0)
        assert np.all(np.abs(dirs[:, 0]) > math.cos(math.radians(20.0)))
        assert np.abs(np.linalg.norm(dirs, axis=1) - 1.0).max() < 1e-12

    def test_near_full_sphere_is_nearly_uniform(self):
        s = geo.StructureParams((89.9, 89.9, 89.9), 0.5)
        dirs = geo.sample_wave_vectors(s, 20000, rng=1)
        # acceptance region covers almost the whole sphere: mean ~ 0
        assert np.abs(dirs.mean(axis=0)).max() < 3.0 / math.sqrt(20000)

    def test_cap_occupancy_matches_area_oracle(self):
        # two disjoint double caps of equal area: occupancy 1/2 each within 3 sigma
        s = geo.StructureParams((30.0, 30.0, 0.0), 0.5)
        n = 100_000
        dirs = geo.sample_wave_vectors(s, n, rng=2)
        in_cap1 = np.abs(dirs[:, 0]) > math.cos(math.radians(30.0))
        sigma = math.sqrt(n * 0.25)
        assert abs(in_cap1.sum() - n / 2) < 3 * sigma

    def test_budget_exceeded_for_degenerate_cap(self):
        fake = types.SimpleNamespace(theta=(0.05, 0.0, 0.0))
        with pytest.raises(RuntimeError):
            geo.sample_wave_vectors(fake, 1, rng=3)

    def test_deterministic(self):
        s = geo.StructureParams((40.0, 0.0, 0.0), 0.5)
        a = geo.sample_wave_vectors(s, 100, rng=11)
        b = geo.sample_wave_vectors(s, 100, rng=11)
        assert np.array_equal(a, b)


class TestGrf:
    def test_single_wave_at_origin(self):
        waves = geo.WaveSet(directions=np.array([[1.0, 0.0, 0.0]]),
                            phases=np.array([0.0]), wavenumber=2 * math.pi)
        assert geo.evaluate_grf(np.zeros(3), waves) == pytest.approx(math.sqrt(2.0))

    def test_mean_and_variance(self):
        s = geo.StructureParams((30.0, 30.0, 30.0), 0.5)
        waves = geo.build_wave_set(s, n_waves=400, rng=4)
        pts = np.random.default_rng(5).uniform(0, 1, size=(100_000, 3))
        vals = geo.evaluate_grf(pts, waves)
        # analytic variance of the normalized cosine sum is exactly 1
        assert abs(vals.mean()) < 3.0 / math.sqrt(len(vals))
        assert abs(vals.var() - 1.0) < 0.1

    def test_determinism(self):
        s = geo.StructureParams((30.0, 0.0, 0.0), 0.5)
        w1 = geo.build_wave_set(s, n_waves=50, rng=6)
        w2 = geo.build_wave_set(s, n_waves=50, rng=6)
        x = np.array([0.21, 0.73, 0.11])
        assert geo.evaluate_grf(x, w1) == geo.evaluate_grf(x, w2)

    def test_grid_path_matches_direct_within_1e12(self):
        s = geo.StructureParams((25.0, 70.0, 0.0), 0.5)
        waves = geo.build_wave_set(s, n_waves=800, rng=7)
        n = 12
        field = geo.grf_on_grid(waves, n)
        centers = (np.arange(n) + 0.5) / n
        xx, yy, zz = np.meshgrid(centers, centers, centers, indexing="ij")
        pts = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)
        direct = geo.evaluate_grf(pts, waves).reshape(n, n, n)
        assert np.abs(field - direct).max() < 1e-12


class TestVoxelGrid:
    def test_extreme_volume_fraction(self):
        s = geo.StructureParams((30.0, 30.0, 30.0), 0.999)
        grid = geo.generate_voxel_grid(s, resolution=24, n_waves=300, rng=8)
        assert grid.solid_fraction() >= 0.99

    def test_solid_fraction_tracks_rho(self):
        s = geo.StructureParams((20.0, 20.0, 20.0), 0.5)
        grid = geo.generate_voxel_grid(s, resolution=64, n_waves=1500, rng=9)
        assert abs(grid.solid_fraction() - 0.5) < 0.05

    def test_determinism_bytes(self, tmp_path):
        s = geo.StructureParams((35.0, 55.0, 0.0), 0.6)
        g1 = geo.generate_voxel_grid(s, resolution=16, n_waves=200, rng=10)
        g2 = geo.generate_voxel_grid(s, resolution=16, n_waves=200, rng=10)
        assert np.array_equal(g1.phase, g2.phase)

    def test_volume_fraction_consistency_many(self):
        rng = np.random.default_rng(12)
        devs = []
        for _ in range(20):
            theta = np.zeros(3)
            m = rng.integers(1, 4)
            theta[:m] = rng.uniform(15.0, 90.0, size=m)
            rho = rng.uniform(0.3, 0.999)
            s = geo.StructureParams(tuple(theta), rho)
            grid = geo.generate_voxel_grid(s, resolution=64, n_waves=600,
                                           rng=int(rng.integers(2 ** 31)))
            devs.append(abs(grid.solid_fraction() - rho))
        assert np.mean(devs) < 0.05

    def test_axis_permutation_statistics(self):
        # permuting angles and grid axes leaves directional statistics alike
        def axis_correlation(grid):
            f = grid.phase.astype(float)
            f -= f.mean()
            var = (f * f).mean() or 1.0
            return np.array([(f * np.roll(f, 1, axis=ax)).mean() / var
                             for ax in range(3)])

        s = geo.StructureParams((70.0, 25.0, 0.0), 0.5)
        perm = (1, 2, 0)
        s_perm = s.permuted(perm)
        g = geo.generate_voxel_grid(s, resolution=32, n_waves=800, rng=13)
        g_same = geo.generate_voxel_grid(s, resolution=32, n_waves=800, rng=14)
        g_perm = geo.generate_voxel_grid(s_perm, resolution=32, n_waves=800, rng=15)
        corr = axis_correlation(g)
        noise = np.abs(corr - axis_correlation(g_same)).max()
        # axis i of the permuted structure behaves like axis perm[i] originally
        diff = np.abs(corr[list(perm)] - axis_correlation(g_perm)).max()
        assert diff < max(3 * noise, 0.02)
        assert abs(g.solid_fraction() - g_perm.solid_fraction()) < 0.03


class TestSpnvFormat:
    def test_header_bytes_exact(self, tmp_path):
        phase = np.arange(8, dtype=np.uint8).reshape(2, 2, 2) % 2
        grid = geo.VoxelGrid(phase=phase)
        path = tmp_path / "g.spnv"
        grid.save(path)
        raw = path.read_bytes()
        assert raw[:4] == b"SPNV"
        assert raw[4:16] == (2).to_bytes(4, "little") * 3
        assert len(raw) == 16 + 8

    def test_round_trip_x_fastest(self, tmp_path):
        rng = np.random.default_rng(16)
        phase = (rng.uniform(size=(5, 4, 3)) < 0.5).astype(np.uint8)
        grid = geo.VoxelGrid(phase=phase)
        path = tmp_path / "g.spnv"
        grid.save(path)
        raw = path.read_bytes()
        # x index varies fastest in the payload
        assert raw[16] == phase[0, 0, 0]
        assert raw[17] == phase[1, 0, 0]
        assert raw[16 + 5] == phase[0, 1, 0]
        loaded = geo.VoxelGrid.load(path)
        assert np.array_equal(loaded.phase, phase)

    def test_truncated_rejected(self, tmp_path):
        phase = np.zeros((2, 2, 2), dtype=np.uint8)
        path = tmp_path / "g.spnv"
        geo.VoxelGrid(phase=phase).save(path)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(ValueError):
            geo.VoxelGrid.load(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "g.spnv"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(ValueError):
            geo.VoxelGrid.load(path)
