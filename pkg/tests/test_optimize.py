"""Density update, change-count trigger and the optimization loop."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbadjoint.optimize import (
    OfflineArtifacts,
    OptConfig,
    adaptive_model_select,
    count_changed,
    harvest_samples,
    initial_density,
    optimize,
    update_density,
)
from rbadjoint.rom import ReducedBasis, pod


class TestTrigger:
    def test_identical_designs_use_reduced(self):
        b = np.full(100, 0.5)
        assert adaptive_model_select(b, b.copy(), 0.1, 0.05) == "reduced"

    def test_six_changes_exceed_five(self):
        prev = np.full(100, 0.5)
        b = prev.copy()
        b[:6] += 0.2
        assert count_changed(b, prev, 0.1) == 6
        assert adaptive_model_select(b, prev, 0.1, 0.05) == "full"

    def test_boundary_is_inclusive(self):
        prev = np.full(100, 0.5)
        b = prev.copy()
        b[:5] += 0.2
        assert adaptive_model_select(b, prev, 0.1, 0.05) == "reduced"

    def test_change_equal_to_threshold_counts(self):
        assert count_changed(np.array([0.5]), np.array([0.25]), 0.25) == 1

    def test_first_iteration_is_full(self):
        assert adaptive_model_select(np.zeros(4), None, 0.1, 0.5) == "full"

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            adaptive_model_select(np.zeros(3), np.zeros(4), 0.1, 0.1)

    @given(st.integers(1, 200), st.integers(0, 2**16))
    def test_zero_eps2_requires_no_change(self, n, seed):
        rng = np.random.default_rng(seed)
        prev = rng.uniform(0, 1, n)
        b = np.clip(prev + rng.normal(0, 0.1, n), 0, 1)
        expected = "full" if count_changed(b, prev, 0.1) >= 1 else "reduced"
        assert adaptive_model_select(b, prev, 0.1, 0.0) == expected


class TestConfig:
    @pytest.mark.parametrize("kw", [{"volume_fraction": 0.0}, {"volume_fraction": 1.0}, {"eps1": 0.0},
                                    {"eps2": 1.0}, {"max_iterations": -1}, {"move_limit": 0.0},
                                    {"estimator": "oracle"}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            OptConfig(**kw)


class TestUpdate:
    def test_zero_gradient_no_move(self):
        b = np.full(10, 0.4)
        out = update_density(b, np.zeros(10), np.full(10, 0.1), OptConfig(), constraint=lambda x: x.mean() - 0.5)
        np.testing.assert_allclose(out, b, atol=1e-12)

    def test_active_constraint_hits_volume(self, rng):
        b = np.full(50, 0.5)
        vol = lambda x: x.mean() - 0.5  # noqa: E731
        out = update_density(b, -rng.uniform(0.5, 1.5, 50), np.full(50, 1 / 50), OptConfig(), constraint=vol)
        assert vol(out) <= 0.0
        assert abs(vol(out)) <= 1e-6

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**16), st.floats(0.05, 0.5))
    def test_move_limit_and_box(self, seed, move):
        rng = np.random.default_rng(seed)
        b = rng.uniform(0, 1, 30)
        out = update_density(b, rng.normal(size=30), rng.uniform(0.01, 0.1, 30), OptConfig(move_limit=move),
                             constraint=lambda x: x.mean() - b.mean())
        assert np.all(np.abs(out - b) <= move + 1e-12)
        assert np.all((out >= 0) & (out <= 1))

    def test_non_finite_gradient(self):
        with pytest.raises(ValueError):
            update_density(np.zeros(2), np.array([np.nan, 0.0]), np.ones(2), OptConfig())


class TestLoop:
    def test_initial_design_is_feasible(self, make_cantilever):
        p = make_cantilever(8, 4, 4)
        for V in (0.3, 0.5, 0.7):
            b0 = initial_density(p, V)
            assert p.volume(b0) / p.total_volume == pytest.approx(V, abs=1e-12)

    def test_zero_iterations(self, make_cantilever):
        p = make_cantilever(8, 4, 4)
        hist, b = optimize(p, OptConfig(max_iterations=0))
        assert len(hist) == 0
        np.testing.assert_array_equal(b, initial_density(p, 0.5))

    @pytest.mark.parametrize("kind", ["mean_dynamic_compliance", "mean_strain_energy",
                                      "squared_target_displacement"])
    def test_full_order_run_improves_and_stays_feasible(self, kind, make_cantilever):
        p = make_cantilever(16, 8, 30, kind)
        hist, b = optimize(p, OptConfig(max_iterations=25))
        f = hist.column("objective")
        assert f[-1] < f[0]
        assert np.all(hist.column("volume") <= 0.5 * (1 + 1e-6))
        assert set(hist.column("model_used")) == {"full"}

    def test_rom_requires_basis(self, make_cantilever):
        p = make_cantilever(4, 2, 3)
        with pytest.raises(ValueError):
            optimize(p, OptConfig(use_rom=True))

    def test_zero_eps2_only_reduces_on_unchanged_designs(self, make_cantilever):
        p = make_cantilever(8, 4, 10)
        basis = pod(p.adjoint(p.analyze(np.full(32, 0.5))).vartheta.T, 3)
        hist, _ = optimize(p, OptConfig(max_iterations=8, use_rom=True, eps2=0.0, tol=0.0),
                           OfflineArtifacts(basis))
        for rec in hist.records:
            assert rec.model_used == ("full" if rec.n_changed > 0 or rec.iteration == 0 else "reduced")

    def test_reduced_branch_with_true_estimator(self, make_cantilever):
        p = make_cantilever(8, 4, 10)
        basis = ReducedBasis(np.eye(p.n_free))
        cfg = OptConfig(max_iterations=6, use_rom=True, eps1=0.5, eps2=0.5, estimator="true", tol=0.0)
        hist, _ = optimize(p, cfg, OfflineArtifacts(basis))
        models = hist.column("model_used")
        assert models[0] == "full" and "reduced" in models
        # identity basis: the reduced adjoint is exact
        assert np.nanmax(hist.column("estimated_error")) < 1e-8

    def test_callback_and_harvest(self, make_cantilever):
        p = make_cantilever(8, 4, 5)
        seen = []
        optimize(p, OptConfig(max_iterations=3, tol=0.0), callback=lambda rec, b: seen.append(rec.iteration))
        assert seen == [0, 1, 2]
        samples = harvest_samples(p, OptConfig(), n_samples=4, n_iterations=10, skip_initial=2)
        assert len(samples) == 4
        assert all(s.shape == (32,) for s in samples)

    def test_harvest_starts_at_trigger(self, make_cantilever):
        p = make_cantilever(8, 4, 5)
        cfg = OptConfig()
        iterates = []
        _, final = optimize(p, OptConfig(max_iterations=30, tol=0.0), callback=lambda rec, b: iterates.append(b.copy()))
        iterates.append(final)
        first = next(k for k in range(1, len(iterates))
                     if adaptive_model_select(iterates[k], iterates[k - 1], cfg.eps1, cfg.eps2) == "reduced")
        samples = harvest_samples(p, cfg, n_samples=3, n_iterations=30, skip_initial=2)
        assert np.array_equal(samples[0], iterates[max(2, min(first, len(iterates) - 3))])
        skipped = harvest_samples(p, cfg, n_samples=3, n_iterations=30, skip_initial=2, start="skip")
        assert np.array_equal(skipped[0], iterates[2])

    def test_harvest_rejects_unknown_start(self, make_cantilever):
        with pytest.raises(ValueError, match="harvest start"):
            harvest_samples(make_cantilever(8, 4, 5), OptConfig(), 3, 5, start="late")

    def test_filtered_run(self, make_cantilever):
        p = make_cantilever(8, 4, 5)
        hist, _ = optimize(p, OptConfig(max_iterations=5, filter_radius=0.8))
        assert np.all(np.isfinite(hist.column("objective")))
        assert hist.column("volume")[-1] <= 0.5 * (1 + 1e-6)
