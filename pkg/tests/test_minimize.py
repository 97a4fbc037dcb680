import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcinverse import minimize as mz
from bcinverse.control import InnerProductWeights, apply_K, inner
from bcinverse.errors import ConfigurationError, CurvatureError
from bcinverse.forward import SimulatedDevice, SolverSettings
from bcinverse.geometry import DomainSpec, SpeedField
from bcinverse.influence import BoundarySubset, domain_of_influence
from bcinverse.minimize import (AlphaRecord, MinimizeReport, alpha_continuation, energy,
                                mask_for_device, projector_P, rhs, solve_normal_equation,
                                verify_theorem2, volume_estimate)


@pytest.fixture(scope="module")
def small():
    c = SpeedField.constant(DomainSpec.interval(resolution=50))
    return SimulatedDevice(c, SolverSettings.from_cfl(c, 1.0), method="convolution")


@pytest.fixture(scope="module")
def dense_K(small):
    """Matrix of ``K`` in the canonical basis of the space-time grid."""
    shape = (small.n_steps + 1, small.n_boundary)
    cols = []
    for i in range(np.prod(shape)):
        e = np.zeros(np.prod(shape))
        e[i] = 1.0
        cols.append(apply_K(small, small.field(e.reshape(shape))).values.ravel())
    return np.array(cols).T


class TestProjector:
    def test_slab(self):
        gamma = BoundarySubset.whole(2)
        m = projector_P(gamma, [0.5, 2.0], 1.0, 20, 0.1).mask
        t = np.arange(21) * 0.1
        np.testing.assert_array_equal(m[:, 0], (t >= 0.5 - 1e-12) & (t <= 1.0 + 1e-12))
        np.testing.assert_array_equal(m[:, 1], t <= 1.0 + 1e-12)

    def test_negative_and_outside_gamma(self):
        gamma = BoundarySubset((0,), 3)
        m = projector_P(gamma, [-0.1, 0.5, 0.5], 1.0, 20, 0.1)
        assert m.is_empty

    def test_idempotent(self, small, rng):
        mask = mask_for_device(small, BoundarySubset.whole(2), [0.3, 0.7])
        f = small.field(rng.standard_normal((small.n_steps + 1, 2)))
        np.testing.assert_array_equal(mask(mask(f)).values, mask(f).values)

    def test_rhs_supported_in_slab(self, small):
        mask = mask_for_device(small, BoundarySubset.whole(2), [0.3, 0.7])
        b = rhs(mask, small.dt)
        assert not b.values[~mask.mask].any()
        # b = T - t on the slab; I stops one step short of T, shifting by dt/2
        t = b.times
        inside = mask.mask[:, 1] & (t > small.dt) & (t < small.T - small.dt)
        np.testing.assert_allclose(b.values[inside, 1], small.T - small.dt / 2 - t[inside],
                                   atol=1e-12)


class TestSolver:
    def test_matches_dense_solve(self, small, dense_K):
        mask = mask_for_device(small, BoundarySubset.whole(2), [0.4, 0.6])
        alpha = 1e-2
        P = np.diag(mask.mask.ravel().astype(float))
        b = rhs(mask, small.dt).values.ravel()
        A = P @ dense_K @ P + alpha * np.eye(len(b))
        exact = np.linalg.solve(A, b)
        res = solve_normal_equation(small, mask, alpha, tol=1e-12)
        assert res.converged
        np.testing.assert_allclose(res.solution.values.ravel(), exact,
                                   atol=1e-8 * np.abs(exact).max())
        np.testing.assert_allclose(res.k_solution.values.ravel(), P @ dense_K @ P @ exact,
                                   atol=1e-8 * np.abs(exact).max())

    def test_dense_K_symmetric_psd(self, small, dense_K):
        w = InnerProductWeights.for_device(small).matrix.ravel()
        S = w[:, None] * dense_K
        assert np.abs(S - S.T).max() <= 1e-12 * np.abs(S).max()
        assert np.linalg.eigvalsh(0.5 * (S + S.T)).min() >= -1e-10 * np.abs(S).max()

    def test_measurement_budget(self, small):
        mask = mask_for_device(small, BoundarySubset.whole(2), [0.5, 0.5])
        cold = solve_normal_equation(small, mask, 1e-2, tol=1e-10)
        assert cold.measurements == 2 * cold.iterations
        warm = solve_normal_equation(small, mask, 1e-3, tol=1e-10, x0=cold.solution)
        assert warm.measurements == 2 * warm.iterations + 2

    def test_empty_slab(self, small):
        mask = mask_for_device(small, BoundarySubset.whole(2), [-1.0, -1.0])
        res = solve_normal_equation(small, mask, 1e-2)
        assert res.converged and res.iterations == 0 and res.measurements == 0
        assert volume_estimate(small, res.solution) == 0.0

    def test_curvature_error(self, small, monkeypatch):
        monkeypatch.setattr(mz, "apply_K", lambda device, f: f * -10.0)
        mask = mask_for_device(small, BoundarySubset.whole(2), [0.5, 0.5])
        with pytest.raises(CurvatureError):
            solve_normal_equation(small, mask, 1e-2)

    @pytest.mark.parametrize("kw", [dict(alpha=0.0), dict(alpha=1e-2, tol=0.0)])
    def test_bad_parameters(self, small, kw):
        mask = mask_for_device(small, BoundarySubset.whole(2), 0.5)
        with pytest.raises(ConfigurationError):
            solve_normal_equation(small, mask, **kw)


@pytest.fixture(scope="module")
def report(small):
    mask = mask_for_device(small, BoundarySubset.whole(2), [0.3, 0.5])
    return alpha_continuation(small, mask, (1e-1, 1e-2, 1e-3), tol=1e-10)


class TestContinuation:

    def test_volume_increases_energy_decreases(self, report):
        vols = [r.volume for r in report.records]
        energies = [r.energy for r in report.records]
        assert np.all(np.diff(vols) > 0)
        assert np.all(np.diff(energies) < 0)

    def test_volume_below_oracle(self, small, report):
        oracle = domain_of_influence(small.c, BoundarySubset.whole(2), [0.3, 0.5]).volume_closed
        assert report.volume < oracle
        assert abs(report.extrapolated_volume() - oracle) < oracle - report.volume

    def test_energy_consistent(self, small, report):
        rec = report.final
        w = InnerProductWeights.for_device(small)
        kf = apply_K(small, rec.minimizer)
        assert energy(rec.minimizer, kf, rec.alpha, w) == pytest.approx(rec.energy, rel=1e-8)
        assert volume_estimate(small, rec.minimizer, w) == pytest.approx(rec.volume, rel=1e-8)
        # at the minimiser the energy equals minus the volume-like term (f, b)
        b = rhs(mask_for_device(small, BoundarySubset.whole(2), [0.3, 0.5]), small.dt)
        assert rec.energy == pytest.approx(-inner(rec.minimizer, b, w), rel=1e-6)

    def test_interior_error_decreases(self, small, report):
        errs = [verify_theorem2(small, r.minimizer, BoundarySubset.whole(2), [0.3, 0.5])
                for r in report.records]
        assert errs[-1] < errs[0]

    def test_no_volume_drops(self, report):
        assert report.volume_drops() == []
        assert json.loads(report.to_json())["volume_drops"] == []

    def test_volume_drop_flagged(self):
        recs = [AlphaRecord(a, None, 0, 0.0, True, 0.0, v, 0)
                for a, v in ((1e-1, 0.5), (1e-2, 0.6), (1e-3, 0.597), (1e-4, 0.5))]
        assert MinimizeReport(recs, 0).volume_drops() == [3]

    def test_measurements_accounted(self, report):
        assert report.measurements == sum(r.measurements for r in report.records)

    def test_json(self, report):
        d = json.loads(report.to_json())
        assert d["alpha"] == [1e-1, 1e-2, 1e-3]
        assert len(d["volume"]) == 3

    @pytest.mark.parametrize("schedule", [(), (1e-2, 1e-1), (1e-1, -1.0)])
    def test_schedule_validation(self, small, schedule):
        mask = mask_for_device(small, BoundarySubset.whole(2), 0.5)
        with pytest.raises(ConfigurationError):
            alpha_continuation(small, mask, schedule)


def test_warm_start_saves_iterations(small):
    mask = mask_for_device(small, BoundarySubset.whole(2), [0.3, 0.5])
    schedule = (1e-1, 1e-2, 1e-3)
    warm = alpha_continuation(small, mask, schedule, tol=1e-8)
    cold = sum(solve_normal_equation(small, mask, a, tol=1e-8).iterations for a in schedule)
    assert sum(r.iterations for r in warm.records) <= cold


def test_single_alpha_schedule_is_direct_solve(small):
    mask = mask_for_device(small, BoundarySubset.whole(2), [0.3, 0.5])
    rep = alpha_continuation(small, mask, (1e-2,), tol=1e-10)
    direct = solve_normal_equation(small, mask, 1e-2, tol=1e-10)
    np.testing.assert_allclose(rep.final.minimizer.values, direct.solution.values, atol=1e-14)


def test_full_domain_volume(small):
    mask = mask_for_device(small, BoundarySubset.whole(2), small.T)
    rep = alpha_continuation(small, mask, (1e-2, 1e-3, 1e-4), tol=1e-9)
    # coarse grid: 3% short of the full volume (about 0.5% at 200 cells)
    assert rep.volume == pytest.approx(1.0, rel=0.04)
    assert verify_theorem2(small, rep.final.minimizer, BoundarySubset.whole(2), small.T) <= 0.1


def test_zero_duration_slab(small):
    f = small.zeros()
    assert verify_theorem2(small, f, BoundarySubset.whole(2), 0.0) == 0.0


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 1.0), st.floats(0.1, 1.0))
def test_extrapolation_exact_for_sqrt_law(m, C):
    recs = [AlphaRecord(a, None, 0, 0.0, True, 0.0, m - C * math.sqrt(a), 0)
            for a in (1e-2, 1e-3)]
    assert MinimizeReport(recs, 0).extrapolated_volume() == pytest.approx(m, rel=1e-9)
