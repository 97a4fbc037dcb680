import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcinverse.errors import ConfigurationError, InstabilityError, ReplayError, ShapeError
from bcinverse.forward import (ReplayDevice, SimulatedDevice, SolverSettings, SpaceTimeField,
                               WaveSolver, bandlimited_source, measure, pulse_source,
                               read_trace_csv, simulate, smooth_bump, write_trace_csv)
from bcinverse.geometry import DomainSpec, SpeedField

seeds = st.integers(0, 2**31 - 1)


@pytest.fixture(scope="module")
def c_var():
    return SpeedField.smooth_bump(DomainSpec.interval(resolution=100))


@pytest.fixture(scope="module")
def set_var(c_var):
    return SolverSettings.from_cfl(c_var, 1.0)


@pytest.fixture(scope="module")
def dev_step(c_var, set_var):
    return SimulatedDevice(c_var, set_var)


@pytest.fixture(scope="module")
def dev_conv(c_var, set_var):
    return SimulatedDevice(c_var, set_var, method="convolution")


class TestSpaceTimeField:
    def test_requires_even_steps(self):
        with pytest.raises(ShapeError):
            SpaceTimeField(np.zeros((4, 2)), 0.1)
        with pytest.raises(ShapeError):
            SpaceTimeField(np.zeros(5), 0.1)

    def test_rejects_nonfinite(self):
        v = np.zeros((5, 1))
        v[2, 0] = np.inf
        with pytest.raises(ShapeError):
            SpaceTimeField(v, 0.1)

    def test_grid_properties(self):
        f = SpaceTimeField.zeros(10, 3, 0.1)
        assert f.half_steps == 5
        assert f.T == pytest.approx(0.5)
        assert f.horizon == pytest.approx(1.0)
        assert f.values.flags.writeable is False

    def test_arithmetic_and_compatibility(self):
        f = SpaceTimeField.from_function(lambda t: t, 4, 2, 0.5)
        g = 2 * f - f
        np.testing.assert_array_equal(g.values, f.values)
        with pytest.raises(ShapeError):
            f + SpaceTimeField.zeros(4, 2, 0.25)

    def test_digest_depends_on_dt(self):
        a = SpaceTimeField.zeros(4, 2, 0.5)
        assert a.digest() == SpaceTimeField.zeros(4, 2, 0.5).digest()
        assert a.digest() != SpaceTimeField.zeros(4, 2, 0.25).digest()


class TestSettings:
    def test_cfl_limit(self, c_var):
        with pytest.raises(ConfigurationError):
            SolverSettings.from_cfl(c_var, 1.0, cfl=0.95)
        disk = SpeedField.constant(DomainSpec.disk(resolution=10))
        assert SolverSettings.from_cfl(disk, 1.0).cfl <= 0.9 / math.sqrt(2) + 1e-12

    def test_dt_must_divide_T(self, c_var):
        with pytest.raises(ConfigurationError):
            SolverSettings.from_dt(c_var, 1.0, 0.003)

    def test_from_cfl_divides(self, c_var, set_var):
        assert set_var.n_half * set_var.dt == pytest.approx(1.0)
        assert set_var.cfl <= 0.9 + 1e-12

    def test_solver_rejects_faster_medium(self, set_var):
        fast = SpeedField.constant(DomainSpec.interval(resolution=100), 3.0)
        with pytest.raises(ConfigurationError):
            WaveSolver(fast, set_var)


class TestSolver:
    def test_convolution_matches_timestepping(self, dev_step, dev_conv):
        rng = np.random.default_rng(0)
        f = bandlimited_source(dev_step.n_steps, 2, dev_step.dt, rng)
        a, b = dev_step.measure(f), dev_conv.measure(f)
        scale = np.abs(a.values).max()
        assert np.abs(a.values - b.values).max() <= 1e-10 * scale

    def test_zero_source_zero_trace(self, dev_step):
        assert not dev_step.measure(dev_step.zeros()).values.any()

    @settings(max_examples=10, deadline=None)
    @given(seeds, st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, dev_conv, seed, a, b):
        rng = np.random.default_rng(seed)
        f = bandlimited_source(dev_conv.n_steps, 2, dev_conv.dt, rng)
        g = bandlimited_source(dev_conv.n_steps, 2, dev_conv.dt, rng)
        lhs = dev_conv.measure(a * f + b * g).values
        rhs = a * dev_conv.measure(f).values + b * dev_conv.measure(g).values
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + np.abs(rhs).max()))

    def test_finite_speed_across_interval(self):
        c = SpeedField.constant(DomainSpec.interval(resolution=200))
        s = SolverSettings.from_cfl(c, 1.0)
        f = pulse_source(s.n_steps, 2, s.dt, 0.05, node=0)
        trace, _ = simulate(c, f, s)
        t = trace.times
        far = trace.values[:, 1]
        # leapfrog moves at most one cell per step, i.e. 1/0.9 times the true speed
        assert not far[t < 0.9 - 2 * s.dt].any()
        assert np.abs(far[t < 0.97]).max() <= 1e-3 * np.abs(far).max()
        assert np.abs(far[(t > 1.0) & (t < 1.05)]).max() > 0.1 * np.abs(far).max()

    def test_dalembert_trace(self):
        errors = []
        for res in (100, 200, 400):
            c = SpeedField.constant(DomainSpec.interval(resolution=res))
            s = SolverSettings.from_dt(c, 1.0, 0.8 / res)
            f = pulse_source(s.n_steps, 2, s.dt, 0.1, node=0)
            trace, _ = simulate(c, f, s)
            t = trace.times
            early = t < 1.9
            err = trace.values[early, 0] - np.minimum(t[early], 0.1)
            assert np.abs(err).max() <= 0.01
            errors.append(np.sqrt(np.mean(err ** 2)))
        assert errors[0] >= 2 * errors[1] and errors[1] >= 2 * errors[2]

    def test_snapshot_support(self):
        c = SpeedField.constant(DomainSpec.interval(resolution=200))
        s = SolverSettings.from_cfl(c, 0.5)
        f = pulse_source(s.n_steps, 2, s.dt, 0.1, node=0)
        _, snap = simulate(c, f, s)
        x = c.interior.points[:, 0]
        # exactly zero past the numerical cone, dispersive tail only near x = 0.5
        assert not snap[x > 0.5 / s.cfl + 2 / 200].any()
        assert np.abs(snap[x > 0.5 + 2 / 200]).max() <= 5e-3 * np.abs(snap).max()

    def test_energy_conserved_after_source(self):
        c = SpeedField.smooth_bump(DomainSpec.interval(resolution=100))
        s = SolverSettings.from_cfl(c, 1.0)
        f = SpaceTimeField.from_function(lambda t: smooth_bump(t, 0.0, 0.3), s.n_steps, 2, s.dt)
        res = WaveSolver(c, s).run(f, energy=True)
        quiet = res.energy[int(0.35 / s.dt):]
        assert quiet.max() > 0
        assert np.ptp(quiet) <= 1e-10 * quiet.max()

    def test_energy_conserved_disk(self):
        c = SpeedField.constant(DomainSpec.disk(resolution=20, boundary_resolution=16))
        s = SolverSettings.from_cfl(c, 0.5)
        f = SpaceTimeField.from_function(lambda t: smooth_bump(t, 0.0, 0.2), s.n_steps, 16, s.dt)
        e = WaveSolver(c, s).run(f, energy=True).energy
        quiet = e[int(0.25 / s.dt):]
        assert np.ptp(quiet) <= 1e-10 * quiet.max()

    def test_instability_detected(self, c_var):
        s = SolverSettings.from_cfl(c_var, 1.0)
        n = s.n_half
        object.__setattr__(s, "dt", 4 * s.dt)
        object.__setattr__(s, "T", n * s.dt)
        solver = WaveSolver(c_var, s, check_every=8)
        f = bandlimited_source(s.n_steps, 2, s.dt, np.random.default_rng(1))
        with pytest.raises(InstabilityError):
            solver.run(f)

    def test_source_shape_checked(self, dev_step):
        with pytest.raises(ShapeError):
            dev_step.measure(SpaceTimeField.zeros(8, 2, dev_step.dt))


class TestDevices:
    def test_counting(self, c_var, set_var):
        dev = SimulatedDevice(c_var, set_var, method="convolution")
        f = dev.zeros()
        measure(dev, f)
        dev.measure(f)
        dev.snapshot(f)
        assert dev.count == 2

    def test_snapshot_channel_can_be_disabled(self, c_var, set_var):
        dev = SimulatedDevice(c_var, set_var, verification=False)
        with pytest.raises(ConfigurationError):
            dev.snapshot(dev.zeros())

    def test_noise_reproducible(self, c_var, set_var):
        f = bandlimited_source(set_var.n_steps, 2, set_var.dt, np.random.default_rng(2))
        runs = [SimulatedDevice(c_var, set_var, noise_level=0.01, seed=7,
                                method="convolution").measure(f) for _ in range(2)]
        np.testing.assert_array_equal(runs[0].values, runs[1].values)
        clean = SimulatedDevice(c_var, set_var, method="convolution").measure(f)
        rel = np.sqrt(np.mean((runs[0].values - clean.values) ** 2) / np.mean(clean.values ** 2))
        assert rel == pytest.approx(0.01, rel=0.1)

    def test_record_and_replay(self, tmp_path, c_var, set_var):
        rec = SimulatedDevice(c_var, set_var, record_dir=tmp_path, method="convolution")
        f = bandlimited_source(set_var.n_steps, 2, set_var.dt, np.random.default_rng(3))
        trace = rec.measure(f)
        replay = ReplayDevice.like(rec, tmp_path)
        np.testing.assert_array_equal(replay.measure(f).values, trace.values)
        with pytest.raises(ReplayError):
            replay.measure(2.0 * f)

    def test_replay_requires_directory(self, tmp_path, dev_step):
        with pytest.raises(ConfigurationError):
            ReplayDevice.like(dev_step, tmp_path / "missing")


def test_trace_csv_round_trip(tmp_path):
    f = bandlimited_source(20, 3, 0.05, np.random.default_rng(4))
    write_trace_csv(tmp_path / "t.csv", f)
    back = read_trace_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.values, f.values)
    assert back.dt == pytest.approx(f.dt, rel=1e-14)
    assert (tmp_path / "t.csv").read_text().startswith("t,boundary_node_id,value\n")


def test_trace_csv_malformed(tmp_path):
    (tmp_path / "t.csv").write_text("t,boundary_node_id,value\n0,0,1\n0,1\n")
    with pytest.raises(ConfigurationError):
        read_trace_csv(tmp_path / "t.csv")


def test_pulse_integral():
    f = pulse_source(40, 1, 0.01, 0.123)
    v = f.values[:, 0]
    assert 0.01 * (v.sum() - 0.5 * v[0]) == pytest.approx(0.123)
    assert v[0] == 1.0 and v[11] == 1.0 and v[12] == pytest.approx(0.8) and v[13] == 0


def test_smooth_bump_support():
    t = np.linspace(-1, 2, 301)
    b = smooth_bump(t, 0.0, 1.0)
    assert not b[(t <= 0) | (t >= 1)].any()
    assert b.max() == pytest.approx(1.0, abs=1e-3)
