import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcinverse.errors import ConfigurationError, ShapeError
from bcinverse.geometry import DomainSpec, SpeedField, distance_table
from bcinverse.influence import (BoundarySubset, as_profile, domain_of_influence, r_gamma_tau,
                                 shell_volume, simple_approximation, simple_levels,
                                 write_influence_csv, write_influence_json)

profile_values = st.floats(0.0, 1.2, allow_nan=False)


@pytest.fixture(scope="module")
def c_line():
    return SpeedField.constant(DomainSpec.interval(resolution=100))


@pytest.fixture(scope="module")
def c_disk():
    return SpeedField.constant(DomainSpec.disk(resolution=40, boundary_resolution=16))


class TestBoundarySubset:
    def test_sorted_and_deduplicated(self):
        g = BoundarySubset((3, 1, 3), 5)
        assert g.indices == (1, 3)
        np.testing.assert_array_equal(g.indicator(), [0, 1, 0, 1, 0])
        assert not g.is_whole

    def test_empty_rejected(self):
        with pytest.raises(ConfigurationError):
            BoundarySubset((), 4)

    def test_out_of_range_rejected(self):
        with pytest.raises(ConfigurationError):
            BoundarySubset((4,), 4)

    def test_whole(self, c_line):
        assert BoundarySubset.of(c_line).is_whole


def test_profile_broadcast_and_shape():
    np.testing.assert_array_equal(as_profile(0.5, 3), [0.5, 0.5, 0.5])
    with pytest.raises(ShapeError):
        as_profile([1.0, 2.0], 3)
    with pytest.raises(ConfigurationError):
        as_profile([np.nan, 1.0], 2)


class TestIntervalVolumes:
    def test_sum_of_two_fronts(self, c_line):
        res = domain_of_influence(c_line, BoundarySubset.of(c_line), [0.3, 0.2])
        # nodes at x <= 0.3 and x >= 0.8, trapezoid weights
        assert res.volume_closed == pytest.approx(0.3 + 0.2 + 0.01)
        assert res.volume_open == pytest.approx(0.3 + 0.2 - 0.01)
        assert res.gap == pytest.approx(0.02)

    def test_overlap_fills_domain(self, c_line):
        res = domain_of_influence(c_line, BoundarySubset.of(c_line), [0.7, 0.7])
        assert res.volume_closed == pytest.approx(1.0)

    def test_one_sided(self, c_line):
        gamma = BoundarySubset.of(c_line, [0])
        res = domain_of_influence(c_line, gamma, [0.4, 5.0])
        assert res.volume_closed == pytest.approx(0.4 + 0.005)

    def test_zero_profile(self, c_line):
        res = domain_of_influence(c_line, BoundarySubset.of(c_line), 0.0)
        # only the boundary nodes themselves
        assert res.volume_open == 0.0
        assert res.volume_closed == pytest.approx(0.01)

    def test_speed_scaling(self):
        c2 = SpeedField.constant(DomainSpec.interval(resolution=100), 2.0)
        res = domain_of_influence(c2, BoundarySubset.of(c2), [0.1, 0.1])
        # each front reaches 0.2 in length, natural measure c^-2 dx
        assert res.volume_closed == pytest.approx((0.4 + 0.01) / 4)

    def test_r_field_values(self, c_line):
        r = r_gamma_tau(c_line, BoundarySubset.of(c_line), [0.3, 0.2])
        x = c_line.interior.points[:, 0]
        np.testing.assert_allclose(r, np.minimum(x - 0.3, 1 - x - 0.2), atol=1e-12)

    def test_gamma_mismatch(self, c_line):
        with pytest.raises(ShapeError):
            r_gamma_tau(c_line, BoundarySubset.whole(3), 0.1)


@settings(max_examples=40, deadline=None)
@given(profile_values, profile_values, profile_values, profile_values)
def test_monotone_in_tau(c_line, a0, a1, b0, b1):
    gamma = BoundarySubset.of(c_line)
    lo = np.minimum([a0, a1], [b0, b1])
    hi = np.maximum([a0, a1], [b0, b1])
    r_lo = domain_of_influence(c_line, gamma, lo)
    r_hi = domain_of_influence(c_line, gamma, hi)
    assert np.all(r_lo.closed <= r_hi.closed)
    assert r_lo.volume_closed <= r_hi.volume_closed + 1e-15
    assert r_hi.volume_open <= r_hi.volume_closed


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.0, 2.0), min_size=16, max_size=16))
def test_disk_open_inside_closed(c_disk, values):
    res = domain_of_influence(c_disk, BoundarySubset.of(c_disk), values)
    assert np.all(res.open <= res.closed)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4))
def test_gamma_monotone(c_disk, values):
    tau = np.zeros(16)
    tau[:4] = values
    small = domain_of_influence(c_disk, BoundarySubset.of(c_disk, [0, 1]), tau)
    large = domain_of_influence(c_disk, BoundarySubset.of(c_disk, [0, 1, 2, 3]), tau)
    assert small.volume_closed <= large.volume_closed + 1e-15


def test_disk_volume_centre_ball(c_disk):
    # every boundary point reaching distance 0.5 covers the annulus 0.5 <= |x| <= 1
    res = domain_of_influence(c_disk, BoundarySubset.of(c_disk), 0.5)
    assert res.volume_closed == pytest.approx(np.pi * (1 - 0.25), rel=0.1)


def test_shell_volume(c_line):
    gamma = BoundarySubset.of(c_line)
    # width off the node lattice: five nodes per front
    assert shell_volume(c_line, gamma, [0.3, 0.2], 0.025) == pytest.approx(0.10)


class TestSimpleApproximation:
    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0.0, 3.0), min_size=6, max_size=6),
           st.floats(1e-3, 0.5))
    def test_strictly_between(self, values, eps):
        tau = np.asarray(values)
        gamma = BoundarySubset.whole(6)
        s = simple_approximation(tau, gamma, eps)
        assert np.all(s < tau)
        assert np.all(s > tau - eps)
        assert simple_levels(s, gamma) <= len(np.unique(np.round(tau / (eps / 2)))) + 2

    def test_outside_gamma_untouched(self):
        tau = np.array([1.0, 2.0, 3.0])
        s = simple_approximation(tau, BoundarySubset((0, 2), 3), 0.1)
        assert s[1] == 2.0

    def test_finitely_many_levels(self):
        tau = np.linspace(0, 1, 1001)
        s = simple_approximation(tau, BoundarySubset.whole(1001), 0.1)
        assert simple_levels(s, BoundarySubset.whole(1001)) <= 2 / 0.1 + 2

    def test_eps_positive(self):
        with pytest.raises(ConfigurationError):
            simple_approximation([1.0], BoundarySubset.whole(1), 0.0)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.0, 2.0), min_size=16, max_size=16))
def test_r_is_lipschitz(c_disk, values):
    r = r_gamma_tau(c_disk, BoundarySubset.of(c_disk), values)
    rng = np.random.default_rng(0)
    i, j = rng.integers(0, r.size, (2, 200))
    # against the metric through a boundary node, an upper bound for d(x, x')
    via = np.min(distance_table(c_disk)[:, i] + distance_table(c_disk)[:, j], axis=0)
    assert np.all(np.abs(r[i] - r[j]) <= via + 1e-12)


def test_r_is_lipschitz_1d(c_line):
    r = r_gamma_tau(c_line, BoundarySubset.of(c_line), [0.35, 0.1])
    h = 1 / 100
    assert np.abs(np.diff(r)).max() <= h * (1 + 1e-9)


def test_constant_tau(c_disk):
    r = r_gamma_tau(c_disk, BoundarySubset.of(c_disk), 0.4)
    np.testing.assert_allclose(r, distance_table(c_disk).min(axis=0) - 0.4, atol=1e-15)


def test_simple_approximations_converge_from_below(c_disk):
    gamma = BoundarySubset.of(c_disk)
    tau = 0.3 + 0.2 * np.cos(np.linspace(0, 2 * np.pi, 16, endpoint=False))
    target = domain_of_influence(c_disk, gamma, tau)
    vols = [domain_of_influence(c_disk, gamma, simple_approximation(tau, gamma, eps)).volume_closed
            for eps in (0.2, 0.1, 0.05, 0.0125, 1e-4)]
    assert np.all(np.asarray(vols) <= target.volume_closed + 1e-15)
    assert vols[-1] >= target.volume_open - 1e-15
    assert vols[-1] - vols[0] > 0.1 * target.volume_closed


def test_exports(tmp_path, c_line):
    gamma = BoundarySubset.of(c_line)
    res = domain_of_influence(c_line, gamma, [0.3, 0.2])
    write_influence_csv(tmp_path / "r.csv", c_line, res)
    write_influence_json(tmp_path / "r.json", res, [0.3, 0.2], gamma)
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == "node_id,x,r,closed,open"
    assert len(rows) == 102
    assert '"gap"' in (tmp_path / "r.json").read_text()
