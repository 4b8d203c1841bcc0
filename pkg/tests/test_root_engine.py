"""Characteristic system construction and root classification."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import random_dmap
from dmapqueue import arrival, roots, services
from dmapqueue.errors import RootCountMismatch


def scalar_model(mu: float = 0.5, p: float = 0.3):
    dmap = arrival.validate([[1.0 - p]], [[p]])
    svc = services.make_service("geometric", mu=mu)
    gf = services.build_rational_gf(dmap, svc, 1)
    return dmap, svc, gf


class TestScalarClosedForm:
    """Single phase, unit batch, geometric service has a quadratic kernel."""

    def test_kernel_coefficients(self):
        _, _, gf = scalar_model()
        cs = roots.build_characteristic(gf, 1)
        # x (0.65 - 0.15 x) - (0.35 + 0.15 x), ascending powers
        np.testing.assert_allclose(cs.upsilon, [-0.35, 0.5, -0.15], atol=1e-14)

    def test_root_locations(self):
        _, _, gf = scalar_model()
        cs = roots.build_characteristic(gf, 1)
        rs = roots.find_roots(cs)
        np.testing.assert_allclose(np.sort_complex(rs.inside), [1.0], atol=1e-12)
        np.testing.assert_allclose(rs.outside, [7.0 / 3.0], atol=1e-12)


@pytest.fixture(scope="module")
def char_system(three_phase_dmap, three_phase_services):
    gf = services.build_rational_gf(three_phase_dmap, three_phase_services[10], 10)
    return roots.build_characteristic(gf, 10)


class TestThreePhaseSystem:
    def test_unit_disk_root_count(self, char_system):
        rs = roots.find_roots(char_system)
        assert len(rs.inside) == char_system.m * char_system.b == 30
        assert np.min(np.abs(rs.inside - 1.0)) < 1e-9
        assert np.all(np.abs(rs.outside) > 1.0)

    def test_roots_solve_the_kernel(self, char_system):
        rs = roots.find_roots(char_system)
        assert rs.residuals_inside.max() < 1e-9
        assert rs.residuals_outside.max() < 1e-9

    def test_conjugate_pairing(self, char_system):
        rs = roots.find_roots(char_system)
        for z in rs.inside:
            if abs(z.imag) > 0:
                assert np.min(np.abs(rs.inside - np.conj(z))) < 1e-12

    def test_kernel_vanishes_at_one(self, char_system):
        val = np.polyval(char_system.upsilon[::-1], 1.0)
        assert abs(val) < 1e-8 * np.abs(char_system.upsilon).sum()

    def test_kernel_matches_direct_determinant(self, char_system):
        # the fraction-free elimination must agree with a dense determinant
        rng = np.random.default_rng(7)
        for _ in range(6):
            x = complex(rng.uniform(-1.4, 1.4), rng.uniform(-0.8, 0.8))
            W = sum(
                char_system.W[k] * x**k for k in range(char_system.W.shape[0])
            )
            direct = np.linalg.det(W)
            via_poly = np.polyval(char_system.upsilon[::-1], x)
            assert abs(direct - via_poly) <= 1e-8 * max(1.0, abs(direct))


def _random_service(rng: np.random.Generator):
    kind = rng.integers(0, 4)
    if kind == 0:
        return services.make_service("geometric", mu=rng.uniform(0.5, 0.9))
    if kind == 1:
        return services.make_service("deterministic", slots=int(rng.integers(1, 4)))
    if kind == 2:
        pmf = rng.uniform(0.1, 1.0, size=3)
        pmf /= pmf.sum()
        return services.make_service("pmf", values=pmf.tolist())
    T = np.diag(rng.uniform(0.1, 0.6, size=2))
    T[0, 1] = rng.uniform(0.05, 0.3)
    beta = rng.uniform(0.2, 1.0, size=2)
    beta /= beta.sum()
    return services.make_service("phase", beta=beta.tolist(), T=T.tolist())


class TestRandomStableInstances:
    def test_root_count_always_m_times_b(self):
        rng = np.random.default_rng(20240817)
        done = 0
        while done < 25:
            m = int(rng.integers(1, 4))
            b = int(rng.integers(1, 6))
            dmap = random_dmap(rng, m, theta=rng.uniform(0.3, 0.9))
            svc = _random_service(rng)
            if services.stability_ratio(dmap, svc, b) >= 0.95:
                continue
            gf = services.build_rational_gf(dmap, svc, b)
            rs = roots.find_roots(roots.build_characteristic(gf, b))
            assert len(rs.inside) == m * b
            assert np.min(np.abs(rs.inside - 1.0)) < 1e-8
            done += 1


class TestOverloadedSystem:
    def test_excess_load_breaks_the_count(self):
        dmap = arrival.validate([[0.2]], [[0.8]])
        svc = services.make_service("geometric", mu=0.1)  # mean 10 slots
        assert services.stability_ratio(dmap, svc, 1) > 1.0
        gf = services.build_rational_gf(dmap, svc, 1)
        with pytest.raises(RootCountMismatch):
            roots.find_roots(roots.build_characteristic(gf, 1))
