"""Service laws, their transforms, and arrival-count coefficients."""

import numpy as np
import pytest

from dmapqueue import _poly, arrival, errors, services

from conftest import random_dmap


REFERENCE_MEANS = {6: 15.60, 7: 10.00, 8: 8.461538, 9: 8.678161, 10: 6.604651}


def test_phase_means_match_reference(three_phase_services):
    for r, want in REFERENCE_MEANS.items():
        got = services.mean_service_time(three_phase_services[r])
        assert got == pytest.approx(want, abs=1e-6)


def test_offered_load_reference(three_phase_dmap, three_phase_services):
    rho = services.stability_ratio(three_phase_dmap, three_phase_services[10], 10)
    assert rho == pytest.approx(0.313361, abs=1e-4)


def test_simple_kind_means():
    assert services.mean_service_time(services.make_service("geometric", mu=0.25)) == 4.0
    assert (
        services.mean_service_time(
            services.make_service("negative-binomial", stages=3, mu=0.5)
        )
        == 6.0
    )
    assert services.mean_service_time(services.make_service("deterministic", slots=7)) == 7.0
    pm = services.make_service("pmf", values=[0.25, 0.5, 0.25])
    assert services.mean_service_time(pm) == pytest.approx(2.0)


def test_pmf_of_reduced_kinds_match_direct_formulas():
    geo = services.make_service("geometric", mu=0.4)
    s = services.pmf_array(geo)
    k = np.arange(1, 8)
    assert np.allclose(s[1:8], 0.4 * 0.6 ** (k - 1), atol=1e-14)
    nb = services.make_service("negative-binomial", stages=2, mu=0.5)
    s2 = services.pmf_array(nb)
    # number of trials to the second success: (k-1) * mu^2 * (1-mu)^(k-2)
    k = np.arange(2, 10)
    assert np.allclose(s2[2:10], (k - 1) * 0.25 * 0.5 ** (k - 2), atol=1e-14)
    assert s2[1] == 0.0


def test_invalid_models_rejected():
    with pytest.raises(errors.NonStochastic):
        services.make_service("geometric", mu=0.0)
    with pytest.raises(errors.NonStochastic):
        services.make_service("pmf", values=[0.5, 0.4])
    with pytest.raises(errors.NegativeEntry):
        services.make_service("pmf", values=[1.5, -0.5])
    with pytest.raises(errors.SingularPhaseMatrix):
        services.make_service("phase", beta=[1.0], T=[[1.0]])
    with pytest.raises(errors.NonStochastic):
        services.make_service("phase", beta=[0.5, 0.5], T=[[0.9, 0.2], [0.1, 0.2]])


def test_transform_at_one_is_stochastic(three_phase_dmap, three_phase_services):
    for r, svc in three_phase_services.items():
        gf = services.build_rational_gf(three_phase_dmap, svc, r)
        A1 = gf.eval(1.0)
        assert np.allclose(A1.sum(axis=1), 1.0, atol=1e-10)
        assert np.all(A1 >= -1e-12)


def test_transform_mean_drift(three_phase_dmap, three_phase_services):
    pi, lam = arrival.stationary(three_phase_dmap)
    e = np.ones(three_phase_dmap.m)
    for r, svc in three_phase_services.items():
        gf = services.build_rational_gf(three_phase_dmap, svc, r)
        drift = float(pi @ gf.eval_deriv(1.0) @ e)
        assert drift == pytest.approx(lam * services.mean_service_time(svc), abs=1e-8)


def test_series_coefficients_match_count_matrices(three_phase_dmap, three_phase_services):
    svc = three_phase_services[6]
    gf = services.build_rational_gf(three_phase_dmap, svc, 6)
    acm = services.arrival_count_matrices(three_phase_dmap, svc)
    ser = _poly.series_from_rational(gf.X, gf.y, acm.n_max)
    assert np.max(np.abs(ser - acm.A)) < 1e-10


def test_count_matrices_mass_and_tail(three_phase_dmap, three_phase_services):
    acm = services.arrival_count_matrices(three_phase_dmap, three_phase_services[8])
    total = acm.A.sum(axis=0)
    assert np.allclose(total.sum(axis=1), 1.0, atol=1e-11)
    assert acm.tail_mass <= 1e-12
    assert np.all(acm.A >= 0.0)


def test_geometric_phase_route_matches_closed_form():
    rng = np.random.default_rng(11)
    d = random_dmap(rng, 2)
    mu = 0.35
    gf = services.build_rational_gf(d, services.make_service("geometric", mu=mu), 1)
    for x in (0.3, 0.9, 1.0, 1.7):
        z = arrival.one_slot_gf(d, x)
        direct = mu * z @ np.linalg.inv(np.eye(2) - (1.0 - mu) * z)
        assert np.allclose(gf.eval(x), direct, atol=1e-12)


def test_deterministic_transform_is_matrix_power(three_phase_dmap):
    K = 4
    gf = services.build_rational_gf(
        three_phase_dmap, services.make_service("deterministic", slots=K), 1
    )
    assert np.allclose(gf.y, [1.0])
    for x in (0.5, 1.0, 2.0):
        z = arrival.one_slot_gf(three_phase_dmap, x)
        assert np.allclose(gf.eval(x), np.linalg.matrix_power(z, K), atol=1e-12)


def test_count_matrices_zero_beyond_support(three_phase_dmap):
    svc = services.make_service("pmf", values=[0.5, 0.25, 0.25])
    acm = services.arrival_count_matrices(three_phase_dmap, svc)
    # at most one arrival per slot, so n cannot exceed the 3-slot support
    assert acm.n_max <= 3
    total = acm.A.sum(axis=0)
    assert np.allclose(total.sum(axis=1), 1.0, atol=1e-14)


def test_negative_binomial_reduction_agrees_with_pmf_route(three_phase_dmap):
    svc = services.make_service("negative-binomial", stages=2, mu=0.6)
    gf = services.build_rational_gf(three_phase_dmap, svc, 1)
    s = services.pmf_array(svc)
    for x in (0.4, 1.0):
        z = arrival.one_slot_gf(three_phase_dmap, x)
        direct = np.zeros((3, 3))
        zk = np.eye(3)
        for k in range(1, len(s)):
            zk = zk @ z
            direct += s[k] * zk
        assert np.allclose(gf.eval(x), direct, atol=1e-10)
