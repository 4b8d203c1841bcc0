"""Shared fixtures: reference arrival processes and service sets."""

from __future__ import annotations

import numpy as np
import pytest

from dmapqueue import arrival, services


@pytest.fixture(scope="session")
def three_phase_dmap():
    """Three-phase arrival process used by the correlated-arrivals case."""
    C = [
        [0.30, 0.10, 0.15],
        [0.35, 0.05, 0.20],
        [0.15, 0.10, 0.15],
    ]
    D = [
        [0.10, 0.25, 0.10],
        [0.20, 0.15, 0.05],
        [0.45, 0.05, 0.10],
    ]
    return arrival.validate(C, D)


@pytest.fixture(scope="session")
def three_phase_services():
    """Phase-type service laws for batch sizes 6..10."""
    specs = {
        6: dict(
            beta=[0.3, 0.4, 0.3],
            T=[[0.7, 0.2, 0.1], [0.2, 0.6, 0.1], [0.1, 0.0, 0.8]],
        ),
        7: dict(
            beta=[0.5, 0.3, 0.2],
            T=[[0.7, 0.1, 0.1], [0.1, 0.7, 0.1], [0.1, 0.2, 0.6]],
        ),
        8: dict(
            beta=[0.4, 0.2, 0.4],
            T=[[0.8, 0.0, 0.1], [0.1, 0.6, 0.1], [0.0, 0.1, 0.8]],
        ),
        9: dict(
            beta=[0.25, 0.25, 0.25, 0.25],
            T=[
                [0.4, 0.0, 0.0, 0.5],
                [0.0, 0.7, 0.2, 0.0],
                [0.0, 0.0, 0.5, 0.3],
                [0.2, 0.1, 0.0, 0.6],
            ],
        ),
        10: dict(
            beta=[0.3, 0.1, 0.2, 0.4],
            T=[
                [0.6, 0.0, 0.0, 0.3],
                [0.0, 0.6, 0.1, 0.0],
                [0.0, 0.0, 0.5, 0.2],
                [0.1, 0.1, 0.0, 0.7],
            ],
        ),
    }
    return {r: services.make_service("phase", **kw) for r, kw in specs.items()}


@pytest.fixture(scope="session")
def second_dmap():
    """Second reference arrival process (three phases, higher load)."""
    C = [
        [0.40, 0.10, 0.05],
        [0.25, 0.05, 0.30],
        [0.10, 0.15, 0.15],
    ]
    D = [
        [0.15, 0.20, 0.10],
        [0.15, 0.20, 0.05],
        [0.05, 0.45, 0.10],
    ]
    return arrival.validate(C, D)


@pytest.fixture(scope="session")
def three_phase_chain(three_phase_dmap, three_phase_services):
    """Full solve of the correlated-arrivals case up to the departure law."""
    from dmapqueue import departure, roots

    a, b = 6, 10
    gfs = {
        r: services.build_rational_gf(three_phase_dmap, three_phase_services[r], r)
        for r in range(a, b + 1)
    }
    cs = roots.build_characteristic(gfs[b], b)
    rs = roots.find_roots(cs)
    bu = departure.solve_boundary_unknowns(cs, rs, gfs, three_phase_dmap, a)
    dep = departure.extract_departure_distribution(
        bu, cs, rs, three_phase_dmap, three_phase_services, gfs, a
    )
    return {
        "a": a,
        "b": b,
        "dmap": three_phase_dmap,
        "services": three_phase_services,
        "gfs": gfs,
        "cs": cs,
        "roots": rs,
        "bu": bu,
        "dep": dep,
    }


def random_dmap(rng: np.random.Generator, m: int, theta: float = 1.0):
    """Random irreducible arrival pair with strictly positive entries."""
    P = rng.uniform(0.1, 1.0, size=(m, m))
    P /= P.sum(axis=1, keepdims=True)
    split = rng.uniform(0.1, 0.9, size=(m, m))
    D = theta * split * P
    C = P - D
    return arrival.validate(C, D)
