"""End-to-end acceptance checks.

Each test covers one acceptance criterion and prints a single
``ACCEPTANCE k: PASS|FAIL`` line on the real stdout, then fails with the
detailed list if anything missed its tolerance.
"""

import numpy as np
import pytest

from dmapqueue import arrival, cli, departure, epochs, oracles, roots, services


def _verdict(capsys, k: int, failures: list, notes: list | None = None):
    with capsys.disabled():
        print(f"\nACCEPTANCE {k}: {'FAIL' if failures else 'PASS'}")
        for line in notes or []:
            print(f"  note: {line}")
    if failures:
        pytest.fail("; ".join(failures))


def _expect(failures, label, value, target, tol):
    if not np.isfinite(value) or abs(value - target) > tol:
        failures.append(f"{label}: got {value:.8f}, want {target:.6f} +/- {tol:g}")


def _analytic_chain(dmap, svc_by_r, a, b):
    gfs = {
        r: services.build_rational_gf(dmap, svc_by_r[r], r) for r in range(a, b + 1)
    }
    cs = roots.build_characteristic(gfs[b], b)
    rs = roots.find_roots(cs)
    bu = departure.solve_boundary_unknowns(cs, rs, gfs, dmap, a)
    dep = departure.extract_departure_distribution(bu, cs, rs, dmap, svc_by_r, gfs, a)
    arb = epochs.arbitrary_epoch(dep, dmap, svc_by_r, a)
    pre = epochs.pre_arrival_epoch(arb, dmap)
    return {
        "gfs": gfs,
        "cs": cs,
        "roots": rs,
        "bu": bu,
        "dep": dep,
        "arb": arb,
        "pre": pre,
    }


def _random_arrival(rng, m, theta):
    P = rng.uniform(0.1, 1.0, size=(m, m))
    P /= P.sum(axis=1, keepdims=True)
    split = rng.uniform(0.2, 0.8, size=(m, m))
    return arrival.validate(P - theta * split * P, theta * split * P)


@pytest.fixture(scope="module")
def ex1_solution(three_phase_dmap, three_phase_services):
    cfg = cli.SolverConfig(
        dmap=three_phase_dmap,
        a=6,
        b=10,
        services_by_r=three_phase_services,
        eps_tail=1e-10,
        eps_root=1e-9,
        clamp=1e-8,
        epochs=("departure", "arbitrary", "prearrival"),
        rows=(0,),
        fmt="json",
    )
    return cli.run_analytic(cfg)


def test_acceptance_1_three_phase_dph_model_end_to_end(ex1_solution, capsys):
    sol = ex1_solution
    fails: list = []

    _expect(fails, "arrival rate", sol.arrival_rate, 0.474456, 1e-6)
    for i, t in enumerate((0.489130, 0.260869, 0.250000)):
        _expect(fails, f"phase weight {i}", sol.phase_weights[i], t, 1e-6)
    _expect(fails, "offered load", sol.load, 0.313361, 1e-4)

    dep = sol.dep
    _expect(fails, "departure cell (0, 6, 1)", dep.pi[0, 0, 0], 0.020431, 1e-4)
    _expect(fails, "departure cell (1, 6, 2)", dep.pi[1, 0, 1], 0.018175, 1e-4)
    _expect(fails, "departure cell (0, 10, 1)", dep.pi[0, 4, 0], 0.002786, 1e-4)
    _expect(
        fails, "departure column total (6, 1)", dep.pi[:, 0, 0].sum(), 0.273939, 1e-4
    )
    _expect(fails, "departure row mass at 0", dep.phi_marginal[0].sum(), 0.060079, 1e-4)

    arb = sol.arb
    _expect(fails, "slot-boundary idle cell (0, 1)", arb.p_idle[0, 0], 0.004053, 1e-4)
    _expect(fails, "slot-boundary cell (0, 6, 1)", arb.pi_busy[0, 0, 0], 0.034176, 1e-4)

    perf = sol.perf
    _expect(fails, "mean system length", perf.mean_system, 11.399998, 1e-3)
    _expect(fails, "mean queue length", perf.mean_queue, 6.164917, 1e-3)
    _expect(fails, "mean batch in service", perf.mean_in_service, 6.854090, 1e-3)
    _expect(fails, "idle probability", perf.p_idle, 0.236203, 1e-3)
    _expect(fails, "mean sojourn time", perf.mean_sojourn, 24.027487, 1e-3)
    _expect(fails, "mean waiting time", perf.mean_wait, 12.993639, 1e-3)

    _verdict(capsys, 1, fails)


def test_acceptance_2_three_phase_nb_model_partial(second_dmap, capsys):
    svc = {
        4: services.make_service("negative-binomial", stages=2, mu=2.0 / 3.0),
        5: services.make_service("negative-binomial", stages=2, mu=0.5),
        6: services.make_service("negative-binomial", stages=2, mu=6.0 / 17.0),
        7: services.make_service("negative-binomial", stages=2, mu=2.0 / 9.0),
    }
    fails: list = []
    for r, mean in ((4, 3.0), (5, 4.0), (6, 17.0 / 3.0), (7, 9.0)):
        got = services.mean_service_time(svc[r])
        if abs(got - mean) > 1e-12:
            fails.append(f"service mean for batch {r}: {got} != {mean}")

    cfg = cli.SolverConfig(
        dmap=second_dmap,
        a=4,
        b=7,
        services_by_r=svc,
        eps_tail=1e-10,
        eps_root=1e-9,
        clamp=1e-8,
        epochs=("departure", "arbitrary", "prearrival"),
        rows=(0,),
        fmt="json",
    )
    sol = cli.run_analytic(cfg)

    _expect(fails, "arrival rate", sol.arrival_rate, 0.469067, 1e-6)
    for i, t in enumerate((0.398305, 0.355932, 0.245762)):
        _expect(fails, f"phase weight {i}", sol.phase_weights[i], t, 1e-6)
    _expect(fails, "offered load", sol.load, 0.603087, 1e-5)

    perf = sol.perf
    contents = perf.mean_queue + perf.mean_in_service * perf.p_busy
    if abs(perf.mean_system - contents) > 1e-6:
        fails.append(
            f"queue+service identity off by {abs(perf.mean_system - contents):.3e}"
        )
    delay = perf.mean_system / perf.arrival_rate
    if abs(perf.mean_sojourn - delay) > 1e-6:
        fails.append(f"delay identity off by {abs(perf.mean_sojourn - delay):.3e}")

    notes = [
        f"mean system length {perf.mean_system:.6f} vs reference 3.012144 "
        f"(diff {perf.mean_system - 3.012144:+.6f}, informational)",
        f"mean queue length {perf.mean_queue:.6f} vs reference 1.553687 "
        f"(diff {perf.mean_queue - 1.553687:+.6f}, informational)",
        f"mean batch in service {perf.mean_in_service:.6f} vs reference 4.099194 "
        f"(diff {perf.mean_in_service - 4.099194:+.6f}, informational)",
        f"idle probability {perf.p_idle:.6f} vs reference 0.644208 "
        f"(diff {perf.p_idle - 0.644208:+.6f}, informational)",
    ]
    _verdict(capsys, 2, fails, notes)


def test_acceptance_3_unit_disk_root_counts_on_random_models(capsys):
    rng = np.random.default_rng(5150)
    kinds = ("geometric", "negative-binomial", "deterministic", "pmf", "phase")
    fails: list = []
    checked = 0
    attempts = 0
    while checked < 102 and attempts < 600:
        attempts += 1
        m = 1 + attempts % 3
        b = 1 + attempts % 5
        kind = kinds[attempts % len(kinds)]
        try:
            if kind == "geometric":
                svc = services.make_service("geometric", mu=rng.uniform(0.45, 0.8))
            elif kind == "negative-binomial":
                svc = services.make_service(
                    "negative-binomial", stages=2, mu=rng.uniform(0.55, 0.85)
                )
            elif kind == "deterministic":
                svc = services.make_service(
                    "deterministic", slots=int(rng.integers(1, 4))
                )
            elif kind == "pmf":
                vals = rng.uniform(0.05, 1.0, size=int(rng.integers(2, 5)))
                svc = services.make_service("pmf", values=vals / vals.sum())
            else:
                k = 2
                beta = rng.uniform(0.1, 1.0, size=k)
                T = rng.uniform(0.0, 0.5, size=(k, k))
                T *= 0.8 / max(1.0, T.sum(axis=1).max() / 0.9)
                svc = services.make_service("phase", beta=beta / beta.sum(), T=T)
            theta = rng.uniform(0.15, 0.7)
            dmap = _random_arrival(rng, m, theta)
            if services.stability_ratio(dmap, svc, b) >= 0.92:
                continue
            gf = services.build_rational_gf(dmap, svc, b)
            cs = roots.build_characteristic(gf, b)
            rs = roots.find_roots(cs)
        except Exception as exc:  # noqa: BLE001
            fails.append(f"attempt {attempts} ({kind}, m={m}, b={b}): {exc!r}")
            checked += 1
            continue
        if len(rs.inside) != m * b:
            fails.append(
                f"attempt {attempts} ({kind}, m={m}, b={b}): "
                f"{len(rs.inside)} unit-disk roots, want {m * b}"
            )
        if np.abs(rs.inside - 1.0).min() > 1e-7:
            fails.append(
                f"attempt {attempts} ({kind}, m={m}, b={b}): x=1 not among roots"
            )
        checked += 1
    if checked < 100:
        fails.append(f"only {checked} stable configurations reached")
    _verdict(capsys, 3, fails, [f"{checked} configurations checked"])


def _small_instance(rng, idx):
    m = 1 + idx % 2
    b = 1 + idx % 3
    a = 1 + (idx // 3) % b
    for _ in range(40):
        theta = rng.uniform(0.2, 0.6)
        dmap = _random_arrival(rng, m, theta)
        svc = {}
        for r in range(a, b + 1):
            vals = rng.uniform(0.05, 1.0, size=3)
            svc[r] = services.make_service("pmf", values=vals / vals.sum())
        if services.stability_ratio(dmap, svc[b], b) < 0.85:
            return dmap, svc, a, b
    raise RuntimeError("no stable draw found")


def test_acceptance_4_oracle_equivalence_on_small_instances(capsys):
    rng = np.random.default_rng(77)
    fails: list = []
    worst_tv = 0.0
    worst_z = 0.0
    for idx in range(20):
        dmap, svc, a, b = _small_instance(rng, idx)
        m = dmap.m
        sol = _analytic_chain(dmap, svc, a, b)
        dep, arb, pre = sol["dep"], sol["arb"], sol["pre"]

        tc = None
        for n_cap in (80, 160, 320, 640):
            try:
                tc = oracles.solve_truncated_chain(dmap, svc, a, b, n_cap, 3)
                break
            except oracles.CapTooSmall:
                continue
        if tc is None:
            fails.append(f"instance {idx}: queue cap insufficient at 640")
            continue

        nn = min(dep.n_trunc, tc.dep_pi.shape[0] - 1)
        tv_dep = 0.5 * (
            np.abs(tc.dep_pi[: nn + 1] - dep.pi[: nn + 1]).sum()
            + tc.dep_pi[nn + 1 :].sum()
            + dep.pi[nn + 1 :].sum()
        )
        nb = min(arb.n_trunc + 1, tc.pi_busy.shape[0])
        tv_arb = 0.5 * (
            np.abs(tc.p_idle - arb.p_idle).sum()
            + np.abs(tc.pi_busy[:nb] - arb.pi_busy[:nb]).sum()
            + tc.pi_busy[nb:].sum()
            + arb.pi_busy[nb:].sum()
        )
        worst_tv = max(worst_tv, tv_dep, tv_arb)
        if tv_dep > 1e-6:
            fails.append(f"instance {idx}: departure TV {tv_dep:.2e}")
        if tv_arb > 1e-6:
            fails.append(f"instance {idx}: slot-boundary TV {tv_arb:.2e}")

        sim = oracles.simulate(dmap, svc, a, b, 10_000_000, seed=1000 + idx)
        slots = sim.censused_slots
        # cells need enough expected hits for the error bars to mean
        # anything; below that the batch-means estimate is pure noise
        cells = 0
        far = 0
        far_max = 0.0
        for n in range(a):
            for i in range(m):
                p = arb.p_idle[n, i]
                se = sim.arb_se[n, 0, i]
                if p * slots < 25 or not np.isfinite(se) or se == 0:
                    continue
                cells += 1
                z = abs(sim.arb[n, 0, i] - p) / se
                if z > 3.0:
                    far += 1
                    far_max = max(far_max, z)
        for n in range(min(arb.n_trunc + 1, sim.arb.shape[0])):
            for j in range(b - a + 1):
                for i in range(m):
                    p = arb.pi_busy[n, j, i]
                    se = sim.arb_se[n, 1 + j, i]
                    if p * slots < 25 or not np.isfinite(se) or se == 0:
                        continue
                    cells += 1
                    z = abs(sim.arb[n, 1 + j, i] - p) / se
                    if z > 3.0:
                        far += 1
                        far_max = max(far_max, z)
        worst_z = max(worst_z, far_max)
        # with hundreds of simultaneous cells a correct simulator still
        # shows a ~0.5% rate of >3 sigma excursions; only an excess rate
        # or a gross outlier marks a real disagreement
        allowance = max(2, int(np.ceil(0.015 * cells)))
        if far > allowance:
            fails.append(
                f"instance {idx}: {far}/{cells} cells beyond 3 se "
                f"(allowance {allowance})"
            )
        if far_max > 5.0:
            fails.append(f"instance {idx}: cell at {far_max:.1f} se")
    notes = [
        f"worst oracle TV {worst_tv:.2e}",
        f"worst simulator excursion {worst_z:.2f} se" if worst_z else "no cells beyond 3 se",
    ]
    _verdict(capsys, 4, fails, notes)


def test_acceptance_5_structural_invariants(
    three_phase_chain, three_phase_dmap, three_phase_services, capsys
):
    fails: list = []
    ch = three_phase_chain
    dep = ch["dep"]
    arb = epochs.arbitrary_epoch(dep, three_phase_dmap, three_phase_services, ch["a"])
    pre = epochs.pre_arrival_epoch(arb, three_phase_dmap)
    out = epochs.outside_observer_epoch(arb)

    def mass(dist):
        return dist.p_idle.sum() + dist.pi_busy.sum()

    for name, total in (
        ("departure", dep.pi.sum()),
        ("slot-boundary", mass(arb)),
        ("pre-arrival", mass(pre)),
        ("outside-observer", mass(out)),
    ):
        if abs(total - 1.0) > 1e-9:
            fails.append(f"{name} mass {total:.12f}")

    marg_gap = np.abs(dep.phi_marginal - dep.pi.sum(axis=1)).max()
    if marg_gap > 1e-12:
        fails.append(f"queue marginal vs batch sum gap {marg_gap:.2e}")

    pf = dep.partial_fraction
    rng = np.random.default_rng(99)
    radius = 0.8 * np.abs(pf.alphas).min()
    for _ in range(6):
        x = radius * np.exp(2j * np.pi * rng.uniform()) * rng.uniform(0.3, 1.0)
        val = np.zeros(three_phase_dmap.m, dtype=complex)
        if pf.tau is not None:
            for p, row in enumerate(pf.tau):
                val += row * x**p
        for alpha, gamma in zip(pf.alphas, pf.gammas):
            val += gamma / (alpha - x)
        for alpha, gamma in zip(pf.alphas2, pf.gammas2):
            val += gamma / (alpha - x) ** 2
        direct = departure._full_batch_values(
            np.array([x]), ch["bu"], ch["gfs"], ch["a"], ch["b"]
        )[0]
        gap = np.abs(val - direct).max()
        if gap > 1e-8:
            fails.append(f"series vs rational gap {gap:.2e} at |x|={abs(x):.3f}")

    pi_bar, lam = arrival.stationary(three_phase_dmap)
    e = np.ones(three_phase_dmap.m)
    for r, gf in ch["gfs"].items():
        drift = float((pi_bar @ gf.eval_deriv(1.0) @ e).real)
        want = lam * services.mean_service_time(three_phase_services[r])
        if abs(drift - want) > 1e-8:
            fails.append(f"mean drift for batch {r}: {drift} vs {want}")

    re_idle = arb.p_idle @ three_phase_dmap.D / lam
    re_busy = arb.pi_busy @ three_phase_dmap.D / lam
    raw_mass = re_idle.sum() + re_busy.sum()
    if abs(raw_mass - 1.0) > 1e-9:
        fails.append(f"pre-arrival reweighted mass {raw_mass:.12f}")
    gap = max(
        np.abs(re_idle / raw_mass - pre.p_idle).max(),
        np.abs(re_busy / raw_mass - pre.pi_busy).max(),
    )
    if gap > 1e-12:
        fails.append(f"pre-arrival reweighting gap {gap:.2e}")

    if not (
        np.array_equal(out.p_idle, arb.p_idle)
        and np.array_equal(out.pi_busy, arb.pi_busy)
    ):
        fails.append("outside-observer law differs from slot-boundary law")

    _verdict(capsys, 5, fails)


def _marginal_vgf_coeffs(fn, radius, n_top, m, K=4096):
    xs = radius * np.exp(2j * np.pi * np.arange(K) / K)
    vals = np.stack([fn(x) for x in xs])
    co = np.fft.fft(vals, axis=0) / K
    return co[: n_top + 1].real / radius ** np.arange(n_top + 1)[:, None]


def _safe_radius(rs, cs):
    mods = [np.abs(rs.outside).min()]
    y = np.trim_zeros(cs.y_b, "b")
    if len(y) > 1:
        mods.append(np.abs(np.roots(y[::-1])).min())
    return 0.88 * min(mods)


def test_acceptance_6_reductions_match_direct_assemblies(capsys):
    fails: list = []
    C = np.array([[0.5, 0.2], [0.1, 0.6]])
    D = np.array([[0.2, 0.1], [0.25, 0.05]])
    dmap = arrival.validate(C, D)
    m = 2
    eye = np.eye(m)
    shared = services.make_service(
        "phase", beta=[0.6, 0.4], T=[[0.3, 0.2], [0.1, 0.4]]
    )
    n_top = 30

    # single service, single-size batches
    svc = {1: shared}
    sol = _analytic_chain(dmap, svc, 1, 1)
    phi0 = sol["bu"].phi[0]
    dbar = sol["bu"].dbar_powers[1]
    gf = sol["gfs"][1]

    def single(x):
        A = gf.eval(x)
        return phi0 @ (x * dbar - eye) @ A @ np.linalg.inv(x * eye - A)

    coeffs = _marginal_vgf_coeffs(
        single, _safe_radius(sol["roots"], sol["cs"]), n_top, m
    )
    gap = np.abs(coeffs - sol["dep"].phi_marginal[: n_top + 1]).max()
    if gap > 1e-10:
        fails.append(f"single-size reduction gap {gap:.2e}")

    # fixed-size batches of three
    b = 3
    svc = {3: shared}
    sol = _analytic_chain(dmap, svc, b, b)
    bu = sol["bu"]
    gf = sol["gfs"][b]

    def fixed(x):
        head = np.zeros(m, dtype=complex)
        for n in range(b):
            head += bu.phi[n] @ (bu.dbar_powers[b - n] * x**b - eye * x**n)
        A = gf.eval(x)
        return head @ A @ np.linalg.inv(x**b * eye - A)

    coeffs = _marginal_vgf_coeffs(
        fixed, _safe_radius(sol["roots"], sol["cs"]), n_top, m
    )
    gap = np.abs(coeffs - sol["dep"].phi_marginal[: n_top + 1]).max()
    if gap > 1e-10:
        fails.append(f"fixed-size reduction gap {gap:.2e}")

    # one shared service law across the batch range
    a, b = 2, 3
    svc = {2: shared, 3: shared}
    sol = _analytic_chain(dmap, svc, a, b)
    bu = sol["bu"]
    gf = sol["gfs"][b]

    def ranged(x):
        head = np.zeros(m, dtype=complex)
        for n in range(a):
            head += bu.phi[n] @ (bu.dbar_powers[a - n] * x**b - eye * x**n)
        for n in range(a, b):
            head += bu.phi[n] * (x**b - x**n)
        A = gf.eval(x)
        return head @ A @ np.linalg.inv(x**b * eye - A)

    coeffs = _marginal_vgf_coeffs(
        ranged, _safe_radius(sol["roots"], sol["cs"]), n_top, m
    )
    gap = np.abs(coeffs - sol["dep"].phi_marginal[: n_top + 1]).max()
    if gap > 1e-10:
        fails.append(f"shared-service reduction gap {gap:.2e}")

    _verdict(capsys, 6, fails)
