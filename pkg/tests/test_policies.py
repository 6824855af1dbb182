import numpy as np
import pytest

from qedsim import policies as pol
from qedsim._kernels import backends
from qedsim.errors import ValidationError
from qedsim.params import SystemParams
from qedsim.queue_engine import build_plan
from qedsim.renewal import RenewalDist


def simple_params(n=10, d=2, gam=(0.0, 0.5), rho=(0.5, 0.5)):
    lam = np.asarray(rho, dtype=float)
    return SystemParams.halfin_whitt(
        n=n, lam=lam, mu=np.ones(d), gam=np.asarray(gam, dtype=float),
        arrival=[RenewalDist.exponential()] * d)


# --------------------------------------------------------------------- #
# action sets
# --------------------------------------------------------------------- #

def test_admissible_enumeration_small():
    acts = pol.admissible_actions([1, 1], 1)
    found = {tuple(z) for z in acts.enumerate()}
    assert found == {(1, 0), (0, 1)}


def test_admissible_all_fit():
    acts = pol.admissible_actions([0, 3], 5)
    found = {tuple(z) for z in acts.enumerate()}
    assert found == {(0, 3)}


def test_admissible_enumeration_matches_bruteforce():
    acts = pol.admissible_actions([2, 2], 3)
    found = {tuple(z) for z in acts.enumerate()}
    brute = set()
    for z1 in range(3):
        for z2 in range(3):
            if z1 + z2 == 3 and z1 <= 2 and z2 <= 2:
                brute.add((z1, z2))
    assert found == brute == {(2, 1), (1, 2)}


def test_admissible_cap():
    acts = pol.admissible_actions([2000, 2000, 2000], 1000)
    with pytest.raises(ValidationError):
        acts.enumerate()
    assert acts.contains([1000, 0, 0])


# --------------------------------------------------------------------- #
# priority rules
# --------------------------------------------------------------------- #

def test_static_priority_examples():
    assert np.array_equal(pol.static_priority([3, 4], 5, [0, 1]), [3, 2])
    assert np.array_equal(pol.static_priority([7, 1], 5, [0, 1]), [5, 0])
    assert np.array_equal(pol.static_priority([0, 0], 5, [0, 1]), [0, 0])


def test_modified_priority_examples():
    # no zero-abandonment classes: reduces to static priority
    z = pol.modified_priority([3, 4], 5, rho=[0.5, 0.5], gamma=[0.3, 0.5])
    assert np.array_equal(z, [3, 2])
    # caps bind for the zero-abandonment class
    z = pol.modified_priority([4, 8], 10, rho=[0.5, 0.5], gamma=[0.0, 0.5])
    assert np.array_equal(z, [4, 6])
    z = pol.modified_priority([15, 0], 10, rho=[0.5, 0.5], gamma=[0.0, 0.5])
    assert np.array_equal(z, [10, 0])


def test_modified_equals_static_exhaustive():
    # with no zero-gamma classes the two rules agree everywhere
    for n in (3, 7, 20):
        for x1 in range(0, 41, 4):
            for x2 in range(0, 41, 4):
                a = pol.modified_priority([x1, x2], n, rho=[0.4, 0.6],
                                          gamma=[0.1, 0.2])
                b = pol.static_priority([x1, x2], n, [0, 1])
                assert np.array_equal(a, b), (n, x1, x2)


def test_modified_priority_admissible_random():
    rng = np.random.default_rng(7)
    for _ in range(2000):
        d = rng.integers(1, 5)
        n = int(rng.integers(1, 60))
        x = rng.integers(0, 40, size=d)
        gamma = rng.choice([0.0, 0.5], size=d)
        gamma[-1] = 0.5
        raw = rng.uniform(0.2, 1.0, size=d)
        rho = raw / raw.sum()
        z = pol.modified_priority(x, n, rho=rho, gamma=gamma)
        assert pol.admissible_actions(x, n).contains(z), (x, n, gamma, rho, z)


def test_user_order_is_never_permuted():
    # zero-gamma class listed second must still be capped like a prefix class
    z = pol.modified_priority([8, 4], 10, rho=[0.5, 0.5], gamma=[0.5, 0.0])
    z_swapped = pol.modified_priority([4, 8], 10, rho=[0.5, 0.5], gamma=[0.0, 0.5])
    assert np.array_equal(z, z_swapped[::-1])


# --------------------------------------------------------------------- #
# quantization
# --------------------------------------------------------------------- #

def test_quantize_examples():
    out = pol.quantize([1.3, 2.9])
    assert np.allclose(out, [1.0, 3.2])
    assert abs(out.sum() - 4.2) < 1e-12
    assert np.allclose(pol.quantize([1.5, 2.5]), [1.0, 3.0])
    assert np.allclose(pol.quantize([2.0, 3.0]), [2.0, 3.0])


def test_quantize_preserves_totals_and_moves_little():
    rng = np.random.default_rng(11)
    for _ in range(3000):
        d = int(rng.integers(1, 6))
        y = rng.uniform(0, 50, size=d)
        out = pol.quantize(y)
        assert abs(out.sum() - y.sum()) <= 1e-9 * max(y.sum(), 1.0)
        assert np.all(np.abs(out - y) < d)


def test_quantize_integer_total_gives_integers():
    rng = np.random.default_rng(12)
    for _ in range(500):
        d = int(rng.integers(2, 5))
        y = rng.uniform(0, 20, size=d)
        y[-1] = round(y.sum()) - y[:-1].sum()
        if y[-1] < 0:
            continue
        out = pol.quantize(y)
        assert np.allclose(out, np.round(out), atol=1e-9)


# --------------------------------------------------------------------- #
# u <-> z
# --------------------------------------------------------------------- #

def test_u_from_z_example():
    u = pol.u_from_z([3, 4], [3, 2], 5)
    assert np.allclose(u, [0.0, 1.0])


def test_u_is_ed_when_no_queue():
    u = pol.u_from_z([2, 2], [2, 2], 5)
    assert np.allclose(u, [0.0, 1.0])


def test_roundtrip_random_feasible_pairs():
    rng = np.random.default_rng(13)
    done = 0
    while done < 1000:
        d = int(rng.integers(2, 5))
        n = int(rng.integers(1, 30))
        x = rng.integers(0, 15, size=d)
        if x.sum() <= n:
            continue
        acts = pol.admissible_actions(x, n)
        target = acts.total
        # random feasible allocation
        z = np.zeros(d, dtype=np.int64)
        rem = target
        order = rng.permutation(d)
        for i in order:
            hi = min(int(x[i]), rem)
            z[i] = rng.integers(0, hi + 1)
            rem -= z[i]
        if rem > 0:
            for i in order:
                add = min(int(x[i]) - int(z[i]), rem)
                z[i] += add
                rem -= add
        u = pol.u_from_z(x, z, n)
        z2 = pol.z_from_u(x, u, n)
        assert np.array_equal(z, z2)
        done += 1


def test_z_from_u_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        pol.z_from_u([3, 4], [0.3, 0.7], 5)  # 2*(0.3,0.7) not an integer split
    with pytest.raises(ValidationError):
        pol.u_from_z([3, 4], [4, 2], 5)      # z > x
    with pytest.raises(ValidationError):
        pol.z_from_u([1, 1], [1.0, 0.0], 5)  # nobody waits: only e_d allowed


# --------------------------------------------------------------------- #
# markov-from-control policies
# --------------------------------------------------------------------- #

def test_markov_control_no_queue():
    params = simple_params(n=10)
    v = pol.ControlField.constant([0.25, 0.75])
    p = pol.markov_from_control(v, params)
    x = np.array([4, 5])
    z = p.evaluate(x, np.zeros(2), 1, 0.0, params)
    assert np.array_equal(z, x)


def test_markov_control_hand_example():
    params = simple_params(n=400)
    v = pol.ControlField.constant([0.25, 0.75])
    p = pol.markov_from_control(v, params)
    z = p.evaluate(np.array([210, 200]), np.zeros(2), 1, 0.0, params)
    assert np.array_equal(z, [208, 192])


def test_markov_control_outside_region_falls_back():
    params = simple_params(n=100)
    v = pol.ControlField.constant([0.25, 0.75])
    p = pol.markov_from_control(v, params)
    x = np.array([190, 10])                    # far from n rho = (50, 50)
    z = p.evaluate(x, np.zeros(2), 1, 0.0, params)
    zm = pol.modified_priority(x, 100, params.rho, params.gam)
    assert np.array_equal(z, zm)


def test_markov_control_ed_is_work_conserving_last_class_queue():
    params = simple_params(n=50)
    p = pol.markov_from_control(pol.ControlField.e_d(2), params)
    rng = np.random.default_rng(3)
    for _ in range(300):
        x = np.array([rng.integers(20, 31), rng.integers(20, 31)])
        z = p.evaluate(x, np.zeros(2), 1, 0.0, params)
        q = x - z
        qtot = max(int(x.sum()) - 50, 0)
        assert q.sum() == qtot
        # whole queue on the last class unless it lacks customers
        assert q[0] == max(qtot - x[1], 0)


def test_markov_control_admissible_property():
    params = simple_params(n=60)
    grid = np.random.default_rng(5).uniform(0, 1, (9, 9))
    v = pol.ControlField.from_grid(-3.0, 0.75, grid, radius=3.0)
    p = pol.markov_from_control(v, params)
    rng = np.random.default_rng(6)
    for _ in range(3000):
        x = rng.integers(0, 90, size=2)
        z = p.evaluate(x, np.zeros(2), 1, 0.0, params)
        assert pol.admissible_actions(x, 60).contains(z), (x, z)


# --------------------------------------------------------------------- #
# kernel encodings agree with the reference implementations
# --------------------------------------------------------------------- #

@pytest.mark.parametrize("lane", list(backends()))
def test_kernel_policy_eval_matches_reference(lane):
    kern = backends()[lane]
    rng = np.random.default_rng(20)
    params = simple_params(n=37, gam=(0.0, 0.5))
    grid = np.random.default_rng(4).uniform(0, 1, (11, 11))
    v = pol.ControlField.from_grid(-4.0, 0.8, grid, radius=4.0)
    cases = [
        pol.static_priority_policy([1, 0]),
        pol.work_conserving_policy(),
        pol.modified_priority_policy(),
        pol.idling_policy(0.5),
        pol.markov_from_control(v, params),
        pol.markov_from_control(pol.ControlField.constant([0.3, 0.7]), params),
    ]
    for policy in cases:
        plan = build_plan(params, policy, x0=[0, 0], t_end=1.0)
        assert not plan.python_only
        for _ in range(800):
            x = rng.integers(0, 80, size=2)
            z_ref = policy.evaluate(x, np.zeros(2), 1, 0.0, params)
            z_k = kern.policy_eval(plan, x)
            assert np.array_equal(z_ref, z_k), (policy.name, x, z_ref, z_k)


def test_structural_admissibility_bulk():
    """Every shipped policy is admissible on a large random state sample."""
    params = simple_params(n=25, gam=(0.0, 0.5))
    policies = [
        pol.work_conserving_policy(),
        pol.static_priority_policy([1, 0]),
        pol.modified_priority_policy(),
        pol.markov_from_control(pol.ControlField.constant([0.4, 0.6]), params),
    ]
    rng = np.random.default_rng(30)
    per = 100_000 // len(policies) + 1
    for policy in policies:
        xs = rng.integers(0, 60, size=(per, 2))
        for x in xs:
            z = policy.evaluate(x, np.zeros(2), 1, 0.0, params)
            q = x - z
            tot = min(int(x.sum()), 25)
            assert (z >= 0).all() and (q >= 0).all() and int(z.sum()) == tot


def test_scaled_chart_roundtrip():
    chart = pol.ScaledChart(n=100, rho=np.array([0.5, 0.5]))
    x = np.array([61, 48])
    assert np.allclose(chart.unscale(chart.scale(x)), x)
    assert chart.in_ball(x, 2.0)
    assert not chart.in_ball(np.array([200, 0]), 2.0)
