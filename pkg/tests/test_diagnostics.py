import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faithful_mcmc.diagnostics import (
    AcceptanceStats,
    EmpiricalDistribution,
    EnergyTrace,
    batch_means_se,
    empirical_distribution,
    energy_summary,
    log_checkpoints,
    tv_curve,
    write_energy_summary_csv,
    write_tv_csv,
)
from faithful_mcmc.energy import LogQuadraticEnergy
from faithful_mcmc.errors import ContractViolation
from faithful_mcmc.exact import build_transition_matrix, enumerate_states, stationary_distribution, tv_distance
from faithful_mcmc.samplers import KernelSpec, make_kernel, run_chain

from conftest import LONG_KERNELS, LONG_SEEDS


def test_point_mass(space5):
    p = empirical_distribution([7], space5)
    assert p[7] == 1.0 and p.sum() == 1.0


def test_alternating_half_half(space5):
    p = empirical_distribution([3, 9] * 50, space5)
    assert p[3] == p[9] == 0.5


def test_burn_in(space5):
    p = empirical_distribution([1, 1, 1, 2], space5, burn_in=3)
    assert p[2] == 1.0
    with pytest.raises(ContractViolation):
        empirical_distribution([1, 2], space5, burn_in=2)


def test_trace_input_uses_state_index(toy5, space5):
    rng = np.random.default_rng(0)
    trace = run_chain(make_kernel(KernelSpec("rwm"), toy5), toy5.table.state([0] * 5), 50, rng)
    idx = [space5.index_of(row) for row in trace.tokens]
    np.testing.assert_array_equal(empirical_distribution(trace, space5), empirical_distribution(idx, space5))


def test_stuck_chain_curve(space5, pi5):
    curve = tv_curve([4] * 1000, space5, pi5, [1, 10, 1000])
    point = np.zeros(32)
    point[4] = 1
    expected = tv_distance(point, pi5)
    assert all(tv == pytest.approx(expected) for _, tv in curve)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 31), min_size=20, max_size=200), st.data())
def test_curve_granularity_invariance(idx, data):
    space = enumerate_states(LogQuadraticEnergy.cycle(5, 0.42).table, 5)
    pi = np.full(32, 1 / 32)
    coarse = sorted(data.draw(st.sets(st.integers(1, len(idx)), min_size=1, max_size=5)))
    fine = sorted(set(coarse) | data.draw(st.sets(st.integers(1, len(idx)), max_size=20)))
    a = dict(tv_curve(idx, space, pi, coarse))
    b = dict(tv_curve(idx, space, pi, fine))
    for c in coarse:
        assert a[c] == pytest.approx(b[c], abs=1e-15)


def test_curve_rejects_bad_checkpoints(space5, pi5):
    with pytest.raises(ContractViolation):
        tv_curve([0, 1, 2], space5, pi5, [2, 2])
    with pytest.raises(ContractViolation):
        tv_curve([0, 1, 2], space5, pi5, [4])


def test_log_checkpoints():
    cps = log_checkpoints(500_000)
    assert cps[0] == 100 and cps[-1] == 500_000
    assert all(b > a for a, b in zip(cps, cps[1:]))


def test_running_mean():
    e = np.array([1.0, 3.0, -1.0, 5.0])
    np.testing.assert_allclose(EnergyTrace(e).running_mean, [1.0, 2.0, 1.0, 2.0])


def test_constant_energy_variance_zero():
    s = energy_summary(np.full(1000, -2.5), burn_in=0)
    assert s.mean == -2.5 and s.variance == 0.0 and s.standard_error == 0.0


def test_default_burn_in_is_ten_percent():
    e = np.concatenate([np.full(10, 100.0), np.zeros(90)])
    assert energy_summary(e).mean == 0.0


def test_batch_means_iid():
    # for iid draws the batch-means estimate should sit near sigma/sqrt(n)
    x = np.random.default_rng(0).normal(size=40_000)
    assert batch_means_se(x) == pytest.approx(1 / 200, rel=0.2)


def test_batch_means_catches_correlation():
    rng = np.random.default_rng(1)
    x = np.repeat(rng.normal(size=400), 100)
    naive = x.std(ddof=1) / np.sqrt(len(x))
    assert batch_means_se(x) > 5 * naive


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.integers(0, 7), max_size=30), min_size=3, max_size=3))
def test_merge_associative(chunks):
    parts = [EmpiricalDistribution(8).update(c) for c in chunks]
    a, b, c = parts
    left, right = a.merge(b).merge(c), a.merge(b.merge(c))
    swapped = c.merge(a).merge(b)
    for other in (right, swapped):
        assert np.array_equal(left.counts, other.counts) and left.total == other.total


def test_acceptance_stats(toy5):
    rng = np.random.default_rng(0)
    trace = run_chain(make_kernel(KernelSpec("pncg"), toy5), toy5.table.state([0] * 5), 2000, rng)
    acc = AcceptanceStats.from_trace(trace)
    assert acc.proposals == 2000 and 0 < acc.acceptances <= acc.proposals
    w = acc.windowed_rate(100)
    assert w.shape == (2000,) and ((0 <= w) & (w <= 1)).all()
    assert w[-1] == pytest.approx(trace.accepted[-100:].mean())
    assert 0 <= acc.self_proposal_fraction() <= 1


def test_exact_start_chain_fluctuates_at_sampling_scale(toy5, space5, pi5):
    rng = np.random.default_rng(42)
    init = space5.state(int(rng.choice(32, p=pi5)))
    trace = run_chain(make_kernel(KernelSpec("gwl"), toy5), init, 20_000, rng)
    curve = dict(tv_curve(trace, space5, pi5, [1000, 20_000]))
    assert curve[20_000] < 0.05
    assert curve[20_000] < curve[1000] + 0.02


def test_csv_writers(tmp_path):
    write_tv_csv(tmp_path / "tv.csv", [("rwm+mh", 0, 100, 0.25)], "tool v1")
    assert (tmp_path / "tv.csv").read_text() == "# tool v1\nkernel,seed,step,tv\nrwm+mh,0,100,0.25\n"
    write_energy_summary_csv(tmp_path / "e.csv", [("gwl+mh", 1, -0.5, 0.01)], "tool v1")
    assert (tmp_path / "e.csv").read_text().splitlines()[1] == "kernel,seed,mean_energy,se"


@pytest.mark.slow
@pytest.mark.parametrize("label", list(LONG_KERNELS))
def test_converges_to_kernel_stationary(long_traces, toy5, space5, label):
    traces, _ = long_traces
    stationary = stationary_distribution(build_transition_matrix(LONG_KERNELS[label], toy5, space5))
    for seed in LONG_SEEDS:
        assert tv_distance(empirical_distribution(traces[label, seed], space5), stationary) < 0.03
