import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from faithful_mcmc.energy import EmbeddingTable, LogQuadraticEnergy, binary_table
from faithful_mcmc.errors import ChainAborted, ContractViolation
from faithful_mcmc.exact import enumerate_states, exact_target, tv_distance
from faithful_mcmc.diagnostics import empirical_distribution
from faithful_mcmc.samplers import (
    GwLConfig,
    GwLProposal,
    HybridConfig,
    KernelSpec,
    MucolaConfig,
    PNCGConfig,
    PNCGProposal,
    RWMProposal,
    StepRecord,
    Candidate,
    gwl_log_q,
    gwl_position_logits,
    gwl_propose,
    hybrid_should_switch,
    make_kernel,
    mh_step,
    mucola_sample,
    mucola_step,
    pncg_log_probs,
    pncg_log_q,
    pncg_position_logits,
    pncg_propose,
    random_state,
    run_chain,
    rwm_log_q,
    rwm_propose,
)


def zero_model(n=3, table=None):
    table = table or binary_table()
    return LogQuadraticEnergy(table, np.zeros((n * table.dim, n * table.dim)), beta=1.0)


def linear_model(grad, n=1):
    # U(x) = -beta b^T x has constant gradient -beta b
    return LogQuadraticEnergy(binary_table(), np.zeros((n, n)), -np.asarray(grad, float), beta=1.0)


# p-NCG


def test_pncg_logits_spec_values():
    m = zero_model(1)
    s = m.table.state([0])  # x = -1
    L = pncg_position_logits(m, s, PNCGConfig(1.0, 2.0), 0)
    assert L[0] == 0.0
    assert L[1] == pytest.approx(-2.0, abs=1e-15)
    g = linear_model([-0.84])
    L = pncg_position_logits(g, s, PNCGConfig(1.0, 2.0), 0)
    assert L[1] == pytest.approx(-1.16, abs=1e-12)


def test_pncg_flip_probability_zero_gradient():
    m = zero_model(4)
    s = m.table.state([0, 1, 0, 1])
    P = np.exp(pncg_log_probs(m, s, PNCGConfig()))
    expected = math.exp(-2) / (1 + math.exp(-2))
    assert expected == pytest.approx(0.1192, abs=1e-4)
    for n, tok in enumerate(s.tokens):
        assert P[n, 1 - tok] == pytest.approx(expected, abs=1e-14)


def test_pncg_flip_frequency_matches():
    m = zero_model(5)
    s = m.table.state([0] * 5)
    rng = np.random.default_rng(3)
    flips = sum(pncg_propose(m, s, PNCGConfig(), rng).changes for _ in range(4000))
    p = math.exp(-2) / (1 + math.exp(-2))
    n = 4000 * 5
    assert abs(flips - n * p) < 4 * math.sqrt(n * p * (1 - p))


def test_pncg_equal_logits_flip_half():
    # a huge alpha makes the penalty vanish, leaving equal logits under zero gradient
    m = zero_model(2)
    P = np.exp(pncg_log_probs(m, m.table.state([0, 1]), PNCGConfig(1e300)))
    np.testing.assert_allclose(P, 0.5, atol=1e-15)


def test_pncg_small_alpha_stays_put(toy5):
    s = toy5.table.state([1, 0, 1, 1, 0])
    rng = np.random.default_rng(0)
    assert all(pncg_propose(toy5, s, PNCGConfig(1e-3), rng).changes == 0 for _ in range(200))


def test_pncg_log_q_values(toy5):
    s = toy5.table.state([0, 0, 0, 0, 0])
    q = pncg_log_q(toy5, s, s, PNCGConfig())
    g = toy5.gradient(s.x)[0]
    stay, flip = 0.0, -0.5 * g * 2 - 2.0
    assert q == pytest.approx(5 * (stay - np.logaddexp(stay, flip)), abs=1e-12)
    # huge alpha: uniform proposal, log q = -N log K
    assert pncg_log_q(zero_model(5), s, s, PNCGConfig(1e300)) == pytest.approx(-5 * math.log(2), abs=1e-12)


def test_pncg_log_q_triangle():
    # N=3 triangle, state (-1,-1,-1): gradient at each site is beta*2 = 0.84, so the flip logit is -2.84
    m = LogQuadraticEnergy.cycle(3, 0.42)
    s = m.table.state([0, 0, 0])
    assert m.gradient(s.x)[0] == pytest.approx(0.84)
    expected = 3 * -math.log1p(math.exp(-2.84))
    assert pncg_log_q(m, s, s, PNCGConfig()) == pytest.approx(expected, abs=1e-12)


def _random_model(seed, n, K, h):
    rng = np.random.default_rng(seed)
    table = EmbeddingTable(rng.normal(size=(K, h)))
    return LogQuadraticEnergy(table, rng.normal(size=(n * h, n * h)), rng.normal(size=n * h), 0.7), rng


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(2, 4), st.integers(1, 3), st.sampled_from([1.0, 1.5, 2.0, 3.0]))
def test_pncg_factorization(seed, n, K, h, p):
    m, rng = _random_model(seed, n, K, h)
    s = random_state(m.table, n, rng)
    cfg = PNCGConfig(rng.uniform(0.1, 3.0), p)
    cand = pncg_propose(m, s, cfg, rng)
    per_position = sum(
        pncg_position_logits(m, s, cfg, i)[cand.state.tokens[i]]
        - logsumexp(pncg_position_logits(m, s, cfg, i))
        for i in range(n)
    )
    assert abs(cand.log_q - per_position) <= 1e-12 * max(1.0, abs(per_position))
    assert abs(pncg_log_q(m, s, cand.state, cfg) - cand.log_q) <= 1e-12 * max(1.0, abs(cand.log_q))


# GwL


def test_gwl_binary_forced_flip(toy5):
    s = toy5.table.state([0, 1, 0, 1, 1])
    rng = np.random.default_rng(1)
    for pos in range(5):
        cand = gwl_propose(toy5, s, GwLConfig(), pos, rng)
        assert cand.changes == 1 and cand.state.tokens[pos] == 1 - s.tokens[pos]


def test_gwl_equidistant_ternary():
    # vertices of an equilateral triangle
    V = [[1.0, 0.0], [-0.5, math.sqrt(3) / 2], [-0.5, -math.sqrt(3) / 2]]
    m = zero_model(2, EmbeddingTable(V))
    s = m.table.state([0, 2])
    L = gwl_position_logits(m, s, GwLConfig(), 0)
    assert L[0] == -np.inf
    p = np.exp(L - logsumexp(L))
    np.testing.assert_allclose(p, [0.0, 0.5, 0.5], atol=1e-14)


def test_gwl_logit_value():
    m = linear_model([-0.84])
    L = gwl_position_logits(m, m.table.state([0]), GwLConfig(1.0, 2.0), 0)
    assert L[1] == pytest.approx(-2.32, abs=1e-12)


def test_gwl_log_q_cases(toy5):
    s = toy5.table.state([0, 0, 1, 1, 0])
    cfg = GwLConfig()
    assert gwl_log_q(toy5, s, s, cfg) == -math.inf
    assert gwl_log_q(toy5, s, s.replace(0, 1).replace(1, 1), cfg) == -math.inf
    z = zero_model(5)
    assert gwl_log_q(z, s, s.replace(3, 0), cfg) == pytest.approx(math.log(1 / 5), abs=1e-15)
    assert gwl_log_q(z, s, s.replace(3, 0), GwLConfig(scan="systematic")) == 0.0


def test_gwl_never_self(toy5):
    rng = np.random.default_rng(2)
    kernel = make_kernel(KernelSpec("gwl", adjusted=False), toy5)
    trace = run_chain(kernel, toy5.table.state([0] * 5), 500, rng)
    assert (trace.changes == 1).all()
    prev = np.array(trace.initial)
    for row in trace.tokens:
        assert (row != prev).sum() == 1
        prev = row


def test_gwl_systematic_scan_order(toy5):
    prop = GwLProposal(GwLConfig(scan="systematic"))
    rng = np.random.default_rng(0)
    s = toy5.table.state([0] * 5)
    for t in range(7):
        cand = prop.propose(toy5, s, rng, t)
        assert cand.state.tokens[t % 5] == 1


# RWM


def test_rwm_neighbors_uniform():
    t = binary_table()
    s = t.state([0, 1, 0, 0, 1])
    rng = np.random.default_rng(5)
    counts = {}
    n = 20_000
    for _ in range(n):
        c = rwm_propose(s, rng)
        assert c.changes == 1 and c.log_q == pytest.approx(math.log(1 / 5))
        counts[c.state.tokens] = counts.get(c.state.tokens, 0) + 1
    assert len(counts) == 5
    sd = math.sqrt(n * 0.2 * 0.8)
    assert all(abs(v - n / 5) < 4 * sd for v in counts.values())


def test_rwm_symmetric():
    t = EmbeddingTable([[0.0], [1.0], [3.0]])
    a = t.state([0, 2, 1])
    b = a.replace(1, 0)
    assert rwm_log_q(a, b) == rwm_log_q(b, a) == pytest.approx(-math.log(3) - math.log(2))
    assert rwm_log_q(a, a) == -math.inf
    assert rwm_log_q(a, b.replace(0, 1)) == -math.inf


# MH


class _Fixed:
    """Proposal that always offers the same candidate."""

    name = "fixed"

    def __init__(self, target, log_q=0.0, reverse=0.0):
        self.target, self._lq, self._rev = target, log_q, reverse

    def propose(self, model, state, rng, t=0):
        return Candidate(self.target, self._lq, self.target.hamming(state))

    def log_q(self, model, src, dst):
        return self._rev


def test_mh_equal_energies_always_accepts():
    m = zero_model(3)
    s = m.table.state([0, 1, 0])
    prop = _Fixed(s.replace(0, 1))
    rng = np.random.default_rng(0)
    for _ in range(50):
        nxt, rec = mh_step(m, prop, s, rng)
        assert rec.accepted and rec.log_ratio == 0.0 and nxt == prop.target


def test_mh_self_candidate_ratio_zero(toy5):
    s = toy5.table.state([0, 1, 1, 0, 0])
    nxt, rec = mh_step(toy5, _Fixed(s, -3.0, -7.0), s, np.random.default_rng(0))
    assert rec.accepted and rec.log_ratio == 0.0 and nxt == s


class _GibbsExact:
    name = "gibbs"

    def __init__(self, model, space):
        self.space = space
        self.log_pi = np.log(exact_target(model, space))

    def propose(self, model, state, rng, t=0):
        i = int(rng.choice(self.space.size, p=np.exp(self.log_pi)))
        new = self.space.state(i)
        return Candidate(new, float(self.log_pi[i]), new.hamming(state))

    def log_q(self, model, src, dst):
        return float(self.log_pi[self.space.index_of(dst.tokens)])


def test_mh_gibbs_exact_proposal_ratio_cancels():
    m = linear_model([0.9])
    space = enumerate_states(m.table, 1)
    prop = _GibbsExact(m, space)
    rng = np.random.default_rng(4)
    s = m.table.state([0])
    for _ in range(100):
        s, rec = mh_step(m, prop, s, rng)
        assert rec.accepted
        assert abs(rec.log_ratio) < 1e-12


class _Inf(LogQuadraticEnergy):
    def energy(self, x):
        return math.inf if x[0] > 0 else super().energy(x)


def test_mh_non_finite_energy_flagged():
    m = _Inf(binary_table(), np.zeros((2, 2)), beta=1.0)
    s = m.table.state([0, 0])
    nxt, rec = mh_step(m, _Fixed(s.replace(0, 1)), s, np.random.default_rng(0))
    assert not rec.accepted and rec.flagged and nxt == s


def test_mh_no_overflow_for_huge_ratios():
    m = LogQuadraticEnergy(binary_table(), np.zeros((1, 1)), [1e6], beta=1.0)
    s = m.table.state([0])
    with np.errstate(over="raise"):
        nxt, rec = mh_step(m, _Fixed(s.replace(0, 1)), s, np.random.default_rng(0))
    assert rec.accepted and rec.log_ratio == pytest.approx(2e6)
    back, rec = mh_step(m, _Fixed(s), nxt, np.random.default_rng(0))
    assert not rec.accepted and back == nxt


# MUCOLA


def test_mucola_flip_probability():
    m = zero_model(1)
    s = m.table.state([1])
    draws = mucola_sample(m, s, MucolaConfig(1.0), np.random.default_rng(9), 200_000)
    p = 0.15865525393145707  # Phi(-1)
    frac = float((draws[:, 0] == 0).mean())
    assert abs(frac - p) < 4 * math.sqrt(p * (1 - p) / 200_000)


class _ZeroNoise:
    def standard_normal(self, size):
        return np.zeros(size)


def test_mucola_tie_goes_to_lowest_index():
    # U = 2x gives mean x - 0.5 * 2 = 0 from x = +1: exactly the midpoint
    m = linear_model([2.0])
    new = mucola_step(m, m.table.state([1]), MucolaConfig(1.0), _ZeroNoise())
    assert new.tokens == (0,)


def test_mucola_tiny_step_stays(toy5):
    s = toy5.table.state([1, 0, 0, 1, 1])
    rng = np.random.default_rng(0)
    assert all(mucola_step(toy5, s, MucolaConfig(1e-4), rng) == s for _ in range(200))


def test_mucola_step_and_sample_agree(toy5):
    s = toy5.table.state([1, 0, 0, 1, 1])
    a = mucola_step(toy5, s, MucolaConfig(1.5), np.random.default_rng(11))
    b = mucola_sample(toy5, s, MucolaConfig(1.5), np.random.default_rng(11), 1)
    assert a.tokens == tuple(b[0].tolist())


def test_mucola_adjusted_is_rejected():
    with pytest.raises(ContractViolation):
        KernelSpec("mucola")


# hybrid


def _recs(changes):
    return [StepRecord(True, 0.0, 0.0, c) for c in changes]


def test_hybrid_switch_examples():
    cfg = HybridConfig(window=10, change_threshold=1.0, max_pncg_steps=1000)
    assert hybrid_should_switch(_recs([0, 1] * 5), cfg)
    assert not hybrid_should_switch(_recs([4, 5, 3, 5, 4] * 2), cfg)
    assert not hybrid_should_switch(_recs([0] * 5), cfg)
    assert hybrid_should_switch(_recs([5] * 10), cfg, steps_taken=1000)


def test_hybrid_switches_on_toy(toy5):
    kernel = make_kernel(KernelSpec("hybrid"), toy5)
    rng = np.random.default_rng(0)
    trace = run_chain(kernel, random_state(toy5.table, 5, rng), 6000, rng)
    assert trace.switch_step is not None and trace.switch_step < 5000
    after = trace.changes[trace.switch_step :]
    assert (after == 1).all()


def test_hybrid_config_validation():
    for bad in ({"window": 0}, {"change_threshold": -1}, {"max_pncg_steps": 0}):
        with pytest.raises(ContractViolation):
            HybridConfig(**bad)


# chain runner


class _Reject:
    name = "reject"

    def step(self, state, rng, t=0):
        return state, StepRecord(False, 0.0, -math.inf, 1)


def test_run_chain_always_reject():
    s = binary_table().state([0, 1])
    trace = run_chain(_Reject(), s, 1, np.random.default_rng(0))
    assert trace.final == s.tokens and not trace.accepted[0]


@pytest.mark.parametrize("name", ["pncg", "gwl", "rwm", "mucola", "hybrid"])
def test_run_chain_deterministic(toy5, name):
    spec = KernelSpec(name, adjusted=name != "mucola")

    def go():
        rng = np.random.default_rng(123)
        return run_chain(make_kernel(spec, toy5), random_state(toy5.table, 5, rng), 2000, rng)

    a, b = go(), go()
    assert np.array_equal(a.tokens, b.tokens)
    assert np.array_equal(a.energies, b.energies)
    assert np.array_equal(a.accepted, b.accepted)


def test_run_chain_callback_failure_keeps_partial(toy5):
    seen = []

    def cb(t, state, rec):
        seen.append(t)
        if t == 7:
            raise OSError("disk full")

    rng = np.random.default_rng(0)
    with pytest.raises(ChainAborted) as info:
        run_chain(make_kernel(KernelSpec("rwm"), toy5), toy5.table.state([0] * 5), 100, rng, [cb])
    assert seen == list(range(1, 8))
    assert len(info.value.trace) == 7


def test_run_chain_rejects_bad_steps(toy5):
    with pytest.raises(ContractViolation):
        run_chain(_Reject(), toy5.table.state([0] * 5), 0, np.random.default_rng(0))


def test_energies_recorded_match_states(toy5):
    rng = np.random.default_rng(8)
    trace = run_chain(make_kernel(KernelSpec("pncg"), toy5), random_state(toy5.table, 5, rng), 300, rng)
    X = toy5.table.vectors[trace.tokens].reshape(len(trace), -1)
    np.testing.assert_allclose(trace.energies, toy5.energies(X), atol=1e-12)


@pytest.mark.slow
def test_pncg_chain_200k_reaches_target(toy5, space5, pi5):
    rng = np.random.default_rng(0)
    trace = run_chain(make_kernel(KernelSpec("pncg"), toy5), random_state(toy5.table, 5, rng), 200_000, rng)
    assert tv_distance(empirical_distribution(trace, space5), pi5) < 0.02


def test_cached_proposals_match_functions(toy5):
    s = toy5.table.state([0, 1, 1, 0, 1])
    t = s.replace(2, 0)
    cfg = PNCGConfig(0.7)
    assert PNCGProposal(cfg).log_q(toy5, s, t) == pytest.approx(pncg_log_q(toy5, s, t, cfg), abs=1e-14)
    gcfg = GwLConfig(0.7)
    assert GwLProposal(gcfg).log_q(toy5, s, t) == pytest.approx(gwl_log_q(toy5, s, t, gcfg), abs=1e-14)
    assert RWMProposal().log_q(toy5, s, t) == rwm_log_q(s, t)
