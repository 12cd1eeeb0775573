import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwdice.data import (
    DatasetFormatError,
    ExpertDataset,
    TransitionDataset,
    estimate_empirical_model,
    load_dataset,
    sample_dataset,
    save_dataset,
)
from pwdice.mdp import Policy, TabularMDP, exact_occupancies, generate_random_mdp, optimal_expert


def test_single_state_samples_are_zero():
    mdp = TabularMDP(np.ones((1, 2, 1)), np.zeros((1, 2)), np.ones(1), 0.9)
    E = sample_dataset(mdp, Policy.uniform(1, 2), 50, seed=0, kind="expert")
    assert np.all(E.states == 0)
    I = sample_dataset(mdp, Policy.uniform(1, 2), 50, seed=0)
    assert np.all(I.states == 0) and np.all(I.next_states == 0)


def test_sizes_and_determinism():
    mdp = generate_random_mdp(8, 3, 4, 0.2, seed=0)
    for n in (10, 100, 1000):
        a = sample_dataset(mdp, Policy.uniform(8, 3), n, seed=4)
        b = sample_dataset(mdp, Policy.uniform(8, 3), n, seed=4)
        assert len(a) == n
        np.testing.assert_array_equal(a.triples, b.triples)


def test_transitions_are_consistent_chains():
    mdp = generate_random_mdp(8, 3, 4, 0.2, seed=0)
    I = sample_dataset(mdp, Policy.uniform(8, 3), 500, seed=1, horizon_mode="fixed:5")
    assert np.all(mdp.transition[I.states, I.actions, I.next_states] > 0)
    # Fixed length 5: episode starts every 5 rows.
    assert len(I.initial_states) == 100
    np.testing.assert_array_equal(I.states[::5], I.initial_states)
    np.testing.assert_array_equal(I.states[1:][np.arange(499) % 5 != 4], I.next_states[:-1][np.arange(499) % 5 != 4])


def test_bad_horizon_rejected():
    mdp = generate_random_mdp(4, 2, 4, 0.2, seed=0)
    with pytest.raises(ValueError):
        sample_dataset(mdp, Policy.uniform(4, 2), 10, horizon_mode="fixed:0")
    with pytest.raises(ValueError):
        sample_dataset(mdp, Policy.uniform(4, 2), 0)


def test_expert_frequencies_match_exact_occupancy():
    mdp = generate_random_mdp(6, 3, 4, 0.5, seed=2)
    expert = optimal_expert(mdp)
    E = sample_dataset(mdp, expert, 1_000_000, seed=7, kind="expert")
    freq = np.bincount(E.states, minlength=6) / len(E)
    # Correlated within episodes, so the allowance is larger than the i.i.d. error.
    assert np.abs(freq - exact_occupancies(mdp, expert).d_s).sum() < 1e-2


def test_single_transition_counts():
    E = ExpertDataset(np.array([2, 2, 0]))
    I = TransitionDataset(np.tile([0, 1, 2], (10, 1)), initial_states=np.array([0]))
    m = estimate_empirical_model(E, I, 3, 2, 0.9)
    assert m.p_hat[0, 1, 2] == 1.0
    np.testing.assert_allclose(m.p_hat[0, 0], 1 / 3)
    np.testing.assert_allclose(m.p_hat[1:], 1 / 3)
    np.testing.assert_allclose(m.pi_I[0], [0, 1])
    np.testing.assert_allclose(m.pi_I[1:], 0.5)
    np.testing.assert_allclose(m.dE_s, [1 / 3, 0, 2 / 3])
    np.testing.assert_allclose(m.p0_hat, [1, 0, 0])


@settings(max_examples=30, deadline=None)
@given(
    triples=st.lists(st.tuples(st.integers(0, 4), st.integers(0, 2), st.integers(0, 4)), min_size=1, max_size=40),
    expert=st.lists(st.integers(0, 4), min_size=1, max_size=40),
)
def test_empirical_distributions_valid(triples, expert):
    m = estimate_empirical_model(ExpertDataset(expert), TransitionDataset(np.array(triples)), 5, 3, 0.9)
    for dist in (m.dE_s, m.dI_s, m.dI_sa, m.p0_hat):
        assert abs(dist.sum() - 1) <= 1e-9 and dist.min() >= 0
    np.testing.assert_allclose(m.p_hat.sum(axis=2), 1, atol=1e-9)
    np.testing.assert_allclose(m.pi_I.sum(axis=1), 1, atol=1e-9)
    np.testing.assert_array_equal(m.dI_sa.sum(axis=1), m.dI_s)


def test_large_dataset_recovers_transitions():
    # One action, so 1e6 samples spread over only four (s, a) rows.
    mdp = generate_random_mdp(4, 1, 4, 0.5, seed=3)
    I = sample_dataset(mdp, Policy.uniform(4, 1), 1_000_000, seed=0)
    E = ExpertDataset(np.array([0]))
    m = estimate_empirical_model(E, I, 4, 1, mdp.gamma)
    counts = m.dI_sa * len(I)
    err = np.abs(m.p_hat - mdp.transition).sum(axis=2)
    # 5e-3 is about three standard errors once a row has 2e5 visits.
    well_visited = counts >= 2e5
    assert well_visited.any()
    assert err[well_visited].max() < 5e-3
    visited = counts > 0
    assert np.all(err[visited] < 5.0 * np.sqrt(4 / counts[visited]))


def test_transition_error_shrinks_with_data():
    mdp = generate_random_mdp(6, 2, 4, 0.5, seed=1)
    errs = {n: [] for n in (1000, 10000)}
    for seed in range(10):
        for n in errs:
            I = sample_dataset(mdp, Policy.uniform(6, 2), n, seed=100 + seed)
            m = estimate_empirical_model(ExpertDataset([0]), I, 6, 2, mdp.gamma)
            errs[n].append(np.abs(m.p_hat - mdp.transition).sum())
    assert np.median(errs[10000]) <= np.median(errs[1000])


def test_out_of_range_rejected():
    with pytest.raises(ValueError):
        estimate_empirical_model(ExpertDataset([0]), TransitionDataset([[0, 3, 1]]), 2, 2, 0.9)


def test_round_trip(tmp_path):
    mdp = generate_random_mdp(5, 2, 4, 0.3, seed=0)
    I = sample_dataset(mdp, Policy.uniform(5, 2), 10, seed=3)
    path = tmp_path / "I.csv"
    save_dataset(I, path, policy_kind="uniform")
    back = load_dataset(path, 5, 2)
    np.testing.assert_array_equal(back.triples, I.triples)
    np.testing.assert_array_equal(back.initial_states, I.initial_states)
    assert back.meta["policy_kind"] == "uniform" and back.meta["seed"] == 3
    assert path.read_text().splitlines()[0] == "s,a,s_next"

    E = sample_dataset(mdp, Policy.uniform(5, 2), 10, seed=3, kind="expert")
    save_dataset(E, tmp_path / "E.csv")
    np.testing.assert_array_equal(load_dataset(tmp_path / "E.csv").states, E.states)


def test_crlf_and_lf_identical(tmp_path):
    (tmp_path / "a.csv").write_bytes(b"s,a,s_next\n0,1,2\n1,0,0\n")
    (tmp_path / "b.csv").write_bytes(b"s,a,s_next\r\n0,1,2\r\n1,0,0\r\n")
    np.testing.assert_array_equal(load_dataset(tmp_path / "a.csv").triples, load_dataset(tmp_path / "b.csv").triples)


@pytest.mark.parametrize("body, where", [
    ("s,a,s_next\n0,5,1\n", ":2:"),
    ("s,a,s_next\n0,1,1\n0,1\n", ":3:"),
    ("s,a,s_next\n0,x,1\n", ":2:"),
    ("state\n0\n", ":1:"),
])
def test_malformed_files_report_line(tmp_path, body, where):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(DatasetFormatError, match=where):
        load_dataset(path, 3, 2)
