import numpy as np
import pytest
from scipy.stats import ortho_group

from helpers import central_diff, rel_err, two_cycles_mdp
from pwdice.contrastive import (
    ContrastiveConfig,
    Encoder,
    effective_W,
    embedding_cost,
    infonce_loss_and_grad,
    initial_W0,
    load_encoder,
    save_encoder,
    tabular_infonce_from_counts,
    train_embedding,
)
from pwdice.data import sample_dataset
from pwdice.mdp import Policy


def test_equal_embeddings_give_log_batch():
    enc = Encoder(table=np.ones((3, 4)))
    loss, _ = infonce_loss_and_grad(enc, np.zeros((4, 4)), np.array([[0, 1], [2, 0]]))
    assert loss == pytest.approx(np.log(2.0), abs=1e-12)


def test_batch_of_one_rejected():
    with pytest.raises(ValueError):
        infonce_loss_and_grad(Encoder(table=np.ones((2, 2))), np.zeros((2, 2)), np.array([[0, 1]]))


def test_perfect_diagonal_scores():
    # Orthogonal embeddings with W = I give L = 10 I.
    M = 4
    table = np.sqrt(10.0) * np.eye(M)
    W = np.eye(M)
    pairs = np.array([[i, i] for i in range(M)])
    loss, _ = infonce_loss_and_grad(Encoder(table=table), np.zeros((M, M)), pairs, W=W)
    assert loss < 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_table_gradients_finite_differences(seed):
    rng = np.random.default_rng(seed)
    table = rng.normal(size=(6, 4))
    W0 = rng.normal(size=(4, 4))
    pairs = rng.integers(0, 6, size=(8, 2))
    loss, grads = infonce_loss_and_grad(Encoder(table=table), W0, pairs)
    fd_t = central_diff(lambda t: infonce_loss_and_grad(Encoder(table=t), W0, pairs)[0], table)
    fd_w = central_diff(lambda w: infonce_loss_and_grad(Encoder(table=table), w, pairs)[0], W0)
    assert rel_err(grads["encoder"][0], fd_t) <= 1e-6
    assert rel_err(grads["W0"], fd_w) <= 1e-6


def test_affine_gradients_finite_differences():
    rng = np.random.default_rng(1)
    X, Xn = rng.normal(size=(2, 8, 3))
    weight, bias, W0 = rng.normal(size=(3, 4)), rng.normal(size=4), rng.normal(size=(4, 4))

    def loss_of(w, b, w0):
        return infonce_loss_and_grad(Encoder(weight=w, bias=b), w0, (X, Xn))[0]

    _, grads = infonce_loss_and_grad(Encoder(weight=weight, bias=bias), W0, (X, Xn))
    assert rel_err(grads["encoder"][0], central_diff(lambda w: loss_of(w, bias, W0), weight)) <= 1e-6
    assert rel_err(grads["encoder"][1], central_diff(lambda b: loss_of(weight, b, W0), bias)) <= 1e-6
    assert rel_err(grads["W0"], central_diff(lambda w0: loss_of(weight, bias, w0), W0)) <= 1e-6


def test_count_aggregation_matches_per_sample():
    rng = np.random.default_rng(2)
    table, W0 = rng.normal(size=(5, 3)), rng.normal(size=(3, 3))
    pairs = rng.integers(0, 5, size=(40, 2))
    counts = np.zeros((5, 5))
    np.add.at(counts, (pairs[:, 0], pairs[:, 1]), 1.0)
    loss, grads = infonce_loss_and_grad(Encoder(table=table), W0, pairs)
    loss_c, d_table, dW0 = tabular_infonce_from_counts(table, W0, counts)
    assert loss_c == pytest.approx(loss, abs=1e-12)
    np.testing.assert_allclose(d_table, grads["encoder"][0], atol=1e-12)
    np.testing.assert_allclose(dW0, grads["W0"], atol=1e-12)


def test_rotation_invariance_with_fixed_identity():
    rng = np.random.default_rng(3)
    table = rng.normal(size=(6, 4))
    pairs = rng.integers(0, 6, size=(10, 2))
    R = ortho_group.rvs(4, random_state=4)
    a, grads = infonce_loss_and_grad(Encoder(table=table), np.zeros((4, 4)), pairs, W=np.eye(4))
    b, _ = infonce_loss_and_grad(Encoder(table=table @ R), np.zeros((4, 4)), pairs, W=np.eye(4))
    assert a == pytest.approx(b, abs=1e-12)
    assert np.all(grads["W0"] == 0)


def test_effective_W_is_psd():
    rng = np.random.default_rng(0)
    for _ in range(20):
        W = effective_W(rng.normal(scale=3, size=(5, 5)))
        np.testing.assert_allclose(W, W.T)
        x = rng.normal(size=(10, 5))
        assert np.all(np.einsum("ni,ij,nj->n", x, W, x) >= -1e-12)


def test_identity_init_is_near_identity():
    W = effective_W(initial_W0(8, "identity"))
    assert np.max(np.abs(W - np.eye(8))) < 0.05
    assert np.linalg.matrix_rank(effective_W(initial_W0(8, "zeros"))) == 1


def cycle_data(seed, n=2000):
    mdp = two_cycles_mdp()
    return sample_dataset(mdp, Policy.uniform(10, 2), n, seed=seed)


def test_zero_epochs_returns_initialisation():
    data = cycle_data(0, 200)
    a = train_embedding(data, 10, ContrastiveConfig(epochs=0, seed=5))
    rng = np.random.default_rng(5)
    np.testing.assert_array_equal(a.encoder.table, 0.1 * rng.standard_normal((10, 32)))
    np.testing.assert_array_equal(a.W0, initial_W0(32))
    assert a.losses == []


def test_same_seed_identical_bytes():
    data = cycle_data(1, 500)
    cfg = ContrastiveConfig(epochs=20, seed=3)
    a, b = train_embedding(data, 10, cfg), train_embedding(data, 10, cfg)
    assert a.encoder.table.tobytes() == b.encoder.table.tobytes()
    assert a.W0.tobytes() == b.W0.tobytes()


def test_minibatch_training_runs():
    data = cycle_data(2, 1000)
    res = train_embedding(data, 10, ContrastiveConfig(epochs=5, batch_size=256, dim=8))
    assert len(res.losses) == 5 and np.all(np.isfinite(res.losses))


def test_full_batch_descent_monotone():
    # Plain gradient descent on the full batch with a small step never backslides.
    data = cycle_data(3)
    res = train_embedding(data, 10, ContrastiveConfig(optimizer="sgd", learning_rate=0.1, epochs=200, seed=3))
    assert np.max(np.diff(res.losses)) <= 1e-6


def test_psd_after_training():
    res = train_embedding(cycle_data(4, 500), 10, ContrastiveConfig(epochs=30, seed=4))
    assert np.linalg.eigvalsh(effective_W(res.W0)).min() >= -1e-12


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    with pytest.raises(FloatingPointError):
        train_embedding(cycle_data(5, 500), 10, ContrastiveConfig(optimizer="sgd", learning_rate=1e6, epochs=50))


def test_embedding_cost_properties():
    enc = Encoder(table=np.random.default_rng(0).normal(size=(5, 3)))
    C = embedding_cost(enc, 2.0)
    np.testing.assert_allclose(C, C.T)
    assert np.all(np.diag(C) == 0) and C.min() >= 0
    np.testing.assert_allclose(embedding_cost(enc, 4.0), 2 * C)
    assert np.all(embedding_cost(Encoder(table=np.ones((3, 2))), 5.0) == 0)
    ortho = embedding_cost(Encoder(table=np.eye(2)), 5.0)
    assert ortho[0, 1] == pytest.approx(10.0)
    with pytest.raises(ValueError):
        embedding_cost(enc, -1.0)


def test_encoder_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    enc, W0 = Encoder(table=rng.normal(size=(4, 3))), rng.normal(size=(3, 3))
    save_encoder(enc, W0, tmp_path / "enc.json")
    back, W0b = load_encoder(tmp_path / "enc.json")
    np.testing.assert_array_equal(back.table, enc.table)
    np.testing.assert_array_equal(W0b, W0)
