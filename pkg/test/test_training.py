import numpy as np
import pytest
import torch

from utils.agent import ShepherdAgent
from utils.config import Settings
from utils.corpus import build_corpus, corpus_surfaces
from utils.errors import TrainingDivergedError
from utils.networks import Mlp, flat_parameters
from utils.predictor import OaaPredictor, QosPredictor
from utils.surfaces import PLATFORMS
from utils.trainer import (
    episodes_to_converge,
    evaluate_predictor,
    indicator_accuracy,
    mlp_train,
    moving_average,
    run_episode,
    train_model_a,
    train_model_b,
    train_shepherd,
    transfer_mlp,
    transfer_shepherd,
)


def test_bad_training_data():
    net = Mlp(4, 1)
    with pytest.raises(ValueError):
        mlp_train(net, np.zeros((0, 4)), np.zeros(0))
    with pytest.raises(ValueError):
        mlp_train(net, np.zeros((5, 4)), np.zeros(4))
    with pytest.raises(ValueError):
        mlp_train(net, np.zeros((5, 4)), np.zeros((5, 2)))
    y = np.ones(10)
    y[3] = np.nan
    with pytest.raises(TrainingDivergedError):
        mlp_train(net, np.random.default_rng(0).random((10, 4)), y, epochs=1, batch_size=100, test_share=0.0)


def test_constant_target_is_learned():
    rng = np.random.default_rng(1)
    X = rng.random((200, 12))
    y = np.full((200, 1), 0.5)
    report = mlp_train(Mlp(12, 1, dropout_rate=0.0), X, y, epochs=200, lr=1e-2, batch_size=64)
    assert report.mae < 0.05
    assert report.n_train == 140 and report.n_test == 60
    assert report.losses[-1] < report.losses[0]


def test_linear_target_within_five_percent_of_range():
    rng = np.random.default_rng(2)
    X = rng.random((1000, 8))
    w = rng.uniform(-1.0, 1.0, 8)
    y = X @ w
    report = mlp_train(Mlp(8, 1, dropout_rate=0.0, seed=2), X, y, epochs=200, lr=3e-3, batch_size=32, seed=2)
    assert report.mae < 0.05 * np.ptp(y)


def test_training_replays_exactly():
    rng = np.random.default_rng(3)
    X, y = rng.random((64, 5)), rng.random((64, 2))
    a, b = Mlp(5, 2, seed=7), Mlp(5, 2, seed=7)
    ra = mlp_train(a, X, y, epochs=3, seed=7)
    rb = mlp_train(b, X, y, epochs=3, seed=7)
    assert ra.losses == rb.losses
    assert torch.equal(flat_parameters(a), flat_parameters(b))


def test_zero_epoch_transfer_is_identity():
    pretrained = Mlp(12, 5, seed=4)
    X = np.random.default_rng(4).random((20, 12))
    model, report = transfer_mlp(pretrained, X, np.zeros((20, 5)), Settings(), epochs=0)
    assert report.losses == []
    assert torch.equal(flat_parameters(model), flat_parameters(pretrained))
    assert model is not pretrained


def test_indicator_accuracy():
    assert indicator_accuracy(np.array([0.5, 1.5, 1.0, 2.0]), np.array([0.9, 1.2, 1.1, 0.3])) == 0.5
    assert np.isnan(indicator_accuracy(np.array([]), np.array([])))


@pytest.fixture(scope="module")
def small_corpus():
    return build_corpus(PLATFORMS["server1"], corpus_surfaces(["moses", "xapian"]), loads=(0.4, 0.7), grants_per_load=32, seed=0)


def test_model_training_reports(server, small_corpus):
    frame_a, frame_b, _ = small_corpus
    settings = Settings(mlp_epochs=2, mlp_batch_size=32)
    oaa, report_a = train_model_a(frame_a, server, settings)
    assert isinstance(oaa, OaaPredictor)
    assert set(report_a.extra) == {"mae_cores", "mae_ways", "mae_bw"}
    assert len(report_a.losses) == 2
    qos, report_b = train_model_b(frame_b, server, settings)
    assert isinstance(qos, QosPredictor)
    assert 0.0 <= report_b.extra["accuracy"] <= 1.0
    scores = evaluate_predictor(qos, frame_b)
    assert set(scores) == {"mae_ratio", "accuracy"}
    warm, _ = train_model_a(frame_a, server, settings, pretrained=oaa.model, epochs=0)
    assert torch.equal(flat_parameters(warm.model), flat_parameters(oaa.model))


def test_moving_average_and_convergence_episode():
    np.testing.assert_allclose(moving_average([1.0, 3.0, 5.0], window=2), [1.0, 2.0, 4.0])
    assert episodes_to_converge([]) == 0
    assert episodes_to_converge([2.0] * 30) == 1
    rewards = [0.0] * 50 + [1.0] * 100
    assert episodes_to_converge(rewards, window=1) == 51
    assert episodes_to_converge(rewards, window=10) == 60
    assert episodes_to_converge([0.0, 1.0, 0.0, 1.0], window=1) == 4


def test_episode_runs_and_rewards_are_bounded(server, norm):
    settings = Settings(batch_size=8)
    qos = QosPredictor(server, norm)
    agent = ShepherdAgent.from_settings(settings)
    total, scheduler = run_episode(agent, qos, server, settings, seed=3, steps=12)
    assert len(scheduler.rewards) == 12
    assert all(0.0 <= r <= 3.0 for r in scheduler.rewards)
    assert total == pytest.approx(sum(scheduler.rewards))
    assert len(agent.pool) == 12


def test_shepherd_training_and_transfer(server, norm):
    settings = Settings(batch_size=4, noise_sigma=0.5, noise_decay=0.5)
    qos = QosPredictor(server, norm)
    agent, report = train_shepherd(server, settings, qos, episodes=2, steps=5)
    assert len(report.episode_rewards) == 2
    assert report.steps == 10
    assert agent.noise_sigma == pytest.approx(0.125)
    warm, warm_report = transfer_shepherd(agent, server, settings, qos, episodes=0)
    assert warm_report.episode_rewards == []
    assert torch.equal(flat_parameters(warm.actor), flat_parameters(agent.actor))
    assert len(warm.pool) == 0
