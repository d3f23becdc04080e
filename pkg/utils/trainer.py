"""
Training for the three models.

Model-A and Model-B are fitted on corpus frames with a 70/30 hold-out.
Model-C learns in short shepherding episodes: three LC services and a BE job
start near their optimal allocations and the agent adjusts them one service
per step, the way the central loop does at run time.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from sklearn.model_selection import train_test_split

from .agent import ShepherdAgent
from .config import Settings
from .corpus import A_LABELS, B_LABELS
from .decision_log import DecisionLog
from .errors import InfeasibleError, TrainingDivergedError
from .features import MODEL_FIELDS, NormalizationSpec, unit_scale
from .networks import Mlp, clone_mlp, mlp_forward
from .oracle import oracle_oaa_rcliff
from .predictor import OaaPredictor, QosPredictor, oaa_targets
from .scheduler import EventKind, MultiModelScheduler
from .simenv import Allocation, Grant, ServerSpec, SimServer
from .surfaces import be_service, lc_service

logger = logging.getLogger(__name__)

TEST_SHARE = 0.3
TRAINING_LC = ("img-dnn", "xapian", "login")
TRAINING_BE = "bodytrack"
CONVERGED_BAND = 0.05


@dataclass
class MlpReport:
    losses: list[float]
    test_mae: np.ndarray
    n_train: int
    n_test: int
    extra: dict = field(default_factory=dict)

    @property
    def mae(self) -> float:
        return float(np.mean(self.test_mae)) if self.test_mae.size else float("nan")


@dataclass
class ShepherdReport:
    episode_rewards: list[float]
    rollbacks: int
    steps: int


def mlp_train(
    model: Mlp,
    X: np.ndarray,
    y: np.ndarray,
    epochs: int = 40,
    lr: float = 1e-3,
    batch_size: int = 256,
    seed: int = 0,
    test_share: float = TEST_SHARE,
) -> MlpReport:
    """
    Adam on MSE over minibatches of the training split; the test split is only scored.

    :return: per-epoch training loss and per-output MAE on the test split
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if X.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} label rows")
    if X.shape[1] != model.n_in or y.shape[1] != model.n_out:
        raise ValueError(f"data shaped {X.shape[1]} -> {y.shape[1]} does not fit network {model.dims}")
    if X.shape[0] > 1 and test_share > 0:
        X_train, X_test, y_train, y_test = train_test_split(X, y, test_size=test_share, random_state=seed)
    else:
        X_train, X_test, y_train, y_test = X, X[:0], y, y[:0]

    xt = torch.as_tensor(X_train, dtype=torch.float64)
    yt = torch.as_tensor(y_train, dtype=torch.float64)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    order = torch.Generator().manual_seed(seed)
    losses = []
    model.train()
    try:
        for epoch in range(epochs):
            perm = torch.randperm(xt.shape[0], generator=order)
            total = 0.0
            for start in range(0, xt.shape[0], batch_size):
                idx = perm[start : start + batch_size]
                optimizer.zero_grad()
                loss = F.mse_loss(model(xt[idx]), yt[idx])
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(f"loss became {float(loss)} in epoch {epoch + 1}")
                loss.backward()
                optimizer.step()
                total += float(loss) * idx.numel()
            losses.append(total / xt.shape[0])
            logger.debug("epoch %d/%d loss %.6f", epoch + 1, epochs, losses[-1])
    finally:
        model.eval()

    if len(X_test):
        pred = mlp_forward(model, X_test).numpy()
        test_mae = np.abs(pred - y_test).mean(axis=0)
    else:
        test_mae = np.zeros(0)
    return MlpReport(losses, test_mae, len(X_train), len(X_test))


def corpus_arrays(frame: pd.DataFrame, model: str) -> tuple[np.ndarray, np.ndarray]:
    labels = A_LABELS if model == "A" else B_LABELS
    return frame[list(MODEL_FIELDS[model])].to_numpy(dtype=float), frame[list(labels)].to_numpy(dtype=float)


def train_model_a(
    frame: pd.DataFrame,
    server: ServerSpec,
    settings: Settings,
    pretrained: Optional[Mlp] = None,
    epochs: Optional[int] = None,
) -> tuple[OaaPredictor, MlpReport]:
    """Model-A from a corpus frame; MAE is reported in cores, ways and bandwidth units."""
    norm = NormalizationSpec.for_server(server)
    predictor = OaaPredictor(server, norm, dropout_rate=settings.dropout_rate, seed=settings.seed)
    if pretrained is not None:
        predictor.model.copy_from(pretrained)
    X, labels = corpus_arrays(frame, "A")
    report = mlp_train(
        predictor.model,
        X,
        oaa_targets(labels, server),
        epochs=settings.mlp_epochs if epochs is None else epochs,
        lr=settings.mlp_lr,
        batch_size=settings.mlp_batch_size,
        seed=settings.seed,
    )
    if report.test_mae.size:
        report.test_mae = report.test_mae * unit_scale(server)
        report.extra = {
            "mae_cores": float(report.test_mae[0]),
            "mae_ways": float(report.test_mae[1]),
            "mae_bw": float(report.test_mae[2]),
        }
    logger.info("Model-A trained on %s: %s", server.platform_id, report.extra)
    return predictor, report


def indicator_accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    """Share of rows where predicted and true ratios agree on meeting QoS."""
    predicted = np.asarray(predicted).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if predicted.size == 0:
        return float("nan")
    return float(np.mean((predicted <= 1.0) == (labels <= 1.0)))


def train_model_b(
    frame: pd.DataFrame,
    server: ServerSpec,
    settings: Settings,
    pretrained: Optional[Mlp] = None,
    epochs: Optional[int] = None,
) -> tuple[QosPredictor, MlpReport]:
    norm = NormalizationSpec.for_server(server)
    predictor = QosPredictor(server, norm, dropout_rate=settings.dropout_rate, seed=settings.seed)
    if pretrained is not None:
        predictor.model.copy_from(pretrained)
    X, labels = corpus_arrays(frame, "B")
    report = mlp_train(
        predictor.model,
        X,
        labels,
        epochs=settings.mlp_epochs if epochs is None else epochs,
        lr=settings.mlp_lr,
        batch_size=settings.mlp_batch_size,
        seed=settings.seed,
    )
    # same split as inside mlp_train
    _, X_test, _, y_test = train_test_split(X, labels, test_size=TEST_SHARE, random_state=settings.seed)
    report.extra = {
        "mae_ratio": report.mae,
        "accuracy": indicator_accuracy(predictor.predict_ratios(X_test), y_test),
    }
    logger.info("Model-B trained on %s: %s", server.platform_id, report.extra)
    return predictor, report


def evaluate_predictor(predictor, frame: pd.DataFrame) -> dict[str, float]:
    """Scores on a corpus the model never saw, such as the held-out services."""
    if isinstance(predictor, OaaPredictor):
        X, labels = corpus_arrays(frame, "A")
        err = np.abs(predictor.predict_counts(X) - labels).mean(axis=0)
        return {"mae_cores": float(err[0]), "mae_ways": float(err[1]), "mae_bw": float(err[2])}
    X, labels = corpus_arrays(frame, "B")
    ratios = predictor.predict_ratios(X)
    return {
        "mae_ratio": float(np.abs(ratios - labels[:, 0]).mean()),
        "accuracy": indicator_accuracy(ratios, labels),
    }


def transfer_mlp(pretrained: Mlp, X: np.ndarray, y: np.ndarray, settings: Settings, epochs: int) -> tuple[Mlp, MlpReport]:
    """Fine-tune a copy of ``pretrained`` on another platform's data; zero epochs leaves it untouched."""
    model = clone_mlp(pretrained, seed=settings.seed)
    report = mlp_train(model, X, y, epochs, settings.mlp_lr, settings.mlp_batch_size, settings.seed)
    return model, report


# -- Model-C ------------------------------------------------------------------


def _episode_start(server: ServerSpec, rng: np.random.Generator, lc_names: Sequence[str], be_name: str):
    """Services with fixed loads, their oracle OAAs and a starting allocation within two units of them."""
    loads = rng.uniform(0.3, 0.7, len(lc_names))
    for _ in range(8):
        services = [lc_service(f"lc{i}", name, ((0, float(l)),)) for i, (name, l) in enumerate(zip(lc_names, loads))]
        results = [oracle_oaa_rcliff(s.surface, server, s.load_at(0), s.qos_target_ms) for s in services]
        oaa = [r.oaa for r in results]
        total = sum(oaa, Grant())
        if all(r.feasible for r in results) and server.full_grant.dominates(total):
            break
        loads = loads * 0.8
    else:
        raise InfeasibleError(f"{', '.join(lc_names)} do not fit on {server.platform_id} at any tried load")

    grants = {}
    for s, g in zip(services, oaa):
        offset = Grant(*(int(v) for v in rng.integers(-2, 3, 3)))
        grants[s.service_id] = (g + offset).clip(Grant(1, 1, 1), server.full_grant)
    alloc = Allocation(grants)
    if not server.full_grant.dominates(alloc.used()):
        alloc = Allocation({s.service_id: g for s, g in zip(services, oaa)})
    services.append(be_service("be0", be_name))
    alloc = alloc.with_be_pool(alloc.idle(server), ("be0",))
    return services, alloc, {s.service_id: g for s, g in zip(services, oaa)}


def run_episode(
    agent: ShepherdAgent,
    qos_model: QosPredictor,
    server: ServerSpec,
    settings: Settings,
    seed: int,
    lc_names: Sequence[str] = TRAINING_LC,
    be_name: str = TRAINING_BE,
    steps: Optional[int] = None,
) -> tuple[float, MultiModelScheduler]:
    """One exploring episode; returns the summed reward and the scheduler that ran it."""
    rng = np.random.default_rng(seed)
    services, alloc, oaa = _episode_start(server, rng, lc_names, be_name)
    env = SimServer(server, services, seed=seed, share_efficiency=settings.share_efficiency)
    norm = qos_model.norm
    scheduler = MultiModelScheduler(
        env,
        settings,
        None,
        qos_model,
        agent,
        norm,
        log=DecisionLog("train"),
        explore=True,
        learn_online=True,
    )
    snapshot = env.snapshot()
    scheduler.preadmit(alloc, oaa, snapshot)
    lcs = snapshot.lc_ids()
    for step in range(settings.episode_steps if steps is None else steps):
        scheduler.settle(snapshot)
        sid = lcs[step % len(lcs)]
        kind = EventKind.QOS_VIOLATION if not snapshot[sid].qos_met else EventKind.OVER_PROVISION
        scheduler.shepherd(sid, snapshot, kind)
        scheduler.end_tick()
        snapshot = env.step(settings.tick_ms)
    scheduler.settle(snapshot)
    return float(np.sum(scheduler.rewards)), scheduler


def train_shepherd(
    server: ServerSpec,
    settings: Settings,
    qos_model: QosPredictor,
    agent: Optional[ShepherdAgent] = None,
    episodes: Optional[int] = None,
    steps: Optional[int] = None,
) -> tuple[ShepherdAgent, ShepherdReport]:
    """Episodes with decaying exploration noise; a given agent is trained further in place."""
    agent = agent or ShepherdAgent.from_settings(settings)
    rewards, rollbacks, steps_taken = [], 0, 0
    for episode in range(settings.episodes if episodes is None else episodes):
        total, scheduler = run_episode(agent, qos_model, server, settings, seed=settings.seed * 100_003 + episode, steps=steps)
        rewards.append(total)
        rollbacks += scheduler.rollbacks
        agent.decay_noise()
        if (episode + 1) % 25 == 0:
            logger.info("episode %d: reward %.3f, noise sigma %.4f", episode + 1, total, agent.noise_sigma)
        steps_taken += len(scheduler.rewards)
    logger.info("Model-C trained on %s for %d episodes", server.platform_id, len(rewards))
    return agent, ShepherdReport(rewards, rollbacks, steps_taken)


def transfer_shepherd(
    pretrained: ShepherdAgent,
    server: ServerSpec,
    settings: Settings,
    qos_model: QosPredictor,
    episodes: Optional[int] = None,
    steps: Optional[int] = None,
) -> tuple[ShepherdAgent, ShepherdReport]:
    """Warm start from ``pretrained`` with a fresh experience pool, then train on ``server``."""
    agent = ShepherdAgent.from_settings(settings).warm_start(pretrained)
    return train_shepherd(server, settings, qos_model, agent, episodes, steps)


def moving_average(values: Sequence[float], window: int = 50) -> np.ndarray:
    return pd.Series(values, dtype=float).rolling(window, min_periods=1).mean().to_numpy()


def episodes_to_converge(rewards: Sequence[float], window: int = 50, band: float = CONVERGED_BAND) -> int:
    """
    First episode (1-based) from which the moving average stays within ``band``
    of its final value; the series length when it never settles earlier.
    """
    if not len(rewards):
        return 0
    avg = moving_average(rewards, window)
    final = avg[-1]
    inside = np.abs(avg - final) <= band * max(abs(final), 1e-12)
    outside = np.nonzero(~inside)[0]
    return min(len(rewards), int(outside[-1]) + 2) if outside.size else 1
