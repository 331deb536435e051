"""Mini-batch training of the survival network with best-epoch selection."""
import copy
import logging
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd

from cases.preprocessing import augment_scale
from evaluation.evaluate import predict_days
from evaluation.metrics import ClassThresholds, classification_accuracy
from helpers import DataError, InvariantError
from network.model import forward, forward_regression
from survival.head import mae_loss, total_loss
from training.optimizer import OptimizerState, adam_step


logger = logging.getLogger(__name__)


def stack_batch(cases):
    """Stack cases into (images (B, 4, D, D, D), ages (B,), labels (B,))."""
    images = np.stack([case.volumes for case in cases])
    ages = np.array([case.age_years for case in cases], dtype=np.float64)
    labels = np.array(
        [np.nan if case.survival_days is None else case.survival_days for case in cases], dtype=np.float64
    )
    return images, ages, labels


def batch_loss(model, cases, config, mode="train"):
    """
    Loss of one batch: MAE plus alpha times the monotonic penalty for the
    post-hoc head, MAE alone for the regression head.
    """
    images, ages, labels = stack_batch(cases)
    if np.isnan(labels).any():
        raise DataError("Training cases need survival labels")
    if model.config.head == "posthoc":
        output = forward(model, images, ages, mode=mode)
        return total_loss(output.y_hat, labels, output.p, config.alpha)
    return mae_loss(forward_regression(model, images, ages, mode=mode), labels)


def train_epoch(model, cases, config, rng, optimizer_state):
    """
    One pass over the training cases.

    The cases are shuffled with rng, cut into full batches (a short final
    batch is dropped), scaled by a random intensity factor each and used for
    one Adam step per batch.

    Args:
        model (PosthocModel): Model to train in place.
        cases (list[CaseRecord]): Prepared (normalized) training cases.
        config (TrainConfig): Hyperparameters.
        rng (numpy.random.Generator): Shuffling and augmentation stream.
        optimizer_state (OptimizerState): Adam state, updated in place.

    Returns:
        list[float]: Loss of every batch.
    """
    if len(cases) < config.batch_size:
        raise DataError(f"{len(cases)} training cases are fewer than one batch of {config.batch_size}")

    order = rng.permutation(len(cases))
    n_batches = len(cases) // config.batch_size
    params = model.parameters()
    losses = []

    for b in range(n_batches):
        indices = order[b * config.batch_size : (b + 1) * config.batch_size]
        batch = [augment_scale(cases[i], rng) for i in indices]
        loss = batch_loss(model, batch, config, mode="train")
        if not np.isfinite(loss.item()):
            raise InvariantError(f"Loss became {loss.item()} at batch {b + 1}")
        loss.backward()
        adam_step(params, optimizer_state, config)
        losses.append(loss.item())
        logger.debug("batch %d/%d loss %.4f", b + 1, n_batches, losses[-1])

    return losses


class FitResult(NamedTuple):
    model: object
    history: pd.DataFrame
    optimizer_state: OptimizerState
    best_epoch: int


def fit(
    model,
    train_cases,
    val_cases,
    config,
    thresholds=None,
    rng=None,
    optimizer_state=None,
    start_epoch=1,
    val_metric_fn=None,
):
    """
    Train for config.epochs epochs and keep the epoch with the lowest
    validation MAE (the first one on ties).

    Args:
        model (PosthocModel): Model to train in place.
        train_cases (list[CaseRecord]): Prepared training cases.
        val_cases (list[CaseRecord]): Prepared validation cases, disjoint from training.
        config (TrainConfig): Hyperparameters.
        thresholds (ClassThresholds | None): Survival class boundaries for accuracy.
        rng (numpy.random.Generator | None): Defaults to a generator seeded with config.seed.
        optimizer_state (OptimizerState | None): Resume from this Adam state.
        start_epoch (int): Number of the first epoch run (for resumed training).
        val_metric_fn (callable | None): (model, epoch) -> validation MAE, replacing
            the built-in evaluation.

    Returns:
        FitResult: Best model copy, per-epoch history, its Adam state and epoch number.
    """
    thresholds = thresholds or ClassThresholds()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    optimizer_state = optimizer_state if optimizer_state is not None else OptimizerState()
    val_labels = np.array([case.survival_days for case in val_cases], dtype=np.float64)

    records = []
    best: Optional[tuple] = None

    for epoch in range(start_epoch, start_epoch + config.epochs):
        losses = train_epoch(model, train_cases, config, rng, optimizer_state)

        val_mae = float("nan")
        val_accuracy = None
        if val_cases:
            predictions = predict_days(model, val_cases, batch_size=config.batch_size)
            val_mae = float(np.mean(np.abs(predictions - val_labels)))
            val_accuracy = classification_accuracy(predictions, val_labels, thresholds)
        if val_metric_fn is not None:
            val_mae = float(val_metric_fn(model, epoch))

        records.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_mae": val_mae,
                "val_accuracy": val_accuracy,
            }
        )
        logger.info(
            "epoch %d train_loss %.3f val_mae %.3f val_accuracy %s",
            epoch,
            records[-1]["train_loss"],
            val_mae,
            "n/a" if val_accuracy is None else f"{val_accuracy:.3f}",
        )

        if best is None or val_mae < best[0]:
            best = (val_mae, epoch, copy.deepcopy(model), copy.deepcopy(optimizer_state))

    _, best_epoch, best_model, best_state = best
    return FitResult(best_model, pd.DataFrame(records), best_state, best_epoch)


def write_history(history, path, append=False):
    """One JSON record per epoch, one per line; append continues a resumed run's file."""
    text = history.to_json(orient="records", lines=True, double_precision=15)
    if text and not text.endswith("\n"):
        text += "\n"
    with open(path, "a" if append else "w", encoding="utf-8") as handle:
        handle.write(text)
