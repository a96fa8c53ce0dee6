"""Training loop: per-image gradient accumulation, Adam, on-the-fly batches.

Batches are keyed by iteration index, so results are bitwise identical with
and without the prefetch thread; prefetch simply overlaps data generation
with the optimizer step.
"""

from __future__ import annotations

import queue
import threading

import numpy as np
from threadpoolctl import threadpool_limits

from ..core import NumericError
from .data import BatchGenerator, DataGenConfig, reference_envelope_mean
from .network import (
    NetworkWeights,
    backward_network,
    forward_network,
    loss_l1,
    new_network,
)
from .optim import AdamState, TrainConfig, adam_step


def batch_step(weights: NetworkWeights, x, y):
    """Loss and parameter gradients of one batch, accumulated image by image
    (keeps per-image intermediates cache-resident on small hosts)."""
    total = {}
    loss_sum = 0.0
    n = x.shape[0]
    for i in range(n):
        pred, cache = forward_network(weights.specs, weights.tensors, x[i : i + 1], True)
        loss, g = loss_l1(pred, y[i : i + 1])
        loss_sum += loss
        grads = backward_network(
            weights.specs, weights.tensors, cache, (g / n).astype(pred.dtype)
        )
        for k, v in grads.items():
            if k in total:
                total[k] += v
            else:
                total[k] = v
    return loss_sum / n, total


def evaluate(weights: NetworkWeights, batches) -> float:
    losses = []
    for x, y in batches:
        pred, _ = forward_network(weights.specs, weights.tensors, x)
        losses.append(loss_l1(pred, y)[0])
    return float(np.mean(losses))


def _prefetching(gen, iterations, depth=2):
    q = queue.Queue(maxsize=depth)

    def worker():
        for it in range(iterations):
            q.put(gen("train", it))

    threading.Thread(target=worker, daemon=True).start()
    for _ in range(iterations):
        yield q.get()


def train(
    cfg: TrainConfig,
    gen: BatchGenerator,
    R: int = 4,
    prefetch: bool = True,
    log=None,
):
    """Train a fresh network against the generator's (envelope, mu) pairs.

    Returns (weights, history) where history rows are
    (iteration, train_loss, val_loss) with NaN val_loss between validations.
    Raises NumericError if the loss diverges past 10x its initial value.
    """
    weights = new_network(R=R, seed=cfg.seed)
    state = AdamState()
    val_batches = [gen("val", j) for j in range(cfg.validation_batches)]
    history = np.full((cfg.iterations, 3), np.nan)
    initial_loss = None
    batches = _prefetching(gen, cfg.iterations) if prefetch else (
        gen("train", it) for it in range(cfg.iterations)
    )
    # per-image GEMMs are too small for multithreaded BLAS to pay off, and a
    # single-threaded step leaves a core free for the prefetch worker
    with threadpool_limits(limits=1):
        for it, (x, y) in enumerate(batches):
            loss, grads = batch_step(weights, x, y)
            adam_step(weights.tensors, grads, state, cfg)
            if initial_loss is None:
                initial_loss = loss
            if loss > 10.0 * initial_loss:
                raise NumericError(f"training diverged at iteration {it}: loss {loss:.3g}")
            history[it, 0] = it
            if (it + 1) % cfg.validation_every == 0 or it + 1 == cfg.iterations:
                history[it, 2] = evaluate(weights, val_batches)
            history[it, 1] = loss
            if log is not None and ((it + 1) % cfg.validation_every == 0 or it == 0):
                log(f"iter {it + 1}/{cfg.iterations} train_loss={loss:.4f} "
                    f"val_loss={history[it, 2]:.4f}")
    weights.iterations = cfg.iterations
    weights.seed = cfg.seed
    return weights, history


def train_from_config(
    cfg: TrainConfig, gen_cfg: DataGenConfig, prefetch: bool = True, log=None
):
    """Convenience wrapper wiring the generator, training and the stored
    calibration constant together."""
    gen = BatchGenerator(gen_cfg, cfg.seed, cfg.batch_size)
    weights, history = train(cfg, gen, R=gen_cfg.R, prefetch=prefetch, log=log)
    weights.reference_mean = reference_envelope_mean(gen_cfg, cfg.seed)
    return weights, history
