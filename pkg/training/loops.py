"""
Episodic training and transductive evaluation.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from config.exceptions import ConfigError, EpisodeShapeError, NonFiniteError
from episodes.models import RngStream, Split, make_rng
from episodes.sampling import sample_episode
from objective.engine import forward_backward, frozen_tensors, predict
from objective.models import ObjectiveConfig
from .models import EpisodeShape, EvalReport, OptimizerState, TrainResult, fingerprint
from .optim import sgd_step
from .serializers import TrainLogEntrySerializer, render_json

logger = logging.getLogger(__name__)


def episode_seed(seed, stream, index):
    return f"{seed}:{int(stream)}:{index}"


def evaluate(dataset, params, n_episodes, shape, prop_config, objective_config=None, seed=0,
             split=Split.TEST, stream=RngStream.EVALUATION, threads=1, n_layers=None):
    """
    Mean local-matching accuracy over `n_episodes` episodes of `split`.
    Episode i is drawn from its own generator (seed, stream, i), so the
    report does not depend on the number of worker threads.
    """
    if n_episodes < 1:
        raise ConfigError(f"eval.episodes must be >= 1, got {n_episodes}")
    dataset.check_episode_shape(split, shape.n_way, shape.k_shot, shape.m_query)
    if shape.m_query < 1:
        raise EpisodeShapeError("evaluation needs at least one query per class")
    objective_config = objective_config or ObjectiveConfig()
    depth = prop_config.layers_eval if n_layers is None else n_layers

    def run_episode(index):
        rng = make_rng(seed, stream, index)
        episode = sample_episode(dataset, split, shape.n_way, shape.k_shot, shape.m_query, rng)
        dist = predict(params, episode, prop_config, objective_config, n_layers=n_layers)
        return dist.accuracy(episode.query_labels)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            accuracies = list(pool.map(run_episode, range(n_episodes)))
    else:
        accuracies = [run_episode(index) for index in range(n_episodes)]

    if n_episodes == 1:
        logger.warning("Single evaluation episode: std and ci95 reported as 0")

    digest = fingerprint(
        params.checksum(), dataset.name, split, shape, n_episodes, seed, depth, prop_config, objective_config
    )
    report = EvalReport.from_accuracies(accuracies, digest, shape, depth)
    logger.debug(f"Evaluated {n_episodes} {shape} episodes on {split}: {report.mean:.4f} +- {report.ci95:.4f}")
    return report


def _validation_shape(dataset, config):
    shape = config.episode
    try:
        dataset.check_episode_shape(Split.VAL, shape.n_way, shape.k_shot, max(shape.m_query, 1))
    except EpisodeShapeError as exc:
        logger.warning(f"Validation disabled: {exc}")
        return None
    return EpisodeShape(shape.n_way, shape.k_shot, max(shape.m_query, 1))


def train(dataset, params, train_config, prop_config, objective_config=None, log_path=None):
    """
    Episodic SGD on the train split. Iteration i samples its episode from
    the generator (seed, TRAIN, i). The caller's params are left untouched;
    the result holds the final params and the best-validation copy.
    """
    objective_config = objective_config or ObjectiveConfig()
    shape = train_config.episode
    if shape.m_query < 1:
        raise EpisodeShapeError("training needs at least one query per class")
    dataset.check_episode_shape(Split.TRAIN, shape.n_way, shape.k_shot, shape.m_query)
    if params.global_head.n_classes != dataset.n_train_classes:
        raise ConfigError(
            f"global head has {params.global_head.n_classes} rows, dataset has "
            f"{dataset.n_train_classes} training classes"
        )

    params = params.copy()
    state = OptimizerState.for_params(params, train_config)
    result = TrainResult(params=params, best_params=None, log=[])
    val_shape = _validation_shape(dataset, train_config) if train_config.eval_every else None

    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "wb")

    logger.info(f"Training {train_config.max_iters} iterations of {shape} episodes, arm {train_config.schedule_arm}")
    try:
        for iteration in range(train_config.max_iters):
            started = time.perf_counter()
            rng = make_rng(train_config.seed, RngStream.TRAIN, iteration)
            episode = sample_episode(dataset, Split.TRAIN, shape.n_way, shape.k_shot, shape.m_query, rng)
            try:
                arm = train_config.arm_at(iteration)
                report, grads = forward_backward(params, episode, prop_config, objective_config, arm)
                lr = state.lr
                sgd_step(params, grads, state, train_config, frozen=frozen_tensors(arm))
            except NonFiniteError as exc:
                raise NonFiniteError(
                    f"iteration {iteration}: {exc}", tensor=exc.tensor,
                    episode_seed=episode_seed(train_config.seed, RngStream.TRAIN, iteration),
                ) from exc

            entry = {
                "iter": iteration,
                "lr": lr,
                "global_loss": report.global_loss,
                "local_loss": report.local_loss,
                "full_loss": report.full_loss,
                "query_acc": report.query_accuracy_local,
                "wallclock_ms": (time.perf_counter() - started) * 1000.0,
            }
            result.log.append(entry)
            if log_file is not None:
                log_file.write(render_json(TrainLogEntrySerializer, entry) + b"\n")

            if train_config.log_every and iteration % train_config.log_every == 0:
                logger.info(
                    f"iter {iteration} lr {lr:.4g} full {report.full_loss:.4f} "
                    f"global {report.global_loss:.4f} local {report.local_loss:.4f} "
                    f"acc {report.query_accuracy_local:.3f}"
                )

            done = iteration + 1
            if val_shape and (done % train_config.eval_every == 0 or done == train_config.max_iters):
                # validate exactly what best.ckpt would hold
                candidate = params.stored_copy()
                val = evaluate(
                    dataset, candidate, train_config.val_episodes, val_shape, prop_config, objective_config,
                    seed=train_config.seed, split=Split.VAL, stream=RngStream.VALIDATION,
                )
                logger.info(f"iter {done} validation accuracy {val.mean:.4f} +- {val.ci95:.4f}")
                if result.best_params is None or val.mean > result.best_val_accuracy:
                    result.best_params = candidate
                    result.best_val_accuracy = val.mean
                    result.best_iteration = done
                    logger.info(f"New best checkpoint at iter {done}")
    finally:
        if log_file is not None:
            log_file.close()

    if result.best_params is None:
        result.best_params = params.stored_copy()
        result.best_iteration = train_config.max_iters
    return result
