"""
Schedule and component ablations, and the alpha and episode-shape sweeps.

Every arm starts from the same initial parameters (the INIT stream of the
training seed) and is scored on the same evaluation episodes.
"""
import dataclasses
import logging

import pandas as pd

from config.exceptions import EpisodeShapeError
from episodes.models import Split
from networks.layers import build_params
from objective.engine import arm_weights
from objective.models import ScheduleArm
from .loops import evaluate, train
from .models import EpisodeShape

logger = logging.getLogger(__name__)

SCHEDULES = (
    ScheduleArm.COOPERATIVE,
    ScheduleArm.PRETRAIN_FINETUNE,
    ScheduleArm.LOCAL_ONLY,
    ScheduleArm.GLOBAL_ONLY,
)

TABLE_COLUMNS = ["arm", "global_metric", "local_metric", "alpha", "layers_eval", "repulsion", "mean", "std", "ci95"]


def with_metrics(objective_config, global_metric, local_metric):
    return dataclasses.replace(
        objective_config,
        global_metric=dataclasses.replace(objective_config.global_metric, kind=str(global_metric)),
        local_metric=dataclasses.replace(objective_config.local_metric, kind=str(local_metric)),
    )


def ablation_arms(experiment):
    """(name, train config, propagation config, objective config) for every arm."""
    base_train, base_prop, base_objective = experiment.train, experiment.propagation, experiment.objective
    arms = []
    for global_metric, local_metric in experiment.metric_pairs:
        objective = with_metrics(base_objective, global_metric, local_metric)
        for schedule in SCHEDULES:
            arms.append((
                str(schedule),
                dataclasses.replace(base_train, schedule_arm=schedule),
                base_prop,
                objective,
            ))
    cooperative = dataclasses.replace(base_train, schedule_arm=ScheduleArm.COOPERATIVE)
    arms.append(("no_repulsion", cooperative, dataclasses.replace(base_prop, repulsion_enabled=False), base_objective))
    arms.append(("inductive", cooperative, dataclasses.replace(base_prop, layers_train=0, layers_eval=0),
                 base_objective))
    return arms


def run_arm(dataset, experiment, name, train_config, prop_config, objective_config):
    params = build_params(
        experiment.model, dataset.dim, dataset.n_train_classes, train_config.seed, prop_config.n_projections
    )
    logger.info(f"Arm {name}: training {train_config.max_iters} iterations")
    result = train(dataset, params, train_config, prop_config, objective_config)
    report = evaluate(
        dataset, result.best_params, experiment.eval_episodes, experiment.eval_shape, prop_config,
        objective_config, seed=experiment.eval_seed, threads=experiment.threads,
    )
    logger.info(f"Arm {name}: {report.mean:.4f} +- {report.ci95:.4f}")
    return comparison_row(name, train_config, prop_config, objective_config, report)


def comparison_row(name, train_config, prop_config, objective_config, report):
    arm = train_config.schedule_arm
    alpha = objective_config.alpha
    if arm != ScheduleArm.PRETRAIN_FINETUNE:
        alpha = arm_weights(arm, alpha)[1]
    return {
        "arm": name,
        "global_metric": str(objective_config.global_metric.kind),
        "local_metric": str(objective_config.local_metric.kind),
        "alpha": float(alpha),
        "layers_eval": prop_config.layers_eval,
        "repulsion": prop_config.repulsion_enabled,
        "report": report,
    }


def comparison_table(rows):
    """One row per arm with the report's summary statistics."""
    records = [
        {**{key: row[key] for key in TABLE_COLUMNS[:6]},
         "mean": row["report"].mean, "std": row["report"].std, "ci95": row["report"].ci95}
        for row in rows
    ]
    return pd.DataFrame.from_records(records, columns=TABLE_COLUMNS)


def run_ablation(dataset, experiment):
    """
    Four training schedules per configured metric pair, plus the
    no-repulsion and inductive (zero propagation layers) components.
    """
    rows = [run_arm(dataset, experiment, *arm) for arm in ablation_arms(experiment)]
    return rows, comparison_table(rows)


def sweep_alpha(dataset, experiment, alphas=None):
    alphas = experiment.alphas if alphas is None else alphas
    train_config = dataclasses.replace(experiment.train, schedule_arm=ScheduleArm.COOPERATIVE)
    rows = []
    for alpha in alphas:
        objective = dataclasses.replace(experiment.objective, alpha=float(alpha))
        rows.append(run_arm(dataset, experiment, f"alpha={alpha:g}", train_config, experiment.propagation, objective))
    return rows, comparison_table(rows)


def sweep_shape(dataset, params, experiment, n_ways=None, m_queries=None):
    """
    Evaluate one trained model while varying test classes per episode and
    queries per class. Shapes the test split cannot supply are skipped.
    """
    n_ways = experiment.n_ways if n_ways is None else n_ways
    m_queries = experiment.m_queries if m_queries is None else m_queries
    rows = []
    for n_way in n_ways:
        for m_query in m_queries:
            shape = EpisodeShape(int(n_way), experiment.eval_shape.k_shot, int(m_query))
            try:
                dataset.check_episode_shape(Split.TEST, shape.n_way, shape.k_shot, shape.m_query)
            except EpisodeShapeError as exc:
                logger.warning(f"Skipping {shape}: {exc}")
                continue
            report = evaluate(
                dataset, params, experiment.eval_episodes, shape, experiment.propagation, experiment.objective,
                seed=experiment.eval_seed, threads=experiment.threads,
            )
            logger.info(f"{shape}: {report.mean:.4f} +- {report.ci95:.4f}")
            rows.append(comparison_row(str(shape), experiment.train, experiment.propagation,
                                       experiment.objective, report))
    frame = comparison_table(rows)
    frame.insert(1, "n_way", [row["report"].n_way for row in rows])
    frame.insert(2, "m_query", [row["report"].m_query for row in rows])
    return rows, frame
