"""Сравнение стратегий CI и CD на одном разбиении при нескольких seed."""
import logging

import pandas as pd

from config.schema import AppConfig, config_hash
from services.training import fit_model

logger = logging.getLogger(__name__)


def compare_strategies(app: AppConfig, samples, seeds) -> tuple:
    """-> (таблица seed/strategy/val_rmse_avg, сводка со средними и флагом cd_worse)"""
    rows = []
    for strategy in ("CI", "CD"):
        variant = app.model_copy(update={"model": app.model.model_copy(update={"strategy": strategy})})
        # model_copy не валидирует: CI требует d_ff, кратного 4
        variant = AppConfig.model_validate(variant.model_dump())
        digest = config_hash(variant)
        for seed in seeds:
            outcome = fit_model(variant, samples, digest, seed=seed)
            rows.append({"strategy": strategy, "seed": seed, "best_epoch": outcome.result.meta.epoch,
                         "val_rmse_avg": outcome.result.meta.val_rmse_avg, "config_hash": digest})
            logger.info(f"{strategy} seed {seed}: best average validation RMSE "
                        f"{outcome.result.meta.val_rmse_avg:.4f}")
    table = pd.DataFrame(rows)
    means = table.groupby("strategy")["val_rmse_avg"].mean()
    summary = {"ci_mean": float(means["CI"]), "cd_mean": float(means["CD"]), "seeds": list(seeds)}
    summary["cd_worse"] = summary["cd_mean"] > summary["ci_mean"]
    if summary["cd_worse"]:
        logger.warning(f"CD mean validation RMSE {summary['cd_mean']:.4f} is worse than CI "
                       f"{summary['ci_mean']:.4f}")
    return table, summary
