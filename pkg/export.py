"""
Plot-ready series as JSON lines.

Every row carries a ``series`` field:
  convergence    scheduler, scenario, seed, value (ms or null), failed
  be_throughput  scheduler, scenario, seed, n_lc, value
  episode_reward label, episode, value, moving_average
"""
import logging
import os
from typing import Optional, Sequence

import pandas as pd

from utils import Processor, RunReport

logger = logging.getLogger(__name__)

PLOT_COLUMNS = ["series", "scheduler", "scenario", "seed", "n_lc", "label", "episode", "value", "moving_average", "failed"]


def emit_plot_data(
    path: str,
    reports: Sequence[RunReport] = (),
    episode_rewards: Optional[dict[str, Sequence[float]]] = None,
    window: int = 50,
) -> int:
    """Write all series to ``path``; returns the row count. No input gives an empty file."""
    processor = Processor(window)
    ordered = [r for group in processor.organize_reports(reports).values() for r in group]
    rows = processor.convergence_rows(ordered) + processor.throughput_rows(ordered)
    for label, rewards in sorted((episode_rewards or {}).items()):
        rows += processor.reward_rows(label, rewards)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    if not rows:
        open(path, "w").close()
        logger.info("No series to emit, %s left empty", path)
        return 0
    df = pd.DataFrame(rows)
    df = df[[c for c in PLOT_COLUMNS if c in df.columns]]
    df.to_json(path, orient="records", lines=True)
    logger.info("%d plot rows written to %s", len(df), path)
    return len(df)


def read_plot_data(path: str) -> pd.DataFrame:
    if os.path.getsize(path) == 0:
        return pd.DataFrame(columns=PLOT_COLUMNS)
    return pd.read_json(path, orient="records", lines=True)
