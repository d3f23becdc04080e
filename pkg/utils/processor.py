from typing import List, Optional, Sequence

from .harness import RunReport
from .trainer import moving_average


class Processor:
    """Flattens run reports and training curves into plot-series rows."""
    window: int

    def __init__(self, window: int = 50):
        self.window = window

    @staticmethod
    def organize_reports(reports: Sequence[RunReport]) -> dict:
        """
        Group reports by scheduler
        :param reports: run reports of any number of schedulers
        :return: reports keyed by scheduler name, each list sorted by scenario
        """
        by_scheduler = {}
        for report in reports:
            by_scheduler.setdefault(report.scheduler, []).append(report)
        return {k: sorted(v, key=lambda r: (r.scenario, r.seed)) for k, v in sorted(by_scheduler.items())}

    @staticmethod
    def lc_count(report: RunReport) -> Optional[int]:
        name = report.scenario
        if name.startswith("lc") and name[2:3].isdigit():
            return int(name[2])
        return None

    @staticmethod
    def convergence_rows(reports: Sequence[RunReport]) -> List[dict]:
        return [
            {
                "series": "convergence",
                "scheduler": r.scheduler,
                "scenario": r.scenario,
                "seed": r.seed,
                "value": r.convergence_time_ms,
                "failed": r.failed,
            }
            for r in reports
        ]

    @staticmethod
    def throughput_rows(reports: Sequence[RunReport]) -> List[dict]:
        return [
            {
                "series": "be_throughput",
                "scheduler": r.scheduler,
                "scenario": r.scenario,
                "seed": r.seed,
                "n_lc": Processor.lc_count(r),
                "value": r.be_throughput,
            }
            for r in reports
            if r.be_series
        ]

    def reward_rows(self, label: str, rewards: Sequence[float]) -> List[dict]:
        avg = moving_average(rewards, self.window)
        return [
            {"series": "episode_reward", "label": label, "episode": i + 1, "value": float(v), "moving_average": float(a)}
            for i, (v, a) in enumerate(zip(rewards, avg))
        ]
