from datetime import datetime
from typing import Optional

from sqlmodel import SQLModel, Field


class RunRecord(SQLModel, table=True):
    id: Optional[int] = Field(default=None, primary_key=True)
    scenario: str = Field(index=True)
    scheduler: str = Field(index=True)
    seed: int = 0
    suite: str = Field(index=True, default="")
    converged: bool = False
    convergence_time_ms: Optional[int] = None
    emu: float = 0.0
    be_throughput: float = 0.0
    rollbacks: int = 0
    partial: bool = False
    # full RunReport as JSON
    report: str = Field(default="{}")
    output_dir: str = Field(default="")
    created_at: datetime = Field(default_factory=datetime.utcnow)


class TrainingRecord(SQLModel, table=True):
    id: Optional[int] = Field(default=None, primary_key=True)
    model: str = Field(index=True)
    platform: str = Field(index=True)
    transfer_from: Optional[str] = None
    epochs: int = 0
    mae: Optional[float] = None
    accuracy: Optional[float] = None
    # losses or episode rewards as JSON
    data: str = Field(default="{}")
    params_path: str = Field(default="")
    created_at: datetime = Field(default_factory=datetime.utcnow)
