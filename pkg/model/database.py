from typing import Optional, Sequence

from sqlalchemy.engine import Engine
from sqlmodel import SQLModel, Session, col, create_engine, select

from .models import RunRecord, TrainingRecord

connect_args = {"check_same_thread": False}


def init_db(url: str) -> Engine:
    engine = create_engine(url, echo=False, connect_args=connect_args if url.startswith("sqlite") else {})
    SQLModel.metadata.create_all(engine)
    return engine


def add_records(engine: Engine, records: Sequence[SQLModel]) -> None:
    with Session(engine) as session:
        for record in records:
            session.add(record)
        session.commit()


def list_runs(engine: Engine, scenario: Optional[str] = None, suite: Optional[str] = None) -> list[RunRecord]:
    statement = select(RunRecord)
    if scenario is not None:
        statement = statement.where(RunRecord.scenario == scenario)
    if suite is not None:
        statement = statement.where(RunRecord.suite == suite)
    with Session(engine) as session:
        return list(session.exec(statement.order_by(col(RunRecord.id))).all())


def list_trainings(engine: Engine, model: Optional[str] = None) -> list[TrainingRecord]:
    statement = select(TrainingRecord)
    if model is not None:
        statement = statement.where(TrainingRecord.model == model)
    with Session(engine) as session:
        return list(session.exec(statement.order_by(col(TrainingRecord.id))).all())
