from .models import RunRecord
from .models import TrainingRecord
from .database import init_db
from .database import add_records
from .database import list_runs
from .database import list_trainings
