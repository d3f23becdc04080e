from .config import Settings
from .config import load_settings
from .errors import SchedSimError
from .errors import ConfigError
from .errors import PartitionError
from .errors import InfeasibleError
from .errors import ParamsFileError
from .errors import TrainingDivergedError
from .errors import MissingModelError
from .errors import ScenarioFailure
from .simenv import Allocation
from .simenv import Grant
from .simenv import ServerSpec
from .simenv import SimServer
from .surfaces import PLATFORMS
from .oracle import oracle_oaa_rcliff
from .features import NormalizationSpec
from .predictor import OaaPredictor
from .predictor import QosPredictor
from .agent import ShepherdAgent
from .scheduler import MultiModelScheduler
from .baselines import HeuristicScheduler
from .baselines import BoScheduler
from .corpus import generate_corpus
from .corpus import read_corpus
from .trainer import train_model_a
from .trainer import train_model_b
from .trainer import train_shepherd
from .trainer import transfer_shepherd
from .trainer import evaluate_predictor
from .trainer import episodes_to_converge
from .harness import ModelBundle
from .harness import RunReport
from .harness import load_scenario
from .harness import build_scenario
from .harness import run_scenario
from .harness import run_suite
from .harness import summarize
from .harness import load_report
from .processor import Processor
