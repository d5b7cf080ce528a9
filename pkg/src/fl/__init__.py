from .client import ClientState, contribute, personalize, train_pass
from .engine import RoundReport, SchemeResult, run_round, run_scheme
from .schemes import TrainingScheme
from .server import CloudServer, ParamUpload, ServerState
from .task import FederatedTask

__all__ = [
    "ClientState",
    "CloudServer",
    "FederatedTask",
    "ParamUpload",
    "RoundReport",
    "SchemeResult",
    "ServerState",
    "TrainingScheme",
    "contribute",
    "personalize",
    "run_round",
    "run_scheme",
    "train_pass",
]
