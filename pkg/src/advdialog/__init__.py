"""Task-oriented dialog agents trained with a learned (adversarial) success reward."""

from .agent import AgentConfig, Generator
from .config import ExperimentConfig, default_config, load_config
from .discriminator import Discriminator, DiscriminatorConfig
from .domain import ActionInventory, Dialog, DialogAct, Ontology, UserGoal, load_profile
from .simulator import SimulatorConfig, UserSimulator
from .trainer import AdversarialTrainer, TrainerConfig

__all__ = [
    "ActionInventory", "AdversarialTrainer", "AgentConfig", "Dialog", "DialogAct",
    "Discriminator", "DiscriminatorConfig", "ExperimentConfig", "Generator", "Ontology",
    "SimulatorConfig", "TrainerConfig", "UserGoal", "UserSimulator", "default_config",
    "load_config", "load_profile",
]
__version__ = "0.1.0"
