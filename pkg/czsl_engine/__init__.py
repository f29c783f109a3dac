"""
CZSL Engine - compositional zero-shot learning of attribute-object pairs
Disentangles attribute and object features with cross-image affinity and trains on
hallucinated compositions; training runs as a LangGraph workflow.
"""

try:
    from .core import CompositionNet
    from .runner import TrainingRunner
    from .state import TrainState
    from .config import RunConfig
except ImportError as e:
    # Handle graceful import failure during development
    print(f"Warning: Import error in czsl_engine package: {e}")
    CompositionNet = None
    TrainingRunner = None
    TrainState = None
    RunConfig = None

__version__ = "1.0.0"
__all__ = ["CompositionNet", "TrainingRunner", "TrainState", "RunConfig"]
