"""
State management for the training graph
Defines the state carried between the epoch and validation nodes
"""

import operator
from datetime import datetime
from typing import Any, Dict, List, Optional, TypedDict

from typing_extensions import Annotated


class EpochRecord(TypedDict, total=False):
    """One line of train_log.jsonl"""
    epoch: int
    lr: float
    embedding_lr: float
    loss: float
    cls: float
    attr: float
    obj: float
    seen: float
    unseen: float
    skipped: int
    anchors: int
    val_auc: Optional[float]
    finished_at: str


class TrainState(TypedDict):
    """
    State for the training graph.
    Model weights and optimizer moments live on the runner; the state holds
    only the schedule position and the per-epoch log.
    """
    # appended by the validate node
    history: Annotated[List[EpochRecord], operator.add]

    epoch: int
    total_epochs: int
    pending: Optional[EpochRecord]
    best_val_auc: Optional[float]
    best_epoch: Optional[int]


def create_initial_state(total_epochs: int) -> Dict[str, Any]:
    """Create initial state for a new training run"""
    return {
        "history": [],
        "epoch": 0,
        "total_epochs": total_epochs,
        "pending": None,
        "best_val_auc": None,
        "best_epoch": None,
    }


def finish_record(record: EpochRecord, val_auc: Optional[float]) -> EpochRecord:
    """Stamp an epoch record with its validation result"""
    done = dict(record)
    done["val_auc"] = val_auc
    done["finished_at"] = datetime.now().isoformat()
    return done


def improved(state: TrainState, val_auc: Optional[float]) -> bool:
    if val_auc is None:
        return False
    best = state.get("best_val_auc")
    return best is None or val_auc > best
