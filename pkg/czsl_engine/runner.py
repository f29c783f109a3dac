"""
Training runner
End-to-end training as a LangGraph workflow: train_epoch -> validate -> continue/end,
with best-val and final checkpoints and a JSON-lines epoch log.
"""

import json
import logging
import math
import shutil
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from langgraph.graph import END, StateGraph

from .autodiff import Adam, Tape, Tensor, backward
from .checkpoint import save_checkpoint
from .config import RunConfig
from .core import CompositionNet
from .data.features import FeatureStore
from .data.split import SplitSpec
from .data.triplets import TripletIndex, TripletSample, sample_triplet, stack_triplets
from .errors import ConfigError, MateNotFoundError, ProtocolError
from .evaluation import bias_sweep, auc, build_score_matrix
from .losses import LossTargets, LossWeights, compute_losses
from .state import EpochRecord, TrainState, create_initial_state, finish_record, improved

logger = logging.getLogger(__name__)

LOG_FILE = "train_log.jsonl"
FINAL_CHECKPOINT = "final.oadc"
BEST_CHECKPOINT = "best.oadc"
CONFIG_FILE = "config.txt"

Pair = Tuple[str, str]


@dataclass
class TrainResult:
    history: List[EpochRecord]
    best_val_auc: Optional[float]
    best_epoch: Optional[int]
    final_checkpoint: Path
    best_checkpoint: Path
    log_path: Path


def build_model(config: RunConfig, split: SplitSpec, word_vectors: Optional[Mapping[str, np.ndarray]],
                store: Optional[FeatureStore] = None) -> CompositionNet:
    if store is not None and store.n0 != config.model.n0:
        raise ConfigError(f"features have n0={store.n0}, config model.n0 is {config.model.n0}")
    if config.model.word_init == "file" and word_vectors is None:
        raise ConfigError("model.word_init=file needs data.embeddings")
    return CompositionNet(config.model, split.attributes(), split.objects(), word_vectors, seed=config.seed)


class TrainingRunner:
    """
    Runs the training graph for one configuration.

    The compiled graph drives epochs; the runner owns the model, the
    optimizer and the sampling generator, which nodes mutate in place.
    """

    def __init__(self, config: RunConfig, store: FeatureStore, split: SplitSpec,
                 word_vectors: Optional[Mapping[str, np.ndarray]] = None, out_dir: Optional[Path] = None):
        self.config = config
        self.store = store
        self.split = split
        self.out_dir = Path(out_dir or config.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.out_dir / LOG_FILE

        self.model = build_model(config, split, word_vectors, store)
        self.seen_pairs: List[Pair] = list(split.train_pairs)
        self.seen_index = {p: i for i, p in enumerate(self.seen_pairs)}
        self.triplet_index = TripletIndex(split.train_ids, split.labels)
        self.rng = np.random.default_rng(config.seed + 2)
        self.weights = LossWeights.from_config(config.loss)

        o = config.optim
        self.optimizer = Adam(
            self.model.parameter_groups(),
            {"model": o.lr, "embeddings": o.embedding_lr},
            weight_decay=o.weight_decay,
            betas=(o.beta1, o.beta2),
            eps=o.eps,
            milestones=o.decay_epochs,
            decay=o.decay_factor,
        )
        self.graph = self._create_graph()
        logger.info(
            f"Initialized training runner: {len(split.train_ids)} anchors, {len(self.seen_pairs)} seen pairs, "
            f"{config.train.epochs} epochs, out={self.out_dir}"
        )

    def _create_graph(self):
        """Create the training workflow."""
        workflow = StateGraph(TrainState)
        workflow.add_node("train_epoch", self._train_epoch_node)
        workflow.add_node("validate", self._validate_node)
        workflow.set_entry_point("train_epoch")
        workflow.add_edge("train_epoch", "validate")
        workflow.add_conditional_edges(
            "validate",
            self._should_continue,
            {
                "continue": "train_epoch",
                "end": END,
            },
        )
        return workflow.compile()

    # ---- nodes --------------------------------------------------------
    def _sample_epoch(self) -> Tuple[List[TripletSample], int]:
        anchors = sorted(self.split.train_ids)
        order = self.rng.permutation(len(anchors))
        triplets, skipped = [], 0
        for i in order:
            try:
                triplets.append(sample_triplet(anchors[i], self.triplet_index, self.rng))
            except MateNotFoundError:
                skipped += 1
        if anchors and skipped > self.config.train.max_skip_fraction * len(anchors):
            raise MateNotFoundError(
                f"{skipped} of {len(anchors)} anchors have no attribute or object mate "
                f"(limit {self.config.train.max_skip_fraction:.0%})"
            )
        if skipped:
            logger.warning(f"Skipped {skipped} of {len(anchors)} anchors without mates")
        return triplets, skipped

    def _targets(self, batch: Sequence[TripletSample]) -> LossTargets:
        m = self.model
        halluc = [t.hallucinated_pair() for t in batch]
        return LossTargets(
            pair=np.array([self.seen_index[(t.anchor.attr, t.anchor.obj)] for t in batch]),
            attr=np.array([m.attr_index[t.anchor.attr] for t in batch]),
            obj=np.array([m.obj_index[t.anchor.obj] for t in batch]),
            halluc_attr=np.array([m.attr_index[a] for a, _ in halluc]),
            halluc_obj=np.array([m.obj_index[o] for _, o in halluc]),
            halluc_seen=np.array([self.seen_index.get(p, -1) for p in halluc]),
            halluc_all=np.array([m.attr_index[a] * len(m.objects) + m.obj_index[o] for a, o in halluc]),
        )

    def train_step(self, batch: Sequence[TripletSample]) -> Dict[str, float]:
        """One optimizer step on a batch of triplets; returns the component values."""
        raw, raw_attr, raw_obj = stack_triplets(self.store, batch)
        targets = self._targets(batch)
        self.optimizer.zero_grad()
        with Tape() as tape:
            seen_anchors = self.model.pair_anchors(self.seen_pairs, train_mode=True)
            outputs = self.model.forward_triplets(Tensor(raw), Tensor(raw_attr), Tensor(raw_obj), train_mode=True)
            loss, components = compute_losses(
                self.model, outputs, targets, seen_anchors, self.weights,
                unseen_mode=self.config.loss.unseen_anchors, train_mode=True,
            )
        backward(tape, loss)
        self.optimizer.step()
        values = {name: float(t.item()) for name, t in components.items()}
        values["loss"] = float(loss.item())
        return values

    def _train_epoch_node(self, state: TrainState) -> Dict[str, Any]:
        epoch = state["epoch"]
        self.optimizer.set_epoch(epoch)
        triplets, skipped = self._sample_epoch()
        batch_size = self.config.train.batch_size
        sums: Dict[str, float] = defaultdict(float)
        for start in range(0, len(triplets), batch_size):
            batch = triplets[start:start + batch_size]
            for name, value in self.train_step(batch).items():
                sums[name] += value * len(batch)

        count = max(len(triplets), 1)
        record: EpochRecord = {
            "epoch": epoch,
            "lr": self.optimizer.current_lr("model"),
            "embedding_lr": self.optimizer.current_lr("embeddings"),
            "skipped": skipped,
            "anchors": len(triplets),
        }
        for name in ("loss", "cls", "attr", "obj", "seen", "unseen"):
            record[name] = sums[name] / count
        logger.info(
            f"Epoch {epoch}: lr={record['lr']:.3g} loss={record['loss']:.4f} cls={record['cls']:.4f} "
            f"attr={record['attr']:.4f} obj={record['obj']:.4f} seen={record['seen']:.4f} "
            f"unseen={record['unseen']:.4f} skipped={skipped}"
        )
        return {"epoch": epoch + 1, "pending": record}

    def validation_auc(self) -> Optional[float]:
        """Val AUC@1, or None when the val split cannot be scored under the generalized protocol."""
        if not self.split.val_ids:
            return None
        try:
            sm = build_score_matrix(self.model, self.store, self.split, "val", workers=self.config.eval.workers)
            return auc(bias_sweep(sm, 1))
        except ProtocolError as e:
            logger.warning(f"Skipping validation: {e}")
            return None

    def _validate_node(self, state: TrainState) -> Dict[str, Any]:
        epoch = state["epoch"]
        every = max(self.config.train.validate_every, 1)
        last = epoch >= state["total_epochs"]
        val_auc = self.validation_auc() if (epoch % every == 0 or last) else None

        record = finish_record(state["pending"], val_auc)
        with self.log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

        update: Dict[str, Any] = {"history": [record], "pending": None}
        if improved(state, val_auc):
            update["best_val_auc"] = val_auc
            update["best_epoch"] = record["epoch"]
            self._save(self.out_dir / BEST_CHECKPOINT, record["epoch"], val_auc)
            logger.info(f"New best val AUC@1 {val_auc:.4f} at epoch {record['epoch']}")
        return update

    def _should_continue(self, state: TrainState) -> Literal["continue", "end"]:
        if state["epoch"] >= state["total_epochs"]:
            return "end"
        return "continue"

    # ---- driver -------------------------------------------------------
    def _save(self, path: Path, epoch: Optional[int], val_auc: Optional[float]) -> None:
        meta = {"epoch": epoch, "val_auc": None if val_auc is None or math.isnan(val_auc) else val_auc}
        save_checkpoint(path, self.model, self.config, self.seen_pairs, meta)

    def run(self) -> TrainResult:
        epochs = self.config.train.epochs
        self.config.save(self.out_dir / CONFIG_FILE)
        if self.log_path.exists():
            self.log_path.unlink()

        state: Dict[str, Any] = create_initial_state(epochs)
        if epochs > 0:
            state = self.graph.invoke(state, {"recursion_limit": 2 * epochs + 5})

        final_path = self.out_dir / FINAL_CHECKPOINT
        best_path = self.out_dir / BEST_CHECKPOINT
        self._save(final_path, epochs - 1 if epochs else None, state.get("best_val_auc"))
        if state.get("best_val_auc") is None:
            shutil.copyfile(final_path, best_path)

        logger.info(
            f"Training finished after {epochs} epochs; best val AUC@1 "
            f"{state.get('best_val_auc')} at epoch {state.get('best_epoch')}"
        )
        return TrainResult(
            history=list(state.get("history", [])),
            best_val_auc=state.get("best_val_auc"),
            best_epoch=state.get("best_epoch"),
            final_checkpoint=final_path,
            best_checkpoint=best_path,
            log_path=self.log_path,
        )
