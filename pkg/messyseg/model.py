"""
BiLSTM-CRF Segmentation Model
Composes features, encoder layers and the CRF; owns training, early stopping and prediction
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from messyseg.checkpoint import CHECKPOINT_VERSION, Checkpoint, load_checkpoint
from messyseg.config import ModelConfig
from messyseg.corpus import Document
from messyseg.crf import CrfParams, Segment, TagSet, extract_segments, nll_loss, viterbi
from messyseg.errors import CheckpointError, TrainingError, UsageError
from messyseg.evaluation import corpus_pk
from messyseg.features import (
    ContextualProvider,
    StaticEmbeddingTable,
    build_contextual_provider,
    casing_matrix,
    distance_vectors,
    load_static_embeddings,
    scalar_mix,
    scalar_mix_backward,
)
from messyseg.layers import (
    BiLSTM,
    CharCNN,
    CharVocab,
    EmissionProjection,
    assemble_token_embedding,
    dropout,
    split_token_gradient,
)
from messyseg.numerics import DTYPE, OptimizerState, Parameter, Tensor, check_unique_names, derived_rng, nadam_step

logger = logging.getLogger(__name__)


@dataclass
class DocFeatures:
    """Frozen per-document inputs; only the learned layers run per step"""

    doc_id: str
    char_ids: np.ndarray
    char_lengths: np.ndarray
    casing: Tensor
    static: Optional[Tensor] = None
    contextual: Optional[Tensor] = None
    distance: Optional[Tensor] = None
    gold: Optional[np.ndarray] = None

    @property
    def length(self) -> int:
        return self.casing.shape[0]


@dataclass
class ForwardCache:
    char_cache: object
    mixed_input: Optional[Tensor]
    dropout_mask: Optional[Tensor]
    lstm_caches: object
    hidden: Tensor
    piece_dims: List[int]


@dataclass
class Prediction:
    labels: List[str]
    segments: List[Segment]


def build_static_table(config: ModelConfig) -> StaticEmbeddingTable:
    """Static embeddings from the configured file, or a hashed-only table"""
    if config.embeddings_path:
        return load_static_embeddings(config.embeddings_path, oov_policy=config.oov_policy)
    return StaticEmbeddingTable(config.static_dim, oov_policy=config.oov_policy)


class SegmentationModel:
    """Character CNN + static/contextual embeddings + BiLSTM + CRF tagger"""

    def __init__(
        self,
        config: ModelConfig,
        char_vocab: CharVocab,
        static_table: Optional[StaticEmbeddingTable] = None,
        contextual: Optional[ContextualProvider] = None,
    ):
        """
        Initialize the model with seeded random weights

        Args:
            config: Model configuration
            char_vocab: Character vocabulary built from the training split
            static_table: Static embedding table (built from config when omitted)
            contextual: Contextual layer provider (built from config when omitted)
        """
        self.static_table = static_table if static_table is not None else build_static_table(config)
        if self.static_table.dimension != config.static_dim:
            logger.warning(
                f"Static embeddings have dimension {self.static_table.dimension}; "
                f"overriding static_dim={config.static_dim}"
            )
            update = {"static_dim": self.static_table.dimension}
            if config.contextual_provider in ("degenerate", "window"):
                update["contextual_dim"] = self.static_table.dimension
            config = config.model_copy(update=update)

        self.contextual: Optional[ContextualProvider] = None
        if config.use_contextual:
            self.contextual = contextual if contextual is not None else build_contextual_provider(
                config.contextual_provider,
                self.static_table,
                config.contextual_layers,
                config.contextual_sidecar,
            )
            if (self.contextual.num_layers, self.contextual.dimension) != (
                config.contextual_layers,
                config.contextual_dim,
            ):
                raise UsageError(
                    f"contextual provider yields {self.contextual.num_layers}x{self.contextual.dimension} "
                    f"layers, config expects {config.contextual_layers}x{config.contextual_dim}"
                )

        self.config = config
        self.tagset = TagSet(config.scheme, config.segment_class)
        self.char_vocab = char_vocab

        rng = derived_rng(config.seed, "init")
        self.char_cnn = CharCNN(
            len(char_vocab), config.char_dim, config.char_filters, config.char_kernel, rng, config.init_scale
        )
        self.mix_weights: Optional[Parameter] = None
        self.gamma: Optional[Parameter] = None
        if config.use_contextual:
            self.mix_weights = Parameter("scalar_mix.weights", np.zeros(config.contextual_layers, dtype=DTYPE))
            self.gamma = Parameter("scalar_mix.gamma", np.ones(1, dtype=DTYPE))
        self.bilstm = BiLSTM(config.token_dim, config.hidden_size, rng, config.init_scale, config.forget_bias)
        self.projection = EmissionProjection(self.bilstm.output_dim, len(self.tagset), rng, config.init_scale)
        self.crf = CrfParams(len(self.tagset))
        self._params = check_unique_names(self._collect_parameters())

    def _collect_parameters(self) -> List[Parameter]:
        params = list(self.char_cnn.parameters())
        if self.mix_weights is not None:
            params += [self.mix_weights, self.gamma]
        params += self.bilstm.parameters()
        params += self.projection.parameters()
        params += self.crf.parameters()
        return params

    def parameters(self) -> List[Parameter]:
        return list(self._params)

    def zero_grad(self):
        for param in self._params:
            param.zero_grad()

    def featurize(self, doc: Document, with_gold: bool = True) -> DocFeatures:
        """
        Compute the frozen inputs of a document

        Args:
            doc: Document with at least one token
            with_gold: Encode gold labels (they must belong to the model's tag set)

        Returns:
            DocFeatures ready for forward()
        """
        if not doc.tokens:
            raise UsageError(f"document {doc.doc_id} has no tokens")
        config = self.config
        ids, lengths = self.char_vocab.encode_batch([t.text for t in doc.tokens])
        features = DocFeatures(
            doc_id=doc.doc_id,
            char_ids=ids,
            char_lengths=lengths,
            casing=casing_matrix(doc.tokens),
        )
        if config.use_static:
            features.static = self.static_table.embed(doc.tokens)
        if config.use_contextual:
            features.contextual = self.contextual.layers(doc)
        if config.use_distance:
            features.distance = distance_vectors(doc.tokens, config.distance_divisor)
        if with_gold and doc.labels is not None:
            features.gold = self.tagset.encode(doc.labels)
        return features

    def forward(
        self, features: DocFeatures, mode: str = "infer", rng: Optional[np.random.Generator] = None
    ) -> Tuple[Tensor, ForwardCache]:
        """
        Emission scores for one document

        Args:
            features: Output of featurize()
            mode: "train" (dropout active) or "infer"
            rng: Dropout generator, required in train mode when dropout > 0

        Returns:
            ((n, |tagset|) emissions, cache for backward)
        """
        if mode not in ("train", "infer"):
            raise UsageError(f"unknown forward mode: {mode}")
        char_features, char_cache = self.char_cnn.forward(features.char_ids, features.char_lengths)
        mixed = None
        if self.mix_weights is not None:
            mixed = scalar_mix(features.contextual, self.mix_weights.value, float(self.gamma.value[0]))
        pieces = [char_features, features.static, mixed, features.casing, features.distance]
        piece_dims = [p.shape[1] for p in pieces if p is not None]
        token_embeddings = assemble_token_embedding(pieces, self.config.token_dim)
        dropped, mask = dropout(token_embeddings, self.config.dropout, mode == "train", rng)
        hidden, lstm_caches = self.bilstm.forward(dropped)
        emissions = self.projection.forward(hidden)
        cache = ForwardCache(char_cache, mixed, mask, lstm_caches, hidden, piece_dims)
        return emissions, cache

    def backward(self, d_emissions: Tensor, features: DocFeatures, cache: ForwardCache):
        """Accumulate gradients of every parameter from d(emissions)"""
        d_hidden = self.projection.backward(d_emissions, cache.hidden)
        d_tokens = self.bilstm.backward(d_hidden, cache.lstm_caches)
        if cache.dropout_mask is not None:
            d_tokens = d_tokens * cache.dropout_mask
        grads = iter(split_token_gradient(d_tokens, cache.piece_dims))
        self.char_cnn.backward(next(grads), cache.char_cache)
        if features.static is not None:
            next(grads)
        if self.mix_weights is not None:
            d_mix, d_gamma = scalar_mix_backward(
                features.contextual, self.mix_weights.value, float(self.gamma.value[0]), next(grads)
            )
            self.mix_weights.grad += d_mix
            self.gamma.grad += d_gamma

    def loss_and_grad(
        self, features: DocFeatures, mode: str = "train", rng: Optional[np.random.Generator] = None
    ) -> float:
        """Document NLL; gradients are accumulated into the parameters"""
        if features.gold is None:
            raise UsageError(f"document {features.doc_id} has no gold labels")
        emissions, cache = self.forward(features, mode, rng)
        loss, d_emissions = nll_loss(emissions, self.crf, features.gold)
        self.backward(d_emissions, features, cache)
        return loss

    def loss(self, features: DocFeatures) -> float:
        """Inference-mode document NLL without touching gradients"""
        emissions, _ = self.forward(features, "infer")
        grads = [p.grad.copy() for p in self.crf.parameters()]
        loss, _ = nll_loss(emissions, self.crf, features.gold)
        for param, grad in zip(self.crf.parameters(), grads):
            param.grad[...] = grad
        return loss

    def decode(self, features: DocFeatures) -> List[str]:
        emissions, _ = self.forward(features, "infer")
        path, _ = viterbi(emissions, self.crf)
        return self.tagset.decode(path)

    def predict(self, doc: Document) -> Prediction:
        """Viterbi labels and extracted segments for one document"""
        labels = self.decode(self.featurize(doc, with_gold=False))
        return Prediction(labels, extract_segments(labels))

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(
            version=CHECKPOINT_VERSION,
            config=self.config.model_dump(mode="json"),
            tagset=self.tagset.to_dict(),
            chars=self.char_vocab.to_list(),
            tensors={p.name: p.value.copy() for p in self._params},
        )

    @classmethod
    def from_checkpoint(
        cls,
        checkpoint: Checkpoint,
        static_table: Optional[StaticEmbeddingTable] = None,
        contextual: Optional[ContextualProvider] = None,
    ) -> "SegmentationModel":
        """Rebuild a model and copy the stored tensors into it"""
        try:
            config = ModelConfig(**checkpoint.config)
        except ValidationError as e:
            raise CheckpointError(f"stored configuration is invalid: {str(e)}", location="manifest config")
        model = cls(config, CharVocab(checkpoint.chars), static_table, contextual)
        if model.tagset.to_dict() != checkpoint.tagset:
            raise CheckpointError(f"tag set {checkpoint.tagset} disagrees with config {model.tagset.to_dict()}")
        expected = {p.name: p for p in model.parameters()}
        if set(expected) != set(checkpoint.tensors):
            raise CheckpointError(
                f"tensor names {sorted(checkpoint.tensors)} do not match model parameters {sorted(expected)}"
            )
        for name, value in checkpoint.tensors.items():
            param = expected[name]
            if param.value.shape != value.shape:
                raise CheckpointError(f"shape {value.shape} does not match {param.value.shape}", location=name)
            param.value[...] = value
        return model

    def snapshot(self) -> Dict[str, Tensor]:
        return {p.name: p.value.copy() for p in self._params}

    def restore(self, snapshot: Dict[str, Tensor]):
        for param in self._params:
            param.value[...] = snapshot[param.name]


def predict(doc: Document, model: SegmentationModel) -> Prediction:
    """Labels and segments of a document under a trained model"""
    return model.predict(doc)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_pk: Optional[float]
    dev_loss: Optional[float]
    improved: bool


@dataclass
class TrainingResult:
    model: SegmentationModel
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    protocol: str = "early_stopping"
    stop_reason: str = ""

    @property
    def checkpoint(self) -> Checkpoint:
        return self.model.to_checkpoint()

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "epoch": r.epoch,
                    "train_loss": r.train_loss,
                    "dev_pk": r.dev_pk,
                    "dev_loss": r.dev_loss,
                    "improved": r.improved,
                }
                for r in self.history
            ],
            columns=["epoch", "train_loss", "dev_pk", "dev_loss", "improved"],
        )


def _check_labelled(docs: Sequence[Document], tagset: TagSet, split: str):
    for doc in docs:
        if doc.labels is None:
            raise UsageError(f"{split} document {doc.doc_id} has no labels")
        tagset.encode(doc.labels)


def evaluate_dev(model: SegmentationModel, features: Sequence[DocFeatures]) -> Tuple[Optional[float], float]:
    """Mean dev P_k (None when no document fits the window) and summed dev NLL"""
    gold, predicted = [], []
    dev_loss = 0.0
    for item in features:
        gold.append(model.tagset.decode(item.gold))
        predicted.append(model.decode(item))
        dev_loss += model.loss(item)
    return corpus_pk(gold, predicted, model.config.segment_class), dev_loss


def _improves(pk: Optional[float], loss: float, best_pk: Optional[float], best_loss: float) -> bool:
    if pk is not None and best_pk is not None and not math.isclose(pk, best_pk, abs_tol=1e-12):
        return pk < best_pk
    return loss < best_loss


def train(
    train_docs: Sequence[Document],
    dev_docs: Sequence[Document],
    config: ModelConfig,
    static_table: Optional[StaticEmbeddingTable] = None,
    contextual: Optional[ContextualProvider] = None,
) -> TrainingResult:
    """
    Fit a model with minibatch Nadam on the summed document NLL

    With protocol "early_stopping" the model is selected on dev P_k (dev NLL breaks
    ties) and training stops after `patience` epochs without improvement. With
    protocol "combined" the model trains on train+dev for exactly max_epochs epochs.

    Args:
        train_docs: Labelled training documents
        dev_docs: Labelled development documents (nonempty for early stopping)
        config: Model configuration
        static_table: Optional preloaded static embeddings
        contextual: Optional contextual provider

    Returns:
        TrainingResult holding the selected model and the per-epoch history
    """
    if not train_docs:
        raise UsageError("training corpus is empty")
    tagset = TagSet(config.scheme, config.segment_class)
    _check_labelled(train_docs, tagset, "training")
    _check_labelled(dev_docs, tagset, "dev")
    if config.protocol == "early_stopping" and not dev_docs:
        raise UsageError("early stopping needs a nonempty dev set")

    fit_docs = list(train_docs) + (list(dev_docs) if config.protocol == "combined" else [])
    vocab = CharVocab.build(t.text for doc in fit_docs for t in doc.tokens)
    model = SegmentationModel(config, vocab, static_table, contextual)
    config = model.config

    fit_features = [model.featurize(doc) for doc in fit_docs]
    dev_features = [model.featurize(doc) for doc in dev_docs] if config.protocol == "early_stopping" else []
    logger.info(
        f"Training on {len(fit_features)} documents ({config.protocol}), "
        f"dev {len(dev_features)}, {sum(p.value.size for p in model.parameters())} parameters"
    )

    shuffle_rng = derived_rng(config.seed, "shuffle")
    dropout_rng = derived_rng(config.seed, "dropout")
    state = OptimizerState(learning_rate=config.learning_rate)
    result = TrainingResult(model=model, protocol=config.protocol)

    best_pk: Optional[float] = None
    best_loss = math.inf
    best_snapshot = model.snapshot()
    wait = 0

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(fit_features))
        epoch_loss = 0.0
        for batch_start in range(0, len(order), config.batch_size):
            batch = order[batch_start:batch_start + config.batch_size]
            model.zero_grad()
            batch_loss = 0.0
            for index in batch:
                doc_loss = model.loss_and_grad(fit_features[index], "train", dropout_rng)
                if not math.isfinite(doc_loss):
                    raise TrainingError(
                        f"non-finite loss {doc_loss} on document {fit_features[index].doc_id} "
                        f"(epoch {epoch}, batch starting at {batch_start})"
                    )
                batch_loss += doc_loss
            nadam_step(model.parameters(), state)
            epoch_loss += batch_loss

        if config.protocol == "combined":
            result.history.append(EpochRecord(epoch, epoch_loss, None, None, True))
            result.best_epoch = epoch
            logger.info(f"Epoch {epoch}: loss={epoch_loss:.4f}")
            continue

        dev_pk, dev_loss = evaluate_dev(model, dev_features)
        improved = epoch == 1 or _improves(dev_pk, dev_loss, best_pk, best_loss)
        result.history.append(EpochRecord(epoch, epoch_loss, dev_pk, dev_loss, improved))
        pk_text = f"{dev_pk:.4f}" if dev_pk is not None else "n/a"
        logger.info(
            f"Epoch {epoch}: loss={epoch_loss:.4f} dev_pk={pk_text} dev_loss={dev_loss:.4f}"
            f"{' (best)' if improved else ''}"
        )
        if improved:
            best_pk, best_loss = dev_pk, dev_loss
            best_snapshot = model.snapshot()
            result.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                result.stop_reason = f"no dev improvement for {wait} epochs"
                break

    if not result.stop_reason:
        result.stop_reason = f"reached max_epochs={config.max_epochs}"
    if config.protocol == "early_stopping":
        model.restore(best_snapshot)
    logger.info(f"Training stopped: {result.stop_reason}; best epoch {result.best_epoch}")
    return result


def load_model(
    path: str,
    embeddings_path: Optional[str] = None,
    contextual_sidecar: Optional[str] = None,
) -> SegmentationModel:
    """
    Rebuild a trained model from a checkpoint file

    Args:
        path: Checkpoint file
        embeddings_path: Replacement static embeddings file (defaults to the trained one)
        contextual_sidecar: Replacement contextual sidecar (defaults to the trained one)

    Returns:
        SegmentationModel ready for prediction
    """
    checkpoint = load_checkpoint(path)
    if embeddings_path:
        checkpoint.config["embeddings_path"] = embeddings_path
    if contextual_sidecar:
        checkpoint.config["contextual_sidecar"] = contextual_sidecar
    return SegmentationModel.from_checkpoint(checkpoint)
