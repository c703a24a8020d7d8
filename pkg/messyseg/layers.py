"""
Neural Encoder Layers
Character CNN, token embedding assembly, dropout, BiLSTM and the emission projection, each with a hand-written backward pass
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from messyseg.errors import UsageError
from messyseg.numerics import DTYPE, Parameter, Tensor

logger = logging.getLogger(__name__)

PAD_CHAR = "<pad>"
UNK_CHAR = "<unk>"


class CharVocab:
    """Dense character index with reserved padding (0) and unknown (1) entries"""

    def __init__(self, chars: Iterable[str] = ()):
        self.itos: List[str] = [PAD_CHAR, UNK_CHAR]
        self.stoi: Dict[str, int] = {PAD_CHAR: 0, UNK_CHAR: 1}
        for ch in chars:
            self.add(ch)

    @classmethod
    def build(cls, texts: Iterable[str]) -> "CharVocab":
        """Vocabulary of every character seen in the given (training) texts, sorted"""
        return cls(sorted({ch for text in texts for ch in text}))

    def add(self, ch: str):
        if ch not in self.stoi:
            self.stoi[ch] = len(self.itos)
            self.itos.append(ch)

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def pad_index(self) -> int:
        return 0

    @property
    def unk_index(self) -> int:
        return 1

    def index(self, ch: str) -> int:
        return self.stoi.get(ch, self.unk_index)

    def encode_batch(self, texts: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
        """
        Padded character ids for a list of tokens

        Returns:
            (ids of shape (n, m), lengths of shape (n,)), m >= 1
        """
        lengths = np.array([len(t) for t in texts], dtype=np.int64)
        width = max(1, int(lengths.max())) if len(texts) else 1
        ids = np.full((len(texts), width), self.pad_index, dtype=np.int64)
        for row, text in enumerate(texts):
            ids[row, :len(text)] = [self.index(ch) for ch in text]
        return ids, lengths

    def to_list(self) -> List[str]:
        return list(self.itos[2:])


def uniform_init(rng: np.random.Generator, shape, scale: float) -> Tensor:
    return rng.uniform(-scale, scale, size=shape)


@dataclass
class CharCnnCache:
    ids: np.ndarray
    char_mask: np.ndarray
    windows: Tensor
    argmax: np.ndarray


class CharCNN:
    """Character embeddings, same-padded convolution and global max pooling"""

    def __init__(
        self,
        vocab_size: int,
        char_dim: int = 25,
        num_filters: int = 30,
        kernel_size: int = 3,
        rng: Optional[np.random.Generator] = None,
        init_scale: float = 0.1,
    ):
        rng = rng if rng is not None else np.random.Generator(np.random.PCG64(0))
        self.kernel_size = kernel_size
        self.pad_left = (kernel_size - 1) // 2
        self.pad_right = kernel_size - 1 - self.pad_left
        embedding = uniform_init(rng, (vocab_size, char_dim), init_scale)
        embedding[0] = 0.0
        self.embedding = Parameter("char_cnn.embedding", embedding)
        self.filters = Parameter(
            "char_cnn.filters", uniform_init(rng, (num_filters, kernel_size, char_dim), init_scale)
        )
        self.bias = Parameter("char_cnn.bias", np.zeros(num_filters, dtype=DTYPE))

    @property
    def output_dim(self) -> int:
        return self.filters.value.shape[0]

    def parameters(self) -> List[Parameter]:
        return [self.embedding, self.filters, self.bias]

    def forward(self, ids: np.ndarray, lengths: np.ndarray) -> Tuple[Tensor, CharCnnCache]:
        """
        Encode a batch of tokens

        Args:
            ids: (n, m) character ids, padded
            lengths: (n,) true token lengths

        Returns:
            ((n, num_filters) pooled features, cache for backward)
        """
        n, width = ids.shape
        positions = np.arange(width)
        char_mask = positions[None, :] < lengths[:, None]
        # an empty token still pools over one all-padding position
        pool_mask = positions[None, :] < np.maximum(lengths, 1)[:, None]

        chars = self.embedding.value[ids] * char_mask[..., None]
        padded = np.pad(chars, ((0, 0), (self.pad_left, self.pad_right), (0, 0)))
        windows = np.stack([padded[:, k:k + width] for k in range(self.kernel_size)], axis=2)
        conv = np.einsum("npkc,fkc->npf", windows, self.filters.value) + self.bias.value
        masked = np.where(pool_mask[..., None], conv, -np.inf)
        argmax = np.argmax(masked, axis=1)
        pooled = np.take_along_axis(conv, argmax[:, None, :], axis=1)[:, 0, :]
        return pooled, CharCnnCache(ids, char_mask, windows, argmax)

    def backward(self, grad_out: Tensor, cache: CharCnnCache):
        """Accumulate parameter gradients from d(pooled features)"""
        n, width = cache.ids.shape
        rows = np.arange(n)[:, None]
        selected = cache.windows[rows, cache.argmax]  # (n, F, K, C)
        self.filters.grad += np.einsum("nf,nfkc->fkc", grad_out, selected)
        self.bias.grad += grad_out.sum(axis=0)

        d_windows = grad_out[:, :, None, None] * self.filters.value[None]
        d_padded = np.zeros((n, width + self.kernel_size - 1, self.embedding.value.shape[1]), dtype=DTYPE)
        for k in range(self.kernel_size):
            np.add.at(d_padded, (rows, cache.argmax + k), d_windows[:, :, k, :])
        d_chars = d_padded[:, self.pad_left:self.pad_left + width] * cache.char_mask[..., None]
        np.add.at(self.embedding.grad, cache.ids, d_chars)
        self.embedding.grad[0] = 0.0

    def encode_token(self, text: str, vocab: CharVocab) -> Tensor:
        """Pooled features of a single token"""
        ids, lengths = vocab.encode_batch([text])
        pooled, _ = self.forward(ids, lengths)
        return pooled[0]


def assemble_token_embedding(pieces: Sequence[Optional[Tensor]], expected_dim: Optional[int] = None) -> Tensor:
    """
    Concatenate feature pieces in order char, static, contextual, casing, distance

    Pieces that are disabled are passed as None. Works on single tokens (1-D pieces)
    and on sequences ((n, d) pieces).
    """
    present = [np.asarray(p, dtype=DTYPE) for p in pieces if p is not None]
    if not present:
        raise UsageError("no feature pieces to assemble")
    if len({p.shape[:-1] for p in present}) != 1:
        raise UsageError(f"feature pieces disagree on leading shape: {[p.shape for p in present]}")
    assembled = np.concatenate(present, axis=-1)
    if expected_dim is not None and assembled.shape[-1] != expected_dim:
        raise UsageError(f"assembled embedding has dim {assembled.shape[-1]}, config expects {expected_dim}")
    return assembled


def split_token_gradient(grad: Tensor, dims: Sequence[int]) -> List[Tensor]:
    """Split d(assembled) back into per-piece gradients"""
    return np.split(grad, np.cumsum(dims)[:-1], axis=-1)


def dropout(
    values: Tensor, rate: float, train: bool, rng: Optional[np.random.Generator]
) -> Tuple[Tensor, Optional[Tensor]]:
    """
    Inverted dropout

    Returns:
        (output, scale mask or None in inference / rate 0)
    """
    if not 0.0 <= rate < 1.0:
        raise UsageError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return values, None
    if rng is None:
        raise UsageError("train-mode dropout needs a random generator")
    keep = rng.random(values.shape) >= rate
    mask = keep / (1.0 - rate)
    return values * mask, mask


@dataclass
class LstmCache:
    inputs: Tensor
    gates: Tensor
    cells: Tensor
    hidden: Tensor


class LSTM:
    """One direction: input, forget, cell-candidate and output gates"""

    def __init__(
        self,
        input_dim: int,
        hidden_size: int,
        name: str,
        rng: np.random.Generator,
        init_scale: float = 0.1,
        forget_bias: float = 1.0,
    ):
        self.hidden_size = hidden_size
        bias = np.zeros(4 * hidden_size, dtype=DTYPE)
        bias[hidden_size:2 * hidden_size] = forget_bias
        self.input_weights = Parameter(f"{name}.input_weights", uniform_init(rng, (4 * hidden_size, input_dim), init_scale))
        self.recurrent_weights = Parameter(
            f"{name}.recurrent_weights", uniform_init(rng, (4 * hidden_size, hidden_size), init_scale)
        )
        self.bias = Parameter(f"{name}.bias", bias)

    def parameters(self) -> List[Parameter]:
        return [self.input_weights, self.recurrent_weights, self.bias]

    def forward(self, inputs: Tensor) -> Tuple[Tensor, LstmCache]:
        n = inputs.shape[0]
        size = self.hidden_size
        projected = inputs @ self.input_weights.value.T + self.bias.value
        recurrent = self.recurrent_weights.value
        gates = np.empty((n, 4 * size), dtype=DTYPE)
        cells = np.zeros((n + 1, size), dtype=DTYPE)
        hidden = np.zeros((n + 1, size), dtype=DTYPE)
        for t in range(n):
            z = projected[t] + recurrent @ hidden[t]
            gates[t, :size] = special.expit(z[:size])
            gates[t, size:2 * size] = special.expit(z[size:2 * size])
            gates[t, 2 * size:3 * size] = np.tanh(z[2 * size:3 * size])
            gates[t, 3 * size:] = special.expit(z[3 * size:])
            i, f, g, o = np.split(gates[t], 4)
            cells[t + 1] = f * cells[t] + i * g
            hidden[t + 1] = o * np.tanh(cells[t + 1])
        return hidden[1:], LstmCache(inputs, gates, cells, hidden)

    def backward(self, grad_hidden: Tensor, cache: LstmCache) -> Tensor:
        """Backpropagation through time; returns d(inputs)"""
        n = grad_hidden.shape[0]
        recurrent = self.recurrent_weights.value
        d_projected = np.zeros_like(cache.gates)
        d_recurrent = np.zeros_like(recurrent)
        dh_next = np.zeros(self.hidden_size, dtype=DTYPE)
        dc_next = np.zeros(self.hidden_size, dtype=DTYPE)
        for t in range(n - 1, -1, -1):
            i, f, g, o = np.split(cache.gates[t], 4)
            tanh_c = np.tanh(cache.cells[t + 1])
            dh = grad_hidden[t] + dh_next
            dc = dc_next + dh * o * (1.0 - tanh_c ** 2)
            dz = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * cache.cells[t] * f * (1.0 - f),
                dc * i * (1.0 - g ** 2),
                dh * tanh_c * o * (1.0 - o),
            ])
            d_projected[t] = dz
            d_recurrent += np.outer(dz, cache.hidden[t])
            dh_next = recurrent.T @ dz
            dc_next = dc * f
        self.recurrent_weights.grad += d_recurrent
        self.input_weights.grad += d_projected.T @ cache.inputs
        self.bias.grad += d_projected.sum(axis=0)
        return d_projected @ self.input_weights.value


class BiLSTM:
    """Forward and backward LSTMs with independent weights; outputs are concatenated"""

    def __init__(
        self,
        input_dim: int,
        hidden_size: int = 100,
        rng: Optional[np.random.Generator] = None,
        init_scale: float = 0.1,
        forget_bias: float = 1.0,
    ):
        rng = rng if rng is not None else np.random.Generator(np.random.PCG64(0))
        self.input_dim = input_dim
        self.hidden_size = hidden_size
        self.forward_lstm = LSTM(input_dim, hidden_size, "bilstm.forward", rng, init_scale, forget_bias)
        self.backward_lstm = LSTM(input_dim, hidden_size, "bilstm.backward", rng, init_scale, forget_bias)

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden_size

    def parameters(self) -> List[Parameter]:
        return self.forward_lstm.parameters() + self.backward_lstm.parameters()

    def forward(self, inputs: Tensor) -> Tuple[Tensor, Tuple[LstmCache, LstmCache]]:
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise UsageError(f"BiLSTM expects a nonempty (n, d) sequence, got shape {inputs.shape}")
        if inputs.shape[1] != self.input_dim:
            raise UsageError(f"BiLSTM expects input dim {self.input_dim}, got {inputs.shape[1]}")
        forward_hidden, forward_cache = self.forward_lstm.forward(inputs)
        reversed_hidden, backward_cache = self.backward_lstm.forward(inputs[::-1])
        return np.concatenate([forward_hidden, reversed_hidden[::-1]], axis=1), (forward_cache, backward_cache)

    def backward(self, grad_out: Tensor, caches: Tuple[LstmCache, LstmCache]) -> Tensor:
        forward_cache, backward_cache = caches
        size = self.hidden_size
        d_inputs = self.forward_lstm.backward(grad_out[:, :size], forward_cache)
        d_reversed = self.backward_lstm.backward(grad_out[::-1, size:], backward_cache)
        return d_inputs + d_reversed[::-1]


class EmissionProjection:
    """Affine map from BiLSTM states to per-label scores"""

    def __init__(
        self,
        input_dim: int,
        num_labels: int,
        rng: Optional[np.random.Generator] = None,
        init_scale: float = 0.1,
    ):
        rng = rng if rng is not None else np.random.Generator(np.random.PCG64(0))
        self.weights = Parameter("projection.weights", uniform_init(rng, (num_labels, input_dim), init_scale))
        self.bias = Parameter("projection.bias", np.zeros(num_labels, dtype=DTYPE))

    def parameters(self) -> List[Parameter]:
        return [self.weights, self.bias]

    def forward(self, hidden: Tensor) -> Tensor:
        return hidden @ self.weights.value.T + self.bias.value

    def backward(self, grad_out: Tensor, hidden: Tensor) -> Tensor:
        self.weights.grad += grad_out.T @ hidden
        self.bias.grad += grad_out.sum(axis=0)
        return grad_out @ self.weights.value
