"""Model variants for joint aesthetic classification and comment generation.

A model is a named collection of trainable tensors plus the forward rules
turning an image representation into class logits, per-step token logits and
task losses. The image representation enters the caption decoder exactly
once, as the input at the step before the START token, and that step
contributes no loss term.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .dataset import END_ID, START_ID
from .errors import ConfigError, ContractError, DataError, ShapeError
from .layers import Dense, EmbeddingTable, LSTMCell, LSTMState, TinyConvEncoder
from .tensor import (Tensor, add, concat, cross_entropy, dropout, scale,
                     stable_sigmoid)

CHECKPOINT_MAGIC = b"NAIRCKPT1"


class Variant(str, Enum):
    IAC = "iac"
    V2L = "v2l"
    MT_BASELINE = "mt-baseline"
    MODEL_I = "model1"
    MODEL_II = "model2"

    @property
    def multi_task(self) -> bool:
        return self in (Variant.MT_BASELINE, Variant.MODEL_I, Variant.MODEL_II)

    @property
    def has_classifier(self) -> bool:
        return self is not Variant.V2L

    @property
    def has_generator(self) -> bool:
        return self is not Variant.IAC

    @property
    def encoder_mode(self) -> str:
        # only the multi-task baseline trains its own image encoder; the
        # other variants consume fixed feature vectors from file
        return "trainable_tiny" if self is Variant.MT_BASELINE else "frozen_features"


_VARIANT_TAGS = {
    Variant.IAC: 0,
    Variant.V2L: 1,
    Variant.MT_BASELINE: 2,
    Variant.MODEL_I: 3,
    Variant.MODEL_II: 4,
}
_TAG_VARIANTS = {v: k for k, v in _VARIANT_TAGS.items()}


@dataclass
class ModelConfig:
    """Widths and initialization knobs.

    ``feature_dim`` is the width of the file-provided feature vectors, or the
    tiny encoder's output width for the trainable-encoder baseline.
    ``shared_dim`` defaults to 512 for the shared-layer variant and to 256
    when task-specific layers are present; ``specific_dim`` defaults to 256.
    """

    vocab_size: int
    feature_dim: int = 2048
    embed_dim: int = 512
    hidden_dim: int = 512
    shared_dim: int | None = None
    specific_dim: int | None = None
    lstm_layers: int = 1
    init_range: float = 0.08
    forget_gate_bias: float = 1.0


def _resolve_config(variant: Variant, config: ModelConfig) -> ModelConfig:
    shared = config.shared_dim
    specific = config.specific_dim
    if variant is Variant.MODEL_I and shared is None:
        shared = 512
    if variant is Variant.MODEL_II:
        if shared is None:
            shared = 256
        if specific is None:
            specific = 256
    resolved = replace(config, shared_dim=shared, specific_dim=specific)
    for name in ("feature_dim", "embed_dim", "hidden_dim", "lstm_layers"):
        if getattr(resolved, name) < 1:
            raise ConfigError(f"{name} must be positive, got {getattr(resolved, name)}")
    if variant.has_generator and resolved.vocab_size < 4:
        raise ConfigError("vocabulary must include the four reserved specials")
    if resolved.init_range <= 0:
        raise ConfigError(f"init_range must be positive, got {resolved.init_range}")
    return resolved


@dataclass
class ForwardOutput:
    """Per-example forward results; absent parts are None for single-task variants."""

    class_logits: Tensor | None
    step_logits: list[Tensor]
    aesthetics: Tensor | None
    language: Tensor | None
    joint: Tensor | None


class ReviewerModel:
    """One of the five architectures, identified by its variant tag."""

    def __init__(self, variant: Variant | str, config: ModelConfig, seed: int = 0):
        self.variant = Variant(variant)
        self.config = _resolve_config(self.variant, config)
        cfg = self.config
        rng = np.random.default_rng(seed)
        kw = {"rng": rng, "init_range": cfg.init_range}

        self.encoder = None
        if self.variant is Variant.MT_BASELINE:
            self.encoder = TinyConvEncoder(cfg.feature_dim, **kw)

        self.shared = self.cls_specific = self.gen_specific = None
        if self.variant is Variant.MODEL_I:
            self.shared = Dense(cfg.shared_dim, cfg.feature_dim, bias=False, activation="relu", **kw)
        elif self.variant is Variant.MODEL_II:
            self.shared = Dense(cfg.shared_dim, cfg.feature_dim, bias=False, activation="relu", **kw)
            self.cls_specific = Dense(cfg.specific_dim, cfg.feature_dim, bias=False, activation="relu", **kw)
            self.gen_specific = Dense(cfg.specific_dim, cfg.feature_dim, bias=False, activation="relu", **kw)

        rep_cls_dim, rep_gen_dim = self._rep_dims()
        self.classifier = None
        if self.variant.has_classifier:
            self.classifier = Dense(2, rep_cls_dim, **kw)

        self.embedding = None
        self.cells: list[LSTMCell] = []
        self.out_proj = None
        self.gen_adapter = None
        if self.variant.has_generator:
            self.embedding = EmbeddingTable(cfg.vocab_size, cfg.embed_dim, **kw)
            self.cells = [
                LSTMCell(cfg.embed_dim if k == 0 else cfg.hidden_dim, cfg.hidden_dim,
                         forget_gate_bias=cfg.forget_gate_bias, **kw)
                for k in range(cfg.lstm_layers)
            ]
            self.out_proj = Dense(cfg.vocab_size, cfg.hidden_dim, **kw)
            if rep_gen_dim != cfg.embed_dim:
                self.gen_adapter = Dense(cfg.embed_dim, rep_gen_dim, **kw)

        self.params: dict[str, Tensor] = {}
        if self.encoder is not None:
            self.params.update(self.encoder.named_params("encoder"))
        if self.shared is not None:
            self.params.update(self.shared.named_params("shared"))
        if self.cls_specific is not None:
            self.params.update(self.cls_specific.named_params("cls_specific"))
        if self.gen_specific is not None:
            self.params.update(self.gen_specific.named_params("gen_specific"))
        if self.classifier is not None:
            self.params.update(self.classifier.named_params("classifier"))
        if self.embedding is not None:
            self.params.update(self.embedding.named_params("embedding"))
        for k, cell in enumerate(self.cells):
            self.params.update(cell.named_params(f"lstm{k}"))
        if self.out_proj is not None:
            self.params.update(self.out_proj.named_params("out_proj"))
        if self.gen_adapter is not None:
            self.params.update(self.gen_adapter.named_params("gen_adapter"))

    def _rep_dims(self) -> tuple[int, int]:
        cfg = self.config
        if self.variant is Variant.MODEL_I:
            return cfg.shared_dim, cfg.shared_dim
        if self.variant is Variant.MODEL_II:
            width = cfg.specific_dim + cfg.shared_dim
            return width, width
        return cfg.feature_dim, cfg.feature_dim

    # -- forward ------------------------------------------------------------

    def image_representation(self, inputs: np.ndarray) -> Tensor:
        """Feature vector for one example: file features or the encoder output."""
        arr = np.asarray(inputs, dtype=np.float64)
        if self.encoder is not None:
            if arr.shape != TinyConvEncoder.IMAGE_SHAPE:
                raise ConfigError(
                    f"this model consumes raw {TinyConvEncoder.IMAGE_SHAPE} images, "
                    f"got input of shape {arr.shape}")
            return self.encoder(Tensor(arr))
        if arr.ndim != 1:
            raise ConfigError(
                f"this model consumes precomputed feature vectors, got input of shape {arr.shape}")
        if arr.shape != (self.config.feature_dim,):
            raise ShapeError(
                f"feature vector of width {arr.shape[0]} does not match the model's "
                f"feature width {self.config.feature_dim}")
        return Tensor(arr)

    def representation(self, v: Tensor) -> tuple[Tensor, Tensor]:
        """Task representations (classifier view, generator view) of features ``v``."""
        if v.data.shape != (self.config.feature_dim,):
            raise ShapeError(
                f"representation input of shape {v.data.shape} does not match feature width "
                f"{self.config.feature_dim}")
        if self.variant is Variant.MODEL_I:
            e = self.shared(v)
            return e, e
        if self.variant is Variant.MODEL_II:
            s = self.shared(v)
            return concat([self.cls_specific(v), s]), concat([self.gen_specific(v), s])
        return v, v

    def class_logits(self, rep_cls: Tensor) -> Tensor:
        if self.classifier is None:
            raise ContractError(f"variant {self.variant.value} has no classifier head")
        return self.classifier(rep_cls)

    def aesthetics_loss(self, rep_cls: Tensor, label: int) -> Tensor:
        return cross_entropy(self.class_logits(rep_cls), int(label))

    def _run_cells(self, state: list[LSTMState], x: Tensor, keep: float,
                   rng: np.random.Generator | None) -> list[LSTMState]:
        # dropout on the non-recurrent connections only: cell inputs and the
        # handoff between stacked cells; the h->h / c->c paths stay intact
        if keep < 1.0:
            x = dropout(x, keep, rng=rng)
        new_state = []
        for k, (cell, st) in enumerate(zip(self.cells, state)):
            st = cell.step(st, x)
            new_state.append(st)
            x = st.h
            if keep < 1.0 and k + 1 < len(self.cells):
                x = dropout(x, keep, rng=rng)
        return new_state

    def language_forward(self, rep_gen: Tensor, caption: list[int], *,
                         dropout_keep: float = 1.0,
                         rng: np.random.Generator | None = None) -> tuple[Tensor, list[Tensor]]:
        """Teacher-forced decode: image step, START, then the caption tokens.

        Returns the summed cross-entropy of predicting each caption token and
        the terminating END, plus the per-step logit vectors (length L+1).
        """
        if self.embedding is None:
            raise ContractError(f"variant {self.variant.value} has no language head")
        caption = [int(t) for t in caption]
        if not caption:
            raise ContractError("caption must be non-empty")
        x_img = self.gen_adapter(rep_gen) if self.gen_adapter is not None else rep_gen
        state = [LSTMState.zeros(self.config.hidden_dim) for _ in self.cells]
        state = self._run_cells(state, x_img, dropout_keep, rng)

        step_logits: list[Tensor] = []
        loss: Tensor | None = None
        for inp, target in zip([START_ID] + caption, caption + [END_ID]):
            state = self._run_cells(state, self.embedding(inp), dropout_keep, rng)
            h = state[-1].h
            if dropout_keep < 1.0:
                h = dropout(h, dropout_keep, rng=rng)
            logits = self.out_proj(h)
            step_logits.append(logits)
            term = cross_entropy(logits, target)
            loss = term if loss is None else add(loss, term)
        return loss, step_logits

    def language_loss(self, rep_gen: Tensor, caption: list[int], **kwargs) -> Tensor:
        return self.language_forward(rep_gen, caption, **kwargs)[0]

    def forward(self, inputs: np.ndarray, label: int | None = None,
                caption: list[int] | None = None, *, alpha: float = 1.0, beta: float = 1.0,
                dropout_keep: float = 1.0,
                rng: np.random.Generator | None = None) -> ForwardOutput:
        v = self.image_representation(inputs)
        rep_cls, rep_gen = self.representation(v)
        class_logits = aesthetics = language = joint = None
        step_logits: list[Tensor] = []
        if self.variant.has_classifier:
            class_logits = self.class_logits(rep_cls)
            if label is not None:
                aesthetics = cross_entropy(class_logits, int(label))
        if self.variant.has_generator and caption is not None:
            language, step_logits = self.language_forward(
                rep_gen, caption, dropout_keep=dropout_keep, rng=rng)
        if self.variant.multi_task and aesthetics is not None and language is not None:
            joint = add(scale(aesthetics, alpha), scale(language, beta))
        return ForwardOutput(class_logits, step_logits, aesthetics, language, joint)

    def joint_loss(self, inputs: np.ndarray, label: int, caption: list[int],
                   alpha: float = 1.0, beta: float = 1.0, *, dropout_keep: float = 1.0,
                   rng: np.random.Generator | None = None) -> Tensor:
        if not self.variant.multi_task:
            raise ContractError(f"joint loss is defined for multi-task variants, not {self.variant.value}")
        if alpha < 0 or beta < 0:
            raise ContractError(f"loss weights must be non-negative, got alpha={alpha}, beta={beta}")
        out = self.forward(inputs, label, caption, alpha=alpha, beta=beta,
                           dropout_keep=dropout_keep, rng=rng)
        return out.joint

    # -- parameters ----------------------------------------------------------

    def trainable_parameters(self) -> dict[str, Tensor]:
        """Every named parameter; frozen feature vectors are inputs, not parameters."""
        return dict(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def param_state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_param_state(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ContractError("parameter state does not match this model's parameter names")
        for name, arr in state.items():
            p = self.params[name]
            if p.data.shape != arr.shape:
                raise ShapeError(f"parameter {name}: shape {arr.shape} != {p.data.shape}")
            p.data[...] = arr

    # -- inference fast path ---------------------------------------------------

    def decoder(self, inputs: np.ndarray) -> "Decoder":
        if not self.variant.has_generator:
            raise ContractError(f"variant {self.variant.value} has no language head")
        v = self.image_representation(inputs)
        _, rep_gen = self.representation(v)
        x_img = self.gen_adapter(rep_gen) if self.gen_adapter is not None else rep_gen
        return Decoder(self, x_img.data)


class Decoder:
    """Numpy-only unrolled decode over frozen parameter values.

    ``initial_state`` already has the image step and the START token applied,
    so ``log_probs`` on it scores the first real caption token. States are
    immutable tuples of per-layer (h, c) arrays.
    """

    def __init__(self, model: ReviewerModel, image_input: np.ndarray):
        self._layers = [(c.w_input.data, c.w_hidden.data, c.bias.data, c.hidden_dim)
                        for c in model.cells]
        self._embedding = model.embedding.table.data
        self._out_w = model.out_proj.weight.data
        self._out_b = model.out_proj.bias.data
        self.vocab_size = self._out_w.shape[0]
        state = tuple((np.zeros(hd), np.zeros(hd)) for *_, hd in self._layers)
        state = self._step(state, image_input)
        self.initial_state = self._step(state, self._embedding[START_ID])

    def _step(self, state, x: np.ndarray):
        new = []
        for (wi, wh, b, hd), (h, c) in zip(self._layers, state):
            gates = wi @ x + wh @ h + b
            i = stable_sigmoid(gates[:hd])
            f = stable_sigmoid(gates[hd:2 * hd])
            g = np.tanh(gates[2 * hd:3 * hd])
            o = stable_sigmoid(gates[3 * hd:])
            c = f * c + i * g
            h = o * np.tanh(c)
            new.append((h, c))
            x = h
        return tuple(new)

    def advance(self, state, token_id: int):
        return self._step(state, self._embedding[int(token_id)])

    def log_probs(self, state) -> np.ndarray:
        logits = self._out_w @ state[-1][0] + self._out_b
        z = logits - logits.max()
        return z - np.log(np.exp(z).sum())


# ---------------------------------------------------------------------------
# checkpoint format: magic, variant tag byte, then for each parameter in
# lexicographic name order: u32 name length, UTF-8 name, u8 rank, u32 dims,
# raw little-endian float64 data (all header integers little-endian too)


def save_checkpoint(model: ReviewerModel, path: str | Path) -> None:
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<B", _VARIANT_TAGS[model.variant])
    for name in sorted(model.params):
        data = model.params[name].data
        encoded = name.encode("utf-8")
        buf += struct.pack("<I", len(encoded))
        buf += encoded
        buf += struct.pack("<B", data.ndim)
        for dim in data.shape:
            buf += struct.pack("<I", dim)
        buf += np.ascontiguousarray(data, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(buf))


def _read_exact(raw: bytes, offset: int, size: int, path: Path) -> tuple[bytes, int]:
    if offset + size > len(raw):
        raise DataError(f"checkpoint {path} is truncated")
    return raw[offset:offset + size], offset + size


def load_checkpoint(path: str | Path) -> ReviewerModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DataError(f"{path} does not start with the {CHECKPOINT_MAGIC!r} magic")
    offset = len(CHECKPOINT_MAGIC)
    tag_bytes, offset = _read_exact(raw, offset, 1, path)
    tag = tag_bytes[0]
    if tag not in _TAG_VARIANTS:
        raise DataError(f"{path}: unknown variant tag {tag}")
    variant = _TAG_VARIANTS[tag]

    arrays: dict[str, np.ndarray] = {}
    while offset < len(raw):
        chunk, offset = _read_exact(raw, offset, 4, path)
        name_len = struct.unpack("<I", chunk)[0]
        chunk, offset = _read_exact(raw, offset, name_len, path)
        name = chunk.decode("utf-8")
        chunk, offset = _read_exact(raw, offset, 1, path)
        rank = chunk[0]
        dims = []
        for _ in range(rank):
            chunk, offset = _read_exact(raw, offset, 4, path)
            dims.append(struct.unpack("<I", chunk)[0])
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        chunk, offset = _read_exact(raw, offset, count * 8, path)
        arrays[name] = np.frombuffer(chunk, dtype="<f8").reshape(dims).copy()

    config = _infer_config(variant, arrays, path)
    model = ReviewerModel(variant, config, seed=0)
    if set(model.params) != set(arrays):
        missing = set(model.params) ^ set(arrays)
        raise DataError(f"{path}: parameter names do not match the {variant.value} layout ({missing})")
    for name, arr in arrays.items():
        if model.params[name].data.shape != arr.shape:
            raise DataError(f"{path}: parameter {name} has shape {arr.shape}, "
                            f"expected {model.params[name].data.shape}")
        model.params[name].data[...] = arr
    return model


def _infer_config(variant: Variant, arrays: dict[str, np.ndarray], path: Path) -> ModelConfig:
    try:
        if "embedding.table" in arrays:
            vocab_size, embed_dim = arrays["embedding.table"].shape
            hidden_dim = arrays["lstm0.w_hidden"].shape[1]
            lstm_layers = sum(1 for name in arrays if name.endswith(".w_hidden"))
        else:
            vocab_size, embed_dim, hidden_dim, lstm_layers = 4, 512, 512, 1

        if variant is Variant.MT_BASELINE:
            feature_dim = arrays["encoder.fc.weight"].shape[0]
        elif variant in (Variant.MODEL_I, Variant.MODEL_II):
            feature_dim = arrays["shared.weight"].shape[1]
        elif variant is Variant.IAC:
            feature_dim = arrays["classifier.weight"].shape[1]
        else:  # V2L: the adapter reveals the width; without one it equals embed_dim
            feature_dim = (arrays["gen_adapter.weight"].shape[1]
                           if "gen_adapter.weight" in arrays else embed_dim)

        shared_dim = arrays["shared.weight"].shape[0] if "shared.weight" in arrays else None
        specific_dim = (arrays["cls_specific.weight"].shape[0]
                        if "cls_specific.weight" in arrays else None)
    except KeyError as exc:
        raise DataError(f"{path}: checkpoint is missing parameter {exc}") from None
    return ModelConfig(vocab_size=vocab_size, feature_dim=feature_dim, embed_dim=embed_dim,
                       hidden_dim=hidden_dim, shared_dim=shared_dim, specific_dim=specific_dim,
                       lstm_layers=lstm_layers)
