"""Training loop, evaluation, and checkpoint persistence.

One optimization step consumes one whole conversation (the graphs span a
conversation), shuffled per epoch with the run seed. Divergence (a
non-finite value anywhere in the forward pass) aborts the loop and the
last finite parameter state is returned. Checkpoints are a self-describing
container: a versioned header line, a JSON metadata line (config text,
dataset signature, step counter, RNG state, parameter manifest), then raw
little-endian float64 parameter blocks; identical state saves to identical
bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import NonFiniteError, Tape
from .config import TrainConfig
from .metrics import accuracy_from_confusion, confusion_matrix, per_class_f1, weighted_f1
from .model import EmotionModel

__all__ = [
    "AdamOptimizer",
    "Checkpoint",
    "EvalResult",
    "train",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
    "model_from_checkpoint",
]

CHECKPOINT_MAGIC = "CONVEMO-CKPT-V1"


class AdamOptimizer:
    """Per-parameter moment estimation with bias correction."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad_array()
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self._m[i] / bc1
            v_hat = self._v[i] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class Checkpoint:
    step: int
    config_text: str
    dims: tuple
    n_classes: int
    n_speakers: int
    rng_state: dict
    params: dict  # name -> ndarray

    @property
    def config(self):
        return TrainConfig.from_text(self.config_text)


@dataclass
class EvalResult:
    accuracy: float
    wf1: float
    per_class_f1: np.ndarray
    confusion: np.ndarray


def train(config, dataset):
    """Optimize the model on a dataset; returns (checkpoint, metrics log).

    Deterministic for a fixed (config, dataset): parameter init, epoch
    shuffling, and triplet sampling all derive from config.seed. The log
    holds one record per step with every loss component.
    """
    config.validate()
    dataset.validate()
    model = EmotionModel.for_dataset(config, dataset)
    optimizer = AdamOptimizer(
        model.params.tensors(),
        lr=config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_eps,
    )
    shuffle_rng = np.random.default_rng([config.seed, 0x5EED])
    n_conv = len(dataset.conversations)

    log = []
    order = []
    prev_state = model.params.state()
    for step in range(config.steps):
        if not order:
            order = list(shuffle_rng.permutation(n_conv))
        conv = dataset.conversations[order.pop(0)]

        model.params.zero_grads()
        try:
            with Tape() as tape:
                result = model.forward(conv, triplet_seed=step)
            tape.backward(result.total)
        except NonFiniteError as exc:
            model.params.load_state(prev_state)
            log.append({"step": step, "event": "divergence", "detail": str(exc)})
            break

        record = {"step": step}
        for name, tensor in result.losses.items():
            record[f"loss_{name}"] = tensor.item()
        log.append(record)

        prev_state = model.params.state()
        optimizer.step()

    checkpoint = Checkpoint(
        step=len([r for r in log if "event" not in r]),
        config_text=config.to_text(),
        dims=tuple(dataset.dims),
        n_classes=dataset.num_classes,
        n_speakers=dataset.num_speakers,
        rng_state=shuffle_rng.bit_generator.state,
        params=model.params.state(),
    )
    return checkpoint, log


def model_from_checkpoint(checkpoint):
    config = TrainConfig.from_text(checkpoint.config_text)
    model = EmotionModel(config, checkpoint.dims, checkpoint.n_classes, checkpoint.n_speakers)
    model.params.load_state(checkpoint.params)
    return model


def evaluate(model_or_checkpoint, dataset):
    """Accuracy, weighted F1, per-class F1, and the confusion matrix."""
    if isinstance(model_or_checkpoint, Checkpoint):
        model = model_from_checkpoint(model_or_checkpoint)
    else:
        model = model_or_checkpoint
    dataset.validate()
    if model.n_classes != dataset.num_classes:
        raise ValueError(
            f"class count mismatch: model has {model.n_classes}, dataset has {dataset.num_classes}"
        )

    y_true = []
    y_pred = []
    for conv in dataset.conversations:
        labels, _ = model.predict(conv)
        y_pred.extend(int(v) for v in labels)
        y_true.extend(conv.labels)
    cm = confusion_matrix(y_true, y_pred, model.n_classes)
    return EvalResult(
        accuracy=accuracy_from_confusion(cm),
        wf1=weighted_f1(cm),
        per_class_f1=per_class_f1(cm),
        confusion=cm,
    )


def save_checkpoint(checkpoint, path):
    manifest = [
        {"name": name, "shape": list(arr.shape)} for name, arr in checkpoint.params.items()
    ]
    header = {
        "step": checkpoint.step,
        "config": checkpoint.config_text,
        "dims": list(checkpoint.dims),
        "n_classes": checkpoint.n_classes,
        "n_speakers": checkpoint.n_speakers,
        "rng_state": checkpoint.rng_state,
        "params": manifest,
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC.encode("ascii") + b"\n")
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n")
        for name, arr in checkpoint.params.items():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n").decode("ascii", errors="replace")
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (bad header {magic!r})")
        header = json.loads(fh.readline().decode("utf-8"))
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError(f"truncated checkpoint: parameter {entry['name']!r}")
            params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return Checkpoint(
        step=header["step"],
        config_text=header["config"],
        dims=tuple(header["dims"]),
        n_classes=header["n_classes"],
        n_speakers=header["n_speakers"],
        rng_state=header["rng_state"],
        params=params,
    )
