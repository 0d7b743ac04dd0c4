"""Small feedforward nets with manual backprop and the alternating distillation loop.

The training loop follows a warm-up/alternation scheme: for the first H
epochs the student trains without the kernel-transfer term while per-example
features accumulate; from epoch H+1 on, each epoch optimizes against the
landmark points computed from the *previous* epoch's accumulated features,
then refreshes the landmarks.  Teacher features (and hence teacher landmarks)
are computed once, since the teacher is frozen.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset
from .landmarks import (
    LandmarkSet,
    LandmarkStrategy,
    class_centers,
    kmeans_per_class,
    matched_landmarks,
    random_landmarks,
)
from .losses import (
    LossValueGrad,
    LossWeights,
    cross_entropy_loss,
    kd_loss,
    kda_loss,
    kda_loss_weighted,
    rkd_batch_loss,
)
from .matrix import as_matrix, frobenius_norm, pinv_sqrt, sym_eig
from .nystrom import FeatureBlock

RELU = "relu"
IDENTITY = "identity"

BEFORE_FC = "before_fc"
AFTER_FC = "after_fc"

# Sub-stream tags so parameter init, batch order, and landmark sampling draw
# from independent deterministic streams of the run seed.
_STREAM_INIT = 0
_STREAM_SHUFFLE = 1


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)
    activation: str

    def __post_init__(self) -> None:
        self.weight = as_matrix(self.weight)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(f"bias shape {self.bias.shape} does not match weight rows")
        if self.activation not in (RELU, IDENTITY):
            raise ValueError(f"unknown activation {self.activation!r}")


class Mlp:
    """Fully connected net, features as columns.  Final layer emits raw logits.

    Two feature taps are exposed for distillation: ``before_fc`` is the input
    activation of the final layer and ``after_fc`` is the logits.
    """

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise ValueError(
                    f"layer dims incompatible: {prev.weight.shape} feeds {nxt.weight.shape}"
                )
        if layers[-1].activation != IDENTITY:
            raise ValueError("final layer must have identity activation (logits)")
        self.layers = layers

    @classmethod
    def from_dims(cls, dims, rng: np.random.Generator) -> "Mlp":
        """He-initialized net with ReLU hidden layers; dims = [in, h1, ..., out]."""
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        layers = []
        last = len(dims) - 2
        for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
            scale = math.sqrt((1.0 if i == last else 2.0) / fan_in)
            layers.append(Layer(
                weight=scale * rng.standard_normal((fan_out, fan_in)),
                bias=np.zeros(fan_out),
                activation=IDENTITY if i == last else RELU,
            ))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def forward_cache(self, x) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
        """Forward pass keeping per-layer inputs and pre-activations for backprop."""
        a = as_matrix(x)
        if a.shape[0] != self.input_dim:
            raise ValueError(f"input dim {a.shape[0]} does not match network ({self.input_dim})")
        inputs = []
        preacts = []
        for layer in self.layers:
            inputs.append(a)
            z = layer.weight @ a + layer.bias[:, None]
            preacts.append(z)
            a = np.maximum(z, 0.0) if layer.activation == RELU else z
        return a, inputs, preacts

    def forward(self, x) -> tuple[np.ndarray, dict[str, FeatureBlock]]:
        """Logits plus the distillation taps."""
        logits, inputs, _ = self.forward_cache(x)
        taps = {
            BEFORE_FC: FeatureBlock(inputs[-1], layer_tag=BEFORE_FC),
            AFTER_FC: FeatureBlock(logits, layer_tag=AFTER_FC),
        }
        return logits, taps

    def backward(self, inputs, preacts, d_logits, d_before_fc=None):
        """Parameter gradients from a logits gradient plus an optional gradient
        injected at the before_fc tap.  Returns [(dW, db)] per layer."""
        g = d_logits
        grads: list[tuple[np.ndarray, np.ndarray]] = []
        last = len(self.layers) - 1
        for j in range(last, -1, -1):
            layer = self.layers[j]
            gz = g * (preacts[j] > 0) if layer.activation == RELU else g
            grads.append((gz @ inputs[j].T, gz.sum(axis=1)))
            if j > 0:
                g = layer.weight.T @ gz
                if j == last and d_before_fc is not None:
                    g = g + d_before_fc
        grads.reverse()
        return grads

    def copy(self) -> "Mlp":
        return Mlp([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for layer in self.layers:
            h.update(np.ascontiguousarray(layer.weight).tobytes())
            h.update(np.ascontiguousarray(layer.bias).tobytes())
        return h.hexdigest()

    def save_npz(self, path) -> None:
        arrays = {}
        for i, layer in enumerate(self.layers):
            arrays[f"w{i}"] = layer.weight
            arrays[f"b{i}"] = layer.bias
        activations = np.array([l.activation for l in self.layers])
        np.savez(path, activations=activations, **arrays)

    @classmethod
    def load_npz(cls, path) -> "Mlp":
        with np.load(path) as stash:
            activations = [str(a) for a in stash["activations"]]
            layers = [Layer(stash[f"w{i}"], stash[f"b{i}"], act)
                      for i, act in enumerate(activations)]
        return cls(layers)


def cosine_lr(epoch: int, total_epochs: int, lr0: float) -> float:
    """Half-cosine decay from lr0 at epoch 0 to 0 at epoch == total_epochs."""
    if total_epochs < 1:
        raise ValueError("total_epochs must be >= 1")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch must be in [0, {total_epochs}], got {epoch}")
    if not lr0 > 0:
        raise ValueError("lr0 must be positive")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


class SgdMomentum:
    """SGD with momentum and coupled weight decay.

    Per step: v <- momentum*v + grad + weight_decay*w;  w <- w - lr*v.
    """

    def __init__(self, net: Mlp, momentum: float, weight_decay: float):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers]

    def step(self, net: Mlp, grads, lr: float) -> None:
        for layer, (vw, vb), (dw, db) in zip(net.layers, self.velocity, grads):
            vw *= self.momentum
            vw += dw + self.weight_decay * layer.weight
            vb *= self.momentum
            vb += db + self.weight_decay * layer.bias
            layer.weight -= lr * vw
            layer.bias -= lr * vb


@dataclass
class TrainConfig:
    """Hyperparameters of one training run."""

    total_epochs: int
    warmup_epochs: int = 1
    batch_size: int = 64
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self) -> None:
        if not 1 <= self.warmup_epochs < self.total_epochs:
            raise ValueError(
                f"need 1 <= warmup_epochs < total_epochs, "
                f"got {self.warmup_epochs} / {self.total_epochs}"
            )
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass
class EpochRecord:
    """Metrics of one completed epoch.  Landmark-dependent fields stay None
    for runs without landmark points."""

    epoch: int
    train_loss: dict[str, float]
    test_accuracy: float
    transfer_before_fc: float | None = None
    transfer_after_fc: float | None = None
    partial_loss: float | None = None
    min_eig_w_s: float | None = None
    min_eig_w_t: float | None = None

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": dict(self.train_loss),
            "test_accuracy": self.test_accuracy,
            "transfer_before_fc": self.transfer_before_fc,
            "transfer_after_fc": self.transfer_after_fc,
            "partial_loss": self.partial_loss,
            "min_eig_w_s": self.min_eig_w_s,
            "min_eig_w_t": self.min_eig_w_t,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpochRecord":
        return cls(**d)


@dataclass
class MetricLog:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must increase")
        self.records.append(record)

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    def series(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "MetricLog":
        log = cls()
        for line in text.splitlines():
            if line.strip():
                log.append(EpochRecord.from_dict(json.loads(line)))
        return log


def accuracy(net: Mlp, x, y) -> float:
    logits, _, _ = net.forward_cache(x)
    labels = np.asarray(y, dtype=np.int64)
    return float((np.argmax(logits, axis=0) == labels).mean())


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, order.size, batch_size):
        yield order[start:start + batch_size]


def _check_finite(total: float, epoch: int, components: dict[str, float]) -> None:
    if not np.isfinite(total):
        raise RuntimeError(f"non-finite training loss at epoch {epoch}: {components}")


def train_teacher(config: TrainConfig, dataset: LabeledDataset,
                  hidden=(128, 128)) -> tuple[Mlp, MetricLog]:
    """Train a network with cross-entropy only; warm-up is irrelevant here."""
    x_train, y_train = dataset.train_split()
    x_test, y_test = dataset.test_split()
    n = x_train.shape[1]
    rng_init = np.random.default_rng([config.seed, _STREAM_INIT])
    rng_shuffle = np.random.default_rng([config.seed, _STREAM_SHUFFLE])
    net = Mlp.from_dims([dataset.dim, *hidden, dataset.n_classes], rng_init)
    opt = SgdMomentum(net, config.momentum, config.weight_decay)
    log = MetricLog()
    for epoch in range(1, config.total_epochs + 1):
        lr = cosine_lr(epoch - 1, config.total_epochs, config.lr0)
        loss_sum = 0.0
        for batch in _batches(rng_shuffle.permutation(n), config.batch_size):
            logits, inputs, preacts = net.forward_cache(x_train[:, batch])
            ce = cross_entropy_loss(logits, y_train[batch])
            _check_finite(ce.value, epoch, {"cross_entropy": ce.value})
            opt.step(net, net.backward(inputs, preacts, ce.grad), lr)
            loss_sum += ce.value * batch.size
        mean_ce = loss_sum / n
        log.append(EpochRecord(
            epoch=epoch,
            train_loss={"total": mean_ce, "cross_entropy": mean_ce},
            test_accuracy=accuracy(net, x_test, y_test),
        ))
    return net, log


class _TeacherContext:
    """Frozen teacher quantities shared across the student run: tap features,
    full Gram matrices, landmark sets, and the optional residual weighting."""

    def __init__(self, teacher: Mlp, x_train, y_train, strategy, centers_per_class,
                 n_random_landmarks, landmark_seed, taps_needed, weighted):
        logits, inputs, _ = teacher.forward_cache(x_train)
        self.feats = {BEFORE_FC: inputs[-1], AFTER_FC: logits}
        self.gram = {}
        self.gram_norm = {}
        for tap in (BEFORE_FC, AFTER_FC):
            k = self.feats[tap].T @ self.feats[tap]
            self.gram[tap] = k
            self.gram_norm[tap] = frobenius_norm(k)
        self.landmarks: dict[str, LandmarkSet] = {}
        self.partial: dict[str, np.ndarray] = {}
        self.min_eig_w: dict[str, float] = {}
        self.w_pinv_sqrt: dict[str, np.ndarray] = {}
        for tap in taps_needed:
            lm = _build_landmarks(strategy, self.feats[tap], y_train,
                                  centers_per_class, n_random_landmarks, landmark_seed)
            self.landmarks[tap] = lm
            self.partial[tap] = self.feats[tap].T @ lm.points
            w = lm.points.T @ lm.points
            self.min_eig_w[tap] = float(sym_eig(w).eigenvalues[-1])
            if weighted:
                self.w_pinv_sqrt[tap] = pinv_sqrt(w)


def _build_landmarks(strategy, feats, y, centers_per_class, n_random, seed) -> LandmarkSet:
    strategy = LandmarkStrategy(strategy)
    if strategy is LandmarkStrategy.CLASS_CENTERS:
        return class_centers(feats, y)
    if strategy is LandmarkStrategy.KMEANS_PER_CLASS:
        return kmeans_per_class(feats, y, centers_per_class, seed)
    if strategy is LandmarkStrategy.RANDOM:
        m = n_random if n_random is not None else int(np.asarray(y).max()) + 1
        return random_landmarks(feats, m, seed)
    raise ValueError(f"unsupported training landmark strategy {strategy!r}")


def train_student_kda(config: TrainConfig, dataset: LabeledDataset, teacher: Mlp,
                      hidden=(32, 32), strategy=None, centers_per_class: int = 1,
                      n_random_landmarks: int | None = None, weighted: bool = False,
                      feature_probe=None) -> tuple[Mlp, MetricLog]:
    """Train a student against a frozen teacher with the configured loss mix.

    With all distillation weights zero this reduces exactly to teacher-free
    training (bitwise-identical parameters for the same seed).  Kernel-transfer
    terms stay off during the warm-up epochs; label (KL) and within-batch
    Gram terms need no landmarks and apply from the first epoch.

    ``feature_probe(epoch, feats_by_tap)`` is called with the accumulated
    per-example features right before each landmark refresh.
    """
    lw = config.loss_weights
    taps_needed = []
    if lw.lambda_kda_before_fc > 0:
        taps_needed.append(BEFORE_FC)
    if lw.lambda_kda_after_fc > 0:
        taps_needed.append(AFTER_FC)
    needs_landmarks = bool(taps_needed)
    if needs_landmarks and strategy is None:
        raise ValueError("a landmark strategy is required when a kernel-transfer weight is set")

    x_train, y_train = dataset.train_split()
    x_test, y_test = dataset.test_split()
    n = x_train.shape[1]
    rng_init = np.random.default_rng([config.seed, _STREAM_INIT])
    rng_shuffle = np.random.default_rng([config.seed, _STREAM_SHUFFLE])
    student = Mlp.from_dims([dataset.dim, *hidden, dataset.n_classes], rng_init)
    opt = SgdMomentum(student, config.momentum, config.weight_decay)

    ctx = _TeacherContext(teacher, x_train, y_train, strategy, centers_per_class,
                          n_random_landmarks, config.seed, taps_needed, weighted)
    student_landmarks: dict[str, LandmarkSet] = {}
    hidden_dim = student.layers[-1].weight.shape[1]
    log = MetricLog()

    for epoch in range(1, config.total_epochs + 1):
        lr = cosine_lr(epoch - 1, config.total_epochs, config.lr0)
        kda_active = needs_landmarks and epoch > config.warmup_epochs
        if kda_active and not student_landmarks:
            raise RuntimeError("kernel-transfer loss requested but no landmarks accumulated")
        accum = {BEFORE_FC: np.zeros((hidden_dim, n)), AFTER_FC: np.zeros((dataset.n_classes, n))}
        comp_sums: dict[str, float] = {}

        for batch in _batches(rng_shuffle.permutation(n), config.batch_size):
            logits, inputs, preacts = student.forward_cache(x_train[:, batch])
            before = inputs[-1]
            accum[BEFORE_FC][:, batch] = before
            accum[AFTER_FC][:, batch] = logits
            r = batch.size

            ce = cross_entropy_loss(logits, y_train[batch])
            d_logits = ce.grad
            d_before = None
            parts = {"cross_entropy": ce.value}
            if lw.lambda_kd > 0:
                kd = kd_loss(logits, ctx.feats[AFTER_FC][:, batch], lw.kd_temperature)
                d_logits = d_logits + lw.lambda_kd * kd.grad
                parts["kd"] = kd.value
            if lw.lambda_rkd > 0:
                rkd = rkd_batch_loss(before, ctx.feats[BEFORE_FC][:, batch])
                d_before = lw.lambda_rkd * rkd.grad
                parts["rkd"] = rkd.value
            if kda_active and BEFORE_FC in taps_needed:
                kb = _kda_term(before, ctx, student_landmarks, BEFORE_FC, batch, weighted)
                d_before = kb.grad * lw.lambda_kda_before_fc if d_before is None \
                    else d_before + lw.lambda_kda_before_fc * kb.grad
                parts["kda_before_fc"] = kb.value
            if kda_active and AFTER_FC in taps_needed:
                ka = _kda_term(logits, ctx, student_landmarks, AFTER_FC, batch, weighted)
                d_logits = d_logits + lw.lambda_kda_after_fc * ka.grad
                parts["kda_after_fc"] = ka.value

            total = parts["cross_entropy"] \
                + lw.lambda_kd * parts.get("kd", 0.0) \
                + lw.lambda_rkd * parts.get("rkd", 0.0) \
                + lw.lambda_kda_before_fc * parts.get("kda_before_fc", 0.0) \
                + lw.lambda_kda_after_fc * parts.get("kda_after_fc", 0.0)
            _check_finite(total, epoch, parts)
            parts["total"] = total
            for name, value in parts.items():
                comp_sums[name] = comp_sums.get(name, 0.0) + value * r

            opt.step(student, student.backward(inputs, preacts, d_logits, d_before), lr)

        if needs_landmarks:
            if feature_probe is not None:
                feature_probe(epoch, {tap: accum[tap] for tap in taps_needed})
            for tap in taps_needed:
                student_landmarks[tap] = matched_landmarks(ctx.landmarks[tap], accum[tap])

        log.append(_epoch_metrics(epoch, student, ctx, student_landmarks, taps_needed,
                                  x_train, x_test, y_test,
                                  {k: v / n for k, v in comp_sums.items()}))
    return student, log


def _kda_term(feats, ctx: _TeacherContext, student_landmarks, tap, batch,
              weighted: bool) -> LossValueGrad:
    teacher_partial = ctx.partial[tap][batch, :]
    # kda_loss recomputes C_T = X_T^T D_T; pass the cached teacher rows via the
    # raw matrices to avoid rebuilding from full features every batch.
    ds = student_landmarks[tap].points
    if weighted:
        wh = ctx.w_pinv_sqrt[tap]
        residual = (feats.T @ ds - teacher_partial) @ wh
        value, deriv = _smoothed(residual)
        n_r, m = residual.shape
        return LossValueGrad(float(value.mean()), ds @ (deriv @ wh.T).T / (n_r * m))
    residual = feats.T @ ds - teacher_partial
    value, deriv = _smoothed(residual)
    n_r, m = residual.shape
    return LossValueGrad(float(value.mean()), ds @ deriv.T / (n_r * m))


def _smoothed(z: np.ndarray):
    from .losses import smoothed_l1
    return smoothed_l1(z)


def _epoch_metrics(epoch, student, ctx: _TeacherContext, student_landmarks, taps_needed,
                   x_train, x_test, y_test, train_loss) -> EpochRecord:
    logits, inputs, _ = student.forward_cache(x_train)
    feats = {BEFORE_FC: inputs[-1], AFTER_FC: logits}
    transfer = {}
    for tap in (BEFORE_FC, AFTER_FC):
        k_s = feats[tap].T @ feats[tap]
        transfer[tap] = frobenius_norm(k_s - ctx.gram[tap]) / ctx.gram_norm[tap]
    partial_loss = min_eig_w_s = min_eig_w_t = None
    if student_landmarks:
        tap = BEFORE_FC if BEFORE_FC in student_landmarks else AFTER_FC
        lm = student_landmarks[tap]
        c_s = feats[tap].T @ lm.points
        partial_loss = frobenius_norm(c_s - ctx.partial[tap]) / ctx.gram_norm[tap]
        min_eig_w_s = float(sym_eig(lm.points.T @ lm.points).eigenvalues[-1])
        min_eig_w_t = ctx.min_eig_w[tap]
    return EpochRecord(
        epoch=epoch,
        train_loss=train_loss,
        test_accuracy=accuracy(student, x_test, y_test),
        transfer_before_fc=transfer[BEFORE_FC],
        transfer_after_fc=transfer[AFTER_FC],
        partial_loss=partial_loss,
        min_eig_w_s=min_eig_w_s,
        min_eig_w_t=min_eig_w_t,
    )
