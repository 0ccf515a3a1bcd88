"""Alternating multi-way adversarial / pseudo-label adaptation."""

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import make_batches
from .errors import NonFiniteError
from .model import (ALPHA_MODES, classify, concentration_constants, discriminate, extract,
                    predict_target)
from .nn import EPS, losses, sgd_step


@dataclass
class TrainConfig:
    gamma: float = 0.8
    beta: int = 20
    lr_f: float = 0.01
    lr_d: float = 0.01
    lr_c: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    max_rounds: int = 10
    pretrain_epochs: int = 30
    seed: int = 0
    alpha_mode: str = "source"
    mining_enabled: bool = True
    adversarial: bool = True  # False skips the adversarial phase (pseudo-only ablation)
    early_stop: bool = False

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.beta < 1:
            raise ValueError("beta must be >= 1; set adversarial=False to skip the phase")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if min(self.lr_f, self.lr_d, self.lr_c) <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning rates must be positive and momentum in [0, 1)")
        if self.max_rounds < 0 or self.pretrain_epochs < 0:
            raise ValueError("max_rounds and pretrain_epochs must be non-negative")
        if self.alpha_mode not in ALPHA_MODES:
            raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}")


@dataclass
class PseudoLabelSet:
    indices: np.ndarray
    labels: np.ndarray
    confidences: np.ndarray

    def __len__(self):
        return len(self.indices)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))


@dataclass
class TraceRecord:
    round: int
    iter: int
    phase: str
    loss_adv: Optional[float] = None
    loss_cls: Optional[float] = None
    j_star: Optional[int] = None
    n_pseudo: Optional[int] = None
    pseudo_acc: Optional[float] = None
    test_acc: Optional[float] = None


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)

    def append(self, record: TraceRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def to_dicts(self):
        return [asdict(r) for r in self.records]

    def to_jsonl(self):
        return "".join(json.dumps(d) + "\n" for d in self.to_dicts())

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_dicts(cls, rows):
        return cls([TraceRecord(**r) for r in rows])


def _finite(value, what):
    if not math.isfinite(value):
        raise NonFiniteError(f"{what} loss is not finite: {value}")
    return value


def _classification_grads(model, feats, labels, heads_of_row, row_weight):
    """Accumulate CE gradients into the classifiers; return (loss, d loss / d feats).

    ``heads_of_row[j]`` is a boolean row mask selecting which rows train
    classifier ``j``.
    """
    grad_f = np.zeros_like(feats)
    total = 0.0
    for j, rows in enumerate(heads_of_row):
        if not rows.any():
            continue
        p = classify(model, feats[rows], j)
        loss, g = losses("softmax_ce", p, model.columns(j, labels[rows]), row_weight[rows])
        total += loss
        grad_f[rows] += model.classifiers[j].backward(g)
    return total, grad_f


def _supervised_step(model, src_x, src_y, src_id, pseudo_x, pseudo_y, cfg):
    """One SGD step on F and C: sum over sources of the mean CE of that
    source's rows, plus the mean over pseudo rows of the CE summed over every
    source head that knows the pseudo label."""
    n_src = model.n_sources
    x = np.concatenate([src_x, pseudo_x]) if len(pseudo_x) else src_x
    y = np.concatenate([src_y, pseudo_y]) if len(pseudo_y) else src_y
    is_pseudo = np.arange(len(x)) >= len(src_x)
    owner = np.concatenate([src_id, np.full(len(pseudo_x), -1)])
    weight = np.zeros(len(x))
    heads = []
    for j in range(n_src):
        mine = owner == j
        if mine.any():
            weight[mine] = 1.0 / mine.sum()
        heads.append(mine | (is_pseudo & np.isin(y, model.class_sets[j])))
    if is_pseudo.any():
        weight[is_pseudo] = 1.0 / is_pseudo.sum()
    feats = extract(model, x)
    loss, grad_f = _classification_grads(model, feats, y, heads, weight)
    model.extractor.backward(grad_f)
    _finite(loss, "classification")
    sgd_step(model.extractor_params(), cfg.lr_f, cfg.momentum)
    sgd_step(model.classifier_params(), cfg.lr_c, cfg.momentum)
    return loss


def discriminative_update(model, sources, pseudo, cfg, target=None, rng=None):
    """One epoch over pooled source rows and pseudo-labeled target rows.

    ``target`` supplies the features that ``pseudo.indices`` point into.
    Returns the mean step loss.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    full = set(model.full_class_list)
    if len(pseudo) and not set(int(c) for c in pseudo.labels) <= full:
        raise AssertionError("pseudo label outside the target class list")
    xs = np.concatenate([s.features for s in sources])
    ys = np.concatenate([s.labels for s in sources])
    ids = np.concatenate([np.full(s.n, j) for j, s in enumerate(sources)])
    n_src_rows = len(xs)
    if len(pseudo):
        xs = np.concatenate([xs, target.features[pseudo.indices]])
        ys = np.concatenate([ys, pseudo.labels])
    order = rng.permutation(len(xs))
    step_losses = []
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start: start + cfg.batch_size]
        src = idx[idx < n_src_rows]
        pse = idx[idx >= n_src_rows]
        step_losses.append(_supervised_step(model, xs[src], ys[src], ids[src], xs[pse], ys[pse], cfg))
    return float(np.mean(step_losses))


def update_discriminator(model, batch, cfg):
    """One SGD step on the discriminators only (sources labelled 1, target 0)."""
    n = model.n_sources
    m = len(batch.target_batch)
    feats = extract(model, np.concatenate([x for x, _ in batch.source_batches] + [batch.target_batch]))
    f_tgt = feats[n * m:]
    total = 0.0
    for j in range(n):
        f = np.concatenate([feats[j * m:(j + 1) * m], f_tgt])
        p = model.discriminators[j].forward(f)
        l_src, g_src = losses("sigmoid_bce", p[:m], 1.0)
        l_tgt, g_tgt = losses("sigmoid_bce", p[m:], 0.0)
        total += (l_src + l_tgt) / n
        model.discriminators[j].backward(np.concatenate([g_src, g_tgt]) / n)
    _finite(total, "adversarial")
    sgd_step(model.discriminator_params(), cfg.lr_d, cfg.momentum)
    return total


def source_target_losses(model, batch):
    """Per source: ``sum_i -log D_j(F(x_i^j)) - log(1 - D_j(F(x_i^t)))``."""
    n = model.n_sources
    m = len(batch.target_batch)
    feats = extract(model, np.concatenate([x for x, _ in batch.source_batches] + [batch.target_batch]))
    f_tgt = feats[n * m:]
    out = np.empty(n)
    for j in range(n):
        p_src = discriminate(model, feats[j * m:(j + 1) * m], j)
        p_tgt = discriminate(model, f_tgt, j)
        # fsum keeps the total independent of row order
        out[j] = math.fsum(np.concatenate([-np.log(p_src), -np.log(1 - p_tgt)]))
    return out


def select_hard_source(model, batch):
    """0-based index of the source with the largest discriminator loss; ties go low."""
    return int(np.argmax(source_target_losses(model, batch)))


def update_extractor(model, batch, j_star, cfg):
    """One SGD step on F: domain confusion through the frozen discriminator of
    ``j_star`` (or the mean over all sources when ``j_star`` is None), plus
    source classification through the frozen classifiers."""
    n = model.n_sources
    m = len(batch.target_batch)
    x = np.concatenate([x for x, _ in batch.source_batches] + [batch.target_batch])
    feats = extract(model, x)
    grad_f = np.zeros_like(feats)
    chosen = range(n) if j_star is None else [j_star]
    scale = 1.0 / len(chosen)
    loss_conf = 0.0
    for j in chosen:
        rows = np.r_[j * m:(j + 1) * m, n * m:(n + 1) * m]
        p = model.discriminators[j].forward(feats[rows])
        l_src, g_src = losses("confusion_bce", p[:m])
        l_tgt, g_tgt = losses("confusion_bce", p[m:])
        loss_conf += scale * (l_src + l_tgt)
        grad_f[rows] += model.discriminators[j].backward(scale * np.concatenate([g_src, g_tgt]))
    labels = np.concatenate([y for _, y in batch.source_batches] + [np.zeros(m, dtype=np.int64)])
    owner = np.repeat(np.arange(n + 1), m)
    heads = [owner == j for j in range(n)]
    weight = np.where(owner < n, 1.0 / m, 0.0)
    loss_cls, g = _classification_grads(model, feats, labels, heads, weight)
    grad_f += g
    model.extractor.backward(grad_f)
    loss = _finite(loss_conf + loss_cls, "extractor")
    # D and C are frozen in this step; drop what backprop left in them
    for p in model.discriminator_params() + model.classifier_params():
        p.zero_grad()
    sgd_step(model.extractor_params(), cfg.lr_f, cfg.momentum)
    return loss


def pseudo_label(model, target, cfg, uniform=False):
    """Target rows whose operator confidence is strictly above ``cfg.gamma``.

    Uses ``model.alphas``; refresh them with :func:`concentration_constants`
    first.
    """
    pred = predict_target(model, target, uniform=uniform)
    conf = pred.max_confidence
    keep = np.flatnonzero(conf > cfg.gamma)
    return PseudoLabelSet(keep, pred.labels[keep], conf[keep])


def _accuracy(model, target, labels, uniform):
    if labels is None:
        return None
    return float(np.mean(predict_target(model, target, uniform=uniform).labels == labels) * 100)


def _pseudo_accuracy(pseudo, labels):
    if labels is None or not len(pseudo):
        return None
    return float(np.mean(pseudo.labels == labels[pseudo.indices]) * 100)


def pretrain(model, sources, target, cfg, eval_labels=None, trace=None, rng=None):
    """Source training, uniform-weight pseudo-labeling, then fine-tuning."""
    rng = np.random.default_rng([cfg.seed, 1]) if rng is None else rng
    for epoch in range(cfg.pretrain_epochs):
        loss = discriminative_update(model, sources, PseudoLabelSet.empty(), cfg, rng=rng)
        if trace is not None:
            trace.append(TraceRecord(0, epoch, "pretrain_source", loss_cls=loss))
    pseudo = pseudo_label(model, target, cfg, uniform=True)
    for epoch in range(cfg.pretrain_epochs):
        loss = discriminative_update(model, sources, pseudo, cfg, target=target, rng=rng)
        if trace is not None:
            trace.append(TraceRecord(0, epoch, "pretrain_finetune", loss_cls=loss, n_pseudo=len(pseudo),
                                     pseudo_acc=_pseudo_accuracy(pseudo, eval_labels)))
    if trace is not None and trace.records:
        trace.records[-1].test_acc = _accuracy(model, target, eval_labels, uniform=True)
    return model


def _stable(history):
    if len(history) < 4:
        return False
    base = history[-4]
    for later in history[-3:]:
        for a, b in zip(base, later):
            if abs(a - b) > 0.01 * max(abs(a), 1e-12):
                return False
    return True


def train(model, sources, target, cfg, eval_labels=None, checkpoint_path=None, skip_pretrain=False):
    """Pretrain, then ``max_rounds`` rounds of ``beta`` adversarial iterations
    followed by one pseudo-label discriminative epoch.

    ``eval_labels`` are only used to log accuracies in the trace.
    """
    trace = TrainTrace()
    rng = np.random.default_rng([cfg.seed, 1])
    if not skip_pretrain:
        pretrain(model, sources, target, cfg, eval_labels, trace, rng)
    stream = make_batches(sources, target, cfg.batch_size, seed=[cfg.seed, 2], epochs=None)
    history = []
    for rnd in range(1, cfg.max_rounds + 1):
        if cfg.adversarial:
            for it in range(cfg.beta):
                batch = next(stream)
                loss_d = update_discriminator(model, batch, cfg)
                j_star = select_hard_source(model, batch) if cfg.mining_enabled else None
                loss_f = update_extractor(model, batch, j_star, cfg)
                trace.append(TraceRecord(rnd, it, "adversarial", loss_adv=loss_d, loss_cls=loss_f,
                                         j_star=j_star))
            model.alphas = concentration_constants(model, sources, cfg.alpha_mode)
        pseudo = pseudo_label(model, target, cfg, uniform=not cfg.adversarial)
        loss_c = discriminative_update(model, sources, pseudo, cfg, target=target, rng=rng)
        test_acc = _accuracy(model, target, eval_labels, uniform=not cfg.adversarial)
        trace.append(TraceRecord(rnd, 0, "discriminative", loss_cls=loss_c, n_pseudo=len(pseudo),
                                 pseudo_acc=_pseudo_accuracy(pseudo, eval_labels), test_acc=test_acc))
        if checkpoint_path is not None:
            model.save(checkpoint_path)
        history.append((float(len(pseudo)), loss_c))
        if cfg.early_stop and _stable(history):
            break
    if cfg.adversarial and cfg.max_rounds > 0:
        model.alphas = concentration_constants(model, sources, cfg.alpha_mode)
    return model, trace
