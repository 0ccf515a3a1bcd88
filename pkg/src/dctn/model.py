"""Feature extractor, per-source discriminators/classifiers and the
perplexity-weighted target classification operator."""

import io
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .nn import EPS, Dense, Mlp

ALPHA_MODES = ("source", "complement")


class DctnModel:
    """Extractor ``F``, discriminators ``D_j`` (sigmoid) and classifiers ``C_j``
    (softmax over ``class_sets[j]``), one pair per source.

    ``alphas`` holds the latest concentration constants; they start at zero and
    are refreshed by :func:`concentration_constants` during training.
    """

    def __init__(self, extractor, discriminators, classifiers, class_sets, full_class_list=None):
        if not class_sets or not len(discriminators) == len(classifiers) == len(class_sets):
            raise ValueError("need one discriminator, classifier and class set per source")
        self.class_sets = [tuple(sorted(int(c) for c in cs)) for cs in class_sets]
        union = sorted(set().union(*self.class_sets))
        self.full_class_list = tuple(union if full_class_list is None else sorted(full_class_list))
        if set(self.full_class_list) != set(union):
            raise ValueError("full class list must be the union of source class sets")
        for j, (d, c) in enumerate(zip(discriminators, classifiers)):
            if d.in_dim != extractor.out_dim or c.in_dim != extractor.out_dim:
                raise ShapeError(f"head {j} does not take extractor width {extractor.out_dim}")
            if d.out_dim != 1 or d.layers[-1].activation != "sigmoid":
                raise ValueError(f"discriminator {j} must end in a single sigmoid unit")
            if c.out_dim != len(self.class_sets[j]) or c.layers[-1].activation != "softmax":
                raise ValueError(f"classifier {j} must be a softmax over {len(self.class_sets[j])} classes")
        self.extractor = extractor
        self.discriminators = list(discriminators)
        self.classifiers = list(classifiers)
        self.alphas = np.zeros(len(self.class_sets))

    @classmethod
    def build(cls, in_dim, class_sets, extractor_hidden=(64, 32), disc_hidden=(16,),
              clf_hidden=(), rng=None):
        rng = np.random.default_rng() if rng is None else rng
        f_dims = [in_dim, *extractor_hidden]
        extractor = Mlp.build(f_dims, hidden="relu", out="relu", rng=rng)
        d_f = f_dims[-1]
        discs = [Mlp.build([d_f, *disc_hidden, 1], out="sigmoid", rng=rng) for _ in class_sets]
        clfs = [Mlp.build([d_f, *clf_hidden, len(cs)], out="softmax", rng=rng) for cs in class_sets]
        return cls(extractor, discs, clfs, class_sets)

    @property
    def n_sources(self):
        return len(self.class_sets)

    @property
    def n_classes(self):
        return len(self.full_class_list)

    def class_mask(self):
        """Boolean [N x K]: source j has class ``full_class_list[k]``."""
        return _mask(self.class_sets, self.full_class_list).astype(bool)

    def columns(self, j, labels):
        """Map class labels to output columns of classifier ``j``."""
        cs = np.asarray(self.class_sets[j])
        labels = np.asarray(labels)
        col = np.searchsorted(cs, labels)
        if np.any(col >= len(cs)) or np.any(cs[np.minimum(col, len(cs) - 1)] != labels):
            raise ValueError(f"labels outside class set of source {j}")
        return col

    def extractor_params(self):
        return self.extractor.params()

    def discriminator_params(self):
        return [p for d in self.discriminators for p in d.params()]

    def classifier_params(self):
        return [p for c in self.classifiers for p in c.params()]

    def params(self):
        return self.extractor_params() + self.discriminator_params() + self.classifier_params()

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def snapshot(self):
        return [p.values.copy() for p in self.params()]

    # checkpointing ---------------------------------------------------------

    def _nets(self):
        yield "F", self.extractor
        for j, d in enumerate(self.discriminators):
            yield f"D{j}", d
        for j, c in enumerate(self.classifiers):
            yield f"C{j}", c

    def save(self, path):
        """Write a self-describing ``.npz``; replaces ``path`` atomically."""
        arrays, layout = {}, {}
        for name, net in self._nets():
            layout[name] = [layer.activation for layer in net.layers]
            for i, layer in enumerate(net.layers):
                arrays[f"{name}.{i}.W"] = layer.W.values
                arrays[f"{name}.{i}.b"] = layer.b.values
        arrays["alphas"] = self.alphas
        meta = {"format": "dctn-checkpoint/1", "class_sets": [list(cs) for cs in self.class_sets],
                "full_class_list": list(self.full_class_list), "layout": layout}
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            meta = json.loads(z["meta"].tobytes().decode())
            nets = {}
            for name, acts in meta["layout"].items():
                nets[name] = Mlp([Dense(z[f"{name}.{i}.W"], z[f"{name}.{i}.b"], a)
                                  for i, a in enumerate(acts)])
            n = len(meta["class_sets"])
            model = cls(nets["F"], [nets[f"D{j}"] for j in range(n)],
                        [nets[f"C{j}"] for j in range(n)], meta["class_sets"], meta["full_class_list"])
            model.alphas = z["alphas"].copy()
        return model


@dataclass
class PerplexityScores:
    scores: np.ndarray  # [n_target x N]
    alphas: np.ndarray  # [N]


@dataclass
class TargetPrediction:
    """Batched confidence vectors over ``class_list``."""

    confidence: np.ndarray  # [n x K]
    class_list: tuple

    @property
    def predicted_index(self):
        return np.argmax(self.confidence, axis=1)  # first max wins -> lowest class

    @property
    def labels(self):
        return np.asarray(self.class_list)[self.predicted_index]

    @property
    def max_confidence(self):
        return self.confidence.max(axis=1)


def extract(model, batch):
    return model.extractor.forward(batch)


def _check_source(model, j):
    if not 0 <= j < model.n_sources:
        raise IndexError(f"source index {j} out of range for {model.n_sources} sources")


def discriminate(model, features, j):
    """Probability that each feature row comes from source ``j`` rather than the target."""
    _check_source(model, j)
    p = model.discriminators[j].forward(features)[:, 0]
    return np.clip(p, EPS, 1 - EPS)


def classify(model, features, j):
    _check_source(model, j)
    return model.classifiers[j].forward(features)


def concentration_constants(model, sources, alpha_mode="source"):
    """Average discriminator loss of each source over its own samples.

    ``alpha_mode="source"`` averages ``-log D_j``; ``"complement"`` averages
    ``-log(1 - D_j)``.
    """
    if alpha_mode not in ALPHA_MODES:
        raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}")
    alphas = np.empty(len(sources))
    for j, src in enumerate(sources):
        if src.n == 0:
            raise ValueError(f"source {j} is empty")
        p = discriminate(model, extract(model, src.features), j)
        alphas[j] = np.mean(-np.log(p) if alpha_mode == "source" else -np.log(1 - p))
    return alphas


def perplexity_score(model, target_features, alphas):
    """``-log(1 - D_j(F(x))) + alpha_j`` for every target row and source."""
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.shape != (model.n_sources,):
        raise ShapeError(f"expected {model.n_sources} alphas, got shape {alphas.shape}")
    cols = [-np.log(1 - discriminate(model, target_features, j)) for j in range(model.n_sources)]
    return PerplexityScores(np.stack(cols, axis=1) + alphas, alphas)


def _mask(class_sets, class_list):
    col = {c: k for k, c in enumerate(class_list)}
    mask = np.zeros((len(class_sets), len(class_list)))
    for j, cs in enumerate(class_sets):
        mask[j, [col[c] for c in cs]] = 1.0
    return mask


def source_weights(scores, class_sets, class_list):
    """Weights [n x N x K] of each source's vote for each class.

    For class ``c`` only sources whose class set contains ``c`` take part and
    their scores are renormalised among themselves. If all of those scores
    are zero the eligible sources share the weight uniformly; a class that no
    source knows gets all-zero weights.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != len(class_sets):
        raise ShapeError(f"scores {s.shape} do not match {len(class_sets)} sources")
    mask = _mask(class_sets, class_list)
    weighted = s[:, :, None] * mask[None]
    denom = weighted.sum(axis=1, keepdims=True)
    eligible = mask.sum(axis=0)
    uniform = np.divide(mask, eligible, out=np.zeros_like(mask), where=eligible > 0)
    return np.where(denom > 0, weighted / np.where(denom > 0, denom, 1.0), uniform[None])


def combine_confidence(scores, per_source_softmax, class_sets, class_list):
    """Score-weighted mixture of per-source softmax outputs over ``class_list``."""
    w = source_weights(scores, class_sets, class_list)
    n = w.shape[0]
    if len(per_source_softmax) != len(class_sets):
        raise ShapeError(f"{len(per_source_softmax)} softmax blocks for {len(class_sets)} sources")
    col = {c: k for k, c in enumerate(class_list)}
    probs = np.zeros((len(class_sets), n, len(class_list)))
    for j, cs in enumerate(class_sets):
        sm = np.asarray(per_source_softmax[j], dtype=np.float64)
        if sm.shape != (n, len(cs)):
            raise ShapeError(f"softmax {j} has shape {sm.shape}, expected {(n, len(cs))}")
        probs[j][:, [col[c] for c in cs]] = sm
    return np.einsum("njk,jnk->nk", w, probs)


def target_confidence(model, scores, per_source_softmax):
    if isinstance(scores, PerplexityScores):
        scores = scores.scores
    conf = combine_confidence(scores, per_source_softmax, model.class_sets, model.full_class_list)
    return TargetPrediction(conf, model.full_class_list)


def uniform_scores(n, n_sources):
    return np.full((n, n_sources), 1.0 / n_sources)


def predict_target(model, target, alphas=None, uniform=False):
    """Classify target rows with the operator.

    ``uniform=True`` replaces the perplexity scores by ``1/N`` (used before
    the discriminators are trained). Otherwise ``alphas`` defaults to
    ``model.alphas``.
    """
    x = target.features if hasattr(target, "features") else np.asarray(target)
    f = extract(model, x)
    softmaxes = [classify(model, f, j) for j in range(model.n_sources)]
    if uniform:
        scores = uniform_scores(len(f), model.n_sources)
    else:
        scores = perplexity_score(model, f, model.alphas if alphas is None else alphas).scores
    return target_confidence(model, scores, softmaxes)
