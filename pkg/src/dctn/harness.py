"""Experiment runner: baselines, DCTN and ablations under the three shift
protocols, plus metrics and report files."""

import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .data import (DomainDataset, ShiftSpec, apply_category_shift, gen_synthetic_domains,
                   load_csv_dataset)
from .errors import ConfigError
from .model import DctnModel, extract, predict_target
from .training import PseudoLabelSet, TrainConfig, TrainTrace, discriminative_update, train

log = logging.getLogger(__name__)

METHODS = ("source_only", "source_combine", "single_best", "pretrain_only", "dctn",
           "adversarial_only", "pseudo_only", "dctn_no_mining")
SUMMARY_HEADER = ["method", "mean", "std", "gain", "degraded"]
FEATURE_HEADER = ["x", "y", "domain", "label", "predicted"]


@dataclass
class ExperimentConfig:
    # synthetic data (used when source_csv is empty)
    n_sources: int = 2
    n_classes: int = 4
    samples_per_domain: int = 500
    shift_strength: float = 0.35
    data_seed: int = 0
    # csv data
    source_csv: tuple = ()
    target_csv: str = ""
    # protocol
    shift_mode: str = "vanilla"
    vanilla_reference: bool = False
    methods: tuple = ("source_only", "dctn")
    n_seeds: int = 1
    seed_offset: int = 0
    output_dir: str = ""
    dump_features: bool = True
    # networks
    extractor_hidden: tuple = (64, 32)
    disc_hidden: tuple = (16,)
    clf_hidden: tuple = ()
    # training
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        if self.source_csv and not self.target_csv:
            raise ConfigError("source_csv given without target_csv")
        n = len(self.source_csv) if self.source_csv else self.n_sources
        if "single_best" in self.methods and n < 1:
            raise ConfigError("single_best needs at least one source")
        try:
            if self.uses_csv:
                # class count is only known once the files are read
                ShiftSpec(self.shift_mode, n, 3)
            else:
                self.shift_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def uses_csv(self):
        return bool(self.source_csv)

    def shift_spec(self, mode=None):
        n = len(self.source_csv) if self.uses_csv else self.n_sources
        return ShiftSpec(mode or self.shift_mode, n, self.n_classes)

    def comparable(self, other):
        """True when the two configs differ at most in ``shift_mode``."""
        return dataclasses.replace(self, shift_mode="vanilla") == dataclasses.replace(other, shift_mode="vanilla")


# config file -----------------------------------------------------------------

_TRAIN_KEYS = {f.name: f for f in fields(TrainConfig)}
_EXP_KEYS = {f.name: f for f in fields(ExperimentConfig) if f.name != "train"}
_INT_TUPLES = {"extractor_hidden", "disc_hidden", "clf_hidden"}
_STR_TUPLES = {"source_csv", "methods"}


def _convert(name, default, raw):
    raw = raw.strip()
    if name in _INT_TUPLES:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if name in _STR_TUPLES:
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    if isinstance(default, bool):
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text, base_dir=None):
    """Parse ``key = value`` lines (``#`` starts a comment).

    Keys are the :class:`ExperimentConfig` fields plus the
    :class:`TrainConfig` fields; list values are comma separated. Relative
    CSV paths resolve against ``base_dir``.
    """
    exp_defaults = ExperimentConfig.__dataclass_fields__
    train_defaults = TrainConfig()
    exp_kw, train_kw = {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in exp_kw or key in train_kw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _TRAIN_KEYS:
                train_kw[key] = _convert(key, getattr(train_defaults, key), raw)
            elif key in _EXP_KEYS:
                f = exp_defaults[key]
                default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
                exp_kw[key] = _convert(key, default, raw)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    if base_dir is not None:
        if "source_csv" in exp_kw:
            exp_kw["source_csv"] = tuple(os.path.join(base_dir, p) for p in exp_kw["source_csv"])
        if exp_kw.get("target_csv"):
            exp_kw["target_csv"] = os.path.join(base_dir, exp_kw["target_csv"])
    try:
        return ExperimentConfig(train=TrainConfig(**train_kw), **exp_kw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base_dir=os.path.dirname(os.path.abspath(path)))


def config_to_dict(cfg):
    d = dataclasses.asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# data ------------------------------------------------------------------------

def load_domains(cfg: ExperimentConfig, seed_index=0, mode=None):
    """``(sources, target, target_labels)`` for one seed, after category shift.

    Target labels are split off here and only ever reach the evaluators.
    """
    if cfg.uses_csv:
        sources = [load_csv_dataset(p, True, name=f"source{j + 1}") for j, p in enumerate(cfg.source_csv)]
        labeled = load_csv_dataset(cfg.target_csv, True, name="target")
        target, labels = labeled.unlabeled(), labeled.labels
        classes = sorted(set().union(*(s.class_set for s in sources)))
        if classes != list(range(len(classes))):
            raise ConfigError("CSV class labels must be 0..K-1")
        spec = ShiftSpec(mode or cfg.shift_mode, len(sources), len(classes))
    else:
        sources, target, labels = gen_synthetic_domains(
            cfg.n_sources, cfg.n_classes, cfg.samples_per_domain, cfg.shift_strength,
            cfg.data_seed + seed_index)
        spec = cfg.shift_spec(mode)
    if spec.mode != "vanilla":
        sources = apply_category_shift(sources, spec)
    return sources, target, labels


# methods ---------------------------------------------------------------------

@dataclass
class RunResult:
    accuracy: float
    model: DctnModel
    uniform: bool
    trace: Optional[TrainTrace] = None
    sources: list = None


def _build(cfg, sources, seed, class_sets=None):
    class_sets = class_sets or [s.class_set for s in sources]
    return DctnModel.build(sources[0].dim, class_sets, cfg.extractor_hidden, cfg.disc_hidden,
                           cfg.clf_hidden, rng=np.random.default_rng([seed, 0]))


def accuracy(model, target, labels, uniform=False):
    if labels is None:
        raise ValueError("evaluation needs held-out target labels")
    return float(np.mean(predict_target(model, target, uniform=uniform).labels == labels) * 100)


def baseline_source_only(sources, target, cfg: ExperimentConfig, seed, labels, combine=False):
    """Source training only; no adaptation.

    ``combine=False`` keeps one classifier head per source and fuses them with
    uniform weights; ``combine=True`` pools every source into a single head.
    """
    tcfg = dataclasses.replace(cfg.train, seed=seed)
    if combine:
        pooled = DomainDataset("combined", np.concatenate([s.features for s in sources]),
                               np.concatenate([s.labels for s in sources]))
        sources = [pooled]
    model = _build(cfg, sources, seed)
    rng = np.random.default_rng([seed, 1])
    for _ in range(tcfg.pretrain_epochs):
        discriminative_update(model, sources, PseudoLabelSet.empty(), tcfg, rng=rng)
    return RunResult(accuracy(model, target, labels, uniform=True), model, True, sources=sources)


_TRAIN_VARIANTS = {
    "pretrain_only": dict(max_rounds=0),
    "dctn": {},
    "adversarial_only": dict(gamma=1.0),
    "pseudo_only": dict(adversarial=False),
    "dctn_no_mining": dict(mining_enabled=False),
}


def run_method(method, sources, target, labels, cfg: ExperimentConfig, seed):
    if method == "source_only":
        return baseline_source_only(sources, target, cfg, seed, labels)
    if method == "source_combine":
        return baseline_source_only(sources, target, cfg, seed, labels, combine=True)
    if method == "single_best":
        best = None
        for j, src in enumerate(sources):
            run = run_method("dctn", [src], target, labels, cfg, seed)
            log.info("single source %d: %.1f", j + 1, run.accuracy)
            if best is None or run.accuracy > best.accuracy:
                best = run
        return best
    tcfg = dataclasses.replace(cfg.train, seed=seed, **_TRAIN_VARIANTS[method])
    model = _build(cfg, sources, seed)
    model, trace = train(model, sources, target, tcfg, eval_labels=labels)
    uniform = tcfg.max_rounds == 0 or not tcfg.adversarial
    return RunResult(accuracy(model, target, labels, uniform), model, uniform, trace, sources)


# metrics and report ----------------------------------------------------------

def compute_metrics(results, vanilla_reference=None, gains=True, baseline="source_only"):
    """Per-method accuracy, transfer gain and (with a vanilla reference)
    degraded accuracy, all in percentage points at one decimal."""
    for acc in list(results.values()) + list((vanilla_reference or {}).values()):
        if acc is not None and not 0 <= acc <= 100:
            raise ValueError(f"accuracy {acc} outside [0, 100]")
    if gains and results and results.get(baseline) is None:
        raise ValueError(f"transfer gain needs a {baseline!r} result")
    table = {}
    for method, acc in results.items():
        row = {"accuracy": acc, "transfer_gain": None, "degraded_accuracy": None}
        if acc is not None:
            if gains:
                row["transfer_gain"] = round(acc - results[baseline], 1)
            ref = (vanilla_reference or {}).get(method)
            if ref is not None:
                row["degraded_accuracy"] = round(acc - ref, 1)
        table[method] = row
    return table


@dataclass
class MethodResult:
    accuracies: list  # per seed, None for failed runs
    mean: Optional[float] = None
    std: Optional[float] = None
    transfer_gain: Optional[float] = None
    degraded_accuracy: Optional[float] = None
    failures: list = field(default_factory=list)
    note: str = ""


@dataclass
class ExperimentReport:
    config: dict
    seeds: list
    methods: dict  # name -> MethodResult
    vanilla_reference: Optional[dict] = None  # name -> mean accuracy in the vanilla setting
    traces: dict = field(default_factory=dict)  # name -> [per-seed list of trace records]
    feature_dumps: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def failed(self):
        return any(m.failures for m in self.methods.values())

    def to_json(self):
        payload = {
            "config": self.config,
            "seeds": self.seeds,
            "methods": {k: dataclasses.asdict(v) for k, v in self.methods.items()},
            "vanilla_reference": self.vanilla_reference,
            "traces": self.traces,
        }
        return json.dumps(payload, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        methods = {k: MethodResult(**v) for k, v in d["methods"].items()}
        return cls(d["config"], d["seeds"], methods, d["vanilla_reference"], d["traces"])


def _mean_std(accs):
    ok = [a for a in accs if a is not None]
    if not ok:
        return None, None
    return round(float(np.mean(ok)), 1), round(float(np.std(ok)), 1)


def aggregate(report: ExperimentReport):
    """Fill mean/std and the metric columns from the per-seed accuracies."""
    for res in report.methods.values():
        res.mean, res.std = _mean_std(res.accuracies)
    means = {k: v.mean for k, v in report.methods.items()}
    gains = "source_only" in means and means["source_only"] is not None
    table = compute_metrics(means, report.vanilla_reference, gains=gains)
    for k, row in table.items():
        report.methods[k].transfer_gain = row["transfer_gain"]
        report.methods[k].degraded_accuracy = row["degraded_accuracy"]
    return report


def _feature_dump(run: RunResult, sources, target, labels):
    """2-D PCA projection of extractor outputs for every source and target row."""
    domains = list(sources) + [target]
    feats = [extract(run.model, d.features) for d in domains]
    allf = np.concatenate(feats)
    centred = allf - allf.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    basis = vt[:2].T
    if basis.shape[1] < 2:
        basis = np.pad(basis, ((0, 0), (0, 2 - basis.shape[1])))
    xy = centred @ basis
    rows, start = [], 0
    for d, f in zip(domains, feats):
        pred = predict_target(run.model, d.features, uniform=run.uniform).labels
        lab = d.labels if d.labeled else labels
        for i in range(len(f)):
            rows.append((float(xy[start + i, 0]), float(xy[start + i, 1]), d.name, int(lab[i]), int(pred[i])))
        start += len(f)
    return rows


def _run_protocol(cfg: ExperimentConfig, seeds, mode, keep_dumps):
    methods = {m: MethodResult([]) for m in cfg.methods}
    traces = {m: [] for m in cfg.methods}
    dumps = {}
    for i, seed in enumerate(seeds):
        sources, target, labels = load_domains(cfg, i, mode)
        for m in cfg.methods:
            try:
                run = run_method(m, sources, target, labels, cfg, seed)
            except Exception as exc:  # noqa: BLE001
                log.exception("%s seed %s failed", m, seed)
                methods[m].accuracies.append(None)
                methods[m].failures.append(f"seed {seed}: {type(exc).__name__}: {exc}")
                traces[m].append([])
                continue
            log.info("%s [%s] seed %s: %.1f", m, mode, seed, run.accuracy)
            methods[m].accuracies.append(run.accuracy)
            traces[m].append(run.trace.to_dicts() if run.trace is not None else [])
            if keep_dumps and m not in dumps:
                dumps[m] = _feature_dump(run, sources, target, labels)
    if "single_best" in methods:
        methods["single_best"].note = "best single-source run selected on target test labels"
    if "source_combine" in methods:
        methods["source_combine"].note = "pooled sources, one classifier head"
    if "source_only" in methods:
        methods["source_only"].note = "per-source heads, uniform fusion"
    return methods, traces, dumps


def run_experiment(cfg: ExperimentConfig):
    seeds = [cfg.train.seed + cfg.seed_offset + i for i in range(cfg.n_seeds)]
    methods, traces, dumps = _run_protocol(cfg, seeds, cfg.shift_mode, cfg.dump_features)
    vanilla = None
    if cfg.vanilla_reference and cfg.shift_mode != "vanilla":
        ref, _, _ = _run_protocol(cfg, seeds, "vanilla", False)
        vanilla = {k: _mean_std(v.accuracies)[0] for k, v in ref.items()}
    report = ExperimentReport(config_to_dict(cfg), seeds, methods, vanilla, traces, dumps)
    aggregate(report)
    if cfg.output_dir:
        emit_report(report, cfg.output_dir)
    return report


def _fmt(v):
    return "" if v is None else f"{v:.1f}"


def emit_report(report: ExperimentReport, output_dir):
    """Write report.json, summary.csv and features_<method>.csv."""
    try:
        os.makedirs(output_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {output_dir}: {exc}") from exc
    written = []
    path = os.path.join(output_dir, "report.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    written.append(path)
    path = os.path.join(output_dir, "summary.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for name, res in report.methods.items():
            w.writerow([name, _fmt(res.mean), _fmt(res.std), _fmt(res.transfer_gain),
                        _fmt(res.degraded_accuracy)])
    written.append(path)
    for name, rows in report.feature_dumps.items():
        path = os.path.join(output_dir, f"features_{name}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FEATURE_HEADER)
            w.writerows(rows)
        written.append(path)
    for name, per_seed in report.traces.items():
        for seed, records in zip(report.seeds, per_seed):
            if not records:
                continue
            path = os.path.join(output_dir, f"trace_{name}_seed{seed}.jsonl")
            TrainTrace.from_dicts(records).write(path)
            written.append(path)
    return written


def reaggregate(input_dir):
    """Reload report.json, recompute the metrics and rewrite summary.csv."""
    with open(os.path.join(input_dir, "report.json"), encoding="utf-8") as fh:
        report = ExperimentReport.from_json(fh.read())
    aggregate(report)
    emit_report(report, input_dir)
    return report
