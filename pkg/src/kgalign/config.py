"""Run configuration: a JSON file validated into frozen dataclasses.

The schema is strict in both directions: unknown keys are rejected with
their full path, and every omitted field is filled with its documented
default, so the echoed form (to_dict) is self-describing. Seeds left null
are derived deterministically from the top-level seed, then echoed as
concrete integers; a saved echo therefore reproduces the run exactly.

Paths are resolved relative to the directory of the config file they came
from. The config fingerprint hashes the echoed form minus filesystem
locations (dataset path, translations path, output directory): artifact
content is tracked by the per-stage input hashes in the run manifest, and
two runs of the same configuration into different directories must agree
on their fingerprint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from .embed import DEFAULT_EMBED_DIM, DEFAULT_TAU, DEFAULT_TRAIN_EPOCHS, DEFAULT_TRAIN_LR
from .errors import ConfigError
from .features import DEFAULT_FEATURE_DIM, DEFAULT_NGRAM
from .rerank import DEFAULT_HIDDEN, DEFAULT_N_NEG, DEFAULT_RERANK_FEATURE_DIM
from .retrieval import DEFAULT_BEAM, DEFAULT_DEGREE
from .assign import DEFAULT_EPSILON, DEFAULT_SINKHORN_ITERS
from .util import fingerprint, stable_seed

DATASET_FORMATS = ("openea", "dbp15k")
SIDE_INFO_MODES = ("attributes", "names", "names_and_attributes", "translated_names")
VERBALIZER_MODES = ("template", "raw", "external")
EMBED_PROVIDERS = ("hash", "projection", "external")
INDEX_KINDS = ("exact", "approximate")
RERANKER_KINDS = ("trainable", "external")
DECISION_STRATEGIES = ("greedy", "hungarian", "sinkhorn")
SPLIT_MODES = ("regular", "hard")

DEFAULT_CANDIDATE_K = 50
DEFAULT_NEG_POOL = 200
DEFAULT_EMBED_NEG = 64


class _Reader:
    """Cursor over one config section; tracks consumed keys and its path."""

    def __init__(self, data: Mapping[str, Any], path: str) -> None:
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path or 'config'} must be an object, got {type(data).__name__}")
        self.data = data
        self.path = path
        self.seen: set[str] = set()

    def _at(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def take(self, key: str, default: Any) -> Any:
        self.seen.add(key)
        value = self.data.get(key, default)
        return default if value is None else value

    def take_raw(self, key: str) -> Any:
        # Like take, but None survives (for fields where null is meaningful).
        self.seen.add(key)
        return self.data.get(key)

    def section(self, key: str) -> "_Reader":
        self.seen.add(key)
        return _Reader(self.data.get(key) or {}, self._at(key))

    def finish(self) -> None:
        unknown = sorted(set(self.data) - self.seen)
        if unknown:
            where = self.path or "config"
            raise ConfigError(f"unknown key {unknown[0]!r} in {where}")

    # Typed accessors; all raise ConfigError naming the offending field.

    def str_(self, key: str, default: str | None = None, choices: Sequence[str] | None = None) -> str:
        value = self.take(key, default)
        if value is None:
            raise ConfigError(f"missing required field {self._at(key)!r}")
        if not isinstance(value, str):
            raise ConfigError(f"{self._at(key)} must be a string, got {type(value).__name__}")
        if choices is not None and value not in choices:
            raise ConfigError(f"{self._at(key)} must be one of {list(choices)}, got {value!r}")
        return value

    def opt_str(self, key: str) -> str | None:
        value = self.take_raw(key)
        if value is None:
            return None
        if not isinstance(value, str):
            raise ConfigError(f"{self._at(key)} must be a string, got {type(value).__name__}")
        return value

    def int_(self, key: str, default: int, lo: int | None = None) -> int:
        value = self.take(key, default)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{self._at(key)} must be an integer, got {value!r}")
        if lo is not None and value < lo:
            raise ConfigError(f"{self._at(key)} must be >= {lo}, got {value}")
        return value

    def opt_int(self, key: str) -> int | None:
        value = self.take_raw(key)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{self._at(key)} must be an integer, got {value!r}")
        return value

    def float_(self, key: str, default: float, positive: bool = False) -> float:
        value = self.take(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{self._at(key)} must be a number, got {value!r}")
        value = float(value)
        if positive and value <= 0:
            raise ConfigError(f"{self._at(key)} must be positive, got {value}")
        return value

    def opt_float(self, key: str) -> float | None:
        value = self.take_raw(key)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{self._at(key)} must be a number, got {value!r}")
        return float(value)

    def bool_(self, key: str, default: bool) -> bool:
        value = self.take(key, default)
        if not isinstance(value, bool):
            raise ConfigError(f"{self._at(key)} must be a boolean, got {value!r}")
        return value


def _resolve(base: Path | None, raw: str) -> str:
    p = Path(raw)
    if base is not None and not p.is_absolute():
        p = base / p
    return str(p)


@dataclass(frozen=True)
class DatasetConfig:
    path: str
    format: str = "openea"
    translations: str | None = None  # entity-id TAB name, both graphs' ids

    def to_dict(self) -> dict[str, Any]:
        return {"path": self.path, "format": self.format, "translations": self.translations}


@dataclass(frozen=True)
class VerbalizerConfig:
    mode: str = "template"
    budget: int = 2048
    service_url: str | None = None
    cache_dir: str | None = None
    max_tokens: int = 256

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "budget": self.budget,
            "service_url": self.service_url,
            "cache_dir": self.cache_dir,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class EmbedTrainConfig:
    enabled: bool = False
    lr: float = DEFAULT_TRAIN_LR
    epochs: int = DEFAULT_TRAIN_EPOCHS
    batch_size: int = 32
    n_neg: int = DEFAULT_EMBED_NEG
    pool: int = DEFAULT_NEG_POOL
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "enabled": self.enabled,
            "lr": self.lr,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "n_neg": self.n_neg,
            "pool": self.pool,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class EmbedderConfig:
    provider: str = "hash"
    dim: int = DEFAULT_EMBED_DIM
    feature_dim: int = DEFAULT_FEATURE_DIM
    ngram: int = DEFAULT_NGRAM
    normalize: bool = True
    tau: float = DEFAULT_TAU
    init_seed: int = 0
    train: EmbedTrainConfig = field(default_factory=EmbedTrainConfig)
    service_url: str | None = None
    cache_dir: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "provider": self.provider,
            "dim": self.dim,
            "feature_dim": self.feature_dim,
            "ngram": self.ngram,
            "normalize": self.normalize,
            "tau": self.tau,
            "init_seed": self.init_seed,
            "train": self.train.to_dict(),
            "service_url": self.service_url,
            "cache_dir": self.cache_dir,
        }


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = DEFAULT_CANDIDATE_K
    index: str = "exact"
    degree: int = DEFAULT_DEGREE
    beam: int = DEFAULT_BEAM
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {"k": self.k, "index": self.index, "degree": self.degree, "beam": self.beam, "seed": self.seed}


@dataclass(frozen=True)
class RerankerConfig:
    enabled: bool = True
    kind: str = "trainable"
    feature_dim: int = DEFAULT_RERANK_FEATURE_DIM
    hidden: int = DEFAULT_HIDDEN
    ngram: int = DEFAULT_NGRAM
    symmetrize: bool = False
    n_neg: int = DEFAULT_N_NEG
    lr: float = 0.3
    epochs: int = 6
    batch_size: int = 8
    tau: float = 1.0
    init_seed: int = 0
    train_seed: int = 0
    service_url: str | None = None
    cache_dir: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "enabled": self.enabled,
            "kind": self.kind,
            "feature_dim": self.feature_dim,
            "hidden": self.hidden,
            "ngram": self.ngram,
            "symmetrize": self.symmetrize,
            "n_neg": self.n_neg,
            "lr": self.lr,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "tau": self.tau,
            "init_seed": self.init_seed,
            "train_seed": self.train_seed,
            "service_url": self.service_url,
            "cache_dir": self.cache_dir,
        }


@dataclass(frozen=True)
class DecisionConfig:
    strategy: str = "greedy"
    epsilon: float | None = None  # sinkhorn only
    iters: int | None = None  # sinkhorn only

    def to_dict(self) -> dict[str, Any]:
        return {"strategy": self.strategy, "epsilon": self.epsilon, "iters": self.iters}


@dataclass(frozen=True)
class SplitConfig:
    mode: str = "regular"
    ratios: tuple[float, float, float] = (0.3, 0.1, 0.6)
    seed: int = 0
    name_dim: int = 256  # hard mode: name-embedder width
    name_seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "ratios": list(self.ratios),
            "seed": self.seed,
            "name_dim": self.name_dim,
            "name_seed": self.name_seed,
        }


@dataclass(frozen=True)
class EvalConfig:
    hits_ks: tuple[int, ...] = (1, 10)

    def to_dict(self) -> dict[str, Any]:
        return {"hits_ks": list(self.hits_ks)}


@dataclass(frozen=True)
class PipelineConfig:
    dataset: DatasetConfig
    output_dir: str
    side_info: str = "names_and_attributes"
    seed: int = 0
    verbalizer: VerbalizerConfig = field(default_factory=VerbalizerConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    reranker: RerankerConfig = field(default_factory=RerankerConfig)
    decision: DecisionConfig = field(default_factory=DecisionConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset.to_dict(),
            "output_dir": self.output_dir,
            "side_info": self.side_info,
            "seed": self.seed,
            "verbalizer": self.verbalizer.to_dict(),
            "embedder": self.embedder.to_dict(),
            "retrieval": self.retrieval.to_dict(),
            "reranker": self.reranker.to_dict(),
            "decision": self.decision.to_dict(),
            "split": self.split.to_dict(),
            "eval": self.eval.to_dict(),
        }

    def fingerprint(self) -> str:
        doc = self.to_dict()
        doc.pop("output_dir")
        doc["dataset"] = {k: v for k, v in doc["dataset"].items() if k not in ("path", "translations")}
        return fingerprint(doc)


def _seed_or(derived: int | None, top_seed: int, name: str) -> int:
    return stable_seed(top_seed, name) if derived is None else derived


def config_from_dict(data: Mapping[str, Any], base_dir: str | Path | None = None) -> PipelineConfig:
    """Validate a parsed config document; see module docstring for the rules."""
    base = Path(base_dir) if base_dir is not None else None
    top = _Reader(data, "")
    top_seed = top.int_("seed", 0)

    ds = top.section("dataset")
    dataset = DatasetConfig(
        path=_resolve(base, ds.str_("path")),
        format=ds.str_("format", "openea", DATASET_FORMATS),
        translations=(lambda t: _resolve(base, t) if t is not None else None)(ds.opt_str("translations")),
    )
    ds.finish()
    if not Path(dataset.path).is_dir():
        raise ConfigError(f"dataset.path does not exist or is not a directory: {dataset.path}")

    side_info = top.str_("side_info", "names_and_attributes", SIDE_INFO_MODES)
    if side_info == "translated_names":
        if dataset.translations is None:
            raise ConfigError("side_info 'translated_names' requires dataset.translations")
        if not Path(dataset.translations).is_file():
            raise ConfigError(f"dataset.translations does not exist: {dataset.translations}")

    vb = top.section("verbalizer")
    verbalizer = VerbalizerConfig(
        mode=vb.str_("mode", "template", VERBALIZER_MODES),
        budget=vb.int_("budget", 2048, lo=1),
        service_url=vb.opt_str("service_url"),
        cache_dir=(lambda c: _resolve(base, c) if c is not None else None)(vb.opt_str("cache_dir")),
        max_tokens=vb.int_("max_tokens", 256, lo=1),
    )
    vb.finish()
    if verbalizer.mode == "external" and not verbalizer.service_url:
        raise ConfigError("verbalizer.mode 'external' requires verbalizer.service_url")

    em = top.section("embedder")
    tr = em.section("train")
    train = EmbedTrainConfig(
        enabled=tr.bool_("enabled", False),
        lr=tr.float_("lr", DEFAULT_TRAIN_LR, positive=True),
        epochs=tr.int_("epochs", DEFAULT_TRAIN_EPOCHS, lo=0),
        batch_size=tr.int_("batch_size", 32, lo=1),
        n_neg=tr.int_("n_neg", DEFAULT_EMBED_NEG, lo=1),
        pool=tr.int_("pool", DEFAULT_NEG_POOL, lo=1),
        seed=_seed_or(tr.opt_int("seed"), top_seed, "embed-train"),
    )
    tr.finish()
    if train.pool < train.n_neg:
        raise ConfigError(f"embedder.train.pool ({train.pool}) must be >= n_neg ({train.n_neg})")
    embedder = EmbedderConfig(
        provider=em.str_("provider", "hash", EMBED_PROVIDERS),
        dim=em.int_("dim", DEFAULT_EMBED_DIM, lo=1),
        feature_dim=em.int_("feature_dim", DEFAULT_FEATURE_DIM, lo=1),
        ngram=em.int_("ngram", DEFAULT_NGRAM, lo=1),
        normalize=em.bool_("normalize", True),
        tau=em.float_("tau", DEFAULT_TAU, positive=True),
        init_seed=_seed_or(em.opt_int("init_seed"), top_seed, "embed-init"),
        train=train,
        service_url=em.opt_str("service_url"),
        cache_dir=(lambda c: _resolve(base, c) if c is not None else None)(em.opt_str("cache_dir")),
    )
    em.finish()
    if embedder.provider == "external" and not embedder.service_url:
        raise ConfigError("embedder.provider 'external' requires embedder.service_url")
    if embedder.provider != "projection" and train.enabled:
        raise ConfigError(f"embedder.train.enabled requires provider 'projection', got {embedder.provider!r}")

    rt = top.section("retrieval")
    retrieval = RetrievalConfig(
        k=rt.int_("k", DEFAULT_CANDIDATE_K, lo=1),
        index=rt.str_("index", "exact", INDEX_KINDS),
        degree=rt.int_("degree", DEFAULT_DEGREE, lo=1),
        beam=rt.int_("beam", DEFAULT_BEAM, lo=1),
        seed=_seed_or(rt.opt_int("seed"), top_seed, "retrieval"),
    )
    rt.finish()

    rr = top.section("reranker")
    reranker = RerankerConfig(
        enabled=rr.bool_("enabled", True),
        kind=rr.str_("kind", "trainable", RERANKER_KINDS),
        feature_dim=rr.int_("feature_dim", DEFAULT_RERANK_FEATURE_DIM, lo=1),
        hidden=rr.int_("hidden", DEFAULT_HIDDEN, lo=1),
        ngram=rr.int_("ngram", DEFAULT_NGRAM, lo=1),
        symmetrize=rr.bool_("symmetrize", False),
        n_neg=rr.int_("n_neg", DEFAULT_N_NEG, lo=1),
        lr=rr.float_("lr", 0.3, positive=True),
        epochs=rr.int_("epochs", 6, lo=0),
        batch_size=rr.int_("batch_size", 8, lo=1),
        tau=rr.float_("tau", 1.0, positive=True),
        init_seed=_seed_or(rr.opt_int("init_seed"), top_seed, "rerank-init"),
        train_seed=_seed_or(rr.opt_int("train_seed"), top_seed, "rerank-train"),
        service_url=rr.opt_str("service_url"),
        cache_dir=(lambda c: _resolve(base, c) if c is not None else None)(rr.opt_str("cache_dir")),
    )
    rr.finish()
    if reranker.enabled and reranker.kind == "external" and not reranker.service_url:
        raise ConfigError("reranker.kind 'external' requires reranker.service_url")

    dc = top.section("decision")
    strategy = dc.str_("strategy", "greedy", DECISION_STRATEGIES)
    epsilon = dc.opt_float("epsilon")
    iters = dc.opt_int("iters")
    if strategy != "sinkhorn":
        # Mutually exclusive options: sinkhorn knobs are rejected elsewhere.
        for name, value in (("epsilon", epsilon), ("iters", iters)):
            if value is not None:
                raise ConfigError(f"decision.{name} is only valid with strategy 'sinkhorn', got {strategy!r}")
    else:
        epsilon = DEFAULT_EPSILON if epsilon is None else epsilon
        iters = DEFAULT_SINKHORN_ITERS if iters is None else iters
        if epsilon <= 0:
            raise ConfigError(f"decision.epsilon must be positive, got {epsilon}")
        if iters < 1:
            raise ConfigError(f"decision.iters must be >= 1, got {iters}")
    decision = DecisionConfig(strategy=strategy, epsilon=epsilon, iters=iters)
    dc.finish()

    sp = top.section("split")
    ratios_raw = sp.take("ratios", [0.3, 0.1, 0.6])
    if not isinstance(ratios_raw, Sequence) or isinstance(ratios_raw, str) or len(ratios_raw) != 3:
        raise ConfigError(f"split.ratios must be a list of 3 numbers, got {ratios_raw!r}")
    try:
        ratios = tuple(float(r) for r in ratios_raw)
    except (TypeError, ValueError):
        raise ConfigError(f"split.ratios must be numbers, got {ratios_raw!r}") from None
    split = SplitConfig(
        mode=sp.str_("mode", "regular", SPLIT_MODES),
        ratios=ratios,  # type: ignore[arg-type]
        seed=_seed_or(sp.opt_int("seed"), top_seed, "split"),
        name_dim=sp.int_("name_dim", 256, lo=1),
        name_seed=_seed_or(sp.opt_int("name_seed"), top_seed, "split-names"),
    )
    sp.finish()
    if abs(sum(split.ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split.ratios must sum to 1.0, got {sum(split.ratios)}")
    if split.mode == "hard" and split.ratios != (0.3, 0.1, 0.6):
        raise ConfigError("split.ratios are fixed at [0.3, 0.1, 0.6] in hard mode")

    ev = top.section("eval")
    ks_raw = ev.take("hits_ks", [1, 10])
    if not isinstance(ks_raw, Sequence) or isinstance(ks_raw, str) or not ks_raw:
        raise ConfigError(f"eval.hits_ks must be a non-empty list of integers, got {ks_raw!r}")
    ks: list[int] = []
    for item in ks_raw:
        if isinstance(item, bool) or not isinstance(item, int) or item < 1:
            raise ConfigError(f"eval.hits_ks entries must be integers >= 1, got {item!r}")
        ks.append(item)
    evalc = EvalConfig(hits_ks=tuple(sorted(set(ks))))
    ev.finish()

    output_dir = _resolve(base, top.str_("output_dir"))
    top.finish()
    return PipelineConfig(
        dataset=dataset,
        output_dir=output_dir,
        side_info=side_info,
        seed=top_seed,
        verbalizer=verbalizer,
        embedder=embedder,
        retrieval=retrieval,
        reranker=reranker,
        decision=decision,
        split=split,
        eval=evalc,
    )


def load_config(
    path: str | Path,
    *,
    seed_override: int | None = None,
    output_override: str | None = None,
) -> PipelineConfig:
    """Parse and validate a JSON config file. Overrides replace the raw
    top-level fields before validation, so derived seeds re-derive."""
    p = Path(path)
    try:
        raw = p.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config file {p}: {err}") from err
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {p} is not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    if seed_override is not None:
        data = {**data, "seed": seed_override}
        for section in ("embedder", "retrieval", "reranker", "split"):
            if isinstance(data.get(section), dict):
                sub = dict(data[section])
                for key in ("init_seed", "train_seed", "seed", "name_seed"):
                    sub.pop(key, None)
                if section == "embedder" and isinstance(sub.get("train"), dict):
                    t = dict(sub["train"])
                    t.pop("seed", None)
                    sub["train"] = t
                data[section] = sub
    if output_override is not None:
        # An explicit --out is relative to the caller, not the config file.
        data = {**data, "output_dir": str(Path(output_override).absolute())}
    return config_from_dict(data, p.parent)


def disable_verbalization(config: PipelineConfig) -> PipelineConfig:
    """Ablation: raw triple serialization feeds retrieval."""
    return replace(config, verbalizer=replace(config.verbalizer, mode="raw"))


def disable_reranker(config: PipelineConfig) -> PipelineConfig:
    """Ablation: the retrieval ranking is final."""
    return replace(config, reranker=replace(config.reranker, enabled=False))


def force_hard_split(config: PipelineConfig) -> PipelineConfig:
    """Switch to the adversarial name-dissimilarity split. Hard mode pins the
    ratios, so any configured ratios are replaced along with the mode."""
    return replace(config, split=replace(config.split, mode="hard", ratios=(0.3, 0.1, 0.6)))
