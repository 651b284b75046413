"""Stage orchestration: one validated config in, metrics report out.

Stages run in a fixed order (ingest, split, verbalize, embed, index,
retrieve, train_reranker, rerank, align, evaluate), each reading its inputs
from the artifacts of earlier stages and writing its own artifacts under the
run's output directory. Every stage records a fingerprint of its settings
plus the content hashes of its inputs in manifest.json; a stage whose
fingerprint matches and whose artifacts are intact is skipped, so reruns are
idempotent, a deleted artifact is rebuilt bit-identically on resume, and a
config edit recomputes exactly the affected suffix of the pipeline.

Stages always load inputs from disk rather than passing objects in memory:
a resumed run takes the same code path as a fresh one. A lock file gives a
single run exclusive ownership of its output directory. Failures surface as
PipelineStageError naming the stage; artifacts written before the failure
are kept for resume.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import assign, core, embed, kg, metrics, rerank, retrieval, verbalize
from .config import PipelineConfig
from .errors import (
    InputError,
    KeyMismatchError,
    MalformedLineError,
    OutputDirLockedError,
    PipelineStageError,
)
from .features import featurize
from .services import DiskCache, EmbeddingClient, GenerationClient, PairScoreClient
from .util import atomic_write_text, canonical_json, fingerprint, sha256_file, stable_seed

LOGGER = logging.getLogger(__name__)

STAGES = (
    "ingest",
    "split",
    "verbalize",
    "embed",
    "index",
    "retrieve",
    "train_reranker",
    "rerank",
    "align",
    "evaluate",
)

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".lock"

_INGEST_FILES = ("rel_triples_1", "rel_triples_2", "attr_triples_1", "attr_triples_2", "ent_links")
_DBP15K_FILES = ("ent_ids_1", "ent_ids_2", "triples_1", "triples_2", "ref_ent_ids")


@dataclass(frozen=True)
class StageStatus:
    name: str
    cached: bool
    skipped: str | None  # reason, for stages the config turns off
    seconds: float


@dataclass(frozen=True)
class RunOutcome:
    output_dir: Path
    manifest: dict[str, Any]
    stages: tuple[StageStatus, ...]
    report: metrics.MetricsReport | None  # None when the run stopped early

    def stage(self, name: str) -> StageStatus:
        for status in self.stages:
            if status.name == name:
                return status
        raise KeyError(name)


def _load_texts(path: Path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as err:
                raise MalformedLineError(str(path), line_no, f"invalid JSON: {err}") from err
            out[doc["id"]] = doc["text"]
    return out


def _load_translations(path: Path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise MalformedLineError(str(path), line_no, f"expected 2 tab-separated fields, got {len(fields)}")
            out[fields[0]] = fields[1]
    return out


def _side_flags(side_info: str) -> dict[str, bool]:
    """Relational structure is always present; side information controls
    whether entity names and attribute values are available, and whether
    neighbors are rendered by name or by opaque id."""
    if side_info == "names_and_attributes":
        return {"include_name": True, "include_rels": True, "include_attrs": True, "neighbor_by_id": False}
    if side_info == "names":
        return {"include_name": True, "include_rels": True, "include_attrs": False, "neighbor_by_id": False}
    if side_info == "attributes":
        return {"include_name": False, "include_rels": True, "include_attrs": True, "neighbor_by_id": True}
    if side_info == "translated_names":
        return {"include_name": True, "include_rels": True, "include_attrs": False, "neighbor_by_id": False}
    raise InputError(f"unknown side_info mode {side_info!r}")


class _Run:
    """Mutable state of one pipeline execution: paths, manifest, statuses."""

    def __init__(self, config: PipelineConfig) -> None:
        self.config = config
        self.out = Path(config.output_dir)
        self.manifest: dict[str, Any] = {
            "manifest_version": MANIFEST_VERSION,
            "config": config.to_dict(),
            "config_fingerprint": config.fingerprint(),
            "kernel_backend": core.KERNEL_BACKEND,
            "stages": {},
        }
        self.statuses: list[StageStatus] = []

    # -- manifest -----------------------------------------------------------

    def adopt_existing_manifest(self) -> None:
        path = self.out / MANIFEST_NAME
        if not path.is_file():
            return
        try:
            previous = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            LOGGER.warning("ignoring unreadable manifest at %s", path)
            return
        if previous.get("manifest_version") != MANIFEST_VERSION:
            LOGGER.warning("ignoring manifest with version %r", previous.get("manifest_version"))
            return
        stages = previous.get("stages")
        if isinstance(stages, dict):
            self.manifest["stages"] = stages

    def save_manifest(self) -> None:
        atomic_write_text(self.out / MANIFEST_NAME, canonical_json(self.manifest) + "\n")

    # -- artifact bookkeeping ----------------------------------------------

    def path_of(self, rel: str) -> Path:
        return self.out / rel

    def artifact_hashes(self, stage: str) -> dict[str, str]:
        record = self.manifest["stages"].get(stage)
        if not isinstance(record, dict):
            raise PipelineStageError(stage, InputError("stage has not run"))
        return {name: meta["sha256"] for name, meta in sorted(record.get("artifacts", {}).items())}

    def artifact_path(self, stage: str, name: str) -> Path:
        record = self.manifest["stages"].get(stage, {})
        meta = record.get("artifacts", {}).get(name)
        if meta is None:
            raise PipelineStageError(stage, InputError(f"missing artifact {name!r}"))
        return self.path_of(meta["path"])

    def has_artifact(self, stage: str, name: str) -> bool:
        record = self.manifest["stages"].get(stage, {})
        return name in record.get("artifacts", {})

    def _intact(self, record: Mapping[str, Any]) -> bool:
        for meta in record.get("artifacts", {}).values():
            path = self.path_of(meta["path"])
            if not path.is_file() or sha256_file(path) != meta["sha256"]:
                return False
        return True

    # -- stage execution ----------------------------------------------------

    def run_stage(
        self,
        name: str,
        settings: Any,
        inputs: Mapping[str, str],
        outputs: Callable[[], Mapping[str, str]],
    ) -> None:
        """Run one stage unless cached. settings is the stage's config slice,
        inputs maps labels to content hashes, outputs produces artifact
        relative paths when the stage actually runs."""
        fp = fingerprint({"stage": name, "settings": settings, "inputs": dict(inputs)})
        record = self.manifest["stages"].get(name)
        if isinstance(record, dict) and record.get("fingerprint") == fp and not record.get("skipped"):
            if self._intact(record):
                LOGGER.info("stage %s: cache hit", name)
                self.statuses.append(StageStatus(name, cached=True, skipped=None, seconds=0.0))
                record["cached"] = True
                self.save_manifest()
                return
            LOGGER.info("stage %s: artifacts missing or changed, rebuilding", name)
        start = time.perf_counter()
        try:
            produced = outputs()
        except PipelineStageError:
            raise
        except Exception as err:
            raise PipelineStageError(name, err) from err
        seconds = time.perf_counter() - start
        artifacts = {}
        for label, rel in sorted(produced.items()):
            artifacts[label] = {"path": rel, "sha256": sha256_file(self.path_of(rel))}
        self.manifest["stages"][name] = {
            "fingerprint": fp,
            "artifacts": artifacts,
            "seconds": round(seconds, 6),
            "cached": False,
            "skipped": None,
        }
        self.statuses.append(StageStatus(name, cached=False, skipped=None, seconds=seconds))
        self.save_manifest()
        LOGGER.info("stage %s: done in %.2fs", name, seconds)

    def skip_stage(self, name: str, reason: str) -> None:
        self.manifest["stages"][name] = {
            "fingerprint": None,
            "artifacts": {},
            "seconds": 0.0,
            "cached": False,
            "skipped": reason,
        }
        self.statuses.append(StageStatus(name, cached=False, skipped=reason, seconds=0.0))
        self.save_manifest()
        LOGGER.info("stage %s: skipped (%s)", name, reason)


# ---------------------------------------------------------------------------
# Stage implementations


def _stage_ingest(run: _Run) -> None:
    cfg = run.config
    src = Path(cfg.dataset.path)
    names = _INGEST_FILES if cfg.dataset.format == "openea" else _DBP15K_FILES
    inputs = {}
    for name in names:
        path = src / name
        inputs[name] = sha256_file(path) if path.is_file() else "absent"

    def work() -> Mapping[str, str]:
        bundle = kg.load_bundle(src, cfg.dataset.format)
        out_dir = run.path_of("ingest")
        out_dir.mkdir(parents=True, exist_ok=True)
        kg.write_openea(bundle, out_dir)
        return {name: f"ingest/{name}" for name in _INGEST_FILES}

    run.run_stage("ingest", {"format": cfg.dataset.format}, inputs, work)


def _ingest_bundle(run: _Run) -> kg.DatasetBundle:
    return kg.parse_openea(run.path_of("ingest"))


def _stage_split(run: _Run) -> None:
    cfg = run.config

    def work() -> Mapping[str, str]:
        bundle = _ingest_bundle(run)
        if cfg.split.mode == "hard":
            names = embed.HashingProvider(dim=cfg.split.name_dim, seed=cfg.split.name_seed)
            seeds = kg.make_hard_split(bundle, names, seed=cfg.split.seed)
        else:
            seeds = kg.make_split(bundle.seeds, cfg.split.ratios, seed=cfg.split.seed)
        run.path_of("split").mkdir(parents=True, exist_ok=True)
        kg.save_split(seeds, run.path_of("split/split.tsv"))
        return {"split": "split/split.tsv"}

    run.run_stage("split", cfg.split.to_dict(), run.artifact_hashes("ingest"), work)


def _stage_verbalize(run: _Run) -> None:
    cfg = run.config
    settings = {"side_info": cfg.side_info, "verbalizer": cfg.verbalizer.to_dict()}
    inputs = dict(run.artifact_hashes("ingest"))
    overrides: Mapping[str, str] | None = None
    if cfg.side_info == "translated_names":
        trans_path = Path(cfg.dataset.translations or "")
        inputs["translations"] = sha256_file(trans_path)
        overrides = _load_translations(trans_path)

    def work() -> Mapping[str, str]:
        bundle = _ingest_bundle(run)
        flags = _side_flags(cfg.side_info)
        client = None
        if cfg.verbalizer.mode == "external":
            cache_dir = cfg.verbalizer.cache_dir or str(run.path_of("verbalize/cache"))
            client = GenerationClient(cfg.verbalizer.service_url or "", cache=DiskCache(cache_dir))
        run.path_of("verbalize").mkdir(parents=True, exist_ok=True)
        out: dict[str, str] = {}
        for side, graph in (("1", bundle.source), ("2", bundle.target)):
            lines: list[str] = []
            for eid in sorted(graph.entities):
                seq = verbalize.serialize_triples(
                    graph, eid, cfg.verbalizer.budget, name_overrides=overrides, **flags
                )
                if cfg.verbalizer.mode == "raw":
                    ve = verbalize.render_raw(seq)
                elif cfg.verbalizer.mode == "external":
                    ve = verbalize.verbalize_external(client, seq, max_tokens=cfg.verbalizer.max_tokens)
                else:
                    ve = verbalize.render_template(seq)
                doc = {"id": ve.entity_id, "text": ve.text, "provenance": ve.provenance, "truncated": ve.truncated}
                lines.append(canonical_json(doc))
            rel = f"verbalize/texts_{side}.jsonl"
            atomic_write_text(run.path_of(rel), "".join(line + "\n" for line in lines))
            out[f"texts_{side}"] = rel
        return out

    run.run_stage("verbalize", settings, inputs, work)


def _make_provider(run: _Run):
    cfg = run.config.embedder
    if cfg.provider == "hash":
        return embed.HashingProvider(
            dim=cfg.dim,
            feature_dim=cfg.feature_dim,
            ngram=cfg.ngram,
            normalize=cfg.normalize,
            seed=cfg.init_seed,
        )
    if cfg.provider == "external":
        cache_dir = cfg.cache_dir or str(run.path_of("embed/cache"))
        client = EmbeddingClient(cfg.service_url or "", dim=cfg.dim, cache=DiskCache(cache_dir))
        return client
    model = embed.init_projection(
        dim=cfg.dim,
        feature_dim=cfg.feature_dim,
        tau=cfg.tau,
        normalize=cfg.normalize,
        seed=cfg.init_seed,
    )
    return embed.ProjectionProvider(model, ngram=cfg.ngram)


def _split_pairs(run: _Run, tag: str) -> list[tuple[str, str]]:
    seeds = kg.load_split(run.artifact_path("split", "split"))
    return list(seeds.by_tag(tag))


def _stage_embed(run: _Run) -> None:
    cfg = run.config.embedder
    training = cfg.provider == "projection" and cfg.train.enabled and cfg.train.epochs > 0
    inputs = dict(run.artifact_hashes("verbalize"))
    if training:
        inputs.update({f"split:{k}": v for k, v in run.artifact_hashes("split").items()})

    def work() -> Mapping[str, str]:
        src_texts = _load_texts(run.artifact_path("verbalize", "texts_1"))
        tgt_texts = _load_texts(run.artifact_path("verbalize", "texts_2"))
        src_ids = sorted(src_texts)
        tgt_ids = sorted(tgt_texts)
        provider = _make_provider(run)
        run.path_of("embed").mkdir(parents=True, exist_ok=True)
        out = {"source": "embed/source.emb", "target": "embed/target.emb"}

        if training:
            assert isinstance(provider, embed.ProjectionProvider)
            src_fvs = {eid: featurize(src_texts[eid], cfg.ngram, cfg.feature_dim) for eid in src_ids}
            tgt_fvs = {eid: featurize(tgt_texts[eid], cfg.ngram, cfg.feature_dim) for eid in tgt_ids}
            tgt_mat = embed.build_matrix(provider, tgt_ids, [tgt_texts[i] for i in tgt_ids])
            pool_index = retrieval.build_index(tgt_mat.ids, tgt_mat.vectors, "exact")
            train_pairs = _split_pairs(run, "train")
            val_pairs = _split_pairs(run, "val")
            pairs = []
            negatives = []
            for s, gold in train_pairs:
                vec = np.asarray(provider.embed_batch([src_texts[s]]), dtype=np.float32)[0]
                query = embed.EmbeddingVector(s, vec)
                negs = retrieval.mine_negatives(
                    pool_index,
                    query,
                    gold,
                    pool_size=cfg.train.pool,
                    count=cfg.train.n_neg,
                    seed=stable_seed(cfg.train.seed, "mine", s),
                )
                pairs.append((src_fvs[s], tgt_fvs[gold]))
                negatives.append([tgt_fvs[n] for n in negs])
            val_task = None
            if val_pairs:
                tgt_row = {eid: i for i, eid in enumerate(tgt_ids)}
                val_task = embed.ValRetrievalTask(
                    source_fvs=tuple(src_fvs[s] for s, _ in val_pairs),
                    gold_indices=tuple(tgt_row[t] for _, t in val_pairs),
                    target_fvs=tuple(tgt_fvs[t] for t in tgt_ids),
                )
            result = embed.train_projection(
                provider.model,
                pairs,
                negatives,
                epochs=cfg.train.epochs,
                lr=cfg.train.lr,
                batch_size=cfg.train.batch_size,
                seed=cfg.train.seed,
                val_task=val_task,
            )
            provider = embed.ProjectionProvider(result.model, ngram=cfg.ngram)
            embed.save_projection(result.model, run.path_of("embed/projection.model"))
            curves = {
                "loss_curve": list(result.loss_curve),
                "val_mrr_curve": list(result.val_curve),
                "best_epoch": result.best_epoch,
            }
            atomic_write_text(run.path_of("embed/training.json"), canonical_json(curves) + "\n")
            out["projection"] = "embed/projection.model"
            out["training"] = "embed/training.json"

        src_mat = embed.build_matrix(provider, src_ids, [src_texts[i] for i in src_ids])
        tgt_mat = embed.build_matrix(provider, tgt_ids, [tgt_texts[i] for i in tgt_ids])
        embed.save_embeddings(src_mat, run.path_of(out["source"]))
        embed.save_embeddings(tgt_mat, run.path_of(out["target"]))
        return out

    run.run_stage("embed", run.config.embedder.to_dict(), inputs, work)


def _stage_index(run: _Run) -> None:
    cfg = run.config.retrieval
    settings = {"index": cfg.index, "degree": cfg.degree, "beam": cfg.beam, "seed": cfg.seed}
    inputs = {"target": run.artifact_hashes("embed")["target"]}

    def work() -> Mapping[str, str]:
        mat = embed.load_embeddings(run.artifact_path("embed", "target"))
        kind = "exact" if cfg.index == "exact" else "approx"
        index = retrieval.build_index(
            mat.ids, mat.vectors, kind, degree=cfg.degree, beam=cfg.beam, seed=cfg.seed
        )
        run.path_of("index").mkdir(parents=True, exist_ok=True)
        retrieval.save_index(index, run.path_of("index/target.idx"))
        return {"index": "index/target.idx"}

    run.run_stage("index", settings, inputs, work)


def _stage_retrieve(run: _Run) -> None:
    cfg = run.config.retrieval
    inputs = {
        "index": run.artifact_hashes("index")["index"],
        "source": run.artifact_hashes("embed")["source"],
    }

    def work() -> Mapping[str, str]:
        index = retrieval.load_index(run.artifact_path("index", "index"))
        queries = embed.load_embeddings(run.artifact_path("embed", "source"))
        sets = retrieval.topk_all(index, queries, k=cfg.k)
        run.path_of("retrieve").mkdir(parents=True, exist_ok=True)
        retrieval.save_candidates(sets, run.path_of("retrieve/candidates.jsonl"))
        return {"candidates": "retrieve/candidates.jsonl"}

    run.run_stage("retrieve", {"k": cfg.k}, inputs, work)


def _all_texts(run: _Run) -> dict[str, str]:
    texts = _load_texts(run.artifact_path("verbalize", "texts_1"))
    texts.update(_load_texts(run.artifact_path("verbalize", "texts_2")))
    return texts


def _stage_train_reranker(run: _Run) -> None:
    cfg = run.config.reranker
    if not cfg.enabled:
        run.skip_stage("train_reranker", "reranker disabled")
        return
    if cfg.kind == "external":
        run.skip_stage("train_reranker", "external scorer is not trained here")
        return
    if cfg.epochs == 0:
        run.skip_stage("train_reranker", "epochs=0, the fresh scorer is used as-is")
        return
    inputs = {
        "candidates": run.artifact_hashes("retrieve")["candidates"],
        **{k: v for k, v in run.artifact_hashes("verbalize").items()},
        "split": run.artifact_hashes("split")["split"],
    }

    def work() -> Mapping[str, str]:
        scorer = rerank.init_mlp_scorer(
            feature_dim=cfg.feature_dim,
            hidden=cfg.hidden,
            ngram=cfg.ngram,
            symmetrize=cfg.symmetrize,
            seed=cfg.init_seed,
        )
        sets = retrieval.load_candidates(run.artifact_path("retrieve", "candidates"))
        by_source = {cs.source_id: cs for cs in sets}
        texts = _all_texts(run)
        train_pairs = _split_pairs(run, "train")
        val_pairs = _split_pairs(run, "val")
        val_task = None
        if val_pairs:
            val_task = rerank.RerankValTask(
                pairs=tuple(val_pairs),
                candidates=tuple(by_source[s] for s, _ in val_pairs if s in by_source),
            )
        result = rerank.train_reranker(
            scorer,
            sets,
            train_pairs,
            texts,
            n_neg=cfg.n_neg,
            epochs=cfg.epochs,
            lr=cfg.lr,
            seed=cfg.train_seed,
            batch_size=cfg.batch_size,
            tau=cfg.tau,
            val_task=val_task,
        )
        run.path_of("rerank").mkdir(parents=True, exist_ok=True)
        rerank.save_scorer(result.scorer, run.path_of("rerank/scorer.model"))
        curves = {
            "loss_curve": list(result.loss_curve),
            "val_hits1_curve": list(result.val_curve),
            "best_epoch": result.best_epoch,
        }
        atomic_write_text(run.path_of("rerank/training.json"), canonical_json(curves) + "\n")
        return {"scorer": "rerank/scorer.model", "training": "rerank/training.json"}

    settings = cfg.to_dict()
    run.run_stage("train_reranker", settings, inputs, work)


def _stage_rerank(run: _Run) -> None:
    cfg = run.config.reranker
    if not cfg.enabled:
        run.skip_stage("rerank", "reranker disabled")
        return
    trained = run.has_artifact("train_reranker", "scorer")
    inputs = {
        "candidates": run.artifact_hashes("retrieve")["candidates"],
        **{k: v for k, v in run.artifact_hashes("verbalize").items()},
    }
    if trained:
        inputs["scorer"] = run.artifact_hashes("train_reranker")["scorer"]

    def work() -> Mapping[str, str]:
        if cfg.kind == "external":
            cache_dir = cfg.cache_dir or str(run.path_of("rerank/cache"))
            scorer: Any = rerank.ExternalPairScorer(
                PairScoreClient(cfg.service_url or "", cache=DiskCache(cache_dir))
            )
        elif trained:
            scorer = rerank.load_scorer(run.artifact_path("train_reranker", "scorer"))
        else:
            scorer = rerank.init_mlp_scorer(
                feature_dim=cfg.feature_dim,
                hidden=cfg.hidden,
                ngram=cfg.ngram,
                symmetrize=cfg.symmetrize,
                seed=cfg.init_seed,
            )
        sets = retrieval.load_candidates(run.artifact_path("retrieve", "candidates"))
        texts = _all_texts(run)
        reranked = rerank.rerank(scorer, sets, texts)
        run.path_of("rerank").mkdir(parents=True, exist_ok=True)
        retrieval.save_candidates(reranked, run.path_of("rerank/candidates.jsonl"))
        return {"candidates": "rerank/candidates.jsonl"}

    settings = {"kind": cfg.kind, "symmetrize": cfg.symmetrize, "service_url": cfg.service_url}
    if not trained and cfg.kind == "trainable":
        settings["init"] = {
            "feature_dim": cfg.feature_dim,
            "hidden": cfg.hidden,
            "ngram": cfg.ngram,
            "init_seed": cfg.init_seed,
        }
    run.run_stage("rerank", settings, inputs, work)


def _final_candidates_stage(run: _Run) -> str:
    return "rerank" if run.config.reranker.enabled else "retrieve"


def _stage_align(run: _Run) -> None:
    cfg = run.config.decision
    source_stage = _final_candidates_stage(run)
    inputs = {"candidates": run.artifact_hashes(source_stage)["candidates"]}

    def work() -> Mapping[str, str]:
        sets = retrieval.load_candidates(run.artifact_path(source_stage, "candidates"))
        if cfg.strategy == "sinkhorn":
            result = assign.decide(
                sets, "sinkhorn", epsilon=float(cfg.epsilon or 0.05), max_iters=int(cfg.iters or 1000)
            )
        else:
            result = assign.decide(sets, cfg.strategy)
        run.path_of("align").mkdir(parents=True, exist_ok=True)
        assign.save_alignment(result, run.path_of("align/alignment.tsv"))
        return {
            "alignment": "align/alignment.tsv",
            "metadata": "align/alignment.tsv.meta.json",
        }

    run.run_stage("align", cfg.to_dict(), inputs, work)


def _stage_evaluate(run: _Run) -> None:
    cfg = run.config
    source_stage = _final_candidates_stage(run)
    inputs = {
        "candidates": run.artifact_hashes(source_stage)["candidates"],
        "alignment": run.artifact_hashes("align")["alignment"],
        "split": run.artifact_hashes("split")["split"],
    }
    settings = {
        "hits_ks": list(cfg.eval.hits_ks),
        "setting": "hard" if cfg.split.mode == "hard" else "regular",
        "config_fingerprint": cfg.fingerprint(),
    }

    def work() -> Mapping[str, str]:
        sets = retrieval.load_candidates(run.artifact_path(source_stage, "candidates"))
        test_pairs = _split_pairs(run, "test")
        result = assign.load_alignment(run.artifact_path("align", "alignment"))
        test_sources = {s for s, _ in test_pairs}
        predicted = [(s, t) for s, t, _ in result.pairs if s in test_sources]
        report = metrics.build_report(
            sets,
            test_pairs,
            predicted,
            ks=cfg.eval.hits_ks,
            setting=settings["setting"],
            config_fingerprint=settings["config_fingerprint"],
        )
        out_dir = run.path_of("evaluate")
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics.save_report(report, out_dir / "report.json", out_dir / "report.txt")
        atomic_write_text(out_dir / "ranks.csv", metrics.ranks_csv(sets, test_pairs))
        return {
            "report": "evaluate/report.json",
            "table": "evaluate/report.txt",
            "ranks": "evaluate/ranks.csv",
        }

    run.run_stage("evaluate", settings, inputs, work)


_STAGE_FNS: dict[str, Callable[[_Run], None]] = {
    "ingest": _stage_ingest,
    "split": _stage_split,
    "verbalize": _stage_verbalize,
    "embed": _stage_embed,
    "index": _stage_index,
    "retrieve": _stage_retrieve,
    "train_reranker": _stage_train_reranker,
    "rerank": _stage_rerank,
    "align": _stage_align,
    "evaluate": _stage_evaluate,
}


class _Lock:
    """Exclusive ownership of an output directory via an O_EXCL lock file."""

    def __init__(self, directory: Path) -> None:
        self.path = directory / LOCK_NAME
        self._fd: int | None = None

    def __enter__(self) -> "_Lock":
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OutputDirLockedError(
                f"output directory is locked by another run (remove {self.path} if that run is dead)"
            ) from None
        os.write(self._fd, f"{os.getpid()}\n".encode("ascii"))
        return self

    def __exit__(self, *exc: Any) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass


def emit_reverse_candidates(config: PipelineConfig) -> Path:
    """Analysis artifact: target-to-source retrieval over the run's stored
    embeddings, written next to the forward candidates. Alignment decisions
    never read it, so it is not tracked in the manifest. The embed stage must
    have completed."""
    run = _Run(config)
    if not run.out.is_dir():
        raise InputError(f"output directory {run.out} does not exist; run the embed stage first")
    with _Lock(run.out):
        run.adopt_existing_manifest()
        sources = embed.load_embeddings(run.artifact_path("embed", "source"))
        targets = embed.load_embeddings(run.artifact_path("embed", "target"))
        cfg = config.retrieval
        kind = "exact" if cfg.index == "exact" else "approx"
        index = retrieval.build_index(
            sources.ids, sources.vectors, kind, degree=cfg.degree, beam=cfg.beam, seed=cfg.seed
        )
        sets = retrieval.topk_all(index, targets, k=cfg.k)
        out_path = run.path_of("retrieve/candidates_reverse.jsonl")
        out_path.parent.mkdir(parents=True, exist_ok=True)
        retrieval.save_candidates(sets, out_path)
    return out_path


def evaluate_with_split(config: PipelineConfig, split_path: str | Path) -> metrics.MetricsReport:
    """Evaluate the run's final ranking and alignment against an externally
    supplied split file instead of the run's own split.

    Runs the pipeline through the align stage if needed, then checks that
    every test source in the given split has a candidate set; a split built
    for a different dataset fails with KeyMismatchError. Artifacts go to
    evaluate_override/ so the run's own cached evaluation stays intact.
    """
    run_pipeline(config, until="align")
    seeds = kg.load_split(split_path)
    test_pairs = list(seeds.by_tag("test"))
    run = _Run(config)
    with _Lock(run.out):
        run.adopt_existing_manifest()
        stage = _final_candidates_stage(run)
        sets = retrieval.load_candidates(run.artifact_path(stage, "candidates"))
        covered = {cs.source_id for cs in sets}
        missing = sorted(s for s, _ in test_pairs if s not in covered)
        if missing:
            raise KeyMismatchError(
                f"split file {split_path} names {len(missing)} test sources with no candidate set "
                f"in this run (first: {missing[0]}); was the split built for a different dataset?"
            )
        result = assign.load_alignment(run.artifact_path("align", "alignment"))
        test_sources = {s for s, _ in test_pairs}
        predicted = [(s, t) for s, t, _ in result.pairs if s in test_sources]
        report = metrics.build_report(
            sets,
            test_pairs,
            predicted,
            ks=config.eval.hits_ks,
            setting="hard" if config.split.mode == "hard" else "regular",
            config_fingerprint=config.fingerprint(),
        )
        out_dir = run.path_of("evaluate_override")
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics.save_report(report, out_dir / "report.json", out_dir / "report.txt")
        atomic_write_text(out_dir / "ranks.csv", metrics.ranks_csv(sets, test_pairs))
    return report


def run_pipeline(config: PipelineConfig, *, until: str | None = None) -> RunOutcome:
    """Execute the pipeline for one config, reusing intact cached stages.

    until names the last stage to run (default: all). Returns the outcome
    with the parsed metrics report when the evaluate stage ran or was
    cached.
    """
    if until is not None and until not in STAGES:
        raise InputError(f"unknown stage {until!r}; stages are {', '.join(STAGES)}")
    run = _Run(config)
    run.out.mkdir(parents=True, exist_ok=True)
    with _Lock(run.out):
        run.adopt_existing_manifest()
        run.save_manifest()
        for name in STAGES:
            _STAGE_FNS[name](run)
            if name == until:
                break
    report: metrics.MetricsReport | None = None
    if run.manifest["stages"].get("evaluate", {}).get("artifacts"):
        report_path = run.artifact_path("evaluate", "report")
        report = metrics.report_from_json(report_path.read_text(encoding="utf-8"))
    return RunOutcome(
        output_dir=run.out,
        manifest=run.manifest,
        stages=tuple(run.statuses),
        report=report,
    )
