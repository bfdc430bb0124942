"""End-to-end stages behind the CLI, one method per subcommand."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from rankcot.config import RunConfig
from rankcot.errors import BackendError, ConfigError, EmptyResultError, InputError
from rankcot.evaluation.consistency import consistency
from rankcot.evaluation.metrics import hit_rate, length_stats
from rankcot.evaluation.report import EvalReport, build_report, score_records
from rankcot.evaluation.scenarios import assign_scenarios
from rankcot.evaluation.similarity import HashingEmbedder, HttpEmbedder, similarity
from rankcot.gateway import Backend, Gateway, MockBackend, MockScript, OpenAICompatibleBackend
from rankcot.io import canonical_json, read_jsonl, sha256_hex, write_json, write_jsonl, write_text_atomic
from rankcot.manifest import RunManifest
from rankcot.preference import PreferenceDataBuilder, split_and_export
from rankcot.refinement import RerankRefiner, answer, make_refiner
from rankcot.retrieval import Bm25Params, Bm25Retriever, RemoteRetriever, build_index, load_corpus
from rankcot.templates import load_templates
from rankcot.types import GENERATION_METHODS, REFINEMENT_METHODS, GenerationRecord, QueryRecord, RefinementOutput

logger = logging.getLogger(__name__)


def make_backend(config: RunConfig) -> Backend:
    b = config.backend
    if b.kind == "mock":
        script = MockScript.load(b.mock_script) if b.mock_script else MockScript()
        return MockBackend(script)
    return OpenAICompatibleBackend(b.base_url, timeout=b.timeout, max_retries=b.max_retries)


class Runner:
    """Holds the configured gateway, retriever and templates for one command."""

    def __init__(self, config: RunConfig, backend: Backend | None = None):
        self.config = config
        self.out_dir = Path(config.out_dir)
        self.templates = load_templates(config.templates_path)
        self._backend = backend
        self._gateway: Gateway | None = None
        self._retriever = None
        self._queries: list[QueryRecord] | None = None
        templates_digest = sha256_hex(canonical_json(self.templates.to_dict()))
        self.config_digest = config.digest(templates_digest)

    # -- shared resources -------------------------------------------------

    @property
    def gateway(self) -> Gateway:
        if self._gateway is None:
            backend = self._backend if self._backend is not None else make_backend(self.config)
            self._backend = backend
            self._gateway = Gateway(
                backend,
                model=self.config.backend.model,
                cache_dir=self.config.cache_dir,
                max_inflight=self.config.max_inflight,
                max_tokens=self.config.backend.max_tokens,
            )
        return self._gateway

    @property
    def retriever(self):
        if self._retriever is None:
            r = self.config.retrieval
            if r.kind == "remote":
                if not r.endpoint:
                    raise ConfigError("retrieval.endpoint is required for remote retrieval")
                self._retriever = RemoteRetriever(endpoint=r.endpoint, k=r.k,
                                                  max_workers=self.config.max_inflight).fit()
            else:
                if not self.config.index_path.is_file():
                    raise ConfigError(f"index not found at {self.config.index_path}; run `forge index` first")
                self._retriever = Bm25Retriever.load(self.config.index_path, k=r.k)
        return self._retriever

    def queries(self) -> list[QueryRecord]:
        if self._queries is None:
            if not self.config.queries_path:
                raise ConfigError("queries_path is not configured")
            self._queries = read_jsonl(self.config.queries_path, QueryRecord.from_dict)
            ids = [q.query_id for q in self._queries]
            if len(set(ids)) != len(ids):
                raise InputError("duplicate query_id in queries file")
            if not self._queries:
                raise EmptyResultError("queries file is empty")
        return self._queries

    def _manifest(self, command: str) -> RunManifest:
        m = RunManifest(command, self.config_digest)
        for p in (self.config.corpus_path, self.config.queries_path, self.config.templates_path,
                  self.config.backend.mock_script):
            if p:
                m.add_input(p)
        return m

    def _finish(self, manifest: RunManifest, name: str | None = None) -> RunManifest:
        if self._gateway is not None:
            manifest.gateway = self._gateway.stats()
            if hasattr(self._backend, "calls"):
                manifest.gateway["backend_calls"] = self._backend.calls
        manifest.write(self.out_dir, name)
        return manifest

    def refinement_path(self, method: str) -> Path:
        return self.out_dir / "refinements" / f"{method}.jsonl"

    def generation_path(self, method: str) -> Path:
        return self.out_dir / "generations" / f"{method}.jsonl"

    def _map(self, fn, items):
        items = list(items)
        if self.config.max_inflight <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.config.max_inflight) as pool:
            return list(pool.map(fn, items))

    # -- commands -----------------------------------------------------------

    def index(self) -> RunManifest:
        manifest = self._manifest("index")
        if not self.config.corpus_path:
            raise ConfigError("corpus_path is not configured")
        with manifest.stage("build") as st:
            corpus = load_corpus(self.config.corpus_path)
            index = build_index(corpus, Bm25Params(self.config.retrieval.k1, self.config.retrieval.b))
            st["count"] = index.doc_count
        path = index.save(self.config.index_path)
        manifest.add_output(path)
        return self._finish(manifest)

    def _retrieve(self, query: QueryRecord, k: int):
        return self.retriever.search(query.question, k)

    def refine(self, method: str) -> RunManifest:
        if method not in REFINEMENT_METHODS:
            raise ConfigError(f"unknown refinement method {method!r}")
        manifest = self._manifest(f"refine-{method}")
        queries = self.queries()
        m = self.config.retrieval.context_m
        with manifest.stage("retrieve") as st:
            retrieved = self._map(lambda q: self._retrieve(q, m), queries)
            st["count"] = len(retrieved)
        params = {"templates": self.templates}
        if method != "none":
            params["gateway"] = self.gateway
        refiner = make_refiner(method, **params).fit()

        def one(pair):
            query, docs = pair
            if not docs:
                return None
            return refiner.refine(query, docs)

        with manifest.stage("refine") as st:
            outputs = self._map(one, list(zip(queries, retrieved)))
            st["count"] = len(outputs)
        final = []
        for query, out in zip(queries, outputs):
            if out is None:
                manifest.count("no_documents")
                logger.warning("no documents retrieved for %s; writing empty refinement", query.query_id)
                out = RefinementOutput(method, query.query_id, "",
                                       kept_doc_ids=() if method == "rerank" else None)
            final.append(out)
        if isinstance(refiner, RerankRefiner) and refiner.unparsed_labels:
            manifest.count("unparsed_rerank_labels", refiner.unparsed_labels)
        path = write_jsonl(self.refinement_path(method), final)
        manifest.add_output(path)
        return self._finish(manifest)

    def _load_refinements(self, method: str) -> dict[str, RefinementOutput]:
        path = self.refinement_path(method)
        if not path.is_file():
            raise ConfigError(f"refinements not found at {path}; run `forge refine --method {method}` first")
        return {r.query_id: r for r in read_jsonl(path, RefinementOutput.from_dict)}

    def generate(self, method: str) -> RunManifest:
        if method not in GENERATION_METHODS:
            raise ConfigError(f"unknown generation method {method!r}")
        manifest = self._manifest(f"generate-{method}")
        queries = self.queries()
        refinements = {} if method == "closed_book" else self._load_refinements(method)
        for q in queries:
            if method != "closed_book" and q.query_id not in refinements:
                raise InputError(f"no {method} refinement for query {q.query_id!r}")

        def one(query):
            ctx = None if method == "closed_book" else refinements[query.query_id]
            try:
                return answer(query, ctx, self.gateway, self.templates,
                              temperature=self.config.sampling.answer_temperature)
            except BackendError as exc:
                return exc

        with manifest.stage("generate") as st:
            results = self._map(one, queries)
            st["count"] = len(results)
        failures = [r for r in results if isinstance(r, BackendError)]
        records = [r for r in results if isinstance(r, GenerationRecord)]
        manifest.count("empty_context", sum(r.empty_context for r in records))
        if failures:
            manifest.status = "failed"
            manifest.count("backend_failures", len(failures))
            path = write_jsonl(self.out_dir / "failed" / f"generations_{method}.jsonl", records)
            manifest.add_output(path)
            self._finish(manifest, f"generate-{method}")
            raise BackendError(
                f"{len(failures)} of {len(queries)} generations failed; partial output quarantined at {path}: {failures[0]}"
            )
        path = write_jsonl(self.generation_path(method), records)
        manifest.add_output(path)
        return self._finish(manifest)

    def build_dpo(self) -> RunManifest:
        manifest = self._manifest("build-dpo")
        queries = self.queries()
        cfg = self.config
        builder = PreferenceDataBuilder(
            lambda text, k: self.retriever.search(text, k),
            self.gateway,
            self.templates,
            n_docs=cfg.retrieval.k,
            context_m=cfg.retrieval.context_m,
            n_per_doc=cfg.sampling.n_per_doc,
            cot_temperature=cfg.sampling.cot_temperature,
            seed=cfg.seed,
            max_workers=cfg.max_inflight,
        )
        with manifest.stage("pairs") as st:
            pairs = builder.build(queries)
            st["count"] = len(pairs)
        stats = builder.stats.to_dict()
        for key, value in stats.items():
            manifest.count(key, value)
        if not pairs:
            manifest.status = "empty"
            self._finish(manifest)
            raise EmptyResultError("no trainable pairs")
        out = self.out_dir / "dpo"
        with manifest.stage("export"):
            split_and_export(pairs, cfg.seed, out, {**stats, "beta": cfg.dpo.beta})
        for name in ("dpo_train.jsonl", "dpo_valid.jsonl", "manifest.json"):
            manifest.add_output(out / name)
        return self._finish(manifest)

    def _embedder(self):
        e = self.config.evaluation
        if e.embedder == "hashing":
            return HashingEmbedder()
        if e.embedder == "http":
            return HttpEmbedder(e.embed_base_url, e.embed_model)
        raise ConfigError(f"unknown evaluation.embedder {e.embedder!r}")

    def evaluate(self, generation_paths=None, closed_book_path=None) -> RunManifest:
        manifest = self._manifest("evaluate")
        queries = self.queries()
        by_id = {q.query_id: q for q in queries}
        metric_map = dict(self.config.evaluation.dataset_metric_map)
        unmapped = sorted({q.dataset for q in queries} - set(metric_map))
        if unmapped:
            raise ConfigError(f"datasets without a metric mapping: {unmapped}")

        gen_dir = self.out_dir / "generations"
        if generation_paths is None:
            generation_paths = sorted(gen_dir.glob("*.jsonl")) if gen_dir.is_dir() else []
        closed_book_path = Path(closed_book_path) if closed_book_path else self.generation_path("closed_book")
        if not closed_book_path.is_file():
            raise ConfigError(
                f"closed-book generations not found at {closed_book_path}; "
                "run `forge generate --method closed_book` first"
            )
        paths = [Path(p) for p in generation_paths]
        if closed_book_path.resolve() not in {p.resolve() for p in paths}:
            paths.append(closed_book_path)
        records = []
        for p in paths:
            manifest.add_input(p)
            records.extend(read_jsonl(p, GenerationRecord.from_dict))
        closed = [r for r in read_jsonl(closed_book_path, GenerationRecord.from_dict)]

        m = self.config.retrieval.context_m
        with manifest.stage("scenarios"):
            retrieved = dict(zip(by_id, self._map(lambda q: self._retrieve(q, m), queries)))
            assignment = assign_scenarios(queries, retrieved, closed, m)
        with manifest.stage("score") as st:
            scored = score_records(records, by_id)
            report = build_report(scored, by_id, assignment, metric_map, self.config_digest)
            st["count"] = len(scored)
        report.analyses = self._refinement_analyses(by_id)

        outputs = [
            write_json(self.out_dir / "report.json", report.to_dict()),
            write_text_atomic(self.out_dir / "report.txt", report.to_text()),
            write_json(self.out_dir / "scenarios.json", assignment.to_dict()),
        ]
        for method in report.methods:
            outputs.append(write_jsonl(self.out_dir / "scored" / f"{method}.jsonl",
                                       [r for r in scored if r.method == method]))
        for p in outputs:
            manifest.add_output(p)
        return self._finish(manifest)

    def _refinement_analyses(self, by_id: dict[str, QueryRecord]) -> dict:
        found = {m: self.refinement_path(m) for m in REFINEMENT_METHODS if self.refinement_path(m).is_file()}
        if not found:
            return {}
        gold = {q: rec.gold_answers for q, rec in by_id.items()}
        embedder = self._embedder()
        per_method = {}
        lengths = {}
        for method, path in found.items():
            refs = [r for r in read_jsonl(path, RefinementOutput.from_dict) if r.query_id in by_id]
            if not refs:
                continue
            lengths[method] = [r.char_len for r in refs]
            per_method[method] = {
                "hit_rate": 100.0 * hit_rate(refs, gold),
                "similarity": similarity([by_id[r.query_id].question for r in refs], [r.text for r in refs], embedder),
                "count": len(refs),
            }
        out = {"embedder": embedder.name, "refinements": per_method}
        baseline = self.config.evaluation.length_baseline
        if baseline in lengths:
            out["length"] = {"baseline": baseline, **length_stats(lengths, baseline)}
        return out

    def consistency(self, method: str, n: int | None = None, temperature: float | None = None,
                    limit: int | None = None) -> RunManifest:
        if method not in GENERATION_METHODS:
            raise ConfigError(f"unknown method {method!r}")
        n = n if n is not None else self.config.sampling.consistency_samples
        temperature = temperature if temperature is not None else self.config.sampling.consistency_temperature
        manifest = self._manifest(f"consistency-{method}")
        queries = self.queries()[:limit] if limit else self.queries()
        refinements = {} if method == "closed_book" else self._load_refinements(method)
        per_query = {}
        with manifest.stage("sample") as st:
            for q in queries:
                ref = None if method == "closed_book" else refinements.get(q.query_id)
                if method != "closed_book" and ref is None:
                    raise InputError(f"no {method} refinement for query {q.query_id!r}")
                per_query[q.query_id] = consistency(q, ref, self.gateway, n_samples=n,
                                                    temperature=temperature, templates=self.templates)
                st["count"] += 1
        result = {
            "method": method,
            "n_samples": n,
            "temperature": temperature,
            "per_query": per_query,
            "mean": sum(per_query.values()) / len(per_query),
        }
        path = write_json(self.out_dir / "consistency" / f"{method}.json", result)
        manifest.add_output(path)
        return self._finish(manifest)

    def report(self) -> str:
        path = self.out_dir / "report.json"
        if not path.is_file():
            raise ConfigError(f"report not found at {path}; run `forge evaluate` first")
        report = EvalReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
        text = report.to_text()
        write_text_atomic(self.out_dir / "report.txt", text)
        return text
