"""Staged end-to-end runs with persisted artifacts.

Every stage reads its inputs from the output directory and writes its
outputs back there, so any stage can be rerun on its own. The report is
rebuilt from the persisted artifacts after each stage.

Layout of the output directory::

    records.jsonl, metadata.json          ingest
    teg.jsonl, teg_metadata.json          preprocess
    split.json, mask.json, visible.jsonl  mask
    heldout.jsonl                         mask (read only by evaluation)
    imputations/<variant>.jsonl           impute (+ .meta.json, .prompts.jsonl)
    embeddings/<variant>.npy              evaluate / energy
    evaluate.json, energy.json, judge.json
    report.json, metrics.tsv, manifest.json
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .backends import ChatCompletionsBackend, MockBackend
from .baselines import (
    EMBEDDING,
    ImputationResult,
    impute_blank,
    impute_knn,
    impute_mean,
    impute_mf,
    impute_random,
)
from .config import RunConfig
from .embed import HashingEmbedder, RemoteEmbedder, embed, item_embeddings
from .eval.audit import audit_mask_discipline
from .eval.judge import JudgeItem, MockJudge, judge_reviews, judge_table
from .eval.scorer import rank_metrics, train_edge_scorer
from .eval.text_metrics import embedding_fidelity, semantic_fidelity
from .imputer import VARIANTS, assemble_completed_embeddings, assemble_completed_reviews, impute_variant
from .ingest import PARSERS, InteractionRecord, read_records, synth_teg, write_records
from .linegraph import ITEM, USER, USER_WEIGHTED, item_view, user_view, weighted_user_view
from .prompts import load_templates
from .smoothness import energy_report, normalized_energy
from .teg import (
    COLD_START,
    UNIFORM,
    BipartiteTEG,
    EdgeSplit,
    Mask,
    build_teg,
    ego_sample,
    k_core,
    mask_cold_start,
    mask_native,
    mask_uniform,
    split_edges,
)

log = logging.getLogger(__name__)

STAGES = ("ingest", "preprocess", "mask", "impute", "evaluate", "energy", "judge")
# File whose presence shows that a stage has completed.
STAGE_MARKERS = {
    "ingest": "ingest.json",
    "preprocess": "preprocess.json",
    "mask": "mask_stats.json",
    "impute": "impute.json",
    "evaluate": "evaluate.json",
    "energy": "energy.json",
    "judge": "judge.json",
}


class StageError(RuntimeError):
    pass


def dump_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_json(path: Path):
    if not path.exists():
        raise StageError(f"missing artifact {path.name}; run the stage that produces it first")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def dump_jsonl(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_jsonl(path: Path) -> list:
    if not path.exists():
        raise StageError(f"missing artifact {path.name}; run the stage that produces it first")
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def teg_records(teg: BipartiteTEG) -> list[InteractionRecord]:
    return [InteractionRecord(e.user, e.item, e.rating, e.review) for e in teg.edges]


class Run:
    def __init__(self, config: RunConfig):
        self.cfg = config
        self.out = Path(config.output_dir)
        self._embedder = None
        self._completed: dict[str, np.ndarray] = {}

    # -- shared resources -------------------------------------------------

    def path(self, *parts: str) -> Path:
        return self.out.joinpath(*parts)

    @property
    def scale(self) -> tuple[float, float]:
        return tuple(float(x) for x in self.cfg.rating_scale)

    def embedder(self):
        if self._embedder is None:
            if self.cfg.embedder == "hashing":
                self._embedder = HashingEmbedder(self.cfg.embed_dim)
            else:
                self._embedder = RemoteEmbedder(dim=self.cfg.embed_dim)
        return self._embedder

    def generator(self):
        if self.cfg.generator == "mock":
            return MockBackend(max_new_tokens=self.cfg.max_new_tokens)
        return ChatCompletionsBackend(max_new_tokens=self.cfg.max_new_tokens, max_concurrency=self.cfg.parallelism)

    def judge_backend(self):
        if self.cfg.judge == "mock":
            return MockJudge()
        return ChatCompletionsBackend(max_new_tokens=1024, temperature=0.6, max_concurrency=self.cfg.parallelism)

    def load_teg(self, name: str = "teg.jsonl") -> BipartiteTEG:
        if not self.path(name).exists():
            raise StageError(f"missing artifact {name}; run the stage that produces it first")
        metadata = load_json(self.path("teg_metadata.json"))
        return build_teg(read_records(self.path(name)), metadata, self.scale)

    def load_mask(self) -> Mask:
        return Mask.from_dict(load_json(self.path("mask.json")))

    def load_split(self) -> EdgeSplit:
        return EdgeSplit.from_dict(load_json(self.path("split.json")))

    def load_heldout(self) -> dict[int, str]:
        return {row["edge_id"]: row["review"] for row in load_jsonl(self.path("heldout.jsonl"))}

    # -- stages -------------------------------------------------------------

    def ingest(self) -> dict:
        cfg = self.cfg
        skipped = 0
        if cfg.dataset_format == "synthetic":
            records, metadata = synth_teg(seed=cfg.seed, **cfg.synthetic)
        elif cfg.dataset_format == "jsonl":
            records = read_records(cfg.dataset_path)
            metadata = {}
            if cfg.metadata_path:
                with open(cfg.metadata_path, encoding="utf-8") as fh:
                    metadata = json.load(fh)
        else:
            parsed = PARSERS[cfg.dataset_format](cfg.dataset_path)
            records, metadata, skipped = parsed.records, dict(parsed.metadata), parsed.skipped
            if cfg.metadata_path:
                metadata.update(PARSERS[cfg.dataset_format](cfg.metadata_path).metadata)
        self.out.mkdir(parents=True, exist_ok=True)
        write_records(self.path("records.jsonl"), records)
        dump_json(self.path("metadata.json"), metadata)
        stats = {"n_records": len(records), "n_metadata": len(metadata), "skipped_lines": skipped}
        dump_json(self.path("ingest.json"), stats)
        return stats

    def preprocess(self) -> dict:
        cfg = self.cfg
        diagnostics: list[str] = []
        metadata = load_json(self.path("metadata.json"))
        teg = build_teg(read_records(self.path("records.jsonl")), metadata, self.scale, diagnostics)
        before = (teg.n_users, teg.n_items, teg.n_edges)
        if cfg.k_core:
            teg = k_core(teg, cfg.k_core)
        if cfg.ego_seeds:
            teg = ego_sample(teg, cfg.ego_seeds, cfg.seed)
        if teg.n_edges < 3:
            raise StageError(f"only {teg.n_edges} edges left after preprocessing")
        write_records(self.path("teg.jsonl"), teg_records(teg))
        dump_json(self.path("teg_metadata.json"), teg.item_metadata)
        stats = {
            "raw": dict(zip(("n_users", "n_items", "n_edges"), before)),
            "n_users": teg.n_users,
            "n_items": teg.n_items,
            "n_edges": teg.n_edges,
            "n_reviews": sum(r is not None for r in teg.reviews()),
            "dropped_records": len(diagnostics),
        }
        dump_json(self.path("preprocess.json"), stats)
        return stats

    def mask(self) -> dict:
        cfg = self.cfg
        teg = self.load_teg()
        split = split_edges(teg, cfg.split_ratios, cfg.seed)
        if cfg.mask_protocol == UNIFORM:
            mask = mask_uniform(teg, cfg.mask_ratio, cfg.seed)
        elif cfg.mask_protocol == COLD_START:
            mask = mask_cold_start(teg, cfg.mask_ratio, cfg.seed)
        else:
            mask = mask_native(teg)
        dump_json(self.path("split.json"), split.to_dict())
        dump_json(self.path("mask.json"), mask.to_dict())
        write_records(self.path("visible.jsonl"), teg_records(mask.apply(teg)))
        dump_jsonl(self.path("heldout.jsonl"), [{"edge_id": k, "review": v} for k, v in sorted(mask.heldout(teg).items())])
        stats = {
            "protocol": mask.protocol,
            "n_masked": len(mask),
            "n_heldout_reviews": len(mask.heldout(teg)),
            "split_sizes": [len(split.train), len(split.val), len(split.test)],
        }
        dump_json(self.path("mask_stats.json"), stats)
        return stats

    def impute(self, variants=None) -> dict:
        cfg = self.cfg
        variants = list(variants or cfg.variants)
        # Imputers only ever see the visible graph: masked reviews are absent on disk.
        visible = self.load_teg("visible.jsonl")
        mask = self.load_mask()
        emb = self.embedder()
        need_z = any(v in ("Mean", "KNN", "MF") for v in variants)
        z_obs = embed(emb, visible.reviews()) if need_z else None
        item_emb = item_embeddings(visible, emb) if ("KNN" in variants or USER_WEIGHTED in cfg.views) else None
        views = {}
        if any(v in VARIANTS for v in variants):
            if USER in cfg.views:
                views[USER] = user_view(visible)
            if ITEM in cfg.views:
                views[ITEM] = item_view(visible)
            if USER_WEIGHTED in cfg.views:
                views[USER_WEIGHTED] = weighted_user_view(visible, item_emb)
        templates = load_templates(cfg.templates_path)
        summary = {}
        for v in variants:
            if v == "Blank":
                res = impute_blank(visible, mask)
            elif v == "Random":
                res = impute_random(visible, mask, cfg.seed)
            elif v == "Mean":
                res = impute_mean(visible, mask, z_obs)
            elif v == "KNN":
                res = impute_knn(visible, mask, z_obs, item_emb, cfg.knn_k)
            elif v == "MF":
                res = impute_mf(visible, mask, z_obs, cfg.mf_rank, cfg.mf_epochs, cfg.mf_lr, cfg.seed)
            else:
                # The weighted user view, when configured, orders user-side neighbours.
                use = {USER: views.get(USER_WEIGHTED, views.get(USER)), ITEM: views.get(ITEM)}
                res = impute_variant(
                    v,
                    visible,
                    mask,
                    {k: x for k, x in use.items() if x is not None},
                    self.generator(),
                    cfg.seed,
                    templates,
                    cfg.neighbor_cap,
                    cfg.payload_tokens,
                    cfg.parallelism,
                )
            self.write_imputation(res)
            summary[v] = {"kind": res.kind, "n": len(res.edge_ids), "failed": len(res.failed)}
        dump_json(self.path("impute.json"), {**self._read_optional("impute.json"), **summary})
        return summary

    def write_imputation(self, res: ImputationResult) -> None:
        base = self.path("imputations")
        if res.kind == EMBEDDING:
            rows = [{"edge_id": e, "row": [float(x) for x in r]} for e, r in zip(res.edge_ids, res.rows)]
        else:
            rows = [{"edge_id": e, "text": t} for e, t in zip(res.edge_ids, res.texts)]
        dump_jsonl(base / f"{res.variant}.jsonl", rows)
        meta = {
            "variant": res.variant,
            "kind": res.kind,
            "params": res.params,
            "failed": {str(k): v for k, v in sorted(res.failed.items())},
        }
        ledger = getattr(res, "ledger", None)
        if ledger is not None:
            meta["ledger"] = ledger.summary()
            dump_jsonl(base / f"{res.variant}.prompts.jsonl", [asdict(p) for p in res.prompts])
            dump_jsonl(base / f"{res.variant}.contexts.jsonl", [{"edge_id": k, **c} for k, c in sorted(res.contexts.items())])
        dump_json(base / f"{res.variant}.meta.json", meta)
        self._completed.pop(res.variant, None)

    def load_imputation(self, variant: str) -> ImputationResult:
        base = self.path("imputations")
        meta = load_json(base / f"{variant}.meta.json")
        rows = load_jsonl(base / f"{variant}.jsonl")
        ids = tuple(r["edge_id"] for r in rows)
        failed = {int(k): v for k, v in meta.get("failed", {}).items()}
        if meta["kind"] == EMBEDDING:
            dim = len(rows[0]["row"]) if rows else self.embedder().dim
            arr = np.array([r["row"] for r in rows], dtype=float).reshape(len(rows), dim)
            return ImputationResult(variant, ids, rows=arr, params=meta["params"], failed=failed)
        return ImputationResult(variant, ids, texts=tuple(r["text"] for r in rows), params=meta["params"], failed=failed)

    def completed(self, variant: str, visible: BipartiteTEG, mask: Mask) -> np.ndarray:
        """Completed review-embedding matrix of one variant, persisted under embeddings/."""
        if variant not in self._completed:
            if variant == "Blank" and not self.path("imputations", "Blank.jsonl").exists():
                res = impute_blank(visible, mask)
            else:
                res = self.load_imputation(variant)
            emb = self.embedder()
            if res.kind == EMBEDDING:
                z = assemble_completed_embeddings(visible, mask, embed(emb, visible.reviews()), res)
            else:
                z = embed(emb, assemble_completed_reviews(visible, mask, res))
            self.path("embeddings").mkdir(parents=True, exist_ok=True)
            np.save(self.path("embeddings", f"{variant}.npy"), z)
            self._completed[variant] = z
        return self._completed[variant]

    def evaluate(self) -> dict:
        cfg = self.cfg
        visible = self.load_teg("visible.jsonl")
        mask, split = self.load_mask(), self.load_split()
        heldout = self.load_heldout()
        emb = self.embedder()
        out = {}
        prompts = []
        for v in cfg.variants:
            res = self.load_imputation(v)
            z = self.completed(v, visible, mask)
            scorer = train_edge_scorer(
                visible,
                split.train,
                z,
                cfg.scorer_rank,
                cfg.scorer_epochs,
                cfg.scorer_lr,
                cfg.seed,
                review_scale=cfg.scorer_review_scale,
            )
            metrics = rank_metrics(scorer, visible, split.test, cfg.n_negatives, cfg.top_k, cfg.seed)
            imputed = res.as_dict()
            if res.kind == EMBEDDING:
                fid = embedding_fidelity(imputed, heldout, emb)
            else:
                fid = semantic_fidelity(imputed, heldout, emb)
            out[v] = {
                "metrics": metrics.to_dict(),
                "fidelity": fid.to_dict(),
                "scorer_final_loss": scorer.loss_history[-1] if scorer.loss_history else None,
            }
            if self.path("imputations", f"{v}.prompts.jsonl").exists():
                prompts.extend(load_jsonl(self.path("imputations", f"{v}.prompts.jsonl")))
        audit = audit_mask_discipline(prompts, heldout, [r for r in visible.reviews() if r])
        result = {"variants": out, "mask_audit": audit.to_dict(), "mask_audit_violations": audit.violations[:20]}
        dump_json(self.path("evaluate.json"), result)
        return result

    def energy(self) -> dict:
        cfg = self.cfg
        visible = self.load_teg("visible.jsonl")
        mask = self.load_mask()
        emb = self.embedder()
        views = {USER: user_view(visible), ITEM: item_view(visible)}
        if USER_WEIGHTED in cfg.views:
            views[USER_WEIGHTED] = weighted_user_view(visible, item_embeddings(visible, emb))
        blank = energy_report(views, self.completed("Blank", visible, mask), "Blank", emb.name)
        out = {"backend": emb.name, "blank_reference": blank.to_dict(), "variants": {}}
        for v in cfg.variants:
            rep = energy_report(views, self.completed(v, visible, mask), v, emb.name)
            out["variants"][v] = {"energy": rep.to_dict(), "normalized": list(normalized_energy(rep, blank))}
        dump_json(self.path("energy.json"), out)
        return out

    def judge(self) -> dict:
        cfg = self.cfg
        if cfg.judge == "none":
            out = {"skipped": True}
            dump_json(self.path("judge.json"), out)
            return out
        visible = self.load_teg("visible.jsonl")
        backend = self.judge_backend()
        per_variant = {}
        skipped = []
        for v in cfg.variants:
            res = self.load_imputation(v)
            if res.kind == EMBEDDING:
                skipped.append(v)
                continue
            items = []
            for eid, text in list(zip(res.edge_ids, res.texts))[: cfg.judge_limit]:
                e = visible.edges[eid]
                subject = " ".join(visible.item_metadata.get(e.item, "").split()[:20]) or None
                items.append(JudgeItem(str(eid), e.item, e.user, e.rating, text, subject))
            per_variant[v] = judge_reviews(backend, cfg.judge_template, items, cfg.judge_seeds)
        out = {
            "template": cfg.judge_template,
            "seeds": list(cfg.judge_seeds),
            "backend": backend.name,
            "table": judge_table(per_variant),
            "per_review": {v: [r.to_dict() for r in rows] for v, rows in per_variant.items()},
            "not_judged_embedding_variants": skipped,
        }
        dump_json(self.path("judge.json"), out)
        return out

    # -- report ---------------------------------------------------------------

    def _read_optional(self, name: str):
        p = self.path(name)
        if not p.exists():
            return {}
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)

    def build_report(self, failures=()) -> dict:
        cfg = self.cfg
        echo = cfg.to_dict()
        echo.pop("output_dir")
        evaluate = self._read_optional("evaluate.json")
        energy = self._read_optional("energy.json")
        judge = self._read_optional("judge.json")
        variants = {}
        for v in cfg.variants:
            entry = {"kind": None}
            meta_path = self.path("imputations", f"{v}.meta.json")
            if meta_path.exists():
                meta = load_json(meta_path)
                entry["kind"] = meta["kind"]
                entry["n_failed"] = len(meta.get("failed", {}))
                entry["ledger"] = meta.get("ledger")
                if meta["kind"] == EMBEDDING:
                    entry["note"] = "evaluated in embedding space; not decoded to text"
            ev = evaluate.get("variants", {}).get(v)
            if ev:
                entry.update(metrics=ev["metrics"], fidelity=ev["fidelity"])
            en = energy.get("variants", {}).get(v)
            if en:
                entry.update(energy=en["energy"], normalized_energy=en["normalized"])
            if judge.get("table") is not None:
                rows = [r for r in judge["table"] if r["variant"] == v]
                entry["judge"] = {r["dimension"]: r["mean"] for r in rows} or None
            variants[v] = entry
        report = {
            "version": __version__,
            "dataset": cfg.name,
            "config": echo,
            "stages_completed": [s for s in STAGES if self.path(STAGE_MARKERS[s]).exists()],
            "data": self._read_optional("preprocess.json"),
            "mask": self._read_optional("mask_stats.json"),
            "variants": variants,
            "energy_backend": energy.get("backend"),
            "energy_blank_reference": energy.get("blank_reference"),
            "mask_audit": evaluate.get("mask_audit"),
            "failures": list(failures),
        }
        return report

    def write_report(self, failures=()) -> dict:
        report = self.build_report(failures)
        dump_json(self.path("report.json"), report)
        self.write_metrics_tsv(report)
        self.write_manifest()
        return report

    def write_metrics_tsv(self, report: dict) -> None:
        lines = ["variant\tdataset\tmetric\tvalue"]
        for v, entry in report["variants"].items():
            cells = []
            for m in ("acc", "auc", "mrr", "ndcg"):
                if "metrics" in entry:
                    cells.append((m, entry["metrics"][m]))
            if "fidelity" in entry:
                cells += [("rouge_l", entry["fidelity"]["rouge_l"]), ("cosine", entry["fidelity"]["cosine"])]
            if "normalized_energy" in entry:
                cells += list(zip(("energy_user_norm", "energy_item_norm", "energy_user_weighted_norm"), entry["normalized_energy"]))
            for d, val in sorted((entry.get("judge") or {}).items()):
                cells.append((f"judge_{d}", val))
            for name, val in cells:
                lines.append(f"{v}\t{report['dataset']}\t{name}\t{'' if val is None else repr(float(val))}")
        with open(self.path("metrics.tsv"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    def write_manifest(self) -> None:
        files = {}
        for p in sorted(self.out.rglob("*")):
            rel = p.relative_to(self.out).as_posix()
            if p.is_file() and rel != "manifest.json":
                files[rel] = sha256(p)
        dump_json(self.path("manifest.json"), {"version": __version__, "seed": self.cfg.seed, "files": files})

    def run_stage(self, name: str, **kwargs):
        if name not in STAGES:
            raise ValueError(f"unknown stage {name!r}")
        return getattr(self, name)(**kwargs)


def run_pipeline(config: RunConfig, stages=STAGES) -> tuple[dict, bool]:
    """Run ``stages`` in order; stop at the first failure and still write a partial report.

    Returns the report and whether every stage succeeded.
    """
    run = Run(config)
    run.out.mkdir(parents=True, exist_ok=True)
    failures = []
    for stage in stages:
        try:
            log.info("stage %s", stage)
            run.run_stage(stage)
        except Exception as exc:  # noqa: BLE001 - recorded in the report
            log.error("stage %s failed: %s", stage, exc)
            failures.append({"stage": stage, "error": f"{type(exc).__name__}: {exc}"})
            break
    return run.write_report(failures), not failures


def run_single(config: RunConfig, stage: str, **kwargs) -> tuple[dict, bool]:
    """Run one stage against an existing output directory, then refresh the report."""
    run = Run(config)
    run.out.mkdir(parents=True, exist_ok=True)
    failures = []
    try:
        run.run_stage(stage, **kwargs)
    except Exception as exc:  # noqa: BLE001
        log.error("stage %s failed: %s", stage, exc)
        failures.append({"stage": stage, "error": f"{type(exc).__name__}: {exc}"})
    return run.write_report(failures), not failures
