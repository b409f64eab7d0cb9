"""Durable annotation sessions: frozen proposals, append-only logs, reports.

A session freezes its ranked pair proposals at creation time and walks an
expert through them one at a time. Every accepted annotation is appended to a
per-session JSONL log and fsynced before it is acknowledged, so killing and
restarting the process between any two submissions loses nothing: replaying
the log reconstructs the exact session state. One writer per session is
enforced with a session-scoped lock; distinct sessions never share state.

Storage layout under the store root:

    datasets/<dataset_id>/data.csv + roles.json
    sessions/<session_id>/manifest.json   (written once, at creation)
    sessions/<session_id>/log.jsonl       (append-only annotation records)
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .data import Dataset
from .elicitation import pair_outcomes
from .errors import Exhausted, InvalidAnnotation, NotFound, StalePair
from .matching import RankedPairs, StrategyConfig, score_pairs, select_budget
from .propensity import cv_predict
from .rng import make_rng

__all__ = [
    "AnnotationRecord",
    "Explanation",
    "PairProposal",
    "Session",
    "SessionReport",
    "SessionStore",
]

ORIGINS = ("observed-column", "free-text")


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _normalize(name: str) -> str:
    return name.strip().casefold()


def _write_durable(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    dir_fd = os.open(path.parent, os.O_RDONLY)
    try:
        os.fsync(dir_fd)
    finally:
        os.close(dir_fd)


def _append_durable(path: Path, line: str) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
        fh.flush()
        os.fsync(fh.fileno())


@dataclass(frozen=True)
class Explanation:
    name: str
    origin: str  # "observed-column" | "free-text"

    def to_dict(self) -> dict:
        return {"name": self.name, "origin": self.origin}


@dataclass(frozen=True)
class AnnotationRecord:
    session_id: str
    pair_id: str
    explanations: tuple[Explanation, ...]
    skipped: bool
    timestamp: str
    annotator: str = ""

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "pair_id": self.pair_id,
            "explanations": [e.to_dict() for e in self.explanations],
            "skipped": self.skipped,
            "timestamp": self.timestamp,
            "annotator": self.annotator,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationRecord":
        return cls(
            session_id=d["session_id"],
            pair_id=d["pair_id"],
            explanations=tuple(
                Explanation(name=e["name"], origin=e["origin"]) for e in d["explanations"]
            ),
            skipped=bool(d["skipped"]),
            timestamp=d.get("timestamp", ""),
            annotator=d.get("annotator", ""),
        )


@dataclass(frozen=True)
class PairProposal:
    """One treated/untreated pair as shown to the annotator.

    Only observed covariates (and notes) are exposed; oracle concept columns
    never leave the server. larger[column] says which unit has the strictly
    greater value, for display highlighting.
    """

    pair_id: str
    index: int
    i: int
    j: int
    remaining: int
    total: int
    columns: tuple[str, ...]
    row_i: dict
    row_j: dict
    larger: dict
    notes_i: str | None = None
    notes_j: str | None = None

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "index": self.index,
            "i": self.i,
            "j": self.j,
            "remaining": self.remaining,
            "total": self.total,
            "columns": list(self.columns),
            "row_i": self.row_i,
            "row_j": self.row_j,
            "larger": self.larger,
            "notes_i": self.notes_i,
            "notes_j": self.notes_j,
        }


@dataclass(frozen=True)
class Session:
    id: str
    dataset_id: str
    config: StrategyConfig
    budget: int
    n_proposals: int
    status: str
    created_at: str
    annotator: str = ""

    @property
    def shortfall(self) -> int:
        return self.budget - self.n_proposals

    def to_dict(self) -> dict:
        return {
            "session_id": self.id,
            "dataset_id": self.dataset_id,
            "strategy": self.config.to_dict(),
            "budget": self.budget,
            "n_proposals": self.n_proposals,
            "status": self.status,
            "created_at": self.created_at,
            "annotator": self.annotator,
            "shortfall": self.shortfall,
        }


@dataclass(frozen=True)
class SessionReport:
    """Deterministic aggregation of a session's annotation log."""

    session_id: str
    status: str
    budget: int
    n_proposals: int
    cursor: int
    n_annotated: int
    n_skipped: int
    total_explanations: int
    concept_frequencies: tuple[tuple[str, int], ...]  # ranked, ties by first seen
    observed_citations: tuple[tuple[str, int], ...]
    oracle: dict | None = None

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "status": self.status,
            "budget": self.budget,
            "n_proposals": self.n_proposals,
            "cursor": self.cursor,
            "n_annotated": self.n_annotated,
            "n_skipped": self.n_skipped,
            "total_explanations": self.total_explanations,
            "concept_frequencies": [
                {"name": name, "count": count} for name, count in self.concept_frequencies
            ],
            "observed_citations": [
                {"name": name, "count": count} for name, count in self.observed_citations
            ],
            "oracle": self.oracle,
        }


@dataclass
class _SessionRuntime:
    manifest: dict
    records: list[AnnotationRecord]
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def cursor(self) -> int:
        return len(self.records)

    @property
    def n_proposals(self) -> int:
        return len(self.manifest["proposals"]["i"])

    @property
    def status(self) -> str:
        return "active" if self.cursor < self.n_proposals else "exhausted"


class SessionStore:
    """File-backed store for datasets and annotation sessions."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "datasets").mkdir(parents=True, exist_ok=True)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)
        self._global = threading.Lock()
        self._datasets: dict[str, Dataset] = {}
        self._sessions: dict[str, _SessionRuntime] = {}

    # -- datasets -------------------------------------------------------------
    def add_dataset(self, dataset: Dataset) -> str:
        dataset_id = dataset.content_hash()[:12]
        with self._global:
            directory = self.root / "datasets" / dataset_id
            if not directory.exists():
                dataset.save(directory)
            self._datasets[dataset_id] = dataset
        return dataset_id

    def get_dataset(self, dataset_id: str) -> Dataset:
        with self._global:
            if dataset_id in self._datasets:
                return self._datasets[dataset_id]
            directory = self.root / "datasets" / dataset_id
            if not directory.exists():
                raise NotFound(f"no dataset {dataset_id!r}")
            dataset = Dataset.load(directory)
            self._datasets[dataset_id] = dataset
            return dataset

    def list_datasets(self) -> list[str]:
        with self._global:
            return sorted(p.name for p in (self.root / "datasets").iterdir() if p.is_dir())

    # -- session lifecycle ------------------------------------------------------
    def create_session(
        self,
        dataset_id: str,
        config: StrategyConfig,
        budget: int,
        annotator: str = "",
    ) -> Session:
        if budget < 1:
            raise InvalidAnnotation("budget must be >= 1")
        dataset = self.get_dataset(dataset_id)
        propensity = None
        if config.kind in ("pi_match", "pi_dom"):
            propensity = cv_predict(dataset, seed=config.seed)
        ranked = score_pairs(dataset, config, propensity=propensity)
        selected = select_budget(ranked, budget)
        session_id = uuid.uuid4().hex[:12]
        manifest = {
            "session_id": session_id,
            "dataset_id": dataset_id,
            "strategy": config.to_dict(),
            "budget": budget,
            "annotator": annotator,
            "created_at": _now_iso(),
            "proposals": {
                "i": [int(v) for v in selected.i],
                "j": [int(v) for v in selected.j],
                "score": [float(v) for v in selected.score],
            },
        }
        with self._global:
            directory = self.root / "sessions" / session_id
            directory.mkdir(parents=True)
            _write_durable(directory / "manifest.json", json.dumps(manifest, indent=2))
            (directory / "log.jsonl").touch()
            runtime = _SessionRuntime(manifest=manifest, records=[])
            self._sessions[session_id] = runtime
        return self._session_view(runtime)

    def _session_view(self, runtime: _SessionRuntime) -> Session:
        m = runtime.manifest
        return Session(
            id=m["session_id"],
            dataset_id=m["dataset_id"],
            config=StrategyConfig.from_dict(m["strategy"]),
            budget=m["budget"],
            n_proposals=runtime.n_proposals,
            status=runtime.status,
            created_at=m["created_at"],
            annotator=m.get("annotator", ""),
        )

    def _runtime(self, session_id: str) -> _SessionRuntime:
        with self._global:
            if session_id in self._sessions:
                return self._sessions[session_id]
            directory = self.root / "sessions" / session_id
            manifest_path = directory / "manifest.json"
            if not manifest_path.exists():
                raise NotFound(f"no session {session_id!r}")
            manifest = json.loads(manifest_path.read_text())
            records = []
            log_path = directory / "log.jsonl"
            if log_path.exists():
                for line in log_path.read_text().splitlines():
                    if line.strip():
                        records.append(AnnotationRecord.from_dict(json.loads(line)))
            runtime = _SessionRuntime(manifest=manifest, records=records)
            self._sessions[session_id] = runtime
            return runtime

    def get_session(self, session_id: str) -> Session:
        return self._session_view(self._runtime(session_id))

    def list_sessions(self) -> list[str]:
        with self._global:
            return sorted(p.name for p in (self.root / "sessions").iterdir() if p.is_dir())

    # -- annotation loop --------------------------------------------------------
    def next_pair(self, session_id: str) -> PairProposal:
        runtime = self._runtime(session_id)
        with runtime.lock:
            cursor = runtime.cursor
            if cursor >= runtime.n_proposals:
                raise Exhausted(f"session {session_id} has no pairs left")
            dataset = self.get_dataset(runtime.manifest["dataset_id"])
            i = runtime.manifest["proposals"]["i"][cursor]
            j = runtime.manifest["proposals"]["j"][cursor]
            return self._proposal(dataset, session_id, cursor, i, j, runtime.n_proposals)

    @staticmethod
    def _proposal(
        dataset: Dataset, session_id: str, index: int, i: int, j: int, total: int
    ) -> PairProposal:
        row_i = {name: float(dataset.z[i, k]) for k, name in enumerate(dataset.z_names)}
        row_j = {name: float(dataset.z[j, k]) for k, name in enumerate(dataset.z_names)}
        larger = {}
        for name in dataset.z_names:
            if row_i[name] > row_j[name]:
                larger[name] = "i"
            elif row_j[name] > row_i[name]:
                larger[name] = "j"
            else:
                larger[name] = "tie"
        notes_i = dataset.notes[i] if dataset.notes is not None else None
        notes_j = dataset.notes[j] if dataset.notes is not None else None
        return PairProposal(
            pair_id=f"p{index}",
            index=index,
            i=int(i),
            j=int(j),
            remaining=total - index,
            total=total,
            columns=tuple(dataset.z_names),
            row_i=row_i,
            row_j=row_j,
            larger=larger,
            notes_i=notes_i,
            notes_j=notes_j,
        )

    def submit(
        self,
        session_id: str,
        pair_id: str,
        explanations: list[dict] | list[Explanation],
        skipped: bool = False,
        annotator: str = "",
        timestamp: str | None = None,
    ) -> dict:
        runtime = self._runtime(session_id)
        parsed = []
        for item in explanations:
            if isinstance(item, Explanation):
                parsed.append(item)
            else:
                parsed.append(Explanation(name=item.get("name", ""), origin=item.get("origin", "")))
        with runtime.lock:
            cursor = runtime.cursor
            index = self._parse_pair_id(pair_id, runtime)
            if index < cursor:
                raise StalePair(f"pair {pair_id} is already annotated")
            if index > cursor:
                raise InvalidAnnotation(
                    f"pair {pair_id} is not the current proposal (expected p{cursor})"
                )
            dataset = self.get_dataset(runtime.manifest["dataset_id"])
            self._validate_explanations(parsed, skipped, dataset)
            record = AnnotationRecord(
                session_id=session_id,
                pair_id=pair_id,
                explanations=tuple(parsed),
                skipped=bool(skipped),
                timestamp=timestamp or _now_iso(),
                annotator=annotator,
            )
            log_path = self.root / "sessions" / session_id / "log.jsonl"
            _append_durable(log_path, json.dumps(record.to_dict()))
            runtime.records.append(record)
            return {
                "acknowledged": True,
                "pair_id": pair_id,
                "cursor": runtime.cursor,
                "status": runtime.status,
            }

    @staticmethod
    def _parse_pair_id(pair_id: str, runtime: _SessionRuntime) -> int:
        if not pair_id.startswith("p"):
            raise InvalidAnnotation(f"malformed pair id {pair_id!r}")
        try:
            index = int(pair_id[1:])
        except ValueError as exc:
            raise InvalidAnnotation(f"malformed pair id {pair_id!r}") from exc
        if not 0 <= index < runtime.n_proposals:
            raise InvalidAnnotation(f"pair id {pair_id!r} outside the proposal range")
        return index

    @staticmethod
    def _validate_explanations(
        explanations: list[Explanation], skipped: bool, dataset: Dataset
    ) -> None:
        if skipped:
            return  # skip records may carry zero explanations
        if not explanations:
            raise InvalidAnnotation("non-skipped records need at least one explanation")
        observed = {_normalize(name) for name in dataset.z_names}
        for item in explanations:
            if item.origin not in ORIGINS:
                raise InvalidAnnotation(f"unknown explanation origin {item.origin!r}")
            if not item.name.strip():
                raise InvalidAnnotation("explanation names must be non-empty")
            if item.origin == "observed-column" and _normalize(item.name) not in observed:
                raise InvalidAnnotation(
                    f"{item.name!r} is not an observed column of the dataset"
                )

    # -- reporting ----------------------------------------------------------------
    def report(self, session_id: str) -> SessionReport:
        runtime = self._runtime(session_id)
        with runtime.lock:
            records = list(runtime.records)
            manifest = runtime.manifest
            status = runtime.status
        dataset = self.get_dataset(manifest["dataset_id"])
        counts: dict[str, int] = {}
        first_seen: dict[str, int] = {}
        observed_counts: dict[str, int] = {}
        total = 0
        n_annotated = 0
        n_skipped = 0
        for record in records:
            if record.skipped:
                n_skipped += 1
                continue
            n_annotated += 1
            for item in record.explanations:
                key = _normalize(item.name)
                if key not in first_seen:
                    first_seen[key] = len(first_seen)
                counts[key] = counts.get(key, 0) + 1
                total += 1
                if item.origin == "observed-column":
                    observed_counts[key] = observed_counts.get(key, 0) + 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], first_seen[kv[0]]))
        observed_ranked = sorted(
            observed_counts.items(), key=lambda kv: (-kv[1], first_seen[kv[0]])
        )
        oracle = None
        if dataset.u is not None:
            oracle = self._oracle_block(dataset, manifest, records, session_id)
        return SessionReport(
            session_id=session_id,
            status=status,
            budget=manifest["budget"],
            n_proposals=len(manifest["proposals"]["i"]),
            cursor=len(records),
            n_annotated=n_annotated,
            n_skipped=n_skipped,
            total_explanations=total,
            concept_frequencies=tuple(ranked),
            observed_citations=tuple(observed_ranked),
            oracle=oracle,
        )

    @staticmethod
    def _oracle_block(
        dataset: Dataset, manifest: dict, records: list[AnnotationRecord], session_id: str
    ) -> dict:
        genuine_names = {_normalize(name) for name in dataset.u_names}
        per_record = []
        annotated_idx = []
        for idx, record in enumerate(records):
            if record.skipped:
                continue
            names = [_normalize(item.name) for item in record.explanations]
            genuine = sum(1 for name in names if name in genuine_names)
            per_record.append(genuine / len(names))
            annotated_idx.append(idx)
        prop = manifest["proposals"]
        all_i = np.asarray(prop["i"], dtype=np.int64)
        all_j = np.asarray(prop["j"], dtype=np.int64)
        config = StrategyConfig.from_dict(manifest["strategy"])
        ranked = RankedPairs(
            i=all_i,
            j=all_j,
            score=np.asarray(prop["score"], dtype=float),
            config=config,
            dataset_hash=dataset.content_hash(),
        )
        lam_all = pair_outcomes(dataset, ranked).success
        lam_annotated = lam_all[annotated_idx] if annotated_idx else np.empty(0)
        rng = make_rng(0, "session_downsample", session_id)
        single_hits = []
        for record in records:
            if record.skipped:
                continue
            pick = record.explanations[int(rng.integers(0, len(record.explanations)))]
            single_hits.append(1.0 if _normalize(pick.name) in genuine_names else 0.0)
        # Skips-as-zero rate: a skip marks a pair where nothing was surfaced, so
        # it counts as a zero-success trial. For a complete session annotated by
        # a perfect extractor this equals the mean success probability over all
        # proposals exactly (skipped pairs are precisely those with no strict
        # exceedance in any coordinate, whose success probability is zero).
        n_records = len(records)
        return {
            "success_rate": float(np.mean(per_record)) if per_record else 0.0,
            "success_rate_skips_as_zero": (
                float(np.sum(per_record) / n_records) if n_records else 0.0
            ),
            "lambda_mean_annotated": float(lam_annotated.mean()) if annotated_idx else 0.0,
            "lambda_mean_proposed": float(lam_all.mean()) if len(lam_all) else 0.0,
            "strategy": config.kind,
            "single_selection": {
                "seed": 0,
                "success_rate": float(np.mean(single_hits)) if single_hits else 0.0,
            },
        }
