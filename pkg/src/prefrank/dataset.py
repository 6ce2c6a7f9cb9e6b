"""Annotation dataset lifecycle: ingestion, annotator qualification,
ranking sessions, aggregation with quality filtering, and JSONL export.

Groups move through open -> complete -> finalized, or end up rejected
(by the disagreement filter at finalization, or by expert review). State
is event-sourced: every mutation appends one JSON line to ``events.jsonl``
and is re-applied verbatim on restart, optionally fast-forwarded from a
``snapshot.json``. Both files are human-readable for annotation audits.

Writes are serialized under one store lock (arrival order per group is
what matters; a single lock satisfies it), reads need no lock.
"""

from __future__ import annotations

import json
import random
import threading
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from PIL import Image, UnidentifiedImageError

from prefrank.jsonl import dumps_record, read_jsonl, write_jsonl
from prefrank.ranking import (
    AnnotationGroup,
    Candidate,
    RankVector,
    agreement,
    aggregate_ranks,
    annotator_agreement,
    win_rate_matrix,
)

__all__ = [
    "DatasetError",
    "ValidationError",
    "ConflictError",
    "NotFoundError",
    "NotQualifiedError",
    "StateError",
    "AnnotatorProfile",
    "GroupState",
    "DatasetStore",
    "canonicalize_ranks",
    "group_from_record",
    "GROUP_SIZE",
    "EXPERT_REJECTION_REASONS",
]

GROUP_SIZE = 4
ANNOTATIONS_REQUIRED = 3
QUALIFICATION_THRESHOLD = 0.75
DISAGREEMENT_THRESHOLD = 0.5

# Reasons an expert reviewer may attach; "disagreement" is reserved for the
# automatic consensus filter at finalization.
EXPERT_REJECTION_REASONS = ("indistinguishable", "low_content")


class DatasetError(Exception):
    """Base class for dataset lifecycle failures."""


class ValidationError(DatasetError):
    """Malformed input: bad record shape, rank vector, or image reference."""


class ConflictError(DatasetError):
    """Duplicate id or repeated submission."""


class NotFoundError(DatasetError):
    """Unknown group or annotator."""


class NotQualifiedError(DatasetError):
    """Annotator is not qualified for annotation tasks."""


class StateError(DatasetError):
    """Operation not valid for the group's current status."""


@dataclass(frozen=True)
class AnnotatorProfile:
    """Qualification outcome for one annotator."""

    annotator_id: str
    qualification_score: float
    status: str  # pending | qualified | rejected

    @property
    def qualified(self) -> bool:
        return self.status == "qualified"


@dataclass
class GroupState:
    """One group's annotation lifecycle.

    `issued` records the seeded display order handed to each annotator, so
    submissions can be un-shuffled back to canonical candidate order.
    """

    group: AnnotationGroup
    status: str = "open"  # open | complete | finalized | rejected
    rejection_reason: str | None = None
    agreement: float | None = None
    issued: dict[str, tuple[int, ...]] = field(default_factory=dict)

    @property
    def group_id(self) -> str:
        return self.group.group_id

    def annotated_by(self, annotator_id: str) -> bool:
        return any(a == annotator_id for a, _ in self.group.annotations)


def _competition_to_midrank(values: Sequence[Fraction]) -> list[Fraction] | None:
    """Convert competition-style ties (1,1,3,4) to mid-ranks, or None if the
    values are not a valid competition ranking."""
    counts = Counter(values)
    for v in counts:
        if v.denominator != 1:
            return None
        less = sum(c for u, c in counts.items() if u < v)
        if v != less + 1:
            return None
    return [v + Fraction(counts[v] - 1, 2) for v in values]


def canonicalize_ranks(values: Sequence[object]) -> RankVector:
    """Accept a rank vector in mid-rank form, or competition notation with
    tied positions sharing the earliest rank, which is canonicalized to
    mid-ranks. Anything else fails the mid-rank sum rule."""
    try:
        return RankVector(values)
    except ValueError:
        pass
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc
    try:
        fracs = [Fraction(v) for v in values]
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"rank values must be numeric: {values!r}") from exc
    mids = _competition_to_midrank(fracs)
    if mids is None:
        g = len(values)
        raise ValidationError(
            f"invalid rank vector {list(values)!r}: neither a mid-rank assignment "
            f"(values must sum to {g * (g + 1) // 2}) nor competition-style ties"
        )
    return RankVector(mids)


def _rank_json(ranks: Iterable[Fraction]) -> list[int | float]:
    """JSON-friendly rank values: ints where integral, floats for .5 ties."""
    return [int(r) if r.denominator == 1 else float(r) for r in ranks]


def _record_of(group: AnnotationGroup) -> dict:
    """Canonical export record for a group, key order fixed."""
    record: dict = {
        "group_id": group.group_id,
        "lr_path": group.lr_ref,
        "candidates": [
            {"id": c.candidate_id, "path": c.ref, "source": c.source}
            for c in group.candidates
        ],
        "annotations": [
            {"annotator_id": a, "ranks": _rank_json(r)} for a, r in group.annotations
        ],
    }
    if group.aggregate is not None:
        record["aggregate_ranks"] = _rank_json(group.aggregate)
    return record


def group_from_record(record: dict) -> AnnotationGroup:
    if not isinstance(record, dict):
        raise ValidationError("group record must be a JSON object")
    missing = [k for k in ("group_id", "lr_path", "candidates") if k not in record]
    if missing:
        raise ValidationError(f"group record missing fields: {', '.join(missing)}")
    raw_candidates = record["candidates"]
    if not isinstance(raw_candidates, list) or len(raw_candidates) != GROUP_SIZE:
        got = len(raw_candidates) if isinstance(raw_candidates, list) else "non-list"
        raise ValidationError(f"a group needs exactly {GROUP_SIZE} candidates, got {got}")
    candidates = []
    for c in raw_candidates:
        try:
            candidates.append(Candidate(candidate_id=c["id"], ref=c["path"], source=c["source"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"candidate entries need id/path/source: {c!r}") from exc
    annotations = []
    for entry in record.get("annotations", []):
        try:
            annotations.append((entry["annotator_id"], RankVector(entry["ranks"])))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"annotation entries need annotator_id/ranks: {entry!r}") from exc
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
    aggregate = None
    if record.get("aggregate_ranks") is not None:
        try:
            aggregate = RankVector(record["aggregate_ranks"])
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
    try:
        return AnnotationGroup(
            group_id=record["group_id"],
            lr_ref=record["lr_path"],
            candidates=tuple(candidates),
            annotations=tuple(annotations),
            aggregate=aggregate,
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


class DatasetStore:
    """Event-sourced store for annotation groups and annotator profiles.

    All public mutators validate, append one event, and apply it through
    the same code path used during replay, so a restarted store always
    reconstructs the exact same state.
    """

    def __init__(
        self,
        root: str | Path,
        seed: int = 0,
        qualification_threshold: float = QUALIFICATION_THRESHOLD,
        disagreement_threshold: float = DISAGREEMENT_THRESHOLD,
        annotations_required: int = ANNOTATIONS_REQUIRED,
        image_root: str | Path | None = None,
        validate_images: bool = True,
        snapshot_every: int | None = None,
    ):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.seed = seed
        self.qualification_threshold = qualification_threshold
        self.disagreement_threshold = disagreement_threshold
        self.annotations_required = annotations_required
        self.image_root = Path(image_root) if image_root is not None else None
        self.validate_images = validate_images
        self.snapshot_every = snapshot_every

        self.groups: dict[str, GroupState] = {}
        self.annotators: dict[str, AnnotatorProfile] = {}
        self._events_applied = 0
        self._lock = threading.Lock()
        self._load()

    # -- persistence ------------------------------------------------------

    @property
    def events_path(self) -> Path:
        return self.root / "events.jsonl"

    @property
    def snapshot_path(self) -> Path:
        return self.root / "snapshot.json"

    def _load(self) -> None:
        skip = 0
        if self.snapshot_path.exists():
            snapshot = json.loads(self.snapshot_path.read_text(encoding="utf-8"))
            self._restore_snapshot(snapshot)
            skip = snapshot["events_applied"]
            self._events_applied = skip
        if self.events_path.exists():
            for n, event in enumerate(read_jsonl(self.events_path)):
                if n < skip:
                    continue
                self._apply(event)
                self._events_applied += 1

    def _commit(self, event: dict) -> None:
        """Apply a freshly validated event and append it to the log."""
        self._apply(event)
        with open(self.events_path, "a", encoding="utf-8") as fh:
            fh.write(dumps_record(event))
            fh.write("\n")
        self._events_applied += 1
        if self.snapshot_every and self._events_applied % self.snapshot_every == 0:
            self.save_snapshot()

    def save_snapshot(self) -> None:
        """Write the full current state plus the event count it covers."""
        snapshot = {
            "events_applied": self._events_applied,
            "annotators": [
                {
                    "annotator_id": p.annotator_id,
                    "qualification_score": p.qualification_score,
                    "status": p.status,
                }
                for p in self.annotators.values()
            ],
            "groups": [
                {
                    "record": _record_of(state.group),
                    "status": state.status,
                    "rejection_reason": state.rejection_reason,
                    "agreement": state.agreement,
                    "issued": {a: list(order) for a, order in state.issued.items()},
                }
                for state in self.groups.values()
            ],
        }
        self.snapshot_path.write_text(
            json.dumps(snapshot, ensure_ascii=False, indent=1) + "\n", encoding="utf-8"
        )

    def _restore_snapshot(self, snapshot: dict) -> None:
        for p in snapshot["annotators"]:
            self.annotators[p["annotator_id"]] = AnnotatorProfile(
                annotator_id=p["annotator_id"],
                qualification_score=p["qualification_score"],
                status=p["status"],
            )
        for g in snapshot["groups"]:
            group = group_from_record(g["record"])
            self.groups[group.group_id] = GroupState(
                group=group,
                status=g["status"],
                rejection_reason=g["rejection_reason"],
                agreement=g["agreement"],
                issued={a: tuple(order) for a, order in g["issued"].items()},
            )

    # -- event application (shared by live calls and replay) ---------------

    def _apply(self, event: dict) -> None:
        kind = event["event"]
        if kind == "ingest":
            group = group_from_record(event["record"])
            status = event["status"]
            self.groups[group.group_id] = GroupState(group=group, status=status)
        elif kind == "qualify":
            self.annotators[event["annotator_id"]] = AnnotatorProfile(
                annotator_id=event["annotator_id"],
                qualification_score=event["score"],
                status=event["status"],
            )
        elif kind == "task":
            state = self.groups[event["group_id"]]
            state.issued[event["annotator_id"]] = tuple(event["order"])
        elif kind == "ranking":
            state = self.groups[event["group_id"]]
            ranks = RankVector(event["ranks"])
            annotations = state.group.annotations + ((event["annotator_id"], ranks),)
            state.group = replace(state.group, annotations=annotations)
            if len(annotations) >= self.annotations_required:
                state.status = "complete"
        elif kind == "finalize":
            state = self.groups[event["group_id"]]
            state.agreement = event["agreement"]
            if event["status"] == "finalized":
                state.group = replace(state.group, aggregate=RankVector(event["aggregate"]))
                state.status = "finalized"
            else:
                state.status = "rejected"
                state.rejection_reason = "disagreement"
        elif kind == "reject":
            state = self.groups[event["group_id"]]
            state.status = "rejected"
            state.rejection_reason = event["reason"]
        else:
            raise ValueError(f"unknown event type {kind!r} in log")

    # -- lookups ------------------------------------------------------------

    def group(self, group_id: str) -> GroupState:
        try:
            return self.groups[group_id]
        except KeyError:
            raise NotFoundError(f"unknown group {group_id!r}") from None

    def annotator(self, annotator_id: str) -> AnnotatorProfile:
        try:
            return self.annotators[annotator_id]
        except KeyError:
            raise NotFoundError(f"unknown annotator {annotator_id!r}") from None

    def finalized_states(self) -> list[GroupState]:
        return [s for s in self.groups.values() if s.status == "finalized"]

    def _resolve(self, ref: str) -> Path:
        path = Path(ref)
        if self.image_root is not None and not path.is_absolute():
            return self.image_root / path
        return path

    def _check_image(self, ref: str) -> None:
        path = self._resolve(ref)
        if not path.is_file():
            raise ValidationError(f"image file not found: {ref}")
        try:
            with Image.open(path) as img:
                img.verify()
        except (UnidentifiedImageError, OSError) as exc:
            raise ValidationError(f"image file does not decode: {ref} ({exc})") from exc

    # -- operations ----------------------------------------------------------

    def ingest_group(self, record: dict) -> str:
        """Register a new group from a record with group_id, lr_path, and
        exactly four candidates; records carrying annotations or aggregate
        ranks (re-imports) enter in the matching lifecycle state."""
        group = group_from_record(record)
        with self._lock:
            if group.group_id in self.groups:
                raise ConflictError(f"group {group.group_id!r} already ingested")
            if self.validate_images:
                self._check_image(group.lr_ref)
                for cand in group.candidates:
                    self._check_image(cand.ref)
            if group.aggregate is not None:
                status = "finalized"
            elif len(group.annotations) >= self.annotations_required:
                status = "complete"
            else:
                status = "open"
            self._commit({"event": "ingest", "record": _record_of(group), "status": status})
        return group.group_id

    def qualify_annotator(
        self,
        annotator_id: str,
        gold: Sequence[RankVector],
        submitted: Sequence[RankVector],
    ) -> AnnotatorProfile:
        """Score an annotator's qualification round against expert rankings.

        The score is the pooled pairwise agreement; at or above the
        configured threshold the annotator is qualified, below it rejected.
        """
        if not gold:
            raise ValidationError("qualification needs a non-empty expert gold set")
        if len(gold) != len(submitted):
            raise ValidationError(
                f"submitted {len(submitted)} rankings for {len(gold)} gold groups"
            )
        try:
            score = agreement(submitted, gold)
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
        status = "qualified" if score >= self.qualification_threshold else "rejected"
        with self._lock:
            self._commit(
                {"event": "qualify", "annotator_id": annotator_id, "score": score, "status": status}
            )
        return self.annotators[annotator_id]

    def next_task(self, annotator_id: str) -> dict | None:
        """Issue the next annotation task: the oldest open group this
        annotator has not ranked, with candidates in a seeded shuffled
        display order. Returns None when no work is available; asking again
        re-issues the same pending task."""
        profile = self.annotator(annotator_id)
        if not profile.qualified:
            raise NotQualifiedError(f"annotator {annotator_id!r} is not qualified")
        with self._lock:
            for state in self.groups.values():
                if state.status != "open" or state.annotated_by(annotator_id):
                    continue
                order = state.issued.get(annotator_id)
                if order is None:
                    rng = random.Random(f"{self.seed}|{annotator_id}|{state.group_id}")
                    shuffled = list(range(len(state.group.candidates)))
                    rng.shuffle(shuffled)
                    order = tuple(shuffled)
                    self._commit(
                        {
                            "event": "task",
                            "annotator_id": annotator_id,
                            "group_id": state.group_id,
                            "order": list(order),
                        }
                    )
                return {
                    "group_id": state.group_id,
                    "annotator_id": annotator_id,
                    "lr_path": state.group.lr_ref,
                    "candidates": [state.group.candidates[i].ref for i in order],
                }
        return None

    def submit_ranking(self, annotator_id: str, group_id: str, ranks: Sequence[object]) -> GroupState:
        """Store one annotator's ranking, given in the display order of the
        task previously issued to them.

        Mid-rank vectors and competition-style ties are both accepted; the
        stored vector is un-shuffled to canonical candidate order. The third
        accepted ranking moves the group to complete.
        """
        state = self.group(group_id)
        with self._lock:
            order = state.issued.get(annotator_id)
            if order is None:
                raise NotFoundError(
                    f"no task was issued to annotator {annotator_id!r} for group {group_id!r}"
                )
            if state.annotated_by(annotator_id):
                raise ConflictError(
                    f"annotator {annotator_id!r} already ranked group {group_id!r}"
                )
            if state.status != "open":
                raise StateError(f"group {group_id!r} is {state.status}, not accepting rankings")
            display_ranks = canonicalize_ranks(ranks)
            if len(display_ranks) != len(state.group.candidates):
                raise ValidationError(
                    f"expected {len(state.group.candidates)} ranks, got {len(display_ranks)}"
                )
            canonical = [Fraction(0)] * len(order)
            for position, candidate_index in enumerate(order):
                canonical[candidate_index] = display_ranks[position]
            self._commit(
                {
                    "event": "ranking",
                    "annotator_id": annotator_id,
                    "group_id": group_id,
                    "ranks": _rank_json(canonical),
                }
            )
        return state

    def finalize_group(self, group_id: str) -> GroupState:
        """Aggregate a complete group's annotations by average rank, or
        reject it for disagreement when annotator consensus falls below the
        configured threshold (inclusive boundary: exactly at threshold
        finalizes)."""
        state = self.group(group_id)
        with self._lock:
            if state.status != "complete":
                raise StateError(
                    f"group {group_id!r} is {state.status}; only complete groups finalize"
                )
            vectors = [ranks for _, ranks in state.group.annotations]
            consensus = annotator_agreement(vectors)
            if consensus >= self.disagreement_threshold:
                aggregate = aggregate_ranks(vectors)
                event = {
                    "event": "finalize",
                    "group_id": group_id,
                    "agreement": consensus,
                    "status": "finalized",
                    "aggregate": _rank_json(aggregate),
                }
            else:
                event = {
                    "event": "finalize",
                    "group_id": group_id,
                    "agreement": consensus,
                    "status": "rejected",
                    "aggregate": None,
                }
            self._commit(event)
        return state

    def reject_group(self, group_id: str, reason: str) -> GroupState:
        """Expert-review rejection; allowed at any stage including after
        finalization (post-hoc filtering), but only with an expert reason."""
        if reason not in EXPERT_REJECTION_REASONS:
            raise ValidationError(
                f"rejection reason must be one of {EXPERT_REJECTION_REASONS}, got {reason!r}"
            )
        state = self.group(group_id)
        with self._lock:
            if state.status == "rejected":
                raise ConflictError(f"group {group_id!r} is already rejected")
            self._commit({"event": "reject", "group_id": group_id, "reason": reason})
        return state

    def export_records(self) -> list[dict]:
        """Canonical records of all finalized groups, in ingest order."""
        records = [_record_of(s.group) for s in self.finalized_states()]
        if not records:
            raise StateError("no finalized groups to export")
        return records

    def export_dataset(self, path: str | Path) -> int:
        """Write finalized groups as canonical JSONL; returns record count."""
        return write_jsonl(path, self.export_records())

    def import_dataset(self, path: str | Path) -> list[str]:
        """Ingest every record of a dataset JSONL file."""
        return [self.ingest_group(record) for record in read_jsonl(path)]

    def report_win_rates(self) -> dict:
        """Head-to-head win rates between source tags over finalized groups,
        with per-pair comparison counts."""
        finalized = self.finalized_states()
        if not finalized:
            raise StateError("no finalized groups to report on")
        sources = sorted({c.source for s in finalized for c in s.group.candidates})
        matrix = win_rate_matrix([s.group for s in finalized], sources)
        return matrix.to_dict()
