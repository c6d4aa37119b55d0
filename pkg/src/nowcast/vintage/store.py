"""Append-only observation log and point-in-time snapshots."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from types import MappingProxyType
from typing import Iterable, Mapping

from ..errors import EmptySnapshotError, ObservationError, ValidationError
from .periods import FREQUENCIES, parse_date, parse_period, period_end, period_ordinal

CSV_HEADER = ("series_id", "ref_period", "value", "published_at", "frequency")


@dataclass(frozen=True)
class SeriesObservation:
    series_id: str
    ref_period: str
    value: float
    published_at: date
    frequency: str

    @classmethod
    def from_record(cls, record) -> "SeriesObservation":
        """Coerce a mapping (e.g. a CSV row) into a validated observation.

        Raises :class:`ObservationError` carrying a reason code.
        """
        if isinstance(record, SeriesObservation):
            obs = record
        else:
            try:
                sid = str(record["series_id"]).strip()
                period = str(record["ref_period"]).strip()
                raw_value = record["value"]
                raw_pub = record["published_at"]
                freq = str(record["frequency"]).strip()
            except KeyError as exc:
                raise ObservationError("missing_field", f"missing field {exc.args[0]!r}") from None
            try:
                value = float(raw_value)
            except (TypeError, ValueError):
                raise ObservationError("non_numeric", f"value {raw_value!r} is not a number") from None
            try:
                pub = parse_date(raw_pub)
            except ValidationError as exc:
                raise ObservationError("malformed_date", str(exc)) from None
            obs = cls(sid, period, value, pub, freq)
        if not obs.series_id:
            raise ObservationError("missing_field", "empty series_id")
        try:
            period_freq = parse_period(obs.ref_period)[0]
        except ValidationError as exc:
            raise ObservationError("malformed_period", str(exc)) from None
        if obs.frequency not in FREQUENCIES:
            raise ObservationError("bad_frequency", f"unknown frequency {obs.frequency!r}")
        if period_freq != obs.frequency:
            raise ObservationError(
                "frequency_mismatch",
                f"period {obs.ref_period!r} does not match frequency {obs.frequency!r}",
            )
        if not math.isfinite(obs.value):
            raise ObservationError("non_finite", f"non-finite value {obs.value!r}")
        return obs

    def key(self) -> tuple[str, str, date]:
        return (self.series_id, self.ref_period, self.published_at)

    def to_row(self) -> dict:
        return {
            "series_id": self.series_id,
            "ref_period": self.ref_period,
            "value": repr(float(self.value)),
            "published_at": self.published_at.isoformat(),
            "frequency": self.frequency,
        }


@dataclass(frozen=True)
class Rejection:
    index: int
    reason: str
    message: str


@dataclass(frozen=True)
class IngestSummary:
    inserts: int = 0
    revisions: int = 0
    rejects: int = 0
    rejected: tuple[Rejection, ...] = ()

    def as_dict(self) -> dict:
        return {
            "inserts": self.inserts,
            "revisions": self.revisions,
            "rejects": self.rejects,
            "rejected": [r.__dict__ for r in self.rejected],
        }


@dataclass(frozen=True)
class Snapshot:
    """Everything a real-time observer could see on ``as_of``."""

    as_of: date
    panel: Mapping[tuple[str, str], float]
    published: Mapping[tuple[str, str], date]
    ragged_edge: Mapping[str, str]
    frequencies: Mapping[str, str]

    def series(self, series_id: str) -> list[tuple[str, float]]:
        items = [(p, v) for (s, p), v in self.panel.items() if s == series_id]
        items.sort(key=lambda pv: period_ordinal(pv[0]))
        return items

    def series_with_provenance(self, series_id: str) -> list[tuple[str, float, date]]:
        return [(p, v, self.published[(series_id, p)]) for p, v in self.series(series_id)]

    def __contains__(self, series_id: str) -> bool:
        return series_id in self.frequencies

    def digest(self) -> str:
        h = hashlib.sha256(self.as_of.isoformat().encode())
        for (sid, period) in sorted(self.panel, key=lambda k: (k[0], period_ordinal(k[1]))):
            h.update(
                f"|{sid},{period},{self.panel[(sid, period)]!r},"
                f"{self.published[(sid, period)].isoformat()}".encode()
            )
        return h.hexdigest()


class ObservationLog:
    """Single-writer, append-only publication history.

    Parameters
    ----------
    early_release_days : int
        How many days before the end of its reference period an observation
        may be published. Zero forbids any pre-period publication.
    """

    def __init__(self, records: Iterable = (), early_release_days: int = 0):
        if early_release_days < 0:
            raise ValidationError("early_release_days must be >= 0")
        self.early_release_days = int(early_release_days)
        self._obs: list[SeriesObservation] = []
        self._by_key: dict[tuple[str, str, date], SeriesObservation] = {}
        self._periods: set[tuple[str, str]] = set()
        self._freq: dict[str, str] = {}
        if records:
            self.ingest(records, strict=True)

    # -- ingestion -----------------------------------------------------
    def _check(self, obs: SeriesObservation, pending_freq: Mapping[str, str]) -> None:
        earliest = period_end(obs.ref_period) - timedelta(days=self.early_release_days)
        if obs.published_at < earliest:
            raise ObservationError(
                "early_release",
                f"{obs.series_id} {obs.ref_period} published {obs.published_at} before {earliest}",
            )
        known = self._freq.get(obs.series_id, pending_freq.get(obs.series_id))
        if known is not None and known != obs.frequency:
            raise ObservationError(
                "frequency_mismatch",
                f"series {obs.series_id!r} is {known}, got {obs.frequency}",
            )

    def ingest(self, records: Iterable, strict: bool = False) -> IngestSummary:
        """Validate and append records.

        Identical re-submissions are rejected with reason ``"duplicate"``;
        two different values sharing (series, period, published_at) are a
        ``"published_at_tie"`` reject. With ``strict=True`` any reject other
        than a duplicate raises and nothing is appended.
        """
        accepted: list[SeriesObservation] = []
        rejected: list[Rejection] = []
        batch_keys: dict[tuple, SeriesObservation] = {}
        pending_freq: dict[str, str] = {}
        for i, rec in enumerate(records):
            try:
                obs = SeriesObservation.from_record(rec)
                self._check(obs, pending_freq)
                prior = self._by_key.get(obs.key(), batch_keys.get(obs.key()))
                if prior is not None:
                    if prior.value == obs.value:
                        raise ObservationError("duplicate", f"duplicate of {obs.key()}")
                    raise ObservationError(
                        "published_at_tie",
                        f"conflicting values for {obs.series_id} {obs.ref_period} on {obs.published_at}",
                    )
            except ObservationError as exc:
                rejected.append(Rejection(i, exc.reason, str(exc)))
                continue
            batch_keys[obs.key()] = obs
            pending_freq.setdefault(obs.series_id, obs.frequency)
            accepted.append(obs)

        if strict:
            bad = [r for r in rejected if r.reason != "duplicate"]
            if bad:
                raise ObservationError(bad[0].reason, f"record {bad[0].index}: {bad[0].message}")

        inserts = revisions = 0
        for obs in accepted:
            pair = (obs.series_id, obs.ref_period)
            if pair in self._periods:
                revisions += 1
            else:
                inserts += 1
                self._periods.add(pair)
            self._obs.append(obs)
            self._by_key[obs.key()] = obs
            self._freq.setdefault(obs.series_id, obs.frequency)
        return IngestSummary(inserts, revisions, len(rejected), tuple(rejected))

    # -- queries -------------------------------------------------------
    def __len__(self) -> int:
        return len(self._obs)

    def __iter__(self):
        return iter(self._obs)

    @property
    def observations(self) -> tuple[SeriesObservation, ...]:
        return tuple(self._obs)

    @property
    def series_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self._freq))

    def frequency_of(self, series_id: str) -> str:
        return self._freq[series_id]

    @property
    def earliest_published(self) -> date:
        if not self._obs:
            raise EmptySnapshotError("observation log is empty")
        return min(o.published_at for o in self._obs)

    @property
    def latest_published(self) -> date:
        if not self._obs:
            raise EmptySnapshotError("observation log is empty")
        return max(o.published_at for o in self._obs)

    def snapshot_at(self, as_of) -> Snapshot:
        """Freeze the panel as it stood on ``as_of`` (latest revision wins)."""
        as_of = parse_date(as_of)
        if not self._obs:
            raise EmptySnapshotError("observation log is empty")
        if as_of < self.earliest_published:
            raise EmptySnapshotError(
                f"as_of {as_of} precedes the earliest publication {self.earliest_published}"
            )
        panel: dict[tuple[str, str], float] = {}
        published: dict[tuple[str, str], date] = {}
        for obs in self._obs:
            if obs.published_at > as_of:
                continue
            pair = (obs.series_id, obs.ref_period)
            if pair not in published or obs.published_at > published[pair]:
                panel[pair] = obs.value
                published[pair] = obs.published_at
        edge: dict[str, str] = {}
        freqs: dict[str, str] = {}
        for sid, period in panel:
            freqs[sid] = self._freq[sid]
            if sid not in edge or period_ordinal(period) > period_ordinal(edge[sid]):
                edge[sid] = period
        order = sorted(panel, key=lambda k: (k[0], period_ordinal(k[1])))
        return Snapshot(
            as_of=as_of,
            panel=MappingProxyType({k: panel[k] for k in order}),
            published=MappingProxyType({k: published[k] for k in order}),
            ragged_edge=MappingProxyType(dict(sorted(edge.items()))),
            frequencies=MappingProxyType(dict(sorted(freqs.items()))),
        )

    def first_release(self, series_id: str, ref_period: str) -> SeriesObservation | None:
        cands = [o for o in self._obs if o.series_id == series_id and o.ref_period == ref_period]
        return min(cands, key=lambda o: o.published_at) if cands else None

    def digest(self) -> str:
        h = hashlib.sha256()
        for obs in sorted(self._obs, key=lambda o: (o.series_id, period_ordinal(o.ref_period), o.published_at)):
            row = obs.to_row()
            h.update(("|" + ",".join(row[c] for c in CSV_HEADER)).encode())
        return h.hexdigest()

    # -- csv -----------------------------------------------------------
    def to_csv(self, path) -> None:
        write_observation_csv(path, self._obs)

    @classmethod
    def from_csv(cls, path, early_release_days: int = 0) -> "ObservationLog":
        log = cls(early_release_days=early_release_days)
        log.ingest(read_observation_csv(path), strict=True)
        return log


def read_observation_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_HEADER if c not in (reader.fieldnames or ())]
        if missing:
            raise ValidationError(f"{path}: missing CSV columns {missing}")
        return list(reader)


def write_observation_csv(path, observations: Iterable[SeriesObservation], append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_HEADER, lineterminator="\n")
        if not append or fh.tell() == 0:
            writer.writeheader()
        for obs in observations:
            writer.writerow(obs.to_row())
