"""Calibration-study data model: sites, recorded depths, ingestion and validation.

A calibration dataset holds recorded probing depths, in whole millimeters
from 0 to 15, for periodontal sites probed exactly twice each.  Sites are
addressed by (subject, tooth, location); teeth are numbered 1-28 in Universal
order with third molars skipped (1-14 maxillary right to left, 15-28
mandibular left to right), and each tooth carries six probing locations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ParseError, ValidationError

EXAMINERS = ("A", "B", "C", "S")
REFERENCE_EXAMINER = "S"
#: Non-reference examiners, the only ones that carry bias parameters.
HYGIENISTS = ("A", "B", "C")

#: Probing locations: distobuccal, midbuccal, mesiobuccal and lingual mirror.
LOCATIONS = ("DB", "B", "MB", "DL", "L", "ML")
BUCCAL_LOCATIONS = frozenset({"DB", "B", "MB"})
PROXIMAL_LOCATIONS = frozenset({"DB", "MB", "DL", "ML"})

N_TEETH = 28
MAX_DEPTH_MM = 15
#: Recorded categories 0..15.
N_CATEGORIES = 16

QUADRANTS = ("UR", "UL", "LL", "LR")

#: Canonical pair labels: inter pairs first (S listed last within a label),
#: then intra pairs.
PAIR_LABELS = ("AS", "BS", "CS", "AB", "AC", "BC", "AA", "BB", "CC", "SS")

# Tooth type by position within a quadrant, from the back of the mouth
# (2 molars, 2 premolars, canine, 2 incisors once third molars are skipped).
_TYPE_FROM_BACK = ("molar", "molar", "premolar", "premolar",
                   "canine", "incisor", "incisor")


def tooth_quadrant(tooth: int) -> str:
    """Quadrant code (UR/UL/LL/LR) of a tooth numbered 1-28."""
    if not 1 <= tooth <= N_TEETH:
        raise ValueError(f"tooth must be in 1..{N_TEETH}, got {tooth}")
    return QUADRANTS[(tooth - 1) // 7]


def tooth_arch(tooth: int) -> str:
    """'maxillary' for teeth 1-14, 'mandibular' for 15-28."""
    return "maxillary" if tooth <= 14 else "mandibular"


def tooth_type(tooth: int) -> str:
    """One of molar/premolar/canine/incisor."""
    quad = (tooth - 1) // 7
    offset = (tooth - 1) % 7
    # Quadrants UR and LL run back-of-mouth -> midline; UL and LR reverse.
    if quad in (1, 3):
        offset = 6 - offset
    return _TYPE_FROM_BACK[offset]


@dataclass(frozen=True)
class SitePosition:
    """One of the six probing locations on a tooth."""

    tooth: int
    location: str

    def __post_init__(self):
        if not 1 <= self.tooth <= N_TEETH:
            raise ValueError(f"tooth must be in 1..{N_TEETH}, got {self.tooth}")
        if self.location not in LOCATIONS:
            raise ValueError(f"unknown location {self.location!r}")

    @property
    def arch(self) -> str:
        return tooth_arch(self.tooth)

    @property
    def quadrant(self) -> str:
        return tooth_quadrant(self.tooth)

    @property
    def tooth_type(self) -> str:
        return tooth_type(self.tooth)

    @property
    def anterior_flag(self) -> bool:
        """True for incisors and canines."""
        return self.tooth_type in ("incisor", "canine")

    @property
    def proximal_flag(self) -> bool:
        """True for distal/mesial locations, False mid-tooth."""
        return self.location in PROXIMAL_LOCATIONS

    @property
    def buccal_flag(self) -> bool:
        """True for cheek-side locations, False lingual."""
        return self.location in BUCCAL_LOCATIONS


@dataclass(frozen=True)
class SiteRecord:
    """A single recorded probing depth."""

    subject: int
    site: SitePosition
    examiner: str
    replicate: int
    depth: int

    def __post_init__(self):
        if self.examiner not in EXAMINERS:
            raise ValueError(f"unknown examiner {self.examiner!r}")
        if self.replicate not in (1, 2):
            raise ValueError(f"replicate must be 1 or 2, got {self.replicate}")
        if not 0 <= self.depth <= MAX_DEPTH_MM:
            raise ValueError(f"depth must be in 0..{MAX_DEPTH_MM}, got {self.depth}")


def canonical_pair(e1: str, e2: str) -> str:
    """Canonical examiner-pair label: alphabetical, reference examiner last."""
    if e1 == e2:
        return e1 + e2
    if REFERENCE_EXAMINER in (e1, e2):
        other = e2 if e1 == REFERENCE_EXAMINER else e1
        return other + REFERENCE_EXAMINER
    return min(e1, e2) + max(e1, e2)


class CalibrationDataset:
    """Immutable columnar store of a calibration study.

    Sites are kept in canonical order (subject, tooth, location index); the
    two replicates of a site occupy one row of the (L, 2) depth/examiner
    arrays, replicate 1 in column 0.
    """

    def __init__(self, subjects, teeth, locations, examiners, depths):
        self.subjects = np.asarray(subjects, dtype=np.int64)
        self.teeth = np.asarray(teeth, dtype=np.int64)
        self.locations = np.asarray(locations, dtype=np.int64)
        self.examiners = np.asarray(examiners, dtype=np.int64)
        self.depths = np.asarray(depths, dtype=np.int64)
        L = self.subjects.shape[0]
        if not (self.teeth.shape == (L,) and self.locations.shape == (L,)
                and self.examiners.shape == (L, 2) and self.depths.shape == (L, 2)):
            raise ValidationError("inconsistent dataset array shapes")
        for a in (self.subjects, self.teeth, self.locations,
                  self.examiners, self.depths):
            a.flags.writeable = False

    # -- basic accessors ---------------------------------------------------

    @property
    def n_sites(self) -> int:
        return int(self.subjects.shape[0])

    @property
    def n_records(self) -> int:
        return 2 * self.n_sites

    @property
    def subject_ids(self) -> np.ndarray:
        return np.unique(self.subjects)

    @property
    def n_subjects(self) -> int:
        return int(self.subject_ids.size)

    @property
    def sites_per_subject(self) -> dict[int, int]:
        ids, counts = np.unique(self.subjects, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    def site_position(self, idx: int) -> SitePosition:
        return SitePosition(int(self.teeth[idx]), LOCATIONS[self.locations[idx]])

    def pair_label(self, idx: int) -> str:
        e1, e2 = self.examiners[idx]
        return canonical_pair(EXAMINERS[e1], EXAMINERS[e2])

    def pair_labels(self) -> np.ndarray:
        """Canonical pair label per site."""
        return np.array([self.pair_label(i) for i in range(self.n_sites)])

    def iter_records(self) -> Iterator[SiteRecord]:
        for i in range(self.n_sites):
            pos = self.site_position(i)
            for k in (0, 1):
                yield SiteRecord(int(self.subjects[i]), pos,
                                 EXAMINERS[self.examiners[i, k]], k + 1,
                                 int(self.depths[i, k]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, CalibrationDataset):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("subjects", "teeth", "locations", "examiners", "depths"))

    def __repr__(self) -> str:
        return (f"CalibrationDataset(n_subjects={self.n_subjects}, "
                f"n_sites={self.n_sites}, n_records={self.n_records})")

    # -- construction ------------------------------------------------------

    @classmethod
    def from_records(cls, records: Iterable[SiteRecord]) -> "CalibrationDataset":
        """Build a validated dataset from row-level records."""
        by_site: dict[tuple, dict[int, SiteRecord]] = {}
        for rec in records:
            key = (rec.subject, rec.site.tooth, rec.site.location)
            reps = by_site.setdefault(key, {})
            if rec.replicate in reps:
                raise ValidationError(
                    f"duplicate record for subject {rec.subject}, tooth "
                    f"{rec.site.tooth}, site {rec.site.location}, "
                    f"replicate {rec.replicate}")
            reps[rec.replicate] = rec
        for key, reps in by_site.items():
            if set(reps) != {1, 2}:
                raise ValidationError(
                    f"replicate count: subject {key[0]}, tooth {key[1]}, site "
                    f"{key[2]} has {len(reps)} replicate(s); exactly 2 required")
        order = sorted(by_site, key=lambda k: (k[0], k[1], LOCATIONS.index(k[2])))
        subjects, teeth, locs, exams, depths = [], [], [], [], []
        for key in order:
            r1, r2 = by_site[key][1], by_site[key][2]
            subjects.append(key[0])
            teeth.append(key[1])
            locs.append(LOCATIONS.index(key[2]))
            exams.append((EXAMINERS.index(r1.examiner), EXAMINERS.index(r2.examiner)))
            depths.append((r1.depth, r2.depth))
        if not order:
            return cls(np.empty(0, int), np.empty(0, int), np.empty(0, int),
                       np.empty((0, 2), int), np.empty((0, 2), int))
        return cls(subjects, teeth, locs, exams, depths)


CSV_HEADER = ["subject_id", "tooth", "site", "examiner", "replicate", "depth_mm"]


def _parse_int(text: str, field: str, row: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"row {row}: field {field!r} is not an integer: {text!r}")


def load_dataset(path, format: str = "csv") -> CalibrationDataset:
    """Load and validate a calibration dataset from disk.

    Raises ParseError for malformed rows and ValidationError for invariant
    violations; both name the offending row and field.
    """
    if format != "csv":
        raise ValueError(f"unsupported format {format!r}")
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file: header row required")
        if [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(f"row 1: bad header {header!r}; "
                             f"expected {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(CSV_HEADER):
                raise ParseError(f"row {lineno}: expected {len(CSV_HEADER)} "
                                 f"fields, got {len(row)}")
            subject = _parse_int(row[0], "subject_id", lineno)
            tooth = _parse_int(row[1], "tooth", lineno)
            if not 1 <= tooth <= N_TEETH:
                raise ValidationError(f"row {lineno}: field 'tooth' out of "
                                      f"range 1..{N_TEETH}: {tooth}")
            loc = row[2].strip()
            if loc not in LOCATIONS:
                raise ParseError(f"row {lineno}: field 'site' has unknown "
                                 f"code {loc!r}")
            exam = row[3].strip()
            if exam not in EXAMINERS:
                raise ParseError(f"row {lineno}: field 'examiner' has unknown "
                                 f"code {exam!r}")
            replicate = _parse_int(row[4], "replicate", lineno)
            if replicate not in (1, 2):
                raise ValidationError(f"row {lineno}: field 'replicate' must "
                                      f"be 1 or 2, got {replicate}")
            depth = _parse_int(row[5], "depth_mm", lineno)
            if not 0 <= depth <= MAX_DEPTH_MM:
                raise ValidationError(f"row {lineno}: field 'depth_mm' out of "
                                      f"range 0..{MAX_DEPTH_MM}: {depth}")
            records.append((lineno, SiteRecord(subject, SitePosition(tooth, loc),
                                               exam, replicate, depth)))
    seen: dict[tuple, int] = {}
    for lineno, rec in records:
        key = (rec.subject, rec.site.tooth, rec.site.location, rec.replicate)
        if key in seen:
            raise ValidationError(
                f"row {lineno}: duplicate (subject_id, tooth, site, replicate) "
                f"key, first seen at row {seen[key]}")
        seen[key] = lineno
    site_rows: dict[tuple, list[int]] = {}
    for lineno, rec in records:
        site_rows.setdefault((rec.subject, rec.site.tooth, rec.site.location),
                             []).append(lineno)
    for key, rows in site_rows.items():
        if len(rows) != 2:
            raise ValidationError(
                f"row {rows[0]}: replicate count: site (subject {key[0]}, "
                f"tooth {key[1]}, {key[2]}) appears {len(rows)} time(s); "
                f"exactly 2 required")
    return CalibrationDataset.from_records(r for _, r in records)


def save_dataset(data: CalibrationDataset, path) -> None:
    """Write a dataset in the canonical CSV schema (round-trips bit-exactly)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rec in data.iter_records():
            writer.writerow([rec.subject, rec.site.tooth, rec.site.location,
                             rec.examiner, rec.replicate, rec.depth])


@dataclass(frozen=True)
class PairingRow:
    pair: str
    n_subjects: int
    n_sites: int


def pairing_summary(data: CalibrationDataset) -> list[PairingRow]:
    """Per examiner-pair subject and site counts, in canonical pair order.

    Pairs with no sites are omitted.  Site counts over all pairs sum to the
    dataset's total site count.
    """
    labels = data.pair_labels()
    rows = []
    for pair in PAIR_LABELS:
        mask = labels == pair
        if not mask.any():
            continue
        rows.append(PairingRow(pair, int(np.unique(data.subjects[mask]).size),
                               int(mask.sum())))
    return rows
