"""Admission-style profile records and their two representations.

A profile carries four text fields (GCEA results, GCEO results, leadership
entries, five PIQ answers), an optional offer label, and an optional
analysis text.  The human-readable form is a tagged block:

    Id: p0001
    [GCEA]: School:HCI, UAS:90.0; Grades:H2 MATHEMATICS A, ...
    [GCEO]: ENGLISH A2, ...
    [Leadership]: Robotics Club, Role:Captain, 2 years
    [PIQ1]: My first project ...
    OfferType: Offered

[Leadership] repeats, one line per entry; lines not starting a field are
continuations of the previous one.  The file container is JSON lines, one
object per profile, which round-trips exactly.
"""

import csv
import json
import random
import re
from dataclasses import dataclass, field, replace

FIELD_ORDER = ("gcea", "gceo", "leadership", "piq")
PIQ_SLOTS = 5
MISSING = "NaN"

OFFER_TEXT = {1: "Offered", 0: "Not Offered"}
_OFFER_VALUE = {v: k for k, v in OFFER_TEXT.items()}

_TAG_RE = re.compile(r"^\[(GCEA|GCEO|Leadership|PIQ([1-5])|Analysis)\]:?\s?")


class ProfileError(ValueError):
    """Malformed profile record; message carries the line locus."""


@dataclass
class Profile:
    id: str
    gcea: str | None = None
    gceo: str | None = None
    leadership: list[str] = field(default_factory=list)
    piq: list[str | None] = field(default_factory=lambda: [None] * PIQ_SLOTS)
    offer: int | None = None
    analysis: str | None = None

    @property
    def leadership_text(self):
        return "; ".join(self.leadership)

    @property
    def piq_text(self):
        return " ".join(x for x in self.piq if x)

    def field_texts(self):
        """The four embedding inputs, in fixed order."""
        return (self.gcea or "", self.gceo or "", self.leadership_text, self.piq_text)


def parse_profile(text):
    """Parse one tagged-block record into a Profile."""
    p = Profile(id="")
    seen = set()
    target = None  # (attr, index) receiving continuation lines

    def put(attr, idx, value, lineno):
        nonlocal target
        if attr in ("gcea", "gceo", "analysis"):
            if attr in seen:
                raise ProfileError(f"line {lineno}: duplicate field {attr}")
            seen.add(attr)
            setattr(p, attr, value)
            target = (attr, None)
        elif attr == "leadership":
            p.leadership.append(value)
            target = (attr, len(p.leadership) - 1)
        else:  # piq
            if p.piq[idx] is not None:
                raise ProfileError(f"line {lineno}: duplicate field PIQ{idx + 1}")
            p.piq[idx] = value
            target = (attr, idx)

    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        m = _TAG_RE.match(line)
        if m:
            tag = m.group(1)
            rest = line[m.end():]
            if tag == "GCEA":
                put("gcea", None, rest, lineno)
            elif tag == "GCEO":
                put("gceo", None, rest, lineno)
            elif tag == "Leadership":
                put("leadership", None, rest, lineno)
            elif tag == "Analysis":
                put("analysis", None, rest, lineno)
            else:
                put("piq", int(m.group(2)) - 1, rest, lineno)
        elif line.startswith("Id:"):
            if p.id:
                raise ProfileError(f"line {lineno}: duplicate Id")
            p.id = line[len("Id:"):].strip()
            target = None
        elif line.startswith("OfferType:"):
            raw = line[len("OfferType:"):].strip()
            if raw not in _OFFER_VALUE:
                raise ProfileError(
                    f"line {lineno}: OfferType must be 'Offered' or 'Not Offered', got {raw!r}"
                )
            p.offer = _OFFER_VALUE[raw]
            target = None
        elif line.startswith("Analysis:"):
            rest = line[len("Analysis:"):]
            put("analysis", None, rest[1:] if rest.startswith(" ") else rest, lineno)
        else:
            if target is None:
                raise ProfileError(f"line {lineno}: content before any field tag: {line!r}")
            attr, idx = target
            if attr == "leadership":
                p.leadership[idx] += "\n" + line
            elif attr == "piq":
                p.piq[idx] += "\n" + line
            else:
                setattr(p, attr, getattr(p, attr) + "\n" + line)
    if not p.id:
        raise ProfileError("record has no Id line")
    return p


def format_profile(p):
    """Render the tagged-block form; parse_profile(format_profile(p)) == p
    as long as no content line itself starts a field."""
    lines = [f"Id: {p.id}"]
    if p.gcea is not None:
        lines.append(f"[GCEA]: {p.gcea}")
    if p.gceo is not None:
        lines.append(f"[GCEO]: {p.gceo}")
    for entry in p.leadership:
        lines.append(f"[Leadership]: {entry}")
    for i, ans in enumerate(p.piq):
        if ans is not None:
            lines.append(f"[PIQ{i + 1}]: {ans}")
    if p.offer is not None:
        lines.append(f"OfferType: {OFFER_TEXT[p.offer]}")
    if p.analysis is not None:
        lines.append(f"Analysis: {p.analysis}")
    return "\n".join(lines)


def profile_to_json(p):
    return {
        "id": p.id,
        "gcea": p.gcea,
        "gceo": p.gceo,
        "leadership": list(p.leadership),
        "piq": list(p.piq),
        "offer": OFFER_TEXT.get(p.offer),
        "analysis": p.analysis,
    }


def profile_from_json(obj):
    piq = list(obj.get("piq") or [])
    if len(piq) != PIQ_SLOTS:
        piq = (piq + [None] * PIQ_SLOTS)[:PIQ_SLOTS]
    offer = obj.get("offer")
    if offer is not None:
        if offer not in _OFFER_VALUE:
            raise ProfileError(f"profile {obj.get('id')!r}: bad offer value {offer!r}")
        offer = _OFFER_VALUE[offer]
    return Profile(
        id=str(obj["id"]),
        gcea=obj.get("gcea"),
        gceo=obj.get("gceo"),
        leadership=list(obj.get("leadership") or []),
        piq=piq,
        offer=offer,
        analysis=obj.get("analysis"),
    )


def save_profiles(path, profiles, manifest=None):
    with open(path, "w", encoding="utf-8") as fh:
        if manifest:
            fh.write(json.dumps({"_manifest": manifest}) + "\n")
        for p in profiles:
            fh.write(json.dumps(profile_to_json(p), ensure_ascii=True) + "\n")


def load_profiles(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ProfileError(f"{path}:{lineno}: bad JSON: {e}") from None
            if "_manifest" in obj:
                continue
            if "id" not in obj:
                raise ProfileError(f"{path}:{lineno}: record has no id")
            out.append(profile_from_json(obj))
    return out


def impute_missing(profiles):
    """Replace every absent text field with the literal string 'NaN'.

    Matches how the source data handles unanswered sections: the model sees
    the marker token instead of an empty field.  Returns new Profile objects.
    """
    out = []
    for p in profiles:
        out.append(
            replace(
                p,
                gcea=p.gcea if p.gcea else MISSING,
                gceo=p.gceo if p.gceo else MISSING,
                leadership=list(p.leadership) if p.leadership else [MISSING],
                piq=[a if a else MISSING for a in p.piq],
            )
        )
    return out


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list

    def __iter__(self):
        return iter((self.train, self.val, self.test))


def stratified_split(profiles, ratios=(0.90, 0.05, 0.05), seed=0):
    """Class-stratified train/val/test split.

    Per class: seeded shuffle, then round(n * ratio) members to test and val
    with the remainder in train, so each part's positive proportion stays
    within one item of the global one.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    by_class = {0: [], 1: []}
    for p in profiles:
        if p.offer is None:
            raise ValueError(f"profile {p.id} is unlabeled; stratified split needs labels")
        by_class[p.offer].append(p)
    for cls, members in by_class.items():
        if len(members) < 3:
            raise ValueError(f"class {cls} has {len(members)} members, need at least 3")
    rng = random.Random(seed)
    parts = ([], [], [])
    for cls in (0, 1):
        members = by_class[cls][:]
        rng.shuffle(members)
        n = len(members)
        n_test = round(n * ratios[2])
        n_val = round(n * ratios[1])
        if n_test + n_val > n:
            raise ValueError("split ratios leave no training data for a class")
        parts[2].extend(members[:n_test])
        parts[1].extend(members[n_test:n_test + n_val])
        parts[0].extend(members[n_test + n_val:])
    for part in parts:
        rng.shuffle(part)
    return DatasetSplit(*parts)


DECISION_COLUMNS = ("SL", "AR", "SR", "DO", "SO", "Adm")


@dataclass
class DecisionRecord:
    """One row of the decision table used by the correlation study."""
    id: str
    values: dict

    def column(self, name):
        return self.values[name]


def write_decision_csv(path, records, manifest=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if manifest:
            fh.write(f"# {manifest}\n")
        w = csv.writer(fh)
        w.writerow(("id",) + DECISION_COLUMNS)
        for r in records:
            w.writerow([r.id] + [repr(float(r.values[c])) for c in DECISION_COLUMNS])


def read_decision_csv(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        rows = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader, None)
    if header is None or tuple(header) != ("id",) + DECISION_COLUMNS:
        raise ValueError(f"{path}: expected header id,{','.join(DECISION_COLUMNS)}")
    for row in reader:
        if len(row) != 1 + len(DECISION_COLUMNS):
            raise ValueError(f"{path}: row with {len(row)} columns: {row!r}")
        try:
            vals = {c: float(v) for c, v in zip(DECISION_COLUMNS, row[1:])}
        except ValueError:
            raise ValueError(f"{path}: non-numeric value in row {row!r}") from None
        records.append(DecisionRecord(id=row[0], values=vals))
    return records
