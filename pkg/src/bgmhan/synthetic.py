"""Synthetic admission profiles with a planted, documented decision rule.

The generator plants three binary signals in the text:

  s1  academic  - GCEA line states a UAS of 85 or above and mostly-A grades
  s2  leadership - at least one senior role (Captain/President/Chairperson)
  s3  essays    - at least two positive keywords across the PIQ answers

and the planted rule is majority vote: label 1 iff at least two signals
fire.  planted_label() evaluates that rule directly from the text, so with
noise 0 it is an exact oracle for the generated labels.  SignalSpec controls
the positive fraction and the label-flip rate.
"""

import random
from dataclasses import dataclass

from .profiles import PIQ_SLOTS, Profile

UAS_THRESHOLD = 85.0
SENIOR_ROLES = ("Captain", "President", "Chairperson")
JUNIOR_ROLES = ("Member", "Treasurer", "Secretary", "Logistics Lead")
POSITIVE_WORDS = ("passionate", "dedicated", "innovative", "curiosity", "initiative")

_SCHOOLS = ("HCI", "RI", "NJC", "VJC", "ACJC", "TJC")
_SUBJECTS = (
    "H1 GENERAL PAPER",
    "H2 MATHEMATICS",
    "H2 PHYSICS",
    "H2 CHEMISTRY",
    "H2 ECONOMICS",
    "H1 PROJECT WORK",
)
_STRONG_GRADES = ("A", "A", "A", "B")
_WEAK_GRADES = ("B", "C", "C", "D", "E")
_O_SUBJECTS = ("ENGLISH", "MATHEMATICS", "HIGHER CHINESE", "PHYSICS", "LITERATURE")
_O_GRADES = ("A1", "A2", "B3", "B4")
_CLUBS = ("Robotics Club", "Debate Society", "Mind Sports Club", "Drama Club",
          "Soccer Team", "Science Society")
_TOPICS = ("robotics", "coding", "mathematics", "community service", "debate",
           "school projects")
_NEUTRAL_OPENERS = (
    "During my time in school I spent many afternoons on {topic}",
    "My interest in {topic} started in secondary school",
    "Working on {topic} taught me how to plan my time",
    "I joined activities around {topic} with my classmates",
)
_NEUTRAL_CLOSERS = (
    "I hope to continue this at university",
    "It shaped how I approach difficult problems",
    "The experience stayed with me",
    "I learned to listen before deciding",
)
_POSITIVE_CLAUSES = (
    "I am {word} about building things that work",
    "Being {word} helped me push the project through",
    "My {word} showed in how I handled setbacks",
)


@dataclass
class SignalSpec:
    """Class balance and label-noise knobs for the generator."""
    balance: float = 0.35
    noise: float = 0.0


def _uas_signal(gcea):
    if not gcea:
        return False
    for part in gcea.replace(";", ",").split(","):
        part = part.strip()
        if part.startswith("UAS:"):
            try:
                return float(part[4:]) >= UAS_THRESHOLD
            except ValueError:
                return False
    return False


def _role_signal(leadership_text):
    return any(role in leadership_text for role in SENIOR_ROLES)


def _essay_signal(piq_text):
    low = piq_text.lower()
    return sum(low.count(w) for w in POSITIVE_WORDS) >= 2


def planted_label(profile):
    """The planted rule, applied to the profile text itself."""
    s1 = _uas_signal(profile.gcea)
    s2 = _role_signal(profile.leadership_text)
    s3 = _essay_signal(profile.piq_text)
    return 1 if (int(s1) + int(s2) + int(s3)) >= 2 else 0


def _pick_signals(rng, positive):
    # majority-of-three patterns consistent with the target label
    if positive:
        options = [(1, 1, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1)]
        weights = [0.4, 0.2, 0.2, 0.2]
    else:
        options = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
        weights = [0.4, 0.2, 0.2, 0.2]
    return rng.choices(options, weights=weights, k=1)[0]


def _make_gcea(rng, strong):
    school = rng.choice(_SCHOOLS)
    uas = rng.choice((88.0, 90.0, 92.5) if strong else (65.0, 70.0, 72.5))
    grades = _STRONG_GRADES if strong else _WEAK_GRADES
    subjects = rng.sample(_SUBJECTS, 4)
    graded = ", ".join(f"{s} {rng.choice(grades)}" for s in subjects)
    return f"School:{school}, UAS:{uas}; Grades:{graded}"


def _make_gceo(rng):
    subjects = rng.sample(_O_SUBJECTS, 3)
    return ", ".join(f"{s} {rng.choice(_O_GRADES)}" for s in subjects)


def _make_leadership(rng, senior):
    n = rng.randint(1, 3)
    roles = [rng.choice(JUNIOR_ROLES) for _ in range(n)]
    if senior:
        roles[rng.randrange(n)] = rng.choice(SENIOR_ROLES)
    clubs = rng.sample(_CLUBS, n)
    return [
        f"{club}, Role:{role}, {rng.randint(1, 4)} years"
        for club, role in zip(clubs, roles)
    ]


def _make_piq(rng, enthusiastic):
    # plant either >= 2 positive keywords or exactly 0; never a near-miss 1,
    # so the essay signal is unambiguous
    slots = []
    word_slots = rng.sample(range(PIQ_SLOTS), rng.randint(2, 3)) if enthusiastic else []
    for i in range(PIQ_SLOTS):
        topic = rng.choice(_TOPICS)
        parts = [rng.choice(_NEUTRAL_OPENERS).format(topic=topic)]
        if i in word_slots:
            word = rng.choice(POSITIVE_WORDS)
            parts.append(rng.choice(_POSITIVE_CLAUSES).format(word=word))
        parts.append(rng.choice(_NEUTRAL_CLOSERS))
        slots.append(". ".join(parts) + ".")
    return slots


def generate_synthetic(n, seed=0, spec=None, missing_rate=0.0):
    """Generate n labeled profiles; labels follow the planted rule exactly,
    then flip with probability spec.noise."""
    if n < 10:
        raise ValueError(f"need at least 10 profiles, asked for {n}")
    spec = spec or SignalSpec()
    rng = random.Random(seed)
    out = []
    for i in range(n):
        want_positive = rng.random() < spec.balance
        s1, s2, s3 = _pick_signals(rng, want_positive)
        p = Profile(
            id=f"synth-{i:05d}",
            gcea=_make_gcea(rng, bool(s1)),
            gceo=_make_gceo(rng),
            leadership=_make_leadership(rng, bool(s2)),
            piq=_make_piq(rng, bool(s3)),
        )
        if missing_rate > 0.0:
            if rng.random() < missing_rate:
                p.gcea = None
            if rng.random() < missing_rate:
                p.gceo = None
            if rng.random() < missing_rate:
                p.leadership = []
            for k in range(PIQ_SLOTS):
                if rng.random() < missing_rate:
                    p.piq[k] = None
        label = planted_label(p)
        if spec.noise > 0.0 and rng.random() < spec.noise:
            label = 1 - label
        p.offer = label
        out.append(p)
    return out
