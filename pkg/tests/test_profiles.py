"""Profile parsing, container IO, splitting, and the synthetic generator."""

import math

import pytest

from bgmhan.profiles import (
    MISSING, PIQ_SLOTS, DECISION_COLUMNS, DecisionRecord, Profile, ProfileError,
    format_profile, impute_missing, load_profiles, parse_profile,
    profile_from_json, profile_to_json, read_decision_csv, save_profiles,
    stratified_split, write_decision_csv,
)
from bgmhan.synthetic import (
    POSITIVE_WORDS, SENIOR_ROLES, SignalSpec, generate_synthetic, planted_label,
)

SAMPLE = """Id: p0001
[GCEA]: School:HCI, UAS:90.0; Grades:H2 MATHEMATICS A, H2 PHYSICS A
[GCEO]: ENGLISH A2, HIGHER CHINESE A1
[Leadership]: Robotics Club, Role:Captain, 2 years
[Leadership]: Debate Society, Role:Member, 1 year
[PIQ1]: I have been building robots since secondary school.
[PIQ3]: Teamwork matters to me.
OfferType: Offered
"""


def test_parse_sample_block():
    p = parse_profile(SAMPLE)
    assert p.id == "p0001"
    assert p.gcea.startswith("School:HCI, UAS:90.0")
    assert len(p.leadership) == 2
    assert p.leadership_text == ("Robotics Club, Role:Captain, 2 years; "
                                 "Debate Society, Role:Member, 1 year")
    assert p.piq[0].startswith("I have been")
    assert p.piq[1] is None
    assert p.piq[2] == "Teamwork matters to me."
    assert p.offer == 1
    assert p.analysis is None


def test_parse_continuation_lines():
    text = "Id: x\n[PIQ1]: first line\nsecond line\n[GCEO]: grades"
    p = parse_profile(text)
    assert p.piq[0] == "first line\nsecond line"
    assert p.gceo == "grades"


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ProfileError, match="line 3: duplicate field gcea"):
        parse_profile("Id: x\n[GCEA]: one\n[GCEA]: two")
    with pytest.raises(ProfileError, match="line 3: duplicate field PIQ2"):
        parse_profile("Id: x\n[PIQ2]: one\n[PIQ2]: two")
    with pytest.raises(ProfileError, match="line 1: content before any field"):
        parse_profile("stray text\nId: x")
    with pytest.raises(ProfileError, match="no Id"):
        parse_profile("[GCEA]: something")
    with pytest.raises(ProfileError, match="OfferType"):
        parse_profile("Id: x\nOfferType: Maybe")
    with pytest.raises(ProfileError, match="duplicate Id"):
        parse_profile("Id: x\nId: y")


def test_format_parse_roundtrip_on_generated():
    for p in generate_synthetic(40, seed=9):
        q = parse_profile(format_profile(p))
        assert q == p


def test_roundtrip_with_analysis_and_label_zero():
    p = Profile(id="z", gcea="a", offer=0, analysis="Looks promising overall.")
    q = parse_profile(format_profile(p))
    assert q == p
    assert "OfferType: Not Offered" in format_profile(p)


def test_json_roundtrip_and_bad_offer():
    p = generate_synthetic(10, seed=1)[0]
    assert profile_from_json(profile_to_json(p)) == p
    with pytest.raises(ProfileError, match="offer"):
        profile_from_json({"id": "x", "offer": "Perhaps"})


def test_jsonl_container_roundtrip(tmp_path):
    profiles = generate_synthetic(25, seed=2)
    path = tmp_path / "p.jsonl"
    save_profiles(path, profiles, manifest="tool=bgmhan test")
    back = load_profiles(path)
    assert back == profiles
    first = path.read_text().splitlines()[0]
    assert "_manifest" in first


def test_jsonl_load_errors(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text("{not json}\n")
    with pytest.raises(ProfileError, match="bad.jsonl:1: bad JSON"):
        load_profiles(path)
    path.write_text('{"gcea": "no id here"}\n')
    with pytest.raises(ProfileError, match="no id"):
        load_profiles(path)


def test_impute_missing_fills_and_copies():
    p = Profile(id="m", gcea=None, gceo="", leadership=[], piq=[None] * PIQ_SLOTS)
    (q,) = impute_missing([p])
    assert q.gcea == MISSING
    assert q.gceo == MISSING
    assert q.leadership == [MISSING]
    assert all(a == MISSING for a in q.piq)
    # original untouched
    assert p.gcea is None
    # already-filled fields pass through
    r = Profile(id="n", gcea="real", leadership=["x"], piq=["a"] + [None] * 4)
    (s,) = impute_missing([r])
    assert s.gcea == "real"
    assert s.leadership == ["x"]
    assert s.piq[0] == "a"


def test_stratified_split_ratios_and_determinism():
    profiles = generate_synthetic(200, seed=4)
    split = stratified_split(profiles, ratios=(0.8, 0.1, 0.1), seed=5)
    assert len(split.train) + len(split.val) + len(split.test) == 200
    pos = sum(p.offer for p in profiles) / 200
    for part in (split.train, split.val, split.test):
        part_pos = sum(p.offer for p in part) / len(part)
        assert abs(part_pos - pos) < 0.08
    again = stratified_split(profiles, ratios=(0.8, 0.1, 0.1), seed=5)
    assert [p.id for p in again.train] == [p.id for p in split.train]
    assert [p.id for p in again.test] == [p.id for p in split.test]
    # no profile in two parts
    ids = [p.id for part in split for p in part]
    assert len(set(ids)) == len(ids)


def test_stratified_split_errors():
    profiles = generate_synthetic(20, seed=6)
    with pytest.raises(ValueError, match="sum to 1"):
        stratified_split(profiles, ratios=(0.5, 0.2, 0.2))
    unlabeled = [Profile(id="u", offer=None)] + profiles
    with pytest.raises(ValueError, match="unlabeled"):
        stratified_split(unlabeled)
    skewed = [Profile(id=f"s{i}", offer=1) for i in range(10)]
    with pytest.raises(ValueError, match="at least 3"):
        stratified_split(skewed)


def test_decision_csv_roundtrip(tmp_path):
    recs = [
        DecisionRecord(id="a", values={c: float(i) for i, c in enumerate(DECISION_COLUMNS)}),
        DecisionRecord(id="b", values={c: 0.123456789 for c in DECISION_COLUMNS}),
        DecisionRecord(id="c", values={**{c: 1.0 for c in DECISION_COLUMNS}, "Adm": math.nan}),
    ]
    path = tmp_path / "d.csv"
    write_decision_csv(path, recs, manifest="tool=bgmhan test")
    back = read_decision_csv(path)
    assert [r.id for r in back] == ["a", "b", "c"]
    assert back[1].values["DO"] == 0.123456789
    assert math.isnan(back[2].values["Adm"])
    assert path.read_text().startswith("# tool=bgmhan test\n")


def test_decision_csv_rejects_wrong_shape(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,SL,AR\nx,1,2\n")
    with pytest.raises(ValueError, match="expected header"):
        read_decision_csv(path)
    path.write_text("id," + ",".join(DECISION_COLUMNS) + "\nx,1,2\n")
    with pytest.raises(ValueError, match="columns"):
        read_decision_csv(path)
    path.write_text("id," + ",".join(DECISION_COLUMNS) + "\nx,a,b,c,d,e,f\n")
    with pytest.raises(ValueError, match="non-numeric"):
        read_decision_csv(path)


# ---------------------------------------------------------------------------
# synthetic generator

def test_labels_follow_planted_rule_when_noiseless():
    for p in generate_synthetic(300, seed=8):
        assert p.offer == planted_label(p)


def test_generator_is_deterministic():
    a = generate_synthetic(50, seed=13)
    b = generate_synthetic(50, seed=13)
    assert a == b
    c = generate_synthetic(50, seed=14)
    assert a != c


def test_balance_and_noise_knobs():
    pos = sum(p.offer for p in generate_synthetic(600, seed=21,
                                                  spec=SignalSpec(balance=0.35)))
    assert 0.25 < pos / 600 < 0.45
    noisy = generate_synthetic(600, seed=21, spec=SignalSpec(noise=0.3))
    flips = sum(p.offer != planted_label(p) for p in noisy)
    assert 0.2 < flips / 600 < 0.4


def test_missing_rate_blanks_fields():
    profiles = generate_synthetic(200, seed=5, missing_rate=0.5)
    assert any(p.gcea is None for p in profiles)
    assert any(not p.leadership for p in profiles)
    assert any(a is None for p in profiles for a in p.piq)
    # labels still follow the rule applied to the post-blanking text
    for p in profiles:
        assert p.offer == planted_label(p)


def test_generator_signal_texture():
    profiles = generate_synthetic(100, seed=30)
    assert len({p.id for p in profiles}) == 100
    some_senior = any(
        any(r in p.leadership_text for r in SENIOR_ROLES) for p in profiles)
    some_keyword = any(
        any(w in p.piq_text.lower() for w in POSITIVE_WORDS) for p in profiles)
    assert some_senior and some_keyword
    with pytest.raises(ValueError, match="at least 10"):
        generate_synthetic(5)
