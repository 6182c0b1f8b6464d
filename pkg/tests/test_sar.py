"""Workflow gating truth table, traces, error isolation, decision binding."""

import hashlib
import itertools
import math

import numpy as np
import pytest

from bgmhan.analysis import AnalysisError, GenerationParams, MockAnalysisClient
from bgmhan.model import BgmHanModel, ModelConfig
from bgmhan.profiles import DECISION_COLUMNS, format_profile
from bgmhan.sar import (
    SarModels, SarOutcome, WorkflowConfig, outcomes_to_decisions, read_outcomes,
    recommend, run_batch, run_sar, shortlist, write_outcomes,
)

from conftest import make_short_profile


class StubModel:
    """predict_proba keyed on profile id; order-preserving."""

    def __init__(self, probs, expect_analysis=False):
        self.probs = probs
        self.expect_analysis = expect_analysis

    def predict_proba(self, profiles):
        if self.expect_analysis:
            assert all(p.analysis for p in profiles)
        return np.array([self.probs[p.id] for p in profiles], dtype=np.float64)


def stub_models(p_s, p_r):
    return SarModels(shortlister=StubModel(p_s),
                     recommender=StubModel(p_r, expect_analysis=True))


def test_workflow_config_validation():
    cfg = WorkflowConfig()
    assert (cfg.tau, cfg.delta, cfg.client) == (0.5, 0.5, "mock")
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError, match="tau"):
            WorkflowConfig(tau=bad)
    with pytest.raises(ValueError, match="delta"):
        WorkflowConfig(delta=1.0)


def test_gates_are_strict_at_the_threshold():
    p = make_short_profile(0)
    m = StubModel({p.id: 0.5})
    assert shortlist(p, m, 0.5) == (0.5, False)
    assert shortlist(p, m, 0.499) == (0.5, True)
    p_r, rec = recommend(p, "text", StubModel({p.id: 0.5}, expect_analysis=True), 0.5)
    assert (p_r, rec) == (0.5, False)
    assert p.analysis is None  # recommend works on a copy


def test_decision_truth_table():
    wcfg = WorkflowConfig(tau=0.5, delta=0.5)
    client = MockAnalysisClient()
    for p_s, p_r in itertools.product((0.3, 0.5, 0.7), repeat=2):
        p = make_short_profile(1)
        models = stub_models({p.id: p_s}, {p.id: p_r})
        o = run_sar(p, models, wcfg, client)
        assert o.shortlisted == (p_s > 0.5)
        assert o.decision == int(p_s > 0.5 and p_r > 0.5)
        if o.shortlisted:
            assert o.analysis is not None and o.p_r == p_r
            assert len(o.trace) == 3
        else:
            assert o.analysis is None and o.p_r is None
            assert len(o.trace) == 1
        assert o.error is None


def test_trace_records_digests_outputs_and_clock():
    ticks = iter([0.0, 0.0005, 1.0, 1.0015, 2.0, 2.00225])
    p = make_short_profile(2)
    models = stub_models({p.id: 0.9}, {p.id: 0.8})
    client = MockAnalysisClient()
    o = run_sar(p, models, WorkflowConfig(), client, clock=lambda: next(ticks))

    stages = [t["stage"] for t in o.trace]
    assert stages == ["shortlist", "analyze", "recommend"]
    assert [t["ms"] for t in o.trace] == [0.5, 1.5, 2.25]
    for t in o.trace:
        assert len(t["input_sha256"]) == 16
        assert set(t["input_sha256"]) <= set("0123456789abcdef")
    expect = hashlib.sha256(format_profile(p).encode()).hexdigest()[:16]
    assert o.trace[0]["input_sha256"] == expect
    assert o.trace[0]["output"] == 0.9
    assert o.trace[1]["output"] == hashlib.sha256(o.analysis.encode()).hexdigest()[:16]
    assert o.trace[2]["output"] == 0.8


class FailingClient:
    def generate(self, prompt, params=GenerationParams()):
        raise AnalysisError("generator offline")


def test_analyze_failure_isolated_per_profile():
    profiles = [make_short_profile(i, offer=i % 2) for i in range(4)]
    p_s = {p.id: (0.9 if i % 2 == 0 else 0.2) for i, p in enumerate(profiles)}
    models = stub_models(p_s, {p.id: 0.9 for p in profiles})
    outcomes, summary = run_batch(profiles, models, WorkflowConfig(),
                                  FailingClient())
    assert [o.id for o in outcomes] == [p.id for p in profiles]
    for i, o in enumerate(outcomes):
        if i % 2 == 0:  # shortlisted, then the client blew up
            assert o.error is not None and "generator offline" in o.error
            assert p_s[o.id] == 0.9 and o.shortlisted
            assert o.decision == 0 and o.analysis is None and o.p_r is None
            assert [t["stage"] for t in o.trace] == ["shortlist", "analyze"]
            assert o.trace[1]["output"] is None
        else:
            assert o.error is None and not o.shortlisted
    assert summary["errors"] == 2


def test_run_batch_parallel_matches_serial():
    profiles = [make_short_profile(i, offer=i % 2) for i in range(8)]
    p_s = {p.id: 0.3 + 0.08 * i for i, p in enumerate(profiles)}
    p_r = {p.id: 0.9 - 0.07 * i for i, p in enumerate(profiles)}
    models = stub_models(p_s, p_r)
    wcfg = WorkflowConfig(tau=0.5, delta=0.5)
    clock = lambda: 0.0
    serial, sum_a = run_batch(profiles, models, wcfg, MockAnalysisClient(),
                              workers=0, clock=clock)
    threaded, sum_b = run_batch(profiles, models, wcfg, MockAnalysisClient(),
                                workers=4, clock=clock)
    assert [o.to_json() for o in serial] == [o.to_json() for o in threaded]
    assert sum_a == sum_b
    assert [o.id for o in threaded] == [p.id for p in profiles]


def test_summary_rates_and_metrics_presence():
    profiles = [make_short_profile(i, offer=i % 2) for i in range(6)]
    p_s = {p.id: (0.8 if i < 4 else 0.2) for i, p in enumerate(profiles)}
    p_r = {p.id: (0.9 if i < 2 else 0.1) for i, p in enumerate(profiles)}
    models = stub_models(p_s, p_r)
    _, summary = run_batch(profiles, models, WorkflowConfig(), MockAnalysisClient())
    assert summary["n"] == 6 and summary["errors"] == 0
    assert summary["shortlist_rate"] == 4 / 6
    assert summary["offer_rate"] == 2 / 6
    assert "metrics" in summary
    assert 0.0 <= summary["metrics"]["accuracy"] <= 1.0

    profiles[3] = make_short_profile(3, offer=None)
    p_s[profiles[3].id] = 0.8
    p_r[profiles[3].id] = 0.1
    _, summary = run_batch(profiles, models, WorkflowConfig(), MockAnalysisClient())
    assert "metrics" not in summary

    _, empty = run_batch([], models, WorkflowConfig(), MockAnalysisClient())
    assert empty == {"n": 0, "errors": 0, "shortlist_rate": 0.0, "offer_rate": 0.0}


def test_outcomes_jsonl_roundtrip(tmp_path):
    profiles = [make_short_profile(i) for i in range(3)]
    p_s = {p.id: 0.3 + 0.3 * i for i, p in enumerate(profiles)}
    p_r = {p.id: 0.7 for p in profiles}
    outcomes, _ = run_batch(profiles, stub_models(p_s, p_r), WorkflowConfig(),
                            MockAnalysisClient(), clock=lambda: 0.0)
    path = tmp_path / "out.jsonl"
    write_outcomes(path, outcomes, manifest="tool=t")
    first = path.read_text().splitlines()[0]
    assert first == '{"_manifest": "tool=t"}'
    back = read_outcomes(path)
    assert [o.to_json() for o in back] == [o.to_json() for o in outcomes]


def test_outcome_json_omits_absent_stages():
    o = SarOutcome(id="x", p_s=0.2, shortlisted=False, analysis=None,
                   p_r=None, decision=0, trace=[])
    js = o.to_json()
    assert "analysis" not in js and "P_r" not in js and "error" not in js
    assert SarOutcome.from_json(js) == o


def test_outcomes_to_decisions_binding():
    outcomes = [
        SarOutcome(id="a", p_s=0.9, shortlisted=True, analysis="t", p_r=0.8,
                   decision=1, trace=[]),
        SarOutcome(id="b", p_s=0.2, shortlisted=False, analysis=None, p_r=None,
                   decision=0, trace=[]),
        SarOutcome(id="c", p_s=0.9, shortlisted=True, analysis="t", p_r=0.5,
                   decision=0, trace=[]),
    ]
    rows = outcomes_to_decisions(outcomes, {"a": 1, "c": 0}, WorkflowConfig())
    assert tuple(rows[0].values) == DECISION_COLUMNS
    assert rows[0].values == {"SL": 1.0, "AR": 1.0, "SR": 1.0, "DO": 0.9,
                              "SO": 0.8, "Adm": 1.0}
    b = rows[1].values
    assert (b["SL"], b["AR"], b["SR"], b["SO"]) == (0.0, 0.0, 0.0, 0.0)
    assert math.isnan(b["Adm"])  # no label for b
    c = rows[2].values
    assert c["AR"] == 0.0  # p_r == delta does not recommend
    assert c["Adm"] == 0.0


def test_real_models_run_without_violations(vocab, short_profiles):
    cfg4 = ModelConfig.desk(dim=16, hidden=32, heads=2, vocab_size=vocab.size)
    cfg5 = ModelConfig.desk(dim=16, hidden=32, heads=2, fields=5,
                            vocab_size=vocab.size)
    models = SarModels(shortlister=BgmHanModel(cfg4, vocab, seed=1),
                       recommender=BgmHanModel(cfg5, vocab, seed=2))
    wcfg = WorkflowConfig(tau=0.45, delta=0.45)
    outcomes, summary = run_batch(short_profiles, models, wcfg,
                                  MockAnalysisClient())
    assert summary["errors"] == 0
    for o in outcomes:
        assert 0.0 < o.p_s < 1.0
        assert o.shortlisted == (o.p_s > wcfg.tau)
        if o.shortlisted:
            assert o.analysis is not None and o.p_r is not None
            assert o.decision == int(o.p_r > wcfg.delta)
        else:
            assert o.analysis is None and o.p_r is None and o.decision == 0
