"""Shortlist-Analyze-Recommend workflow.

Stage gating is strict: a profile is shortlisted iff P_s > tau, and the
final decision is 1 iff additionally P_r > delta.  Analysis and P_r exist
only for shortlisted profiles.  Each outcome carries an ordered trace of
stage records (input digest, output, elapsed ms); analyze failures produce
a failed outcome with the trace intact instead of aborting the batch.
"""

import copy
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .analysis import AnalysisError, GenerationParams, analyze, build_analysis_prompt
from .profiles import DecisionRecord, format_profile


@dataclass
class WorkflowConfig:
    tau: float = 0.5
    delta: float = 0.5
    client: str = "mock"
    generation: GenerationParams = field(default_factory=GenerationParams)

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")


@dataclass
class SarModels:
    shortlister: object  # 4-field classifier
    recommender: object  # 5-field classifier, analysis in the extra slot


@dataclass
class SarOutcome:
    id: str
    p_s: float
    shortlisted: bool
    analysis: str | None
    p_r: float | None
    decision: int
    trace: list
    error: str | None = None

    def to_json(self):
        out = {"id": self.id, "P_s": self.p_s, "shortlisted": self.shortlisted,
               "decision": self.decision, "trace": self.trace}
        if self.analysis is not None:
            out["analysis"] = self.analysis
        if self.p_r is not None:
            out["P_r"] = self.p_r
        if self.error is not None:
            out["error"] = self.error
        return out

    @classmethod
    def from_json(cls, obj):
        return cls(id=obj["id"], p_s=obj["P_s"], shortlisted=obj["shortlisted"],
                   analysis=obj.get("analysis"), p_r=obj.get("P_r"),
                   decision=obj["decision"], trace=obj.get("trace", []),
                   error=obj.get("error"))


def _digest(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def shortlist(profile, model_s, tau):
    """First gate: (P_s, P_s > tau).  Equality does not pass."""
    p_s = float(model_s.predict_proba([profile])[0])
    return p_s, p_s > tau


def recommend(profile, analysis_text, model_r, delta):
    """Second gate score: P_r from the profile plus its analysis text."""
    q = copy.deepcopy(profile)
    q.analysis = analysis_text
    p_r = float(model_r.predict_proba([q])[0])
    return p_r, p_r > delta


def run_sar(profile, models, wcfg, client, clock=time.perf_counter):
    trace = []

    def record(stage, input_text, output):
        trace.append({"stage": stage, "input_sha256": _digest(input_text),
                      "output": output, "ms": round((clock() - t0) * 1000.0, 3)})

    t0 = clock()
    p_s, listed = shortlist(profile, models.shortlister, wcfg.tau)
    record("shortlist", format_profile(profile), p_s)

    if not listed:
        return SarOutcome(id=profile.id, p_s=p_s, shortlisted=False, analysis=None,
                          p_r=None, decision=0, trace=trace)

    t0 = clock()
    prompt = build_analysis_prompt(profile)
    try:
        text = analyze(profile, client, wcfg.generation)
    except AnalysisError as e:
        record("analyze", prompt, None)
        return SarOutcome(id=profile.id, p_s=p_s, shortlisted=True, analysis=None,
                          p_r=None, decision=0, trace=trace, error=str(e))
    record("analyze", prompt, _digest(text))

    t0 = clock()
    p_r, recommended = recommend(profile, text, models.recommender, wcfg.delta)
    record("recommend", format_profile(profile) + "\n" + text, p_r)

    return SarOutcome(id=profile.id, p_s=p_s, shortlisted=True, analysis=text,
                      p_r=p_r, decision=int(recommended), trace=trace)


def run_batch(profiles, models, wcfg, client, workers=0, clock=time.perf_counter):
    """Run the workflow over a batch; outcomes keep the input order.

    workers > 1 fans profiles across a thread pool (models are read-only;
    the client is the only thing doing external I/O).  The summary compares
    decisions to labels whenever every profile carries one.
    """
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(
                lambda p: run_sar(p, models, wcfg, client, clock), profiles))
    else:
        outcomes = [run_sar(p, models, wcfg, client, clock) for p in profiles]

    n = len(outcomes)
    ok = [o for o in outcomes if o.error is None]
    summary = {
        "n": n,
        "errors": n - len(ok),
        "shortlist_rate": (sum(o.shortlisted for o in ok) / n) if n else 0.0,
        "offer_rate": (sum(o.decision for o in ok) / n) if n else 0.0,
    }
    labels = [p.offer for p in profiles]
    if n and all(y is not None for y in labels):
        from .evaluate import metrics
        preds = [o.decision for o in outcomes]
        summary["metrics"] = metrics(preds, labels).to_json()
    return outcomes, summary


def write_outcomes(path, outcomes, manifest=None):
    with open(path, "w", encoding="utf-8") as fh:
        if manifest:
            fh.write(json.dumps({"_manifest": manifest}) + "\n")
        for o in outcomes:
            fh.write(json.dumps(o.to_json(), sort_keys=True) + "\n")


def read_outcomes(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "_manifest" in obj:
                continue
            out.append(SarOutcome.from_json(obj))
    return out


def outcomes_to_decisions(outcomes, labels, wcfg):
    """Bind workflow scores to the six decision columns.

    SL/AR are the per-gate binaries, SR their conjunction (the final
    decision), DO/SO the raw stage probabilities, Adm the admission label.
    Stages that never ran contribute 0; a missing label becomes NaN.
    """
    rows = []
    for o in outcomes:
        y = labels.get(o.id) if isinstance(labels, dict) else None
        ar = 1.0 if (o.p_r is not None and o.p_r > wcfg.delta) else 0.0
        rows.append(DecisionRecord(id=o.id, values={
            "SL": 1.0 if o.shortlisted else 0.0,
            "AR": ar,
            "SR": float(o.decision),
            "DO": float(o.p_s),
            "SO": float(o.p_r) if o.p_r is not None else 0.0,
            "Adm": float(y) if y is not None else math.nan,
        }))
    return rows
