"""Leaderboard-style scoring of prediction files against ground truth.

Question routing (configurable, one route per question):

* ``accuracy`` -- multiple-choice questions, detected by the literal
  marker "Please select the correct answer" in the question text.
* ``match``    -- questions whose ground-truth answer contains key-object
  tags; scored by greedy center-point matching within a distance
  threshold on the normalized composite grid.
* ``language`` -- everything else; scored with corpus BLEU-1..4, ROUGE-L,
  CIDEr, and a 0-100 judge (deterministic token-F1 stub or external HTTP).

Exact metric definitions (shared tokenizer, BLEU totals, CIDEr idf
convention) are documented in ``docs/metrics.md``; the test suite holds
independent brute-force implementations of each formula.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .tags import parse_tags, parse_tags_lenient

log = logging.getLogger(__name__)

MC_MARKER = "Please select the correct answer"
DEFAULT_MATCH_THRESHOLD = 16.0
ROUGE_BETA = 1.2
BLEU_MAX_N = 4
CIDER_MAX_N = 4
CIDER_SCALE = 10.0

_WORD_RE = re.compile(r"\w+|[^\w\s]")
_OPTION_RE = re.compile(r"\s*([A-D])\.\s*(.*)\s*$", re.DOTALL)
_LETTER_RE = re.compile(r"\b([A-D])\b")


class MetricInputError(ValueError):
    pass


class WeightError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, detach punctuation, split on whitespace.

    Punctuation characters become single-character tokens; runs of word
    characters stay together ("Going ahead." -> ["going", "ahead", "."]).
    """
    return _WORD_RE.findall(text.lower())


def _content_tokens(text: str) -> list[str]:
    return [t for t in tokenize(text) if any(ch.isalnum() for ch in t)]


# ---------------------------------------------------------------------------
# Accuracy (multiple choice)


def accuracy_score(pred: str, gt: str) -> int | None:
    """1 if the prediction names the ground-truth option, else 0.

    The ground truth must look like ``"<LETTER>. <text>"``; otherwise the
    question cannot be scored as multiple choice and None is returned
    (callers count such rows separately). The predicted letter is the
    first standalone A-D token; lacking one, the prediction matches if
    its content tokens equal the option text's content tokens.
    """
    m = _OPTION_RE.match(gt)
    if not m:
        return None
    letter, option_text = m.group(1), m.group(2)
    pm = _LETTER_RE.search(pred)
    if pm:
        return int(pm.group(1) == letter)
    return int(_content_tokens(pred) == _content_tokens(option_text))


# ---------------------------------------------------------------------------
# BLEU


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_pair_counts(hyp_tokens: list[str], ref_tokens: list[str],
                     max_n: int = BLEU_MAX_N) -> dict:
    """Clipped/total n-gram counts and lengths for one hypothesis."""
    correct = []
    guess = []
    for k in range(1, max_n + 1):
        h = _ngram_counts(hyp_tokens, k)
        r = _ngram_counts(ref_tokens, k)
        correct.append(sum(min(c, r[g]) for g, c in h.items()))
        guess.append(sum(h.values()))
    return {"correct": correct, "guess": guess,
            "hyp_len": len(hyp_tokens), "ref_len": len(ref_tokens)}


def bleu_from_totals(correct: list[int], guess: list[int],
                     hyp_len: int, ref_len: int, n: int) -> float:
    """Corpus BLEU-n from summed counts: geometric mean of clipped
    precisions over orders 1..n with brevity penalty exp(1 - r/c) when
    c < r. Any zero precision gives 0."""
    precisions = []
    for k in range(n):
        if guess[k] == 0 or correct[k] == 0:
            return 0.0
        precisions.append(correct[k] / guess[k])
    score = math.exp(sum(math.log(p) for p in precisions) / n)
    if hyp_len == 0:
        return 0.0
    if hyp_len < ref_len:
        score *= math.exp(1.0 - ref_len / hyp_len)
    return score


def bleu_n(hyps: list[str], refs: list[str], n: int) -> float:
    """Corpus-level BLEU-n with a single reference per hypothesis."""
    if not hyps or len(hyps) != len(refs):
        raise MetricInputError(
            f"need equal-length non-empty corpora, got {len(hyps)}/{len(refs)}")
    if not 1 <= n <= BLEU_MAX_N:
        raise MetricInputError(f"n must be in 1..{BLEU_MAX_N}, got {n}")
    totals = {"correct": [0] * BLEU_MAX_N, "guess": [0] * BLEU_MAX_N,
              "hyp_len": 0, "ref_len": 0}
    for hyp, ref in zip(hyps, refs):
        counts = bleu_pair_counts(tokenize(hyp), tokenize(ref))
        for k in range(BLEU_MAX_N):
            totals["correct"][k] += counts["correct"][k]
            totals["guess"][k] += counts["guess"][k]
        totals["hyp_len"] += counts["hyp_len"]
        totals["ref_len"] += counts["ref_len"]
    return bleu_from_totals(totals["correct"], totals["guess"],
                            totals["hyp_len"], totals["ref_len"], n)


# ---------------------------------------------------------------------------
# ROUGE-L


def lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hyp: str, ref: str, beta: float = ROUGE_BETA) -> float:
    """LCS F-measure: (1+b^2)PR / (R + b^2 P) with P=LCS/|hyp|, R=LCS/|ref|."""
    h, r = tokenize(hyp), tokenize(ref)
    if not h or not r:
        return 0.0
    lcs = lcs_length(h, r)
    if lcs == 0:
        return 0.0
    p = lcs / len(h)
    rec = lcs / len(r)
    return ((1 + beta ** 2) * p * rec) / (rec + beta ** 2 * p)


# ---------------------------------------------------------------------------
# CIDEr


def _cider_idf(ref_token_lists: list[list[str]], max_n: int) -> tuple[list[dict], float]:
    """Per-order idf tables over the reference corpus, plus the default
    idf (log N, i.e. df clamped to 1) for n-grams seen in no reference."""
    n_refs = len(ref_token_lists)
    idf: list[dict] = []
    for k in range(1, max_n + 1):
        df: Counter = Counter()
        for tokens in ref_token_lists:
            df.update(set(_ngram_counts(tokens, k)))
        idf.append({g: math.log(n_refs / max(1.0, df[g])) for g in df})
    return idf, math.log(max(1.0, n_refs))


def _cider_pair(hyp_tokens: list[str], ref_tokens: list[str],
                idf: list[dict], default_idf: float, max_n: int) -> float:
    total = 0.0
    for k in range(1, max_n + 1):
        h = _ngram_counts(hyp_tokens, k)
        r = _ngram_counts(ref_tokens, k)
        table = idf[k - 1]
        hv = {g: c * table.get(g, default_idf) for g, c in h.items()}
        rv = {g: c * table[g] for g, c in r.items()}
        dot = sum(hv[g] * rv[g] for g in hv.keys() & rv.keys())
        nh = math.sqrt(sum(v * v for v in hv.values()))
        nr = math.sqrt(sum(v * v for v in rv.values()))
        if nh > 0 and nr > 0:
            total += dot / (nh * nr)
    return total / max_n * CIDER_SCALE


def cider_rows(hyps: list[str], refs: list[str],
               max_n: int = CIDER_MAX_N) -> list[float]:
    """Per-pair CIDEr: mean over n of tf-idf cosine, scaled by 10."""
    if not hyps or len(hyps) != len(refs):
        raise MetricInputError(
            f"need equal-length non-empty corpora, got {len(hyps)}/{len(refs)}")
    ref_tokens = [tokenize(r) for r in refs]
    hyp_tokens = [tokenize(h) for h in hyps]
    idf, default_idf = _cider_idf(ref_tokens, max_n)
    return [_cider_pair(h, r, idf, default_idf, max_n)
            for h, r in zip(hyp_tokens, ref_tokens)]


def cider(hyps: list[str], refs: list[str]) -> float:
    """Corpus CIDEr: mean of per-pair scores."""
    rows = cider_rows(hyps, refs)
    return sum(rows) / len(rows)


# ---------------------------------------------------------------------------
# Key-object match


def extract_object_points(text: str, strict: bool = False) -> list[tuple[float, float]]:
    """Center points of all tags in ``text`` (box tags use the box center)."""
    tagged = parse_tags(text) if strict else parse_tags_lenient(text)
    points = []
    for tag in tagged.tags:
        g = tag.geometry
        if hasattr(g, "center"):
            points.append(g.center)
        else:
            points.append((g.x, g.y))
    return points


def match_score(pred: str, gt: str,
                threshold: float = DEFAULT_MATCH_THRESHOLD) -> float | None:
    """Percentage of ground-truth objects matched by the prediction.

    Matching is greedy, globally nearest-first: repeatedly pair the
    closest unmatched (gt, pred) point pair within ``threshold`` (in
    normalized grid units). With distinct distances the result is
    independent of input order. Ground truth without tags returns None
    (the row is excluded from the aggregate).
    """
    gt_points = extract_object_points(gt, strict=True)
    if not gt_points:
        return None
    pred_points = extract_object_points(pred, strict=False)
    pairs = sorted(
        (math.dist(g, p), gi, pi)
        for gi, g in enumerate(gt_points)
        for pi, p in enumerate(pred_points)
    )
    used_gt: set[int] = set()
    used_pred: set[int] = set()
    matched = 0
    for d, gi, pi in pairs:
        if d > threshold:
            break
        if gi in used_gt or pi in used_pred:
            continue
        used_gt.add(gi)
        used_pred.add(pi)
        matched += 1
    return 100.0 * matched / len(gt_points)


# ---------------------------------------------------------------------------
# Judge


def token_f1(pred: str, gt: str) -> float:
    """Multiset token F1 in [0, 1]; two empty strings count as equal."""
    p, g = tokenize(pred), tokenize(gt)
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    overlap = sum((Counter(p) & Counter(g)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(p)
    recall = overlap / len(g)
    return 2 * precision * recall / (precision + recall)


class StubJudge:
    """Deterministic lexical-overlap judge: 100 x token F1."""

    def score(self, question: str, gt: str, pred: str) -> float | None:
        return 100.0 * token_f1(pred, gt)


class HttpJudge:
    """POSTs {question, gt, pred} to an endpoint returning {"score": n}.

    Failures are retried; after that the row's judge score is recorded as
    missing and excluded from the aggregate.
    """

    def __init__(self, url: str, timeout: float = 30.0, retries: int = 2):
        self.url = url
        self.timeout = timeout
        self.retries = retries

    def score(self, question: str, gt: str, pred: str) -> float | None:
        import requests
        payload = {"question": question, "gt": gt, "pred": pred}
        for attempt in range(self.retries + 1):
            try:
                resp = requests.post(self.url, json=payload, timeout=self.timeout)
                resp.raise_for_status()
                return float(resp.json()["score"])
            except Exception as e:
                log.warning("judge attempt %d failed: %s", attempt + 1, e)
        return None


# ---------------------------------------------------------------------------
# Corpus scoring


@dataclass(frozen=True)
class GtRow:
    id: str
    question: str
    answer: str


@dataclass(frozen=True)
class ScoreWeights:
    accuracy: float = 0.25
    chatgpt: float = 0.25
    match: float = 0.25
    language: float = 0.25

    def __post_init__(self):
        total = self.accuracy + self.chatgpt + self.match + self.language
        if abs(total - 1.0) > 1e-9:
            raise WeightError(f"weights must sum to 1, got {total}")

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "chatgpt": self.chatgpt,
                "match": self.match, "language": self.language}


def route(question: str, gt_answer: str) -> str:
    if MC_MARKER in question:
        return "accuracy"
    if extract_object_points(gt_answer, strict=False):
        return "match"
    return "language"


def final_score(aggregates: dict, weights: ScoreWeights) -> float:
    """Weighted mix of the four normalized components.

    The language component is the mean of BLEU-4, ROUGE-L, and CIDEr/10;
    accuracy is used as-is and the 0-100 scores are divided by 100.
    """
    language = (aggregates["bleu_4"] + aggregates["rouge_l"]
                + aggregates["cider"] / CIDER_SCALE) / 3.0
    return (weights.accuracy * aggregates["accuracy"]
            + weights.chatgpt * aggregates["chatgpt"] / 100.0
            + weights.match * aggregates["match"] / 100.0
            + weights.language * language)


@dataclass
class MetricReport:
    rows: list[dict]
    aggregates: dict
    weights: dict
    counts: dict

    def to_json_dict(self) -> dict:
        return {"aggregates": self.aggregates, "weights": self.weights,
                "counts": self.counts, "rows": self.rows}

    def render_table(self) -> str:
        order = ["accuracy", "chatgpt", "bleu_1", "bleu_2", "bleu_3", "bleu_4",
                 "rouge_l", "cider", "match", "final"]
        lines = ["metric      value", "-----------------"]
        for key in order:
            lines.append(f"{key:<11} {self.aggregates[key]:.4f}")
        lines.append("")
        lines.append("rows: " + ", ".join(f"{k}={v}" for k, v in self.counts.items()))
        return "\n".join(lines)


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def score_corpus(predictions: dict[str, str], gt_rows: list[GtRow],
                 judge=None, weights: ScoreWeights | None = None,
                 match_threshold: float = DEFAULT_MATCH_THRESHOLD,
                 judge_workers: int = 4) -> MetricReport:
    """Score a prediction set against ground truth rows.

    Every ground-truth row is scored on exactly one route. Missing
    predictions score as empty strings (and are counted). Judge scoring
    applies to language rows only; ``judge=None`` records 0 for all.
    """
    if weights is None:
        weights = ScoreWeights()
    rows: list[dict] = []
    counts = {"total": len(gt_rows), "accuracy": 0, "match": 0, "language": 0,
              "accuracy_excluded": 0, "missing_predictions": 0,
              "judge_missing": 0}

    language_pairs: list[tuple[int, str, str]] = []  # (row index, hyp, ref)
    acc_scores: list[float] = []
    match_scores: list[float] = []

    for gt in gt_rows:
        pred = predictions.get(gt.id)
        if pred is None:
            counts["missing_predictions"] += 1
            pred = ""
        kind = route(gt.question, gt.answer)
        row: dict = {"id": gt.id, "route": kind}
        if kind == "accuracy":
            score = accuracy_score(pred, gt.answer)
            if score is None:
                row["excluded"] = True
                counts["accuracy_excluded"] += 1
            else:
                row["accuracy"] = score
                acc_scores.append(score)
                counts["accuracy"] += 1
        elif kind == "match":
            score = match_score(pred, gt.answer, threshold=match_threshold)
            # routing guarantees gt tags, so score is never None here
            row["match"] = score
            match_scores.append(score)
            counts["match"] += 1
        else:
            language_pairs.append((len(rows), pred, gt.answer))
            counts["language"] += 1
        rows.append(row)

    bleu_totals = {"correct": [0] * BLEU_MAX_N, "guess": [0] * BLEU_MAX_N,
                   "hyp_len": 0, "ref_len": 0}
    rouge_scores: list[float] = []
    cider_scores: list[float] = []
    if language_pairs:
        hyps = [p for _, p, _ in language_pairs]
        refs = [r for _, _, r in language_pairs]
        cider_per_row = cider_rows(hyps, refs)
        for (idx, hyp, ref), cdr in zip(language_pairs, cider_per_row):
            pair = bleu_pair_counts(tokenize(hyp), tokenize(ref))
            rl = rouge_l(hyp, ref)
            rows[idx].update({
                "bleu_correct": pair["correct"], "bleu_guess": pair["guess"],
                "hyp_len": pair["hyp_len"], "ref_len": pair["ref_len"],
                "rouge_l": rl, "cider": cdr,
            })
            for k in range(BLEU_MAX_N):
                bleu_totals["correct"][k] += pair["correct"][k]
                bleu_totals["guess"][k] += pair["guess"][k]
            bleu_totals["hyp_len"] += pair["hyp_len"]
            bleu_totals["ref_len"] += pair["ref_len"]
            rouge_scores.append(rl)
            cider_scores.append(cdr)

        judge_inputs = [(idx, hyp, ref) for idx, hyp, ref in language_pairs]
        if judge is not None:
            questions = {r.id: r.question for r in gt_rows}
            def run_judge(item):
                idx, hyp, ref = item
                return idx, judge.score(questions[rows[idx]["id"]], ref, hyp)
            if isinstance(judge, StubJudge):
                results = [run_judge(item) for item in judge_inputs]
            else:
                with ThreadPoolExecutor(max_workers=judge_workers) as pool:
                    results = list(pool.map(run_judge, judge_inputs))
            for idx, score in results:
                rows[idx]["judge"] = score
                if score is None:
                    counts["judge_missing"] += 1
        else:
            for idx, _, _ in judge_inputs:
                rows[idx]["judge"] = 0.0

    judge_scores = [r["judge"] for r in rows
                    if r.get("judge") is not None and "judge" in r]
    aggregates = {
        "accuracy": _mean(acc_scores),
        "chatgpt": _mean(judge_scores),
        "match": _mean(match_scores),
        "rouge_l": _mean(rouge_scores),
        "cider": _mean(cider_scores),
    }
    for n in range(1, BLEU_MAX_N + 1):
        aggregates[f"bleu_{n}"] = bleu_from_totals(
            bleu_totals["correct"], bleu_totals["guess"],
            bleu_totals["hyp_len"], bleu_totals["ref_len"], n
        ) if counts["language"] else 0.0
    aggregates["final"] = final_score(aggregates, weights)
    # keep a stable key order for serialized reports
    ordered = {k: aggregates[k] for k in
               ["accuracy", "chatgpt", "bleu_1", "bleu_2", "bleu_3", "bleu_4",
                "rouge_l", "cider", "match", "final"]}
    return MetricReport(rows=rows, aggregates=ordered,
                        weights=weights.as_dict(), counts=counts)


# ---------------------------------------------------------------------------
# File loading


def load_predictions(path: str | Path) -> dict[str, str]:
    """Read a predictions JSONL of {"id": ..., "answer": ...}."""
    preds: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rid, answer = str(obj["id"]), str(obj["answer"])
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise MetricInputError(f"{path}: malformed prediction line {lineno}: {e}")
            if rid in preds:
                raise MetricInputError(f"{path}: duplicate prediction id {rid!r} "
                                       f"at line {lineno}")
            preds[rid] = answer
    return preds


def load_ground_truth(path: str | Path) -> list[GtRow]:
    """Read ground truth from a converted records.jsonl or a plain
    {"id", "question", "answer"} JSONL."""
    rows: list[GtRow] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                if "sample_id" in obj:
                    row = GtRow(id=str(obj["sample_id"]),
                                question=str(obj["user_text"]),
                                answer=str(obj["assistant_text"]))
                else:
                    row = GtRow(id=str(obj["id"]),
                                question=str(obj.get("question", "")),
                                answer=str(obj["answer"]))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise MetricInputError(f"{path}: malformed ground-truth line "
                                       f"{lineno}: {e}")
            if row.id in seen:
                raise MetricInputError(f"{path}: duplicate id {row.id!r} at line {lineno}")
            seen.add(row.id)
            rows.append(row)
    return rows
