import http.server
import json
import math
import random
import threading

import pytest

from driveforge import metrics
from driveforge.metrics import (DEFAULT_MATCH_THRESHOLD, GtRow, HttpJudge,
                                MetricInputError, ScoreWeights, StubJudge,
                                WeightError, accuracy_score, bleu_n, cider,
                                cider_rows, final_score, load_ground_truth,
                                load_predictions, lcs_length, match_score,
                                rouge_l, score_corpus, token_f1, tokenize)
from oracles import (bleu_oracle, cider_oracle, lcs_oracle, match_oracle,
                     optimal_match_count, rouge_oracle, tokenize_oracle)

WORDS = ["the", "cat", "sat", "on", "mat", "a", "dog", "ran", "fast", "red",
         "car", "turns", "left", "lane", "stop"]


def random_sentence(rng, max_len=8):
    return " ".join(rng.choice(WORDS) for _ in range(rng.randrange(0, max_len)))


def random_corpus(rng, size):
    hyps = [random_sentence(rng) for _ in range(size)]
    refs = [random_sentence(rng) for _ in range(size)]
    return hyps, refs


class TestTokenize:
    # golden fixtures pin the shared tokenizer used by every text metric
    GOLDEN = [
        ("Going ahead.", ["going", "ahead", "."]),
        ("A. Going ahead.", ["a", ".", "going", "ahead", "."]),
        ("don't stop, wait!", ["don", "'", "t", "stop", ",", "wait", "!"]),
        ("x=1088.3", ["x", "=", "1088", ".", "3"]),
        ("", []),
        ("  spaced   out  ", ["spaced", "out"]),
        ("CAM_FRONT view", ["cam_front", "view"]),
    ]

    @pytest.mark.parametrize("text,expected", GOLDEN)
    def test_golden(self, text, expected):
        assert tokenize(text) == expected

    def test_matches_char_level_oracle(self):
        rng = random.Random(1)
        for _ in range(200):
            text = " ".join(rng.choice(WORDS + ["a,b", "c.d!", "(e)"])
                            for _ in range(rng.randrange(0, 10)))
            assert tokenize(text) == tokenize_oracle(text)


class TestAccuracy:
    def test_exact_match(self):
        assert accuracy_score("A. Going ahead.", "A. Going ahead.") == 1

    def test_wrong_letter(self):
        assert accuracy_score("B", "A. Going ahead.") == 0

    def test_text_fallback(self):
        assert accuracy_score("Going ahead", "A. Going ahead.") == 1

    def test_letter_in_sentence(self):
        assert accuracy_score("The answer is B.", "B. Stopped.") == 1

    def test_non_option_gt_excluded(self):
        assert accuracy_score("anything", "Not an option answer") is None


class TestBleu:
    def test_identity(self):
        assert bleu_n(["the cat sat"], ["the cat sat"], 1) == 1.0
        assert bleu_n(["the cat sat"], ["the cat sat"], 3) == 1.0

    def test_clipping_hand_case(self):
        # p1 = 1/3 after clipping, c=3 > r=2 so no brevity penalty
        score = bleu_n(["the the the"], ["the cat"], 1)
        assert score == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert round(score, 4) == 0.3333

    def test_brevity_penalty(self):
        # hyp shorter than ref: BP = exp(1 - r/c) = exp(1 - 3/2)
        score = bleu_n(["the cat"], ["the cat sat"], 1)
        assert score == pytest.approx(math.exp(1 - 3 / 2), abs=1e-12)

    def test_empty_corpus_is_error(self):
        with pytest.raises(MetricInputError):
            bleu_n([], [], 1)

    def test_empty_hypothesis_contributes_zero(self):
        score = bleu_n(["", "the cat"], ["the dog", "the cat"], 1)
        oracle = bleu_oracle(["", "the cat"], ["the dog", "the cat"], 1)
        assert score == pytest.approx(oracle, abs=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_against_oracle(self, n):
        rng = random.Random(100 + n)
        for _ in range(60):
            hyps, refs = random_corpus(rng, rng.randrange(1, 5))
            assert bleu_n(hyps, refs, n) == \
                pytest.approx(bleu_oracle(hyps, refs, n), abs=1e-9)

    def test_clip_monotone_in_reference(self):
        rng = random.Random(7)
        for _ in range(50):
            hyp = random_sentence(rng, 6)
            ref = random_sentence(rng, 6)
            base = metrics.bleu_pair_counts(tokenize(hyp), tokenize(ref))
            extended = metrics.bleu_pair_counts(tokenize(hyp),
                                                tokenize(ref + " extra"))
            for k in range(4):
                assert extended["correct"][k] >= base["correct"][k]


class TestRougeL:
    def test_identity(self):
        assert rouge_l("same words here", "same words here") == 1.0

    def test_hand_case(self):
        # LCS=3, P=0.75, R=1.0 with beta=1.2
        p, r, beta = 0.75, 1.0, 1.2
        expected = (1 + beta ** 2) * p * r / (r + beta ** 2 * p)
        score = rouge_l("a b c d", "a c d")
        assert score == pytest.approx(expected, abs=1e-12)
        assert round(score, 4) == 0.8798

    def test_empty_strings(self):
        assert rouge_l("", "") == 0.0
        assert rouge_l("a", "") == 0.0

    def test_lcs_against_full_table_oracle(self):
        rng = random.Random(8)
        for _ in range(200):
            a = [rng.choice("abc") for _ in range(rng.randrange(0, 12))]
            b = [rng.choice("abc") for _ in range(rng.randrange(0, 12))]
            assert lcs_length(a, b) == lcs_oracle(a, b)

    def test_against_oracle(self):
        rng = random.Random(9)
        for _ in range(200):
            hyp, ref = random_sentence(rng), random_sentence(rng)
            assert rouge_l(hyp, ref) == pytest.approx(rouge_oracle(hyp, ref),
                                                      abs=1e-9)


class TestCider:
    def test_zero_overlap(self):
        scores = cider_rows(["dog ran fast", "cat sat"],
                            ["red car turns", "stop lane left"])
        assert scores[0] == 0.0

    def test_identity_on_distinct_corpus(self):
        refs = ["the silver truck is parked near the loading dock",
                "a red car turns left at the next lane"]
        assert cider(refs, refs) == pytest.approx(10.0, abs=1e-9)

    def test_three_pair_corpus_against_oracle(self):
        hyps = ["the cat sat on the mat", "a dog ran fast", "red car turns left"]
        refs = ["the cat sat on a mat", "the dog ran", "red car turns right"]
        expected, expected_rows = cider_oracle(hyps, refs)
        assert cider_rows(hyps, refs) == pytest.approx(expected_rows, abs=1e-9)
        assert cider(hyps, refs) == pytest.approx(expected, abs=1e-9)

    def test_against_oracle_random(self):
        rng = random.Random(10)
        for _ in range(40):
            hyps, refs = random_corpus(rng, rng.randrange(1, 5))
            expected, expected_rows = cider_oracle(hyps, refs)
            assert cider_rows(hyps, refs) == pytest.approx(expected_rows, abs=1e-9)

    def test_idf_scale_invariance(self):
        # cosine similarity is unchanged when every idf doubles
        tokens_h = tokenize("the cat sat on the mat")
        tokens_r = tokenize("the cat sat on a mat")
        idf, default = metrics._cider_idf([tokens_r, tokenize("a dog ran")], 4)
        doubled = [{g: 2 * v for g, v in table.items()} for table in idf]
        a = metrics._cider_pair(tokens_h, tokens_r, idf, default, 4)
        b = metrics._cider_pair(tokens_h, tokens_r, doubled, 2 * default, 4)
        assert a == pytest.approx(b, abs=1e-9)

    def test_empty_corpus_is_error(self):
        with pytest.raises(MetricInputError):
            cider([], [])


class TestMatch:
    def test_close_pair_matches(self):
        gt = "notice <c1,CAM_BACK,490,240,510,260>"          # center (500, 250)
        pred = "notice <c1,CAM_BACK,495,242,515,262>"        # center (505, 252)
        assert math.dist((500, 250), (505, 252)) == pytest.approx(math.sqrt(29))
        assert match_score(pred, gt) == 100.0

    def test_empty_prediction(self):
        gt = "notice <c1,CAM_BACK,490,240,510,260>"
        assert match_score("", gt) == 0.0

    def test_gt_without_tags_excluded(self):
        assert match_score("anything", "no tags here") is None

    def test_beyond_threshold(self):
        gt = "<c1,CAM_BACK,500,250,500,250>"
        pred = "<c1,CAM_BACK,530,250,530,250>"  # 30 > 16
        assert match_score(pred, gt) == 0.0

    def _random_instance(self, rng, max_objects=6):
        def tags(points):
            return " ".join(
                f"<c{i + 1},CAM_BACK,{x},{y},{x},{y}>"
                for i, (x, y) in enumerate(points))
        gt_pts = [(rng.randrange(0, 200), rng.randrange(0, 200))
                  for _ in range(rng.randrange(1, max_objects + 1))]
        pred_pts = [(rng.randrange(0, 200), rng.randrange(0, 200))
                    for _ in range(rng.randrange(0, max_objects + 1))]
        return gt_pts, pred_pts, tags(gt_pts), tags(pred_pts)

    def test_against_greedy_oracle(self):
        rng = random.Random(11)
        for _ in range(200):
            gt_pts, pred_pts, gt, pred = self._random_instance(rng)
            expected = match_oracle(gt_pts, pred_pts, DEFAULT_MATCH_THRESHOLD)
            assert match_score(pred, gt) == pytest.approx(expected, abs=1e-9)

    def test_permutation_invariance(self):
        rng = random.Random(12)
        for _ in range(100):
            gt_pts, pred_pts, gt, _ = self._random_instance(rng)
            if not pred_pts:
                continue
            shuffled = pred_pts[:]
            rng.shuffle(shuffled)
            pred_a = " ".join(f"<c{i+1},CAM_BACK,{x},{y},{x},{y}>"
                              for i, (x, y) in enumerate(pred_pts))
            pred_b = " ".join(f"<c{i+1},CAM_BACK,{x},{y},{x},{y}>"
                              for i, (x, y) in enumerate(shuffled))
            assert match_score(pred_a, gt) == match_score(pred_b, gt)

    def test_greedy_never_beats_optimal(self):
        rng = random.Random(13)
        for _ in range(60):
            gt_pts, pred_pts, gt, pred = self._random_instance(rng, max_objects=4)
            greedy = match_score(pred, gt, threshold=40.0)
            optimal = optimal_match_count(gt_pts, pred_pts, 40.0)
            assert greedy <= 100.0 * optimal / len(gt_pts) + 1e-9

    def test_malformed_prediction_tags_are_skipped(self):
        gt = "<c1,CAM_BACK,500,250,500,250>"
        pred = "<c1,CAM_WRONG,1,2> and <c1,CAM_BACK,500,250,500,250>"
        assert match_score(pred, gt) == 100.0


class TestJudge:
    def test_stub_identity(self):
        assert StubJudge().score("q", "same answer", "same answer") == 100.0

    def test_stub_disjoint(self):
        assert StubJudge().score("q", "alpha beta", "gamma delta") == 0.0

    def test_token_f1_multiset(self):
        # pred "a a b" vs gt "a b b": overlap 2, P=R=2/3
        assert token_f1("a a b", "a b b") == pytest.approx(2 / 3)

    def test_http_judge_against_mock_server(self):
        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers["Content-Length"])
                body = json.loads(self.rfile.read(length))
                assert {"question", "gt", "pred"} <= set(body)
                payload = json.dumps({"score": 77}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        server = http.server.HTTPServer(("127.0.0.1", 0), Handler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            judge = HttpJudge(f"http://127.0.0.1:{server.server_port}/judge")
            gt_rows = [GtRow("q1", "Describe the scene.", "a busy street"),
                       GtRow("q2", "Describe the sky.", "clear blue sky")]
            preds = {"q1": "a busy street", "q2": "cloudy"}
            report = score_corpus(preds, gt_rows, judge=judge)
            assert report.aggregates["chatgpt"] == pytest.approx(77.0)
        finally:
            server.shutdown()

    def test_http_judge_unreachable_records_missing(self):
        judge = HttpJudge("http://127.0.0.1:1/judge", timeout=0.2, retries=1)
        gt_rows = [GtRow("q1", "Describe.", "something")]
        report = score_corpus({"q1": "something"}, gt_rows, judge=judge)
        assert report.counts["judge_missing"] == 1
        assert report.rows[0]["judge"] is None


class TestFinalScore:
    def test_all_ones(self):
        aggregates = {"accuracy": 1.0, "chatgpt": 100.0, "match": 100.0,
                      "bleu_4": 1.0, "rouge_l": 1.0, "cider": 10.0}
        assert final_score(aggregates, ScoreWeights()) == pytest.approx(1.0)
        assert final_score(aggregates, ScoreWeights(0.4, 0.3, 0.2, 0.1)) == \
            pytest.approx(1.0)

    def test_all_zeros(self):
        aggregates = {"accuracy": 0.0, "chatgpt": 0.0, "match": 0.0,
                      "bleu_4": 0.0, "rouge_l": 0.0, "cider": 0.0}
        assert final_score(aggregates, ScoreWeights()) == 0.0

    def test_weighted_components(self):
        # components (0.8, 0.6, 0.4, 0.2) at equal weights -> 0.5
        aggregates = {"accuracy": 0.8, "chatgpt": 60.0, "match": 40.0,
                      "bleu_4": 0.2, "rouge_l": 0.2, "cider": 2.0}
        assert final_score(aggregates, ScoreWeights()) == pytest.approx(0.5)

    def test_bad_weights_rejected(self):
        with pytest.raises(WeightError):
            ScoreWeights(0.5, 0.5, 0.5, 0.5)


class TestScoreCorpus:
    def _rows(self):
        return [
            GtRow("a1", "Pick one. Please select the correct answer from the "
                        "following options: A. Red. B. Blue.", "A. Red."),
            GtRow("m1", "Which object first?",
                  "Watch <c1,CAM_BACK,500,250,520,270> closely."),
            GtRow("l1", "Describe the scene.",
                  "the silver truck is parked near the loading dock"),
            GtRow("l2", "Describe the traffic.",
                  "a red car turns left at the next lane"),
        ]

    def test_routing(self):
        report = score_corpus({r.id: r.answer for r in self._rows()},
                              self._rows(), judge=StubJudge())
        routes = {row["id"]: row["route"] for row in report.rows}
        assert routes == {"a1": "accuracy", "m1": "match",
                          "l1": "language", "l2": "language"}

    def test_perfect_predictions(self):
        report = score_corpus({r.id: r.answer for r in self._rows()},
                              self._rows(), judge=StubJudge())
        agg = report.aggregates
        assert agg["accuracy"] == 1.0
        assert agg["match"] == 100.0
        assert agg["chatgpt"] == 100.0
        assert agg["bleu_1"] == pytest.approx(1.0, abs=1e-9)
        assert agg["bleu_4"] == pytest.approx(1.0, abs=1e-9)
        assert agg["rouge_l"] == pytest.approx(1.0, abs=1e-9)
        assert agg["cider"] == pytest.approx(10.0, abs=1e-9)
        assert agg["final"] == pytest.approx(1.0, abs=1e-9)

    def test_missing_prediction_counted(self):
        preds = {r.id: r.answer for r in self._rows()}
        del preds["l1"]
        report = score_corpus(preds, self._rows(), judge=StubJudge())
        assert report.counts["missing_predictions"] == 1

    def test_aggregates_recomputable_from_rows(self):
        rng = random.Random(14)
        gt_rows = self._rows()
        preds = {"a1": "B", "m1": "<c9,CAM_BACK,700,700,720,720>",
                 "l1": random_sentence(rng), "l2": random_sentence(rng)}
        report = score_corpus(preds, gt_rows, judge=StubJudge())
        rows = report.rows
        acc = [r["accuracy"] for r in rows if "accuracy" in r]
        assert report.aggregates["accuracy"] == sum(acc) / len(acc)
        mat = [r["match"] for r in rows if "match" in r]
        assert report.aggregates["match"] == sum(mat) / len(mat)
        lang = [r for r in rows if r["route"] == "language"]
        correct = [sum(r["bleu_correct"][k] for r in lang) for k in range(4)]
        guess = [sum(r["bleu_guess"][k] for r in lang) for k in range(4)]
        hyp_len = sum(r["hyp_len"] for r in lang)
        ref_len = sum(r["ref_len"] for r in lang)
        for n in range(1, 5):
            assert report.aggregates[f"bleu_{n}"] == \
                metrics.bleu_from_totals(correct, guess, hyp_len, ref_len, n)
        assert report.aggregates["rouge_l"] == \
            sum(r["rouge_l"] for r in lang) / len(lang)
        assert report.aggregates["cider"] == \
            sum(r["cider"] for r in lang) / len(lang)
        assert report.aggregates["final"] == \
            final_score(report.aggregates, ScoreWeights())

    def test_render_table_mentions_all_metrics(self):
        report = score_corpus({r.id: r.answer for r in self._rows()},
                              self._rows(), judge=StubJudge())
        table = report.render_table()
        for key in ["accuracy", "chatgpt", "bleu_4", "rouge_l", "cider",
                    "match", "final"]:
            assert key in table


class TestLoaders:
    def test_load_predictions(self, tmp_path):
        path = tmp_path / "pred.jsonl"
        path.write_text('{"id": "a", "answer": "x"}\n{"id": "b", "answer": "y"}\n')
        assert load_predictions(path) == {"a": "x", "b": "y"}

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "pred.jsonl"
        path.write_text('{"id": "a", "answer": "x"}\nnot json\n')
        with pytest.raises(MetricInputError) as exc:
            load_predictions(path)
        assert "line 2" in str(exc.value)

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "pred.jsonl"
        path.write_text('{"id": "a", "answer": "x"}\n{"id": "a", "answer": "y"}\n')
        with pytest.raises(MetricInputError):
            load_predictions(path)

    def test_load_gt_plain_format(self, tmp_path):
        path = tmp_path / "gt.jsonl"
        path.write_text('{"id": "a", "question": "q?", "answer": "x"}\n')
        rows = load_ground_truth(path)
        assert rows == [GtRow("a", "q?", "x")]

    def test_load_gt_records_format(self, tmp_path):
        path = tmp_path / "records.jsonl"
        path.write_text(json.dumps({
            "sample_id": "s1", "composite_image": "images/x.png",
            "system_prompt": "sp", "user_text": "<image>\nq?",
            "assistant_text": "x", "temporal": False,
            "prev_composite_image": None, "box_flags": {}, "provenance": {},
        }) + "\n")
        rows = load_ground_truth(path)
        assert rows == [GtRow("s1", "<image>\nq?", "x")]
