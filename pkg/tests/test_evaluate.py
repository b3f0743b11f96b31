import numpy as np
import pytest

from gmnerkit.evaluate import IdMismatchError, iou, score, triplet_match
from gmnerkit.types import BoundingBox, GmnerTriplet

from conftest import make_sample, make_sentence, make_span


def box(*coords):
    return BoundingBox(*coords)


class TestIou:
    def test_identical_boxes(self):
        b = box(10, 10, 50, 50)
        assert iou(b, b) == 1.0

    def test_disjoint_boxes(self):
        assert iou(box(0, 0, 10, 10), box(20, 20, 30, 30)) == 0.0

    def test_partial_overlap_closed_form(self):
        got = iou(box(0, 0, 10, 10), box(5, 5, 15, 15))
        assert got == pytest.approx(25 / 175, abs=1e-6)

    def test_touching_edges_are_disjoint(self):
        assert iou(box(0, 0, 10, 10), box(10, 0, 20, 10)) == 0.0

    def test_symmetric(self):
        a, b = box(0, 0, 10, 10), box(3, 2, 30, 12)
        assert iou(a, b) == iou(b, a)


class TestTripletMatch:
    def test_both_none_regions_match(self, schema):
        sample = make_sample("s1", "the Nimitz sailed", [(1, 2, schema[1], None)])
        gold = sample.triplets[0]
        pred = GmnerTriplet(mention=gold.mention, region=None)
        assert triplet_match(gold, pred)

    def test_iou_exactly_half_fails(self, schema):
        sent = make_sentence("s1", "the Nimitz sailed")
        span = make_span(sent, 1, 2, schema[1])
        gold = GmnerTriplet(mention=span, region=box(0, 0, 10, 10))
        # Half of gold covered, same area: IoU = 50/150 < 0.5; instead build
        # the exact-0.5 case: pred covers gold's left half twice as tall? Use
        # boxes with IoU exactly 0.5: (0,0,10,10) vs (0,0,10,5) -> inter 50,
        # union 100 -> 0.5 exactly.
        pred = GmnerTriplet(mention=span, region=box(0, 0, 10, 5))
        assert iou(gold.region, pred.region) == 0.5
        assert not triplet_match(gold, pred)

    def test_iou_above_half_matches(self, schema):
        sent = make_sentence("s1", "the Nimitz sailed")
        span = make_span(sent, 1, 2, schema[1])
        gold = GmnerTriplet(mention=span, region=box(0, 0, 10, 10))
        pred = GmnerTriplet(mention=span, region=box(0, 0, 10, 7))
        assert iou(gold.region, pred.region) == pytest.approx(0.7)
        assert triplet_match(gold, pred)

    def test_span_off_by_one_token_fails(self, schema):
        sent = make_sentence("s1", "the Nimitz sailed")
        gold = GmnerTriplet(mention=make_span(sent, 1, 2, schema[1]),
                            region=box(0, 0, 10, 10))
        pred = GmnerTriplet(mention=make_span(sent, 0, 2, schema[1]),
                            region=box(0, 0, 10, 10))
        assert not triplet_match(gold, pred)

    def test_type_mismatch_fails(self, schema):
        sent = make_sentence("s1", "the Nimitz sailed")
        span = make_span(sent, 1, 2, schema[1])
        wrong = make_span(sent, 1, 2, schema[0])
        gold = GmnerTriplet(mention=span, region=None)
        assert not triplet_match(gold, GmnerTriplet(mention=wrong, region=None))

    def test_none_vs_box_fails(self, schema):
        sent = make_sentence("s1", "the Nimitz sailed")
        span = make_span(sent, 1, 2, schema[1])
        gold = GmnerTriplet(mention=span, region=None)
        pred = GmnerTriplet(mention=span, region=box(0, 0, 5, 5))
        assert not triplet_match(gold, pred)
        assert not triplet_match(pred, gold)

    def test_text_only_ignores_regions(self, schema):
        sent = make_sentence("s1", "the Nimitz sailed")
        span = make_span(sent, 1, 2, schema[1])
        gold = GmnerTriplet(mention=span, region=box(0, 0, 10, 10))
        pred = GmnerTriplet(mention=span, region=None)
        assert triplet_match(gold, pred, text_only=True)


def two_sample_gold(schema):
    return [
        make_sample("s1", "the Nimitz sailed", [(1, 2, schema[1], (0, 0, 50, 50))]),
        make_sample("s2", "an F-22 flew by", [(1, 2, schema[0], None)]),
    ]


class TestScore:
    def test_gold_as_pred_is_perfect(self, schema):
        gold = two_sample_gold(schema)
        preds = {s.sentence.id: list(s.triplets) for s in gold}
        report = score(gold, preds)
        assert (report.precision, report.recall, report.f1) == (1.0, 1.0, 1.0)
        assert report.correct == report.gold == report.pred == 2

    def test_empty_predictions_zero_by_convention(self, schema):
        gold = two_sample_gold(schema)
        report = score(gold, {})
        assert (report.precision, report.recall, report.f1) == (0.0, 0.0, 0.0)

    def test_one_gold_two_preds(self, schema):
        gold = [make_sample("s1", "the Nimitz sailed",
                            [(1, 2, schema[1], (0, 0, 50, 50))])]
        sent = gold[0].sentence
        correct = gold[0].triplets[0]
        spurious = GmnerTriplet(mention=make_span(sent, 0, 2, schema[1]),
                                region=box(0, 0, 50, 50))
        report = score(gold, {"s1": [correct, spurious]})
        assert report.precision == pytest.approx(0.5)
        assert report.recall == pytest.approx(1.0)
        assert report.f1 == pytest.approx(2 / 3)

    def test_duplicate_predictions_counted_once(self, schema):
        gold = [make_sample("s1", "the Nimitz sailed",
                            [(1, 2, schema[1], (0, 0, 50, 50))])]
        t = gold[0].triplets[0]
        report = score(gold, {"s1": [t, t, t]})
        assert report.pred == 1
        assert report.precision == 1.0

    def test_unknown_sentence_id_rejected(self, schema):
        gold = two_sample_gold(schema)
        preds = {"nope": []}
        with pytest.raises(IdMismatchError):
            score(gold, preds)

    def test_prediction_order_irrelevant(self, schema):
        rng = np.random.default_rng(17)
        gold = [make_sample(
            "s1", "alpha bravo charlie delta echo",
            [(0, 1, schema[0], (0, 0, 10, 10)), (2, 3, schema[1], None),
             (4, 5, schema[2], (20, 20, 40, 40))],
        )]
        sent = gold[0].sentence
        preds = [
            gold[0].triplets[0],
            GmnerTriplet(mention=make_span(sent, 2, 3, schema[1]), region=None),
            GmnerTriplet(mention=make_span(sent, 4, 5, schema[2]),
                         region=box(21, 21, 40, 40)),
            GmnerTriplet(mention=make_span(sent, 1, 2, schema[3]), region=None),
        ]
        base = None
        for _ in range(10):
            shuffled = [preds[i] for i in rng.permutation(len(preds))]
            report = score(gold, {"s1": shuffled})
            summary = (report.precision, report.recall, report.f1, report.correct)
            if base is None:
                base = summary
            assert summary == base

    def test_per_type_breakdown(self, schema):
        gold = two_sample_gold(schema)
        preds = {s.sentence.id: list(s.triplets) for s in gold}
        report = score(gold, preds)
        assert report.per_type["SHIP"].correct == 1
        assert report.per_type["AIRCRAFT"].correct == 1
        assert report.per_type["SHIP"].f1 == 1.0

    def test_f1_between_min_and_max_property(self, schema):
        rng = np.random.default_rng(23)
        sent_text = " ".join(f"w{i}" for i in range(10))
        for _ in range(200):
            n_gold = int(rng.integers(1, 5))
            gold_entries = []
            used = set()
            for _ in range(n_gold):
                start = int(rng.integers(0, 9))
                if start in used:
                    continue
                used.add(start)
                gold_entries.append((start, start + 1,
                                     schema[int(rng.integers(0, 4))], None))
            sample = make_sample("s1", sent_text, gold_entries)
            preds = []
            for t in sample.triplets:
                if rng.random() < 0.6:
                    preds.append(t)
            sent = sample.sentence
            for _ in range(int(rng.integers(0, 3))):
                start = int(rng.integers(0, 9))
                preds.append(GmnerTriplet(
                    mention=make_span(sent, start, start + 1,
                                      schema[int(rng.integers(0, 4))]),
                    region=None))
            report = score([sample], {"s1": preds})
            assert 0.0 <= report.precision <= 1.0
            assert 0.0 <= report.recall <= 1.0
            if report.precision + report.recall > 0:
                assert min(report.precision, report.recall) - 1e-12 <= report.f1
                assert report.f1 <= max(report.precision, report.recall) + 1e-12
            assert report.correct <= min(report.gold, report.pred)

    def test_report_serialization(self, schema):
        gold = two_sample_gold(schema)
        report = score(gold, {s.sentence.id: list(s.triplets) for s in gold})
        doc = report.to_json_dict()
        assert doc["counts"] == {"gold": 2, "pred": 2, "correct": 2}
        table = report.to_text_table()
        assert "ALL" in table and "SHIP" in table
