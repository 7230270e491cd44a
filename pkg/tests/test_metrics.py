import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amcvit.errors import EmptyMatrix, LabelOutOfRange, MalformedRecord
from amcvit.imaging import decode_png
from amcvit.metrics import (
    ConfusionMatrix,
    confusion,
    confusion_heatmap,
    read_confusion_csv,
    read_convergence_log,
    report,
    write_confusion_csv,
    write_confusion_png,
    write_convergence_log,
)
from amcvit.vit.checkpoint import EpochRecord
from amcvit.vit.train import Prediction

from oracles import metrics_oracle

matrices = st.integers(2, 10).flatmap(
    lambda k: st.lists(st.lists(st.integers(0, 20), min_size=k, max_size=k), min_size=k, max_size=k)
).filter(lambda m: sum(map(sum, m)) > 0)


class TestConfusion:
    def test_three_records(self):
        cm = confusion([(0, 0), (0, 1), (1, 1)], n_classes=2)
        np.testing.assert_array_equal(cm.counts, [[1, 1], [0, 1]])
        assert cm.class_names == ["OOK", "4ASK"]

    def test_perfect_is_diagonal(self):
        cm = confusion([(i, i) for i in range(10)] * 3)
        np.testing.assert_array_equal(cm.counts, 3 * np.eye(10, dtype=int))

    def test_accepts_prediction_objects(self):
        recs = [Prediction(2, 3, np.zeros(10)), Prediction(2, 2, np.zeros(10))]
        cm = confusion(recs)
        assert cm.counts[2, 3] == 1 and cm.counts[2, 2] == 1 and cm.total == 2

    def test_tally_oracle(self):
        rng = np.random.default_rng(0)
        recs = list(zip(rng.integers(0, 10, 1000).tolist(), rng.integers(0, 10, 1000).tolist()))
        expected = np.zeros((10, 10), dtype=int)
        for t, p in recs:
            expected[t][p] += 1
        np.testing.assert_array_equal(confusion(recs).counts, expected)

    @pytest.mark.parametrize("rec", [(10, 0), (0, -1)])
    def test_out_of_range(self, rec):
        with pytest.raises(LabelOutOfRange):
            confusion([rec])


class TestReport:
    def test_hand_example(self):
        r = report(ConfusionMatrix(np.array([[1, 1], [0, 1]]), ["a", "b"]))
        assert r.precision == [1.0, 0.5]
        assert r.recall == [0.5, 1.0]
        assert r.f1 == [2 / 3, 2 / 3]
        assert r.macro_f1 == 2 / 3
        assert r.accuracy == 2 / 3

    def test_diagonal(self):
        r = report(ConfusionMatrix(np.diag([3, 4, 5]), list("abc")))
        assert r.accuracy == r.macro_precision == r.macro_recall == r.macro_f1 == 1.0

    def test_never_predicted_flag(self):
        r = report(ConfusionMatrix(np.array([[0, 2], [0, 3]]), ["a", "b"]))
        assert r.undefined_precision == [0]
        assert r.precision[0] == 0.0
        assert r.macro_precision == pytest.approx(0.3)

    def test_absent_class_flag(self):
        r = report(ConfusionMatrix(np.array([[2, 0], [0, 0]]), ["a", "b"]))
        assert r.undefined_recall == [1]
        assert r.macro_recall == 0.5

    def test_empty(self):
        with pytest.raises(EmptyMatrix):
            report(ConfusionMatrix(np.zeros((3, 3), dtype=int), list("abc")))

    @settings(max_examples=100, deadline=None)
    @given(matrices)
    def test_matches_oracle(self, m):
        m = np.array(m)
        r = report(ConfusionMatrix(m, [str(i) for i in range(len(m))]))
        acc, p, rc, f1 = metrics_oracle(m)
        assert r.accuracy == pytest.approx(acc, abs=1e-12)
        np.testing.assert_allclose(r.precision, p, atol=1e-12)
        np.testing.assert_allclose(r.recall, rc, atol=1e-12)
        np.testing.assert_allclose(r.f1, f1, atol=1e-12)
        assert r.macro_f1 == pytest.approx(np.mean(f1), abs=1e-12)
        for v in (r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1, *r.precision, *r.recall, *r.f1):
            assert 0.0 <= v <= 1.0

    @settings(max_examples=50, deadline=None)
    @given(matrices, st.randoms())
    def test_permutation_and_micro_identity(self, m, rnd):
        m = np.array(m)
        k = len(m)
        perm = list(range(k))
        rnd.shuffle(perm)
        a = report(ConfusionMatrix(m, [str(i) for i in range(k)]))
        b = report(ConfusionMatrix(m[np.ix_(perm, perm)], [str(i) for i in range(k)]))
        assert a.accuracy == b.accuracy
        assert a.macro_f1 == pytest.approx(b.macro_f1, abs=1e-12)
        assert a.macro_precision == pytest.approx(b.macro_precision, abs=1e-12)
        np.testing.assert_allclose(b.recall, np.array(a.recall)[perm], atol=1e-15)
        micro_recall = sum(int(m[c, c]) for c in range(k)) / m.sum()
        assert a.accuracy == pytest.approx(micro_recall, abs=1e-15)


class TestExport:
    def test_csv_roundtrip(self, tmp_path):
        cm = confusion([(0, 1), (2, 2), (9, 0)])
        write_confusion_csv(cm, tmp_path / "c.csv")
        back = read_confusion_csv(tmp_path / "c.csv")
        np.testing.assert_array_equal(back.counts, cm.counts)
        assert back.class_names == cm.class_names

    def test_heatmap(self, tmp_path):
        cm = ConfusionMatrix(np.array([[3, 1], [0, 0]]), ["a", "b"])
        img = confusion_heatmap(cm, cell_px=4)
        assert img.pixels.shape == (8, 8, 3)
        assert img.pixels[0, 0, 0] == 191 and img.pixels[0, 4, 0] == 64 and img.pixels[4, 0, 0] == 0
        write_confusion_png(cm, tmp_path / "c.png", cell_px=4)
        assert decode_png((tmp_path / "c.png").read_bytes()) == img


class TestConvergenceLog:
    def test_empty(self, tmp_path):
        write_convergence_log([], tmp_path / "l.csv")
        assert read_convergence_log(tmp_path / "l.csv") == []

    def test_three_epochs(self, tmp_path):
        recs = [EpochRecord(i, 1.0 / i, 0.3 + 1e-17 * i, i / 7) for i in range(1, 4)]
        write_convergence_log(recs, tmp_path / "l.csv")
        assert read_convergence_log(tmp_path / "l.csv") == recs

    def test_decreasing_to_six_decimals(self, tmp_path):
        recs = [EpochRecord(i, 2.0 * 0.9**i, 2.1 * 0.9**i, 1 - 0.9**i) for i in range(1, 21)]
        write_convergence_log(recs, tmp_path / "l.csv")
        for a, b in zip(read_convergence_log(tmp_path / "l.csv"), recs):
            assert round(a.train_loss, 6) == round(b.train_loss, 6)
            assert a.val_loss < 2.1

    @pytest.mark.parametrize("text, line", [
        ("epoch,loss\n", 1),
        ("epoch,train_loss,val_loss,val_accuracy\n1,0.5,0.5\n", 2),
        ("epoch,train_loss,val_loss,val_accuracy\n1,0.5,0.5,0.5\n2,x,0.5,0.5\n", 3),
        ("epoch,train_loss,val_loss,val_accuracy\n1,nan,0.5,0.5\n", 2),
    ])
    def test_malformed(self, tmp_path, text, line):
        (tmp_path / "l.csv").write_text(text)
        with pytest.raises(MalformedRecord) as info:
            read_convergence_log(tmp_path / "l.csv")
        assert info.value.line == line
