"""Unit tests for the evaluation battery and two-path retrieval."""

import numpy as np
import pytest

from isoalign.align.procrustes import fit_orthogonal
from isoalign.core.exceptions import DimensionMismatchError, MissingLabelsError, ValidationError
from isoalign.core.models import AlignmentMap
from isoalign.metrics import battery
from isoalign.metrics.report import Report
from isoalign.metrics.two_path import two_path_retrieval
from isoalign.synth.planted import PlantedParams, make_planted


@pytest.fixture
def square_world():
    return make_planted(PlantedParams(d=6, d_tilde=6, n_img=48, n_txt=12, K=4, seed=5))


@pytest.fixture
def clustered_world():
    """Zero spread: every member of a class is the same row, images and texts coincide."""
    return make_planted(PlantedParams(d=6, d_tilde=6, n_img=48, n_txt=12, K=4, spread=0.0, seed=5))


# ==============================================================================
# Battery
# ==============================================================================

class TestBattery:
    def test_exact_world_after_stage(self, square_world):
        """With the true map every paired and zero-shot metric is perfect after alignment."""
        sc = square_world
        amap = fit_orthogonal(sc.fA, sc.fB)
        res = battery.evaluate_battery(sc.fA, sc.gA, sc.fB, sc.gB, amap)
        assert res.get("image_cosine", "after").mean_cosine == pytest.approx(1.0)
        assert res.get("text_cosine", "after").mean_cosine == pytest.approx(1.0)
        assert res.get("image_l2", "after").mean_l2 == pytest.approx(0.0, abs=1e-9)
        assert res.get("image_retrieval", "after").top1_accuracy == 1.0
        for family in ("zeroshot_aligned_image", "zeroshot_aligned_text", "zeroshot_aligned_both"):
            after = res.get(family, "after").top1_accuracy
            native = res.get("zeroshot_source", "native").top1_accuracy
            assert after == pytest.approx(native)
        assert res.get("image_cosine", "before") is not None
        assert res.skipped == []

    def test_rectangular_has_no_before_stage(self):
        """d != d_tilde drops the unaligned baseline."""
        sc = make_planted(PlantedParams(d=4, d_tilde=7, n_img=20, n_txt=8, K=4, seed=1))
        res = battery.evaluate_battery(sc.fA, sc.gA, sc.fB, sc.gB, fit_orthogonal(sc.fA, sc.fB))
        assert res.get("image_cosine", "before") is None
        assert res.get("image_cosine", "after") is not None

    def test_unlabeled_texts_skip_zero_shot(self, square_world):
        """Without text labels the zero-shot families are skipped, not failed."""
        sc = square_world
        gA = sc.gA.with_data(sc.gA.data, labels=None)
        gB = sc.gB.with_data(sc.gB.data, labels=None)
        res = battery.evaluate_battery(sc.fA, gA, sc.fB, gB, fit_orthogonal(sc.fA, sc.fB))
        assert "zeroshot_aligned_image" in res.skipped
        assert "text_retrieval" in res.skipped
        assert res.get("zeroshot_source", "native") is None
        assert "zeroshot_aligned_image" in res.to_dict()["skipped"]

    def test_dimension_checks(self, square_world):
        """Sets must match the map's dimensions."""
        sc = square_world
        with pytest.raises(DimensionMismatchError):
            battery.evaluate_battery(sc.fA, sc.gA, sc.fB, sc.gB, AlignmentMap(Q=np.eye(3)))

    def test_add_to_report(self, square_world):
        """Results become long-format rows with stage and caller keys."""
        sc = square_world
        res = battery.evaluate_battery(sc.fA, sc.gA, sc.fB, sc.gB, fit_orthogonal(sc.fA, sc.fB))
        rep = Report(kind="eval")
        res.add_to(rep, subset="test", N=48)
        keys = {dict(r.keys)["stage"] for r in rep.rows}
        assert keys == {"after", "before", "native"}
        assert all(r.subset == "test" and dict(r.keys)["N"] == 48 for r in rep.rows)


# ==============================================================================
# Two-path Retrieval
# ==============================================================================

class TestTwoPath:
    def test_exact_world_paths_agree(self, clustered_world):
        """A single isometry for both modalities makes both routes land on the same class."""
        sc = clustered_world
        # k equals the class size, so both k-sets are exactly the class members
        rep = two_path_retrieval(sc.fA, sc.gA, sc.fB, sc.gB, AlignmentMap(Q=sc.Q_true), k=12)
        assert rep.mean_overlap == pytest.approx(1.0)
        assert rep.class_match == 1.0
        assert rep.source_path_agreement == 1.0
        assert len(rep.per_query_rows()) == sc.fA.n
        assert rep.to_dict()["n_queries"] == sc.fA.n

    def test_spread_world_overlap_below_one(self):
        """Spread inside classes separates the two k-sets even under the true map."""
        sc = make_planted(PlantedParams(d=6, d_tilde=6, n_img=48, n_txt=12, K=4, seed=5))
        rep = two_path_retrieval(sc.fA, sc.gA, sc.fB, sc.gB, AlignmentMap(Q=sc.Q_true), k=5)
        assert rep.mean_overlap < 1.0

    def test_single_image_gallery(self, square_world):
        """k=1 over a one-image gallery always overlaps."""
        sc = square_world
        rep = two_path_retrieval(sc.fA, sc.gA, sc.fB.take([0]), sc.gB,
                                 AlignmentMap(Q=sc.Q_true), k=1)
        assert rep.mean_overlap == 1.0
        assert rep.source_path_agreement is None

    def test_k_clamped_to_gallery(self, square_world):
        """k larger than the gallery is reduced to its size."""
        sc = square_world
        rep = two_path_retrieval(sc.fA, sc.gA, sc.fB.take([0, 1]), sc.gB,
                                 AlignmentMap(Q=sc.Q_true), k=10)
        assert rep.k == 2

    def test_contracts(self, square_world):
        """Bad k, missing labels and empty text sets are refused."""
        sc = square_world
        amap = AlignmentMap(Q=sc.Q_true)
        with pytest.raises(ValidationError):
            two_path_retrieval(sc.fA, sc.gA, sc.fB, sc.gB, amap, k=0)
        with pytest.raises(MissingLabelsError):
            two_path_retrieval(sc.fA.with_data(sc.fA.data, labels=None), sc.gA, sc.fB, sc.gB, amap, k=1)
        with pytest.raises(ValidationError):
            two_path_retrieval(sc.fA, sc.gA.take([]), sc.fB, sc.gB, amap, k=1)
