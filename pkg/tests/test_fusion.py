import pytest

from tubelink.core import Detection
from tubelink.errors import DomainError
from tubelink.fusion import FusionStrategy, boost_fuse, fuse, union_fuse


def det(coords, scores):
    return Detection.of(coords, scores)


def test_union_keeps_every_box():
    appearance = [det([0, 0, 10, 10], [0.6, 0.4]), det([20, 20, 30, 30], [0.5, 0.5])]
    flow = [det([0, 0, 10, 10], [0.8, 0.2]), det([40, 0, 50, 10], [0.1, 0.9]), det([5, 5, 8, 8], [0.3, 0.7])]
    fused = union_fuse(appearance, flow)
    assert len(fused) == 5
    assert fused[:2] == appearance
    assert fused[2:] == flow


def test_union_with_empty_flow_is_identity():
    appearance = [det([0, 0, 10, 10], [0.6, 0.4])]
    assert union_fuse(appearance, []) == appearance


def test_union_keeps_duplicate_boxes():
    same = det([0, 0, 10, 10], [0.6, 0.4])
    assert union_fuse([same], [same]) == [same, same]


def test_boost_matched_pair():
    fused = boost_fuse([det([0, 0, 10, 10], [0.6, 0.4])], [det([0, 0, 10, 10], [0.8, 0.2])], tau=0.3)
    assert len(fused) == 1
    assert fused[0].scores.scores == pytest.approx((0.7, 0.3))


def test_boost_without_overlap_only_normalises():
    appearance = [det([0, 0, 10, 10], [0.3, 0.3])]
    far = det([100, 100, 110, 110], [0.9, 0.1])
    fused = boost_fuse(appearance, [far], tau=0.3)
    assert fused[0].box == appearance[0].box
    assert fused[0].scores.scores == pytest.approx((0.5, 0.5))
    # unmatched flow box is retained verbatim
    assert fused[1] == far


def test_boost_overlap_at_threshold_does_not_match():
    # IoU of these boxes is exactly 0.5
    appearance = [det([0, 0, 10, 10], [0.4, 0.6])]
    flow = [det([0, 0, 5, 10], [0.9, 0.1])]
    fused = boost_fuse(appearance, flow, tau=0.5)
    assert fused[0].scores.scores == pytest.approx((0.4, 0.6))
    assert len(fused) == 2


def test_boost_each_flow_box_boosts_once():
    appearance = [det([0, 0, 10, 10], [0.9, 0.1]), det([0, 0, 10, 10], [0.2, 0.8])]
    flow = [det([0, 0, 10, 10], [0.5, 0.5])]
    fused = boost_fuse(appearance, flow, tau=0.3)
    assert len(fused) == 2
    # the box with the higher top score claims the flow box
    assert fused[0].scores.scores == pytest.approx((1.4 / 2.0, 0.6 / 2.0))
    assert fused[1].scores.scores == pytest.approx((0.2, 0.8))


def test_boost_output_scores_sum_to_one():
    appearance = [det([0, 0, 10, 10], [0.2, 0.3, 0.1]), det([30, 30, 40, 40], [0.9, 0.9, 0.9])]
    flow = [det([1, 1, 10, 10], [0.4, 0.1, 0.1])]
    for fused in boost_fuse(appearance, flow)[:2]:
        assert sum(fused.scores.scores) == pytest.approx(1.0)


def test_boost_with_no_appearance_returns_flow():
    flow = [det([0, 0, 1, 1], [0.3, 0.7])]
    assert boost_fuse([], flow) == flow


def test_mismatched_class_counts():
    with pytest.raises(DomainError):
        union_fuse([det([0, 0, 1, 1], [0.5, 0.5])], [det([0, 0, 1, 1], [0.2, 0.3, 0.5])])
    with pytest.raises(DomainError):
        boost_fuse([det([0, 0, 1, 1], [0.5, 0.5])], [det([0, 0, 1, 1], [0.2, 0.3, 0.5])])


def test_dispatch_on_variant():
    appearance = [det([0, 0, 10, 10], [0.6, 0.4])]
    flow = [det([0, 0, 10, 10], [0.8, 0.2])]
    assert len(fuse(FusionStrategy(), appearance, flow)) == 2
    boosted = fuse(FusionStrategy(variant="boost", boost_iou_threshold=0.3), appearance, flow)
    assert len(boosted) == 1
