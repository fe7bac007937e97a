import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fingerpose.errors import InvalidArgumentError
from fingerpose.evalkit import (
    REGIMES,
    TARGETS,
    FullPose,
    angular_errors,
    metrics,
    partition_by_yaw,
    report,
)
from fingerpose.pose import Pose3D, UVPose


def _poses(rng, n):
    return [
        FullPose(UVPose(*rng.uniform(-100, 100, 2), rng.uniform(-180, 180)),
                 Pose3D(rng.uniform(-60, 60), rng.uniform(0, 90), rng.uniform(-180, 180)))
        for _ in range(n)
    ]


def _perturb(rng, poses, scale):
    return [
        FullPose(UVPose(p.uv.u + rng.normal(0, scale), p.uv.v + rng.normal(0, scale), p.uv.phi),
                 Pose3D(p.pose3d.roll + rng.normal(0, scale), p.pose3d.pitch + rng.normal(0, scale),
                        p.pose3d.yaw + rng.normal(0, 10 * scale)))
        for p in poses
    ]


def test_angular_error_examples():
    assert np.array_equal(angular_errors([10, 20], [10, 20]), [0, 0])
    m = metrics(angular_errors([15, 25, 35], [10, 20, 30], signed=True))
    assert (m.mae, m.rmse, m.sd) == pytest.approx((5, 5, 0), abs=1e-12)
    assert angular_errors([179], [-179])[0] == pytest.approx(2)
    assert angular_errors([179], [-179], signed=True)[0] == pytest.approx(-2)
    with pytest.raises(InvalidArgumentError):
        angular_errors([1, 2], [1])
    with pytest.raises(InvalidArgumentError):
        angular_errors([], [])


def test_metric_hand_computations():
    m = metrics([3, -3])
    assert (m.mae, m.rmse, m.sd, m.bias) == pytest.approx((3, 3, 3, 0))
    m = metrics([0, 4])
    assert (m.mae, m.rmse, m.sd, m.bias) == pytest.approx((2, math.sqrt(8), 2, 2))
    with pytest.raises(InvalidArgumentError):
        metrics([])


@given(st.lists(st.floats(-500, 500), min_size=1, max_size=60))
def test_metric_identities(errors):
    m = metrics(errors)
    assert m.rmse >= m.mae - 1e-9 and m.mae >= 0 and m.sd >= 0
    assert m.rmse**2 == pytest.approx(m.bias**2 + m.sd**2, abs=1e-9 * max(1, m.rmse**2))


def test_partition_examples():
    items = [Pose3D(0, 0, y) for y in (10, 44, 46, -90)]
    assert [p.yaw for p in partition_by_yaw(items, 45)] == [10, 44]
    assert len(partition_by_yaw(items, 180)) == 4
    sizes = [len(partition_by_yaw(items, b)) for b in REGIMES]
    assert sizes == sorted(sizes)
    with pytest.raises(InvalidArgumentError):
        partition_by_yaw(items, 60)


def test_perfect_predictions_give_zero_report():
    labels = _poses(np.random.default_rng(0), 40)
    rep = report(labels, labels)
    assert all(m.mae == 0 and m.rmse == 0 and m.sd == 0 for m in rep.cells.values())
    rep.check_identities()


def test_report_shape_counts_and_identities():
    rng = np.random.default_rng(1)
    labels = _poses(rng, 200)
    rep = report(_perturb(rng, labels, 2.0), labels)
    assert set(rep.cells) == {(r, t) for r in REGIMES for t in TARGETS}
    counts = [rep.counts[r] for r in REGIMES]
    assert counts == sorted(counts) and counts[-1] == 200
    rep.check_identities(1e-9)
    csv = rep.to_csv().splitlines()
    assert csv[0] == "regime,target,mae,rmse,sd" and len(csv) == 1 + 4 * 5
    text = rep.to_text()
    header = text.splitlines()[0]
    assert [header.index(t) for t in TARGETS] == sorted(header.index(t) for t in TARGETS)


def test_report_uses_circular_yaw_errors():
    lab = [FullPose(UVPose(0, 0, 0), Pose3D(0, 0, 179))]
    pred = [FullPose(UVPose(0, 0, 0), Pose3D(0, 0, -179))]
    assert report(pred, lab)[(180, "yaw")].mae == pytest.approx(2)


def test_empty_regime_is_absent_not_zero():
    lab = [FullPose(UVPose(0, 0, 0), Pose3D(0, 0, 170))]
    rep = report(lab, lab)
    assert rep[(45, "u")] is None and rep.counts[45] == 0
    assert "45,u,,," in rep.to_csv()
    assert rep[(180, "u")].mae == 0
    with pytest.raises(InvalidArgumentError):
        report(lab, [])
    with pytest.raises(InvalidArgumentError):
        report(lab, lab, regimes=(30,))


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_report_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    labels = _poses(rng, 30)
    preds = _perturb(rng, labels, 1.0)
    perm = rng.permutation(30)
    a = report(preds, labels)
    b = report([preds[i] for i in perm], [labels[i] for i in perm])
    for key, m in a.cells.items():
        n = b.cells[key]
        assert (m is None) == (n is None)
        if m is not None:
            assert (m.mae, m.rmse, m.sd) == pytest.approx((n.mae, n.rmse, n.sd), rel=1e-12, abs=1e-12)
