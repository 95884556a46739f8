import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossloc import graph as tg
from crossloc import sht
from crossloc.belief import BeliefMixture
from crossloc.exceptions import InconsistentMerge, NullDead
from crossloc.hypotheses import Hypothesis, VisualConstraint
from crossloc.se3 import Pose


def test_log_odds_examples():
    assert sht.log_odds({0: 0.5, 1: 0.5}) == {1: 0.0}
    assert sht.log_odds({0: 0.2, 1: 0.8})[1] == pytest.approx(np.log(4))
    assert sht.log_odds({0: 0.999, 1: 1e-3})[1] == pytest.approx(-6.9, abs=0.01)
    with pytest.raises(NullDead):
        sht.log_odds({1: 1.0})


def run(win, seq, l=1):
    out = []
    for v in seq:
        out.append(l in sht.window_update(win, {l: v}))
    return out


def test_window_boundary():
    acc = run(sht.OddsWindow(10, 7), [1.0] * 7)
    assert acc == [False] * 6 + [True]


def test_window_alternating_and_outlier():
    assert not any(run(sht.OddsWindow(10, 7), [1.0, -1.0] * 20))
    assert not any(run(sht.OddsWindow(10, 7), [2.0] + [-1.0] * 15))


def test_window_rejects_bad_params():
    with pytest.raises(ValueError):
        sht.OddsWindow(5, 7)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=40))
def test_no_accept_before_r_steps(seq):
    acc = run(sht.OddsWindow(10, 7), seq)
    assert not any(acc[:6])
    # acceptance is exactly "at least 7 positives in the last 10"
    for k, a in enumerate(acc):
        assert a == (sum(v > 0 for v in seq[max(0, k - 9) : k + 1]) >= 7)


def test_promote_null():
    assert sht.promote_null({0: 0.1, 2: 0.9}) is None
    assert sht.promote_null({3: 0.4, 2: 0.4, 5: 0.2}) == 2
    assert sht.promote_null({}) is None


def _hyp(hid, xs, w, node_x=None, sigma=0.05):
    h = Hypothesis(hid, weight=w, birth_time=0)
    for s, x in enumerate(xs):
        h.steps.append(s)
        h.trajectory.append(Pose(None, [x, 0, 0]))
        h.traj_covs.append(np.eye(6) * (0.01 if hid else 0.02))
        h.odometry.append(None if s == 0 else (Pose(None, [xs[s] - xs[s - 1], 0, 0]), np.eye(6) * 1e-4))
        if node_x is not None:
            h.visual_constraints.append(VisualConstraint(s, None, 0, Pose(None, [x - node_x, 0, 0]), np.eye(6) * sigma**2))
    return h


def _graph():
    g = tg.TopoGraph()
    g.add_node(np.ones(3), BeliefMixture.single(Pose(), np.eye(6) * 1e-4))
    return g


def test_merge_conserves_weight():
    h0, hl = _hyp(0, [0.0, 1.0, 2.0], 0.4, 0.0), _hyp(2, [0.02, 1.01, 2.0], 0.6, 0.0)
    m = sht.merge(h0, hl, _graph())
    assert m.id == 0 and abs(m.weight - 1.0) < 1e-12
    assert len(m.trajectory) == 3
    assert np.array_equal(m.traj_covs[-1], hl.traj_covs[-1])  # the tighter of the two
    assert len(m.visual_constraints) == 6


def test_merge_refuses_inconsistent_branches():
    # same odometry but anchored to the same node 5 m apart
    h0, hl = _hyp(0, [0.0, 1.0, 2.0], 0.4, 0.0), _hyp(2, [5.0, 6.0, 7.0], 0.6, 5.0)
    hl.visual_constraints = [
        VisualConstraint(v.step, None, 0, Pose(None, [x, 0, 0]), v.cov)
        for v, x in zip(hl.visual_constraints, [5.0, 6.0, 7.0])
    ]
    with pytest.raises(InconsistentMerge):
        sht.merge(h0, hl, _graph())
    assert sht.safe_merge(h0, hl, _graph()) is None


def test_loop_closer_log():
    lc = sht.LoopCloser()
    hits = [lc.check({0: 0.3, 4: 0.7}, s) for s in range(7)]
    assert hits == [None] * 6 + [4]
    lc.merged(4, 6)
    assert lc.window.count(4) == 0
    lines = lc.log_text().splitlines()
    assert lines[0].startswith("6 4 accepted") and lines[1].startswith("6 4 merged")
