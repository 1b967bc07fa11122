import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ethtlm.errors import DegenerateLabels, PipelineError
from ethtlm.evaluate import (ablation_table, auc_score, compute_metrics, confusion, f1_from_predictions, f1_score,
                             fnr, paired_comparison, run_ablation, sign_test, RunSummary)
from metric_oracle import FIXTURES, pairwise_auc

scores_labels = st.integers(2, 40).flatmap(lambda n: st.tuples(
    st.lists(st.integers(-5, 5).map(float), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n)).filter(lambda t: 0 < sum(t[1]) < n))


@given(scores_labels)
def test_auc_matches_pairwise_oracle(sl):
    s, y = sl
    assert abs(auc_score(s, y) - pairwise_auc(s, y)) <= 1e-9


@given(scores_labels)
def test_auc_invariant_under_monotone_transform(sl):
    s, y = sl
    s = np.array(s)
    assert auc_score(np.exp(s / 3) * 7 - 2, y) == pytest.approx(auc_score(s, y), abs=1e-12)


@given(scores_labels, st.randoms(use_true_random=False))
def test_auc_permutation_invariant(sl, rnd):
    s, y = sl
    idx = list(range(len(s)))
    rnd.shuffle(idx)
    assert auc_score([s[i] for i in idx], [y[i] for i in idx]) == pytest.approx(auc_score(s, y), abs=1e-12)


def test_auc_degenerate():
    with pytest.raises(DegenerateLabels):
        auc_score([0.1, 0.2], [1, 1])
    assert issubclass(DegenerateLabels, PipelineError)


def test_perfect_separation():
    m = compute_metrics(np.array([0.9, 0.8, 0.2, 0.1]), [1, 1, 0, 0])
    assert (m.f1, m.auc, m.fnr) == (100.0, 100.0, 0.0)


def test_fnr_hand_value():
    assert fnr(4, 1) == 20.0 and f1_score(4, 0, 1) == pytest.approx(800 / 9)


@pytest.mark.parametrize("labels,pred,tp,fp,fn_,tn,f1,fnr_", FIXTURES)
def test_confusion_fixtures(labels, pred, tp, fp, fn_, tn, f1, fnr_):
    assert confusion(labels, pred) == (tp, fp, fn_, tn)
    assert f1_from_predictions(labels, pred) == pytest.approx(f1, abs=1e-12)
    assert fnr(tp, fn_) == pytest.approx(fnr_, abs=1e-12)


def test_macro_metrics_three_classes():
    s = np.eye(3)[[0, 1, 2, 2, 1, 0]]
    y = [0, 1, 2, 1, 1, 0]
    m = compute_metrics(s, y)
    assert m.n_classes == 3
    per = [m.per_class[k]["f1"] for k in range(3)]
    assert per == pytest.approx([100.0, 80.0, 200 / 3])
    assert m.f1 == pytest.approx(np.mean(per))
    with pytest.raises(DegenerateLabels):
        compute_metrics(s, [0, 0, 1, 1, 0, 1])


def test_sample_std_and_table():
    s = RunSummary("full", [{"seed": i, "f1": v, "auc": 90.0, "fnr": 10.0} for i, v in enumerate([80, 82, 84])])
    mean, sd = s.stat("f1")
    assert mean == 82 and sd == pytest.approx(2.0)
    text = ablation_table([s])
    assert text.splitlines()[0].startswith("variant,F1_mean,F1_std")
    assert text.splitlines()[1] == "full,82.0000,2.0000,90.0000,0.0000,10.0000,0.0000,3"
    assert all(math.isnan(x) for x in RunSummary("x", []).stat("f1"))


def test_sign_test():
    r = sign_test([5, 5, 5, 5, 5], [1, 1, 1, 1, 1])
    assert r["wins"] == 5 and r["p_value"] == pytest.approx(1 / 32)
    r = sign_test([1, 2, 3], [1, 2, 3])
    assert r["ties"] == 3 and r["p_value"] == 1.0


def test_run_ablation_records_failures():
    def run_one(variant, seed):
        if variant == "w/o-BMP" and seed == 1:
            raise DegenerateLabels("no positives")
        return {"f1": 80.0 + seed + (variant == "full"), "auc": 90.0, "fnr": 10.0}

    full, bmp = run_ablation(["full", "w/o-BMP"], run_one, n_runs=3)
    assert len(full.runs) == 3 and len(bmp.runs) == 2 and "seed 1" in bmp.errors[0]
    cmp = paired_comparison(full, bmp)
    assert cmp["wins"] == 2 and cmp["mean_gap"] == 1.0
    with pytest.raises(ValueError):
        run_ablation(["bogus"], run_one)
