import csv
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from secsigan.dataio import CLASSES, DomainTag, TissueClass
from secsigan.surveykit import (
    Group,
    PairCandidate,
    PairType,
    ResponseSheet,
    SurveyError,
    SurveyTask,
    binary_scores,
    gen_classification_task,
    gen_realfake_task,
    key_as_sheet,
    load_pair_candidates,
    load_response_sheet,
    load_survey,
    random_sheet,
    score_responses,
)

from oracles import piecewise_linear_area

A, B = DomainTag.WLI, DomainTag.NBI


def pools(n=12):
    real = {d: [f"/real/{d.value}/{i}.png" for i in range(n)] for d in DomainTag}
    fake = {d: [f"/fake/{d.value}/{i}.png" for i in range(n)] for d in DomainTag}
    return real, fake


def candidates(per_cell=6):
    return [
        PairCandidate(f"/{t.value}/{c.value}/{i}_l.png", f"/{t.value}/{c.value}/{i}_r.png", t, c)
        for t in PairType
        for c in CLASSES
        for i in range(per_cell)
    ]


# --------------------------------------------------------------------------- task 1


def test_realfake_structure():
    m = gen_realfake_task(*pools(), seed=0)
    assert m.task_id is SurveyTask.REAL_VS_FAKE and len(m) == 20
    assert Counter(it.domain for it in m.items) == {A: 10, B: 10}
    for it in m.items:
        real_tok = it.left_token if it.truth == "left" else it.right_token
        fake_tok = it.right_token if it.truth == "left" else it.left_token
        assert m.assets[real_tok].startswith("/real/" + it.domain.value)
        assert m.assets[fake_tok].startswith("/fake/" + it.domain.value)


def test_realfake_deterministic():
    m1, m2 = gen_realfake_task(*pools(), seed=5), gen_realfake_task(*pools(), seed=5)
    assert m1.key() == m2.key() and m1.assets == m2.assets
    assert [(i.left_token, i.right_token) for i in m1.items] == [(i.left_token, i.right_token) for i in m2.items]


def test_realfake_position_balance():
    lefts = [it.truth == "left" for s in range(200) for it in gen_realfake_task(*pools(), seed=s).items]
    assert abs(np.mean(lefts) - 0.5) <= 0.08


def test_realfake_insufficient_pool():
    real, fake = pools()
    real[B] = real[B][:9]
    with pytest.raises(SurveyError, match="NBI"):
        gen_realfake_task(real, fake)


def test_manifest_does_not_leak_key(tmp_path):
    m = gen_realfake_task(*pools(), seed=1)
    paths = m.write(tmp_path)
    text = paths["manifest"].read_text()
    assert "/real/" not in text and "/fake/" not in text and "left" not in text.split("\n", 1)[1]
    with paths["manifest"].open() as fh:
        assert next(csv.reader(fh)) == ["item_id", "task", "left_token", "right_token"]
    again = load_survey(tmp_path)
    assert again.key() == m.key() and again.assets == m.assets
    assert [it.domain for it in again.items] == [it.domain for it in m.items]


# --------------------------------------------------------------------------- task 2


def test_classification_structure():
    m = gen_classification_task(candidates(), seed=0)
    assert m.task_id is SurveyTask.TISSUE_CLASSIFY and len(m) == 40
    options = Counter(it.pair_type.option for it in m.items)
    assert options == {1: 20, 2: 20}
    assert Counter(it.tissue for it in m.items) == {c: 10 for c in CLASSES}
    sub = Counter(it.pair_type for it in m.items if it.pair_type.option == 1)
    assert sorted(sub.values()) == [6, 7, 7]
    for it in m.items:
        pair_type, tissue = it.truth.split(",")
        assert PairType(pair_type) is it.pair_type and TissueClass(tissue) is it.tissue


def test_classification_key_roundtrip(tmp_path):
    m = gen_classification_task(candidates(), seed=3)
    m.write(tmp_path)
    again = load_survey(tmp_path)
    assert again.key() == m.key()
    assert all("," in v for v in again.key().values())


def test_classification_insufficient_pairs():
    few = [c for c in candidates(6) if not (c.pair_type is PairType.TRANSLATED and c.tissue is TissueClass.NST)]
    with pytest.raises(SurveyError, match="insufficient"):
        gen_classification_task(few, seed=0)
    with pytest.raises(SurveyError, match="no candidate"):
        gen_classification_task([c for c in candidates() if c.pair_type is not PairType.REAL_NBI_WLI])


def test_pair_candidate_csv(tmp_path):
    path = tmp_path / "pairs.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["left_path", "right_path", "pair_type", "tissue_class"])
        for c in candidates(1):
            w.writerow([c.left_path, c.right_path, c.pair_type.value, c.tissue.value])
    assert load_pair_candidates(path) == candidates(1)
    bad = tmp_path / "bad.csv"
    bad.write_text("left_path,right_path,pair_type,tissue_class\na,b,fake_pair,HGC\n")
    with pytest.raises(SurveyError, match=":2"):
        load_pair_candidates(bad)


# --------------------------------------------------------------------------- scoring


def test_oracle_and_anti_oracle_task1():
    m = gen_realfake_task(*pools(), seed=2)
    oracle = key_as_sheet(m)
    anti = ResponseSheet("anti", Group.RE, {k: "right" if v == "left" else "left" for k, v in m.key().items()})
    rep = score_responses(m, None, [oracle, anti])
    for stratum in ("ALL", "WLI->NBI", "NBI->WLI"):
        assert rep.per_respondent["oracle"][stratum]["accuracy"] == 1.0
        assert rep.per_respondent["oracle"][stratum]["auc"] == 1.0
        assert rep.per_respondent["anti"][stratum]["accuracy"] == 0.0
        assert rep.per_respondent["anti"][stratum]["auc"] == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_key_sheet_is_perfect_for_any_manifest(seed):
    for m in (gen_realfake_task(*pools(), seed=seed), gen_classification_task(candidates(), seed=seed)):
        rep = score_responses(m, m.key(), [key_as_sheet(m)])
        for stratum in rep.per_respondent["oracle"].values():
            assert stratum["accuracy"] == 1.0


def test_random_guessers_average_chance():
    m = gen_realfake_task(*pools(), seed=4)
    rng = np.random.default_rng(0)
    sheets = [random_sheet(m, rng, f"r{i}", Group.RE if i % 2 else Group.ES) for i in range(50)]
    rep = score_responses(m, None, sheets)
    assert abs(rep.groups["ALL"]["ALL"]["auc"]["mean"] - 0.5) <= 0.05
    assert rep.groups["ALL"]["ALL"]["auc"]["n"] == 50
    assert rep.groups["ES"]["ALL"]["auc"]["n"] == 25


def test_group_std_is_sample_std():
    m = gen_realfake_task(*pools(), seed=6)
    rng = np.random.default_rng(1)
    sheets = [random_sheet(m, rng, f"r{i}", Group.ES) for i in range(4)]
    rep = score_responses(m, None, sheets)
    accs = [rep.per_respondent[s.respondent_id]["ALL"]["accuracy"] for s in sheets]
    assert rep.groups["ES"]["ALL"]["accuracy"]["std"] == pytest.approx(np.std(accs, ddof=1))


def test_task2_strata():
    m = gen_classification_task(candidates(), seed=1)
    sheet = key_as_sheet(m)
    # wrong on every translated pair
    for it in m.items:
        if it.pair_type is PairType.TRANSLATED:
            sheet.answers[it.item_id] = "HGC" if it.tissue is not TissueClass.HGC else "LGC"
    rep = score_responses(m, None, [sheet]).per_respondent["oracle"]
    assert rep["real_pair"]["accuracy"] == 1.0
    assert rep["translated_pair"]["accuracy"] == 0.0
    assert rep["ALL"]["accuracy"] == 0.5


def test_validation_errors_and_incomplete_sheet():
    m = gen_realfake_task(*pools(), seed=0)
    with pytest.raises(SurveyError, match="unknown"):
        score_responses(m, None, [ResponseSheet("x", Group.ES, {"rf99": "left"})])
    with pytest.raises(SurveyError, match="outside"):
        score_responses(m, None, [ResponseSheet("x", Group.ES, {"rf01": "HGC"})])
    partial = ResponseSheet("p", Group.ES, dict(list(key_as_sheet(m).answers.items())[:5]))
    with pytest.warns(UserWarning, match="unanswered"):
        rep = score_responses(m, None, [partial])
    assert rep.per_respondent["p"]["ALL"]["n"] == 5 and rep.warnings


def test_response_sheet_csv(tmp_path):
    m = gen_realfake_task(*pools(), seed=0)
    path = key_as_sheet(m).to_csv(tmp_path / "RE_07.csv")
    sheet = load_response_sheet(path)
    assert sheet.group is Group.RE and sheet.respondent_id == "07"
    assert sheet.answers == m.key()
    with pytest.raises(SurveyError):
        load_response_sheet(key_as_sheet(m).to_csv(tmp_path / "anon.csv"))


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=30))
def test_two_point_auc_matches_roc_area(pairs):
    t, p = map(list, zip(*pairs))
    s = binary_scores(t, p)
    pos = sum(t)
    neg = len(t) - pos
    assert 0.0 <= s["auc"] <= 1.0
    if pos and neg:
        tpr = sum(a and b for a, b in pairs) / pos
        fpr = sum((not a) and b for a, b in pairs) / neg
        # ROC polyline (0,0) -> (fpr,tpr) -> (1,1)
        xs, ys = [0.0, fpr, 1.0], [0.0, tpr, 1.0]
        if fpr in (0.0, 1.0):
            xs, ys = ([0.0, 0.0, 1.0], [0.0, tpr, 1.0]) if fpr == 0.0 else ([0.0, 1.0, 1.0], [0.0, tpr, 1.0])
            area = sum((xs[i + 1] - xs[i]) * (ys[i] + ys[i + 1]) / 2 for i in range(2))
        else:
            area = piecewise_linear_area(xs, ys)
        assert s["auc"] == pytest.approx(area, abs=1e-12)
    else:
        assert s["auc"] == s["accuracy"]
