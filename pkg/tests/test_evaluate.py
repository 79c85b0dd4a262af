import csv

import numpy as np
import pytest
import scipy.stats as sps
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from secsigan.classify import ClassPrediction
from secsigan.csigan import ConstantDiscriminator, GanModel, IdentityGenerator
from secsigan.dataio import CLASSES, DomainTag
from secsigan.evaluate import (
    DEFAULT_SIGMAS,
    FeatureSet,
    SensitivityCurve,
    classification_report,
    curve_auc,
    extract_features,
    fid,
    mann_whitney_u,
    per_domain_report,
    sensitivity_curve,
)

from oracles import counting_report, fid_sqrtm, mw_enumeration, piecewise_linear_area

A, B = DomainTag.WLI, DomainTag.NBI


def identity_gan():
    return GanModel(IdentityGenerator(A, B), IdentityGenerator(B, A), ConstantDiscriminator(A, 0.5), ConstantDiscriminator(B, 0.5))


def random_stats(rng, d):
    m = rng.normal(size=d)
    f = rng.normal(size=(d, d))
    return m, f @ f.T / d


# --------------------------------------------------------------------------- FID


def test_fid_scalar_cases():
    assert fid((np.zeros(1), np.eye(1)), (np.array([3.0]), np.eye(1))) == pytest.approx(9.0, abs=1e-9)
    assert fid((np.zeros(1), np.eye(1)), (np.zeros(1), np.array([[4.0]]))) == pytest.approx(1.0, abs=1e-9)


def test_fid_matches_sqrtm_oracle():
    rng = np.random.default_rng(0)
    for d in (1, 2, 3, 5, 8):
        for _ in range(20):
            s1, s2 = random_stats(rng, d), random_stats(rng, d)
            assert fid(s1, s2) == pytest.approx(fid_sqrtm(*s1, *s2), abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_fid_identity_and_symmetry(d, seed):
    rng = np.random.default_rng(seed)
    s1, s2 = random_stats(rng, d), random_stats(rng, d)
    assert fid(s1, s1) <= 1e-6
    assert abs(fid(s1, s2) - fid(s2, s1)) <= 1e-6
    assert fid(s1, s2) >= 0


def test_fid_errors():
    with pytest.raises(ValueError):
        fid((np.zeros(2), np.eye(2)), (np.zeros(3), np.eye(3)))
    with pytest.raises(ValueError):
        fid((np.zeros(2), np.diag([1.0, -1.0])), (np.zeros(2), np.eye(2)))


def test_feature_set_stats():
    fs = FeatureSet([[0, 0], [1, 0], [2, 0]])
    np.testing.assert_allclose(fs.mean, [1, 0])
    np.testing.assert_allclose(fs.cov, [[1, 0], [0, 0]])
    with pytest.raises(ValueError):
        FeatureSet([[1.0, 2.0]])


def test_toy_extractor_deterministic_and_duplicates():
    imgs = torch.rand((4, 3, 16, 16), generator=torch.Generator().manual_seed(0))
    f1, f2 = extract_features(imgs), extract_features(imgs)
    np.testing.assert_array_equal(f1.features, f2.features)
    dup = extract_features(imgs[:1].repeat(3, 1, 1, 1))
    np.testing.assert_allclose(dup.cov, 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        extract_features(imgs, "clip")
    with pytest.raises(ValueError):
        extract_features(imgs[:1])


# --------------------------------------------------------------------------- sensitivity


def _images(n, size=8, seed=0):
    return torch.rand((n, 3, size, size), generator=torch.Generator().manual_seed(seed)) * 2 - 1


def test_sensitivity_identity_noiseless():
    curve = sensitivity_curve(identity_gan(), _images(4), [A, B, A, B], sigmas=[0.0, 0.1])
    assert curve.sn[0] == 0.0


def test_sensitivity_identity_equals_sigma_squared():
    curve = sensitivity_curve(identity_gan(), _images(500), [A] * 250 + [B] * 250, sigmas=[0.1])
    assert abs(curve.sn[0] - 0.01) / 0.01 < 0.05


def test_sensitivity_defaults_and_seeding(tmp_path):
    curve = sensitivity_curve(identity_gan(), _images(6), [A] * 6)
    assert len(curve.points) == 5 and tuple(curve.sigmas) == DEFAULT_SIGMAS
    again = sensitivity_curve(identity_gan(), _images(6), [A] * 6)
    np.testing.assert_array_equal(curve.sn, again.sn)
    path = curve.to_csv(tmp_path / "sn.csv")
    with path.open() as fh:
        assert next(csv.reader(fh)) == ["sigma", "sn"]
    with pytest.raises(ValueError):
        sensitivity_curve(identity_gan(), _images(0), [])


def test_curve_auc_examples():
    assert curve_auc(SensitivityCurve([0.5, 2.0], [3.0, 3.0])) == pytest.approx(3.0 * 1.5)
    assert curve_auc(SensitivityCurve([0.0, 1.0], [0.0, 2.0])) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        curve_auc(SensitivityCurve([0.1], [1.0]))
    with pytest.raises(ValueError):
        SensitivityCurve([0.2, 0.1], [1.0, 1.0])


def test_curve_auc_matches_integration_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        xs = np.sort(rng.choice(np.linspace(0, 1, 200), size=rng.integers(2, 8), replace=False))
        ys = rng.random(len(xs))
        assert abs(curve_auc(SensitivityCurve(xs, ys)) - piecewise_linear_area(xs, ys)) < 1e-9


# --------------------------------------------------------------------------- classification metrics


def test_perfect_predictions():
    truth = [c for c in CLASSES for _ in range(3)]
    rep = classification_report([ClassPrediction(np.eye(4)[i // 3]) for i in range(12)], truth)
    for key in ("accuracy", "precision", "recall", "f1", "mcc", "cohen_kappa"):
        assert getattr(rep, key) == pytest.approx(1.0)


def test_random_predictions_kappa_near_zero():
    rng = np.random.default_rng(2)
    truth = np.repeat(np.arange(4), 500)
    rep = classification_report(rng.integers(0, 4, 2000), truth)
    assert abs(rep.cohen_kappa) < 0.1


def test_report_matches_counting_oracle():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(1, 50))
        truth = rng.integers(0, 4, n).tolist()
        pred = rng.integers(0, 4, n).tolist()
        rep = classification_report(pred, truth)
        ref = counting_report(pred, truth)
        for key, val in ref.items():
            assert abs(getattr(rep, key) - val) < 1e-9, key


def test_report_accepts_probability_arrays_and_names():
    probs = np.array([[0.1, 0.7, 0.1, 0.1], [0.6, 0.2, 0.1, 0.1]])
    rep = classification_report(probs, ["LGC", "HGC"])
    assert rep.accuracy == 1.0
    with pytest.raises(ValueError):
        classification_report([0, 1], [0])
    with pytest.raises(ValueError):
        classification_report([], [])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40))
def test_mcc_bounds_and_kappa_diagonal(pairs):
    pred, truth = zip(*pairs)
    rep = classification_report(list(pred), list(truth))
    assert -1 - 1e-12 <= rep.mcc <= 1 + 1e-12
    diagonal = not np.any(rep.confusion - np.diag(np.diag(rep.confusion)))
    n_present = len(set(truth))
    assert (abs(rep.cohen_kappa - 1) < 1e-12) == (diagonal and n_present >= 2)


def test_per_domain_partition_and_single_domain():
    rng = np.random.default_rng(4)
    truth = rng.integers(0, 4, 30)
    pred = rng.integers(0, 4, 30)
    doms = [A if i % 3 else B for i in range(30)]
    reps = per_domain_report(pred, truth, doms)
    np.testing.assert_array_equal(reps["ALL"].confusion, reps["WLI"].confusion + reps["NBI"].confusion)
    only = per_domain_report(pred, truth, [A] * 30)
    assert set(only) == {"ALL", "WLI"}
    assert only["WLI"].to_dict() | {"stratum": "ALL"} == only["ALL"].to_dict()


def test_nbi_stratum_with_two_classes():
    truth = ["HGC", "LGC", "HGC", "LGC", "NTL", "NST"]
    pred = ["HGC", "HGC", "HGC", "LGC", "NTL", "NST"]
    reps = per_domain_report(pred, truth, [B, B, B, B, A, A])
    nbi = reps["NBI"]
    assert not nbi.per_class["NTL"]["present"] and not nbi.per_class["NST"]["present"]
    # macro over HGC (P 2/3, R 1) and LGC (P 1, R 1/2)
    assert nbi.precision == pytest.approx((2 / 3 + 1) / 2)
    assert nbi.recall == pytest.approx((1 + 0.5) / 2)


def test_report_json_keys(tmp_path):
    import json

    rep = classification_report([0, 1, 2, 3], [0, 1, 2, 2])
    doc = json.loads(rep.to_json(tmp_path / "r.json").read_text())
    assert {"stratum", "accuracy", "precision", "recall", "f1", "mcc", "cohen_kappa"} <= set(doc)


# --------------------------------------------------------------------------- Mann-Whitney


def test_mw_examples():
    same = mann_whitney_u([1, 2, 3], [1, 2, 3])
    assert same.p_value == pytest.approx(1.0)
    r = mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert r.u_statistic == 0 and r.p_value == pytest.approx(0.1, abs=1e-12)
    assert r.method == "exact"
    with pytest.raises(ValueError):
        mann_whitney_u([], [1])


def test_mw_exact_matches_enumeration():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n_a, n_b = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        # coarse values force ties
        a = rng.integers(0, 5, n_a).tolist()
        b = rng.integers(0, 5, n_b).tolist()
        u, p = mw_enumeration(a, b)
        res = mann_whitney_u(a, b)
        assert res.u_statistic == pytest.approx(u)
        assert abs(res.p_value - p) < 1e-12


def test_mw_exact_eight_each():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=8).tolist(), (rng.normal(size=8) + 1).tolist()
    assert abs(mann_whitney_u(a, b).p_value - mw_enumeration(a, b)[1]) < 1e-12


def test_mw_normal_approximation_matches_scipy():
    rng = np.random.default_rng(7)
    a = rng.integers(0, 6, 15).astype(float)
    b = rng.integers(1, 7, 12).astype(float)
    res = mann_whitney_u(a, b)
    ref = sps.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    assert res.method != "exact"
    assert res.u_statistic == pytest.approx(ref.statistic)
    assert res.p_value == pytest.approx(ref.pvalue, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.integers(-5, 5), min_size=1, max_size=6),
    st.lists(st.integers(-5, 5), min_size=1, max_size=6),
)
def test_mw_invariant_under_monotone_transform(a, b):
    p = mann_whitney_u(a, b).p_value
    t = lambda v: [np.exp(x / 3.0) * 7 - 2 for x in v]  # noqa: E731
    assert abs(mann_whitney_u(t(a), t(b)).p_value - p) < 1e-12
    assert 0 <= p <= 1
