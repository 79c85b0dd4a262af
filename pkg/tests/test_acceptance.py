"""End-to-end acceptance checks; the terminal summary prints one line per criterion."""

import csv
import json
import time
from collections import Counter

import numpy as np
import pytest
import torch

from secsigan.classify import ClassifierConfig, init_classifier, soft_cross_entropy
from secsigan.cli import EXIT_OK, main
from secsigan.csigan import (
    LEAST_SQUARES,
    ArchitectureSpec,
    ConstantDiscriminator,
    GanModel,
    GanTrainConfig,
    IdentityGenerator,
    cycle_loss,
    fit_gan,
    generator_adversarial_term,
    init_gan,
    similarity_loss,
    total_objective,
    translate_batch,
)
from secsigan.dataio import DomainTag
from secsigan.evaluate import DEFAULT_SIGMAS, SensitivityCurve, classification_report, curve_auc, fid, mann_whitney_u, sensitivity_curve
from secsigan.experiments import METRICS, toy_translation_config
from secsigan.ssim_metrics import SsimParams, covariance, mse, ssim, ssim_batch
from secsigan.surveykit import (
    Group,
    PairCandidate,
    PairType,
    gen_classification_task,
    gen_realfake_task,
    key_as_sheet,
    random_sheet,
    score_responses,
)
from secsigan.synthetic import channel_swap_domains

from oracles import (
    central_fd_grad,
    counting_report,
    covariance_loop,
    fid_product_eigs,
    mse_loop,
    mw_enumeration,
    piecewise_linear_area,
    relative_error,
    ssim_loop,
)

A, B = DomainTag.WLI, DomainTag.NBI


class Timer:
    def __init__(self, limit_s: float):
        self.limit = limit_s

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.limit, f"took {self.elapsed:.1f}s, budget {self.limit}s"


# --------------------------------------------------------------------------- 1


@pytest.mark.criterion(1, "metric oracle suite")
def test_metric_oracles():
    rng = np.random.default_rng(100)
    p = SsimParams()
    with Timer(60):
        for _ in range(100):
            shape = (int(rng.integers(2, 9)), int(rng.integers(2, 9)), 3)
            x, y = rng.random(shape), rng.random(shape)
            assert abs(ssim(x, y, p) - ssim_loop(x, y, p.c1, p.c2)) < 1e-6
            assert abs(mse(x, y) - mse_loop(x, y)) < 1e-6
            assert abs(covariance(x, y) - covariance_loop(x, y)) < 1e-6
        for _ in range(100):
            n = int(rng.integers(1, 60))
            truth, pred = rng.integers(0, 4, n).tolist(), rng.integers(0, 4, n).tolist()
            rep, ref = classification_report(pred, truth), counting_report(pred, truth)
            for key in ("accuracy", "precision", "recall", "f1", "mcc", "cohen_kappa"):
                assert abs(getattr(rep, key) - ref[key]) < 1e-9, key
        for _ in range(100):
            xs = np.sort(rng.choice(np.linspace(0, 1, 500), size=int(rng.integers(2, 10)), replace=False))
            ys = rng.random(len(xs)) * 3
            assert abs(curve_auc(SensitivityCurve(xs, ys)) - piecewise_linear_area(xs, ys)) < 1e-9


# --------------------------------------------------------------------------- 2


@pytest.mark.criterion(2, "FID closed form")
def test_fid_closed_form():
    rng = np.random.default_rng(200)
    with Timer(60):
        for _ in range(100):
            m, mw = rng.normal(size=2) * 3
            s, sw = rng.uniform(0.05, 4, size=2)
            got = fid((np.array([m]), np.array([[s * s]])), (np.array([mw]), np.array([[sw * sw]])))
            assert abs(got - ((m - mw) ** 2 + (s - sw) ** 2)) < 1e-6
        for d in range(1, 9):
            for _ in range(15):
                f1, f2 = rng.normal(size=(d, d)), rng.normal(size=(d, d))
                s1 = (rng.normal(size=d), f1 @ f1.T / d)
                s2 = (rng.normal(size=d), f2 @ f2.T / d)
                assert fid(s1, s1) <= 1e-6
                assert abs(fid(s1, s2) - fid_product_eigs(*s1, *s2)) < 1e-5


# --------------------------------------------------------------------------- 3


@pytest.mark.criterion(3, "Mann-Whitney exactness")
def test_mann_whitney_exact():
    rng = np.random.default_rng(300)
    with Timer(60):
        for n_a in range(1, 9):
            for n_b in range(1, 9):
                # one tie-heavy and one continuous draw per size pair
                for a, b in (
                    (rng.integers(0, 4, n_a).tolist(), rng.integers(0, 4, n_b).tolist()),
                    (rng.normal(size=n_a).tolist(), (rng.normal(size=n_b) + 0.7).tolist()),
                ):
                    res = mann_whitney_u(a, b)
                    u, p = mw_enumeration(a, b)
                    assert res.method == "exact"
                    assert res.u_statistic == pytest.approx(u)
                    assert abs(res.p_value - p) < 1e-12, (n_a, n_b)


# --------------------------------------------------------------------------- 4


SMALL = ArchitectureSpec(ngf=4, n_blocks=1, ndf=4, n_disc_layers=1)


@pytest.mark.criterion(4, "loss identities")
def test_loss_identities():
    g = torch.Generator().manual_seed(400)
    x_a = torch.rand((2, 3, 16, 16), generator=g) * 2 - 1
    x_b = torch.rand((2, 3, 16, 16), generator=g) * 2 - 1
    with Timer(120):
        ident = GanModel(IdentityGenerator(A, B), IdentityGenerator(B, A), ConstantDiscriminator(A, 0.5), ConstantDiscriminator(B, 0.5))
        assert float(cycle_loss(ident.g_ab, ident.g_ba, x_a, A)) == 0.0
        assert float(cycle_loss(ident.g_ba, ident.g_ab, x_b, B)) == 0.0
        assert abs(float(similarity_loss(ident.g_ab, ident.g_ba, x_a, x_b))) < 1e-6

        model = init_gan(SMALL, seed=401)
        cfg = GanTrainConfig(lambda1=0.0, lambda2=0.0)
        params = [p for gen in (model.g_ab, model.g_ba) for p in gen.parameters()]
        with_zero = torch.autograd.grad(total_objective(model, x_a, x_b, cfg).total_g, params)
        plain = torch.autograd.grad(total_objective(model, x_a, x_b, cfg, include_similarity=False).total_g, params)
        assert relative_error(with_zero, plain) < 1e-6


# --------------------------------------------------------------------------- 5


TINY = ArchitectureSpec(in_channels=2, ngf=2, n_blocks=1, n_downsampling=1, ndf=2, n_disc_layers=0, norm="none")


def _grad_error(loss_fn, params):
    grads = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    analytic = [torch.zeros_like(p) if gr is None else gr for gr, p in zip(grads, params)]
    return relative_error(analytic, central_fd_grad(loss_fn, params))


@pytest.mark.criterion(5, "gradient checks")
def test_gradient_checks():
    g = torch.Generator().manual_seed(500)
    with Timer(300):
        model = init_gan(TINY, seed=501).double()
        with torch.no_grad():
            for p in model.parameters():
                p.copy_(torch.randn(p.shape, generator=g, dtype=torch.float64) * 0.3)
        x_a = torch.rand((2, 2, 4, 4), generator=g, dtype=torch.float64) * 2 - 1
        x_b = torch.rand((2, 2, 4, 4), generator=g, dtype=torch.float64) * 2 - 1
        gen_params = [p for gen in (model.g_ab, model.g_ba) for p in gen.parameters()]
        checks = {
            "cycle": lambda: cycle_loss(model.g_ab, model.g_ba, x_a, A) + cycle_loss(model.g_ba, model.g_ab, x_b, B),
            "adversarial": lambda: generator_adversarial_term(model.g_ab, model.d_b, x_b, x_a),
            "adversarial_ls": lambda: generator_adversarial_term(model.g_ba, model.d_a, x_a, x_b, LEAST_SQUARES),
            "similarity": lambda: similarity_loss(model.g_ab, model.g_ba, x_a, x_b, SsimParams()),
        }
        for name, fn in checks.items():
            assert _grad_error(fn, gen_params) < 1e-4, name

        cfg = ClassifierConfig("TOY", head_widths=(4, 4, 4), toy_width=2)
        xs = [torch.rand((3, 3, 8, 8), generator=g, dtype=torch.float64) for _ in range(3)]
        target = torch.softmax(torch.randn((3, 4), generator=g, dtype=torch.float64), -1)
        single = init_classifier(cfg, seed=502).double().eval()
        assert _grad_error(lambda: soft_cross_entropy(single(xs[0]), target), list(single.parameters())) < 1e-4
        student = init_classifier(cfg, seed=503, multi_input=True).double().eval()
        assert _grad_error(lambda: soft_cross_entropy(student(*xs), target), list(student.parameters())) < 1e-4


# --------------------------------------------------------------------------- 6 and 7


@pytest.fixture(scope="module")
def toy_run():
    torch.manual_seed(0)
    a, b = channel_swap_domains(100, 100, size=64, seed=0)
    a, b = a * 2 - 1, b * 2 - 1
    arch, train = toy_translation_config(epochs=30, seed=0)
    t0 = time.perf_counter()
    gan, history = fit_gan(init_gan(arch, seed=0), a[:90], b[:90], train)
    return {"gan": gan, "history": history, "held_a": a[90:], "held_b": b[90:], "seconds": time.perf_counter() - t0}


@pytest.mark.slow
@pytest.mark.criterion(6, "toy translation run")
def test_toy_translation(toy_run):
    gan = toy_run["gan"]
    assert toy_run["seconds"] < 2 * 3600
    held = torch.cat([toy_run["held_a"], toy_run["held_b"]])
    with torch.no_grad():
        _, rec_a = translate_batch(gan, toy_run["held_a"], A)
        _, rec_b = translate_batch(gan, toy_run["held_b"], B)
    rec = torch.cat([rec_a, rec_b])
    unit = lambda t: ((t + 1) / 2).clamp(0, 1)  # noqa: E731
    scores = ssim_batch(unit(held), unit(rec), SsimParams())
    cyc = [e["cyc_a"] + e["cyc_b"] for e in toy_run["history"].epochs]
    tail = cyc[-10:]
    print(f"held-out median SSIM {float(scores.median()):.3f}; last 10 cycle losses {np.round(tail, 4).tolist()}")
    assert float(scores.median()) > 0.7
    assert all(x > y for x, y in zip(tail, tail[1:]))


@pytest.mark.slow
@pytest.mark.criterion(7, "sensitivity sanity")
def test_sensitivity_sanity(toy_run):
    with Timer(300):
        ident = GanModel(IdentityGenerator(A, B), IdentityGenerator(B, A), ConstantDiscriminator(A, 0.5), ConstantDiscriminator(B, 0.5))
        images = torch.rand((500, 3, 8, 8), generator=torch.Generator().manual_seed(700)) * 2 - 1
        curve = sensitivity_curve(ident, images, [A] * 250 + [B] * 250)
        for sigma, sn in curve.points:
            assert abs(sn - sigma**2) / sigma**2 < 0.05, sigma
        held = torch.cat([toy_run["held_a"], toy_run["held_b"]])
        with torch.no_grad():
            toy = sensitivity_curve(toy_run["gan"], held, [A] * len(toy_run["held_a"]) + [B] * len(toy_run["held_b"]), sigmas=[0.025, 0.2])
        print(f"toy GAN SN(0.025)={toy.sn[0]:.5f} SN(0.2)={toy.sn[1]:.5f}")
        assert toy.sn[1] > toy.sn[0]
        assert tuple(curve.sigmas) == DEFAULT_SIGMAS


# --------------------------------------------------------------------------- 8 and 10


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    t0 = time.perf_counter()
    assert main(["prepare-data", "--synthetic", "tissue", "--out", str(out), "--run-id", "data"]) == EXIT_OK
    manifest = out / "runs" / "data" / "manifest.csv"
    assert main(["split", "--manifest", str(manifest), "--out", str(out), "--run-id", "split"]) == EXIT_OK
    split = out / "runs" / "split" / "split.json"
    argv = ["ablation-suite", "--manifest", str(manifest), "--split", str(split), "--scale", "desk", "--seeds", "10"]
    assert main(argv + ["--out", str(out), "--run-id", "suite"]) == EXIT_OK
    run_dir = out / "runs" / "suite"
    return {
        "doc": json.loads((run_dir / "ablation.json").read_text()),
        "csv": run_dir / "ablation.csv",
        "seconds": time.perf_counter() - t0,
    }


@pytest.mark.slow
@pytest.mark.criterion(8, "semi-supervised gain on domain B")
def test_semisupervised_gain(suite):
    doc = suite["doc"]
    assert suite["seconds"] < 2 * 3600
    cell = doc["summary"]["secsigan"]["Accuracy_NBI"]
    ours = cell["values"]
    base = doc["summary"]["baseline"]["Accuracy_NBI"]["values"]
    wins = sum(x > y for x, y in zip(ours, base))
    print(f"NBI accuracy secsigan {np.mean(ours):.3f} vs teacher {np.mean(base):.3f}; wins {wins}/10; p={cell['p_value']:.4g} ({cell['method']})")
    assert len(ours) == len(base) == 10
    assert np.mean(ours) > np.mean(base)
    assert wins >= 7
    assert cell["p_value"] is not None and 0.0 <= cell["p_value"] <= 1.0


@pytest.mark.slow
@pytest.mark.criterion(10, "ablation harness table")
def test_ablation_harness(suite):
    doc = suite["doc"]
    expected = [f"{m}_{s}" for m, _ in METRICS for s in ("ALL", "WLI", "NBI")]
    assert doc["columns"] == expected and len(expected) == 18
    with suite["csv"].open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["preset", "row"] + expected
    for preset in doc["presets"]:
        for col in expected:
            cell = doc["summary"][preset][col]
            assert len(cell["values"]) == 10
            assert cell["std"] == pytest.approx(np.nanstd(cell["values"], ddof=1))
            if preset == "baseline":
                assert cell["p_value"] is None
            else:
                assert cell["p_value"] is not None
    kinds = Counter(r[1] for r in rows[1:])
    assert kinds["mean±std"] == len(doc["presets"]) and kinds["p_value"] == len(doc["presets"]) - 1
    # one p-value re-derived by full enumeration over the pooled ranks
    ours = doc["summary"]["secsigan"]["Accuracy_NBI"]["values"]
    base = doc["summary"]["baseline"]["Accuracy_NBI"]["values"]
    assert doc["summary"]["secsigan"]["Accuracy_NBI"]["p_value"] == pytest.approx(mw_enumeration(ours, base)[1], abs=1e-12)


# --------------------------------------------------------------------------- 9


@pytest.mark.criterion(9, "survey round trip")
def test_survey_round_trip():
    with Timer(60):
        real = {d: [f"/real/{d.value}/{i}.png" for i in range(12)] for d in DomainTag}
        fake = {d: [f"/fake/{d.value}/{i}.png" for i in range(12)] for d in DomainTag}
        task1 = gen_realfake_task(real, fake, seed=900)
        assert len(task1) == 20 and Counter(it.domain for it in task1.items) == {A: 10, B: 10}
        pairs = [
            PairCandidate(f"/{t.value}/{c}/{i}_l.png", f"/{t.value}/{c}/{i}_r.png", t, c)
            for t in PairType
            for c in ("HGC", "LGC", "NTL", "NST")
            for i in range(6)
        ]
        task2 = gen_classification_task(pairs, seed=901)
        assert len(task2) == 40
        assert Counter(it.pair_type.option for it in task2.items) == {1: 20, 2: 20}
        assert set(Counter(it.tissue for it in task2.items).values()) == {10}
        for manifest in (task1, task2):
            rep = score_responses(manifest, manifest.key(), [key_as_sheet(manifest)])
            for stratum in rep.per_respondent["oracle"].values():
                assert stratum["accuracy"] == 1.0
                if "auc" in stratum:
                    assert stratum["auc"] == 1.0
        rng = np.random.default_rng(902)
        sheets = [random_sheet(task1, rng, f"r{i:02d}", Group.RE if i % 2 else Group.ES) for i in range(50)]
        mean_auc = score_responses(task1, None, sheets).groups["ALL"]["ALL"]["auc"]["mean"]
        assert abs(mean_auc - 0.5) <= 0.05


@pytest.mark.slow
def test_secsigan_all_accuracy_not_below_baseline(suite):
    summ = suite["doc"]["summary"]
    assert summ["secsigan"]["Accuracy_ALL"]["mean"] >= summ["baseline"]["Accuracy_ALL"]["mean"]
