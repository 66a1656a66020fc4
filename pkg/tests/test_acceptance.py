"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line; the lines are repeated in the pytest
terminal summary under "acceptance criteria".
"""

import time
import warnings

import numpy as np
import pytest

from mammovssm.backbone import BackboneConfig
from mammovssm.data import SyntheticSpec, apply_missing_mask, generate_synthetic, preprocess
from mammovssm.fusion import GatedFusion, fuse
from mammovssm.heads import task_loss
from mammovssm.model import ModelConfig, MultiViewModel
from mammovssm.ss2d import PATHS, deserialize, serialize, ss2d_forward
from mammovssm.ssm import SelectiveScan, SsmParams, discretize, scan_kernel, scan_recurrent
from mammovssm.tensor import Tensor, no_grad
from mammovssm.train import auc, macro_f1
from mammovssm.train.bench import bench, doubling_ratios
from mammovssm.train.config import TrainConfig
from mammovssm.train.gradcheck import FUSION_HEAD, gradcheck, tiny_hybrid_config
from mammovssm.train.trainer import train

from conftest import record_criterion
from oracles import confusion_f1, pair_count_auc, random_lti, reference_ss2d, zoh_oracle


class Criterion:
    """Context manager that records PASS only if the block completes."""

    def __init__(self, name):
        self.name = name
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        detail = self.detail if ok else f"{self.detail} {exc_type.__name__}: {str(exc).splitlines()[0][:160]}"
        record_criterion(self.name, ok, detail.strip())
        return False


def test_mode_equivalence():
    with Criterion("mode equivalence (200 LTI, 1e-10, <10 s)") as c:
        rng = np.random.default_rng(2024)
        lengths = (1, 2, 7, 32, 129)
        t0 = time.perf_counter()
        worst = 0.0
        for i in range(200):
            d = discretize(random_lti(rng, full=bool(i % 2)))
            x = rng.standard_normal((lengths[i % 5], 2))
            worst = max(worst, float(np.max(np.abs(scan_recurrent(d, x) - scan_kernel(d, x)))))
        elapsed = time.perf_counter() - t0
        c.detail = f"max abs diff {worst:.2e}, {elapsed:.2f}s"
        assert worst <= 1e-10
        assert elapsed < 10


def test_discretization():
    with Criterion("discretization (expm oracle 1e-10, scalar ZOH 1e-9)") as c:
        rng = np.random.default_rng(7)
        worst = 0.0
        for full in (False, True):
            for _ in range(50):
                p = random_lti(rng, n=4, full=full)
                d = discretize(p)
                A = p.A if full else np.diag(p.A)
                E, Bb = zoh_oracle(A, p.B, p.delta)
                got_A = d.A_bar if full else np.diag(d.A_bar)
                worst = max(worst, float(np.max(np.abs(got_A - E))), float(np.max(np.abs(d.B_bar - Bb))))
        d = discretize(SsmParams(A=[-1.0], B=[[2.0]], C=[[1.0]], delta=0.5))
        scalar_err = max(abs(d.A_bar[0] - np.exp(-0.5)), abs(d.B_bar[0, 0] - (1 - np.exp(-0.5)) * 2.0))
        c.detail = f"oracle max diff {worst:.2e}, scalar diff {scalar_err:.2e}"
        assert worst <= 1e-10
        assert scalar_err <= 1e-9


def test_gradient_gate():
    with Criterion("gradient gate (fusion 1e-6, 1-block hybrid S=16 1e-3, <2 min)") as c:
        t0 = time.perf_counter()
        head = gradcheck(FUSION_HEAD, 1e-6)
        cfg = tiny_hybrid_config(image_size=16, channels=8, feature_dim=16)
        full = gradcheck(cfg, 1e-3)
        elapsed = time.perf_counter() - t0
        c.detail = (f"fusion worst {max(head.max_rel_error.values()):.2e}, hybrid worst "
                    f"{max(full.max_rel_error.values()):.2e} over {full.coordinates_checked} coords, {elapsed:.1f}s")
        assert head.passed, head.summary()
        assert full.passed, full.summary()
        assert elapsed < 120


def test_ss2d_bookkeeping():
    with Criterion("SS2D bookkeeping (round trips H,W<=8 exact, reference 1e-8)") as c:
        for p in PATHS:
            for H in range(1, 9):
                for W in range(1, 9):
                    g = np.arange(H * W * 2, dtype=np.float64).reshape(H, W, 2)
                    assert deserialize(serialize(g, p), p, H, W).tobytes() == g.tobytes()
        rng = np.random.default_rng(3)
        worst = 0.0
        for shape, shared in (((2, 3, 3), True), ((3, 2, 2), False), ((1, 4, 2), True)):
            scans = [SelectiveScan(shape[-1], 3, rng, dtype=np.float64) for _ in range(1 if shared else 4)]
            grid = rng.standard_normal(shape)
            got = ss2d_forward(Tensor(grid), scans[0] if shared else scans).data
            ref = reference_ss2d(grid, scans * 4 if shared else scans)
            worst = max(worst, float(np.max(np.abs(got - ref))))
        c.detail = f"256 grids x 4 paths exact, reference max diff {worst:.2e}"
        assert worst <= 1e-8


def test_fusion_simplex_and_masking():
    with Criterion("fusion simplex and masking (1000 fusions, bitwise masking, masked loss 0)") as c:
        rng = np.random.default_rng(11)
        worst = 0.0
        for i in range(1000):
            D = int(rng.integers(1, 9))
            head = GatedFusion(D, np.random.default_rng(i), dtype=np.float64).eval()
            scale = 10 ** rng.uniform(-2, 2)
            a = fuse(*(rng.standard_normal((4, D)) * scale), head).alpha.data
            assert np.all((a >= 0) & (a <= 1))
            worst = max(worst, abs(a.sum() - 1))
        assert worst <= 1e-6

        cfg = ModelConfig(backbone=BackboneConfig(image_size=16, stem_channels=4, mid_channels=4, channels=4,
                                                  feature_dim=8, state_size=2))
        model = MultiViewModel(cfg, np.random.default_rng(0)).eval()
        spec = SyntheticSpec(image_size=16, missing_side_prob=1.0, seed=5)
        study = generate_synthetic(spec, 1)[0]
        absent = [i for i, p in enumerate(study.presence) if not p]
        outs = []
        for fill in (None, 0.0, 1.0, 1e6):
            s = study.copy()
            for i in absent:
                s.images[i] = None if fill is None else rng.random(study.image_shape()).astype(np.float32) * fill
            x = preprocess(apply_missing_mask(s), 16)
            with no_grad():
                outs.append(model.fusion(model.encoders(Tensor(x[None]))).fused.data)
        assert len({o.tobytes() for o in outs}) == 1

        ll = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
        lr = Tensor(rng.standard_normal((3, 2)) * 50, requires_grad=True)
        base = task_loss(ll, lr, [0, 1, 1], [-1, -1, -1])
        base.backward()
        noisy = task_loss(ll, Tensor(rng.standard_normal((3, 2)) * 50), [0, 1, 1], [-1, -1, -1])
        assert base.item() == noisy.item()
        assert np.all(lr.grad == 0)
        c.detail = f"max |sum(alpha)-1| {worst:.1e}, masked fused bitwise equal, masked-side grad exactly 0"


def test_metric_oracles():
    with Criterion("metric oracles (100 AUC, 100 macro-F1 exact, 0.75 example)") as c:
        rng = np.random.default_rng(99)
        for _ in range(100):
            n = int(rng.integers(2, 501))
            scores = np.round(rng.random(n), int(rng.integers(1, 5)))
            labels = rng.integers(0, 2, n)
            labels[:2] = (0, 1)
            assert auc(scores, labels) == pair_count_auc(scores, labels)
        for _ in range(100):
            k = int(rng.integers(2, 6))
            n = int(rng.integers(k, 400))
            preds, labels = rng.integers(0, k, n), rng.integers(0, k, n)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                assert macro_f1(preds, labels, k) == confusion_f1(preds, labels, k)
        example = auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        c.detail = f"200 exact matches, worked example {example}"
        assert example == 0.75


@pytest.fixture(scope="module")
def binary_run():
    cfg = TrainConfig(max_epochs=30, target_auc=0.95, image_size=64, n_studies=400, birads_set="15",
                      backbone="hybrid", binding="shared", task="multi", seed=0)
    data = generate_synthetic(SyntheticSpec(image_size=64, birads_classes=(1, 5), seed=cfg.data_seed), 400)
    report, _ = train(cfg, data)
    return report


def test_end_to_end(binary_run):
    with Criterion("desk-scale end-to-end ({1,5}: both AUC >= 0.95 within 30 epochs, <30 min; {1,3,5} ordering)") as c:
        hist = binary_run.history
        hit = next((r for r in hist if r["auc_label"] >= 0.95 and r["auc_birads"] >= 0.95), None)
        c.detail = (f"binary reached label AUC {hist[-1]['auc_label']:.3f}, BI-RADS AUC {hist[-1]['auc_birads']:.3f} "
                    f"at epoch {hist[-1]['epoch']} in {binary_run.seconds:.0f}s")
        assert hit is not None and hit["epoch"] <= 30
        assert binary_run.seconds < 30 * 60

        cfg = TrainConfig(max_epochs=8, image_size=64, n_studies=400, birads_set="135", seed=0)
        data = generate_synthetic(SyntheticSpec(image_size=64, birads_classes=(1, 3, 5), seed=0), 400)
        ternary, _ = train(cfg, data)
        best = ternary.history[ternary.best_epoch - 1]
        binary_f1 = max(r["f1_birads"] for r in hist)
        c.detail += (f"; ternary label AUC {best['auc_label']:.3f} vs BI-RADS macro-F1 {best['f1_birads']:.3f} "
                     f"(binary BI-RADS F1 {binary_f1:.3f})")
        assert best["auc_label"] >= best["f1_birads"]
        assert binary_f1 >= best["f1_birads"]


def test_performance_contract():
    with Criterion("performance contract (recurrent doubling ratio <= 2.5, L 1k..8k, N=16)") as c:
        rows = bench((1024, 2048, 4096, 8192), state=16, modes=("recurrent",), repeats=5)
        ratios = doubling_ratios(rows)
        c.detail = "ratios " + ", ".join(f"{r:.2f}" for r in ratios)
        assert len(ratios) == 3
        assert max(ratios) <= 2.5


def test_determinism(tmp_path):
    with Criterion("determinism (bitwise checkpoints and metric CSVs)") as c:
        cfg = TrainConfig(max_epochs=3, image_size=32, n_studies=40, stem_channels=8, mid_channels=16,
                          channels=16, feature_dim=32, seed=13)
        data = generate_synthetic(SyntheticSpec(image_size=32, seed=13), 40)
        train(cfg, data, tmp_path / "a")
        train(cfg, data, tmp_path / "b")
        names = ("best.vsmk", "metrics.csv", "attention.csv")
        same = {n: (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names}
        c.detail = ", ".join(f"{n} {'identical' if v else 'DIFFERENT'}" for n, v in same.items())
        assert all(same.values())
