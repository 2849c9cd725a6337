"""Acceptance criteria, one test per criterion; each prints a single PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from lungx.attention import AttentionFusion, CbamConfig, FusionConfig
from lungx.backbone import BackboneConfig, build_backbone
from lungx.cam import grad_cam
from lungx.checkpoint import load_checkpoint
from lungx.config import TrainConfig
from lungx.data.augment import eval_array, normalize
from lungx.data.manifest import load_manifest, write_manifest
from lungx.data.pgm import decode_pgm_bytes, encode_pgm, read_pgm, write_pgm
from lungx.data.sampler import weighted_sampler
from lungx.data.synth import SyntheticSpec, blob_mask, load_blobs, synth_dataset
from lungx.gradsuite import run_suite
from lungx.metrics import ConfusionCounts, MetricReport, auc
from lungx.objectives import bce, combined_loss, focal
from lungx.optim import OneCycleSchedule, lr_at
from lungx.tensor import Tensor, no_grad
from lungx.train import ImageSet, RunLog, evaluate_model, train
from lungx.transformer import PatchEmbed, ViTConfig, token_grid

from conftest import tiny_config

VERDICTS = []


def verdict(number: int, title: str, checks: dict) -> None:
    """Record and print one line, then fail the test if any named check failed."""
    failed = [name for name, ok in checks.items() if not ok]
    line = f"criterion {number}: {'PASS' if not failed else 'FAIL'}  {title}"
    if failed:
        line += f"  (failed: {', '.join(failed)})"
    VERDICTS.append(line)
    print(line)
    assert not failed, line


def brute_auc(scores, labels):
    pos, neg = scores[labels == 1], scores[labels == 0]
    diff = pos[:, None] - neg[None, :]
    return (np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / (pos.size * neg.size)


@pytest.fixture(scope="session")
def synthetic_run(tmp_path_factory):
    """Desk model on 500 train / 100 val synthetic images for 5 epochs, trained twice with one seed."""
    root = tmp_path_factory.mktemp("acceptance")
    tr = load_manifest(synth_dataset(SyntheticSpec(negatives=250, positives=250, seed=1), root / "train"))
    va = load_manifest(synth_dataset(SyntheticSpec(negatives=50, positives=50, seed=2), root / "val"))
    cfg = TrainConfig(epochs=5, seed=0)
    t0 = time.perf_counter()
    first = train(cfg, tr, va, root / "run_a")
    seconds = time.perf_counter() - t0
    second = train(cfg, tr, va, root / "run_b")
    return dict(root=root, config=cfg, val=va, first=first, second=second, seconds=seconds)


def test_criterion_1_gradient_suite():
    t0 = time.perf_counter()
    results = run_suite(seed=0)
    seconds = time.perf_counter() - t0
    names = {r.name for r in results}
    blocks = {"mbconv_residual", "mbconv_stride2", "cbam", "fusion", "patchify_encoder_block", "head",
              "combined_loss"}
    worst = max(results, key=lambda r: r.report.max_rel_error)
    verdict(1, f"{len(results)} gradient checks, worst {worst.name} {worst.report.max_rel_error:.2e}, "
               f"{seconds:.1f}s", {
        "all below 1e-4": all(r.report.max_rel_error < 1e-4 for r in results),
        "composite blocks covered": blocks <= names,
        "primitives covered": len(results) - len(blocks) >= 40,
        "under 2 min": seconds < 120,
    })


def test_criterion_2_shape_contract():
    rng = np.random.default_rng(2)
    bb = build_backbone(BackboneConfig(), rng).eval()
    neck = AttentionFusion(BackboneConfig().tap_channels, CbamConfig(), FusionConfig(), rng).eval()
    vit = ViTConfig(embed_dim=16, heads=2)

    def run(h, w):
        with no_grad():
            pyr = bb(Tensor(np.zeros((1, 1, h, w), dtype=np.float32)))
            fused = neck(pyr)
            tokens = PatchEmbed(32, token_grid(*fused.shape[2:]), vit, rng)(fused)
        return [p.shape[2:] for p in pyr], tokens.shape[1]

    maps300, tokens300 = run(300, 300)
    sizes = [tuple(int(v) for v in rng.integers(32, 321, 2)) for _ in range(20)]
    agree = True
    for h, w in sizes:
        maps, n = run(h, w)
        expected = [(math.ceil(h / s), math.ceil(w / s)) for s in (8, 16, 32)]
        h8, w8 = expected[0]
        agree &= maps == expected and n == math.ceil(h8 / 4) * math.ceil(w8 / 4) + 1
    verdict(2, f"300x300 -> {maps300}, {tokens300} tokens; 20 random sizes", {
        "38/19/10 maps": maps300 == [(38, 38), (19, 19), (10, 10)],
        "101 tokens": tokens300 == 101,
        "random sizes match ceil formulas": agree,
    })


def test_criterion_3_loss_closed_forms():
    half = combined_loss(Tensor(np.array([0.5])), [1]).data.item()
    rng = np.random.default_rng(3)
    p = rng.uniform(0, 1, 1000)
    y = rng.integers(0, 2, 1000).astype(np.float64)
    fl = focal(Tensor(p), y, alpha=0.5, gamma=0.0, reduction="none").data
    ref = 0.5 * bce(Tensor(p), y, reduction="none").data
    gap = float(np.max(np.abs(fl - ref)))
    verdict(3, f"combined(0.5, 1) = {half:.9f}; focal(g=0, a=0.5) vs 0.5*BCE max gap {gap:.1e}", {
        "0.415888 +- 1e-6": abs(half - 0.415888) <= 1e-6,
        "pointwise to 1e-9": gap <= 1e-9,
    })


def test_criterion_4_auc_oracle():
    rng = np.random.default_rng(4)
    exact = 0
    for i in range(200):
        n = int(rng.integers(2, 1001))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        scores = rng.integers(0, 20, n) / 20 if i % 2 else rng.random(n)
        exact += auc(scores, labels) == brute_auc(scores, labels)
    fixture = auc([0.8, 0.6, 0.4, 0.2], [1, 0, 1, 0])
    verdict(4, f"{exact}/200 exact matches with brute force; fixture AUC {fixture}", {
        "200 exact": exact == 200,
        "fixture 0.75": fixture == 0.75,
    })


def test_criterion_5_sampler_balance():
    labels = np.array([0] * 10_000 + [1] * 6_000)
    a = weighted_sampler(labels, np.random.default_rng(5))
    draws = [next(a) for _ in range(10_000)]
    frac = float(labels[draws].mean())
    b = weighted_sampler(labels, np.random.default_rng(5))
    replay = [next(b) for _ in range(10_000)]
    verdict(5, f"positive fraction {frac:.4f} over 10,000 draws", {
        "within [0.485, 0.515]": 0.485 <= frac <= 0.515,
        "same seed replays": replay == draws,
    })


def test_criterion_6_training_protocol(synthetic_run, tiny_data, tmp_path):
    norms = synthetic_run["first"].clipped_norms + synthetic_run["second"].clipped_norms
    s = OneCycleSchedule(total_steps=1000)
    ends = (lr_at(0, s), lr_at(300, s), lr_at(1000, s))
    seq = [0.90] + [0.89] * 7 + [0.99] * 5
    res = train(tiny_config(epochs=len(seq)), load_manifest(tiny_data[1]), load_manifest(tiny_data[1]),
                tmp_path, validate=lambda m, e: MetricReport(0.5, 0.5, 0.5, 0.5, seq[e - 1],
                                                            ConfusionCounts(1, 1, 1, 1), 0.5))
    epochs = len(res.runlog.rows)
    verdict(6, f"max post-clip norm {max(norms):.6f} over {len(norms)} steps; lr {ends}; "
               f"stopped after {epochs} epochs", {
        "clip <= 1 + 1e-6": max(norms) <= 1.0 + 1e-6,
        "lr 8e-6": math.isclose(ends[0], 8e-6, rel_tol=1e-12),
        "lr 2e-4": math.isclose(ends[1], 2e-4, rel_tol=1e-12),
        "lr 2e-8": math.isclose(ends[2], 2e-8, rel_tol=1e-9),
        "stop after 8": epochs == 8 and res.stopped_early and res.best.epoch == 1,
    })


@pytest.mark.slow
def test_criterion_7_synthetic_end_to_end(synthetic_run):
    first, second = synthetic_run["first"], synthetic_run["second"]
    aucs = [r["val_auc"] for r in first.runlog.rows]
    params = first.model.num_parameters()
    disk = RunLog.read_csv(synthetic_run["root"] / "run_a" / "log.csv").rows
    verdict(7, f"val AUC by epoch {[round(a, 4) for a in aucs]}, {params:,} params, "
               f"{synthetic_run['seconds']:.0f}s per run", {
        "AUC >= 0.95 within 5 epochs": len(aucs) <= 5 and max(aucs) >= 0.95,
        "desk model under 2M params": params < 2_000_000,
        "under 10 min": synthetic_run["seconds"] < 600,
        "identical RunLogs": first.runlog.rows == second.runlog.rows and disk == first.runlog.rows,
    })


@pytest.mark.slow
def test_criterion_8_cam_localisation(synthetic_run):
    root = synthetic_run["root"]
    cfg = synthetic_run["config"]
    model = load_checkpoint(root / "run_a" / "best.ckpt").build_model()
    manifest = load_manifest(synth_dataset(SyntheticSpec(negatives=0, positives=50, seed=3), root / "cam"))
    blobs = load_blobs(root / "cam")
    hits = 0
    for rec in manifest.records:
        img = read_pgm(manifest.root / rec.path)
        mask = eval_array(blob_mask(blobs[rec.path], img.shape[0]).astype(np.float64), cfg.image_size) > 0.5
        heat = grad_cam(model, normalize(eval_array(img, cfg.image_size))).upsampled
        hits += heat[mask].mean() > heat[~mask].mean()
    verdict(8, f"inside-blob mean exceeds outside in {hits}/50 positives", {"at least 80%": hits >= 40})


@pytest.mark.slow
def test_criterion_9_persistence(synthetic_run, tmp_path):
    root = synthetic_run["root"]
    ckpt = load_checkpoint(root / "run_a" / "best.ckpt")
    again = evaluate_model(ckpt.build_model(), ImageSet(synthetic_run["val"]), synthetic_run["config"])
    in_memory = synthetic_run["first"].best.metrics

    src = root / "val" / "manifest.csv"
    write_manifest(tmp_path / "copy.csv", load_manifest(src).records)
    pgm_ok = True
    for name in ("img_00000.pgm", "img_00077.pgm"):
        raw = (root / "val" / name).read_bytes()
        write_pgm(tmp_path / name, read_pgm(root / "val" / name))
        pgm_ok &= (tmp_path / name).read_bytes() == raw
    rng = np.random.default_rng(9)
    for maxval in (255, 65535):
        for ascii in (False, True):
            buf = encode_pgm(rng.integers(0, maxval + 1, (6, 5)) / maxval, maxval, ascii)
            pgm_ok &= encode_pgm(decode_pgm_bytes(buf), maxval, ascii) == buf
    verdict(9, f"best epoch {ckpt.epoch} re-evaluated: AUC {again.auc}, loss {again.loss}", {
        "metrics bit-exact": again == ckpt.metrics == in_memory,
        "manifest byte-exact": (tmp_path / "copy.csv").read_bytes() == src.read_bytes(),
        "PGM byte-exact": pgm_ok,
    })
