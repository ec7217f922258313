"""Shipping gate: one test per guarantee, run with ``pytest tests/test_acceptance.py -v``.

Each test checks a single numbered guarantee at its stated tolerance and
prints one PASS line with the measured figure (visible with ``-rA`` or
``-s``). Verbose mode therefore gives exactly one pass/fail line per
guarantee.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from oracles import (
    oracle_adaptive_f,
    oracle_attention,
    oracle_bilinear,
    oracle_cosine,
    oracle_e_measure,
    oracle_entrywise_mean,
    oracle_extract_points,
    oracle_max_iou_box,
    oracle_reweight,
    oracle_s_measure,
    oracle_select_final,
)
from taskseg.ablation import SWEEPS, run_sweep
from taskseg.attention import (
    AttentionMode,
    HeadProjections,
    TokenFeatures,
    attention_kkv,
    attention_kqv,
    attention_vvv,
    attention_weights,
)
from taskseg.backends.base import Backends
from taskseg.backends.mock import MockCaptionQA, MockEncoder, MockSegmenter
from taskseg.chains import TaskPrompt
from taskseg.cli import main
from taskseg.config import RunConfig
from taskseg.heatmap import (
    ImageFeatures,
    Polarity,
    SimilarityMap,
    TextFeature,
    bilinear_resize,
    consensus,
    similarity_map,
    subtract_background,
)
from taskseg.metrics import adaptive_f_measure, e_measure, iou, mae, s_measure
from taskseg.prompts import BinaryMask, extract_points, max_iou_box
from taskseg.refinement import RefineConfig, reweight_image, run_refinement, select_final_mask
from taskseg.synthetic import generate_dataset, generate_scenes

KERNELS = {"kkv": attention_kkv, "kqv": attention_kqv, "vvv": attention_vvv}


def report(num, text):
    print(f"criterion {num:2d}: PASS - {text}")


@pytest.fixture(scope="module")
def benchmark_dataset(tmp_path_factory):
    """The 20-scene synthetic camouflage set used by the end-to-end checks."""
    root = tmp_path_factory.mktemp("bench")
    generate_dataset(root, count=20, seed=0)
    return root


def test_01_attention_kernels_match_loop_oracles():
    rng = np.random.default_rng(4211)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        heads = int(rng.choice([1, 2, 4]))
        d = heads * int(rng.integers(1, 32 // heads + 1))
        length = int(rng.integers(1, 17))
        tokens = rng.normal(0, 1, (length, d))
        proj = HeadProjections.random(rng, d, num_heads=heads)
        feats = TokenFeatures(tokens)
        for mode, kernel in KERNELS.items():
            got = kernel(feats, proj)
            want = oracle_attention(tokens, proj.w_k, proj.w_q, proj.w_v,
                                    heads, proj.scale, mode)
            worst = max(worst, float(np.max(np.abs(got - want))))
            rows = attention_weights(feats, proj, AttentionMode(mode))
            assert np.max(np.abs(rows.sum(axis=-1) - 1.0)) <= 1e-6
    elapsed = time.perf_counter() - start
    assert worst <= 1e-6
    assert elapsed < 5.0
    report(1, f"50 instances x 3 kernels, max abs err {worst:.2e}, "
              f"{elapsed:.2f}s")


def test_02_dual_path_recurrence_matches_straight_line_oracle():
    encoder = MockEncoder(seed=0)
    rng = np.random.default_rng(17)
    pixels = rng.uniform(0, 1, (64, 64, 3))
    original, alternate = encoder.encode_image(pixels)

    # Independent input build: exact 8x8 block means, unit chroma, bias.
    g = encoder.grid_side
    colors = pixels.reshape(g, 8, g, 8, 3).mean(axis=(1, 3)).reshape(g * g, 3)
    colors = colors / np.maximum(np.linalg.norm(colors, axis=1, keepdims=True), 1e-9)
    tokens = np.vstack([encoder.cls_token,
                        np.concatenate([colors, np.ones((g * g, 1))], axis=1)
                        @ encoder.embed])

    def oat(x, proj, mode):
        return oracle_attention(x, proj.w_k, proj.w_q, proj.w_v,
                                proj.num_heads, proj.scale, mode)

    def ffn(m, x):
        _, w, b = encoder.layer_weights[m - 1]
        return np.tanh(x @ w + b)

    # Straight-line unroll: the alternate stream appears at layer 2 and
    # always attends over the previous ORIGINAL layer.
    s = tokens
    s_hat = None
    for m in range(1, 5):
        proj = encoder.layer_weights[m - 1][0]
        if m == 2:
            s_hat = ffn(m, oat(s, proj, "kkv") + s)
        elif m > 2:
            s_hat = ffn(m, oat(s, proj, "kkv") + s_hat)
        s = ffn(m, oat(s, proj, "kqv") + s)

    err_orig = float(np.max(np.abs(original.patch_features - s[1:])))
    err_alt = float(np.max(np.abs(alternate.patch_features - s_hat[1:])))
    assert err_orig <= 1e-6
    assert err_alt <= 1e-6

    # With shared key/query weights the two logit rules coincide bitwise.
    shared = HeadProjections(w_k=encoder.layer_weights[0][0].w_k,
                             w_q=encoder.layer_weights[0][0].w_k,
                             w_v=encoder.layer_weights[0][0].w_v,
                             num_heads=encoder.num_heads,
                             scale=encoder.layer_weights[0][0].scale)
    feats = TokenFeatures(tokens)
    assert np.array_equal(attention_kkv(feats, shared),
                          attention_kqv(feats, shared))
    report(2, f"4-layer split-at-2 unroll, max abs err "
              f"{max(err_orig, err_alt):.2e}; shared-weight collapse bitwise")


def test_03_heatmap_math_matches_oracles():
    rng = np.random.default_rng(33)

    # Per-patch cosine scores.
    worst_cos = 0.0
    for _ in range(10):
        feats = ImageFeatures(rng.normal(0, 1, (9, 8)), grid_side=3)
        text = TextFeature(rng.normal(0, 1, 8), "probe", 1, Polarity.FOREGROUND)
        got = similarity_map(feats, text).values
        want = [oracle_cosine(row, text.vector) for row in feats.patch_features]
        worst_cos = max(worst_cos, float(np.max(np.abs(got - np.array(want)))))
    assert worst_cos <= 1e-6

    # Entrywise mean across chains.
    maps = [SimilarityMap(rng.uniform(-1, 1, 16), Polarity.FOREGROUND, j)
            for j in range(1, 5)]
    got_mean = consensus(maps, Polarity.FOREGROUND)
    want_mean = oracle_entrywise_mean([m.values for m in maps])
    err_mean = float(np.max(np.abs(got_mean - np.array(want_mean))))
    assert err_mean <= 1e-9

    # Foreground minus background is the exact elementwise difference.
    fore = rng.uniform(-1, 1, 16)
    back = rng.uniform(-1, 1, 16)
    assert np.array_equal(subtract_background(fore, back), fore - back)

    # Bilinear resampling from 2x2 sources.
    worst_bil = 0.0
    for out_h, out_w in ((3, 3), (4, 4), (5, 7), (2, 2), (1, 6)):
        src = rng.uniform(0, 1, (2, 2))
        got = bilinear_resize(src, out_h, out_w)
        want = oracle_bilinear(src, out_h, out_w)
        worst_bil = max(worst_bil, float(np.max(np.abs(got - want))))
    assert worst_bil <= 1e-6

    # Cosine ignores uniform rescaling of either side.
    feats = ImageFeatures(rng.normal(0, 1, (9, 8)), grid_side=3)
    text = TextFeature(rng.normal(0, 1, 8), "probe", 1, Polarity.FOREGROUND)
    base = similarity_map(feats, text).values
    for lam in (0.5, 3.0):
        scaled_img = similarity_map(
            ImageFeatures(lam * feats.patch_features, grid_side=3), text).values
        scaled_txt = similarity_map(
            feats, TextFeature(lam * text.vector, "probe", 1,
                               Polarity.FOREGROUND)).values
        assert np.max(np.abs(scaled_img - base)) <= 1e-6
        assert np.max(np.abs(scaled_txt - base)) <= 1e-6

    report(3, f"cosine {worst_cos:.2e}, mean {err_mean:.2e}, difference "
              f"exact, bilinear {worst_bil:.2e}, scale-invariant at 0.5/3")


def flat_indices(points, lat_shape, image_size):
    lat_h, lat_w = lat_shape
    width, height = image_size
    out = []
    for x, y in points:
        col = int(round(x / width * lat_w - 0.5))
        row = int(round(y / height * lat_h - 0.5))
        out.append(row * lat_w + col)
    return out


def test_04_prompt_extraction_matches_oracles():
    rng = np.random.default_rng(88)
    fallbacks = 0
    for _ in range(100):
        side = int(rng.integers(2, 17))
        lattice = rng.uniform(0, 1, (side, side))
        got = extract_points(lattice, 0.9, (128, 96))
        want_pos, want_neg = oracle_extract_points(lattice, 0.9)
        assert flat_indices(got.positives, (side, side), (128, 96)) == want_pos
        assert flat_indices(got.negatives, (side, side), (128, 96)) == want_neg
        assert len(got.negatives) == len(got.positives)
        if not np.any(lattice >= 0.9):
            fallbacks += 1
            assert len(got.positives) == 1
    assert fallbacks > 0

    box_checked = 0
    rng = np.random.default_rng(89)
    for _ in range(100):
        h, w = int(rng.integers(1, 33)), int(rng.integers(1, 33))
        grid = rng.random((h, w)) < rng.uniform(0.05, 0.6)
        want = oracle_max_iou_box(grid)
        got = max_iou_box(BinaryMask(grid))
        if want is None:
            assert got is None
        else:
            assert (got.x0, got.y0, got.x1, got.y1) == want
            box_checked += 1
    assert box_checked > 50
    report(4, f"100 lattices ({fallbacks} fallback cases) and 100 masks "
              f"({box_checked} non-empty), all oracle-equal")


def test_05_reweighting_and_selection_match_oracles():
    rng = np.random.default_rng(55)
    worst = 0.0
    for _ in range(10):
        h, w = int(rng.integers(4, 13)), int(rng.integers(4, 13))
        pixels = rng.uniform(0, 1, (h, w, 3))
        heat = rng.uniform(0, 1, (h, w))
        got = reweight_image(pixels, heat, 0.3)
        worst = max(worst, float(np.max(np.abs(got - oracle_reweight(pixels, heat, 0.3)))))
    assert worst <= 1e-7

    pixels = np.random.default_rng(56).uniform(0, 1, (9, 7, 3))
    assert np.array_equal(reweight_image(pixels, np.ones((9, 7)), 0.3), pixels)
    assert np.array_equal(reweight_image(pixels, np.zeros((9, 7)), 0.3),
                          pixels * 0.7)

    rng = np.random.default_rng(57)
    ties = 0
    for _ in range(200):
        n = int(rng.integers(1, 7))
        masks = [BinaryMask(rng.random((6, 6)) < rng.uniform(0.2, 0.8))
                 for _ in range(n)]
        if n > 1 and rng.random() < 0.3:
            masks[1] = BinaryMask(masks[0].grid.copy())  # force a tie
        idx, _, _ = select_final_mask(masks)
        grids = [m.grid for m in masks]
        want_idx = oracle_select_final(grids)
        assert idx == want_idx
        dists = [np.abs(g.astype(float) - np.mean(grids, axis=0)).sum()
                 for g in grids]
        if sum(np.isclose(d, min(dists)) for d in dists) > 1:
            ties += 1
    assert ties > 0
    report(5, f"reweight max abs err {worst:.2e}, identities bitwise, "
              f"200 selections ({ties} with ties) all argmin-equal")


def test_06_metrics_behave_on_ground_truth():
    rng = np.random.default_rng(66)
    worst_e, worst_s = 1.0, 1.0
    for _ in range(20):
        gt = rng.random((32, 32)) < rng.uniform(0.2, 0.8)
        if not (0 < gt.sum() < gt.size):
            gt[0, 0] = True
            gt[-1, -1] = False
        pred = gt.astype(np.float64)
        assert mae(pred, gt) == 0.0
        assert adaptive_f_measure(pred, gt) == 1.0
        e = e_measure(pred, gt)
        s = s_measure(pred, gt)
        worst_e, worst_s = min(worst_e, e), min(worst_s, s)
        assert e >= 1.0 - 1e-6
        assert s >= 0.99

        # Complement identity: 32x32 = 2^10 pixels keep the mean exact.
        soft = rng.integers(0, 257, (32, 32)) / 256.0
        assert mae(soft, gt) == mae(1.0 - soft, ~gt)

        # Flipping prediction and truth together changes nothing.
        fp, fg = soft[::-1, ::-1], gt[::-1, ::-1]
        assert mae(fp, fg) == mae(soft, gt)
        assert adaptive_f_measure(fp, fg) == adaptive_f_measure(soft, gt)
        assert e_measure(fp, fg) == pytest.approx(e_measure(soft, gt), abs=1e-12)
        assert s_measure(fp, fg) == pytest.approx(s_measure(soft, gt), abs=1e-12)

        # Spot-check the scores themselves against the scalar oracles.
        assert adaptive_f_measure(soft, gt) == pytest.approx(
            oracle_adaptive_f(soft, gt), abs=1e-12)
        assert e_measure(soft, gt) == pytest.approx(
            oracle_e_measure(soft, gt), abs=1e-9)
        assert s_measure(soft, gt) == pytest.approx(
            oracle_s_measure(soft, gt), abs=1e-12)
    report(6, f"20 ground truths: best scores hold (min E {worst_e:.6f}, "
              f"min S {worst_s:.4f}), complement and flip identities exact")


def tree_bytes(out_dir: Path):
    return {p.relative_to(out_dir): p.read_bytes()
            for p in sorted(out_dir.rglob("*")) if p.is_file()}


def test_07_end_to_end_runs_are_bitwise_identical(benchmark_dataset, tmp_path):
    start = time.perf_counter()
    trees = []
    for name in ("one", "two"):
        out = tmp_path / name
        code = main(["--dataset-root", str(benchmark_dataset),
                     "--out", str(out), "--save-trace"])
        assert code == 0
        trees.append(tree_bytes(out))
    elapsed = time.perf_counter() - start
    assert trees[0].keys() == trees[1].keys()
    assert trees[0] == trees[1]
    n_files = len(trees[0])
    masks = sum(1 for p in trees[0] if p.parts[0] == "masks")
    traces = sum(1 for p in trees[0] if p.parts[0] == "trace")
    assert masks == 20
    assert traces == 20 * (2 * 6 + 1)  # heatmap+mask per iteration, summary
    assert Path("metrics.csv") in trees[0]
    assert elapsed < 60.0
    report(7, f"two default runs over 20 scenes, {n_files} files each, "
              f"byte-identical, {elapsed:.1f}s")


def test_08_iterative_refinement_never_hurts_on_average():
    scenes = generate_scenes(20, seed=0)
    encoder = MockEncoder(seed=0)
    prompt = TaskPrompt("the camouflaged animal",
                        ("hidden animal", "concealed animal")).with_chain_count(3)
    first_scores, final_scores = [], []
    for scene in scenes:
        backends = Backends(
            qa=MockCaptionQA({scene.image.image_id: scene.qa_answers}),
            encoder=encoder, segmenter=MockSegmenter())
        trace = run_refinement(scene.image, prompt, backends, RefineConfig())
        assert trace.error is None
        first_scores.append(iou(trace.records[0].mask.grid, scene.gt.grid))
        final_scores.append(iou(trace.final_mask.grid, scene.gt.grid))
    mean_first = float(np.mean(first_scores))
    mean_final = float(np.mean(final_scores))
    assert mean_final >= mean_first
    report(8, f"mean IoU first pass {mean_first:.4f} -> selected "
              f"{mean_final:.4f} over 20 scenes")


def test_09_every_sweep_emits_one_aggregate_row_per_value(tmp_path_factory):
    root = tmp_path_factory.mktemp("sweepdata")
    generate_dataset(root, count=3, seed=2)
    out = tmp_path_factory.mktemp("sweepout")
    cfg = RunConfig(dataset_root=root, out=out, iterations=2)
    for knob, values in SWEEPS.items():
        results = run_sweep(cfg, knob)
        assert [v for v, _ in results] == list(values)
        lines = (out / f"ablation_{knob}.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + len(values)
        for line in lines[1:]:
            cells = line.split(",")
            assert cells[1] == "3"
            assert all(cells[2:])
    report(9, "chains/factor/threshold/post sweeps all completed, "
              "one aggregate row per value")


@pytest.mark.skip(reason="needs GPU-scale pretrained captioner, encoder, and "
                         "promptable segmenter plus an external benchmark; "
                         "excluded from the default suite")
def test_10_real_backend_benchmark(tmp_path):
    """Manual check for machines with real adapters registered: run the
    full pipeline on the public camouflage benchmark and compare the four
    aggregate metrics against the recorded reference row (mae 0.067,
    adaptive F 0.681, alignment 0.838, structure 0.775) within 0.02 each.
    """
    from taskseg.ablation import run_sweep as _  # noqa: F401
    from taskseg.backends import available_backends
    from taskseg.cli import run_dataset

    real = [name for name in available_backends() if name != "mock"]
    assert real, "register a real backend adapter first"
    cfg = RunConfig(backend=real[0], dataset_root=Path("benchmark"),
                    out=tmp_path)
    result = run_dataset(cfg)
    targets = {"mae": 0.067, "f_beta": 0.681, "e_phi": 0.838, "s_alpha": 0.775}
    for field, target in targets.items():
        assert abs(getattr(result.aggregate, field) - target) <= 0.02
