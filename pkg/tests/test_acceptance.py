"""Acceptance criteria C1-C9, each recorded for the end-of-run summary."""

import hashlib
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS
from surftopo.classify import (compute_metrics, cross_val_predict, fisher_randomization_test,
                               paired_t_test, predict_batch, train_rusboost)
from surftopo.cli import main
from surftopo.features import (LabeledDataset, dct1d, dct2d, glcm_matrix, hog_features,
                               quantize)
from surftopo.pipeline import PipelineConfig, build_dataset, extract_maps, sub_seed
from surftopo.raster import GridMap
from surftopo.synth import SynthParams, generate_surface
from surftopo.topo import convolve, extract_topography, kernel_from_size, split_peaks_valleys
from test_classify import exact_sign_flip_p
from test_features import naive_dct, naive_dct2, reference_hog
from test_topo import direct_convolve

N_SURFACES = 10


def record(key, ok, detail):
    ACCEPTANCE_RESULTS[key] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
    assert ok, detail


def _interior(shape, kernel_size):
    m = int(np.ceil(kernel_size / 2))
    mask = np.zeros(shape, bool)
    mask[m:-m, m:-m] = True
    return mask


@pytest.fixture(scope="module")
def surfaces():
    """Ten default synthetic surfaces with extracted maps, and how long extraction took."""
    out = []
    t0 = time.perf_counter()
    for seed in range(N_SURFACES):
        lab = generate_surface(SynthParams(seed=seed))
        out.append(extract_maps(lab.cloud, PipelineConfig(), lab))
    return out, time.perf_counter() - t0


def test_c1_numerics_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    k = kernel_from_size(9)
    conv_err = max(np.abs(convolve(GridMap.full(v), k).values
                          - direct_convolve(v, k.coefficients)).max()
                   for v in (rng.normal(size=(64, 64)) for _ in range(20)))
    dct_err = 0.0
    for n in (1, 7, 16, 64):
        v = rng.normal(size=n)
        dct_err = max(dct_err, np.abs(dct1d(v) - naive_dct(v)).max())
    for shape in ((8, 8), (16, 12)):
        a = rng.normal(size=shape)
        kk = min(shape)
        dct_err = max(dct_err, np.abs(dct2d(a)[:kk, :kk] - naive_dct2(a, kk)).max())
    glcm_exact = True
    for _ in range(10):
        q = quantize(rng.normal(size=(16, 16)), 16)
        for dx, dy in ((1, 0), (0, 1), (1, 1), (1, -1)):
            counts = np.zeros((16, 16))
            for y in range(16):
                for x in range(16):
                    if 0 <= y + dy < 16 and 0 <= x + dx < 16:
                        counts[q[y, x], q[y + dy, x + dx]] += 1
                        counts[q[y + dy, x + dx], q[y, x]] += 1
            glcm_exact &= np.array_equal(glcm_matrix(q, (dx, dy), 16), counts / counts.sum())
    hog_err = max(np.abs(hog_features(a) - reference_hog(a)).max()
                  for a in (rng.normal(size=(32, 32)) for _ in range(5)))
    elapsed = time.perf_counter() - t0
    ok = conv_err <= 1e-10 and dct_err <= 1e-9 and glcm_exact and hog_err <= 1e-9 and elapsed < 60
    record("C1 numerics oracles", ok,
           f"conv {conv_err:.1e}, dct {dct_err:.1e}, glcm exact={glcm_exact}, "
           f"hog {hog_err:.1e}, {elapsed:.1f}s")


def test_c2_topography_identities():
    rng = np.random.default_rng(202)
    k = kernel_from_size(7)
    split_exact = True
    offset_err = 0.0
    for _ in range(50):
        d = rng.normal(size=(40, 40)) * rng.uniform(0.01, 100)
        t = extract_topography(GridMap.full(d), k)
        v, p = split_peaks_valleys(t)
        split_exact &= np.array_equal(v.values - p.values, t.values)
        split_exact &= not (v.values * p.values).any()
        c = rng.uniform(-1e3, 1e3)
        t2 = extract_topography(GridMap.full(d + c), k)
        offset_err = max(offset_err, np.abs(t2.values - t.values).max())
    affine_err = 0.0
    yy, xx = np.mgrid[0:60, 0:80].astype(float)
    inner = _interior((60, 80), k.size)
    for _ in range(10):
        a, b, c = rng.normal(size=3) * [0.5, 0.5, 10]
        t = extract_topography(GridMap.full(a * xx + b * yy + c), k).values
        affine_err = max(affine_err, np.abs(t[inner]).max())
    ok = split_exact and affine_err < 1e-9 and offset_err <= 1e-9
    record("C2 topography identities", ok,
           f"split exact={split_exact}, affine {affine_err:.1e}, offset {offset_err:.1e}")


def test_c3_curvature_compensation(surfaces):
    exs, elapsed = surfaces
    ratios = []
    for ex in exs:
        d = ex.maps["depth"].values
        t = ex.maps["topography"].values
        natural = _interior(d.shape, ex.kernel_size) & (ex.labels.values == 1)
        ratios.append(t[natural].var() / d[natural].var())
    ok = max(ratios) <= 0.10 and elapsed < 300
    record("C3 curvature compensation", ok,
           f"max var(T)/var(D) = {max(ratios):.4f} over {len(ratios)} surfaces, "
           f"{elapsed:.1f}s")


def test_c4_groove_recovery(surfaces):
    exs, _ = surfaces
    zs = []
    for ex in exs:
        ev = ex.maps["ev"].values
        inside = ev[ex.labels.values == 2]
        outside = ev[ex.labels.values == 1]
        n1, n2 = inside.size, outside.size
        sp2 = ((n1 - 1) * inside.var(ddof=1) + (n2 - 1) * outside.var(ddof=1)) / (n1 + n2 - 2)
        se = np.sqrt(sp2 * (1 / n1 + 1 / n2))
        zs.append((inside.mean() - outside.mean()) / se)
    record("C4 groove recovery", min(zs) >= 3,
           f"min (mean in - mean out)/SE = {min(zs):.1f} over {len(zs)} surfaces")


def _pooled_f1(data, seed):
    folds, pred = cross_val_predict(data, 10, 50, seed)
    return compute_metrics(pred, data.y).f1_minority


def test_c5_classification_trend(surfaces):
    exs, _ = surfaces
    t0 = time.perf_counter()
    cfg = PipelineConfig()
    scores = {"etm": [], "depth": [], "etm_ghs": [], "etm_sf": []}
    for i, ex in enumerate(exs):
        seed = sub_seed(i, "cv")
        etm = {"ev": ex.maps["ev"], "ep": ex.maps["ep"]}
        scores["etm"].append(_pooled_f1(build_dataset(etm, ex.labels, cfg), seed))
        scores["depth"].append(_pooled_f1(
            build_dataset({"depth": ex.maps["depth"]}, ex.labels, cfg), seed))
        scores["etm_ghs"].append(_pooled_f1(build_dataset(etm, ex.labels, cfg, ["ghs"]), seed))
        scores["etm_sf"].append(_pooled_f1(build_dataset(etm, ex.labels, cfg, ["sf"]), seed))
    elapsed = time.perf_counter() - t0
    mean = {k: float(np.mean(v)) for k, v in scores.items()}
    p = fisher_randomization_test(scores["etm"], scores["depth"], 10000, seed=0)
    ok = (mean["etm"] > mean["depth"] and p < 0.05 and mean["etm"] >= mean["etm_ghs"]
          and mean["etm"] >= mean["etm_sf"] and elapsed < 1800)
    record("C5 classification trend", ok,
           f"mean f1: etm ghs+sf {mean['etm']:.3f}, depth ghs+sf {mean['depth']:.3f} "
           f"(p={p:.4f}), etm ghs {mean['etm_ghs']:.3f}, etm sf {mean['etm_sf']:.3f}, "
           f"{elapsed:.0f}s")


def _imbalanced(rng, n=2000, frac=0.05):
    n2 = int(n * frac)
    y = np.array([1] * (n - n2) + [2] * n2)
    X = np.where(y[:, None] == 2, 1.0, -1.0) + rng.normal(size=(n, 2))
    return LabeledDataset(X, y, [("g", 0, 2)])


def test_c6_imbalance():
    rus, ada = [], []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        train, test = _imbalanced(rng), _imbalanced(rng)
        for undersample, acc in ((True, rus), (False, ada)):
            model = train_rusboost(train, 50, seed, undersample=undersample)
            acc.append(compute_metrics(predict_batch(model, test.X), test.y).recall[2])
    ok = np.mean(rus) > np.mean(ada)
    record("C6 imbalance", ok,
           f"held-out minority recall: rusboost {np.mean(rus):.3f} vs adaboost {np.mean(ada):.3f}")


def test_c7_statistical_tests():
    from scipy import integrate
    same = fisher_randomization_test([0.2, 0.4, 0.9], [0.2, 0.4, 0.9])
    worst = 0.0
    for d in ((1, -1, 0), (0.3, 1.1, 0.7, -0.2), (2, 1, 3, -1, 0.5, 1.5, 0.8)):
        d = np.array(d, float)
        p = fisher_randomization_test(d, np.zeros_like(d), 10000, seed=1)
        worst = max(worst, abs(p - exact_sign_flip_p(d)))
    tail, _ = integrate.quad(lambda t: 1 / (np.pi * (1 + t * t)), 2, np.inf)
    t_p = paired_t_test([1.0, 3.0], [0.0, 0.0])
    ok = same == 1.0 and worst <= 0.05 and abs(t_p - 2 * tail) <= 1e-3 and abs(t_p - 0.2952) <= 1e-3
    record("C7 statistical tests", ok,
           f"identical p={same}, max |p - exact| = {worst:.4f}, t-test p={t_p:.4f} "
           f"(oracle {2 * tail:.4f})")


def _time_extraction(cloud, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        extract_maps(cloud, PipelineConfig())
        best = min(best, time.perf_counter() - t0)
    return best


@pytest.mark.slow
def test_c8_linear_scaling():
    small = generate_surface(SynthParams(seed=1, extent_mm=(50, 50))).cloud
    large = generate_surface(SynthParams(seed=2, extent_mm=(50, 100))).cloud
    t1 = _time_extraction(small, 3)
    t2 = _time_extraction(large, 3)
    ok = t2 <= 2.5 * t1 and t1 <= 60
    record("C8 linear scaling", ok,
           f"{small.count} pts {t1:.2f}s, {large.count} pts {t2:.2f}s, ratio {t2 / t1:.2f}")


def _digest(root):
    h = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return h


def _run_all_commands(root):
    s, m = root / "s", root / "m"
    cmds = [
        ["synth", "--seed", "5", "--extent", "20,20", "--spacing", "0.1", "--out", str(s)],
        ["extract", str(s / "surface.ply"), "--labels", str(s / "surface.labels"),
         "--pixel-size", "0.13", "--out", str(m)],
        ["features", str(m), "--out", str(root / "etm.csv")],
        ["features", str(m), "--representation", "depth", "--families", "ghs,sf,lbp,glcm,hog",
         "--out", str(root / "depth.csv")],
        ["features", str(m), "--representation", "depth", "--out", str(root / "depth94.csv")],
        ["train-eval", str(root / "etm.csv"), "--compare", str(root / "depth94.csv"),
         "--n-rounds", "10", "--seed", "5", "--model-out", str(root / "model.json"),
         "--out", str(root / "metrics.json")],
        ["render", str(m / "ev.gm1"), "--out", str(root / "ev.png")],
        ["render", str(m / "topography.gm1"), "--style", "signed", "--out", str(root / "t.png")],
        ["convert", str(s / "surface.ply"), str(root / "c.xyz")],
        ["convert", str(root / "c.xyz"), str(root / "c.ply")],
        ["convert", str(root / "ev.png"), str(root / "ev_img.gm1")],
    ]
    for c in cmds:
        assert main(c) == 0, c
    return {c[0] for c in cmds}


def test_c9_determinism(tmp_path):
    used = _run_all_commands(tmp_path / "a")
    _run_all_commands(tmp_path / "b")
    a, b = _digest(tmp_path / "a"), _digest(tmp_path / "b")
    # Manifests name their input paths; compare them with the run directory masked.
    for name in ("m/manifest.json", "metrics.json"):
        for d, root in ((a, tmp_path / "a"), (b, tmp_path / "b")):
            text = (root / name).read_text().replace(str(root), "<run>")
            d[name] = hashlib.sha256(text.encode()).hexdigest()
    differing = sorted(k for k in a if a[k] != b.get(k))
    ok = not differing and a.keys() == b.keys() and used == {
        "synth", "extract", "features", "train-eval", "render", "convert"}
    record("C9 determinism", ok,
           f"{len(a)} output files hashed across {len(used)} commands, differing: {differing}")
