import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from abcdcp.core import ValidationError
from abcdcp.pipeline import (
    BandStack,
    LabelArray,
    default_ranges,
    fit_pixel_logistic,
    labels_from_references,
    load_labels,
    load_stack,
    log_heatmap,
    logistic_irls,
    mean_band_image,
    robust_standardize,
    save_heatmaps,
    save_labels,
    save_stack,
)


def test_uniform_image_centering():
    img = np.arange(101, dtype=float).reshape(1, 101, 1, 1)
    out = robust_standardize(BandStack(img)).data
    assert np.median(out) == 0
    assert np.isclose(np.quantile(out, 0.95) - np.quantile(out, 0.05), 1.0)


def test_constant_image_becomes_zero():
    a = np.ones((2, 3, 3, 2))
    a[1, :, :, 1] = np.arange(9).reshape(3, 3)
    with pytest.warns(RuntimeWarning, match="zero quantile spread"):
        out = robust_standardize(BandStack(a)).data
    assert not out[0].any() and not out[1, :, :, 0].any()
    assert out[1, :, :, 1].any()


def test_self_consistent_remeasurement(rng):
    out = robust_standardize(BandStack(rng.standard_normal((2, 7, 9, 3)))).data
    flat = out.reshape(2, -1, 3)
    assert np.allclose(np.median(flat, axis=1), 0, atol=1e-9)
    spread = np.quantile(flat, 0.95, axis=1) - np.quantile(flat, 0.05, axis=1)
    assert np.allclose(spread, 1, atol=1e-9)


@given(st.floats(1e-3, 1e3), st.floats(-1e3, 1e3), st.integers(0, 2**31 - 1))
def test_affine_invariance(a, b, seed):
    x = np.random.default_rng(seed).standard_normal((2, 5, 6, 3))
    s1 = robust_standardize(BandStack(x)).data
    s2 = robust_standardize(BandStack(a * x + b)).data
    assert np.max(np.abs(s1 - s2)) <= 1e-12 * max(1.0, abs(b) / a)


def test_stack_validation():
    with pytest.raises(ValidationError):
        BandStack(np.zeros((2, 3, 3)))
    with pytest.raises(ValidationError):
        BandStack(np.full((1, 2, 2, 2), np.nan))
    with pytest.raises(ValidationError):
        LabelArray(np.full((2, 2, 2), 2))


def test_constant_labels_shortcut(rng):
    labels = np.zeros((2, 2, 10), dtype=np.uint8)
    labels[1, 1] = 1
    labels[0, 1, 5:] = 1
    fit = fit_pixel_logistic(BandStack(rng.standard_normal((3, 2, 2, 10))), LabelArray(labels))
    assert fit.flags[0, 0] == "degenerate-labels" and not fit.probs[0, 0].any()
    assert fit.flags[1, 1] == "degenerate-labels" and np.all(fit.probs[1, 1] == 1)
    assert fit.flags[0, 1] == ""


def test_separable_pixel_stays_finite():
    x = np.linspace(-1, 1, 40)
    y = (x > 0).astype(np.uint8)
    stack = BandStack(x.reshape(1, 1, 1, 40))
    fit = fit_pixel_logistic(stack, LabelArray(y.reshape(1, 1, 40)))
    assert np.all(np.isfinite(fit.beta))
    assert np.all((fit.probs > 0) & (fit.probs < 1))


def test_uninformative_covariates_give_label_mean(rng):
    labels = (rng.random((3, 4, 30)) < 0.3).astype(np.uint8)
    labels[..., 0] = 1
    labels[..., 1] = 0
    fit = fit_pixel_logistic(BandStack(np.zeros((3, 3, 4, 30))), LabelArray(labels))
    assert np.allclose(fit.probs, labels.mean(axis=2, keepdims=True), atol=1e-6)


def test_irls_matches_newton_oracle(rng):
    n = 300
    X = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
    y = (rng.random(n) < expit(X @ [0.2, -1.0, 0.7])).astype(float)
    b, conv, _ = logistic_irls(X[None], y[None], ridge=0.0)
    # Score equations vanish at the unpenalized optimum.
    score = X.T @ (y - expit(X @ b[0]))
    assert conv[0] and np.max(np.abs(score)) < 1e-8


def test_non_convergence_is_flagged(rng):
    stack = BandStack(rng.standard_normal((2, 1, 2, 50)))
    labels = LabelArray((rng.random((1, 2, 50)) < 0.5).astype(np.uint8))
    fit = fit_pixel_logistic(stack, labels, max_iter=1)
    assert np.all(fit.flags == "not-converged") and fit.notes


def test_labels_from_references():
    m1 = np.array([[0, 1], [0, 0]])
    m2 = np.array([[1, 1], [0, 0]])
    lab = labels_from_references([m2, m1], [6, 3], 8).data
    assert not lab[..., :2].any()
    assert np.array_equal(lab[..., 2], m1) and np.array_equal(lab[..., 5], m2)
    assert np.array_equal(lab[..., 7], m2)


def test_mean_band_image(rng):
    a = np.stack([np.full((1, 1, 1), v) for v in (1.0, 2.0, 3.0)])
    assert mean_band_image(BandStack(a))[0, 0, 0] == 2.0
    single = rng.standard_normal((1, 3, 4, 5))
    assert np.array_equal(mean_band_image(BandStack(single)), single[0])
    x = rng.standard_normal((3, 4, 5, 6))
    naive = np.zeros((4, 5, 6))
    for i in range(4):
        for j in range(5):
            for t in range(6):
                naive[i, j, t] = sum(x[b, i, j, t] for b in range(3)) / 3
    assert np.allclose(mean_band_image(BandStack(x)), naive, atol=1e-15)


def test_identical_bands_commute_with_rescaling(rng):
    band = rng.standard_normal((4, 5, 6))
    stack = BandStack(np.stack([band, band, band]))
    left = mean_band_image(robust_standardize(stack))
    right = robust_standardize(BandStack(mean_band_image(stack)[None])).data[0]
    assert np.allclose(left, right, atol=1e-12)


def test_heatmaps(tmp_path):
    W = np.full((6, 6, 30), 0.5)
    pair = log_heatmap(W, ((1, 3), (2, 5)), (1, 10), (11, 20))
    assert pair.before.shape == (3, 4) and not pair.difference.any()
    W[0, 0, :] = 0.0
    pair = log_heatmap(W, ((1, 2), (1, 2)), (1, 5), (6, 10), floor=1e-3)
    assert pair.before[0, 0] == pytest.approx(np.log(1e-3))
    side = save_heatmaps(pair, tmp_path, "h", {"tau_hat": 5})
    header = (tmp_path / "h_before.pgm").read_bytes()[:11]
    assert header == b"P5\n2 2\n255\n"
    assert json.loads((tmp_path / "h.json").read_text())["tau_hat"] == 5
    assert side["block"] == [[1, 2], [1, 2]]
    with pytest.raises(ValidationError):
        log_heatmap(W, ((1, 2), (1, 2)), (0, 5), (6, 10))


def test_default_ranges():
    assert default_ranges(50, 100) == ((41, 50), (51, 60))
    assert default_ranges(3, 8) == ((1, 3), (4, 8))


def test_stack_and_label_round_trip(tmp_path, rng):
    stack = BandStack(rng.standard_normal((3, 4, 5, 6)), ("B4", "B3", "B2"))
    save_stack(stack, tmp_path / "s.json", "f64")
    back = load_stack(tmp_path / "s.json")
    assert back.band_names == ("B4", "B3", "B2") and np.array_equal(back.data, stack.data)
    # Payload is time-major: first values are band 1 then band 2 at t=1.
    raw = np.fromfile(tmp_path / "s.bin", dtype="<f8")
    assert np.array_equal(raw[:20], stack.data[0, :, :, 0].ravel())
    assert np.array_equal(raw[20:40], stack.data[1, :, :, 0].ravel())
    labels = LabelArray((rng.random((4, 5, 6)) < 0.5).astype(np.uint8))
    save_labels(labels, tmp_path / "l.json")
    assert np.array_equal(load_labels(tmp_path / "l.json").data, labels.data)
