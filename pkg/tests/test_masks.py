"""Mask-pipeline operations: normalization, enhancement, pooling, fusion,
bicubic resampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssgdit.bundle import synth_bundle
from ssgdit.errors import DegenerateInputError, ValidationError
from ssgdit.masks import (
    ScoreMask,
    avg_pool_3x3,
    bicubic_upsample,
    enhance,
    fuse_guidance,
    inverse_normalize,
    l2_normalize,
    minmax_normalize,
    prob_or,
    response_masks,
    to_guidance,
)


def mask(values):
    return ScoreMask(np.asarray(values, dtype=np.float64))


# --- l2_normalize


def test_l2_normalize_345():
    assert np.allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8])


def test_l2_normalize_idempotent_on_unit():
    v = np.array([1.0, 0.0, 0.0])
    assert np.allclose(l2_normalize(v), v)
    assert abs(np.linalg.norm(l2_normalize(np.random.default_rng(1).standard_normal(8))) - 1.0) < 1e-6


def test_l2_normalize_zero_vector():
    with pytest.raises(DegenerateInputError):
        l2_normalize([0.0, 0.0])


# --- response_masks


def test_response_masks_zero_features(rng):
    from conftest import random_bundle

    bundle = random_bundle(rng, grid_h=3, grid_w=2, d_e=4)
    object.__setattr__(bundle, "attn_feats", np.zeros_like(bundle.attn_feats))
    m_attn, _ = response_masks(bundle)
    assert np.all(m_attn.values == 0.0)
    assert m_attn.values.shape == (3, 2)


def test_response_masks_unit_alignment(rng):
    from conftest import random_bundle

    bundle = random_bundle(rng, grid_h=2, grid_w=2, d_e=3)
    feats = bundle.attn_feats.copy()
    feats[1] = bundle.text_embed
    object.__setattr__(bundle, "attn_feats", feats)
    m_attn, _ = response_masks(bundle)
    assert m_attn.values[0, 1] == pytest.approx(float(bundle.text_embed @ bundle.text_embed), abs=1e-12)


def test_response_masks_synth_argmax():
    bundle = synth_bundle(7, 24, 24, 16, 64, 64, (0.25, 0.5))
    m_attn, _ = response_masks(bundle)
    i, j = np.unravel_index(np.argmax(m_attn.values), m_attn.values.shape)
    assert abs(i - 12) <= 2 and abs(j - 6) <= 2


# --- minmax / enhance / inverse


def test_minmax_basic():
    assert np.allclose(minmax_normalize(mask([[1.0, 2.0, 3.0]])).values, [[0.0, 0.5, 1.0]])


def test_minmax_degenerate():
    assert np.all(minmax_normalize(mask([[5.0, 5.0, 5.0]])).values == 0.5)


def test_minmax_idempotent_on_normalized():
    m = mask([[0.0, 0.25, 1.0]])
    assert np.array_equal(minmax_normalize(m).values, m.values)


def test_minmax_preserves_argmax(rng):
    for _ in range(20):
        m = mask(rng.standard_normal((5, 7)))
        assert np.argmax(minmax_normalize(m).values) == np.argmax(m.values)


def test_enhance_identity_and_square():
    m = mask([[0.0, 0.5, 1.0]])
    assert np.array_equal(enhance(m, 1.0).values, m.values)
    assert np.allclose(enhance(m, 2.0).values, [[0.0, 0.25, 1.0]])
    assert enhance(m, 3.7).values[0, 0] == 0.0
    assert enhance(m, 3.7).values[0, 2] == 1.0


def test_enhance_monotone_and_argmax(rng):
    m = minmax_normalize(mask(rng.standard_normal((6, 6))))
    e = enhance(m, 2.0)
    order_in = np.argsort(m.values.ravel())
    order_out = np.argsort(e.values.ravel())
    assert np.array_equal(order_in, order_out)


def test_enhance_rejects_out_of_range():
    with pytest.raises(ValidationError):
        enhance(mask([[1.5]]), 2.0)
    with pytest.raises(ValidationError):
        enhance(mask([[0.5]]), 0.0)


def test_inverse_normalize():
    assert np.allclose(inverse_normalize(mask([[1.0, 2.0, 3.0]])).values, [[1.0, 0.5, 0.0]])
    assert np.all(inverse_normalize(mask([[2.0, 2.0]])).values == 0.5)


def test_inverse_is_involution_after_normalization(rng):
    m = mask(rng.standard_normal((4, 5)))
    twice = inverse_normalize(inverse_normalize(m))
    assert np.allclose(twice.values, minmax_normalize(m).values, atol=1e-12)


# --- avg_pool_3x3


def test_pool_constant_fixed_point():
    for c in (0.0, 0.5, 1.0, 0.3333333333333333):
        m = mask(np.full((4, 4), c))
        assert np.array_equal(avg_pool_3x3(m).values, m.values)


def test_pool_center_spike():
    m = np.zeros((3, 3))
    m[1, 1] = 1.0
    assert avg_pool_3x3(mask(m)).values[1, 1] == pytest.approx(1.0 / 9.0)


def test_pool_1x1_replicate():
    assert avg_pool_3x3(mask([[0.7]])).values[0, 0] == 0.7


def test_pool_never_expands_range(rng):
    for _ in range(30):
        m = mask(rng.uniform(-3, 3, (5, 6)))
        out = avg_pool_3x3(m).values
        assert out.min() >= m.values.min()
        assert out.max() <= m.values.max()


# --- prob_or


def test_prob_or_values():
    a, b = mask([[0.5]]), mask([[0.5]])
    assert prob_or(a, b).values[0, 0] == pytest.approx(0.75)


def test_prob_or_identity_and_absorber(rng):
    x = mask(rng.uniform(0, 1, (4, 4)))
    zeros = mask(np.zeros((4, 4)))
    ones = mask(np.ones((4, 4)))
    assert np.array_equal(prob_or(x, zeros).values, x.values)
    assert np.all(prob_or(x, ones).values == 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=6, max_size=6),
       st.lists(st.floats(0, 1), min_size=6, max_size=6))
def test_prob_or_algebra(avals, bvals):
    a = mask(np.array(avals).reshape(2, 3))
    b = mask(np.array(bvals).reshape(2, 3))
    ab = prob_or(a, b).values
    ba = prob_or(b, a).values
    assert np.array_equal(ab, ba)
    assert np.all(ab >= np.maximum(a.values, b.values))
    assert np.all(ab <= 1.0)


def test_prob_or_monotone(rng):
    a = mask(rng.uniform(0, 1, (3, 3)))
    b = mask(rng.uniform(0, 1, (3, 3)))
    bumped = mask(np.minimum(1.0, b.values + 0.05))
    assert np.all(prob_or(a, bumped).values >= prob_or(a, b).values)


def test_prob_or_shape_and_range_validation():
    with pytest.raises(ValidationError):
        prob_or(mask([[0.5]]), mask([[0.5, 0.5]]))
    with pytest.raises(ValidationError):
        prob_or(mask([[1.5]]), mask([[0.5]]))


# --- fuse_guidance


def test_fuse_constant_masks():
    m_attn = mask(np.full((4, 4), 2.0))
    m_mlp = mask(np.full((4, 4), 7.0))
    fused = fuse_guidance(m_attn, m_mlp, gamma=2.0)
    # degenerate branches: 0.5^2 = 0.25 and 0.5 -> 0.25 + 0.5 - 0.125
    assert np.allclose(fused.values, 0.625)


def reference_fuse(m_attn, m_mlp, gamma, pool):
    """Straight-line reimplementation with explicit loops (test oracle)."""
    h, w = m_attn.shape

    def norm(m):
        lo, hi = m.min(), m.max()
        if hi - lo < 1e-12:
            return np.full_like(m, 0.5)
        return (m - lo) / (hi - lo)

    def pool3(m):
        out = np.zeros_like(m)
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        ii = min(max(i + di, 0), h - 1)
                        jj = min(max(j + dj, 0), w - 1)
                        acc += m[ii, jj]
                out[i, j] = acc / 9.0
        return np.clip(out, m.min(), m.max())

    a = norm(m_attn) ** gamma
    b = 1.0 - norm(m_mlp)
    if pool:
        a, b = pool3(a), pool3(b)
    return a + b - a * b


def test_fuse_matches_reference_composition():
    bundle = synth_bundle(7, 12, 12, 8, 48, 48, (0.3, 0.6))
    m_attn, m_mlp = response_masks(bundle)
    fused = fuse_guidance(m_attn, m_mlp, gamma=2.0, pool=True)
    ref = reference_fuse(m_attn.values, m_mlp.values, 2.0, True)
    assert np.allclose(fused.values, ref, atol=1e-9)
    assert np.argmax(fused.values) == np.argmax(ref)
    assert fused.values.mean() == pytest.approx(ref.mean(), abs=1e-9)


def test_fuse_pool_toggle_differs_on_spike():
    m = np.zeros((6, 6))
    m[2, 3] = 1.0
    m_attn = mask(m)
    m_mlp = mask(np.zeros((6, 6)))
    with_pool = fuse_guidance(m_attn, m_mlp, pool=True)
    without = fuse_guidance(m_attn, m_mlp, pool=False)
    assert not np.array_equal(with_pool.values, without.values)
    # 3x3 smoothing oracle: the spike's pooled value is 1/9
    assert with_pool.values[2, 3] != without.values[2, 3]


def test_fuse_single_branches():
    bundle = synth_bundle(3, 8, 8, 4, 32, 32, (0.5, 0.5))
    m_attn, m_mlp = response_masks(bundle)
    attn_only = fuse_guidance(m_attn, m_mlp, branches="attn")
    ref = avg_pool_3x3(enhance(minmax_normalize(m_attn), 2.0))
    assert np.array_equal(attn_only.values, ref.values)
    mlp_only = fuse_guidance(m_attn, m_mlp, branches="mlp")
    ref2 = avg_pool_3x3(inverse_normalize(m_mlp))
    assert np.array_equal(mlp_only.values, ref2.values)


def test_fuse_range_safety(rng):
    for _ in range(100):
        a = mask(rng.standard_normal((5, 5)) * rng.uniform(0.1, 10))
        b = mask(rng.standard_normal((5, 5)) * rng.uniform(0.1, 10))
        out = fuse_guidance(a, b).values
        assert out.min() >= 0.0 and out.max() <= 1.0


# --- bicubic


def cubic_kernel_reference(d):
    a = -0.5
    d = abs(d)
    if d <= 1.0:
        return (a + 2) * d**3 - (a + 3) * d**2 + 1
    if d < 2.0:
        return a * (d**3 - 5 * d**2 + 8 * d - 4)
    return 0.0


def test_bicubic_constant_any_size(rng):
    m = mask(np.full((3, 5), 0.42))
    out = bicubic_upsample(m, 7, 11).values
    assert np.allclose(out, 0.42, atol=1e-12)


def test_bicubic_identity_same_size(rng):
    m = mask(rng.standard_normal((4, 6)))
    assert np.array_equal(bicubic_upsample(m, 4, 6).values, m.values)


def test_bicubic_2x2_to_4x4_matches_scalar_reference():
    m = mask([[0.0, 1.0], [0.0, 1.0]])
    out = bicubic_upsample(m, 4, 4).values
    # 1D reference along a row: columns of [0, 1] upsampled to 4 samples
    src = [0.0, 1.0]
    expected_row = []
    for o in range(4):
        x = (o + 0.5) * (2 / 4) - 0.5
        base = int(np.floor(x))
        frac = x - base
        val = 0.0
        for k, off in enumerate((-1, 0, 1, 2)):
            idx = min(max(base + off, 0), 1)
            val += cubic_kernel_reference(frac - off) * src[idx]
        expected_row.append(val)
    for r in range(4):
        assert np.allclose(out[r], expected_row, atol=1e-12)


def test_bicubic_rejects_zero_target():
    with pytest.raises(ValidationError):
        bicubic_upsample(mask([[1.0]]), 0, 4)


# --- to_guidance


def test_to_guidance_values():
    g = to_guidance(mask([[-0.1, 0.4, 0.9]]))
    assert np.allclose(g.values, [[0.0, 0.5, 1.0]])
    assert np.all(to_guidance(mask([[3.0, 3.0]])).values == 0.5)


def test_to_guidance_range_property(rng):
    for _ in range(50):
        g = to_guidance(mask(rng.standard_normal((4, 4)) * 5))
        assert g.values.min() >= 0.0 and g.values.max() <= 1.0
