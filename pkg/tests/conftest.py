import numpy as np
import pytest

from ssgdit.bundle import FeatureBundle


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_bundle(rng, grid_h=None, grid_w=None, d_e=None, text="cap"):
    """Small random-but-valid bundle for format tests."""
    grid_h = grid_h or int(rng.integers(1, 6))
    grid_w = grid_w or int(rng.integers(1, 6))
    d_e = d_e or int(rng.integers(1, 9))
    n = grid_h * grid_w
    embed = rng.standard_normal(d_e)
    embed = embed / np.linalg.norm(embed)
    # round-trip through f32 so the in-memory bundle matches its file form
    f32 = lambda a: a.astype(np.float32).astype(np.float64)
    return FeatureBundle(
        grid_h=grid_h,
        grid_w=grid_w,
        d_e=d_e,
        image_h=int(rng.integers(1, 64)),
        image_w=int(rng.integers(1, 64)),
        attn_feats=f32(rng.standard_normal((n, d_e))),
        mlp_feats=f32(rng.standard_normal((n, d_e))),
        text_embed=f32(embed),
        text=text,
    )
