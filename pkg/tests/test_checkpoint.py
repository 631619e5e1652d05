"""SSGM checkpoint format."""

import io

import numpy as np
import pytest

from ssgdit.checkpoint import load_model, read_model, save_model, write_model
from ssgdit.errors import FormatError
from ssgdit.model import ModelConfig, freeze_backbone, init_model

TINY = ModelConfig(
    frames=2, height=4, width=4, channels=2, patch=(1, 2, 2),
    d_model=8, heads=2, blocks=1, ffn_mult=2, d_cond=8,
    n_text_tokens=2, timesteps=10,
)


def test_fresh_model_roundtrips_bit_exact(tmp_path):
    # fresh initializations live on the f32 grid, so the f32 container is lossless
    model = init_model(TINY, 7)
    path = tmp_path / "m.ssgm"
    save_model(model, path)
    back = load_model(path)
    assert back.config == model.config
    assert set(back.params) == set(model.params)
    for name in model.params:
        assert np.array_equal(back.params[name], model.params[name]), name
        assert back.frozen[name] == model.frozen.get(name, False)


def test_save_load_save_bytes_identical(tmp_path):
    model = init_model(TINY, 1)
    # nudge off the f32 grid, as training would
    model.params["embed.w"] += 1e-9
    buf1 = io.BytesIO()
    write_model(model, buf1)
    buf1.seek(0)
    back = read_model(buf1)
    buf2 = io.BytesIO()
    write_model(back, buf2)
    assert buf1.getvalue() == buf2.getvalue()


def test_frozen_flags_roundtrip(tmp_path):
    model = freeze_backbone(init_model(TINY, 2))
    path = tmp_path / "f.ssgm"
    save_model(model, path)
    back = load_model(path)
    assert back.frozen == model.frozen
    assert set(back.trainable_names()) == set(model.adapter_names())


def test_identical_models_identical_bytes():
    a, b = init_model(TINY, 5), init_model(TINY, 5)
    buf_a, buf_b = io.BytesIO(), io.BytesIO()
    write_model(a, buf_a)
    write_model(b, buf_b)
    assert buf_a.getvalue() == buf_b.getvalue()


def test_bad_magic_and_truncation():
    with pytest.raises(FormatError):
        read_model(io.BytesIO(b"NOPE" + b"\x00" * 32))
    model = init_model(TINY, 0)
    buf = io.BytesIO()
    write_model(model, buf)
    data = buf.getvalue()
    with pytest.raises(FormatError):
        read_model(io.BytesIO(data[: len(data) // 3]))


def test_nonfinite_tensor_rejected():
    model = init_model(TINY, 0)
    model.params["embed.w"][0, 0] = np.inf
    buf = io.BytesIO()
    write_model(model, buf)
    buf.seek(0)
    with pytest.raises(FormatError):
        read_model(buf)
