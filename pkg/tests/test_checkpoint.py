import numpy as np
import pytest

from argsim.checkpoint import load_checkpoint, read_header, save_checkpoint
from argsim.encoder import EncoderConfig, EncoderParams
from argsim.errors import IntegrityError


@pytest.fixture()
def cfg():
    return EncoderConfig(vocab_size=12, num_layers=1, hidden_size=8, num_heads=2,
                         ff_size=12, max_len=10)


def test_save_load_round_trips_values(cfg, tmp_path):
    params = EncoderParams.init(cfg, seed=5)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, cfg, vocab_sha256="abc123", meta={"seed": 5})
    loaded, loaded_cfg, vocab_hash, meta = load_checkpoint(path)
    assert loaded_cfg == cfg
    assert vocab_hash == "abc123"
    assert meta == {"seed": 5}
    assert loaded.names() == params.names()
    for name in params.names():
        np.testing.assert_array_equal(loaded[name].data, params[name].data)


def test_save_load_save_is_byte_identical(cfg, tmp_path):
    params = EncoderParams.init(cfg, seed=5)
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(p1, params, cfg, vocab_sha256="x", meta={"k": 1})
    loaded, loaded_cfg, vocab_hash, meta = load_checkpoint(p1)
    save_checkpoint(p2, loaded, loaded_cfg, vocab_hash, meta)
    assert p1.read_bytes() == p2.read_bytes()


def test_manifest_describes_payload(cfg, tmp_path):
    params = EncoderParams.init(cfg, seed=5)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, cfg, vocab_sha256="x")
    header = read_header(path)
    assert header["format_version"] == 1
    names = [e["name"] for e in header["manifest"]]
    assert names == params.names()
    total = sum(e["nbytes"] for e in header["manifest"])
    assert total == 8 * params.count()
    offsets = [e["offset"] for e in header["manifest"]]
    assert offsets == sorted(offsets)


def test_rejects_non_checkpoint_file(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(IntegrityError, match="magic"):
        read_header(path)


def test_rejects_truncated_payload(cfg, tmp_path):
    params = EncoderParams.init(cfg, seed=5)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, cfg, vocab_sha256="x")
    blob = path.read_bytes()
    path.write_bytes(blob[:-16])
    with pytest.raises(IntegrityError, match="truncated"):
        load_checkpoint(path)


def test_float32_params_round_trip_exactly(cfg, tmp_path):
    params = EncoderParams.init(cfg, seed=5, dtype=np.float32)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, cfg, vocab_sha256="x")
    loaded, _, _, _ = load_checkpoint(path)
    for name in params.names():
        assert loaded[name].dtype == np.float32
        np.testing.assert_array_equal(loaded[name].data, params[name].data)
