import numpy as np
import pytest

from skipdiff.checkpoint import load_checkpoint, save_checkpoint
from skipdiff.errors import ConfigError
from skipdiff.rng import RngStream


def test_roundtrip_bit_exact(tmp_path):
    rng = RngStream(7)
    params = {
        "emb": rng.normal((5, 3)) * 1e6,
        "tiny": rng.normal((2,)) * 1e-300,
        "block0.w": rng.normal((4, 4)),
    }
    path = tmp_path / "model.bin"
    save_checkpoint(path, "exploiter", {"layers": 2}, params,
                    ["a", "b"], dataset_tag="toy")
    ck = load_checkpoint(path)
    assert ck.kind == "exploiter"
    assert ck.config == {"layers": 2}
    assert ck.vocab_tokens == ["a", "b"]
    assert ck.dataset_tag == "toy"
    assert set(ck.params) == set(params)
    for name in params:
        assert ck.params[name].tobytes() == params[name].tobytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ConfigError):
        load_checkpoint(path)


def test_bad_version_rejected(tmp_path):
    path = tmp_path / "model.bin"
    save_checkpoint(path, "scheduler", {}, {"w": np.zeros(2)}, [], "")
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(ConfigError):
        load_checkpoint(path)


def test_nonfinite_weights_rejected(tmp_path):
    with pytest.raises(ValueError):
        save_checkpoint(tmp_path / "x.bin", "exploiter", {},
                        {"w": np.array([1.0, np.nan])}, [], "")
