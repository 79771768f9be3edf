import struct

import numpy as np
import pytest

from mirep.checkpoint import (CKPT_MAGIC, CKPT_VERSION, load_checkpoint,
                              save_checkpoint)
from mirep.model import EncoderConfig, init_model
from mirep.tokenizer import TokenizerConfig

TOK = TokenizerConfig(k_t=5, s_t=2, F=2, pool_len=2, D=8)
ENC = EncoderConfig(layers=1, D=8, heads=2, ff_mult=2, dropout=0.0,
                    decoder_layers=1, max_tokens=8)


def _state(seed=0):
    return init_model(TOK, ENC, n_channels=3, n_classes=2, seed=seed)


class TestRoundTrip:
    def test_parameters_identical(self, tmp_path):
        st = _state()
        p = tmp_path / "m.ckpt"
        save_checkpoint(st, p)
        back, extra = load_checkpoint(p)
        assert extra == {}
        assert sorted(back.params) == sorted(st.params)
        for k in st.params:
            np.testing.assert_array_equal(back.params[k].data,
                                          st.params[k].data.astype(np.float32))

    def test_configs_restored(self, tmp_path):
        st = _state()
        p = tmp_path / "m.ckpt"
        save_checkpoint(st, p, extra={"labels": ["left_hand", "right_hand"]})
        back, extra = load_checkpoint(p)
        assert back.tok_cfg == TOK
        assert back.enc_cfg == ENC
        assert back.n_channels == 3 and back.n_classes == 2
        assert extra == {"labels": ["left_hand", "right_hand"]}

    def test_save_is_deterministic(self, tmp_path):
        st = _state()
        a = tmp_path / "a.ckpt"
        b = tmp_path / "b.ckpt"
        save_checkpoint(st, a)
        save_checkpoint(st, b)
        assert a.read_bytes() == b.read_bytes()

    def test_no_partial_file_left(self, tmp_path):
        p = tmp_path / "m.ckpt"
        save_checkpoint(_state(), p)
        assert not list(tmp_path.glob("*.part"))


class TestCorruption:
    def test_bad_magic(self, tmp_path):
        p = tmp_path / "m.ckpt"
        save_checkpoint(_state(), p)
        blob = bytearray(p.read_bytes())
        blob[:4] = b"NOPE"
        p.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(p)

    def test_flipped_byte_fails_crc(self, tmp_path):
        p = tmp_path / "m.ckpt"
        save_checkpoint(_state(), p)
        blob = bytearray(p.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        p.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="checksum"):
            load_checkpoint(p)

    def test_version_bump_rejected(self, tmp_path):
        import zlib
        p = tmp_path / "m.ckpt"
        save_checkpoint(_state(), p)
        blob = bytearray(p.read_bytes())
        body = bytearray(blob[4:-4])
        struct.pack_into("<I", body, 0, CKPT_VERSION + 1)
        crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
        p.write_bytes(CKPT_MAGIC + bytes(body) + struct.pack("<I", crc))
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(p)
