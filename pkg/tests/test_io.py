"""Artifact persistence: container round-trips, canonical JSON, atomicity."""

import os

import numpy as np
import pytest
import torch

from trajsteer.io import (
    canonical_json,
    load_attention,
    load_latent,
    save_attention,
    save_frames_png,
    save_latent,
    write_json_atomic,
)
from trajsteer.testbed import AttentionStack


class TestLatentContainer:
    def test_round_trip(self, tmp_path, rng):
        z = torch.randn(4, 4, 8, 8, generator=rng, dtype=torch.float64)
        path = tmp_path / "z.bin"
        save_latent(path, z)
        back = load_latent(path)
        assert back.shape == (4, 4, 8, 8)
        assert np.allclose(back, z.numpy().astype(np.float32))

    def test_bitwise_reproducible(self, tmp_path, rng):
        z = torch.randn(2, 3, 4, 4, generator=rng, dtype=torch.float64)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_latent(p1, z)
        save_latent(p2, z)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_latent(path)

    def test_truncated_payload_rejected(self, tmp_path, rng):
        z = torch.randn(2, 2, 2, 2, generator=rng, dtype=torch.float64)
        path = tmp_path / "z.bin"
        save_latent(path, z)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="header says"):
            load_latent(path)

    def test_no_temp_residue(self, tmp_path, rng):
        save_latent(tmp_path / "z.bin", torch.zeros(1, 1, 2, 2))
        assert sorted(os.listdir(tmp_path)) == ["z.bin"]


class TestCanonicalJson:
    def test_key_order_independent(self):
        assert canonical_json({"b": 1, "a": 2}) == canonical_json({"a": 2, "b": 1})

    def test_write_is_canonical(self, tmp_path):
        path = tmp_path / "r.json"
        write_json_atomic(path, {"z": [1, 2], "a": {"y": 1, "x": 2}})
        assert path.read_text() == canonical_json({"a": {"x": 2, "y": 1}, "z": [1, 2]})


class TestFrames:
    def test_png_export(self, tmp_path, rng):
        pixels = torch.randn(3, 3, 8, 8, generator=rng, dtype=torch.float64)
        paths = save_frames_png(tmp_path / "frames", pixels)
        assert len(paths) == 3
        assert all(os.path.exists(p) for p in paths)

    def test_deterministic_bytes(self, tmp_path, rng):
        pixels = torch.randn(1, 3, 8, 8, generator=rng, dtype=torch.float64)
        a = save_frames_png(tmp_path / "a", pixels)
        b = save_frames_png(tmp_path / "b", pixels)
        with open(a[0], "rb") as f1, open(b[0], "rb") as f2:
            assert f1.read() == f2.read()


class TestAttentionArtifacts:
    def test_round_trip(self, tmp_path, rng):
        stacks = {
            0: AttentionStack(torch.rand(2, 3, 4, 8, 8, generator=rng, dtype=torch.float64)),
            5: AttentionStack(torch.rand(2, 3, 4, 8, 8, generator=rng, dtype=torch.float64)),
        }
        npy, meta_path = save_attention(tmp_path / "attention", stacks)
        maps, meta = load_attention(tmp_path / "attention")
        assert maps.shape == (2, 3, 4, 8, 8)
        assert meta["step_indices"] == [0, 5]
        assert np.allclose(
            maps[1], stacks[5].aggregated().numpy().astype(np.float32)
        )

    def test_bitwise_reproducible(self, tmp_path, rng):
        stack = {0: AttentionStack(torch.rand(1, 2, 3, 4, 4, generator=rng, dtype=torch.float64))}
        save_attention(tmp_path / "x", stack)
        save_attention(tmp_path / "y", stack)
        assert (tmp_path / "x.npy").read_bytes() == (tmp_path / "y.npy").read_bytes()
