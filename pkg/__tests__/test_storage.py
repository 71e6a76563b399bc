import dataclasses
import json

import numpy as np
import pytest

from imanip.controller.memory_controller import ReplayBuffer, build_memory
from imanip.core.errors import CodecError
from imanip.database import checkpoint_store, demo_store, manifest_store, memory_store
from imanip.database.codec import Reader, Writer
from imanip.model.world import VoxelObservation


def _same_samples(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert (x.skill, x.slot, x.demo_id, x.seed, x.action) == (y.skill, y.slot, y.demo_id, y.seed, y.action)
        assert np.array_equal(x.observation.grid, y.observation.grid)
        assert np.array_equal(x.observation.proprio, y.observation.proprio)
        assert x.observation.tokens == y.observation.tokens


class TestDemoFiles:
    def test_round_trip(self, demo_cache, tmp_path):
        demos = demo_cache("stack_two") + demo_cache("sweep_to_zone")
        path = demo_store.save_demos(str(tmp_path / "demos.imdemo"), demos)
        loaded = demo_store.load_demos(path)
        assert [(d.skill, d.variation, d.seed, d.demo_id) for d in loaded] == [
            (d.skill, d.variation, d.seed, d.demo_id) for d in demos
        ]
        for a, b in zip(demos, loaded):
            assert a.trajectory == b.trajectory
            assert a.keyframes == b.keyframes
            assert a.instruction == b.instruction
            _same_samples(a.samples, b.samples)
        assert demo_store.encode_demos(loaded) == demo_store.encode_demos(demos)

    def test_json_view(self, demo_cache):
        demos = demo_cache("open_drawer")
        text = demo_store.demos_to_json(demos)
        assert json.loads(text)["format"] == "IMDEMO1"
        loaded = demo_store.demos_from_json(text)
        assert [d.trajectory for d in loaded] == [d.trajectory for d in demos]
        with pytest.raises(CodecError):
            demo_store.demos_from_json('{"demonstrations": [{"skill": "open_drawer"}]}')
        with pytest.raises(CodecError):
            demo_store.demos_from_json("not json")

    def test_corruption_is_detected(self, demo_cache):
        blob = bytearray(demo_store.encode_demos(demo_cache("slide_block")))
        blob[len(blob) // 2] ^= 0xFF
        with pytest.raises(CodecError, match="CRC32"):
            demo_store.decode_demos(bytes(blob))

    def test_wrong_magic(self, demo_cache):
        blob = demo_store.encode_demos(demo_cache("slide_block"))
        with pytest.raises(CodecError, match="magic"):
            checkpoint_store.decode_checkpoint(blob)

    def test_too_short(self):
        with pytest.raises(CodecError):
            demo_store.decode_demos(b"IMDEMO1")

    def test_truncated_body_with_valid_crc(self):
        writer = Writer(demo_store.DEMO_MAGIC)
        writer.u32(3)
        with pytest.raises(CodecError, match="truncated"):
            demo_store.decode_demos(writer.finish())

    def test_unsupported_version(self):
        writer = Writer(demo_store.DEMO_MAGIC, version=2)
        writer.u32(0)
        with pytest.raises(CodecError, match="version"):
            demo_store.decode_demos(writer.finish())

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            demo_store.load_demos(str(tmp_path / "absent.imdemo"))


class TestCodec:
    def test_scalars_and_arrays(self):
        writer = Writer("TEST")
        writer.u8(7)
        writer.u64(2 ** 40)
        writer.f64(-0.125)
        writer.text("pick_place")
        writer.array(np.arange(6, dtype=np.float64).reshape(2, 3), "float64")
        reader = Reader(writer.finish(), "TEST")
        assert reader.u8() == 7
        assert reader.u64() == 2 ** 40
        assert reader.f64() == -0.125
        assert reader.text() == "pick_place"
        assert np.array_equal(reader.array("float64"), np.arange(6.0).reshape(2, 3))
        reader.done()

    def test_trailing_bytes(self):
        writer = Writer("TEST")
        writer.u8(1)
        reader = Reader(writer.finish(), "TEST")
        with pytest.raises(CodecError, match="trailing"):
            reader.done()

    def test_out_of_range_value(self):
        with pytest.raises(CodecError):
            Writer("TEST").u8(300)


class TestCheckpoints:
    def test_bit_exact_round_trip(self, tiny_model, tiny_config, make_batch, tmp_path):
        tiny_model.extend_for_skill("pick_place")
        tiny_model.register_skill("slide_block", "base")
        path = checkpoint_store.save_checkpoint(str(tmp_path / "model.imckpt"), tiny_model)
        loaded = checkpoint_store.load_checkpoint(path)
        assert loaded.config == tiny_model.config
        assert loaded.prompts == tiny_model.prompts
        assert loaded.weight_blocks == tiny_model.weight_blocks
        assert loaded.skills == tiny_model.skills
        assert list(loaded.params) == list(tiny_model.params)
        for name, tensor in tiny_model.params.items():
            assert loaded.params[name].data.tobytes() == tensor.data.tobytes()
            assert loaded.params.is_trainable(name) == tiny_model.params.is_trainable(name)
        batch = make_batch(tiny_config, 2)
        assert np.array_equal(loaded(batch).trans.data, tiny_model(batch).trans.data)
        assert checkpoint_store.encode_checkpoint(loaded) == checkpoint_store.encode_checkpoint(tiny_model)

    def test_corrupted_checkpoint(self, tiny_model):
        blob = bytearray(checkpoint_store.encode_checkpoint(tiny_model))
        blob[-10] ^= 0x01
        with pytest.raises(CodecError):
            checkpoint_store.decode_checkpoint(bytes(blob))


class TestMemoryFiles:
    def test_round_trip(self, tiny_model, demo_cache, tmp_path):
        buffer = build_memory(
            {"slide_block": demo_cache("slide_block"), "press_two": demo_cache("press_two")},
            tiny_model,
            2,
            "farthest-entropy",
            np.random.default_rng(0),
        )
        path = memory_store.save_memory(str(tmp_path / "memory.immem"), buffer)
        loaded = memory_store.load_memory(path)
        assert loaded.quota == 2
        assert list(loaded.slots) == list(buffer.slots)
        assert loaded.provenance() == buffer.provenance()
        _same_samples(loaded.samples(), buffer.samples())

    def test_non_binary_grid_rejected(self, demo_cache):
        sample = demo_cache("slide_block")[0].samples[0]
        blurred = VoxelObservation(sample.observation.grid * 0.5, sample.observation.proprio, sample.observation.tokens)
        buffer = ReplayBuffer(quota=1)
        buffer.add("slide_block", 0, [dataclasses.replace(sample, observation=blurred)])
        with pytest.raises(CodecError):
            memory_store.encode_memory(buffer)


class TestManifests:
    def test_json_is_canonical(self):
        assert manifest_store.dump_json({"b": 1, "a": [1, 2]}) == '{\n  "a": [\n    1,\n    2\n  ],\n  "b": 1\n}\n'

    def test_read_manifest_errors(self, tmp_path):
        broken = tmp_path / "broken.json"
        broken.write_text("{", encoding="utf-8")
        with pytest.raises(CodecError):
            manifest_store.read_manifest(str(broken))
        other = tmp_path / "other.json"
        other.write_text('{"method": "imanip"}', encoding="utf-8")
        with pytest.raises(CodecError):
            manifest_store.read_manifest(str(other))

    def test_verify_files(self, tmp_path):
        data = tmp_path / "metrics.csv"
        data.write_text("step\n0\n", encoding="utf-8")
        manifest = {"files": manifest_store.file_entries([str(data)], str(tmp_path))}
        assert manifest["files"][0]["path"] == "metrics.csv"
        assert manifest_store.verify_files(manifest, str(tmp_path)) == []
        data.write_text("step\n1\n", encoding="utf-8")
        assert manifest_store.verify_files(manifest, str(tmp_path)) == ["metrics.csv"]
