"""Binary container: format framing, array fidelity, artifact roundtrips."""

import struct

import numpy as np
import pytest

from maskcompose.codec import learn_codebook
from maskcompose.container import (
    Section,
    array_section,
    dump_text,
    load_codebook,
    load_count_model,
    load_world,
    read_container,
    save_codebook,
    save_count_model,
    save_world,
    section_array,
    write_container,
)
from maskcompose.countmodel import fit_count_model
from maskcompose.errors import ValidationError
from maskcompose.sampler import MaskedState
from maskcompose.worlds import (
    build_random_factorized_world,
    build_scene_world,
    cell_table,
)


class TestFraming:
    def test_roundtrip_preserves_sections(self, tmp_path):
        path = str(tmp_path / "x.dcw")
        sections = [
            Section("alpha", {"a": 1, "b": "two"}, b"payload"),
            Section("beta", {}, b""),
        ]
        write_container(path, sections)
        back = read_container(path)
        assert [(s.name, s.meta, s.data) for s in back] == [
            ("alpha", {"a": 1, "b": "two"}, b"payload"),
            ("beta", {}, b""),
        ]

    def test_header_layout(self, tmp_path):
        path = str(tmp_path / "x.dcw")
        write_container(path, [])
        raw = (tmp_path / "x.dcw").read_bytes()
        assert raw[:4] == b"DCW1"
        assert struct.unpack("<II", raw[4:12]) == (1, 0)
        assert len(raw) == 12

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dcw"
        path.write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(ValidationError):
            read_container(str(path))

    def test_rejects_trailing_garbage(self, tmp_path):
        path = tmp_path / "trail.dcw"
        path.write_bytes(b"DCW1" + struct.pack("<II", 1, 0) + b"zz")
        with pytest.raises(ValidationError):
            read_container(str(path))

    def test_rejects_wrong_version(self, tmp_path):
        path = tmp_path / "v9.dcw"
        path.write_bytes(b"DCW1" + struct.pack("<II", 9, 0))
        with pytest.raises(ValidationError):
            read_container(str(path))

    def test_deterministic_bytes(self, tmp_path):
        a, b = str(tmp_path / "a.dcw"), str(tmp_path / "b.dcw")
        sections = [Section("s", {"k": 3, "a": [1, 2]}, b"\x00\x01")]
        write_container(a, sections)
        write_container(b, sections)
        assert (tmp_path / "a.dcw").read_bytes() == (tmp_path / "b.dcw").read_bytes()


class TestArraySections:
    def test_float_array_roundtrip(self):
        arr = np.array([[1.5, -2.25], [0.0, 3.125]])
        s = array_section("m", arr, {"note": "x"})
        back = section_array(s)
        assert np.array_equal(back, arr)
        assert back.dtype == np.float64
        assert s.meta["note"] == "x"

    def test_int_array_roundtrip(self):
        arr = np.array([[1, -7]], dtype=np.int16)
        assert np.array_equal(section_array(array_section("m", arr)), arr)

    def test_unsupported_dtype(self):
        with pytest.raises(ValidationError):
            array_section("m", np.array([1 + 2j]))


class TestWorldArtifacts:
    def test_scene_world_roundtrip(self, tmp_path):
        world = build_scene_world(3, 2, n_shapes=2, n_colors=1, max_objects=2, relational=True)
        path = str(tmp_path / "w.dcw")
        save_world(path, world)
        back = load_world(path)
        assert back.params() == world.params()
        assert np.array_equal(back.support()[0], world.support()[0])

    def test_factorized_world_roundtrip(self, tmp_path):
        world = build_random_factorized_world(2, 2, 3, n_conditions=2, seed=4)
        path = str(tmp_path / "f.dcw")
        save_world(path, world)
        back = load_world(path)
        assert np.allclose(back.prior_tables, world.prior_tables)
        assert sorted(back.table_conditions) == sorted(world.table_conditions)
        for name in world.table_conditions:
            cond = cell_table(name)
            assert np.allclose(
                back.conditional_tables(cond), world.conditional_tables(cond)
            )

    def test_same_world_same_bytes(self, tmp_path):
        world = build_random_factorized_world(2, 2, 3, n_conditions=2, seed=4)
        save_world(str(tmp_path / "1.dcw"), world)
        save_world(str(tmp_path / "2.dcw"), world)
        assert (tmp_path / "1.dcw").read_bytes() == (tmp_path / "2.dcw").read_bytes()

    def test_missing_world_section(self, tmp_path):
        path = str(tmp_path / "none.dcw")
        write_container(path, [Section("other", {}, b"")])
        with pytest.raises(ValidationError):
            load_world(path)


class TestModelArtifacts:
    def test_count_model_roundtrip(self, tmp_path):
        world = build_scene_world(2, 2, n_shapes=1, n_colors=2, max_objects=2)
        model = fit_count_model(world, 3000, rng_seed=6)
        path = str(tmp_path / "m.dcw")
        save_count_model(path, model)
        back = load_count_model(path)
        assert back.counts.keys() == model.counts.keys()
        for key in model.counts:
            assert np.array_equal(back.counts[key], model.counts[key])
        state = MaskedState.fully_masked(4)
        a = model.predict(state, None)
        b = back.predict(state, None)
        for p in a:
            assert np.array_equal(a[p], b[p])

    def test_empty_model_roundtrip(self, tmp_path):
        from maskcompose.countmodel import CountModel

        model = CountModel(grid_w=2, grid_h=1, vocab_size=3)
        path = str(tmp_path / "empty.dcw")
        save_count_model(path, model)
        back = load_count_model(path)
        assert back.counts == {}
        assert back.vocab_size == 3

    def test_same_model_same_bytes(self, tmp_path):
        world = build_scene_world(2, 2, n_shapes=1, n_colors=1, max_objects=2)
        model = fit_count_model(world, 500, rng_seed=1)
        save_count_model(str(tmp_path / "1.dcw"), model)
        save_count_model(str(tmp_path / "2.dcw"), model)
        assert (tmp_path / "1.dcw").read_bytes() == (tmp_path / "2.dcw").read_bytes()


class TestCodebookArtifacts:
    def test_codebook_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        cb = learn_codebook(rng.random((80, 12)), n_entries=6,
                            patch_h=2, patch_w=2, channels=3, rng_seed=2)
        path = str(tmp_path / "cb.dcw")
        save_codebook(path, cb)
        back = load_codebook(path)
        assert np.array_equal(back.entries, cb.entries)
        assert back.patch_h == 2 and back.patch_w == 2 and back.channels == 3
        assert back.objective_history == cb.objective_history


class TestTextDump:
    def test_dump_mentions_every_section(self, tmp_path):
        world = build_random_factorized_world(2, 1, 2, n_conditions=1, seed=0)
        path = str(tmp_path / "w.dcw")
        save_world(path, world)
        text = dump_text(path)
        assert "world" in text
        assert "prior_tables" in text
        assert "condition/c0" in text
        assert "DCW1" in text
