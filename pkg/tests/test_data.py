import json

import numpy as np
import pytest

from czsl_engine.config import SyntheticConfig
from czsl_engine.data import (
    BlockMask,
    TripletIndex,
    attention_mass_on_mask,
    find_source_triplet,
    generate_synthetic,
    load_features,
    load_manifest,
    load_masks,
    load_word_embeddings,
    lookup,
    sample_triplet,
    write_features,
    write_synthetic,
    write_word_embeddings,
)
from czsl_engine.data.features import POSITIONS
from czsl_engine.data.synthetic import save_masks
from czsl_engine.errors import ConfigError, ContractError, DataError, FormatError, MateNotFoundError, VocabularyError


class TestFeatureContainer:
    def test_round_trip_is_bit_exact(self, tmp_path, rng):
        grids = {"img_b": rng.standard_normal((3, POSITIONS)).astype(np.float32),
                 "img_a": rng.standard_normal((3, POSITIONS)).astype(np.float32)}
        path = tmp_path / "f.oadt"
        write_features(path, grids)
        store = load_features(path)
        assert store.n0 == 3 and len(store) == 2
        assert store.ids == ["img_b", "img_a"]
        for sid, grid in grids.items():
            assert store.get(sid).tobytes() == grid.tobytes()
        assert store.stack(["img_a", "img_b"]).shape == (2, 3, POSITIONS)

    def test_empty_store(self, tmp_path):
        path = tmp_path / "empty.oadt"
        write_features(path, {}, n0=4)
        store = load_features(path)
        assert len(store) == 0
        assert store.stack([]).shape == (0, 4, POSITIONS)

    def test_unknown_id(self, tmp_path):
        path = tmp_path / "f.oadt"
        write_features(path, {"x": np.zeros((2, POSITIONS))})
        with pytest.raises(DataError):
            load_features(path).get("y")

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "f.oadt"
        write_features(path, {"x": np.ones((2, POSITIONS))})
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(FormatError) as info:
            load_features(path)
        assert info.value.offset is not None

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "f.oadt"
        write_features(path, {"x": np.ones((2, POSITIONS))})
        path.write_bytes(b"NOPE" + path.read_bytes()[4:])
        with pytest.raises(FormatError) as info:
            load_features(path)
        assert info.value.offset == 0

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "f.oadt"
        write_features(path, {"x": np.ones((2, POSITIONS))})
        path.write_bytes(path.read_bytes() + b"\x00\x01")
        with pytest.raises(FormatError, match="trailing"):
            load_features(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_features(tmp_path / "nope.oadt")


class TestWordEmbeddings:
    def test_round_trip(self, tmp_path):
        table = {"red": np.array([0.5, -1.0, 2.0]), "apple": np.array([1.0, 0.0, 0.25])}
        path = tmp_path / "emb.txt"
        write_word_embeddings(path, table)
        loaded = load_word_embeddings(path, expected_dim=3)
        assert set(loaded) == {"red", "apple"}
        np.testing.assert_array_equal(lookup(loaded, "red"), table["red"])

    def test_missing_token(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("red 1 2\n")
        with pytest.raises(VocabularyError):
            lookup(load_word_embeddings(path), "blue")

    def test_dimension_mismatch(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("red 1 2\n")
        with pytest.raises(ConfigError):
            load_word_embeddings(path, expected_dim=300)

    def test_ragged_line(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("red 1 2 3\nblue 1 2\n")
        with pytest.raises(FormatError) as info:
            load_word_embeddings(path)
        assert info.value.line == 2

    def test_non_numeric(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("red 1 x\n")
        with pytest.raises(FormatError):
            load_word_embeddings(path)


class TestManifest:
    def _write(self, tmp_path, payload):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(payload))
        return path

    def test_load(self, tmp_path):
        path = self._write(tmp_path, {
            "samples": [{"id": "1", "attr": "red", "obj": "apple"},
                        {"id": "2", "attr": ["red", "wet"], "obj": "car"}],
            "attributes": ["red", "wet"], "objects": ["apple", "car"],
        })
        manifest = load_manifest(path)
        assert manifest.by_id()["2"].attr_list() == ["red", "wet"]

    def test_out_of_vocabulary(self, tmp_path):
        path = self._write(tmp_path, {
            "samples": [{"id": "1", "attr": "blue", "obj": "apple"}],
            "attributes": ["red"], "objects": ["apple"],
        })
        with pytest.raises(VocabularyError):
            load_manifest(path)

    def test_malformed(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{\n  \"samples\": [\n")
        with pytest.raises(FormatError):
            load_manifest(path)
        with pytest.raises(FormatError):
            load_manifest(self._write(tmp_path, {"samples": []}))


def _corpus_index():
    labels = {
        "a1": ("peeled", "apple"),
        "a2": ("peeled", "orange"),
        "a3": ("sliced", "apple"),
        "a4": ("sliced", "banana"),
        "a5": ("ripe", "orange"),
    }
    return TripletIndex(list(labels), labels)


class TestTriplets:
    def test_forced_mates(self):
        triplet = sample_triplet("a1", _corpus_index(), np.random.default_rng(0))
        assert triplet.attr_mate.id == "a2"
        assert triplet.obj_mate.id == "a3"
        assert triplet.hallucinated_pair() == ("sliced", "orange")

    def test_mates_respect_labels(self):
        index = _corpus_index()
        rng = np.random.default_rng(1)
        for sid in ("a1", "a2", "a3"):
            t = sample_triplet(sid, index, rng)
            assert t.attr_mate.attr == t.anchor.attr and t.attr_mate.obj != t.anchor.obj
            assert t.obj_mate.obj == t.anchor.obj and t.obj_mate.attr != t.anchor.attr

    def test_mate_not_found(self):
        with pytest.raises(MateNotFoundError):
            sample_triplet("a4", _corpus_index(), np.random.default_rng(0))

    def test_unknown_anchor(self):
        with pytest.raises(DataError):
            sample_triplet("zz", _corpus_index(), np.random.default_rng(0))

    def test_seeded_draws_repeat(self, tiny_run):
        split = tiny_run.split
        index = TripletIndex(split.train_ids, split.labels)
        draw = lambda seed: [sample_triplet(s, index, np.random.default_rng(seed)) for s in split.train_ids]  # noqa: E731
        assert draw(5) == draw(5)

    def test_find_source_triplet(self):
        index = _corpus_index()
        t = find_source_triplet(("sliced", "orange"), index, np.random.default_rng(0))
        assert t.hallucinated_pair() == ("sliced", "orange")
        with pytest.raises(MateNotFoundError):
            find_source_triplet(("ripe", "banana"), index, np.random.default_rng(0))


class TestSynthetic:
    def test_noise_free_blocks(self):
        data = generate_synthetic(SyntheticConfig(num_attrs=3, num_objs=3, latent_dim=2, feature_dim=6, word_dim=4,
                                                  blocks_per_factor=1, noise=0.0, samples_per_pair=2, seed=1))
        by_attr = {}
        for sid, grid in data.features.items():
            mask = data.masks[sid]
            (ab,), (ob,) = mask.attr_blocks, mask.obj_blocks
            assert ab != ob
            assert np.linalg.norm(grid[:, ab]) == pytest.approx(1.0, abs=1e-5)
            others = [j for j in range(POSITIONS) if j not in (ab, ob)]
            assert not grid[:, others].any()
            attr = data.split.labels[sid][0]
            by_attr.setdefault(attr, []).append(grid[:, ab])
        for columns in by_attr.values():
            for col in columns[1:]:
                np.testing.assert_array_equal(col, columns[0])

    def test_same_seed_same_bytes(self, tmp_path):
        config = SyntheticConfig(num_attrs=3, num_objs=4, latent_dim=2, feature_dim=5, word_dim=3, seed=11)
        a = write_synthetic(generate_synthetic(config), tmp_path / "a")
        b = write_synthetic(generate_synthetic(config), tmp_path / "b")
        for key in a:
            assert a[key].read_bytes() == b[key].read_bytes(), key

    def test_default_sizes(self):
        data = generate_synthetic(SyntheticConfig(num_attrs=20, num_objs=20, samples_per_pair=5, seen_fraction=0.8,
                                                  latent_dim=4, feature_dim=8, word_dim=8))
        assert len(data.split.train_pairs) == 320
        assert len(data.split.train_ids) == 1600
        unseen = len(data.split.val_unseen_pairs) + len(data.split.test_unseen_pairs)
        assert unseen == 80

    def test_invalid_configs(self):
        with pytest.raises(ConfigError):
            generate_synthetic(SyntheticConfig(blocks_per_factor=25))
        with pytest.raises(ConfigError):
            generate_synthetic(SyntheticConfig(num_attrs=1))
        with pytest.raises(ConfigError):
            generate_synthetic(SyntheticConfig(latent_dim=100))

    def test_masks_round_trip(self, tmp_path):
        masks = {"s0": BlockMask([1, 4], [7, 9]), "s1": BlockMask([0], [48])}
        path = tmp_path / "masks.json"
        save_masks(path, masks)
        assert load_masks(path) == masks
        path.write_text("{\"s0\": {\"attr_blocks\": [1]}}")
        with pytest.raises(FormatError):
            load_masks(path)


class TestAttentionMass:
    def test_uniform_weights(self):
        w = np.full(POSITIONS, 1.0 / POSITIONS)
        assert attention_mass_on_mask(w, [0, 5, 10]) == pytest.approx(3 / POSITIONS)
        assert attention_mass_on_mask(w, range(POSITIONS)) == pytest.approx(1.0)

    def test_batched_input_uses_first_row(self):
        w = np.zeros((2, POSITIONS))
        w[0, 3] = 2.0
        w[1, 4] = 1.0
        assert attention_mass_on_mask(w, [3]) == 1.0

    def test_bad_masks(self):
        w = np.ones(POSITIONS)
        with pytest.raises(ContractError):
            attention_mass_on_mask(w, [])
        with pytest.raises(ContractError):
            attention_mass_on_mask(w, [49])
