"""Unit tests for applying, composing, inverting and persisting maps."""

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isoalign.align import maps
from isoalign.core.exceptions import DimensionMismatchError, FormatError, NotInvertibleError
from isoalign.core.models import AlignmentMap, EmbeddingSet, FitModality, MapKind
from isoalign.store import codec
from isoalign.synth.planted import random_semi_orthogonal


def _map(d, d_tilde, seed, means=False, kind=MapKind.ORTHOGONAL):
    gen = np.random.default_rng(seed)
    Q = random_semi_orthogonal(d, d_tilde, seed) if kind is MapKind.ORTHOGONAL \
        else gen.standard_normal((d_tilde, d))
    mu_s = gen.standard_normal(d) if means else None
    mu_t = gen.standard_normal(d_tilde) if means else None
    return AlignmentMap(Q=Q, mu_source=mu_s, mu_target=mu_t, kind=kind,
                        source_model=f"s{seed}", target_model=f"t{seed}")


# ==============================================================================
# Apply
# ==============================================================================

class TestApply:
    def test_affine_action(self, rng):
        """Rows map to Q (z - mu_s) + mu_t."""
        amap = _map(3, 5, seed=1, means=True)
        z = rng.standard_normal((4, 3))
        expected = (z - amap.mu_source) @ amap.Q.T + amap.mu_target
        assert np.allclose(maps.apply_rows(amap, z), expected)

    def test_overrides_replace_stored_means(self, rng):
        """Override means win over the stored ones."""
        amap = _map(2, 2, seed=2, means=True)
        z = rng.standard_normal((3, 2))
        out = maps.apply_rows(amap, z, np.zeros(2), np.ones(2))
        assert np.allclose(out, z @ amap.Q.T + 1.0)

    def test_override_length_checked(self):
        """Override means must have the map's dimensions."""
        with pytest.raises(DimensionMismatchError):
            maps.apply_rows(_map(2, 3, seed=0), np.zeros((1, 2)), np.zeros(3), np.zeros(3))

    def test_apply_set_carries_target_model(self, images):
        """The mapped set takes the target model id and drops the normalized flag."""
        amap = _map(4, 6, seed=3)
        out = maps.apply(amap, images)
        assert out.model_id == "t3"
        assert out.d == 6
        assert out.normalized is False
        assert out.labels.tolist() == images.labels.tolist()

    def test_apply_renormalize(self, images):
        """renormalize=True yields unit rows even for a linear map."""
        out = maps.apply(_map(4, 4, seed=4, kind=MapKind.LINEAR), images, renormalize=True)
        assert out.normalized
        assert np.allclose(np.linalg.norm(out.data, axis=1), 1.0)

    def test_apply_dimension_mismatch(self, images):
        """The set width must equal d."""
        with pytest.raises(DimensionMismatchError):
            maps.apply(_map(3, 3, seed=0), images)

    def test_orthogonal_preserves_inner_products(self, images):
        """Semi-orthogonal maps keep the Gram matrix."""
        out = maps.apply(_map(4, 9, seed=5), images)
        assert np.allclose(out.data @ out.data.T, images.data @ images.data.T)

    def test_with_means(self):
        """with_means keeps Q and swaps the means."""
        amap = _map(2, 2, seed=6)
        moved = maps.with_means(amap, np.ones(2), np.zeros(2))
        assert np.array_equal(moved.Q, amap.Q)
        assert moved.has_means and not amap.has_means


# ==============================================================================
# Compose / Invert
# ==============================================================================

class TestComposeInvert:
    def test_compose_matches_sequential_apply(self, rng):
        """compose(f, g) applied once equals applying f then g."""
        f = _map(3, 4, seed=7, means=True)
        g = _map(4, 6, seed=8, means=True)
        z = rng.standard_normal((5, 3))
        fg = maps.compose(f, g)
        assert np.allclose(maps.apply_rows(fg, z), maps.apply_rows(g, maps.apply_rows(f, z)))
        assert fg.kind is MapKind.ORTHOGONAL
        assert (fg.source_model, fg.target_model) == ("s7", "t8")

    def test_compose_mixed_kind_is_linear(self):
        """Any linear factor makes the composition linear."""
        fg = maps.compose(_map(2, 2, 1), _map(2, 2, 2, kind=MapKind.LINEAR))
        assert fg.kind is MapKind.LINEAR

    def test_compose_fit_modality(self):
        """Differing fit modalities compose to synthetic."""
        a = AlignmentMap(Q=np.eye(2), fit_modality=FitModality.TEXT)
        b = AlignmentMap(Q=np.eye(2), fit_modality=FitModality.IMAGE)
        assert maps.compose(a, b).fit_modality is FitModality.SYNTHETIC
        assert maps.compose(a, a).fit_modality is FitModality.TEXT

    def test_compose_dimension_mismatch(self):
        """Inner dimensions must agree."""
        with pytest.raises(DimensionMismatchError):
            maps.compose(_map(2, 3, 0), _map(2, 2, 0))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), means=st.booleans())
    def test_compose_associative(self, seed, means):
        """(f g) h and f (g h) act the same on any row."""
        f = _map(2, 3, seed, means=means)
        g = _map(3, 3, seed + 1, means=not means)
        h = _map(3, 5, seed + 2, means=means)
        left = maps.compose(maps.compose(f, g), h)
        right = maps.compose(f, maps.compose(g, h))
        z = np.random.default_rng(seed).standard_normal((4, 2))
        assert np.allclose(left.Q, right.Q, atol=1e-12)
        assert np.allclose(maps.apply_rows(left, z), maps.apply_rows(right, z), atol=1e-10)

    def test_invert_orthogonal(self, rng):
        """The inverse undoes the map, means included."""
        amap = _map(4, 4, seed=9, means=True)
        z = rng.standard_normal((3, 4))
        back = maps.apply_rows(maps.invert(amap), maps.apply_rows(amap, z))
        assert np.allclose(back, z)

    def test_invert_linear(self, rng):
        """Invertible linear maps invert through a solve."""
        amap = _map(3, 3, seed=10, kind=MapKind.LINEAR)
        inv = maps.invert(amap)
        assert np.allclose(inv.Q @ amap.Q, np.eye(3))

    def test_invert_rectangular(self):
        """A non-square map has no two-sided inverse."""
        with pytest.raises(NotInvertibleError):
            maps.invert(_map(2, 3, seed=0))

    def test_invert_singular(self):
        """A singular linear map cannot be inverted."""
        amap = AlignmentMap(Q=np.array([[1.0, 2.0], [2.0, 4.0]]), kind=MapKind.LINEAR)
        with pytest.raises(NotInvertibleError):
            maps.invert(amap)


# ==============================================================================
# Persistence
# ==============================================================================

class TestMapFiles:
    def test_save_load(self, tmp_path: Path):
        """Q, means, kind and sidecar metadata survive a save/load."""
        amap = AlignmentMap(Q=random_semi_orthogonal(3, 5, seed=1), mu_source=np.ones(3),
                            mu_target=np.zeros(5), fit_modality=FitModality.TEXT,
                            source_model="a", target_model="b", stats={"residual": 0.25})
        path = tmp_path / "m.map"
        maps.save_map(amap, path)
        back = maps.load_map(path)
        assert np.array_equal(back.Q, amap.Q)
        assert np.array_equal(back.mu_source, amap.mu_source)
        assert back.fit_modality is FitModality.TEXT
        assert back.stats == {"residual": 0.25}
        assert back.describe() == amap.describe()

    def test_load_without_sidecar(self, tmp_path: Path):
        """A bare MAP1 loads as a synthetic map."""
        path = tmp_path / "m.map"
        path.write_bytes(codec.encode_map(np.eye(2), None, None, MapKind.ORTHOGONAL))
        assert maps.load_map(path).fit_modality is FitModality.SYNTHETIC

    def test_orthogonal_flag_on_non_orthogonal_payload(self, tmp_path: Path):
        """A payload that breaks Q^T Q = I under the orthogonal kind is a bad file."""
        path = tmp_path / "m.map"
        path.write_bytes(codec.encode_map(2 * np.eye(2), None, None, MapKind.ORTHOGONAL))
        with pytest.raises(FormatError):
            maps.load_map(path)
