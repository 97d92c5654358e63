import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmaffect.core import (
    DimMismatch,
    DuplicateName,
    EmptySequence,
    FeatureDescriptor,
    FeatureRegistry,
    FeatureSequence,
    MixedVideos,
    Modality,
    NonFinite,
    Segment,
    Task,
    TaskLabels,
    align_lengths,
    default_feature_registry,
    validate_sequence,
)


def seq(name="FAU", dim=17, t=3, video="v000", values=None, modality=Modality.VISUAL):
    desc = FeatureDescriptor(name, modality, dim)
    if values is None:
        values = np.zeros((t, dim))
    return FeatureSequence(desc, video, values)


class TestRegistry:
    def test_register_and_lookup(self):
        reg = FeatureRegistry()
        reg.register(FeatureDescriptor("FAU", Modality.VISUAL, 17))
        assert reg.get("FAU").dim == 17
        assert reg.get("FAU").modality is Modality.VISUAL

    def test_dim_retrievable(self):
        reg = FeatureRegistry([FeatureDescriptor("EAC", Modality.VISUAL, 2048)])
        assert reg.get("EAC").dim == 2048

    def test_duplicate_name_rejected(self):
        reg = FeatureRegistry([FeatureDescriptor("FAU", Modality.VISUAL, 17)])
        with pytest.raises(DuplicateName):
            reg.register(FeatureDescriptor("FAU", Modality.VISUAL, 17))

    def test_iteration_is_insertion_order(self):
        names = ["c", "a", "b"]
        reg = FeatureRegistry([FeatureDescriptor(n, Modality.AUDIO, 4) for n in names])
        assert reg.names == names
        assert [d.name for d in reg] == names

    def test_default_registry_widths(self):
        reg = default_feature_registry()
        dims = {d.name: d.dim for d in reg}
        assert dims["IS09"] == 384
        assert dims["CNN14"] == 2048
        assert dims["VGGish"] == 128
        assert dims["eGeMAPS"] == 88
        assert dims["DeepSpectrum"] == 1024
        assert dims["EAC"] == 2048
        assert dims["FAU"] == 17
        assert dims["ResNet18"] == 512
        assert dims["POSTER"] == 768
        assert dims["POSTER2"] == 768

    def test_subset_keeps_order(self):
        reg = default_feature_registry()
        sub = reg.subset(["POSTER2", "EAC"])
        assert sub.names == ["EAC", "POSTER2"]

    def test_dim_must_be_positive(self):
        with pytest.raises(DimMismatch):
            FeatureDescriptor("bad", Modality.AUDIO, 0)


class TestValidateSequence:
    def test_valid_passes(self):
        validate_sequence(seq(t=3, values=np.random.default_rng(0).normal(size=(3, 17))))

    def test_width_mismatch(self):
        with pytest.raises(DimMismatch):
            validate_sequence(seq(values=np.zeros((3, 16))))

    def test_nan_rejected(self):
        values = np.zeros((3, 17))
        values[1, 5] = np.nan
        with pytest.raises(NonFinite):
            validate_sequence(seq(values=values))

    def test_inf_rejected(self):
        values = np.zeros((3, 17))
        values[0, 0] = np.inf
        with pytest.raises(NonFinite):
            validate_sequence(seq(values=values))

    def test_empty_rejected(self):
        with pytest.raises(EmptySequence):
            validate_sequence(seq(values=np.zeros((0, 17))))

    @given(
        t=st.integers(1, 6),
        dim=st.integers(1, 5),
        corruption=st.sampled_from(["none", "width", "nan", "inf"]),
    )
    def test_accepts_exactly_the_invariant_satisfiers(self, t, dim, corruption):
        rng = np.random.default_rng(t * 31 + dim)
        values = rng.normal(size=(t, dim))
        if corruption == "width":
            values = np.concatenate([values, values[:, :1]], axis=1)
        elif corruption == "nan":
            values = values.copy()
            values[rng.integers(t), rng.integers(dim)] = np.nan
        elif corruption == "inf":
            values = values.copy()
            values[rng.integers(t), rng.integers(dim)] = -np.inf
        s = FeatureSequence(FeatureDescriptor("f", Modality.AUDIO, dim), "v", values)
        if corruption == "none":
            validate_sequence(s)
        else:
            with pytest.raises((DimMismatch, NonFinite)):
                validate_sequence(s)


class TestAlignLengths:
    def test_truncates_to_min(self):
        seqs = [seq(name=f"f{i}", dim=2, t=t) for i, t in enumerate([300, 298, 300])]
        out = align_lengths(seqs)
        assert [s.n_frames for s in out] == [298, 298, 298]

    def test_truncation_is_from_the_end(self):
        rng = np.random.default_rng(1)
        long = seq(name="a", dim=2, values=rng.normal(size=(5, 2)))
        short = seq(name="b", dim=2, values=rng.normal(size=(3, 2)))
        out = align_lengths([long, short])
        np.testing.assert_array_equal(out[0].values, long.values[:3])

    def test_already_aligned_unchanged(self):
        seqs = [seq(name="a", dim=2, t=256), seq(name="b", dim=3, t=256)]
        out = align_lengths(seqs)
        assert [s.n_frames for s in out] == [256, 256]
        assert out[0] is seqs[0]

    def test_mixed_videos_rejected(self):
        with pytest.raises(MixedVideos):
            align_lengths([seq(video="v1"), seq(name="g", video="v2")])

    @given(lengths=st.lists(st.integers(1, 40), min_size=1, max_size=5))
    def test_idempotent(self, lengths):
        seqs = [seq(name=f"f{i}", dim=2, t=t) for i, t in enumerate(lengths)]
        once = align_lengths(seqs)
        twice = align_lengths(once)
        assert [s.n_frames for s in once] == [s.n_frames for s in twice] == [min(lengths)] * len(lengths)

    def test_order_preserved(self):
        seqs = [seq(name=f"f{i}", dim=2, t=10 + i) for i in range(4)]
        out = align_lengths(seqs)
        assert [s.descriptor.name for s in out] == [f"f{i}" for i in range(4)]


class TestTaskLabels:
    def test_exactly_one_field(self):
        with pytest.raises(ValueError):
            TaskLabels(Task.VA, va=np.zeros((3, 2)), expr=np.zeros(3, dtype=int))
        with pytest.raises(ValueError):
            TaskLabels(Task.VA)

    def test_va_range_checked(self):
        with pytest.raises(ValueError):
            TaskLabels(Task.VA, va=np.array([[0.0, 1.5]]))

    def test_expr_mask(self):
        labels = TaskLabels(Task.EXPR, expr=np.array([0, -1, 7, 3]))
        np.testing.assert_array_equal(labels.frame_mask(), [True, False, True, True])

    def test_au_mask_needs_one_valid_entry(self):
        au = -np.ones((3, 12), dtype=int)
        au[1, 4] = 1
        labels = TaskLabels(Task.AU, au=au)
        np.testing.assert_array_equal(labels.frame_mask(), [False, True, False])

    def test_eri_has_no_frame_mask(self):
        labels = TaskLabels(Task.ERI, eri=np.full(7, 0.5))
        assert labels.frame_mask() is None
        assert labels.n_frames is None

    def test_labels_are_immutable(self):
        labels = TaskLabels(Task.VA, va=np.zeros((3, 2)))
        with pytest.raises(ValueError):
            labels.va[0, 0] = 1.0

    def test_slice(self):
        labels = TaskLabels(Task.EXPR, expr=np.arange(8) % 8)
        part = labels.slice(2, 5)
        np.testing.assert_array_equal(part.expr, [2, 3, 4])


class TestSegment:
    def test_feature_lengths_must_agree(self):
        labels = TaskLabels(Task.VA, va=np.zeros((4, 2)))
        with pytest.raises(ValueError):
            Segment("v", 0, (np.zeros((4, 3)), np.zeros((5, 2))), labels)

    def test_default_mask_from_labels(self):
        labels = TaskLabels(Task.EXPR, expr=np.array([0, -1, 3]))
        s = Segment("v", 0, (np.zeros((3, 2)),), labels)
        np.testing.assert_array_equal(s.valid_mask, [True, False, True])

    def test_negative_start_rejected(self):
        labels = TaskLabels(Task.VA, va=np.zeros((3, 2)))
        with pytest.raises(ValueError):
            Segment("v", -1, (np.zeros((3, 2)),), labels)
