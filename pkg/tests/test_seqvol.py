import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmrigan.errors import FormatError, UnsupportedVersionError, ValidationError
from fmrigan.seqvol import (
    ASD,
    BIO,
    HC,
    REST,
    SCRAM,
    Parcellation,
    PhantomSpec,
    RoiSpec,
    StimulusSchedule,
    VolumeSequence,
    build_block_schedule,
    box_sizes_for_gaussian,
    denormalize,
    fit_normalizer,
    largest_remainder,
    make_phantom,
    normalize_sequence,
    read_parcellation,
    read_schedule,
    read_vseq,
    smooth_volume,
    split_dataset,
    write_parcellation,
    write_schedule,
    write_vseq,
)


def small_spec(**kw):
    base = dict(
        dims=(8, 8, 8, 8),
        n_subjects_per_class=2,
        rois=[
            RoiSpec("bio_roi", (2, 2, 2), 1, BIO, {ASD: 1.0, HC: 1.0}),
            RoiSpec("scram_roi", (5, 5, 5), 1, SCRAM, {ASD: 0.5, HC: 0.5}),
        ],
        baseline=0.0,
        noise_sigma=0.0,
        block_len_frames=2,
        seed=3,
    )
    base.update(kw)
    return PhantomSpec(**base)


# --- file format -----------------------------------------------------------


def test_zero_sequence_payload(tmp_path):
    seq = VolumeSequence(np.zeros((1, 2, 2, 2)), "z")
    write_vseq(seq, tmp_path / "z")
    raw = (tmp_path / "z.f32").read_bytes()
    assert raw == b"\x00" * 32
    header = json.loads((tmp_path / "z.json").read_text())
    assert header["dims"] == [1, 2, 2, 2]
    assert header["format_version"] == 1


def test_payload_is_little_endian_w_fastest(tmp_path):
    data = np.arange(24, dtype=np.float32).reshape(1, 2, 3, 4)
    write_vseq(VolumeSequence(data, "r"), tmp_path / "r.json")
    vals = np.frombuffer((tmp_path / "r.f32").read_bytes(), dtype="<f4")
    np.testing.assert_array_equal(vals, np.arange(24))


def test_phantom_payload_size(tmp_path):
    seqs, _, _ = make_phantom(small_spec(dims=(24, 16, 16, 16), n_subjects_per_class=1, rois=[]))
    write_vseq(seqs[0], tmp_path / "p")
    assert (tmp_path / "p.f32").stat().st_size == 24 * 16 * 16 * 16 * 4


def test_roundtrip_metadata(tmp_path):
    rng = np.random.default_rng(0)
    seq = VolumeSequence(rng.standard_normal((3, 2, 4, 5)), "s1", (2.0, 2.5, 3.0), 1.5, HC)
    write_vseq(seq, tmp_path / "s1")
    back = read_vseq(tmp_path / "s1")
    assert back.data.tobytes() == seq.data.tobytes()
    assert (back.subject_id, back.voxel_size_mm, back.frame_interval_s, back.label) == (
        "s1",
        (2.0, 2.5, 3.0),
        1.5,
        HC,
    )


@settings(max_examples=25, deadline=None)
@given(
    shape=st.tuples(*[st.integers(1, 4)] * 4),
    seed=st.integers(0, 2**31),
    label=st.sampled_from([ASD, HC, None]),
)
def test_roundtrip_property(tmp_path_factory, shape, seed, label):
    d = tmp_path_factory.mktemp("rt")
    data = np.random.default_rng(seed).standard_normal(shape).astype(np.float32) * 1e3
    seq = VolumeSequence(data, "x", label=label)
    write_vseq(seq, d / "x")
    back = read_vseq(d / "x")
    assert back.data.tobytes() == seq.data.tobytes()
    assert back.label == label


def test_truncated_payload(tmp_path):
    write_vseq(VolumeSequence(np.ones((2, 2, 2, 2)), "t"), tmp_path / "t")
    f = tmp_path / "t.f32"
    f.write_bytes(f.read_bytes()[:-4])
    with pytest.raises(FormatError, match="expected 64 .* found 60"):
        read_vseq(tmp_path / "t")


def test_header_zero_frames(tmp_path):
    (tmp_path / "e.json").write_text(json.dumps({"format_version": 1, "dims": [0, 2, 2, 2], "subject_id": "e"}))
    (tmp_path / "e.f32").write_bytes(b"")
    with pytest.raises(ValidationError):
        read_vseq(tmp_path / "e")


def test_unknown_version(tmp_path):
    write_vseq(VolumeSequence(np.ones((1, 1, 1, 1)), "v"), tmp_path / "v")
    hdr = json.loads((tmp_path / "v.json").read_text())
    hdr["format_version"] = 7
    (tmp_path / "v.json").write_text(json.dumps(hdr))
    with pytest.raises(UnsupportedVersionError):
        read_vseq(tmp_path / "v")


def test_nonfinite_rejected(tmp_path):
    data = np.zeros((1, 1, 1, 2), dtype=np.float32)
    seq = VolumeSequence(data, "n")
    seq.data[0, 0, 0, 1] = np.nan
    with pytest.raises(ValidationError):
        write_vseq(seq, tmp_path / "n")


def test_parcellation_and_schedule_roundtrip(tmp_path):
    _, schedule, parc = make_phantom(small_spec(lag_frames=1))
    write_parcellation(parc, tmp_path / "parc")
    back = read_parcellation(tmp_path / "parc")
    np.testing.assert_array_equal(back.labels, parc.labels)
    assert back.region_names == parc.region_names
    assert (tmp_path / "parc.i32").exists()
    write_schedule(schedule, tmp_path / "schedule.txt")
    assert (tmp_path / "schedule.txt").read_text().startswith("lag_frames: 1\n")
    assert read_schedule(tmp_path / "schedule.txt") == schedule


def test_parcellation_missing_region():
    with pytest.raises(ValidationError):
        Parcellation(np.zeros((2, 2, 2)), {1: "ghost"})


# --- normalization ---------------------------------------------------------


def test_constant_normalizes_to_zero():
    seq = VolumeSequence(np.full((2, 2, 2, 2), 5.0), "c")
    out, params = normalize_sequence(seq)
    assert np.all(out.data == 0)
    assert (params.offset, params.scale) == (5.0, 1.0)


def test_two_values_unchanged():
    seq = VolumeSequence(np.array([-1.0, 1.0]).reshape(1, 1, 1, 2), "c")
    out, _ = normalize_sequence(seq)
    np.testing.assert_array_equal(out.data.ravel(), [-1.0, 1.0])


def test_normalization_inverse_on_phantom():
    seqs, _, _ = make_phantom(small_spec(noise_sigma=0.3, baseline=2.0))
    seq = seqs[0]
    out, params = normalize_sequence(seq)
    assert out.data.min() >= -1 and out.data.max() <= 1
    back = denormalize(out.data, params)
    inside = np.abs(out.data) < 1
    assert inside.mean() > 0.95
    rel = np.abs(back[inside] - seq.data[inside]) / np.maximum(np.abs(seq.data[inside]), 1e-12)
    assert rel.max() < 1e-5


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(1e-2, 1e3), shift=st.floats(-100, 100))
def test_normalization_range_property(seed, scale, shift):
    data = np.random.default_rng(seed).standard_normal((2, 3, 3, 3)) * scale + shift
    out, params = normalize_sequence(VolumeSequence(data, "h"))
    assert out.data.min() >= -1 and out.data.max() <= 1
    inside = np.abs(out.data) < 1 - 1e-6
    back = denormalize(out.data, params)
    ref = out.data.astype(np.float64)
    np.testing.assert_allclose(back[inside], data.astype(np.float32)[inside], rtol=1e-5, atol=1e-5 * scale)
    assert ref.shape == data.shape


def test_dataset_level_normalizer_keeps_class_gap():
    spec = small_spec(rois=[RoiSpec("r", (3, 3, 3), 2, BIO, {ASD: 2.0, HC: 1.0})], noise_sigma=0.1)
    seqs, _, parc = make_phantom(spec)
    params = fit_normalizer(seqs)
    normed = [normalize_sequence(s, params)[0] for s in seqs]
    mask = parc.labels == 1
    asd = normed[0].data[0][mask].mean()
    hc = normed[-1].data[0][mask].mean()
    assert asd > hc + 0.1


# --- schedules -------------------------------------------------------------


def test_schedule_tiling():
    assert build_block_schedule(4, 1, [SCRAM, BIO]).conditions == [SCRAM, BIO, SCRAM, BIO]
    assert build_block_schedule(6, 2, [BIO, SCRAM]).conditions == [BIO, BIO, SCRAM, SCRAM, BIO, BIO]


def test_schedule_paper_scale():
    sched = build_block_schedule(146, 146 // 12, [BIO, SCRAM])
    assert len(sched) == 146
    assert set(sched.conditions) == {BIO, SCRAM}
    assert sched.conditions[:12] == [BIO] * 12
    assert sched.conditions[12:24] == [SCRAM] * 12


def test_schedule_explicit_lengths():
    sched = build_block_schedule(10, [3, 3, 2], [BIO, SCRAM])
    assert sched.conditions == [BIO] * 3 + [SCRAM] * 3 + [BIO] * 2 + [REST] * 2


def test_schedule_rejects_empty():
    with pytest.raises(ValidationError):
        build_block_schedule(0, 2)


@given(T=st.integers(1, 60), block=st.integers(1, 10), lag=st.integers(0, 70))
def test_schedule_lag_property(T, block, lag):
    sched = build_block_schedule(T, block, [BIO, SCRAM], lag)
    shifted = sched.shifted()
    assert len(sched) == T and len(shifted) == T
    for t, c in enumerate(shifted):
        if t < lag:
            assert c is None
        else:
            assert c == sched.conditions[t - lag]
    for cond in (BIO, SCRAM):
        idx = sched.frames(cond)
        assert np.all((idx >= 0) & (idx < T))


# --- phantom ---------------------------------------------------------------


def test_phantom_noise_free_construction():
    seqs, schedule, parc = make_phantom(small_spec())
    bio_mask = parc.labels == 1
    for seq in seqs:
        for t, cond in enumerate(schedule.conditions):
            vals = seq.data[t][bio_mask]
            assert np.all(vals == (1.0 if cond == BIO else 0.0))
        assert np.all(seq.data[:, parc.labels == 0] == 0.0)
    assert parc.region_names == {1: "bio_roi", 2: "scram_roi"}
    assert bio_mask.sum() == 7  # radius-1 sphere


def test_phantom_labels_and_ids():
    seqs, _, _ = make_phantom(small_spec(n_subjects_per_class=3))
    assert [s.label for s in seqs] == [ASD] * 3 + [HC] * 3
    assert len({s.subject_id for s in seqs}) == 6


def test_phantom_determinism():
    spec = small_spec(noise_sigma=0.5, spatial_smooth_fwhm=2.0)
    a, _, _ = make_phantom(spec)
    b, _, _ = make_phantom(spec)
    assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a, b))
    c, _, _ = make_phantom(small_spec(noise_sigma=0.5, spatial_smooth_fwhm=2.0, seed=4))
    assert a[0].data.tobytes() != c[0].data.tobytes()


def test_phantom_noise_mean_monte_carlo():
    spec = small_spec(dims=(2, 4, 4, 4), n_subjects_per_class=50, rois=[], baseline=3.0, noise_sigma=0.1)
    seqs, _, _ = make_phantom(spec)
    mean = np.mean([s.data for s in seqs], axis=0)
    assert np.all(np.abs(mean - 3.0) <= 0.04)


def test_phantom_smoothed_noise_keeps_sigma():
    spec = small_spec(dims=(4, 16, 16, 16), n_subjects_per_class=1, rois=[], noise_sigma=0.2, spatial_smooth_fwhm=3.0)
    seqs, _, _ = make_phantom(spec)
    interior = seqs[0].data[:, 4:12, 4:12, 4:12]
    assert abs(interior.std() - 0.2) < 0.05


def test_phantom_roi_outside_grid():
    with pytest.raises(ValidationError):
        make_phantom(small_spec(rois=[RoiSpec("edge", (0, 3, 3), 1)]))


def test_box_sizes():
    sizes = box_sizes_for_gaussian(2.0)
    assert len(sizes) == 3 and all(s % 2 == 1 for s in sizes)
    # variance of three boxes of width w is sum((w^2 - 1) / 12)
    var = sum((s * s - 1) / 12 for s in sizes)
    assert abs(var - 4.0) < 1.0


def test_smooth_preserves_constant():
    vol = np.full((6, 6, 6), 2.5)
    np.testing.assert_allclose(smooth_volume(vol, 3.0), 2.5)


# --- splits ----------------------------------------------------------------


def test_split_sizes_118():
    ids = [f"s{i}" for i in range(118)]
    split = split_dataset(ids, seed=0)
    assert (len(split.train_ids), len(split.val_ids), len(split.test_ids)) == (82, 18, 18)
    explicit = split_dataset(ids, seed=0, sizes=(72, 23, 23))
    assert (len(explicit.train_ids), len(explicit.val_ids), len(explicit.test_ids)) == (72, 23, 23)


def test_split_tie_goes_to_later():
    assert largest_remainder(10, (0.7, 0.15, 0.15)) == [7, 1, 2]


def test_split_deterministic():
    ids = [f"s{i}" for i in range(20)]
    assert split_dataset(ids, seed=5) == split_dataset(ids, seed=5)


def test_split_bad_ratios():
    with pytest.raises(ValidationError):
        split_dataset(["a", "b"], ratios=(0.5, 0.5, 0.5))


@given(n=st.integers(3, 300), seed=st.integers(0, 1000))
def test_split_partition_property(n, seed):
    ids = [f"id{i}" for i in range(n)]
    split = split_dataset(ids, seed=seed)
    parts = [split.train_ids, split.val_ids, split.test_ids]
    flat = [i for p in parts for i in p]
    assert sorted(flat) == sorted(ids)
    assert len(set(flat)) == n
    for p, r in zip(parts, (0.70, 0.15, 0.15)):
        assert abs(len(p) - n * r) <= 1
