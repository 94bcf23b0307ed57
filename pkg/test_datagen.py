import gzip
from datetime import date

import numpy as np
import pytest

from core_grid import GridPoint, SparseDist
from datagen import (
    CHECKIN_COVARIANCE_RANGE,
    CheckinRecord,
    MixtureSpec,
    build_cells,
    dataset_from_points,
    filter_bbox,
    filter_dates,
    manifest_path,
    parse_checkins,
    random_mixture,
    read_checkins,
    read_dataset,
    sample_mixture,
    snap_points,
    sparsity,
    synth_users,
    synth_users_to_sparsity,
    write_dataset,
)
from dp_noise import RngSeed

SAMPLE_LINE = "u1\t2010-01-15T08:00:00Z\t30.24\t-97.79\tL1"


def test_parse_checkin_line():
    records, skipped = parse_checkins([SAMPLE_LINE + "\n"])
    assert skipped == 0
    assert records == [CheckinRecord("u1", "2010-01-15T08:00:00Z", 30.24, -97.79, "L1")]
    assert records[0].day == date(2010, 1, 15)


def test_parse_skips_malformed_lines():
    lines = [
        SAMPLE_LINE,
        "u2\t2010-01-15T08:00:00Z\t95.0\t-97.79",
        "u3\tnot-a-time\t30.0\t-97.0",
        "u4\t2010-01-15T08:00:00Z\t30.0",
        "",
        "u5\t2010-02-01T10:00:00Z\t40.0\t-100.0",
    ]
    records, skipped = parse_checkins(lines)
    assert [r.user_id for r in records] == ["u1", "u5"]
    assert skipped == 3


def test_filter_dates_inclusive():
    records, _ = parse_checkins([
        "a\t2010-01-01T00:00:00Z\t30\t-97",
        "b\t2010-01-15T12:00:00Z\t30\t-97",
        "c\t2010-02-01T00:00:00Z\t30\t-97",
    ])
    kept = filter_dates(records, date(2010, 1, 1), date(2010, 1, 15))
    assert [r.user_id for r in kept] == ["a", "b"]


def test_read_gzip_checkins(tmp_path):
    path = tmp_path / "checkins.txt.gz"
    with gzip.open(path, "wt", encoding="utf-8") as f:
        f.write(SAMPLE_LINE + "\n")
    records, skipped = read_checkins(path)
    assert len(records) == 1 and skipped == 0
    with pytest.raises(ValueError):
        read_checkins(tmp_path / "missing.txt")


def test_bbox_is_open():
    records, _ = parse_checkins([
        "a\t2010-01-01T00:00:00Z\t30\t-97",
        "b\t2010-01-01T00:00:00Z\t50\t-97",
        "c\t2010-01-01T00:00:00Z\t10\t10",
    ])
    assert [r.user_id for r in filter_bbox(records)] == ["a"]


def test_build_cells_ranks_by_count():
    lines = []
    for i in range(5):
        lines.append(f"u{i}\t2010-01-01T00:00:00Z\t0.5\t0.5")
    lines.append("v\t2010-01-01T00:00:00Z\t1.5\t1.5")
    lines.append("v\t2010-01-01T00:00:00Z\t1.6\t1.6")
    records, _ = parse_checkins(lines)
    cells = build_cells(records, bbox=(0.0, 0.0, 2.0, 2.0), coarse=2, top_cells=2, resolution=8, min_users=3)
    assert [(c.cx, c.cy, c.checkins) for c in cells] == [(0, 0, 5), (1, 1, 2)]
    assert cells[0].meets_min_users and not cells[1].meets_min_users
    v = cells[1].users["v"]
    assert v.is_distribution()
    assert v.entries == {GridPoint(4, 4, 8): 1.0}


def test_mixture_spec_validation():
    with pytest.raises(ValueError):
        MixtureSpec(1, ((0.5, 0.5),), (np.array([[1.0, 2.0], [2.0, 1.0]]),), 5, 5)
    with pytest.raises(ValueError):
        MixtureSpec(2, ((0.5, 0.5),), (np.eye(2),), 5, 5)


def test_samples_stay_in_square():
    rng = RngSeed(0).generator()
    spec = random_mixture(4, rng)
    pts = sample_mixture(spec, 2000, rng)
    assert pts.shape == (2000, 2)
    assert np.all((pts >= 0) & (pts < 1))


def test_snap_points():
    ix, iy = snap_points(np.array([[0.0, 0.99], [0.5, 0.25]]), 4)
    assert ix.tolist() == [0, 2] and iy.tolist() == [3, 1]


def test_synth_users_reproducible():
    spec = random_mixture(5, RngSeed(1).generator(), samples_per_user=10, n_users=20, resolution=32, seed=9)
    users_a, sp_a = synth_users(spec)
    users_b, sp_b = synth_users(spec)
    assert users_a == users_b and sp_a == sp_b
    assert len(users_a) == 20
    assert all(u.is_distribution() and len(u.entries) <= 10 for u in users_a)
    assert sp_a == pytest.approx(sparsity(users_a))


def test_synth_to_sparsity_doubles_samples():
    spec = MixtureSpec(1, ((0.5, 0.5),), (np.eye(2) * 0.01,), samples_per_user=1, n_users=10, resolution=16, seed=3)
    users, reached, samples = synth_users_to_sparsity(spec, 0.05)
    assert reached >= 0.05
    assert samples >= 1 and samples & (samples - 1) == 0


def test_dataset_round_trip(tmp_path):
    users = {
        "a": SparseDist.from_mapping(8, {(1, 2): 0.25, (7, 7): 0.75}),
        "b": SparseDist.from_mapping(8, {(0, 0): 1.0}),
    }
    path = tmp_path / "data.csv"
    mpath = write_dataset(path, users, {"seed": 4})
    assert mpath == manifest_path(path) == tmp_path / "data.manifest.json"
    loaded, manifest = read_dataset(path)
    assert loaded == users
    assert manifest["delta"] == 8 and manifest["seed"] == 4


def test_dataset_without_manifest_infers_resolution(tmp_path):
    path = tmp_path / "bare.csv"
    path.write_text("user_id,ix,iy,mass\nu,5,2,1.0\n", encoding="utf-8")
    users, manifest = read_dataset(path)
    assert manifest == {}
    assert users["u"].resolution == 8


def test_dataset_header_checked(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,x,y,m\n", encoding="utf-8")
    with pytest.raises(ValueError):
        read_dataset(path)


def test_dataset_from_points():
    users = dataset_from_points([GridPoint(1, 1, 4), GridPoint(2, 3, 4)])
    assert list(users) == ["u0", "u1"]
    assert users["u1"].entries == {GridPoint(2, 3, 4): 1.0}


def test_more_components_give_sparser_coverage():
    larger = 0
    for seed in range(10):
        supports = []
        for components in (20, 80):
            rng = RngSeed(seed).child(components).generator()
            spec = random_mixture(components, rng, samples_per_user=20, n_users=100, resolution=64, seed=seed)
            supports.append(synth_users(spec)[1])
        larger += supports[1] > supports[0]
    assert larger >= 9


def test_degenerate_blob_covers_one_cell():
    spec = MixtureSpec(1, ((0.5, 0.5),), (np.eye(2) * 1e-8,), samples_per_user=5, n_users=10, resolution=32, seed=2)
    _, reached = synth_users(spec)
    assert reached <= 4 / 32 ** 2


def test_covariance_range_controls_spread():
    wide = random_mixture(10, RngSeed(4).generator())
    tight = random_mixture(10, RngSeed(4).generator(), covariance_range=CHECKIN_COVARIANCE_RANGE)
    assert max(np.linalg.eigvalsh(c).max() for c in tight.covariances) <= CHECKIN_COVARIANCE_RANGE[1] + 1e-12
    assert max(np.linalg.eigvalsh(c).max() for c in wide.covariances) > CHECKIN_COVARIANCE_RANGE[1]
    with pytest.raises(ValueError):
        random_mixture(3, RngSeed(0).generator(), covariance_range=(1e-2, 1e-4))
