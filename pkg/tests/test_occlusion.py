import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from conceptmine.cav import compute_cav, compute_cav_batch
from conceptmine.dataset import PartFeatureDataset, SyntheticSpec, generate_synthetic
from conceptmine.errors import ValidationError
from conceptmine.head import HeadTrainConfig, train_head
from conceptmine.mining import DbscanParams, mine_concepts
from conceptmine.occlusion import (OcclusionConfig, occlude_sample,
                                   occlusion_eval, save_curve_csv,
                                   save_curve_svg)


def fitted(n_parts=4, seed=0, scrub_g=False):
    spec = SyntheticSpec(n_classes=3, n_parts=n_parts, feat_dim=16,
                         samples_per_class=20, concepts_per_cell=2,
                         noise_sigma=0.02, min_separation=1.0, seed=seed)
    ds, _ = generate_synthetic(spec)
    if scrub_g:
        # Class-independent g isolates the part-feature contribution.
        rng = np.random.default_rng(seed + 999)
        noise = 0.05 * rng.standard_normal((ds.n_samples, ds.feat_dim))
        ds = PartFeatureDataset(ds.part_features, noise.astype(np.float32),
                                ds.labels, ds.n_classes)
    book = mine_concepts(ds, DbscanParams(eps=0.3, min_pts=3))
    z, g = compute_cav_batch(ds, book)
    head = train_head(z, g, ds.labels,
                      HeadTrainConfig(lam=0.001, gamma=0.5, epochs=120))
    return ds, book, head


class TestOccludeSample:
    def test_fraction_zero_identity(self):
        ds, book, head = fitted()
        out = occlude_sample(ds.part_features[0], ds.nonproto_features[0],
                             head, book, 0.0)
        np.testing.assert_array_equal(out, ds.part_features[0].astype(np.float64))

    def test_ceiling_part_count(self):
        ds, book, head = fitted(n_parts=8, seed=1)
        out = occlude_sample(ds.part_features[0], ds.nonproto_features[0],
                             head, book, 0.3)
        zeroed = np.flatnonzero((out == 0).all(axis=1))
        assert len(zeroed) == 3  # ceil(0.3 * 8)

    def test_single_part_minimum_one(self):
        ds, book, head = fitted(n_parts=1, seed=2)
        out = occlude_sample(ds.part_features[0], ds.nonproto_features[0],
                             head, book, 0.1)
        assert (out == 0).all()

    def test_zeroed_part_kills_its_cav_entries(self):
        ds, book, head = fitted(seed=3)
        out = occlude_sample(ds.part_features[0], ds.nonproto_features[0],
                             head, book, 0.3)
        cav = compute_cav(out, ds.nonproto_features[0], book)
        entry_parts = book.parts()
        for p in np.flatnonzero((out == 0).all(axis=1)):
            cols = np.flatnonzero(entry_parts == p)
            assert (cav.z[cols] == 0.0).all()

    def test_g_untouched(self):
        ds, book, head = fitted(seed=4)
        g_before = ds.nonproto_features[0].copy()
        occlude_sample(ds.part_features[0], ds.nonproto_features[0],
                       head, book, 0.5)
        np.testing.assert_array_equal(ds.nonproto_features[0], g_before)

    def test_bad_fraction(self):
        ds, book, head = fitted(seed=5)
        with pytest.raises(ValidationError):
            occlude_sample(ds.part_features[0], ds.nonproto_features[0],
                           head, book, 1.5)

    def test_deterministic(self):
        ds, book, head = fitted(seed=6)
        a = occlude_sample(ds.part_features[1], ds.nonproto_features[1],
                           head, book, 0.4)
        b = occlude_sample(ds.part_features[1], ds.nonproto_features[1],
                           head, book, 0.4)
        np.testing.assert_array_equal(a, b)


class TestOcclusionEval:
    def test_fraction_zero_only_equals_clean(self):
        ds, book, head = fitted(seed=7)
        rows = occlusion_eval(ds, head, book, OcclusionConfig(fractions=(0.0,)))
        assert len(rows) == 1
        z, g = compute_cav_batch(ds, book)
        from conceptmine.head import predict
        clean_acc = 100.0 * float(np.mean(predict(z, g, head)
                                          == ds.labels.astype(int)))
        assert rows[0][0] == 0.0
        assert rows[0][1] == clean_acc

    def test_baseline_prepended(self):
        ds, book, head = fitted(seed=8)
        rows = occlusion_eval(ds, head, book,
                              OcclusionConfig(fractions=(0.1, 0.2, 0.3)))
        assert [r[0] for r in rows] == [0.0, 0.1, 0.2, 0.3]

    def test_accuracy_monotone_nonincreasing(self):
        ds, book, head = fitted(seed=9, scrub_g=True)
        rows = occlusion_eval(ds, head, book,
                              OcclusionConfig(fractions=(0.1, 0.2, 0.3)))
        accs = [r[1] for r in rows]
        assert all(a >= b - 1e-9 for a, b in zip(accs, accs[1:]))

    def test_many_parts_degrade_less(self):
        ds8, book8, head8 = fitted(n_parts=8, seed=10, scrub_g=True)
        ds1, book1, head1 = fitted(n_parts=1, seed=10, scrub_g=True)
        r8 = occlusion_eval(ds8, head8, book8, OcclusionConfig())
        r1 = occlusion_eval(ds1, head1, book1, OcclusionConfig())
        drop8 = r8[0][1] - r8[-1][1]
        drop1 = r1[0][1] - r1[-1][1]
        assert drop8 < drop1

    def test_unsorted_fractions_rejected(self):
        with pytest.raises(ValidationError):
            OcclusionConfig(fractions=(0.3, 0.1))


class TestCurveIo:
    def test_csv(self, tmp_path):
        rows = [(0.0, 100.0, 50.0), (0.1, 90.0, 45.0)]
        path = tmp_path / "curve.csv"
        save_curve_csv(rows, path)
        got = list(csv.reader(open(path)))
        assert got[0] == ["fraction", "accuracy", "F3"]
        assert len(got) == 3
        assert float(got[2][1]) == 90.0

    def test_svg_parses(self, tmp_path):
        rows = [(0.0, 100.0, 50.0), (0.1, 90.0, 45.0), (0.3, 70.0, 40.0)]
        path = tmp_path / "curve.svg"
        save_curve_svg(rows, path)
        root = ET.parse(path).getroot()
        assert root.tag.endswith("svg")
        polylines = [el for el in root.iter() if el.tag.endswith("polyline")]
        assert len(polylines) == 2
