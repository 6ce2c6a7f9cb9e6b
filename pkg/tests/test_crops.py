"""Unit and property tests for detection filtering, cropping and fusion."""

from __future__ import annotations

import json
import random
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from oracles import oracle_fuse, oracle_iou, oracle_top_k_diverse
from prefrank.crops import (
    Crop,
    CropSet,
    Detection,
    FilterConfig,
    clamp_box,
    crop_regions,
    filter_boxes,
    filter_detections,
    fuse_scores,
    iou,
    map_box_to_lr,
    parse_detection_file,
)

FIXTURE = json.loads((Path(__file__).parent / "data" / "box_fixture.json").read_text())


def simple_boxes(extent=100):
    return st.builds(
        lambda x0, y0, w, h: (float(x0), float(y0), float(x0 + w), float(y0 + h)),
        st.integers(0, extent - 2),
        st.integers(0, extent - 2),
        st.integers(1, extent),
        st.integers(1, extent),
    )


class TestIou:
    def test_frozen_value(self):
        assert iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3)

    def test_disjoint_and_identical(self):
        assert iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0
        assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            iou((0, 0, 0, 10), (0, 0, 10, 10))
        with pytest.raises(ValueError):
            iou((0, 0, 10, 10), (5, 5, 5, 5))

    @given(simple_boxes(), simple_boxes())
    def test_symmetric_bounded_matches_oracle(self, a, b):
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == iou(b, a)
        assert v == pytest.approx(oracle_iou(a, b), abs=1e-12)


class TestClampBox:
    def test_clamps_to_frame(self):
        assert clamp_box((-5, -5, 50, 120), 100, 100) == (0, 0, 50, 100)

    def test_fully_outside_collapses(self):
        x0, y0, x1, y1 = clamp_box((200, 200, 300, 300), 100, 100)
        assert x1 <= x0 or (x0, y0, x1, y1) == (100.0, 100.0, 100.0, 100.0)


def _fixture_detections():
    return [
        Detection(label=d["label"], confidence=d["confidence"], box=tuple(map(float, d["box"])))
        for d in FIXTURE["detections"]
    ]


class TestFilterStages:
    def test_fixture_end_to_end(self):
        kept = filter_detections(_fixture_detections(), FIXTURE["width"], FIXTURE["height"])
        got = [(d.label, tuple(d.box)) for d in kept]
        want = [(e["label"], tuple(map(float, e["box"]))) for e in FIXTURE["expected"]]
        assert got == want

    def test_fixture_removed_labels_absent(self):
        kept = filter_detections(_fixture_detections(), FIXTURE["width"], FIXTURE["height"])
        kept_ids = {(d.label, tuple(d.box)) for d in kept}
        for d in FIXTURE["detections"]:
            entry = (d["label"], tuple(map(float, d["box"])))
            if d["removed_by"] is None:
                assert entry in kept_ids
            else:
                assert entry not in kept_ids

    def test_confidence_threshold_inclusive(self):
        d = Detection(label="cat", confidence=0.25, box=(0, 0, 400, 400))
        assert filter_detections([d], 1000, 1000) == [d]
        low = Detection(label="cat", confidence=0.2499, box=(0, 0, 400, 400))
        assert filter_detections([low], 1000, 1000) == []

    def test_nms_same_label_only(self):
        a = Detection(label="person", confidence=0.9, box=(0, 0, 400, 400))
        b = Detection(label="person", confidence=0.8, box=(10, 10, 400, 400))
        c = Detection(label="animal", confidence=0.7, box=(500, 500, 900, 900))
        kept = filter_detections([a, b, c], 1000, 1000)
        assert kept == [a, c]

    def test_nms_strictly_greater(self):
        # IoU exactly at the threshold is not suppressed; the pair then
        # falls to the dedup stage, which also requires strictly-greater.
        a = Detection(label="person", confidence=0.9, box=(0, 0, 300, 600))
        b = Detection(label="person", confidence=0.8, box=(0, 200, 300, 800))
        assert iou(a.box, b.box) == pytest.approx(0.5)
        cfg = FilterConfig(area_range=(0.05, 0.7))
        kept = filter_detections([a, b], 1000, 1000, cfg)
        assert kept == [a, b]

    def test_nms_confidence_tie_prefers_larger_area(self):
        big = Detection(label="person", confidence=0.9, box=(0, 0, 420, 420))
        small = Detection(label="person", confidence=0.9, box=(20, 20, 400, 400))
        kept = filter_detections([small, big], 1000, 1000)
        assert kept == [big]

    def test_blocklist_case_insensitive_substring(self):
        sky = Detection(label="Clear SKY above", confidence=0.9, box=(0, 0, 400, 400))
        assert filter_detections([sky], 1000, 1000) == []
        custom = FilterConfig(blocklist=("grass",))
        lawn = Detection(label="Grass field", confidence=0.9, box=(0, 0, 400, 400))
        assert filter_detections([lawn], 1000, 1000, custom) == []
        assert filter_detections([sky], 1000, 1000, custom) == [sky]

    def test_aspect_limit_inclusive(self):
        # 450x100 has aspect exactly 4.5 and squeaks through on area with a
        # wider range; 460x100 exceeds it.
        cfg = FilterConfig(area_range=(0.0, 1.0))
        ok = Detection(label="train", confidence=0.9, box=(0, 0, 450, 100))
        assert filter_detections([ok], 1000, 1000, cfg) == [ok]
        out = Detection(label="train", confidence=0.9, box=(0, 0, 460, 100))
        assert filter_detections([out], 1000, 1000, cfg) == []

    def test_area_bounds_inclusive(self):
        lo = Detection(label="box", confidence=0.9, box=(0, 0, 250, 400))  # exactly 0.1
        hi = Detection(label="crate", confidence=0.9, box=(0, 0, 1000, 700))  # exactly 0.7
        under = Detection(label="chip", confidence=0.9, box=(0, 0, 100, 999))  # 0.0999
        kept = filter_detections([lo, hi, under], 1000, 1000)
        assert kept == [lo, hi]

    def test_dedup_keeps_larger_cross_label(self):
        big = Detection(label="dog", confidence=0.6, box=(0, 0, 400, 400))
        small = Detection(label="animal", confidence=0.9, box=(10, 10, 390, 390))
        assert iou(big.box, small.box) > 0.7
        kept = filter_detections([small, big], 1000, 1000)
        assert kept == [big]

    def test_dedup_iterates_to_fixed_point(self):
        # Chain: a overlaps b, b overlaps c, a disjoint-enough from c.
        # Dropping b (smaller than a) must not also drop c.
        cfg = FilterConfig(area_range=(0.01, 0.9), dedup_iou=0.5)
        a = Detection(label="l1", confidence=0.9, box=(0, 0, 400, 300))
        b = Detection(label="l2", confidence=0.9, box=(0, 0, 300, 300))
        c = Detection(label="l3", confidence=0.9, box=(130, 0, 300, 300))
        assert iou(a.box, b.box) > 0.5 and iou(b.box, c.box) > 0.5 and iou(a.box, c.box) < 0.5
        kept = filter_detections([a, b, c], 1000, 1000, cfg)
        assert kept == [a, c]

    def test_top_k_diversity(self):
        cfg = FilterConfig(area_range=(0.0, 1.0), k_max=2)
        # Two heavily-overlapping boxes and two isolated ones: the isolated
        # pair has the lowest mean IoU.
        d0 = Detection(label="a", confidence=0.9, box=(0, 0, 300, 300))
        d1 = Detection(label="b", confidence=0.9, box=(0, 0, 300, 290))
        d2 = Detection(label="c", confidence=0.9, box=(600, 600, 900, 900))
        d3 = Detection(label="d", confidence=0.9, box=(600, 0, 900, 300))
        cfg_loose = FilterConfig(area_range=(0.0, 1.0), k_max=2, dedup_iou=0.99)
        kept = filter_detections([d0, d1, d2, d3], 1000, 1000, cfg_loose)
        assert kept == [d2, d3]

    def test_stage5_matches_naive_oracle_on_random_sets(self):
        rng = random.Random(99)
        for _ in range(120):
            n = rng.randint(5, 9)
            dets = []
            for i in range(n):
                x0 = rng.randint(0, 500)
                y0 = rng.randint(0, 500)
                w = rng.randint(320, 500)
                h = rng.randint(320, 500)
                dets.append(
                    Detection(
                        label=f"l{i}",
                        confidence=0.9,
                        box=(float(x0), float(y0), float(x0 + w), float(y0 + h)),
                    )
                )
            cfg = FilterConfig(area_range=(0.0, 1.0), dedup_iou=1.0, k_max=4)
            kept = filter_detections(dets, 1000, 1000, cfg)
            boxes = [d.box for d in dets]
            areas = [d.area for d in dets]
            want = [dets[i] for i in oracle_top_k_diverse(boxes, areas, 4)]
            assert kept == want

    def test_boxes_clamped_first(self):
        d = Detection(label="cat", confidence=0.9, box=(-100, -100, 400, 400))
        kept = filter_detections([d], 1000, 1000)
        assert kept[0].box == (0.0, 0.0, 400.0, 400.0)

    def test_fully_outside_dropped(self):
        d = Detection(label="cat", confidence=0.9, box=(1200, 1200, 1400, 1400))
        assert filter_detections([d], 1000, 1000) == []

    @given(
        st.lists(
            st.builds(
                lambda label, conf, x0, y0, w, h: Detection(
                    label=label, confidence=conf, box=(x0, y0, x0 + w, y0 + h)
                ),
                st.sampled_from(["person", "car", "sky", "dog", "water surfaces area"]),
                st.floats(0.0, 1.0),
                st.integers(0, 800).map(float),
                st.integers(0, 800).map(float),
                st.integers(50, 900).map(float),
                st.integers(50, 900).map(float),
            ),
            max_size=12,
        )
    )
    def test_output_invariants(self, dets):
        cfg = FilterConfig()
        kept = filter_detections(dets, 1000, 1000, cfg)
        assert len(kept) <= cfg.k_max
        for d in kept:
            assert d.confidence >= cfg.tau_box
            assert not any(term in d.label.lower() for term in cfg.blocklist)
            x0, y0, x1, y1 = d.box
            assert 0 <= x0 < x1 <= 1000 and 0 <= y0 < y1 <= 1000
            w, h = x1 - x0, y1 - y0
            assert max(w / h, h / w) <= cfg.max_aspect
            assert cfg.area_range[0] <= d.area / 1e6 <= cfg.area_range[1]
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                assert iou(kept[i].box, kept[j].box) <= cfg.dedup_iou

    def test_filter_boxes_wraps_cropset(self):
        cs = filter_boxes(_fixture_detections(), 1000, 1000)
        assert cs.global_area == 1_000_000.0
        assert cs.global_score is None
        assert len(cs.crops) == 4
        assert all(c.score is None for c in cs.crops)
        assert cs.crops[0].area == 160_000.0


class TestFuseScores:
    def test_frozen_value(self):
        got = fuse_scores(4.0, 100.0, [Crop(box=(0, 0, 1, 1), area=50.0, score=2.0)])
        assert got == pytest.approx(10 / 3, abs=1e-9)
        assert got == pytest.approx(oracle_fuse(4.0, 100.0, [(2.0, 50.0)]), abs=1e-12)

    def test_no_crops_returns_global(self):
        assert fuse_scores(3.7, 100.0, []) == 3.7

    def test_missing_score_rejected(self):
        with pytest.raises(ValueError):
            fuse_scores(4.0, 100.0, [Crop(box=(0, 0, 1, 1), area=50.0)])

    def test_bad_area_rejected(self):
        with pytest.raises(ValueError):
            fuse_scores(4.0, 0.0, [])

    @given(
        st.floats(1, 5),
        st.floats(1, 1e6),
        st.lists(st.tuples(st.floats(1, 5), st.floats(1, 1e6)), max_size=4),
    )
    def test_bounded_by_participants(self, gs, ga, crop_specs):
        crops = [Crop(box=(0, 0, 1, 1), area=a, score=s) for s, a in crop_specs]
        fused = fuse_scores(gs, ga, crops)
        scores = [gs] + [c.score for c in crops]
        assert min(scores) - 1e-9 <= fused <= max(scores) + 1e-9

    @given(st.floats(1, 5), st.lists(st.floats(1, 1e6), max_size=4))
    def test_constant_scores_fuse_to_constant(self, s, areas):
        crops = [Crop(box=(0, 0, 1, 1), area=a, score=s) for a in areas]
        assert fuse_scores(s, 1000.0, crops) == pytest.approx(s, abs=1e-9)


class TestCropRegions:
    def test_exact_pixel_dimensions(self, tmp_path):
        img = Image.new("RGB", (64, 48), (10, 20, 30))
        regions = crop_regions(img, [(0, 0, 32, 16), (10.2, 9.8, 30.0, 40.0)])
        assert regions[0].size == (32, 16)
        assert regions[1].size == (20, 30)

    def test_from_path(self, tmp_path):
        path = tmp_path / "img.png"
        Image.new("RGB", (20, 20), (1, 2, 3)).save(path)
        (region,) = crop_regions(path, [(5, 5, 15, 15)])
        assert region.size == (10, 10)

    def test_out_of_bounds_rejected(self):
        img = Image.new("RGB", (20, 20))
        with pytest.raises(ValueError):
            crop_regions(img, [(10, 10, 25, 15)])
        with pytest.raises(ValueError):
            crop_regions(img, [(-1, 0, 10, 10)])

    def test_pixel_content_preserved(self):
        img = Image.new("RGB", (4, 4), (0, 0, 0))
        img.putpixel((2, 1), (255, 0, 0))
        (region,) = crop_regions(img, [(2, 1, 3, 2)])
        assert region.getpixel((0, 0)) == (255, 0, 0)


class TestMapBoxToLr:
    def test_frozen_value(self):
        assert map_box_to_lr((3, 3, 509, 510), 4, 128, 128) == (0.0, 0.0, 128.0, 128.0)

    def test_outward_growth(self):
        assert map_box_to_lr((5, 5, 9, 9), 4, 128, 128) == (1.0, 1.0, 3.0, 3.0)
        assert map_box_to_lr((4, 4, 8, 8), 4, 128, 128) == (1.0, 1.0, 2.0, 2.0)

    def test_clamped_to_lr_frame(self):
        assert map_box_to_lr((0, 0, 512, 512), 4, 120, 120) == (0.0, 0.0, 120.0, 120.0)

    def test_empty_mapping_rejected(self):
        with pytest.raises(ValueError):
            map_box_to_lr((500, 500, 504, 504), 4, 100, 100)

    @given(
        st.integers(0, 400).map(float),
        st.integers(0, 400).map(float),
        st.integers(1, 112).map(float),
        st.integers(1, 112).map(float),
    )
    def test_covers_source_region(self, x0, y0, w, h):
        box = (x0, y0, x0 + w, y0 + h)
        lr = map_box_to_lr(box, 4, 128, 128)
        # The LR box, scaled back up, contains the original box when the
        # original lies within the upscaled LR frame.
        assert lr[0] * 4 <= x0 and lr[1] * 4 <= y0
        assert lr[2] * 4 >= min(x0 + w, 512) and lr[3] * 4 >= min(y0 + h, 512)


class TestParseDetectionFile:
    def test_pixel_boxes(self):
        image, w, h, dets = parse_detection_file(
            {
                "image": "hr.png",
                "width": 100,
                "height": 200,
                "detections": [
                    {"label": "cat", "confidence": 0.9, "box": [1, 2, 3, 4], "normalized": False}
                ],
            }
        )
        assert (image, w, h) == ("hr.png", 100, 200)
        assert dets[0].box == (1.0, 2.0, 3.0, 4.0)

    def test_normalized_boxes_scaled(self):
        _, _, _, dets = parse_detection_file(
            {
                "image": "hr.png",
                "width": 100,
                "height": 200,
                "detections": [
                    {"label": "cat", "confidence": 0.9, "box": [0.1, 0.1, 0.5, 0.5], "normalized": True}
                ],
            }
        )
        assert dets[0].box == (10.0, 20.0, 50.0, 100.0)

    @pytest.mark.parametrize(
        "payload",
        [
            {},
            {"image": "x", "width": 0, "height": 10, "detections": []},
            {"image": "x", "width": 10, "height": 10, "detections": [{"label": "a"}]},
            {
                "image": "x",
                "width": 10,
                "height": 10,
                "detections": [{"label": "a", "confidence": 0.5, "box": [1, 2, 3]}],
            },
        ],
    )
    def test_malformed_rejected(self, payload):
        with pytest.raises(ValueError):
            parse_detection_file(payload)


class TestConfigValidation:
    def test_defaults(self):
        cfg = FilterConfig()
        assert cfg.tau_box == 0.25
        assert cfg.nms_iou == 0.5
        assert cfg.blocklist == ("sky", "clouds", "water surfaces", "snow", "fog")
        assert cfg.max_aspect == 4.5
        assert cfg.area_range == (0.1, 0.7)
        assert cfg.dedup_iou == 0.7
        assert cfg.k_max == 4

    def test_invalid(self):
        with pytest.raises(ValueError):
            FilterConfig(tau_box=1.5)
        with pytest.raises(ValueError):
            FilterConfig(area_range=(0.5, 0.2))
        with pytest.raises(ValueError):
            FilterConfig(k_max=0)

    def test_detection_validation(self):
        with pytest.raises(ValueError):
            Detection(label="x", confidence=1.2, box=(0, 0, 1, 1))
        with pytest.raises(ValueError):
            Detection(label="x", confidence=0.5, box=(5, 0, 1, 1))

    def test_cropset_validation(self):
        with pytest.raises(ValueError):
            CropSet(global_area=0.0)
        with pytest.raises(ValueError):
            CropSet(global_area=10.0, crops=(Crop(box=(0, 0, 1, 1), area=0.0),))
