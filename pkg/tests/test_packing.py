import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ropekit import (
    DocSpec,
    RopeMode,
    SegmentMode,
    document_mask,
    plan_packing,
    read_plan,
    rope_mode,
    switch_plan,
    write_plan,
)
from ropekit.errors import DocTooLongForBucketError
from ropekit.packing import FRAMING_TOKENS_PER_DOC


def doc_mixes():
    return st.lists(
        st.tuples(st.integers(1, 900), st.booleans()),
        min_size=1,
        max_size=25,
    ).map(
        lambda items: [
            DocSpec(f"doc{i}", length if short else length * 13)
            for i, (length, short) in enumerate(items)
        ]
    )


def reconstruct_coverage(segments):
    """Map doc_id -> sorted token ranges that appear across all segments."""
    coverage = {}
    for seg in segments:
        for entry in seg.entries:
            coverage.setdefault(entry.doc_id, []).append((entry.start, entry.end))
    return {k: sorted(v) for k, v in coverage.items()}


class TestPlanPackingExamples:
    def test_two_small_docs_one_segment(self):
        segments = plan_packing([DocSpec("a", 3), DocSpec("b", 2)], 8, 4)
        assert len(segments) == 1
        seg = segments[0]
        assert seg.mode is SegmentMode.SHORT_ORIGINAL_ROPE
        assert seg.boundaries == (0, 3 + FRAMING_TOKENS_PER_DOC)
        assert [e.doc_id for e in seg.entries] == ["a", "b"]

    def test_long_doc_chunks_with_padded_tail(self):
        window = 8
        segments = plan_packing([DocSpec("big", 20)], window, 4)  # 2.5x window
        assert len(segments) == 3
        assert all(s.mode is SegmentMode.LONG_RESCALED_ROPE for s in segments)
        assert segments[0].boundaries == (0,)
        assert segments[1].boundaries == ()
        assert segments[-1].used_len < window
        spans = [(e.start, e.end) for s in segments for e in s.entries]
        assert spans == [(0, 8), (8, 16), (16, 20)]

    def test_quota_split_lands_within_one_document(self):
        # Every bucket holds more tokens than its share, so each cap binds.
        docs = (
            [DocSpec(f"s{i}", 100) for i in range(600)]
            + [DocSpec(f"m{i}", 1500) for i in range(40)]
            + [DocSpec(f"l{i}", 6000) for i in range(10)]
        )
        quotas = (0.3, 0.3, 0.4)
        segments = plan_packing(
            docs, 4096, 1024, quotas=quotas, bucket_bounds=[1024, 4000]
        )
        coverage = reconstruct_coverage(segments)
        by_bucket = {0: 0, 1: 0, 2: 0}
        sizes = {d.doc_id: d.token_len for d in docs}
        largest = {0: 100, 1: 1500, 2: 6000}
        for doc_id in coverage:
            length = sizes[doc_id]
            bucket = 0 if length <= 1024 else (1 if length <= 4000 else 2)
            by_bucket[bucket] += length
        selected_total = sum(by_bucket.values())
        assert selected_total > 0
        for bucket, quota in enumerate(quotas):
            assert abs(by_bucket[bucket] - quota * selected_total) < largest[bucket]

    def test_short_doc_over_pretrained_rejected(self):
        with pytest.raises(DocTooLongForBucketError):
            plan_packing([DocSpec("x", 600)], 2048, 512, bucket_bounds=[1024, 4000])


class TestPackingProperties:
    @settings(max_examples=60, deadline=None)
    @given(doc_mixes())
    def test_token_conservation(self, docs):
        window, pretrained = 1024, 900
        segments = plan_packing(docs, window, pretrained)
        coverage = reconstruct_coverage(segments)
        assert set(coverage) == {d.doc_id for d in docs}
        for doc in docs:
            ranges = coverage[doc.doc_id]
            # Ranges tile [0, token_len) exactly once, in order.
            cursor = 0
            for start, end in ranges:
                assert start == cursor
                cursor = end
            assert cursor == doc.token_len

    @settings(max_examples=40, deadline=None)
    @given(doc_mixes())
    def test_window_capacity_respected(self, docs):
        window, pretrained = 1024, 900
        for seg in plan_packing(docs, window, pretrained):
            content = sum(e.end - e.start for e in seg.entries)
            framing = seg.used_len - content  # terminators land at doc ends
            assert 0 <= framing <= len(seg.entries) * FRAMING_TOKENS_PER_DOC
            assert seg.used_len <= window

    @settings(max_examples=40, deadline=None)
    @given(doc_mixes())
    def test_short_segments_contain_only_short_docs(self, docs):
        window, pretrained = 1024, 900
        sizes = {d.doc_id: d.token_len for d in docs}
        for seg in plan_packing(docs, window, pretrained):
            if seg.mode is SegmentMode.SHORT_ORIGINAL_ROPE:
                assert all(sizes[e.doc_id] <= pretrained for e in seg.entries)
            else:
                assert len(seg.entries) == 1


class TestDocumentMask:
    def test_blocks_isolate_documents(self):
        seg = plan_packing([DocSpec("a", 3), DocSpec("b", 2)], 8, 4)[0]
        mask = document_mask(seg)
        assert not mask.full_attention
        a_tokens = range(0, 4)
        b_tokens = range(4, 7)
        for i in a_tokens:
            for j in a_tokens:
                assert mask.allowed(i, j)
            for j in b_tokens:
                assert not mask.allowed(i, j)
        assert not mask.allowed(7, 7)  # padding

    def test_long_segment_full_attention(self):
        seg = plan_packing([DocSpec("big", 20)], 8, 4)[0]
        mask = document_mask(seg)
        assert mask.full_attention
        assert mask.allowed(0, 7)

    def test_single_doc_segment_equivalent_to_full_attention_over_content(self):
        seg = plan_packing([DocSpec("solo", 7)], 8, 8)[0]
        mask = document_mask(seg)
        used = seg.used_len
        for i in range(used):
            for j in range(used):
                assert mask.allowed(i, j)

    def test_mask_symmetry_and_reflexivity(self):
        docs = [DocSpec(f"d{i}", 5 + i) for i in range(6)]
        for seg in plan_packing(docs, 32, 16):
            mask = document_mask(seg)
            n = seg.window_len
            ids = mask.doc_id_per_token
            for a in range(n):
                assert mask.allowed(a, a) == (ids[a] >= 0)
                for b in range(a + 1, n):
                    assert mask.allowed(a, b) == mask.allowed(b, a)

    def test_no_cross_document_pair_in_any_short_mask(self):
        gen = np.random.Generator(np.random.PCG64(17))
        docs = [DocSpec(f"d{i}", int(gen.integers(1, 100))) for i in range(30)]
        for seg in plan_packing(docs, 128, 100):
            if seg.mode is not SegmentMode.SHORT_ORIGINAL_ROPE:
                continue
            mask = document_mask(seg)
            ids = mask.doc_id_per_token
            for a in range(seg.window_len):
                for b in range(seg.window_len):
                    if mask.allowed(a, b):
                        assert ids[a] == ids[b] != -1


class TestRopeModeSwitch:
    def test_mode_examples(self):
        assert rope_mode(1000, 0, 2048) is RopeMode.ORIGINAL
        assert rope_mode(2000, 100, 2048) is RopeMode.RESCALED
        assert rope_mode(2048, 0, 2048) is RopeMode.ORIGINAL

    def test_mode_monotone_over_generation(self):
        switched = False
        for generated in range(0, 4000, 13):
            mode = rope_mode(1500, generated, 2048)
            if mode is RopeMode.RESCALED:
                switched = True
            if switched:
                assert mode is RopeMode.RESCALED

    def test_switch_at_window_boundary(self):
        plan = switch_plan(2048, 2048)
        assert plan.flip_at_generated == 0
        assert not plan.starts_rescaled
        assert plan.recompute_kv_cache_once

    def test_long_prompt_starts_rescaled(self):
        plan = switch_plan(5000, 2048)
        assert plan.starts_rescaled
        assert plan.flip_at_generated == 0
        assert plan.flips
        assert not plan.recompute_kv_cache_once

    def test_no_flip_when_generation_fits(self):
        plan = switch_plan(1000, 2048, expected_generated=500)
        assert plan.flips is False
        assert not plan.recompute_kv_cache_once
        assert plan.flip_at_generated == 1048

    def test_flip_step_agrees_with_rope_mode(self):
        plan = switch_plan(1500, 2048)
        assert rope_mode(1500, plan.flip_at_generated, 2048) is RopeMode.ORIGINAL
        assert rope_mode(1500, plan.flip_at_generated + 1, 2048) is RopeMode.RESCALED


class TestPlanIo:
    def test_round_trip(self, tmp_path):
        docs = [DocSpec("a", 3), DocSpec("b", 2), DocSpec("long", 21)]
        segments = plan_packing(docs, 8, 4)
        path = tmp_path / "plan.jsonl"
        write_plan(segments, path)
        loaded = read_plan(path)
        assert len(loaded) == len(segments)
        for x, y in zip(segments, loaded):
            assert x.mode == y.mode
            assert x.entries == y.entries
            assert x.boundaries == y.boundaries
            assert np.array_equal(x.doc_id_per_token, y.doc_id_per_token)

    def test_line_schema(self, tmp_path):
        import json

        segments = plan_packing([DocSpec("a", 3)], 8, 4)
        path = tmp_path / "plan.jsonl"
        write_plan(segments, path)
        doc = json.loads(path.read_text().splitlines()[0])
        assert list(doc) == ["mode", "window_len", "entries", "doc_id_per_token"]
        assert doc["mode"] == "short"
        assert doc["doc_id_per_token"] == [[0, 4], [-1, 4]]
