"""Acceptance suite: one test per release criterion, tolerances pinned.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS line per
criterion; any assertion failure is the corresponding FAIL line.
"""

import queue
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from ropekit import (
    DocSpec,
    RopeConfig,
    SearchParams,
    SegmentMode,
    WhitespaceTokenizer,
    apply_rope,
    build_corpus,
    document_mask,
    evolve,
    factors_from_base,
    ntk_base,
    ood_report,
    periods,
    pi_factors,
    plan_packing,
    relative_attention_score,
    rotation_angles,
    theoretical_critical_dimension,
    yarn_factors,
)
from ropekit.cli import main as cli_main
from ropekit.protocol import (
    EvalRequest,
    EvalResponse,
    EvaluatorClient,
    SurrogateEvaluator,
    decode_request,
    decode_response,
    encode_request,
    encode_response,
    default_surrogate_spec,
)
from ropekit.search import Candidate, candidate_index_range, validate_candidate

from conftest import make_book, toy_config, toy_surrogate_spec
from test_protocol import random_request
from test_search import TOY_GRID_OPTIMUM, grid_optimum

PHI3 = RopeConfig(10000.0, 96, 2048, 131072)
LLAMA3 = RopeConfig(500000.0, 128, 8192, 131072)


def _report(number: int, text: str) -> None:
    print(f"[criterion {number:2d}] PASS — {text}")


def random_valid_configs(n: int, seed: int) -> list[RopeConfig]:
    gen = np.random.Generator(np.random.PCG64(seed))
    configs = []
    while len(configs) < n:
        d = 2 * int(gen.integers(4, 64))
        theta = float(gen.uniform(100.0, 1e6))
        lt = int(gen.integers(64, 16384))
        if lt >= 6.283 * theta:
            continue
        configs.append(RopeConfig(theta, d, lt, lt * int(gen.integers(2, 64))))
    return configs


def test_criterion_1_critical_dimensions():
    start = time.perf_counter()
    tcd_phi3 = theoretical_critical_dimension(PHI3)
    tcd_llama3 = theoretical_critical_dimension(LLAMA3)
    elapsed = time.perf_counter() - start
    assert (tcd_phi3.full_index, tcd_phi3.cosine_index) == (62, 31)
    assert tcd_llama3.cosine_index == 35
    assert elapsed < 1.0
    _report(1, f"critical dims 62/31 and 35 in {elapsed * 1e3:.2f} ms")


def test_criterion_2_periods():
    pers = periods(PHI3)
    assert abs(pers[47] - 51861.0) / 51861.0 < 0.001
    coverage = PHI3.pretrained_len / pers[47]
    assert coverage < 0.04
    assert abs(pers[7] - 24.0) / 24.0 < 0.01
    _report(2, f"T47={pers[47]:.1f} (covering {coverage:.2%}), T7={pers[7]:.2f}")


def test_criterion_3_ood_closure():
    start = time.perf_counter()
    closed_form_checked = 0
    for config in [PHI3, LLAMA3] + random_valid_configs(50, seed=31):
        c = theoretical_critical_dimension(config).cosine_index
        for factors in (
            pi_factors(config),
            yarn_factors(config),
            factors_from_base(config, ntk_base(config)),
        ):
            assert ood_report(config, factors, c).clean
            closed_form_checked += 1
    searched_checked = 0
    for config in [toy_config(), PHI3] + random_valid_configs(2, seed=32):
        evaluator = SurrogateEvaluator(default_surrogate_spec(config))
        result = evolve(config, evaluator, SearchParams(population_size=16, iterations=4, topk=4, seed=1))
        assert ood_report(config, result.best.lambdas, result.best.d_rcd_cos).clean
        searched_checked += 1
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    _report(
        3,
        f"{closed_form_checked} closed-form + {searched_checked} searched factor sets"
        f" clean in {elapsed:.2f} s",
    )


def test_criterion_4_rope_identities():
    gen = np.random.Generator(np.random.PCG64(41))
    angles = rotation_angles(PHI3)
    for _ in range(1000):
        vec = gen.normal(size=PHI3.head_dim)
        out = apply_rope(vec, int(gen.integers(0, 300_000)), angles)
        assert abs(np.linalg.norm(out) - np.linalg.norm(vec)) <= 1e-12 * np.linalg.norm(vec)
    for _ in range(1000):
        q, k = gen.normal(size=PHI3.head_dim), gen.normal(size=PHI3.head_dim)
        m, n, delta = (int(gen.integers(0, 4096)) for _ in range(3))
        a = relative_attention_score(q, k, m, n, angles)
        b = relative_attention_score(q, k, m + delta, n + delta, angles)
        assert abs(a - b) <= 1e-9 * (1.0 + abs(a))
    _report(4, "norm preservation @1e-12 and shift invariance @1e-9, 1000 trials each")


def test_criterion_5_search_feasibility_and_convergence():
    start = time.perf_counter()
    config = toy_config()
    spec = toy_surrogate_spec()
    feasible_range = candidate_index_range(config)
    evaluated: list[np.ndarray] = []

    def recording(lambdas, cfg):
        evaluated.append(np.array(lambdas, copy=True))
        return SurrogateEvaluator(spec)(lambdas, cfg)

    result = evolve(config, recording, SearchParams(seed=42), jobs=1)
    for lam in evaluated:
        assert any(
            validate_candidate(Candidate(d, lam), config) == [] for d in feasible_range
        )
    oracle = grid_optimum()
    assert oracle == pytest.approx(TOY_GRID_OPTIMUM, rel=1e-12)
    assert result.best.fitness <= 1.01 * oracle
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    _report(
        5,
        f"{len(evaluated)} feasible evaluations; best {result.best.fitness:.4f}"
        f" vs grid {oracle:.4f} in {elapsed:.1f} s",
    )


def test_criterion_6_cli_search_determinism(tmp_path, capsys):
    flags = [
        "search", "--theta-base", "500", "--head-dim", "16",
        "--pretrained-len", "128", "--target-len", "512",
        "--seed", "42", "--surrogate",
    ]
    blobs = []
    for name, jobs in (("r1", 1), ("r2", 1), ("r3", 2)):
        out = tmp_path / f"{name}.json"
        factors = tmp_path / f"{name}.factors.json"
        assert (
            cli_main(flags + ["--jobs", str(jobs), "--out", str(out), "--factors-out", str(factors)])
            == 0
        )
        blobs.append(out.read_bytes() + factors.read_bytes())
    capsys.readouterr()
    assert blobs[0] == blobs[1] == blobs[2]
    _report(6, "byte-identical result + factor files across reruns and --jobs 2")


def test_criterion_7_needle_corpus():
    books = [make_book(seed) for seed in range(10)]
    tokenizer = WhitespaceTokenizer()
    corpora = []
    for _ in range(2):
        rng = np.random.Generator(np.random.PCG64(7))
        corpora.append(build_corpus(books, 10, 512, tokenizer, rng))
    assert corpora[0] == corpora[1]
    corpus = corpora[0]
    assert len(corpus) == 10
    preamble = (
        "A special magic number is hidden within the following text. "
        "Make sure to memorize it. I will quiz you about the number afterwards."
    )
    for sample in corpus:
        digits = str(sample.needle.magic_number)
        ids = tokenizer.encode(sample.full_text)
        assert len(ids) == sample.token_len
        assert tokenizer.decode(ids[slice(*sample.answer_token_span)]).strip() == digits
        assert preamble in sample.full_text
        key = sample.needle.key_word
        assert f"One of the special magic numbers for {key} is: {digits}." in sample.full_text
        assert (
            f"What is the special magic number for {key} mentioned in the provided text?"
            in sample.full_text
        )
        assert (
            f"The special magic number for {key} mentioned in the provided text is"
            in sample.full_text
        )
    _report(7, "10/10 samples decode their needle spans; templates verbatim; seeded")


def test_criterion_8_packing_and_masks():
    gen = np.random.Generator(np.random.PCG64(81))
    for trial in range(200):
        n_docs = int(gen.integers(1, 20))
        docs = [
            DocSpec(
                f"t{trial}d{i}",
                int(gen.integers(1, 600)) * (13 if gen.random() < 0.3 else 1),
            )
            for i in range(n_docs)
        ]
        segments = plan_packing(docs, 1024, 600)
        coverage: dict[str, list[tuple[int, int]]] = {}
        for seg in segments:
            for entry in seg.entries:
                coverage.setdefault(entry.doc_id, []).append((entry.start, entry.end))
        for doc in docs:
            ranges = sorted(coverage[doc.doc_id])
            cursor = 0
            for a, b in ranges:
                assert a == cursor
                cursor = b
            assert cursor == doc.token_len

    short_docs = [DocSpec(f"d{i}", int(v)) for i, v in enumerate([96, 200, 130, 60, 14, 3])]
    for seg in plan_packing(short_docs, 512, 256):
        assert seg.mode is SegmentMode.SHORT_ORIGINAL_ROPE
        mask = document_mask(seg)
        ids = mask.doc_id_per_token
        for a in range(seg.window_len):
            for b in range(seg.window_len):
                if mask.allowed(a, b):
                    assert ids[a] == ids[b] and ids[a] >= 0

    docs = (
        [DocSpec(f"s{i}", 100) for i in range(600)]
        + [DocSpec(f"m{i}", 1500) for i in range(40)]
        + [DocSpec(f"l{i}", 6000) for i in range(10)]
    )
    segments = plan_packing(docs, 4096, 1024, quotas=(0.3, 0.3, 0.4), bucket_bounds=[1024, 4000])
    packed: dict[str, int] = {}
    for seg in segments:
        for entry in seg.entries:
            packed[entry.doc_id] = packed.get(entry.doc_id, 0) + entry.end - entry.start
    sizes = {d.doc_id: d.token_len for d in docs}
    by_bucket = [0, 0, 0]
    for doc_id, tokens in packed.items():
        size = sizes[doc_id]
        by_bucket[0 if size <= 1024 else (1 if size <= 4000 else 2)] += tokens
    selected_total = sum(by_bucket)
    largest = [100, 1500, 6000]
    for bucket, quota in enumerate((0.3, 0.3, 0.4)):
        assert abs(by_bucket[bucket] - quota * selected_total) < largest[bucket]
    _report(8, "token conservation x200, exhaustive short-mask isolation, 3:3:4 quota")


class LoopbackEvaluator:
    """In-process protocol double: swaps response pairs for "q*" ids, errs on demand."""

    def __init__(self):
        self._outbound: queue.Queue[bytes] = queue.Queue()
        self._held: bytes | None = None
        self._lock = threading.Lock()

    def send_line(self, frame: bytes) -> None:
        req = decode_request(frame)
        if "err" in req.request_id:
            resp = EvalResponse(req.request_id, None, (), "synthetic failure")
        else:
            value = float(np.sum(req.lambdas))
            resp = EvalResponse(req.request_id, value, (value,), None)
        encoded = encode_response(resp)
        with self._lock:
            if not req.request_id.startswith("q"):
                self._outbound.put(encoded)
            elif self._held is None:
                self._held = encoded
            else:
                self._outbound.put(encoded)
                self._outbound.put(self._held)
                self._held = None

    def read_line(self) -> bytes:
        return self._outbound.get()

    def close(self) -> None:
        with self._lock:
            if self._held is not None:
                self._outbound.put(self._held)
                self._held = None
        self._outbound.put(b"")


def test_criterion_9_protocol():
    gen = np.random.Generator(np.random.PCG64(91))
    for _ in range(1000):
        req = random_request(gen)
        back = decode_request(encode_request(req))
        assert (
            back.request_id == req.request_id
            and back.config == req.config
            and back.lambdas.tobytes() == req.lambdas.tobytes()
            and back.corpus_ref == req.corpus_ref
            and back.mode == req.mode
        )
        resp = EvalResponse(
            req.request_id,
            float(gen.uniform(0, 1e9)),
            tuple(float(x) for x in gen.uniform(0, 1e9, size=3)),
            None,
        )
        assert decode_response(encode_response(resp)) == resp

    config = toy_config()
    double = LoopbackEvaluator()
    client = EvaluatorClient(double)
    try:
        results = {}

        def ask(rid, value):
            results[rid] = client.request(
                EvalRequest(rid, config, np.full(8, value), "c"), timeout=10
            )

        threads = [
            threading.Thread(target=ask, args=(f"q{i}", float(i + 1))) for i in range(6)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for i in range(6):
            assert results[f"q{i}"].fitness == pytest.approx(8.0 * (i + 1))
        failing = client.request(
            EvalRequest("has-err-0", config, np.full(8, 1.0), "c"), timeout=10
        )
        assert failing.error == "synthetic failure" and failing.fitness is None
        healthy = client.request(
            EvalRequest("after-the-failure", config, np.full(8, 2.0), "c"), timeout=10
        )
        assert healthy.fitness == pytest.approx(16.0)
    finally:
        client.close()
    _report(9, "1000 frame round-trips; out-of-order and error frames handled")


def test_criterion_10_headline_results_scope():
    readme = Path(__file__).resolve().parents[1] / "README.md"
    text = readme.read_text(encoding="utf-8")
    assert "## Scope and non-goals" in text

    config = toy_config()
    result = evolve(
        config,
        SurrogateEvaluator(toy_surrogate_spec()),
        SearchParams(seed=42),
    )
    s = config.extension_ratio
    d_tcd = theoretical_critical_dimension(config).cosine_index
    tail = result.best.lambdas[result.best.d_rcd_cos :]
    assert result.best.d_rcd_cos <= d_tcd
    assert np.all(np.diff(tail) >= 0)
    assert np.all((tail >= s) & (tail <= 2 * s))
    assert ood_report(config, result.best.lambdas, result.best.d_rcd_cos).clean
    _report(
        10,
        "trained-model benchmark numbers documented as out of scope;"
        " searched-factor shape constraints verified",
    )
