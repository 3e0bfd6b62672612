"""The acceptance gate: eleven pipeline-level checks with pinned tolerances.

Each test prints one ``criterion NN <name>: PASS/FAIL`` line (with runtime)
to the test log before asserting, so the gate's outcome is readable at a
glance.  Tolerances and corpus sizes are fixed; do not loosen them to make
a failing criterion pass.
"""

from __future__ import annotations

import os
import time
import warnings

import numpy as np

from conftest import defuse_chain_record, make_dataset, make_record, write_jsonl
from test_encoder import conv_oracle
from test_tokenizer import exhaustive_rule_oracle

from fnpred.cli import run
from fnpred.encoder import EncoderConfig, TokenVocab, conv_node_vector, khop_message_pass
from fnpred.ingest import (
    FunctionRecord,
    Instruction,
    build_fine_grained_cfg,
    instruction_tokens,
    khop_neighborhood,
    normalize_record,
    split_by_source,
)
from fnpred.metrics import oov_ratio, prf, word_level_counts
from fnpred.params import ParamStore
from fnpred.relations import sw_relative_similarity
from fnpred.tasks import NameVocabulary
from fnpred.tokenizer import RuleLexicon, bundled_lexicon, default_pipeline, preprocess_name, rule_tokenize
from fnpred.trainer import (
    TrainConfig,
    build_stores,
    grad_check,
    gradcheck_paths,
    overfit_name_decoder,
    similarity_gap,
    train_multitask,
)


def report(number: int, name: str, ok: bool, elapsed: float, limit: float, detail: str = "") -> None:
    status = "PASS" if ok and elapsed < limit else "FAIL"
    line = f"criterion {number:02d} {name}: {status} ({elapsed:.2f}s / limit {limit:.0f}s)"
    if detail:
        line += f" -- {detail}"
    print(line)
    assert ok, f"criterion {number:02d} {name}: {detail or 'functional check failed'}"
    assert elapsed < limit, f"criterion {number:02d} {name}: {elapsed:.2f}s exceeds {limit:.0f}s"


# -- 1. metrics exactness ---------------------------------------------------------


def test_criterion_01_metrics_exactness():
    t0 = time.perf_counter()
    half = prf(word_level_counts(["attrs", "find"], ["attrs", "match"]))
    full = prf(word_level_counts(["attrs", "find"], ["attrs", "find"]))
    ok = (
        half.precision == 0.5 and half.recall == 0.5 and half.f1 == 0.5
        and full.precision == 1.0 and full.recall == 1.0 and full.f1 == 1.0
    )
    report(1, "metrics exactness", ok, time.perf_counter() - t0, 1.0,
           f"half-overlap P/R/F1 = {half.precision}/{half.recall}/{half.f1}")


# -- 2. tokenizer fidelity ----------------------------------------------------------

# Published tokenization examples: raw name -> expected labels.  Two rows
# drop a trailing plural "s" that a third row keeps; our pipeline applies one
# consistent rule (the split "s" survives), so those two rows deviate.
PUBLISHED_ROWS = [
    ("test_nofork_sideeffects", "test no fork side effect"),
    ("typenameTypeMod", "type name type mod"),
    ("nomoreargs", "no more arg s"),
    ("resolvebuiltin", "resolve builtin"),
    ("scanpmwidgets", "scan pm widget"),
    ("zipfileNext", "zip file next"),
]


def segments(name: str, cuts: set[int]) -> list[str]:
    bounds = [0, *sorted(cuts), len(name)]
    return [name[a:b] for a, b in zip(bounds, bounds[1:])]


def test_criterion_02_tokenizer_fidelity():
    t0 = time.perf_counter()
    rule_split = segments("timeset", rule_tokenize(bundled_lexicon(), "timeset"))
    pipeline = default_pipeline()
    matches, deviations = [], []
    for raw, want in PUBLISHED_ROWS:
        got = preprocess_name(pipeline, raw)
        if got == want.split():
            matches.append(raw)
        else:
            deviations.append(f"{raw!r}: got {' '.join(got)!r}, published {want!r}")
    for line in deviations:
        warnings.warn(f"tokenizer deviates from a published row: {line}", stacklevel=1)
        print(f"deviation: {line}")
    ok = rule_split == ["time", "set"] and len(matches) >= 4
    report(2, "tokenizer fidelity", ok, time.perf_counter() - t0, 10.0,
           f"rule split {rule_split}, {len(matches)}/6 published rows exact, "
           f"{len(deviations)} documented deviations")


# -- 3. rule-based DP vs exhaustive oracle ------------------------------------------


def test_criterion_03_rule_dp_oracle():
    t0 = time.perf_counter()
    words = [
        "set", "get", "put", "time", "times", "zip", "file", "next", "no", "more",
        "args", "type", "name", "mod", "resolve", "built", "in", "at", "exit", "read",
    ]
    lexicon = RuleLexicon(words=set(words), abbreviations={})
    rng = np.random.default_rng(23)
    alphabet = list("abcdefgilmnoprstuxz")
    mismatches = 0
    for _ in range(500):
        if rng.random() < 0.6:
            k = int(rng.integers(1, 4))
            name = "".join(words[int(rng.integers(len(words)))] for _ in range(k))[:12]
        else:
            name = "".join(rng.choice(alphabet, size=int(rng.integers(1, 13))))
        if rule_tokenize(lexicon, name) != exhaustive_rule_oracle(lexicon, name):
            mismatches += 1
    report(3, "rule DP vs exhaustive oracle", mismatches == 0, time.perf_counter() - t0,
           30.0, f"{mismatches} mismatches over 500 names, 20-word lexicon")


# -- 4. Smith-Waterman vs brute-force DP --------------------------------------------


def sw_brute_force(a: str, b: str) -> float:
    """Full-table local alignment (+1 match, -1 mismatch/gap, floor 0)."""
    n, m = len(a), len(b)
    table = [[0.0] * (m + 1) for _ in range(n + 1)]
    best = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = table[i - 1][j - 1] + (1.0 if a[i - 1] == b[j - 1] else -1.0)
            value = max(diag, table[i - 1][j] - 1.0, table[i][j - 1] - 1.0, 0.0)
            table[i][j] = value
            best = max(best, value)
    return best / min(n, m)


def test_criterion_04_smith_waterman_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(31)
    alphabet = list("abcdes")
    fragments = ["set", "sets", "reset", "get", "settime", "time"]
    mismatches = 0
    for _ in range(1000):
        def draw() -> str:
            if rng.random() < 0.4:
                return fragments[int(rng.integers(len(fragments)))][:10]
            return "".join(rng.choice(alphabet, size=int(rng.integers(1, 11))))

        a, b = draw(), draw()
        if abs(sw_relative_similarity(a, b) - sw_brute_force(a, b)) > 1e-12:
            mismatches += 1
    exact_self = sw_relative_similarity("set", "set") == 1.0
    report(4, "Smith-Waterman oracle", mismatches == 0 and exact_self,
           time.perf_counter() - t0, 10.0,
           f"{mismatches} mismatches over 1000 pairs; ('set','set') -> 1.0: {exact_self}")


# -- 5. gradient integrity -----------------------------------------------------------


def test_criterion_05_gradient_integrity():
    store, paths = gradcheck_paths(seed=0)
    results = []
    ok = True
    for name, builder in paths.items():
        t0 = time.perf_counter()
        err = grad_check(builder, store, max_coords=500, seed=5)
        elapsed = time.perf_counter() - t0
        results.append((name, err, elapsed))
        if err >= 1e-4 or elapsed >= 60.0:
            ok = False
    worst = max(results, key=lambda r: r[1])
    total = sum(r[2] for r in results)
    report(5, "gradient integrity", ok, total, 7 * 60.0,
           f"7 paths checked; worst {worst[0]} err {worst[1]:.3e}; "
           + ", ".join(f"{n} {e:.1e} ({s:.1f}s)" for n, e, s in results))


# -- 6. k-hop correctness ------------------------------------------------------------


def random_graph(rng) -> tuple[FunctionRecord, list[set[int]]]:
    """Random explicit-edge graph; 'ret' everywhere suppresses fallthroughs."""
    n = int(rng.integers(1, 21))
    adjacency = [set() for _ in range(n)]
    edges = []
    for _ in range(int(rng.integers(0, 2 * n + 1))):
        a, b = int(rng.integers(n)), int(rng.integers(n))
        if a == b:
            continue
        edges.append((a, b, "jump"))
        adjacency[a].add(b)
        adjacency[b].add(a)
    record = FunctionRecord(
        id="g", name="g", source_id="s", arch="x86", opt="O0",
        instructions=[Instruction(index=i, mnemonic="ret", operands=[], block_id=0) for i in range(n)],
        edges=edges,
    )
    return record, adjacency


def bfs_within(adjacency: list[set[int]], v: int, k: int) -> list[int]:
    seen, frontier = {v}, {v}
    for _ in range(k):
        frontier = {u for x in frontier for u in adjacency[x]} - seen
        seen |= frontier
    return sorted(seen - {v})


def test_criterion_06_khop_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(61)
    neighborhood_mismatches = 0
    for _ in range(100):
        record, adjacency = random_graph(rng)
        cfg = build_fine_grained_cfg(record)
        k = int(rng.integers(1, 5))
        for v in range(cfg.node_count):
            if list(khop_neighborhood(cfg, v, k)) != bfs_within(adjacency, v, k):
                neighborhood_mismatches += 1

    worst_gap = 0.0
    for case in range(20):
        record, adjacency = random_graph(rng)
        n = len(record.instructions)
        d_in, d_out = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        x = rng.normal(size=(n, d_in))
        store = ParamStore(seed=case)
        store.affine("gnn0.k1.w", (2 * d_in, d_out))
        store.zeros("gnn0.k1.b", (d_out,))
        store.values["gnn0.k1.b"][:] = rng.normal(size=d_out)
        w, b = store.values["gnn0.k1.w"], store.values["gnn0.k1.b"]

        expected = np.zeros((n, d_out))
        for v in range(n):
            nbrs = sorted(adjacency[v])
            message = x[nbrs].mean(axis=0) if nbrs else np.zeros(d_in)
            expected[v] = np.maximum(np.concatenate([message, x[v]]) @ w + b, 0.0)
        got = khop_message_pass(build_fine_grained_cfg(record), x, store, layers=1, hops=1)
        worst_gap = max(worst_gap, float(np.max(np.abs(got - expected))))

    ok = neighborhood_mismatches == 0 and worst_gap < 1e-10
    report(6, "k-hop correctness", ok, time.perf_counter() - t0, 30.0,
           f"{neighborhood_mismatches} neighborhood mismatches over 100 graphs; "
           f"1-hop message-pass max gap {worst_gap:.2e}")


# -- 7. conv node vectors ------------------------------------------------------------


def test_criterion_07_conv_node_vectors():
    t0 = time.perf_counter()
    rng = np.random.default_rng(71)
    worst = 0.0
    for _ in range(50):
        d = int(rng.integers(1, 5))
        m = int(rng.integers(1, 13))
        kernels = []
        for _ in range(int(rng.integers(1, 4))):
            w = int(rng.integers(1, 5))
            kernels.append((rng.normal(size=(d, w)), float(rng.normal())))
        E = rng.normal(size=(d, m))
        pad = rng.normal(size=d)
        gap = np.max(np.abs(conv_node_vector(E, kernels, pad) - conv_oracle(E, kernels, pad)))
        worst = max(worst, float(gap))

    # A counting kernel exposes the feature-map length: with kernel [[1,1]],
    # bias 0, and E[0, j] = j, window j sums to 2j+1, so the mean over the
    # n = m-w+1 windows is exactly n.
    length_ok = True
    for m in range(2, 13):
        E = np.arange(m, dtype=np.float64)[None, :]
        out = conv_node_vector(E, [(np.ones((1, 2)), 0.0)])
        if out[0] != float(m - 1):
            length_ok = False

    ok = worst < 1e-10 and length_ok
    report(7, "conv node vectors", ok, time.perf_counter() - t0, 5.0,
           f"max oracle gap {worst:.2e} over 50 cases; feature-map length m-w+1: {length_ok}")


# -- 8. multi-task training sanity ----------------------------------------------------


def test_criterion_08_training_sanity(tmp_path):
    t0 = time.perf_counter()
    toy = EncoderConfig.toy()
    records = make_dataset(n_sources=20, opts=("O0", "O1", "O2"))
    corpus = [instruction_tokens(i) for r in records for i in normalize_record(r).instructions]
    vocab = TokenVocab.build(corpus)
    labels = {r.id: r.name.split("_") for r in records}

    train = [r for r in records if int(r.source_id[3:]) < 16]
    held = [r for r in records if int(r.source_id[3:]) >= 16]
    train_labels = [labels[r.id] for r in train]
    held_labels = [labels[r.id] for r in held]
    name_vocab = NameVocabulary.build(train_labels)

    store = build_stores(toy, len(vocab), len(name_vocab), seed=11)
    cfg = TrainConfig(batch_size=4, lr=0.05, seed=11, m_cs=0.5, eval_every=10**6)
    train_multitask(train, train_labels, [], [], store, toy, vocab, name_vocab,
                    cfg, str(tmp_path / "mt"), max_steps=200)
    f_pos, f_neg = similarity_gap(held, held_labels, store, toy, vocab, n_triplets=20, seed=0)
    gap = f_pos - f_neg

    overfit_batch = [records[i * 3] for i in range(8)]
    overfit_labels = [labels[r.id] for r in overfit_batch]
    overfit_vocab = NameVocabulary.build(overfit_labels)
    fresh = build_stores(toy, len(vocab), len(overfit_vocab), seed=11)
    losses = overfit_name_decoder(overfit_batch, overfit_labels, fresh, toy, vocab,
                                  overfit_vocab, TrainConfig(batch_size=1, lr=0.01), steps=200)

    ok = gap >= cfg.m_cs / 2 and losses[-1] < 0.1
    report(8, "multi-task training sanity", ok, time.perf_counter() - t0, 300.0,
           f"held-out gap {gap:+.4f} (need >= {cfg.m_cs / 2}); "
           f"frozen-batch J_cg {losses[0]:.3f} -> {losses[-1]:.4f} (need < 0.1)")


# -- 9. OOV reduction ------------------------------------------------------------------


def test_criterion_09_oov_reduction():
    t0 = time.perf_counter()
    pool = [
        "get", "set", "read", "write", "init", "free", "find", "copy", "send", "recv",
        "open", "close", "parse", "check", "hash", "sort", "load", "store", "push", "pop",
        "buffer", "table", "index", "value", "name", "list", "node", "file", "path", "size",
    ]
    rng = np.random.default_rng(41)
    names = [
        "_".join(pool[int(rng.integers(len(pool)))] for _ in range(int(rng.integers(2, 4))))
        for _ in range(2000)
    ]
    train_names, test_names = names[:1600], names[1600:]

    whole_name = oov_ratio(test_names, set(train_names))
    pipeline = default_pipeline()
    train_tokens = {t for n in train_names for t in preprocess_name(pipeline, n)}
    test_tokens = [t for n in test_names for t in preprocess_name(pipeline, n)]
    tokenized = oov_ratio(test_tokens, train_tokens)

    ok = whole_name > 0.0 and tokenized <= 0.5 * whole_name
    reduction = (1.0 - tokenized / whole_name) * 100.0 if whole_name else 0.0
    report(9, "OOV reduction", ok, time.perf_counter() - t0, 30.0,
           f"whole-name OOV {whole_name:.4f} -> tokenized {tokenized:.4f} "
           f"({reduction:.1f}% reduction, need >= 50%)")


# -- 10. split hygiene ------------------------------------------------------------------


def test_criterion_10_split_hygiene():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    leaks = ratio_violations = 0
    for ds in range(100):
        n_sources = int(rng.integers(5, 41))
        records = []
        for s in range(n_sources):
            for v in range(int(rng.integers(1, 5))):
                records.append(make_record(f"d{ds}_s{s}_v{v}", "load_config", f"src{s}", salt=s))
        source_of = {r.id: r.source_id for r in records}
        for split in split_by_source(records, folds=5, seed=int(rng.integers(1 << 16))):
            groups = [{source_of[i] for i in part} for part in (split.train, split.valid, split.test)]
            if (groups[0] & groups[1]) or (groups[0] & groups[2]) or (groups[1] & groups[2]):
                leaks += 1
            if groups[0] | groups[1] | groups[2] != set(source_of.values()):
                leaks += 1
            # valid/test each hold n/10 groups within one; train takes the rest
            for part in (1, 2):
                if abs(len(groups[part]) - n_sources / 10.0) > 1.0:
                    ratio_violations += 1
            if len(groups[0]) != n_sources - len(groups[1]) - len(groups[2]):
                ratio_violations += 1
    ok = leaks == 0 and ratio_violations == 0
    report(10, "split hygiene", ok, time.perf_counter() - t0, 10.0,
           f"{leaks} leakage/coverage faults, {ratio_violations} ratio faults over 100 datasets x 5 folds")


# -- 11. training determinism ------------------------------------------------------------


def test_criterion_11_training_determinism(tmp_path):
    t0 = time.perf_counter()
    records = make_dataset(n_sources=10)
    for i, name in enumerate(["chain_alpha", "chain_beta", "chain_gamma"]):
        records.append(defuse_chain_record(7 + i, rec_id=f"du{i}", name=name, source_id=f"duS{i}"))
    data = write_jsonl(records, tmp_path / "corpus.jsonl")
    cfg = tmp_path / "train.cfg"
    cfg.write_text("batch_size=2\nmax_steps=10\nlr=0.001\n")

    digests = []
    for attempt in range(2):
        out_dir = str(tmp_path / f"run{attempt}")
        result = run(["train", "--input", data, "--out-dir", out_dir,
                      "--config", str(cfg), "--seed", "7"])
        assert result.exit_code == 0, result.summary
        blobs = {}
        for stage in ("pretrain", "multitask"):
            for fname in ("params.bin", "manifest.txt"):
                path = os.path.join(out_dir, stage, "final", fname)
                with open(path, "rb") as fh:
                    blobs[f"{stage}/{fname}"] = fh.read()
        digests.append(blobs)

    identical = digests[0] == digests[1]
    report(11, "training determinism", identical, time.perf_counter() - t0, 600.0,
           "seed-7 reruns produce bit-identical pretrain and fine-tune checkpoints: "
           f"{identical}")
