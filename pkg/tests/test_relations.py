"""Stemming, embeddings, string-similarity relations, and canonical election."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fnpred.relations import (
    EmbeddingTable,
    build_relation_groups,
    candidate_set,
    classify_relation,
    elect_canonical,
    is_abbreviation,
    load_relation_file,
    stem,
    sw_relative_similarity,
    train_skipgram,
    train_subword_embeddings,
)


def sw_score_oracle(a: str, b: str) -> float:
    n, m = len(a), len(b)
    H = [[0.0] * (m + 1) for _ in range(n + 1)]
    best = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = H[i - 1][j - 1] + (1.0 if a[i - 1] == b[j - 1] else -1.0)
            H[i][j] = max(0.0, diag, H[i - 1][j] - 1.0, H[i][j - 1] - 1.0)
            best = max(best, H[i][j])
    return best


class TestStem:
    @pytest.mark.parametrize(
        "word,expected",
        [
            ("effects", "effect"),
            ("running", "run"),
            ("caresses", "caress"),
            ("ponies", "poni"),
            ("hopping", "hop"),
            ("relational", "relate"),
            ("agreed", "agree"),
            ("sized", "size"),
            ("times", "time"),
            ("set", "set"),
            ("initialize", "initialize"),
        ],
    )
    def test_known_stems(self, word, expected):
        assert stem(word) == expected

    def test_idempotent_on_examples(self):
        for word in ["effects", "running", "times", "caresses"]:
            assert stem(stem(word)) == stem(word)


class TestRelativeSimilarity:
    def test_identical(self):
        assert sw_relative_similarity("set", "set") == 1.0

    def test_color_colour(self):
        # Best local alignment scores 4 (the final r needs a gap over u): 4/5.
        assert sw_relative_similarity("color", "colour") == pytest.approx(0.8)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sw_relative_similarity("", "abc")

    @given(
        a=st.text(alphabet="abcd", min_size=1, max_size=10),
        b=st.text(alphabet="abcd", min_size=1, max_size=10),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_oracle_and_symmetry(self, a, b):
        expected = sw_score_oracle(a, b) / min(len(a), len(b))
        assert sw_relative_similarity(a, b) == pytest.approx(expected)
        assert sw_relative_similarity(a, b) == sw_relative_similarity(b, a)

    @given(
        a=st.text(alphabet="abc", min_size=1, max_size=8),
        b=st.text(alphabet="abc", min_size=1, max_size=8),
    )
    @settings(max_examples=200, deadline=None)
    def test_equals_one_iff_substring(self, a, b):
        is_one = sw_relative_similarity(a, b) == 1.0
        assert is_one == (a in b or b in a)


class TestClassifyRelation:
    def test_prefix_pairs_score_as_synonyms(self):
        # A proper prefix aligns perfectly, so relative similarity is 1.0
        # and the synonym test fires before the prefix rule is consulted.
        assert classify_relation("init", "initialize") == "synonym"
        assert classify_relation("get", "getter") == "synonym"

    def test_symmetry_of_synonym(self):
        assert classify_relation("color", "colour") == "synonym"
        assert classify_relation("colour", "color") == "synonym"

    def test_dissimilar_non_prefix_is_none(self):
        assert classify_relation("cfg", "config") == "none"

    def test_external_pair_is_related(self):
        external = {frozenset(("cfg", "config"))}
        assert classify_relation("cfg", "config", external=external) == "related"

    def test_synonym_outranks_related(self):
        external = {frozenset(("color", "colour"))}
        assert classify_relation("color", "colour", external=external) == "synonym"

    def test_abbreviation_branch_reachable_with_stricter_threshold(self):
        assert classify_relation("init", "initialize", threshold=1.1) == "abbreviation"

    def test_is_abbreviation_cases(self):
        assert is_abbreviation("get", "getter")
        assert not is_abbreviation("get", "set")
        assert not is_abbreviation("get", "get")
        assert is_abbreviation("init", "initialize")


def _context_corpus() -> list[list[str]]:
    """alloc and malloc in identical contexts; print elsewhere."""
    rows = []
    for _ in range(30):
        rows.append(["call", "alloc", "pointer"])
        rows.append(["call", "malloc", "pointer"])
        rows.append(["write", "print", "screen"])
        rows.append(["realloc", "grows", "buffer"])
        rows.append(["zzz", "sleeps", "idle"])
    return rows


def _cos(table: EmbeddingTable, a: str, b: str) -> float:
    va, vb = table.vector(a), table.vector(b)
    return float(va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb)))


class TestEmbeddings:
    def test_same_seed_identical_vectors(self):
        corpus = _context_corpus()
        t1 = train_skipgram(corpus, dim=16, epochs=3, seed=5)
        t2 = train_skipgram(corpus, dim=16, epochs=3, seed=5)
        np.testing.assert_array_equal(t1.vectors, t2.vectors)

    def test_shared_contexts_drive_similarity(self):
        table = train_skipgram(_context_corpus(), dim=16, epochs=200, seed=1)
        assert _cos(table, "alloc", "malloc") > _cos(table, "alloc", "print")

    def test_training_loss_trends_down(self):
        table = train_skipgram(_context_corpus(), dim=16, epochs=60, seed=0)
        losses = table.epoch_losses
        assert len(losses) == 60
        assert np.mean(losses[-10:]) < np.mean(losses[:10])

    def test_subword_shared_ngrams_drive_similarity(self):
        # alloc/realloc share contexts and character n-grams (both reinforce
        # the same direction); zzz shares neither, so it lands far away.
        corpus = (
            [["call", "alloc", "pointer"]] * 30
            + [["call", "realloc", "pointer"]] * 30
            + [["sleep", "zzz", "idle"]] * 30
        )
        table = train_subword_embeddings(corpus, dim=16, epochs=120, seed=2)
        assert _cos(table, "alloc", "realloc") > _cos(table, "alloc", "zzz")

    def test_subword_oov_composition(self):
        table = train_subword_embeddings(_context_corpus(), dim=16, epochs=3, seed=0)
        assert np.any(table.vector("allocx") != 0.0)  # shares n-grams with alloc
        assert np.all(table.vector("qqqqqq") == 0.0)  # nothing known

    def test_neighbors_match_brute_force_cosine(self):
        table = train_skipgram(_context_corpus(), dim=16, epochs=10, seed=3)
        for label in ("alloc", "print"):
            got = table.neighbors(label, k=5)
            query = table.vector(label)
            scored = []
            for other in table.vocab:
                if other == label:
                    continue
                scored.append((-_cos_raw(query, table.vector(other)), other))
            expected = [w for _, w in sorted(scored)[:5]]
            assert got == expected

    def test_candidate_set_requires_known_label(self):
        sg = train_skipgram(_context_corpus(), dim=8, epochs=2, seed=0)
        sw = train_subword_embeddings(_context_corpus(), dim=8, epochs=2, seed=0)
        joined = candidate_set("alloc", sg, sw)
        assert set(sg.neighbors("alloc", 10)) <= set(joined)
        with pytest.raises(ValueError):
            candidate_set("nosuchword", sg, sw)


def _cos_raw(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return -np.inf
    return float(a @ b / (na * nb))


class TestGroupsAndCanonical:
    def test_empty_vocab_empty_lexicon(self):
        lex = build_relation_groups([])
        assert lex.canonical == {} and lex.relations == []

    def test_stem_groups_effect_effects(self):
        lex = build_relation_groups(["effect", "effects", "send"])
        assert lex.canonical["effects"] == "effect"
        assert lex.canonical["effect"] == "effect"
        assert lex.canonical["send"] == "send"

    def test_elect_canonical_prefix_pair_prefers_longest(self):
        assert elect_canonical({"initialize", "init"}) == "initialize"

    def test_elect_canonical_plural_prefers_stem(self):
        assert elect_canonical({"effect", "effects"}) == "effect"

    def test_elect_canonical_no_prefix_prefers_shortest(self):
        assert elect_canonical({"colour", "color"}) == "color"

    def test_embedding_driven_synonym_grouping(self):
        corpus = []
        for _ in range(40):
            corpus.append(["use", "color", "value"])
            corpus.append(["use", "colour", "value"])
            corpus.append(["open", "file", "handle"])
        vocab = ["color", "colour", "file"]
        sg = train_skipgram(corpus, dim=16, epochs=80, seed=1)
        sw = train_subword_embeddings(corpus, dim=16, epochs=80, seed=2)
        lex = build_relation_groups(vocab, sg=sg, sw=sw)
        assert lex.canonical["colour"] == "color"
        assert lex.canonical["color"] == "color"
        assert ("color", "colour", "synonym") in lex.relations

    def test_canonical_mapping_total_and_idempotent(self):
        corpus = _context_corpus()
        vocab = ["alloc", "malloc", "realloc", "print", "zzz", "effect", "effects"]
        sg = train_skipgram(corpus, dim=16, epochs=30, seed=4)
        sw = train_subword_embeddings(corpus, dim=16, epochs=30, seed=5)
        lex = build_relation_groups(vocab, sg=sg, sw=sw)
        assert set(lex.canonical) == set(vocab)
        for member, canon in lex.canonical.items():
            assert canon in lex.canonical
            assert lex.canonical[canon] == canon

    def test_external_relations_recorded_not_unified(self):
        external = {frozenset(("cfg", "config"))}
        lex = build_relation_groups(["cfg", "config"], external=external)
        assert ("cfg", "config", "related") in lex.relations
        assert lex.canonical["cfg"] == "cfg"
        assert lex.canonical["config"] == "config"


class TestRelationFile:
    def test_load_lowers_and_skips_self_pairs(self, tmp_path):
        path = tmp_path / "rel.tsv"
        path.write_text("CFG\tconfig\nfoo\tfoo\nptr\tpointer\textra\n")
        pairs = load_relation_file(str(path))
        assert frozenset(("cfg", "config")) in pairs
        assert frozenset(("ptr", "pointer")) in pairs
        assert all(len(p) == 2 for p in pairs)

    def test_single_column_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("lonely\n")
        with pytest.raises(ValueError):
            load_relation_file(str(path))
