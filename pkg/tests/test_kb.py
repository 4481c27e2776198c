import numpy as np
import pytest

from knowfuse import kb as kbm
from knowfuse.exceptions import FormatError, IntegrityError


def fixture_kb():
    entities = [
        kbm._normalize_entity("E1", "brain magnetic resonance imaging", ["brain mri"]),
        kbm._normalize_entity("E2", "lesion", []),
        kbm._normalize_entity("E3", "contrast agent", ["contrast"]),
    ]
    relations = {"R1": "finds", "R2": "uses"}
    triples = [kbm.Triple("E1", "R1", "E2"), kbm.Triple("E1", "R2", "E3")]
    return kbm.KnowledgeBase(entities, relations, triples)


def write_fixture_files(tmp_path):
    (tmp_path / "entities.tsv").write_text(
        "E1\tbrain magnetic resonance imaging\tbrain magnetic resonance imaging|brain mri\n"
        "E2\tlesion\tlesion\n"
        "E3\tcontrast agent\tcontrast agent|contrast\n"
    )
    (tmp_path / "relations.tsv").write_text("R1\tfinds\nR2\tuses\n")
    (tmp_path / "triples.tsv").write_text("E1\tR1\tE2\nE1\tR2\tE3\n")


# ---------------------------------------------------------------- loading

def test_load_kb_counts(tmp_path):
    write_fixture_files(tmp_path)
    kb = kbm.load_kb(tmp_path)
    assert kb.n_entities == 3
    assert kb.n_triples == 2
    assert kb.lexicon["brain mri"] == "E1"


def test_load_kb_dangling_triple(tmp_path):
    write_fixture_files(tmp_path)
    (tmp_path / "triples.tsv").write_text("E1\tR1\tE9\n")
    with pytest.raises(IntegrityError):
        kbm.load_kb(tmp_path)


def test_load_kb_duplicate_entity(tmp_path):
    write_fixture_files(tmp_path)
    (tmp_path / "entities.tsv").write_text("E1\ta\ta\nE1\tb\tb\n")
    with pytest.raises(FormatError):
        kbm.load_kb(tmp_path)


def test_kb_round_trip(tmp_path):
    kb = fixture_kb()
    kbm.save_kb(kb, tmp_path / "kb")
    again = kbm.load_kb(tmp_path / "kb")
    assert again == kb
    kbm.save_kb(again, tmp_path / "kb2")
    for name in ("entities.tsv", "relations.tsv", "triples.tsv"):
        assert (tmp_path / "kb" / name).read_bytes() == (tmp_path / "kb2" / name).read_bytes()


def test_synonyms_include_canonical():
    ent = kbm._normalize_entity("E9", "Spinal Cord", ["cord"])
    assert ent.synonyms[0] == "spinal cord"
    assert "cord" in ent.synonyms


# ---------------------------------------------------------------- tokenizer

def test_tokenize_drops_punctuation():
    assert kbm.tokenize("The image, shows: a lesion.") == ["the", "image", "shows", "a", "lesion"]


# ---------------------------------------------------------------- linking

def test_link_empty_text():
    linked = kbm.link_entities([], fixture_kb())
    assert linked.entity_seq == []
    assert kbm.build_matching_matrix(linked).shape == (0, 0)


def test_link_longest_match_wins():
    tokens = ["brain", "magnetic", "resonance", "imaging", "shows", "lesion"]
    linked = kbm.link_entities(tokens, fixture_kb())
    assert linked.entity_seq[0] == ("E1", (0, 4))
    assert linked.entity_seq[1] == ("E2", (5, 6))


def brute_force_link(tokens, kb):
    """Independent maximal left-to-right matcher scanning lexicon entries."""
    entries = []
    seen = set()
    for ent in kb.entities.values():
        for surface in ent.synonyms:
            toks = tuple(kbm.tokenize(surface))
            if toks and toks not in seen:
                seen.add(toks)
                entries.append((toks, ent.entity_id))
    result = []
    i, n = 0, len(tokens)
    while i < n:
        best = None
        for toks, eid in entries:
            width = len(toks)
            if i + width <= n and tuple(tokens[i:i + width]) == toks:
                if best is None or width > best[0]:
                    best = (width, eid)
        if best is None:
            i += 1
        else:
            result.append((best[1], (i, i + best[0])))
            i += best[0]
    return result


def overlap_kb():
    entities = [
        kbm._normalize_entity("A", "aa", []),
        kbm._normalize_entity("B", "aa bb", []),
        kbm._normalize_entity("C", "bb cc dd", ["cc"]),
        kbm._normalize_entity("D", "dd", ["dd ee"]),
    ]
    return kbm.KnowledgeBase(entities, {}, [])


def test_linker_matches_brute_force_oracle():
    kb = overlap_kb()
    rng = np.random.default_rng(42)
    words = ["aa", "bb", "cc", "dd", "ee", "xx"]
    for _ in range(1000):
        tokens = [words[i] for i in rng.integers(0, len(words), rng.integers(0, 12))]
        got = kbm.link_entities(tokens, kb).entity_seq
        assert got == brute_force_link(tokens, kb)


def test_linker_deterministic_and_idempotent():
    kb = overlap_kb()
    tokens = ["aa", "bb", "cc", "dd", "ee", "aa"]
    first = kbm.link_entities(tokens, kb)
    second = kbm.link_entities(tokens, kb)
    assert first.entity_seq == second.entity_seq
    assert kbm.link_entities(first.tokens, kb).entity_seq == first.entity_seq


def test_ambiguous_surface_resolves_by_file_order():
    entities = [
        kbm._normalize_entity("FIRST", "shared name", []),
        kbm._normalize_entity("SECOND", "other", ["shared name"]),
    ]
    kb = kbm.KnowledgeBase(entities, {}, [])
    linked = kbm.link_entities(["shared", "name"], kb)
    assert linked.entity_seq == [("FIRST", (0, 2))]


# ---------------------------------------------------------------- matching matrix

def test_matching_matrix_no_entities():
    linked = kbm.LinkedText(tokens=["a", "b", "c"], entity_seq=[])
    p = kbm.build_matching_matrix(linked)
    assert p.shape == (3, 0)


def test_matching_matrix_single_span():
    linked = kbm.LinkedText(tokens=["a", "b", "c", "d"], entity_seq=[("E", (1, 3))])
    p = kbm.build_matching_matrix(linked)
    np.testing.assert_array_equal(p[:, 0], [0, 1, 1, 0])


def test_matching_matrix_membership_oracle():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 15))
        spans, cursor = [], 0
        while cursor < n:
            width = int(rng.integers(1, 4))
            if cursor + width > n or rng.random() < 0.4:
                cursor += 1
                continue
            spans.append((f"E{len(spans)}", (cursor, cursor + width)))
            cursor += width
        linked = kbm.LinkedText(tokens=["w"] * n, entity_seq=spans)
        p = kbm.build_matching_matrix(linked)
        oracle = np.zeros_like(p)
        for i in range(n):
            for j, (_, (a, b)) in enumerate(spans):
                oracle[i, j] = 1.0 if a <= i < b else 0.0
        np.testing.assert_array_equal(p, oracle)
        # consumption discipline: each token in at most one entity
        assert set(np.unique(p.sum(axis=1))) <= {0.0, 1.0}
        for j, (_, (a, b)) in enumerate(spans):
            assert p[:, j].sum() == b - a


# ---------------------------------------------------------------- subgraph / entity set

def chain_kb(n_entities=6, n_triples=50, seed=11):
    rng = np.random.default_rng(seed)
    entities = [kbm._normalize_entity(f"E{i}", f"name{i}", []) for i in range(n_entities)]
    relations = {"R0": "r0", "R1": "r1"}
    triples = []
    seen = set()
    while len(triples) < n_triples:
        h, t = rng.integers(0, n_entities, 2)
        if h == t:
            continue
        r = f"R{int(rng.integers(0, 2))}"
        key = (h, r, t)
        if key in seen:
            continue
        seen.add(key)
        triples.append(kbm.Triple(f"E{h}", r, f"E{t}"))
        if len(seen) == n_entities * (n_entities - 1) * 2:
            break
    return kbm.KnowledgeBase(entities, relations, triples)


def test_extract_subgraph_full_and_empty():
    kb = chain_kb()
    assert kbm.extract_subgraph(kb, set(kb.entity_ids())) == kb.triples
    assert kbm.extract_subgraph(kb, set()) == []


def test_extract_subgraph_matches_brute_force():
    kb = chain_kb()
    rng = np.random.default_rng(13)
    ids = kb.entity_ids()
    for _ in range(30):
        subset = {eid for eid in ids if rng.random() < 0.5}
        got = kbm.extract_subgraph(kb, subset)
        expected = [tr for tr in kb.triples if tr.head in subset and tr.tail in subset]
        assert got == expected


def test_extract_subgraph_monotone():
    kb = chain_kb()
    s1 = {"E0", "E1", "E2"}
    s2 = {"E3", "E4"}
    small = set(map(tuple, ((t.head, t.relation, t.tail) for t in kbm.extract_subgraph(kb, s1))))
    big = set(map(tuple, ((t.head, t.relation, t.tail) for t in kbm.extract_subgraph(kb, s1 | s2))))
    assert small <= big


def test_corpus_entity_set():
    one = kbm.LinkedText(tokens=[], entity_seq=[("A", (0, 0)), ("B", (0, 0))])
    two = kbm.LinkedText(tokens=[], entity_seq=[("C", (0, 0))])
    assert kbm.corpus_entity_set([one]) == {"A", "B"}
    assert kbm.corpus_entity_set([one, two]) == {"A", "B", "C"}
    assert len(kbm.corpus_entity_set([one, two])) == 3


# ---------------------------------------------------------------- vocabulary

def test_vocabulary_roundtrip_and_unk():
    vocab = kbm.Vocabulary.from_token_lists([["b", "a"], ["c", "a"]])
    assert len(vocab) == 5  # [UNK], [MASK], a, b, c
    ids = vocab.encode(["a", "zzz", "c"])
    assert ids[1] == vocab.unk_id
    assert vocab.decode(ids) == ["a", "[UNK]", "c"]
    assert vocab.mask_id == 1
