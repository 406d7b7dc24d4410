"""Negative-space construction: initial words, sentences, lookalike labels."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from negtext.embeddings import EmbeddingMatrix, SpaceKind
from negtext.errors import GenerationError, InputError
from negtext.mining import MinedNegatives, SimilarClassSubset
from negtext.spaces import (
    CorpusCandidates,
    _contains_word,
    embed_space,
    generate_ens,
    generate_vsnl,
    select_initial_nls,
)

from conftest import ScriptedClient, make_label_space, unit_rows


def make_corpus(words, vectors):
    return CorpusCandidates(
        words=tuple(words),
        features=EmbeddingMatrix.from_rows(
            [f"c{i}" for i in range(len(words))], np.asarray(vectors)
        ),
    )


class TestSelectInitialNls:
    def test_exact_id_duplicate_excluded(self):
        ids = make_label_space(n=2, dim=4, seed=0)
        rng = np.random.default_rng(1)
        corpus = make_corpus(
            ["other", " LABEL_0 ", "another"], unit_rows(rng, 3, 4)
        )
        space = select_initial_nls(corpus, ids, 2, 1)
        assert " LABEL_0 " not in space.texts
        assert space.kind is SpaceKind.NL

    def test_dissimilar_words_rank_first(self):
        ids = make_label_space(n=1, dim=4, seed=2)
        proto = ids.features.data[0]
        orth = np.zeros(4)
        orth[np.argmin(np.abs(proto))] = 1.0
        orth -= np.dot(orth, proto) * proto
        orth /= np.linalg.norm(orth)
        near = 0.95 * proto + 0.05 * orth
        corpus = make_corpus(["near", "orth"], [near, orth])
        space = select_initial_nls(corpus, ids, 1, 1)
        assert space.texts == ("orth",)

    def test_insufficient_corpus_rejected(self):
        ids = make_label_space(n=1, dim=4, seed=3)
        rng = np.random.default_rng(4)
        corpus = make_corpus(["w0", "label_0"], unit_rows(rng, 2, 4))
        with pytest.raises(InputError):
            select_initial_nls(corpus, ids, 2, 1)

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=25)
    def test_matches_exhaustive_sort_oracle(self, seed):
        rng = np.random.default_rng(seed)
        ids = make_label_space(n=3, dim=6, seed=seed)
        words = [f"w{i}" for i in range(12)]
        corpus = make_corpus(words, unit_rows(rng, 12, 6))
        space = select_initial_nls(corpus, ids, 5, 2)
        max_sim = {
            w: float(np.max(ids.features.data @ corpus.features.data[i]))
            for i, w in enumerate(words)
        }
        expected = sorted(words, key=lambda w: max_sim[w])[:5]
        assert list(space.texts) == expected


class TestEmbedSpace:
    def test_template_substitution_reaches_client(self):
        client = ScriptedClient(dim=4)
        embed_space(["coyote"], "The nice <label>.", client)
        assert client.embed_calls == [["The nice coyote."]]

    def test_no_template_embeds_verbatim(self):
        client = ScriptedClient(dim=4)
        embed_space(["a full sentence"], None, client)
        assert client.embed_calls == [["a full sentence"]]

    def test_empty_texts_rejected(self):
        with pytest.raises(InputError):
            embed_space([], None, ScriptedClient())

    def test_vector_count_mismatch_rejected(self):
        class BadClient(ScriptedClient):
            def embed_texts(self, texts):
                return super().embed_texts(texts)[:-1]

        with pytest.raises(GenerationError):
            embed_space(["a", "b"], None, BadClient(dim=4))


class TestContainsWord:
    def test_whole_word_matching(self):
        assert _contains_word("a red fox runs", "fox")
        assert _contains_word("A RED FOX", "fox")
        assert not _contains_word("a foxhound runs", "fox")
        assert _contains_word("the fox.", "fox")


def mined(ids):
    return MinedNegatives(
        image_ids=tuple(ids),
        indices=tuple(range(len(ids))),
        gamma_star=0.5 if ids else None,
    )


class TestGenerateEns:
    def test_exact_fit(self):
        client = ScriptedClient(
            dim=4,
            descriptions={
                "i0": ["a small red thing"],
                "i1": ["a large blue thing"],
                "i2": ["a round green thing"],
            },
        )
        labels = {"i0": "label_0", "i1": "label_1", "i2": "label_0"}
        ids = make_label_space(n=2, dim=4, seed=5)
        space = generate_ens(mined(["i0", "i1", "i2"]), labels, ids, client, 3, 2, seed=0)
        assert space.texts == (
            "a small red thing",
            "a large blue thing",
            "a round green thing",
        )
        assert space.kind is SpaceKind.ENS

    def test_round_robin_repeats_until_m(self):
        # 2 negatives, M=5 -> passes of 2 until five sentences exist (3+2)
        client = ScriptedClient(
            dim=4,
            descriptions={"i0": ["first thing seen"], "i1": ["second thing seen"]},
        )
        labels = {"i0": "label_0", "i1": "label_1"}
        ids = make_label_space(n=2, dim=4, seed=6)
        space = generate_ens(mined(["i0", "i1"]), labels, ids, client, 5, 5, seed=0)
        assert len(space.texts) == 5
        assert [c[0] for c in client.describe_calls] == ["i0", "i1", "i0", "i1", "i0"]
        assert space.texts.count("first thing seen") == 3

    def test_oversupply_subsample_is_seeded(self):
        descriptions = {
            f"i{k}": [f"thing number {k} here"] for k in range(10)
        }
        labels = {f"i{k}": "label_0" for k in range(10)}
        ids = make_label_space(n=2, dim=4, seed=7)
        picks = []
        for _ in range(2):
            client = ScriptedClient(dim=4, descriptions=descriptions)
            space = generate_ens(
                mined([f"i{k}" for k in range(10)]), labels, ids, client, 4, 2, seed=9
            )
            picks.append(space.texts)
        assert picks[0] == picks[1]
        assert len(picks[0]) == 4

    def test_excluded_label_retried_then_dropped(self):
        # i0 keeps naming its label and is dropped; i1 fills the space
        client = ScriptedClient(
            dim=4,
            descriptions={
                "i0": ["the label_0 again"] * 3,
                "i1": ["an unrelated looking thing"],
            },
        )
        labels = {"i0": "label_0", "i1": "label_1"}
        ids = make_label_space(n=2, dim=4, seed=8)
        space = generate_ens(mined(["i0", "i1"]), labels, ids, client, 2, 2, seed=0)
        assert all("label_0" not in t for t in space.texts)
        # three attempts were spent on the sticky image per pass
        assert [c for c in client.describe_calls if c[0] == "i0"][:3] == [
            ("i0", "label_0")
        ] * 3

    def test_overlong_sentence_truncated(self):
        long = " ".join(f"w{k}" for k in range(30))
        client = ScriptedClient(dim=4, descriptions={"i0": [long]})
        ids = make_label_space(n=1, dim=4, seed=9)
        space = generate_ens(mined(["i0"]), {"i0": "label_0"}, ids, client, 1, 1, seed=0)
        assert len(space.texts[0].split()) == 15

    def test_short_sentence_window_configurable(self):
        client = ScriptedClient(dim=4, descriptions={"i0": ["just two words ok"]})
        ids = make_label_space(n=1, dim=4, seed=10)
        space = generate_ens(
            mined(["i0"]), {"i0": "label_0"}, ids, client, 1, 1, seed=0,
            len_min=1, len_max=4,
        )
        assert space.texts == ("just two words ok",)

    def test_nothing_admissible_raises(self):
        client = ScriptedClient(dim=4, descriptions={"i0": ["label_0 label_0 label_0"] * 3})
        ids = make_label_space(n=1, dim=4, seed=11)
        with pytest.raises(GenerationError):
            generate_ens(mined(["i0"]), {"i0": "label_0"}, ids, client, 1, 1, seed=0)

    def test_empty_negatives_rejected(self):
        ids = make_label_space(n=1, dim=4, seed=12)
        with pytest.raises(InputError):
            generate_ens(mined([]), {}, ids, ScriptedClient(dim=4), 1, 1, seed=0)


class TestGenerateVsnl:
    def _subset(self, indices, n):
        freqs = np.zeros(n)
        freqs[list(indices)] = 1.0 / len(indices)
        return SimilarClassSubset(class_indices=tuple(indices), frequencies=freqs)

    def test_direct_pass_through(self):
        ids = make_label_space(n=2, dim=4, seed=13)
        client = ScriptedClient(
            dim=4, similars={"label_0": ["coyote", "jackal", "dingo"]}
        )
        space = generate_vsnl(self._subset([0], 2), ids, client, 3, 2)
        assert space.texts == ("coyote", "jackal", "dingo")
        assert space.kind is SpaceKind.VSNL
        # labels are embedded through the prompt template
        assert client.embed_calls == [
            ["The nice coyote.", "The nice jackal.", "The nice dingo."]
        ]

    def test_id_label_candidates_removed(self):
        ids = make_label_space(n=2, dim=4, seed=14)
        client = ScriptedClient(
            dim=4, similars={"label_0": ["coyote", "Label_1", "dingo"]}
        )
        space = generate_vsnl(self._subset([0], 2), ids, client, 3, 2)
        assert space.texts == ("coyote", "dingo")

    def test_cross_class_duplicates_kept_once(self):
        ids = make_label_space(n=2, dim=4, seed=15)
        client = ScriptedClient(
            dim=4,
            similars={"label_0": ["coyote", "wolf"], "label_1": ["Coyote", "lynx"]},
        )
        space = generate_vsnl(self._subset([0, 1], 2), ids, client, 4, 2)
        assert space.texts == ("coyote", "wolf", "lynx")

    def test_truncates_to_m_in_generation_order(self):
        ids = make_label_space(n=2, dim=4, seed=16)
        client = ScriptedClient(
            dim=4, similars={"label_0": ["a1", "a2", "a3"], "label_1": ["b1", "b2"]}
        )
        # ceil(3 / 2) = 2 per class -> a1 a2 b1 b2, truncated to M = 3
        space = generate_vsnl(self._subset([0, 1], 2), ids, client, 3, 2)
        assert space.texts == ("a1", "a2", "b1")

    def test_per_class_request_count(self):
        ids = make_label_space(n=3, dim=4, seed=17)
        client = ScriptedClient(
            dim=4, similars={"label_0": ["x1", "x2", "x3"], "label_2": ["y1", "y2", "y3"]}
        )
        generate_vsnl(self._subset([0, 2], 3), ids, client, 5, 2)
        # ceil(5 / 2) = 3 candidates requested per subset class
        assert client.similar_calls == [("label_0", 3), ("label_2", 3)]

    def test_no_admissible_labels_raises(self):
        ids = make_label_space(n=1, dim=4, seed=18)
        client = ScriptedClient(dim=4, similars={"label_0": ["label_0"]})
        with pytest.raises(GenerationError):
            generate_vsnl(self._subset([0], 1), ids, client, 2, 1)

    def test_empty_subset_rejected(self):
        ids = make_label_space(n=1, dim=4, seed=19)
        subset = SimilarClassSubset(class_indices=(), frequencies=np.array([1.0]))
        with pytest.raises(InputError):
            generate_vsnl(subset, ids, ScriptedClient(dim=4), 2, 1)
