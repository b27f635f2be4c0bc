import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdfn.corpus import (
    DISFLUENCY_TYPES,
    CorpusFormatError,
    DisfluencySpec,
    SyntheticConfig,
    Utterance,
    assign_split,
    format_corpus,
    generate_corpus,
    inject_disfluency,
    parse_corpus,
    preprocess_tokens,
    preprocess_utterance,
    read_corpus,
    write_corpus,
)


class TestPreprocess:
    def test_trace(self):
        c = preprocess_tokens(["But,", "I", "do", "abso-"])
        assert c.tokens == ["but", "i", "do"]
        assert c.index_map == [0, 1, 2]

    def test_lowercase(self):
        assert preprocess_tokens(["HELLO"]).tokens == ["hello"]

    def test_all_punctuation(self):
        c = preprocess_tokens(["..."])
        assert c.tokens == [] and c.empty

    def test_index_map_skips(self):
        c = preprocess_tokens(["uh-", "I", ",", "it's", "sw—"])
        assert c.tokens == ["i", "its"]
        assert c.index_map == [1, 3]

    def test_tags_follow_tokens(self):
        utt = Utterance("x", ["I", "th-", "I", "said."], ["I", "I", "O", "O"], [1.0, 0.0, 0.0, 0.0])
        out = preprocess_utterance(utt)
        assert out.tokens == ["i", "i", "said"]
        assert out.tags == ["I", "O", "O"]
        assert out.frame_channel == [1.0, 0.0, 0.0]

    @given(st.lists(st.text(min_size=0, max_size=6).filter(lambda t: not any(c.isspace() for c in t))))
    def test_idempotent(self, raw):
        once = preprocess_tokens(raw).tokens
        assert preprocess_tokens(once).tokens == once


class TestSplits:
    @pytest.mark.parametrize(
        "fid,split",
        [
            ("sw2005.dps", "train"),
            ("sw3120.dps", "train"),
            ("sw4617.dps", "dev"),
            ("sw4519.dps", "dev"),
            ("sw4104.dps", "test"),
            ("sw4004.dps", "test"),
            ("sw4210.dps", "excluded"),
            ("sw4390.dps", "excluded"),
            ("sw1234.dps", "excluded"),
            ("notes.txt", "excluded"),
            ("", "excluded"),
        ],
    )
    def test_assignment(self, fid, split):
        assert assign_split(fid) == split

    def test_literal_mode(self):
        assert assign_split("sw2305.dps", literal=True) == "train"
        assert assign_split("sw2005.dps", literal=True) == "excluded"
        assert assign_split("sw4617.dps", literal=True) == "dev"

    @given(st.text(max_size=12))
    def test_total(self, fid):
        assert assign_split(fid) in {"train", "dev", "test", "excluded"}
        assert assign_split(fid) == assign_split(fid)


class TestInject:
    def test_repetition(self):
        fluent = ["but", "i", "grew", "up", "with", "cats"]
        utt = inject_disfluency(fluent, DisfluencySpec("repetition", 1, 1))
        assert utt.tokens == ["but", "i", "i", "grew", "up", "with", "cats"]
        assert utt.tags == ["O", "I", "O", "O", "O", "O", "O"]

    def test_restart(self):
        spec = DisfluencySpec("restart", 0, 2, interregnum="uh", reparandum=("you", "were"))
        utt = inject_disfluency(["he", "was", "waiting"], spec)
        assert utt.tokens == ["you", "were", "uh", "he", "was", "waiting"]
        assert utt.tags == ["I", "I", "I", "O", "O", "O"]

    def test_substitution(self):
        fluent = ["the", "pen", "was", "kept", "over", "the", "table"]
        utt = inject_disfluency(fluent, DisfluencySpec("substitution", 4, 1, reparandum=("under",)))
        assert utt.tokens == ["the", "pen", "was", "kept", "under", "over", "the", "table"]
        assert [t for t, g in zip(utt.tokens, utt.tags) if g == "I"] == ["under"]

    def test_repair_veers_off(self):
        utt = inject_disfluency(["i", "ski", "yes"], DisfluencySpec("repair", 0, 2), seed=3)
        assert utt.tags == ["I", "I", "O", "O", "O"]
        assert utt.tokens[0] == "i" and utt.tokens[1] != "ski"

    def test_cue_on_reparandum_only(self):
        spec = DisfluencySpec("restart", 0, 2, interregnum="uh", reparandum=("you", "were"))
        utt = inject_disfluency(["he", "was"], spec, cue=0.7, cue_prob=1.0)
        assert utt.frame_channel == [0.7, 0.7, 0.0, 0.0, 0.0]
        silent = inject_disfluency(["he", "was"], spec, cue=0.7, cue_prob=0.0)
        assert silent.frame_channel == [0.0] * 5

    def test_interregnum_tag_flag(self):
        spec = DisfluencySpec("repetition", 0, 1, interregnum="uh")
        utt = inject_disfluency(["i", "went"], spec, interregnum_tag="O")
        assert utt.tags == ["I", "O", "O", "O"]

    @pytest.mark.parametrize(
        "spec",
        [
            DisfluencySpec("repetition", 2, 2),
            DisfluencySpec("repair", 3, 1),
            DisfluencySpec("substitution", 3, 1),
            DisfluencySpec("deletion", 4, 1),
            DisfluencySpec("flub", 0, 1),
            DisfluencySpec("repetition", 0, 0),
        ],
    )
    def test_out_of_bounds(self, spec):
        with pytest.raises(ValueError):
            inject_disfluency(["a", "b", "c"], spec)

    def test_removal_recovers_fluent_exhaustive(self):
        vocab = ["i", "we", "saw", "the", "cats"]
        checked = 0
        for n in range(1, 9):
            fluent = [vocab[(i * 3 + n) % len(vocab)] for i in range(n)]
            for kind in DISFLUENCY_TYPES:
                for pos in range(n + 1):
                    for length in range(1, 4):
                        for im in (None, "uh"):
                            spec = DisfluencySpec(kind, pos, length, im)
                            try:
                                spec.check(n)
                            except ValueError:
                                continue
                            utt = inject_disfluency(fluent, spec, seed=pos * 7 + length)
                            assert utt.fluent_tokens() == fluent
                            assert "I" in utt.tags
                            checked += 1
        assert checked > 500


class TestCorpusIO:
    def test_round_trip_random(self, tmp_path):
        utts = generate_corpus(100, seed=9, config=SyntheticConfig(cue_prob=0.5))
        write_corpus(tmp_path / "c.tsv", utts)
        assert read_corpus(tmp_path / "c.tsv") == utts

    @given(
        st.lists(
            st.tuples(
                st.text(max_size=8),
                st.lists(
                    st.tuples(st.text(min_size=1, max_size=5), st.sampled_from("IO"), st.floats(-1e6, 1e6)),
                    min_size=1,
                    max_size=6,
                ),
            ),
            max_size=5,
        )
    )
    def test_round_trip_property(self, records):
        utts = [
            Utterance(uid, [t for t, _, _ in toks], [g for _, g, _ in toks], [c for _, _, c in toks])
            for uid, toks in records
        ]
        assert parse_corpus(format_corpus(utts)) == utts

    def test_length_mismatch_reports_line(self):
        text = "# header\nu1\ta b c\tO O O\t0 0 0\nu2\ta b c\tO O\t0 0 0\n"
        with pytest.raises(CorpusFormatError, match="line 3.*tags") as exc:
            parse_corpus(text)
        assert exc.value.line == 3 and exc.value.field_name == "tags"

    def test_bad_field_count(self):
        with pytest.raises(CorpusFormatError, match="line 1"):
            parse_corpus("u1\ta b\tO O\n")

    def test_bad_channel(self):
        with pytest.raises(CorpusFormatError, match="channel"):
            parse_corpus("u1\ta\tO\tx\n")

    def test_empty(self, tmp_path):
        (tmp_path / "e.tsv").write_text("")
        assert read_corpus(tmp_path / "e.tsv") == []

    def test_comment_like_id(self):
        utts = [Utterance("#not-a-comment", ["a"], ["O"])]
        assert parse_corpus(format_corpus(utts)) == utts


def has_repeat(tokens):
    n = len(tokens)
    return any(
        tokens[i : i + k] == tokens[i + k : i + 2 * k] for k in range(1, 4) for i in range(n - 2 * k + 1)
    )


class TestGenerate:
    def test_deterministic(self):
        assert generate_corpus(50, seed=7) == generate_corpus(50, seed=7)
        assert generate_corpus(50, seed=7) != generate_corpus(50, seed=8)

    def test_all_types_present(self):
        utts = generate_corpus(300, seed=1, config=SyntheticConfig(disfluent_frac=1.0))
        assert all("I" in u.tags for u in utts)
        assert all(u.fluent_tokens() for u in utts)

    def test_runs_fit_span_limit(self):
        from mdfn.spanlab import gold_runs

        for u in generate_corpus(500, seed=2):
            assert all(r.length <= 8 for r in gold_runs(u.tags))

    def test_ambiguous_repetitions(self):
        cfg = SyntheticConfig(disfluent_frac=1.0, types={"repetition": 1.0}, ambiguous_repetitions=True)
        utts = generate_corpus(400, seed=3, config=cfg)
        fluent = [u for u in utts if "I" not in u.tags]
        disfluent = [u for u in utts if "I" in u.tags]
        assert 150 < len(fluent) < 250
        assert all(set(u.frame_channel) == {0.0} for u in fluent)
        assert all(max(u.frame_channel) > 0 for u in disfluent)
        # the fluent half still carries an immediately repeated n-gram in its text
        assert all(has_repeat(u.tokens) for u in fluent)

    def test_unknown_type(self):
        with pytest.raises(ValueError):
            generate_corpus(5, config=SyntheticConfig(types={"stutter": 1.0}))
