#include <gtest/gtest.h>

#include <fstream>

#include "salamnet/preprocess.hpp"
#include "salamnet/utf8.hpp"
#include "test_util.hpp"

using namespace salamnet;

namespace {

const LexiconMap& no_stopwords() {
  static const LexiconMap m = LexiconMap::stopwords({});
  return m;
}

bool output_alphabet_ok(const std::string& s) {
  const auto cps = utf8::decode(s);
  for (std::size_t i = 0; i < cps.size(); ++i) {
    if (cps[i] == U' ') {
      if (i == 0 || i + 1 == cps.size() || cps[i - 1] == U' ') return false;
    } else if (!chars::is_letter(cps[i])) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST(ConvertEmoji, Examples) {
  const auto lex = testutil::example_lexicons();
  EXPECT_EQ(convert_emoji("جيد 😂", lex.emoji), "جيد ضحك");
  EXPECT_EQ(convert_emoji("مرحبا", lex.emoji), "مرحبا");
  EXPECT_EQ(convert_emoji("😂😂", lex.emoji), "ضحك ضحك");
}

TEST(ConvertEmoji, UnmappedEmojiLeavesGap) {
  const auto lex = testutil::example_lexicons();
  EXPECT_EQ(convert_emoji("جيد🎉جدا", lex.emoji), "جيد جدا");
  EXPECT_EQ(convert_emoji("🎉", lex.emoji), "");
}

TEST(ConvertEmoji, LongestKeyWins) {
  const auto m = LexiconMap::from(LexiconKind::EMOJI, {{"❤", "حب"}, {"❤️", "عشق"}});
  EXPECT_EQ(convert_emoji("❤️", m), "عشق");
  EXPECT_EQ(convert_emoji("❤", m), "حب");
}

TEST(NormalizeLetters, Examples) {
  EXPECT_EQ(normalize_letters("أ"), "ا");
  EXPECT_EQ(normalize_letters("إ"), "ا");
  EXPECT_EQ(normalize_letters("آ"), "ا");
  EXPECT_EQ(normalize_letters("ة"), "ه");
  EXPECT_EQ(normalize_letters("ى"), "ي");
  EXPECT_EQ(normalize_letters("ههههه"), "هه");
  EXPECT_EQ(normalize_letters("اهلا"), "اهلا");
  EXPECT_EQ(normalize_letters("جدااا"), "جداا");
}

TEST(NormalizeLetters, VariantsFoldBeforeRunCount) {
  // أاإ is three Alifs after folding, so it collapses to two.
  EXPECT_EQ(normalize_letters("أاإ"), "اا");
}

TEST(NormalizeDialect, Examples) {
  const auto lex = testutil::example_lexicons();
  EXPECT_EQ(normalize_dialect("كلام كتير", lex.dialect), "كلام كثير");
  EXPECT_EQ(normalize_dialect("كلام قليل", lex.dialect), "كلام قليل");
  EXPECT_EQ(normalize_dialect("كتير كتير", lex.dialect), "كثير كثير");
  EXPECT_EQ(normalize_dialect("كتيرة", lex.dialect), "كتيرة");  // whole tokens only
}

TEST(MapHyponyms, Examples) {
  const auto lex = testutil::example_lexicons();
  EXPECT_EQ(map_hyponyms("يا كلب", lex.hypernym), "يا حيوان");
  EXPECT_EQ(map_hyponyms("حيوان", lex.hypernym), "حيوان");
  EXPECT_EQ(map_hyponyms("صباح الخير", lex.hypernym), "صباح الخير");
}

TEST(SegmentHashtags, Examples) {
  EXPECT_EQ(segment_hashtags("#حرية_الشعب"), "حرية الشعب");
  EXPECT_EQ(segment_hashtags("abc"), "abc");
  EXPECT_EQ(segment_hashtags("#a_b_c"), "a b c");
}

TEST(CleanMisc, Examples) {
  EXPECT_EQ(clean_misc("مرحبا 123", no_stopwords()), "مرحبا");
  EXPECT_EQ(clean_misc("<b>نص</b>", no_stopwords()), "نص");
  EXPECT_EQ(clean_misc("مُحَمَّد", no_stopwords()), "محمد");
  EXPECT_EQ(clean_misc("  a,,b   ج  ", no_stopwords()), "a b ج");
  EXPECT_EQ(clean_misc("٣٤ كـــتاب", no_stopwords()), "كتاب");
}

TEST(CleanMisc, StopwordsRemovedAfterSymbolStrip) {
  const auto stop = LexiconMap::stopwords({"في"});
  EXPECT_EQ(clean_misc("في, البيت", stop), "البيت");
  EXPECT_EQ(clean_misc("فيه البيت", stop), "فيه البيت");
}

TEST(Pipeline, WorkedExample) {
  const Pipeline p = testutil::example_pipeline();
  EXPECT_EQ(run_pipeline("#يا_كلب 😂 123", p), "يا حيوان ضحك");
  EXPECT_EQ(run_pipeline("", p), "");
}

TEST(Pipeline, HashtagBeforeClean) {
  const Pipeline p = testutil::example_pipeline();
  EXPECT_EQ(run_pipeline("#a_1", p), "a");
}

TEST(Pipeline, DefaultOrderIsSixSteps) {
  const PipelineConfig c;
  EXPECT_EQ(c.steps, (std::vector<Step>{Step::EMOJI, Step::LETTERS, Step::DIALECT, Step::HYPERNYM, Step::HASHTAG,
                                        Step::CLEAN}));
}

TEST(Pipeline, DuplicateStepRejected) {
  EXPECT_THROW(Pipeline({Step::CLEAN, Step::CLEAN}, testutil::example_lexicons()), ConfigError);
}

TEST(Pipeline, MissingLexiconFailsAtConstruction) {
  PipelineConfig c = PipelineConfig::with_bundled_lexicons(SALAMNET_DEFAULT_DATA_DIR);
  c.dialect_path = "/nonexistent/dialect.tsv";
  EXPECT_THROW(Pipeline{c}, ConfigError);
}

TEST(Pipeline, StepNamesParse) {
  EXPECT_EQ(parse_step("hashtag"), Step::HASHTAG);
  EXPECT_EQ(parse_step("CLEAN"), Step::CLEAN);
  EXPECT_FALSE(parse_step("stem").has_value());
}

TEST(Lexicons, HypernymValueMayNotBeKey) {
  EXPECT_THROW(LexiconMap::from(LexiconKind::HYPERNYM, {{"كلب", "حيوان"}, {"حيوان", "كائن"}}), FormatError);
}

TEST(Lexicons, SelfMappingRejected) {
  EXPECT_THROW(LexiconMap::from(LexiconKind::DIALECT, {{"كتير", "كتير"}}), FormatError);
}

TEST(Lexicons, ChainedDialectRejectedByPipeline) {
  auto lex = testutil::example_lexicons();
  lex.dialect = LexiconMap::from(LexiconKind::DIALECT, {{"كتير", "وايد"}, {"وايد", "كثير"}});
  EXPECT_THROW(Pipeline({Step::DIALECT}, lex), ConfigError);
}

TEST(Lexicons, KeysCanonicalizedByLetterFolding) {
  auto lex = testutil::example_lexicons();
  lex.hypernym = LexiconMap::from(LexiconKind::HYPERNYM, {{"بقرة", "حيوان"}});
  const Pipeline p({Step::LETTERS, Step::HYPERNYM}, lex);
  EXPECT_EQ(p("بقرة"), "حيوان");
}

TEST(Lexicons, BundledFilesLoad) {
  const Pipeline p = testutil::bundled_pipeline();
  EXPECT_GE(p.lexicons().emoji.entries.size(), 40u);
  EXPECT_GE(p.lexicons().dialect.entries.size(), 45u);
  EXPECT_GE(p.lexicons().hypernym.entries.size(), 35u);
  EXPECT_GE(p.lexicons().stopwords.entries.size(), 200u);
}

TEST(Lexicons, MalformedLineIsFormatError) {
  const auto dir = testutil::temp_dir("lexicon");
  std::ofstream(dir / "bad.tsv") << "# comment\nكلب\tحيوان\nnotab\n";
  EXPECT_THROW(load_lexicon((dir / "bad.tsv").string(), LexiconKind::HYPERNYM), FormatError);
}

// Expected outputs were produced by tests/oracles/preprocess_oracle.py.
TEST(Pipeline, GoldenFile) {
  const Pipeline p = testutil::bundled_pipeline();
  std::ifstream in(testutil::fixture("preprocess_golden.tsv"), std::ios::binary);
  ASSERT_TRUE(in);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    ASSERT_NE(tab, std::string::npos);
    const std::string input = unescape_field(line.substr(0, tab));
    const std::string expected = unescape_field(line.substr(tab + 1));
    EXPECT_EQ(p(input), expected) << "line " << n + 1 << ": " << input;
    ++n;
  }
  EXPECT_EQ(n, 30);
}

TEST(Pipeline, FuzzIdempotenceAndAlphabet) {
  const Pipeline bundled = testutil::bundled_pipeline();
  const Pipeline small = testutil::example_pipeline();
  Rng rng(2024);
  for (int i = 0; i < 200; ++i) {
    const std::string x = testutil::fuzz_tweet(rng);
    for (const Pipeline* p : {&bundled, &small}) {
      const std::string once = (*p)(x);
      EXPECT_EQ((*p)(once), once) << "input: " << x;
      EXPECT_TRUE(output_alphabet_ok(once)) << "input: " << x << " output: " << once;
    }
  }
}

TEST(Steps, EachStepIdempotent) {
  const Pipeline p = testutil::bundled_pipeline();
  const auto& lex = p.lexicons();
  Rng rng(77);
  for (int i = 0; i < 200; ++i) {
    const std::string x = testutil::fuzz_tweet(rng);
    const auto e = convert_emoji(x, lex.emoji);
    EXPECT_EQ(convert_emoji(e, lex.emoji), e) << x;
    const auto l = normalize_letters(x);
    EXPECT_EQ(normalize_letters(l), l) << x;
    const auto d = normalize_dialect(l, lex.dialect);
    EXPECT_EQ(normalize_dialect(d, lex.dialect), d) << x;
    const auto h = map_hyponyms(l, lex.hypernym);
    EXPECT_EQ(map_hyponyms(h, lex.hypernym), h) << x;
    const auto s = segment_hashtags(x);
    EXPECT_EQ(segment_hashtags(s), s) << x;
    const auto c = clean_misc(x, lex.stopwords);
    EXPECT_EQ(clean_misc(c, lex.stopwords), c) << x;
  }
}
