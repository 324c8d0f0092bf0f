#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "salamnet/features.hpp"
#include "test_util.hpp"

using namespace salamnet;

namespace {

struct OracleCase {
  std::string name;
  std::vector<std::string> docs;
  std::vector<std::pair<std::string, double>> idf;  // in file order (sorted)
  std::vector<std::string> queries;
  std::vector<std::map<std::string, double>> vecs;
};

std::vector<OracleCase> read_oracle() {
  std::ifstream in(testutil::fixture("tfidf_oracle.tsv"), std::ios::binary);
  std::vector<OracleCase> cases;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (f[0] == "corpus") {
      cases.push_back({f[1], {}, {}, {}, {}});
    } else if (f[0] == "doc") {
      cases.back().docs.push_back(f[1]);
    } else if (f[0] == "idf") {
      cases.back().idf.emplace_back(f[1], std::stod(f[2]));
    } else if (f[0] == "query") {
      cases.back().queries.push_back(f[1]);
      cases.back().vecs.emplace_back();
    } else if (f[0] == "vec") {
      cases.back().vecs.at(std::stoul(f[1]))[f[2]] = std::stod(f[3]);
    }
  }
  return cases;
}

EmbeddingTable fixture_table() {
  std::istringstream in("2 3\na 1 0 0\nb 0 1 0\n");
  return read_embeddings(in);
}

}  // namespace

TEST(CharNgrams, SlidingWindowIncludesSpaces) {
  const auto g = char_ngram_counts("ab c", 2, 5);
  EXPECT_EQ(g.at("ab"), 1u);
  EXPECT_EQ(g.at("b "), 1u);
  EXPECT_EQ(g.at(" c"), 1u);
  EXPECT_EQ(g.at("ab c"), 1u);
  EXPECT_EQ(g.size(), 6u);  // ab, b_, _c, ab_, b_c, ab_c
}

TEST(CharNgrams, CountsCodepointsNotBytes) {
  const auto g = char_ngram_counts("كلب", 2, 5);
  EXPECT_EQ(g.size(), 3u);
  EXPECT_EQ(g.at("كل"), 1u);
}

TEST(Tfidf, WorkedExample) {
  const auto m = fit_char_tfidf({"ab", "abc"});
  ASSERT_EQ(m.dim(), 3u);
  EXPECT_EQ(m.terms, (std::vector<std::string>{"ab", "abc", "bc"}));
  EXPECT_DOUBLE_EQ(m.idf_of("ab"), 1.0);
  EXPECT_NEAR(m.idf_of("bc"), std::log(1.5) + 1.0, 1e-15);
  EXPECT_NEAR(m.idf_of("abc"), 1.405465, 1e-6);
  const auto v = transform_tfidf(m, "ab");
  ASSERT_EQ(v.entries.size(), 1u);
  EXPECT_EQ(v.entries[0].first, *m.column("ab"));
  EXPECT_DOUBLE_EQ(v.entries[0].second, 1.0);
}

TEST(Tfidf, EmptyAndOovAreZero) {
  const auto m = fit_char_tfidf({"ab", "abc"});
  EXPECT_TRUE(transform_tfidf(m, "").empty());
  EXPECT_TRUE(transform_tfidf(m, "zz").empty());
  EXPECT_EQ(transform_tfidf(m, "zz").dim, 3u);
}

TEST(Tfidf, SingleDocAllIdfOne) {
  const auto m = fit_char_tfidf({"مرحبا بكم"});
  for (double w : m.idf) EXPECT_DOUBLE_EQ(w, 1.0);
}

TEST(Tfidf, EmptyCorpusIsFitError) { EXPECT_THROW(fit_char_tfidf({}), FitError); }

TEST(Tfidf, MatchesOracleTables) {
  const auto cases = read_oracle();
  ASSERT_EQ(cases.size(), 4u);
  for (const auto& c : cases) {
    SCOPED_TRACE(c.name);
    const auto m = fit_char_tfidf(c.docs);
    ASSERT_EQ(m.dim(), c.idf.size());
    for (std::size_t i = 0; i < c.idf.size(); ++i) {
      EXPECT_EQ(m.terms[i], c.idf[i].first);
      EXPECT_NEAR(m.idf[i], c.idf[i].second, 1e-12) << c.idf[i].first;
    }
    for (std::size_t q = 0; q < c.queries.size(); ++q) {
      const auto v = transform_tfidf(m, c.queries[q]);
      const auto& want = c.vecs[q];
      EXPECT_EQ(v.entries.size(), want.size()) << c.queries[q];
      for (const auto& [gram, value] : want) {
        EXPECT_NEAR(v.value_at(*m.column(gram)), value, 1e-12) << c.queries[q] << " / " << gram;
      }
    }
  }
}

TEST(Tfidf, IdenticalDocsShareVocabulary) {
  const auto one = fit_char_tfidf({"abc"});
  const auto two = fit_char_tfidf({"abc", "abc"});
  EXPECT_EQ(one.terms, two.terms);
  EXPECT_EQ(two.n_docs, 2u);
  for (double w : two.idf) EXPECT_DOUBLE_EQ(w, 1.0);  // ln(3/3) + 1
}

TEST(Tfidf, PropertiesOnRandomCorpora) {
  Rng rng(5);
  const std::string alphabet[] = {"ا", "ب", "ت", "ث", " ", "a", "b"};
  const auto random_text = [&] {
    std::string s;
    const std::size_t n = rng.below(9);
    for (std::size_t i = 0; i < n; ++i) s += alphabet[rng.below(7)];
    return s;
  };
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> docs;
    const std::size_t n = 1 + rng.below(5);
    for (std::size_t i = 0; i < n; ++i) docs.push_back(random_text());
    const auto m = fit_char_tfidf(docs);
    std::map<std::string, std::size_t> df;
    for (const auto& d : docs) {
      for (const auto& [g, unused] : char_ngram_counts(d, 2, 5)) {
        (void)unused;
        ++df[g];
      }
    }
    ASSERT_EQ(m.dim(), df.size());
    for (const auto& [ga, da] : df) {
      EXPECT_GT(m.idf_of(ga), 0.0);
      for (const auto& [gb, db] : df) {
        if (da < db) {
          EXPECT_GT(m.idf_of(ga), m.idf_of(gb));
        }
      }
    }
    for (std::size_t i = 0; i < m.dim(); ++i) EXPECT_EQ(*m.column(m.terms[i]), i);
    for (int q = 0; q < 5; ++q) {
      const auto v = transform_tfidf(m, random_text());
      for (std::size_t e = 1; e < v.entries.size(); ++e) EXPECT_LT(v.entries[e - 1].first, v.entries[e].first);
      for (const auto& [i, x] : v.entries) {
        EXPECT_LT(i, v.dim);
        EXPECT_NE(x, 0.0);
      }
      if (!v.empty()) {
        EXPECT_NEAR(v.norm(), 1.0, 1e-9);
      }
    }
  }
}

TEST(Tfidf, DependsOnlyOnNgramMultiset) {
  // P X P Y P and P Y P X P with |P| >= 4 have the same 2-5-gram multiset:
  // no window of five codepoints spans both separators.
  const std::string p = "كتابه";
  const std::string s1 = p + "x" + p + "y" + p;
  const std::string s2 = p + "y" + p + "x" + p;
  ASSERT_NE(s1, s2);
  ASSERT_EQ(char_ngram_counts(s1, 2, 5), char_ngram_counts(s2, 2, 5));
  const auto m = fit_char_tfidf({s1, "كتاب جديد", "xy"});
  EXPECT_EQ(transform_tfidf(m, s1).entries, transform_tfidf(m, s2).entries);
}

TEST(Tfidf, PersistenceRoundTrip) {
  const auto m = fit_char_tfidf({"كلب كبير", "ab\tc", "x\\y"});
  std::stringstream ss;
  write_tfidf(ss, m);
  const auto back = read_tfidf(ss);
  EXPECT_EQ(back.terms, m.terms);
  EXPECT_EQ(back.idf, m.idf);
  EXPECT_EQ(back.n_docs, m.n_docs);
  EXPECT_EQ(transform_tfidf(back, "كلب").entries, transform_tfidf(m, "كلب").entries);
}

TEST(Embeddings, FixtureTable) {
  const auto t = fixture_table();
  EXPECT_EQ(t.dim, 3u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.vector_of("a"), Eigen::Vector3d(1, 0, 0));
  EXPECT_EQ(t.lookup("zz"), nullptr);
}

TEST(Embeddings, ShortRowIsFormatErrorWithLine) {
  std::istringstream in("2 3\na 1 0 0\nb 0 1\n");
  try {
    read_embeddings(in, "vec");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("vec:3"), std::string::npos) << e.what();
  }
}

TEST(Embeddings, DuplicateTokenIsFormatError) {
  std::istringstream in("2 2\na 1 0\na 0 1\n");
  EXPECT_THROW(read_embeddings(in), FormatError);
}

TEST(Embeddings, CountMismatchIsFormatError) {
  std::istringstream in("3 2\na 1 0\nb 0 1\n");
  EXPECT_THROW(read_embeddings(in), FormatError);
}

TEST(Embeddings, RoundTrip) {
  const auto t = fixture_table();
  std::stringstream ss;
  write_embeddings(ss, t);
  const auto back = read_embeddings(ss);
  EXPECT_EQ(back.vector_of("b"), t.vector_of("b"));
  EXPECT_EQ(back.rows(), 2u);
}

TEST(EncodeSequence, Examples) {
  const auto t = fixture_table();
  const auto s = encode_sequence("a b", t, 5);
  ASSERT_EQ(s.length(), 2u);
  EXPECT_EQ(s.dim(), 3u);
  EXPECT_EQ(Eigen::Vector3d(s.vectors.col(0)), Eigen::Vector3d(1, 0, 0));
  EXPECT_EQ(Eigen::Vector3d(s.vectors.col(1)), Eigen::Vector3d(0, 1, 0));
  EXPECT_EQ(s.mask, (std::vector<std::uint8_t>{1, 1}));

  const auto e = encode_sequence("", t, 5);
  EXPECT_EQ(e.length(), 1u);
  EXPECT_EQ(e.mask, (std::vector<std::uint8_t>{0}));
  EXPECT_TRUE(e.vectors.isZero());

  const auto long_seq = encode_sequence("a b zz a b a", t, 4);
  EXPECT_EQ(long_seq.length(), 4u);
  EXPECT_EQ(long_seq.mask, (std::vector<std::uint8_t>{1, 1, 1, 1}));
  EXPECT_TRUE(long_seq.vectors.col(2).isZero());  // OOV is a real, zero step
  EXPECT_EQ(long_seq.vectors(0, 3), 1.0);
}

TEST(MeanPool, Examples) {
  const auto t = fixture_table();
  EXPECT_EQ(mean_pool(t, "a b"), Eigen::Vector3d(0.5, 0.5, 0));
  EXPECT_EQ(mean_pool(t, "a"), Eigen::Vector3d(1, 0, 0));
  EXPECT_EQ(mean_pool(t, "x y"), Eigen::Vector3d(0, 0, 0));
  EXPECT_EQ(mean_pool(t, "a zz"), Eigen::Vector3d(1, 0, 0));  // OOV ignored
}

TEST(HashNgrams, SingleNgramHitsItsBucket) {
  const auto m = fit_char_tfidf({"ab"});
  const auto s = hash_ngram_sequence("ab", m, 16);
  ASSERT_EQ(s.length(), 1u);
  EXPECT_EQ(s.dim(), 16u);
  const auto b = static_cast<Eigen::Index>(fnv1a64("ab") % 16);
  EXPECT_DOUBLE_EQ(s.vectors(b, 0), 1.0);
  EXPECT_DOUBLE_EQ(s.vectors.col(0).sum(), 1.0);
}

TEST(HashNgrams, TokenWithoutVocabularyIsZero) {
  const auto m = fit_char_tfidf({"ab"});
  const auto s = hash_ngram_sequence("ab zz", m, 32);
  ASSERT_EQ(s.length(), 2u);
  EXPECT_TRUE(s.vectors.col(1).isZero());
  EXPECT_EQ(s.mask[1], 1);
}

TEST(HashNgrams, BucketCountPreservesMass) {
  const auto m = fit_char_tfidf({"كلب كبير", "قط صغير", "كلب"});
  const std::string text = "كلب كبير جدا";
  const auto a = hash_ngram_sequence(text, m, 16, 50, false);
  const auto b = hash_ngram_sequence(text, m, 256, 50, false);
  EXPECT_EQ(a.dim(), 16u);
  EXPECT_EQ(b.dim(), 256u);
  for (Eigen::Index t = 0; t < a.vectors.cols(); ++t) {
    EXPECT_NEAR(a.vectors.col(t).sum(), b.vectors.col(t).sum(), 1e-12);
  }
  // Oracle for the first token: sum of doc-tf * idf over its distinct in-vocab n-grams.
  const auto doc = char_ngram_counts(text, 2, 5);
  double mass = 0.0;
  for (const auto& [g, unused] : char_ngram_counts("كلب", 2, 5)) {
    (void)unused;
    if (m.column(g)) mass += static_cast<double>(doc.at(g)) * m.idf_of(g);
  }
  EXPECT_NEAR(a.vectors.col(0).sum(), mass, 1e-12);
}

TEST(HashNgrams, NormalizedRowsAndDeterminism) {
  const auto m = fit_char_tfidf({"كلب كبير", "قط صغير"});
  const auto s = hash_ngram_sequence("كلب صغير", m);
  for (Eigen::Index t = 0; t < s.vectors.cols(); ++t) EXPECT_NEAR(s.vectors.col(t).norm(), 1.0, 1e-12);
  EXPECT_EQ(hash_ngram_sequence("كلب صغير", m).vectors, s.vectors);
  EXPECT_THROW(hash_ngram_sequence("x", m, 8), ConfigError);
}

TEST(DocumentSequence, OneStepHoldingTheTfidfVector) {
  const auto m = fit_char_tfidf({"ab", "abc"});
  const auto s = document_vector_sequence("abc", m);
  ASSERT_EQ(s.length(), 1u);
  EXPECT_EQ(s.dim(), m.dim());
  EXPECT_EQ(Eigen::VectorXd(s.vectors.col(0)), transform_tfidf(m, "abc").dense());
}
