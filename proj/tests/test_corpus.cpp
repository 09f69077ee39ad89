#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "support.hpp"

using namespace charcnn;
using charcnn::fixtures::TempDir;

namespace {

std::vector<LabeledExample> parse(const std::string& text, bool allow_empty = false) {
  std::istringstream in(text);
  return parse_dsl(in, allow_empty);
}

std::vector<LabeledExample> texts(std::initializer_list<std::u32string> ts) {
  std::vector<LabeledExample> out;
  for (const auto& t : ts) out.push_back({t, "x"});
  return out;
}

} // namespace

TEST(LoadDsl, SplitsTextAndLabel) {
  const auto r = parse("hello world\ten\n");
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].text, U"hello world");
  EXPECT_EQ(r[0].label, "en");
}

TEST(LoadDsl, SplitsOnLastTab) {
  const auto r = parse("a\tb\tfr\n");
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].text, U"a\tb");
  EXPECT_EQ(r[0].label, "fr");
}

TEST(LoadDsl, PreservesOrderStripsLabelAndCr) {
  const auto r = parse("x\ten\r\n  y \t en \nz\tfr");
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].label, "en");
  EXPECT_EQ(r[1].label, "en");
  EXPECT_EQ(r[2].label, "fr");
  EXPECT_EQ(r[1].text, U"  y ");
}

TEST(LoadDsl, DecodesUtf8) {
  const auto r = parse("\xC3\xA9t\xC3\xA9\tfr\n");
  EXPECT_EQ(r[0].text, U"été");
}

TEST(LoadDsl, MissingTabNamesLine) {
  try {
    parse("ok\ten\nbroken line\n");
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(LoadDsl, RejectsInvalidUtf8) {
  EXPECT_THROW(parse("\xFF\xFE\ten\n"), DataError);
  EXPECT_THROW(parse("\xC0\xAF\ten\n"), DataError); // overlong '/'
}

TEST(LoadDsl, EmptyTextNeedsFlag) {
  EXPECT_THROW(parse("\ten\n"), DataError);
  const auto r = parse("\ten\n", true);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_TRUE(r[0].text.empty());
}

TEST(LoadDsl, EmptyLabelRejected) { EXPECT_THROW(parse("text\t  \n"), DataError); }

TEST(LoadDsl, ReadsFile) {
  TempDir dir;
  fixtures::write_dsl(dir.file("d.txt"), {{U"a", "en"}, {U"b", "en"}, {U"c", "fr"}});
  const auto r = load_dsl_file(dir.file("d.txt"), false);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[2].label, "fr");
  EXPECT_THROW(load_dsl_file(dir.file("missing.txt"), false), DataError);
}

TEST(Alphabet, DedupAndSort) {
  const auto a = build_alphabet(texts({U"ab", U"ba"}));
  EXPECT_EQ(a.size(), 4u);
  EXPECT_EQ(a.char_at(2), U'a');
  EXPECT_EQ(a.char_at(3), U'b');
}

TEST(Alphabet, EmptyTextsGivePadUnkOnly) {
  EXPECT_EQ(build_alphabet(texts({U""})).size(), 2u);
}

TEST(Alphabet, CodePointOrder) {
  const auto a = build_alphabet(texts({U"ba", U"c"}));
  EXPECT_EQ(a.index_of(U'a'), 2u);
  EXPECT_EQ(a.index_of(U'b'), 3u);
  EXPECT_EQ(a.index_of(U'c'), 4u);
  EXPECT_EQ(a.index_of(U'z'), Alphabet::unk_index);
}

TEST(Alphabet, EmptyCorpusRejected) {
  EXPECT_THROW(build_alphabet(std::vector<LabeledExample>{}), DataError);
}

TEST(Alphabet, OrderInsensitive) {
  auto corpus = fixtures::separable_corpus(30, 5);
  const auto a = build_alphabet(corpus);
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    shuffle(std::span(corpus), rng);
    EXPECT_EQ(build_alphabet(corpus), a);
  }
}

TEST(Alphabet, RoundTripsInAlphabetCharacters) {
  const auto a = build_alphabet(texts({U"héllo wörld"}));
  for (std::uint32_t i = 2; i < a.size(); ++i) EXPECT_EQ(a.index_of(a.char_at(i)), i);
  EXPECT_THROW(a.char_at(0), std::out_of_range);
}

TEST(LabelSet, SortedStableIndices) {
  LabelSet l({"msa", "egy", "glf", "egy"});
  EXPECT_EQ(l.size(), 3u);
  EXPECT_EQ(l.index_of("egy"), 0u);
  EXPECT_EQ(l.index_of("glf"), 1u);
  EXPECT_EQ(l.index_of("msa"), 2u);
  EXPECT_THROW(l.index_of("lav"), DataError);
}

TEST(Encode, Pads) {
  const auto a = build_alphabet(texts({U"ab"}));
  EXPECT_EQ(encode(U"ab", a, 4), (EncodedText{2, 3, 0, 0}));
}

TEST(Encode, KeepsHead) {
  const auto a = build_alphabet(texts({U"ab"}));
  EXPECT_EQ(encode(U"aaaaa", a, 3), (EncodedText{2, 2, 2}));
}

TEST(Encode, UnknownToUnk) {
  const auto a = build_alphabet(texts({U"ab"}));
  EXPECT_EQ(encode(U"ba?", a, 4), (EncodedText{3, 2, 1, 0}));
}

TEST(Encode, ZeroLengthRejected) {
  const auto a = build_alphabet(texts({U"ab"}));
  EXPECT_THROW(encode(U"ab", a, 0), ConfigError);
}

TEST(Encode, PropertyFixedLengthAndRange) {
  const auto a = build_alphabet(fixtures::separable_corpus(20, 1));
  Rng rng(77);
  for (int trial = 0; trial < 500; ++trial) {
    std::u32string s;
    const auto n = uniform_index(rng, 60);
    for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char32_t>(0x20 + uniform_index(rng, 0x300)));
    const auto len = 1 + uniform_index(rng, 50);
    const auto e = encode(s, a, len);
    ASSERT_EQ(e.size(), len);
    for (auto x : e) ASSERT_LT(x, a.size());
  }
}

TEST(Encode, PropertyIdempotentOnDecodedPrefix) {
  const auto a = build_alphabet(fixtures::separable_corpus(20, 1));
  Rng rng(78);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = 1 + uniform_index(rng, 30);
    std::u32string s;
    const auto n = uniform_index(rng, len + 1);
    for (std::size_t i = 0; i < n; ++i) s.push_back(a.characters()[uniform_index(rng, a.characters().size())]);
    const auto e = encode(s, a, len);
    std::u32string decoded;
    for (auto x : e)
      if (x >= 2) decoded.push_back(a.char_at(x));
    EXPECT_EQ(decoded, s);
    EXPECT_EQ(encode(decoded, a, len), e);
  }
}

TEST(Split, SizesAndDisjoint) {
  std::vector<int> data(100);
  for (int i = 0; i < 100; ++i) data[i] = i;
  const auto [train, dev] = split_train_dev(data, 0.1, 3);
  EXPECT_EQ(train.size(), 90u);
  EXPECT_EQ(dev.size(), 10u);
  std::set<int> all(train.begin(), train.end());
  for (int x : dev) EXPECT_TRUE(all.insert(x).second);
  EXPECT_EQ(all.size(), 100u);
}

TEST(Split, Deterministic) {
  std::vector<int> data(50);
  for (int i = 0; i < 50; ++i) data[i] = i;
  EXPECT_EQ(split_train_dev(data, 0.1, 11), split_train_dev(data, 0.1, 11));
  EXPECT_NE(split_train_dev(data, 0.1, 11), split_train_dev(data, 0.1, 12));
}

TEST(Split, DevAtLeastOne) {
  const std::vector<int> data{1, 2};
  const auto [train, dev] = split_train_dev(data, 0.1, 0);
  EXPECT_EQ(train.size(), 1u);
  EXPECT_EQ(dev.size(), 1u);
}

TEST(Split, RejectsBadFraction) {
  const std::vector<int> data{1, 2, 3};
  EXPECT_THROW(split_train_dev(data, 0.0, 0), ConfigError);
  EXPECT_THROW(split_train_dev(data, 1.0, 0), ConfigError);
  EXPECT_THROW(split_train_dev(data, -0.5, 0), ConfigError);
  EXPECT_THROW(split_train_dev(std::vector<int>{1}, 0.5, 0), DataError);
}

TEST(Split, PropertyMultisetPartition) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = 2 + uniform_index(rng, 200);
    std::vector<int> data(n);
    for (auto& x : data) x = static_cast<int>(uniform_index(rng, 10)); // duplicates on purpose
    const auto frac = 0.01 + 0.98 * uniform01(rng);
    auto [train, dev] = split_train_dev(data, frac, rng());
    EXPECT_FALSE(dev.empty());
    EXPECT_FALSE(train.empty());
    train.insert(train.end(), dev.begin(), dev.end());
    std::sort(train.begin(), train.end());
    std::sort(data.begin(), data.end());
    EXPECT_EQ(train, data);
  }
}

namespace {

std::vector<EncodedExample> numbered(std::size_t n) {
  std::vector<EncodedExample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({EncodedText{static_cast<std::uint32_t>(i)}, i % 3});
  return out;
}

std::vector<std::uint32_t> flatten(const std::vector<Batch>& bs) {
  std::vector<std::uint32_t> ids;
  for (const auto& b : bs) {
    EXPECT_EQ(b.inputs.size(), b.labels.size());
    for (std::size_t i = 0; i < b.size(); ++i) {
      ids.push_back(b.inputs[i][0]);
      EXPECT_EQ(b.labels[i], b.inputs[i][0] % 3);
    }
  }
  return ids;
}

} // namespace

TEST(Batches, RemainderBatch) {
  const auto bs = batches(numbered(10), 16, 1);
  ASSERT_EQ(bs.size(), 1u);
  EXPECT_EQ(bs[0].size(), 10u);
}

TEST(Batches, Chunking) {
  const auto bs = batches(numbered(33), 16, 1);
  ASSERT_EQ(bs.size(), 3u);
  EXPECT_EQ(bs[0].size(), 16u);
  EXPECT_EQ(bs[1].size(), 16u);
  EXPECT_EQ(bs[2].size(), 1u);
}

TEST(Batches, PartitionAndSeedSensitivity) {
  const auto data = numbered(100);
  auto a = flatten(batches(data, 16, 1));
  const auto b = flatten(batches(data, 16, 2));
  EXPECT_NE(a, b);
  std::sort(a.begin(), a.end());
  for (std::uint32_t i = 0; i < 100; ++i) EXPECT_EQ(a[i], i);
}

TEST(Batches, Errors) {
  EXPECT_THROW(batches(numbered(3), 0, 1), ConfigError);
  EXPECT_THROW(batches(std::vector<EncodedExample>{}, 4, 1), DataError);
}
