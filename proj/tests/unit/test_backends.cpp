#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sagent/backends.hpp"
#include "sagent/util.hpp"

using namespace sagent;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sagent_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Util, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Util, SeedsAreStableAndDistinct) {
  EXPECT_EQ(trajectory_seed(7, "q1", 0), trajectory_seed(7, "q1", 0));
  EXPECT_NE(trajectory_seed(7, "q1", 0), trajectory_seed(7, "q1", 1));
  EXPECT_NE(trajectory_seed(7, "q1", 0), trajectory_seed(8, "q1", 0));
  EXPECT_NE(trajectory_seed(7, "q1", 0), trajectory_seed(7, "q2", 0));
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Util, Utf8PrefixNeverSplits) {
  const std::string s = "ab\xc3\xa9\xe6\x9d\xb1";  // ab é 東
  EXPECT_EQ(utf8_prefix(s, 3), "ab");
  EXPECT_EQ(utf8_prefix(s, 4), "ab\xc3\xa9");
  EXPECT_EQ(utf8_prefix(s, 6), "ab\xc3\xa9");
  EXPECT_EQ(utf8_prefix(s, 7), s);
  EXPECT_EQ(utf8_prefix(s, 100), s);
}

TEST(Util, AtomicWriteAndReadLines) {
  const auto dir = temp_dir("io");
  write_text_file_atomic(dir / "sub" / "f.txt", "a\r\nb\n");
  EXPECT_EQ(read_lines(dir / "sub" / "f.txt"), (std::vector<std::string>{"a", "b"}));
  EXPECT_THROW(read_text_file(dir / "missing"), IoError);
  fs::remove_all(dir);
}

TEST(Scripted, ServesInOrderThenFails) {
  ScriptedModel m;
  m.push("one", 1, -0.1);
  m.push("two", 1, -0.2);
  m.push("three", 1, -0.3);
  SampleRequest r;
  r.n = 2;
  const auto a = m.sample(r);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].text, "one");
  EXPECT_EQ(a[1].text, "two");
  try {
    m.sample(r);
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind, BackendErrorKind::script_exhausted);
  }
}

TEST(Backends, RequestValidation) {
  SampleRequest r;
  r.n = 0;
  EXPECT_THROW(r.validate("x"), BackendError);
  r.n = 1;
  r.temperature = -1;
  EXPECT_THROW(r.validate("x"), BackendError);
}

TEST(Search, FixtureExactNormalizedAndMiss) {
  FixtureSearch fs_;
  fs_.add("Capital of France?", {{"Paris", "Paris is the capital."}, {"France", "A country."}});
  LinkIdAllocator ids(4);
  const auto rec = fs_.search("Capital of France?", 3, ids);
  ASSERT_EQ(rec.results.size(), 2u);  // under-full is fine
  EXPECT_EQ(rec.results[0].link_id, 4);
  EXPECT_EQ(rec.results[1].link_id, 5);
  EXPECT_EQ(ids.peek(), 6);
  EXPECT_EQ(rec.query, "Capital of France?");

  const auto norm = fs_.search("  capital OF france ", 1, ids);
  ASSERT_EQ(norm.results.size(), 1u);
  EXPECT_EQ(norm.results[0].link_id, 6);

  try {
    fs_.search("something else", 3, ids);
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind, BackendErrorKind::fixture_miss);
    EXPECT_NE(std::string(e.what()).find("something else"), std::string::npos);
  }
  FixtureSearch strict(false);
  strict.add("A", {{"a", "b"}});
  EXPECT_THROW(strict.search("a", 1, ids), BackendError);
}

TEST(Search, EmptyQueryRejected) {
  SimulatedSearch s;
  LinkIdAllocator ids;
  EXPECT_THROW(s.search("", 3, ids), BackendError);
  EXPECT_THROW(s.search("   ", 3, ids), BackendError);
  EXPECT_EQ(ids.peek(), 1);
}

TEST(Search, SimulatedIsDeterministic) {
  SimulatedSearch s;
  LinkIdAllocator a, b;
  const auto r1 = s.search("who built it", 3, a);
  const auto r2 = s.search("who built it", 3, b);
  ASSERT_EQ(r1.results.size(), 3u);
  EXPECT_EQ(r1.results, r2.results);
}

TEST(Search, SnippetCapOnUtf8Boundary) {
  SearchQueryRecord rec;
  rec.results.push_back({1, "t", "short"});
  rec.results.push_back({2, "t", "xxx\xe6\x9d\xb1yyy"});
  apply_snippet_cap(rec, 5);
  EXPECT_EQ(rec.results[0].snippet, "short");
  EXPECT_EQ(rec.results[1].snippet, "xxx");
  EXPECT_EQ(rec.truncated_link_ids, std::vector<int>{2});
}

TEST(Http, ParseCompletionsResponse) {
  const std::string body = R"({"choices":[
    {"index":1,"text":"b","logprobs":{"token_logprobs":[-0.5,-0.25]}},
    {"index":0,"text":"a","logprobs":{"token_logprobs":[null,-1.0,-0.5,-0.5]}}]})";
  const auto s = HttpModel::parse_response(body, 2);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].text, "a");
  EXPECT_EQ(s[0].token_count, 3);
  EXPECT_DOUBLE_EQ(s[0].sum_log_prob, -2.0);
  EXPECT_EQ(s[1].text, "b");
  EXPECT_DOUBLE_EQ(s[1].perplexity(), std::exp(0.375));
  EXPECT_THROW(HttpModel::parse_response(body, 3), BackendError);
  EXPECT_THROW(HttpModel::parse_response("not json", 1), BackendError);
}

TEST(Http, UnreachableEndpointIsBackendError) {
  HttpModelOptions o;
  o.base_url = "http://127.0.0.1:1";
  o.retry.max_retries = 1;
  o.retry.initial_backoff = std::chrono::milliseconds(1);
  o.timeout = std::chrono::seconds(2);
  HttpModel m(o);
  SampleRequest r;
  r.prompt = "x";
  try {
    m.sample(r);
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind, BackendErrorKind::unreachable);
  }
}

TEST(Retry, BackoffIsCapped) {
  RetryPolicy p;
  EXPECT_EQ(p.delay(0).count(), 500);
  EXPECT_EQ(p.delay(1).count(), 1000);
  EXPECT_EQ(p.delay(10).count(), 8000);
}

TEST(Archive, RecordReplayRoundTrip) {
  const auto dir = temp_dir("archive");
  auto archive = std::make_shared<FixtureArchive>();
  auto inner = std::make_shared<ScriptedModel>();
  inner->push("first", 7, -1.2345678901234567);
  inner->push("second", 3, -0.1);
  RecordingModel rec(inner, archive);
  SampleRequest r;
  r.prompt = "prompt";
  r.seed = 42;
  rec.sample(r);
  rec.sample(r);  // same request recorded twice
  auto search_inner = std::make_shared<SimulatedSearch>();
  RecordingSearch rs(search_inner, archive);
  LinkIdAllocator ids;
  const auto live = rs.search("query", 2, ids);
  archive->save(dir);

  auto loaded = FixtureArchive::load(dir);
  EXPECT_EQ(loaded->llm_entries(), 1u);
  EXPECT_EQ(loaded->search_entries(), 1u);
  ReplayModel replay(loaded);
  const auto a = replay.sample(r);
  const auto b = replay.sample(r);
  EXPECT_EQ(a[0].text, "first");
  EXPECT_EQ(a[0].sum_log_prob, -1.2345678901234567);  // bit-exact
  EXPECT_EQ(b[0].text, "second");
  EXPECT_EQ(replay.sample(r)[0].text, "second");

  ReplaySearch rsearch(loaded);
  LinkIdAllocator ids2;
  EXPECT_EQ(rsearch.search("query", 2, ids2).results, live.results);

  SampleRequest other = r;
  other.seed = 43;
  try {
    replay.sample(other);
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind, BackendErrorKind::fixture_miss);
  }
  LinkIdAllocator ids3;
  EXPECT_THROW(rsearch.search("other", 2, ids3), BackendError);

  // Saving again gives the same bytes.
  const auto dir2 = temp_dir("archive2");
  loaded->save(dir2);
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir);
    EXPECT_EQ(read_text_file(e.path()), read_text_file(dir2 / rel)) << rel;
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST(Archive, NoCredentialsStored) {
  ::setenv("SAGENT_TEST_SECRET", "sk-very-secret", 1);
  const auto dir = temp_dir("secret");
  auto archive = std::make_shared<FixtureArchive>();
  RecordingModel rec(std::make_shared<SimulatedModel>(), archive);
  SampleRequest r;
  r.prompt = "Q";
  rec.sample(r);
  archive->save(dir);
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) EXPECT_EQ(read_text_file(e.path()).find("sk-very-secret"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Simulated, DeterministicPerSeed) {
  SimulatedModel m;
  SampleRequest r;
  r.prompt = "anything";
  r.n = 3;
  r.temperature = 0.7;
  r.seed = 5;
  EXPECT_EQ(m.sample(r), m.sample(r));
  EXPECT_EQ(m.sample(r).size(), 3u);
}
