#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <cstring>
#include <fstream>

#include <boost/math/distributions/chi_squared.hpp>

#include "sbcq/dataset/dataset.hpp"

using namespace sbcq;
using namespace sbcq::dataset;

namespace {

Transition random_transition(Rng& rng, std::size_t obs, std::size_t act) {
  Transition t;
  t.s.resize(obs);
  t.s2.resize(obs);
  t.a.resize(act);
  for (double& v : t.s) v = rng.normal() * 1e3;
  for (double& v : t.s2) v = rng.uniform(-1, 1) / 3.0;
  for (double& v : t.a) v = rng.uniform(-1, 1);
  t.r = -rng.uniform() * 144.7;
  t.done = rng.uniform() < 0.1;
  return t;
}

BatchDataset make_dataset(std::size_t n, std::uint64_t seed = 1) {
  BatchDataset ds({"parking", 12, 2, seed});
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) ds.append(random_transition(rng, 12, 2));
  return ds;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() : path(std::filesystem::temp_directory_path() / ("sbcq_ds_" + std::to_string(Rng(std::random_device{}()).next_u64()))) {
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::size_t error_line(const std::filesystem::path& p) {
  try {
    BatchDataset::load(p);
  } catch (const LoadError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST_CASE("append: counts, order and validation") {
  BatchDataset ds({"parking", 12, 2, 0});
  Rng rng(2);
  const Transition t = random_transition(rng, 12, 2);
  ds.append(t);
  CHECK(ds.size() == 1);
  CHECK(ds[0] == t);

  CHECK_THROWS_AS(ds.append(random_transition(rng, 11, 2)), std::invalid_argument);
  CHECK_THROWS_AS(ds.append(random_transition(rng, 12, 3)), std::invalid_argument);
  Transition bad = t;
  bad.r = NAN;
  CHECK_THROWS_AS(ds.append(bad), std::invalid_argument);
  CHECK(ds.size() == 1);

  CHECK(make_dataset(5000).size() == 5000);
}

TEST_CASE("sampling: deterministic, never fabricates, single element") {
  const BatchDataset ds = make_dataset(50);
  Rng a(9), b(9);
  CHECK(ds.sample_indices(200, a) == ds.sample_indices(200, b));

  Rng rng(4);
  for (const Transition& t : ds.sample_minibatch(500, rng))
    CHECK(std::find(ds.transitions().begin(), ds.transitions().end(), t) != ds.transitions().end());

  const BatchDataset one = make_dataset(1);
  const auto copies = one.sample_minibatch(1, rng);
  REQUIRE(copies.size() == 1);
  CHECK(copies[0] == one[0]);
  const auto many = one.sample_minibatch(7, rng);
  CHECK(std::all_of(many.begin(), many.end(), [&](const Transition& t) { return t == one[0]; }));

  BatchDataset empty({"parking", 12, 2, 0});
  CHECK_THROWS_AS(empty.sample_indices(3, rng), std::logic_error);
}

TEST_CASE("sampling: chi-squared uniformity over 10 elements") {
  const BatchDataset ds = make_dataset(10);
  Rng rng(123);
  std::vector<double> counts(10, 0.0);
  const std::size_t draws = 100000;
  for (std::size_t i : ds.sample_indices(draws, rng)) counts[i] += 1.0;
  const double expected = draws / 10.0;
  double stat = 0.0;
  for (double c : counts) stat += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(9.0);
  const double p_value = boost::math::cdf(boost::math::complement(dist, stat));
  MESSAGE("chi2 = " << stat << ", p = " << p_value);
  CHECK(p_value > 0.01);
}

TEST_CASE("gather builds aligned matrices") {
  const BatchDataset ds = make_dataset(20);
  const Minibatch b = ds.gather({3, 3, 7});
  REQUIRE(b.size() == 3);
  CHECK(b.s.rows() == 3);
  CHECK(b.s.cols() == 12);
  CHECK(b.a(2, 1) == ds[7].a[1]);
  CHECK(b.s2(0, 5) == ds[3].s2[5]);
  CHECK(b.r[1] == ds[3].r);
  CHECK(b.done[2] == (ds[7].done ? 1.0 : 0.0));
}

TEST_CASE("save/load round trip is exact") {
  TempDir dir;
  const BatchDataset ds = make_dataset(100, 77);
  const auto path = dir.path / "d.jsonl";
  ds.save(path);
  const BatchDataset back = BatchDataset::load(path);
  CHECK(back == ds);
  CHECK(back.header() == ds.header());

  // Awkward doubles survive the text round trip bit for bit.
  BatchDataset tricky({"highway", 1, 1, 0});
  tricky.append({{0.1 + 0.2}, {-0.0}, 1e-310, {5e-324}, false});
  tricky.append({{std::nextafter(1.0, 2.0)}, {-1.0}, -1.7976931348623157e308, {1.0 / 3.0}, true});
  tricky.save(path);
  const BatchDataset tb = BatchDataset::load(path);
  REQUIRE(tb.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::memcmp(&tb[i].r, &tricky[i].r, sizeof(double)) == 0);
    CHECK(std::memcmp(tb[i].s.data(), tricky[i].s.data(), sizeof(double)) == 0);
    CHECK(std::memcmp(tb[i].s2.data(), tricky[i].s2.data(), sizeof(double)) == 0);
    CHECK(std::memcmp(tb[i].a.data(), tricky[i].a.data(), sizeof(double)) == 0);
  }
}

TEST_CASE("load reports malformed files with line numbers") {
  TempDir dir;
  const auto p = dir.path / "bad.jsonl";
  const std::string header = R"({"env":"highway","obs_dim":1,"act_dim":1,"count":2,"seed":0})";
  const std::string row = R"({"s":[1.0],"a":[0.5],"r":0.1,"s2":[2.0],"done":false})";

  write_text(p, row + "\n" + row + "\n");
  CHECK(error_line(p) == 1);

  write_text(p, "");
  CHECK(error_line(p) == 1);

  write_text(p, header + "\n" + row + "\n");
  CHECK(error_line(p) == 3);

  write_text(p, header + "\n" + row + "\n" + row + "\n" + row + "\n");
  CHECK(error_line(p) == 4);

  write_text(p, header + "\n" + row + "\n" + R"({"s":[1.0,2.0],"a":[0.5],"r":0.1,"s2":[2.0],"done":false})" + "\n");
  CHECK(error_line(p) == 3);

  write_text(p, header + "\n{\"s\":[1.0],\"a\n");
  CHECK(error_line(p) == 2);

  write_text(p, header + "\n" + row + "\n" + row + "\n");
  CHECK(BatchDataset::load(p).size() == 2);

  CHECK_THROWS_AS(BatchDataset::load(dir.path / "missing.jsonl"), std::runtime_error);
}
