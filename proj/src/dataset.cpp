#include "sbcq/dataset/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace sbcq::dataset {

using nlohmann::json;

LoadError::LoadError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

namespace {

bool finite(const Vector& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void copy_row(Matrix& m, std::size_t row, const Vector& v) { std::copy(v.begin(), v.end(), m.row(row).begin()); }

}  // namespace

void BatchDataset::append(Transition t) {
  if (t.s.size() != header_.obs_dim || t.s2.size() != header_.obs_dim)
    throw std::invalid_argument("dataset: observation dimension mismatch");
  if (t.a.size() != header_.act_dim) throw std::invalid_argument("dataset: action dimension mismatch");
  if (!std::isfinite(t.r) || !finite(t.s) || !finite(t.s2) || !finite(t.a))
    throw std::invalid_argument("dataset: non-finite transition");
  items_.push_back(std::move(t));
}

std::vector<std::size_t> BatchDataset::sample_indices(std::size_t n, Rng& rng) const {
  if (items_.empty()) throw std::logic_error("dataset: cannot sample from an empty dataset");
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = rng.index(items_.size());
  return idx;
}

std::vector<Transition> BatchDataset::sample_minibatch(std::size_t n, Rng& rng) const {
  std::vector<Transition> out;
  out.reserve(n);
  for (std::size_t i : sample_indices(n, rng)) out.push_back(items_[i]);
  return out;
}

Minibatch BatchDataset::gather(const std::vector<std::size_t>& indices) const {
  Minibatch b;
  const std::size_t n = indices.size();
  b.s.reset(n, header_.obs_dim);
  b.s2.reset(n, header_.obs_dim);
  b.a.reset(n, header_.act_dim);
  b.r.resize(n);
  b.done.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Transition& t = items_.at(indices[k]);
    copy_row(b.s, k, t.s);
    copy_row(b.s2, k, t.s2);
    copy_row(b.a, k, t.a);
    b.r[k] = t.r;
    b.done[k] = t.done ? 1.0 : 0.0;
  }
  return b;
}

double BatchDataset::mean_reward() const {
  if (items_.empty()) return 0.0;
  double s = 0.0;
  for (const auto& t : items_) s += t.r;
  return s / static_cast<double>(items_.size());
}

std::size_t BatchDataset::terminal_count() const {
  return static_cast<std::size_t>(std::count_if(items_.begin(), items_.end(), [](const Transition& t) { return t.done; }));
}

void BatchDataset::save(const std::filesystem::path& path) const {
  // Write beside the target and rename, so a crash never leaves a half-written dataset in place.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("dataset: cannot open " + tmp.string() + " for writing");
    const json head = {{"env", header_.env},
                       {"obs_dim", header_.obs_dim},
                       {"act_dim", header_.act_dim},
                       {"count", items_.size()},
                       {"seed", header_.seed}};
    out << head.dump() << '\n';
    for (const auto& t : items_) {
      const json row = {{"s", t.s}, {"a", t.a}, {"r", t.r}, {"s2", t.s2}, {"done", t.done}};
      out << row.dump() << '\n';
    }
    out.flush();
    if (!out) throw std::runtime_error("dataset: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

BatchDataset BatchDataset::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset: cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw LoadError(1, "missing header (empty file)");
  json head;
  try {
    head = json::parse(line);
  } catch (const json::exception& e) {
    throw LoadError(1, std::string("malformed header: ") + e.what());
  }
  for (const char* key : {"env", "obs_dim", "act_dim", "count", "seed"})
    if (!head.is_object() || !head.contains(key)) throw LoadError(1, std::string("missing header field '") + key + "'");

  std::size_t count = 0;
  BatchDataset ds;
  try {
    ds.header_ = {head.at("env").get<std::string>(), head.at("obs_dim").get<std::size_t>(),
                  head.at("act_dim").get<std::size_t>(), head.at("seed").get<std::uint64_t>()};
    count = head.at("count").get<std::size_t>();
  } catch (const json::exception& e) {
    throw LoadError(1, std::string("bad header field: ") + e.what());
  }
  ds.items_.reserve(count);

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) throw LoadError(lineno, "blank line");
    if (ds.items_.size() == count) throw LoadError(lineno, "more transitions than the header count " + std::to_string(count));
    try {
      const json row = json::parse(line);
      Transition t{row.at("s").get<Vector>(), row.at("a").get<Vector>(), row.at("r").get<double>(),
                   row.at("s2").get<Vector>(), row.at("done").get<bool>()};
      ds.append(std::move(t));
    } catch (const std::exception& e) {
      throw LoadError(lineno, std::string("bad transition: ") + e.what());
    }
  }
  if (ds.items_.size() != count)
    throw LoadError(lineno + 1, "truncated: header count " + std::to_string(count) + " but " +
                                    std::to_string(ds.items_.size()) + " transitions");
  return ds;
}

}  // namespace sbcq::dataset
