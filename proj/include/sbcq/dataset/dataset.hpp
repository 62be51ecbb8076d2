#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbcq/core/matrix.hpp"
#include "sbcq/core/rng.hpp"

namespace sbcq::dataset {

struct Transition {
  Vector s;
  Vector a;
  double r = 0.0;
  Vector s2;
  bool done = false;  // terminal, not merely truncated

  friend bool operator==(const Transition&, const Transition&) = default;
};

struct Header {
  std::string env;
  std::size_t obs_dim = 0;
  std::size_t act_dim = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const Header&, const Header&) = default;
};

// Row-aligned matrices for one sampled minibatch.
struct Minibatch {
  Matrix s, a, s2;
  Vector r;
  Vector done;  // 1.0 for terminal transitions

  std::size_t size() const { return r.size(); }
};

class LoadError : public std::runtime_error {
 public:
  LoadError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class BatchDataset {
 public:
  BatchDataset() = default;
  explicit BatchDataset(Header header) : header_(std::move(header)) {}

  const Header& header() const { return header_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  const std::vector<Transition>& transitions() const { return items_; }

  /// Rejects transitions whose dimensions disagree with the header or whose values are non-finite.
  void append(Transition t);

  /// n uniform draws with replacement.
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;
  std::vector<Transition> sample_minibatch(std::size_t n, Rng& rng) const;
  Minibatch gather(const std::vector<std::size_t>& indices) const;
  Minibatch sample_batch(std::size_t n, Rng& rng) const { return gather(sample_indices(n, rng)); }

  double mean_reward() const;
  std::size_t terminal_count() const;

  /// JSON Lines: one header object, then one object per transition.
  void save(const std::filesystem::path& path) const;
  static BatchDataset load(const std::filesystem::path& path);

  friend bool operator==(const BatchDataset&, const BatchDataset&) = default;

 private:
  Header header_;
  std::vector<Transition> items_;
};

}  // namespace sbcq::dataset
