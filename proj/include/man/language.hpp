#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "man/rng.hpp"
#include "man/tensor.hpp"

namespace man {

inline constexpr std::size_t kMaxQueryWords = 15;
inline constexpr std::size_t kEmbeddingDim = 300;
inline constexpr std::string_view kUnknownToken = "<unk>";
inline constexpr double kEmbeddingBound = 0.05;

// Token -> id map with contiguous ids. The vocabulary file holds one token
// per line; the zero-based line number is the id. "<unk>" is appended if the
// file does not list it.
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}
  explicit Vocabulary(std::vector<std::string> tokens);

  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int id(std::string_view token) const;
  int unknown_id() const { return unknown_id_; }
  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int unknown_id_ = 0;
};

// Lowercase, strip ASCII punctuation, split on whitespace, map unknown words
// to <unk>, keep at most 15 ids. Throws InputError if nothing remains.
std::vector<int> tokenize(std::string_view query, const Vocabulary& vocab);

// Frozen word vectors. Row for token t is drawn uniformly in [-bound, bound]
// from Rng(Rng::derive(seed, t)), so it depends only on (seed, t).
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(const Vocabulary& vocab, std::uint64_t seed, std::size_t dim = kEmbeddingDim,
                 double bound = kEmbeddingBound);

  static std::vector<double> token_row(std::string_view token, std::uint64_t seed, std::size_t dim,
                                       double bound = kEmbeddingBound);

  std::size_t dim() const { return dim_; }
  std::size_t rows() const { return dim_ == 0 ? 0 : data_.size() / dim_; }
  std::uint64_t seed() const { return seed_; }
  // [ids.size() x dim] constant tensor.
  Tensor lookup(const std::vector<int>& ids) const;

 private:
  std::vector<double> data_;
  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
};

// Single-layer LSTM. Gate blocks along the 4d axis are ordered
// (input, forget, cell, output).
struct LstmParams {
  Tensor input_weights;      // [embedding_dim x 4d]
  Tensor recurrent_weights;  // [d x 4d]
  Tensor bias;               // [4d]

  std::size_t hidden() const { return recurrent_weights.rows(); }

  // Uniform in [-1/sqrt(d), 1/sqrt(d)] in the order above, then the forget
  // block of the bias is set to 1.
  static LstmParams init(std::size_t input_dim, std::size_t hidden, Rng& rng);
  static LstmParams zeros(std::size_t input_dim, std::size_t hidden);
};

// f_l: one hidden state per word, [L x d].
struct SentenceEncoding {
  Tensor states;
  std::size_t length() const { return states.rows(); }
};

SentenceEncoding lstm_forward(const std::vector<int>& ids, const LstmParams& params,
                              const EmbeddingTable& table);

// Word-level filter bank generated from the sentence. `words` is stored
// word-major: row i is the d-dimensional filter for word i, i.e. column i of
// the d x L matrix Gamma.
struct DynamicFilter {
  Tensor words;  // [L x d]

  std::size_t length() const { return words.rows(); }
  std::size_t dim() const { return words.cols(); }
  Tensor matrix() const { return transpose(words); }  // [d x L]
};

// Shared per-word affine map W f + b followed by tanh, applied as a
// width-1 convolution over the word axis.
struct FilterParams {
  Tensor kernel;  // [1 x d x d], kernel[0][in][out]
  Tensor bias;    // [d]

  static FilterParams init(std::size_t dim, Rng& rng);
};

DynamicFilter make_dynamic_filters(const SentenceEncoding& encoding, const FilterParams& params);

}  // namespace man
