#include "man/language.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "man/errors.hpp"
#include "man/io.hpp"

namespace man {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw InputError("vocabulary lists token '" + tokens_[i] + "' twice");
    }
  }
  auto it = ids_.find(std::string(kUnknownToken));
  if (it == ids_.end()) {
    tokens_.emplace_back(kUnknownToken);
    unknown_id_ = static_cast<int>(tokens_.size() - 1);
    ids_.emplace(tokens_.back(), unknown_id_);
  } else {
    unknown_id_ = it->second;
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw InputError("empty line in vocabulary file " + path.string());
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ostringstream os;
  for (const auto& t : tokens_) os << t << '\n';
  write_file_atomic(path, os.str());
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? unknown_id_ : it->second;
}

std::vector<int> tokenize(std::string_view query, const Vocabulary& vocab) {
  std::string cleaned;
  cleaned.reserve(query.size());
  for (char c : query) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 128 && std::ispunct(u)) continue;
    cleaned.push_back(u < 128 ? static_cast<char>(std::tolower(u)) : c);
  }
  std::istringstream words(cleaned);
  std::vector<int> ids;
  std::string word;
  while (words >> word && ids.size() < kMaxQueryWords) ids.push_back(vocab.id(word));
  if (ids.empty()) throw InputError("query has no tokens: '" + std::string(query) + "'");
  return ids;
}

EmbeddingTable::EmbeddingTable(const Vocabulary& vocab, std::uint64_t seed, std::size_t dim, double bound)
    : dim_(dim), seed_(seed) {
  data_.reserve(vocab.size() * dim);
  for (const auto& token : vocab.tokens()) {
    const auto row = token_row(token, seed, dim, bound);
    data_.insert(data_.end(), row.begin(), row.end());
  }
}

std::vector<double> EmbeddingTable::token_row(std::string_view token, std::uint64_t seed,
                                              std::size_t dim, double bound) {
  Rng rng(Rng::derive(seed, token));
  std::vector<double> row(dim);
  for (double& v : row) v = rng.uniform(-bound, bound);
  return row;
}

Tensor EmbeddingTable::lookup(const std::vector<int>& ids) const {
  std::vector<double> out;
  out.reserve(ids.size() * dim_);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows()) {
      throw InputError("token id " + std::to_string(id) + " outside embedding table of " +
                       std::to_string(rows()) + " rows");
    }
    const auto begin = data_.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(id) * dim_);
    out.insert(out.end(), begin, begin + static_cast<std::ptrdiff_t>(dim_));
  }
  return Tensor::from({ids.size(), dim_}, std::move(out));
}

namespace {

std::vector<double> uniform_values(std::size_t n, double bound, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return v;
}

}  // namespace

LstmParams LstmParams::init(std::size_t input_dim, std::size_t hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  LstmParams p;
  p.input_weights = Tensor::parameter({input_dim, 4 * hidden}, uniform_values(input_dim * 4 * hidden, bound, rng));
  p.recurrent_weights = Tensor::parameter({hidden, 4 * hidden}, uniform_values(hidden * 4 * hidden, bound, rng));
  auto bias = uniform_values(4 * hidden, bound, rng);
  for (std::size_t j = hidden; j < 2 * hidden; ++j) bias[j] = 1.0;
  p.bias = Tensor::parameter({4 * hidden}, std::move(bias));
  return p;
}

LstmParams LstmParams::zeros(std::size_t input_dim, std::size_t hidden) {
  LstmParams p;
  p.input_weights = Tensor::parameter({input_dim, 4 * hidden}, std::vector<double>(input_dim * 4 * hidden));
  p.recurrent_weights = Tensor::parameter({hidden, 4 * hidden}, std::vector<double>(hidden * 4 * hidden));
  p.bias = Tensor::parameter({4 * hidden}, std::vector<double>(4 * hidden));
  return p;
}

SentenceEncoding lstm_forward(const std::vector<int>& ids, const LstmParams& params,
                              const EmbeddingTable& table) {
  if (ids.empty() || ids.size() > kMaxQueryWords) {
    throw InputError("lstm_forward: query length " + std::to_string(ids.size()) +
                     " outside [1, " + std::to_string(kMaxQueryWords) + "]");
  }
  const std::size_t d = params.hidden();
  if (params.input_weights.rows() != table.dim()) {
    throw DimensionError("lstm_forward: embeddings have " + std::to_string(table.dim()) +
                         " dims, input weights expect " + std::to_string(params.input_weights.rows()));
  }
  // Input projections for all steps at once: [L x 4d].
  const Tensor projected =
      add_row_vector(matmul(table.lookup(ids), params.input_weights), params.bias);

  std::vector<Tensor> states;
  Tensor h, c;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    Tensor gates = slice_rows(projected, t, t + 1);
    if (t > 0) gates = add(gates, matmul(h, params.recurrent_weights));
    const Tensor in_gate = sigmoid(slice_cols(gates, 0, d));
    const Tensor forget_gate = sigmoid(slice_cols(gates, d, 2 * d));
    const Tensor candidate = tanh(slice_cols(gates, 2 * d, 3 * d));
    const Tensor out_gate = sigmoid(slice_cols(gates, 3 * d, 4 * d));
    c = t > 0 ? add(mul(forget_gate, c), mul(in_gate, candidate)) : mul(in_gate, candidate);
    h = mul(out_gate, tanh(c));
    states.push_back(h);
  }
  return SentenceEncoding{concat_rows(states)};
}

FilterParams FilterParams::init(std::size_t dim, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  FilterParams p;
  p.kernel = Tensor::parameter({1, dim, dim}, uniform_values(dim * dim, bound, rng));
  p.bias = Tensor::parameter({dim}, std::vector<double>(dim, 0.0));
  return p;
}

DynamicFilter make_dynamic_filters(const SentenceEncoding& encoding, const FilterParams& params) {
  const std::size_t d = params.kernel.size(1);
  if (encoding.states.cols() != d) {
    throw DimensionError("make_dynamic_filters: sentence states have " +
                         std::to_string(encoding.states.cols()) + " columns, filters expect d=" +
                         std::to_string(d));
  }
  return DynamicFilter{
      tanh(add_row_vector(conv1d(encoding.states, params.kernel, 1, Padding::kValid), params.bias))};
}

}  // namespace man
