#include "cbr/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cbr/errors.hpp"
#include "cbr/hashing.hpp"
#include "cbr/rng.hpp"

namespace cbr {
namespace {

Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  // Row-major fill keeps the draw order independent of Eigen's storage.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

void hash_matrix(std::uint64_t& h, const Eigen::MatrixXd& m) {
  std::string_view bytes(reinterpret_cast<const char*>(m.data()),
                         sizeof(double) * static_cast<std::size_t>(m.size()));
  h = fnv1a64(bytes, h);
  h = mix_seed(h, static_cast<std::uint64_t>(m.rows() * 131 + m.cols()));
}

// Key rows sorted by (mask, values). Identical rows contribute identical
// terms, so any reordering of the caller's rows yields the same canonical
// matrix and bit-identical sums.
std::vector<Eigen::Index> canonical_key_order(const EncodedSequence& keys) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(keys.length()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    const bool ma = keys.mask[static_cast<std::size_t>(a)];
    const bool mb = keys.mask[static_cast<std::size_t>(b)];
    if (ma != mb) return ma < mb;
    for (Eigen::Index d = 0; d < keys.dim(); ++d) {
      const double x = keys.states(a, d);
      const double y = keys.states(b, d);
      if (x != y) return x < y;
    }
    return false;
  });
  return order;
}

void check_inputs(const EncodedSequence& q, const EncodedSequence& k) {
  if (q.length() < 1 || k.length() < 1) throw ShapeError("attention needs non-empty sequences");
  if (q.dim() != k.dim()) {
    throw DimError("query dim " + std::to_string(q.dim()) + " != key dim " + std::to_string(k.dim()));
  }
  if (static_cast<Eigen::Index>(q.mask.size()) != q.length() ||
      static_cast<Eigen::Index>(k.mask.size()) != k.length()) {
    throw ShapeError("mask length does not match sequence length");
  }
  if (k.active_count() == 0) throw MaskError("every key position is masked");
}

}  // namespace

AdapterParams AdapterParams::zeros(int dim, int heads) {
  if (heads <= 0 || dim <= 0 || dim % heads != 0) {
    throw DimError("dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  AdapterParams p;
  p.heads = heads;
  p.dim = dim;
  const int dh = dim / heads;
  for (int h = 0; h < heads; ++h) {
    p.w_query.push_back(Eigen::MatrixXd::Zero(dim, dh));
    p.w_key.push_back(Eigen::MatrixXd::Zero(dim, dh));
    p.w_value.push_back(Eigen::MatrixXd::Zero(dim, dh));
  }
  p.w_out = Eigen::MatrixXd::Zero(dim, dim);
  return p;
}

AdapterParams AdapterParams::random(int dim, int heads, Rng& rng) {
  AdapterParams p = zeros(dim, heads);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  for (int h = 0; h < heads; ++h) p.w_query[h] = uniform_matrix(dim, p.head_dim(), bound, rng);
  for (int h = 0; h < heads; ++h) p.w_key[h] = uniform_matrix(dim, p.head_dim(), bound, rng);
  for (int h = 0; h < heads; ++h) p.w_value[h] = uniform_matrix(dim, p.head_dim(), bound, rng);
  p.w_out = uniform_matrix(dim, dim, bound, rng);
  return p;
}

std::uint64_t AdapterParams::content_hash() const {
  std::uint64_t h = mix_seed(static_cast<std::uint64_t>(heads), static_cast<std::uint64_t>(dim));
  for (const auto& m : w_query) hash_matrix(h, m);
  for (const auto& m : w_key) hash_matrix(h, m);
  for (const auto& m : w_value) hash_matrix(h, m);
  hash_matrix(h, w_out);
  return h;
}

void AdapterParams::validate() const {
  if (heads <= 0 || dim % heads != 0) throw DimError("dim must be divisible by heads");
  const auto h = static_cast<std::size_t>(heads);
  if (w_query.size() != h || w_key.size() != h || w_value.size() != h) {
    throw DimError("adapter has the wrong number of head projections");
  }
  for (std::size_t i = 0; i < h; ++i) {
    for (const auto* m : {&w_query[i], &w_key[i], &w_value[i]}) {
      if (m->rows() != dim || m->cols() != head_dim()) throw DimError("head projection has the wrong shape");
      if (!m->allFinite()) throw NumericsError("adapter projection has non-finite entries");
    }
  }
  if (w_out.rows() != dim || w_out.cols() != dim) throw DimError("output projection has the wrong shape");
  if (!w_out.allFinite()) throw NumericsError("output projection has non-finite entries");
}

AdaptedOutput attention_forward(const EncodedSequence& query_seq, const EncodedSequence& key_seq,
                                const AdapterParams& params) {
  check_inputs(query_seq, key_seq);
  if (query_seq.dim() != params.dim) {
    throw DimError("sequence dim " + std::to_string(query_seq.dim()) + " != adapter dim " +
                   std::to_string(params.dim));
  }
  params.validate();

  const Eigen::Index tq = query_seq.length();
  const Eigen::Index tk = key_seq.length();
  const int dh = params.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  AdaptedOutput out;
  AttentionCache& cache = out.cache;
  cache.params_hash = params.content_hash();
  cache.query_states = query_seq.states;
  cache.key_order = canonical_key_order(key_seq);
  cache.key_states.resize(tk, key_seq.dim());
  cache.key_mask.resize(static_cast<std::size_t>(tk));
  for (Eigen::Index c = 0; c < tk; ++c) {
    const Eigen::Index src = cache.key_order[static_cast<std::size_t>(c)];
    cache.key_states.row(c) = key_seq.states.row(src);
    cache.key_mask[static_cast<std::size_t>(c)] = key_seq.mask[static_cast<std::size_t>(src)];
  }
  cache.concat.resize(tq, params.dim);

  for (int h = 0; h < params.heads; ++h) {
    Eigen::MatrixXd q = cache.query_states * params.w_query[h];
    Eigen::MatrixXd k = cache.key_states * params.w_key[h];
    Eigen::MatrixXd v = cache.key_states * params.w_value[h];
    Eigen::MatrixXd scores = (q * k.transpose()) * scale;
    Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(tq, tk);
    for (Eigen::Index i = 0; i < tq; ++i) {
      double max_score = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < tk; ++j) {
        if (cache.key_mask[static_cast<std::size_t>(j)]) max_score = std::max(max_score, scores(i, j));
      }
      double sum = 0.0;
      for (Eigen::Index j = 0; j < tk; ++j) {
        if (!cache.key_mask[static_cast<std::size_t>(j)]) continue;
        weights(i, j) = std::exp(scores(i, j) - max_score);
        sum += weights(i, j);
      }
      weights.row(i) /= sum;
    }
    cache.concat.middleCols(h * dh, dh) = weights * v;
    cache.queries.push_back(std::move(q));
    cache.keys.push_back(std::move(k));
    cache.values.push_back(std::move(v));

    Eigen::MatrixXd caller_order(tq, tk);
    for (Eigen::Index c = 0; c < tk; ++c) {
      caller_order.col(cache.key_order[static_cast<std::size_t>(c)]) = weights.col(c);
    }
    out.attention.push_back(std::move(caller_order));
    cache.weights.push_back(std::move(weights));
  }
  out.adapted = cache.concat * params.w_out;
  if (!out.adapted.allFinite()) throw NumericsError("attention output is not finite");
  return out;
}

AdaptedOutput bypass_forward(const EncodedSequence& query_seq, const EncodedSequence& key_seq) {
  check_inputs(query_seq, key_seq);
  AdaptedOutput out;
  AttentionCache& cache = out.cache;
  cache.bypass = true;
  cache.query_states = query_seq.states;
  cache.key_order = canonical_key_order(key_seq);
  cache.key_states.resize(key_seq.length(), key_seq.dim());
  cache.key_mask.resize(static_cast<std::size_t>(key_seq.length()));
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(key_seq.dim());
  for (Eigen::Index c = 0; c < key_seq.length(); ++c) {
    const Eigen::Index src = cache.key_order[static_cast<std::size_t>(c)];
    cache.key_states.row(c) = key_seq.states.row(src);
    cache.key_mask[static_cast<std::size_t>(c)] = key_seq.mask[static_cast<std::size_t>(src)];
    if (cache.key_mask[static_cast<std::size_t>(c)]) mean += cache.key_states.row(c);
  }
  mean /= static_cast<double>(key_seq.active_count());
  out.adapted = mean.replicate(query_seq.length(), 1);
  return out;
}

AdapterGradients attention_backward(const Eigen::MatrixXd& grad_adapted, const AdaptedOutput& out,
                                    const AdapterParams& params) {
  const AttentionCache& cache = out.cache;
  AdapterGradients g;
  const AdapterParams zero = AdapterParams::zeros(params.dim, params.heads);
  g.w_query = zero.w_query;
  g.w_key = zero.w_key;
  g.w_value = zero.w_value;
  g.w_out = zero.w_out;

  if (grad_adapted.rows() != out.adapted.rows() || grad_adapted.cols() != out.adapted.cols()) {
    throw ShapeError("gradient shape does not match the adapted output");
  }
  const Eigen::Index tk = cache.key_states.rows();
  Eigen::MatrixXd grad_keys_canonical = Eigen::MatrixXd::Zero(tk, cache.key_states.cols());
  g.query_states = Eigen::MatrixXd::Zero(cache.query_states.rows(), cache.query_states.cols());

  if (cache.bypass) {
    // Every output row is mean(E_S), so each unmasked key row receives the
    // column sums of the upstream gradient divided by the active count.
    std::size_t active = 0;
    for (bool m : cache.key_mask) active += m ? 1 : 0;
    const Eigen::RowVectorXd total = grad_adapted.colwise().sum() / static_cast<double>(active);
    for (Eigen::Index c = 0; c < tk; ++c) {
      if (cache.key_mask[static_cast<std::size_t>(c)]) grad_keys_canonical.row(c) = total;
    }
  } else {
    if (cache.weights.size() != static_cast<std::size_t>(params.heads) || cache.params_hash != params.content_hash()) {
      throw CacheError("attention cache was produced with different parameters");
    }
    const int dh = params.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    g.w_out = cache.concat.transpose() * grad_adapted;
    const Eigen::MatrixXd grad_concat = grad_adapted * params.w_out.transpose();
    for (int h = 0; h < params.heads; ++h) {
      const auto hs = static_cast<std::size_t>(h);
      const Eigen::MatrixXd grad_head = grad_concat.middleCols(h * dh, dh);
      const Eigen::MatrixXd& weights = cache.weights[hs];
      const Eigen::MatrixXd grad_weights = grad_head * cache.values[hs].transpose();
      const Eigen::MatrixXd grad_values = weights.transpose() * grad_head;
      // Softmax Jacobian row by row: dS = P * (dP - <dP, P>).
      const Eigen::VectorXd inner = (grad_weights.array() * weights.array()).rowwise().sum();
      Eigen::MatrixXd grad_scores =
          (weights.array() * (grad_weights.colwise() - inner).array()).matrix() * scale;
      const Eigen::MatrixXd grad_q = grad_scores * cache.keys[hs];
      const Eigen::MatrixXd grad_k = grad_scores.transpose() * cache.queries[hs];
      g.w_query[hs] = cache.query_states.transpose() * grad_q;
      g.w_key[hs] = cache.key_states.transpose() * grad_k;
      g.w_value[hs] = cache.key_states.transpose() * grad_values;
      g.query_states += grad_q * params.w_query[hs].transpose();
      grad_keys_canonical += grad_k * params.w_key[hs].transpose() + grad_values * params.w_value[hs].transpose();
    }
  }

  g.key_states.resize(tk, cache.key_states.cols());
  for (Eigen::Index c = 0; c < tk; ++c) {
    g.key_states.row(cache.key_order[static_cast<std::size_t>(c)]) = grad_keys_canonical.row(c);
  }
  return g;
}

}  // namespace cbr
