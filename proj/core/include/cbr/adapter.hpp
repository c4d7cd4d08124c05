#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "cbr/encoders.hpp"

namespace cbr {

class Rng;

/// Per-head query/key/value projections (D x D/H) and the D x D output
/// projection. No biases.
struct AdapterParams {
  int heads = 8;
  int dim = 64;
  std::vector<Eigen::MatrixXd> w_query;
  std::vector<Eigen::MatrixXd> w_key;
  std::vector<Eigen::MatrixXd> w_value;
  Eigen::MatrixXd w_out;

  int head_dim() const { return dim / heads; }

  /// Zero-filled parameters of the right shapes. Throws DimError when dim is
  /// not divisible by heads.
  static AdapterParams zeros(int dim, int heads);

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static AdapterParams random(int dim, int heads, Rng& rng);

  /// Content hash of every entry; ties a forward cache to its parameters.
  std::uint64_t content_hash() const;

  void validate() const;
};

/// Intermediates kept by attention_forward for the backward pass. Keys are
/// held in a canonical row order (lexicographic on (mask, E_S row)) so that
/// sums over keys do not depend on the caller's row order.
struct AttentionCache {
  std::uint64_t params_hash = 0;
  bool bypass = false;
  Eigen::MatrixXd query_states;     // E_C
  Eigen::MatrixXd key_states;       // E_S, canonical order
  std::vector<bool> key_mask;       // canonical order
  std::vector<Eigen::Index> key_order;  // canonical row -> caller row
  std::vector<Eigen::MatrixXd> queries, keys, values, weights;  // per head
  Eigen::MatrixXd concat;           // T_C x D, heads side by side
};

struct AdaptedOutput {
  Eigen::MatrixXd adapted;                // T_C x D
  std::vector<Eigen::MatrixXd> attention; // per head, T_C x T_S, caller order
  AttentionCache cache;
};

struct AdapterGradients {
  std::vector<Eigen::MatrixXd> w_query;
  std::vector<Eigen::MatrixXd> w_key;
  std::vector<Eigen::MatrixXd> w_value;
  Eigen::MatrixXd w_out;
  Eigen::MatrixXd query_states;  // dL/dE_C, diagnostics only
  Eigen::MatrixXd key_states;    // dL/dE_S, caller row order
};

/// Multi-head cross attention: queries from E_C, keys and values from E_S,
/// softmax(QK^T / sqrt(D/H)) over unmasked keys, heads concatenated and
/// projected by W_O.
AdaptedOutput attention_forward(const EncodedSequence& query_seq,
                                const EncodedSequence& key_seq,
                                const AdapterParams& params);

/// Attention disabled: every output row is the masked mean of E_S.
AdaptedOutput bypass_forward(const EncodedSequence& query_seq,
                             const EncodedSequence& key_seq);

/// Exact reverse-mode gradients of attention_forward. Throws CacheError when
/// out was produced with different parameters.
AdapterGradients attention_backward(const Eigen::MatrixXd& grad_adapted,
                                    const AdaptedOutput& out,
                                    const AdapterParams& params);

}  // namespace cbr
