#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cbr {

/// Token-level hidden states, one row per token.
struct EncodedSequence {
  Eigen::MatrixXd states;
  std::vector<bool> mask;  // true = real token

  Eigen::Index length() const { return states.rows(); }
  Eigen::Index dim() const { return states.cols(); }
  std::size_t active_count() const;

  /// Throws EncodeError unless T >= 1, one mask entry is set and every value
  /// is finite.
  void validate() const;
};

struct EmbeddingVector {
  Eigen::VectorXd values;
  bool normalized = false;
};

/// Returns a copy scaled to unit L2 norm. Throws DegenerateVectorError on a
/// zero vector.
EmbeddingVector normalize(const Eigen::VectorXd& v);

inline constexpr std::string_view kSepToken = "<SEP>";

enum class EncoderVariant { HashedNgram, FileBacked };

struct EncoderSpec {
  EncoderVariant variant = EncoderVariant::HashedNgram;
  int dim = 64;
  std::uint64_t buckets = 1u << 18;
  std::uint64_t seed = 0x5eedULL;
  /// Scale of the sinusoidal position offset added to every non-SEP row.
  /// Zero disables positions.
  double position_scale = 0.1;
  std::filesystem::path embedding_file;  // FileBacked only
};

std::string_view variant_name(EncoderVariant v);
EncoderVariant parse_variant(std::string_view raw);

/// Stored encodings of one text unit, keyed by "<case_id>#<kind>".
struct StoredEmbedding {
  Eigen::MatrixXf tokens;  // token_count x dim
  std::optional<Eigen::VectorXf> sentence;
};

struct EmbeddingStore {
  std::uint32_t dim = 0;
  std::unordered_map<std::string, StoredEmbedding> records;
  std::vector<std::string> order;  // file order
};

/// Reads the "CBRE" binary embedding file. expected_dim, when given, must
/// match the header. Throws FormatError on any structural problem.
EmbeddingStore load_embedding_file(const std::filesystem::path& path,
                                   std::optional<std::uint32_t> expected_dim = std::nullopt);

void write_embedding_file(const std::filesystem::path& path,
                          const EmbeddingStore& store);

/// Lowercased word tokens; whitespace and punctuation split and are dropped.
/// The literal "<SEP>" survives as its own token.
std::vector<std::string> tokenize(std::string_view text);

/// Something to encode. File-backed encoders look up `key`; hashed encoders
/// read `text`.
struct TextUnit {
  std::string key;
  std::string text;
};

/// Frozen text encoder. Immutable after construction and safe to share
/// across threads.
class Encoder {
 public:
  static Encoder hashed(EncoderSpec spec);
  static Encoder file_backed(std::shared_ptr<const EmbeddingStore> store,
                             EncoderSpec spec = {});

  /// Builds from a spec, loading the embedding file for FileBacked.
  static Encoder from_spec(const EncoderSpec& spec);

  const EncoderSpec& spec() const { return spec_; }
  int dim() const { return spec_.dim; }

  EncodedSequence encode_tokens(const TextUnit& unit) const;
  EmbeddingVector sentence_embedding(const TextUnit& unit) const;

  /// Encodes C <SEP> S1 S2 ... (or with <SEP> between every case). Hashed
  /// encoders encode the composed string; file-backed encoders concatenate
  /// the stored matrices around reserved separator rows.
  EncodedSequence encode_composed(const TextUnit& query,
                                  std::span<const TextUnit> similars,
                                  bool sep_between_cases) const;

  /// Unit vector of the reserved <SEP> token.
  const Eigen::RowVectorXd& sep_vector() const { return sep_; }

  /// Unit-norm hashed character-trigram vector for one token, before any
  /// position offset.
  Eigen::RowVectorXd token_vector(std::string_view token) const;

  /// Sinusoidal offset for position `pos` (already scaled).
  Eigen::RowVectorXd position_offset(std::size_t pos) const;

 private:
  Encoder(EncoderSpec spec, std::shared_ptr<const EmbeddingStore> store);

  EncodedSequence encode_text(std::string_view text) const;
  const StoredEmbedding& lookup(const std::string& key) const;

  EncoderSpec spec_;
  std::shared_ptr<const EmbeddingStore> store_;
  Eigen::RowVectorXd sep_;
};

/// Hash over the encoder outputs for a list of texts; used to verify that
/// training never mutates encoders.
std::string encoder_output_hash(const Encoder& encoder,
                                std::span<const TextUnit> units);

}  // namespace cbr
