#include "cbr/encoders.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <numbers>

#include "cbr/errors.hpp"
#include "cbr/hashing.hpp"
#include "cbr/io.hpp"
#include "cbr/rng.hpp"

namespace cbr {

std::size_t EncodedSequence::active_count() const {
  std::size_t n = 0;
  for (bool m : mask) n += m ? 1 : 0;
  return n;
}

void EncodedSequence::validate() const {
  if (states.rows() < 1) throw EncodeError("encoded sequence is empty");
  if (static_cast<Eigen::Index>(mask.size()) != states.rows()) {
    throw EncodeError("mask length does not match sequence length");
  }
  if (active_count() == 0) throw EncodeError("encoded sequence has no unmasked token");
  if (!states.allFinite()) throw EncodeError("encoded sequence has non-finite values");
}

EmbeddingVector normalize(const Eigen::VectorXd& v) {
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw DegenerateVectorError("cannot normalize a zero vector");
  return EmbeddingVector{v / norm, true};
}

std::string_view variant_name(EncoderVariant v) {
  return v == EncoderVariant::HashedNgram ? "hashed_ngram" : "file_backed";
}

EncoderVariant parse_variant(std::string_view raw) {
  if (raw == "hashed_ngram" || raw == "hashed") return EncoderVariant::HashedNgram;
  if (raw == "file_backed" || raw == "file") return EncoderVariant::FileBacked;
  throw ConfigError("unknown encoder variant '" + std::string(raw) + "'");
}

// ---------------------------------------------------------------------------
// Embedding file

namespace {

constexpr char kMagic[4] = {'C', 'B', 'R', 'E'};
constexpr std::uint32_t kVersion = 1;

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) throw FormatError(std::string("truncated embedding file: ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    const std::uint64_t lo = u32(what);
    const std::uint64_t hi = u32(what);
    return lo | (hi << 32);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}
void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

}  // namespace

EmbeddingStore load_embedding_file(const std::filesystem::path& path,
                                   std::optional<std::uint32_t> expected_dim) {
  const std::string data = read_file(path);
  Reader r(data);
  const auto magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad magic in " + path.string());
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) throw FormatError("unsupported embedding file version " + std::to_string(version));
  EmbeddingStore store;
  store.dim = r.u32("dim");
  if (expected_dim && *expected_dim != store.dim) {
    throw FormatError("embedding dim " + std::to_string(store.dim) + " does not match configured " +
                      std::to_string(*expected_dim));
  }
  const std::uint64_t count = r.u64("count");
  if (count > 0 && store.dim == 0) throw FormatError("embedding file declares dim 0");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t id_len = r.u32("id length");
    std::string id(r.bytes(id_len, "id"));
    const std::uint32_t tokens = r.u32("token count");
    const std::uint64_t floats = static_cast<std::uint64_t>(tokens) * store.dim;
    if (floats * 4 > r.remaining()) throw FormatError("truncated embedding file: token states of '" + id + "'");
    StoredEmbedding rec;
    rec.tokens.resize(tokens, store.dim);
    for (std::uint32_t t = 0; t < tokens; ++t) {
      for (std::uint32_t d = 0; d < store.dim; ++d) rec.tokens(t, d) = r.f32("token states");
    }
    const std::uint8_t has_sentence = r.u8("sentence flag");
    if (has_sentence > 1) throw FormatError("invalid sentence flag for '" + id + "'");
    if (has_sentence == 1) {
      Eigen::VectorXf s(store.dim);
      for (std::uint32_t d = 0; d < store.dim; ++d) s(d) = r.f32("sentence vector");
      rec.sentence = std::move(s);
    }
    if (store.records.contains(id)) throw FormatError("duplicate embedding id '" + id + "'");
    store.order.push_back(id);
    store.records.emplace(std::move(id), std::move(rec));
  }
  if (!r.done()) throw FormatError("trailing bytes after " + std::to_string(count) + " records");
  return store;
}

void write_embedding_file(const std::filesystem::path& path, const EmbeddingStore& store) {
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, store.dim);
  put_u64(out, store.order.size());
  for (const auto& id : store.order) {
    const auto& rec = store.records.at(id);
    if (rec.tokens.cols() != static_cast<Eigen::Index>(store.dim)) {
      throw FormatError("record '" + id + "' has wrong dim");
    }
    put_u32(out, static_cast<std::uint32_t>(id.size()));
    out += id;
    put_u32(out, static_cast<std::uint32_t>(rec.tokens.rows()));
    for (Eigen::Index t = 0; t < rec.tokens.rows(); ++t) {
      for (Eigen::Index d = 0; d < rec.tokens.cols(); ++d) put_f32(out, rec.tokens(t, d));
    }
    out.push_back(rec.sentence ? 1 : 0);
    if (rec.sentence) {
      for (Eigen::Index d = 0; d < rec.sentence->size(); ++d) put_f32(out, (*rec.sentence)(d));
    }
  }
  atomic_write(path, out);
}

// ---------------------------------------------------------------------------
// Tokenization and encoding

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    if (text.substr(i).starts_with(kSepToken)) {
      flush();
      tokens.emplace_back(kSepToken);
      i += kSepToken.size();
      continue;
    }
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isalnum(c) || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
    ++i;
  }
  flush();
  return tokens;
}

namespace {

constexpr std::uint64_t kSepSalt = 0x5e9700000000005eULL;

// Deterministic vector in [-1, 1]^dim derived from a 64-bit key.
Eigen::RowVectorXd keyed_vector(std::uint64_t key, int dim) {
  Eigen::RowVectorXd v(dim);
  for (int d = 0; d < dim; ++d) {
    const std::uint64_t bits = mix_seed(key, static_cast<std::uint64_t>(d));
    v(d) = static_cast<double>(bits >> 11) * 0x1.0p-52 - 1.0;
  }
  return v;
}

}  // namespace

Encoder::Encoder(EncoderSpec spec, std::shared_ptr<const EmbeddingStore> store)
    : spec_(std::move(spec)), store_(std::move(store)) {
  if (spec_.dim <= 0) throw ConfigError("encoder dim must be positive");
  if (spec_.variant == EncoderVariant::HashedNgram && spec_.buckets == 0) {
    throw ConfigError("hashed encoder needs at least one bucket");
  }
  Eigen::RowVectorXd sep = keyed_vector(mix_seed(spec_.seed, kSepSalt), spec_.dim);
  sep_ = sep / sep.norm();
}

Encoder Encoder::hashed(EncoderSpec spec) {
  spec.variant = EncoderVariant::HashedNgram;
  return Encoder(std::move(spec), nullptr);
}

Encoder Encoder::file_backed(std::shared_ptr<const EmbeddingStore> store, EncoderSpec spec) {
  if (!store) throw ConfigError("file-backed encoder needs an embedding store");
  spec.variant = EncoderVariant::FileBacked;
  spec.dim = static_cast<int>(store->dim);
  return Encoder(std::move(spec), std::move(store));
}

Encoder Encoder::from_spec(const EncoderSpec& spec) {
  if (spec.variant == EncoderVariant::HashedNgram) return hashed(spec);
  auto store = std::make_shared<EmbeddingStore>(load_embedding_file(spec.embedding_file));
  return file_backed(std::move(store), spec);
}

Eigen::RowVectorXd Encoder::token_vector(std::string_view token) const {
  const std::string padded = "#" + std::string(token) + "#";
  Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(spec_.dim);
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    const std::uint64_t bucket = fnv1a64(std::string_view(padded).substr(i, 3), spec_.seed) % spec_.buckets;
    v += keyed_vector(mix_seed(spec_.seed, bucket), spec_.dim);
  }
  const double norm = v.norm();
  if (!(norm > 0.0)) {
    Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(spec_.dim);
    e(0) = 1.0;
    return e;
  }
  return v / norm;
}

Eigen::RowVectorXd Encoder::position_offset(std::size_t pos) const {
  Eigen::RowVectorXd p = Eigen::RowVectorXd::Zero(spec_.dim);
  if (spec_.position_scale == 0.0) return p;
  const double d = spec_.dim;
  for (int i = 0; i < spec_.dim; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / d);
    const double angle = static_cast<double>(pos) * freq;
    p(i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return p * (spec_.position_scale / std::sqrt(std::max(1.0, d / 2.0)));
}

EncodedSequence Encoder::encode_text(std::string_view text) const {
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw EncodeError("text has no tokens: '" + std::string(text) + "'");
  EncodedSequence seq;
  seq.states.resize(static_cast<Eigen::Index>(tokens.size()), spec_.dim);
  seq.mask.assign(tokens.size(), true);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (tokens[i] == kSepToken) {
      seq.states.row(row) = sep_;
    } else {
      seq.states.row(row) = token_vector(tokens[i]) + position_offset(i);
    }
  }
  return seq;
}

const StoredEmbedding& Encoder::lookup(const std::string& key) const {
  auto it = store_->records.find(key);
  if (it == store_->records.end()) throw MissingEmbeddingError("no stored embedding for '" + key + "'");
  if (it->second.tokens.rows() == 0) throw EncodeError("stored embedding '" + key + "' has no tokens");
  return it->second;
}

EncodedSequence Encoder::encode_tokens(const TextUnit& unit) const {
  if (spec_.variant == EncoderVariant::HashedNgram) return encode_text(unit.text);
  const auto& rec = lookup(unit.key);
  EncodedSequence seq;
  seq.states = rec.tokens.cast<double>();
  seq.mask.assign(static_cast<std::size_t>(seq.states.rows()), true);
  return seq;
}

EmbeddingVector Encoder::sentence_embedding(const TextUnit& unit) const {
  if (spec_.variant == EncoderVariant::FileBacked) {
    const auto& rec = lookup(unit.key);
    if (rec.sentence) return normalize(rec.sentence->cast<double>());
  }
  const EncodedSequence seq = encode_tokens(unit);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(seq.dim());
  for (Eigen::Index t = 0; t < seq.length(); ++t) {
    if (seq.mask[static_cast<std::size_t>(t)]) sum += seq.states.row(t).transpose();
  }
  return normalize(sum / static_cast<double>(seq.active_count()));
}

EncodedSequence Encoder::encode_composed(const TextUnit& query, std::span<const TextUnit> similars,
                                         bool sep_between_cases) const {
  if (spec_.variant == EncoderVariant::HashedNgram) {
    std::string s = query.text;
    for (std::size_t i = 0; i < similars.size(); ++i) {
      s += (i == 0 || sep_between_cases) ? " <SEP> " : " ";
      s += similars[i].text;
    }
    return encode_text(s);
  }
  std::vector<Eigen::MatrixXd> parts;
  parts.push_back(lookup(query.key).tokens.cast<double>());
  for (std::size_t i = 0; i < similars.size(); ++i) {
    if (i == 0 || sep_between_cases) parts.emplace_back(sep_);
    parts.push_back(lookup(similars[i].key).tokens.cast<double>());
  }
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  EncodedSequence seq;
  seq.states.resize(rows, spec_.dim);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    seq.states.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  seq.mask.assign(static_cast<std::size_t>(rows), true);
  return seq;
}

std::string encoder_output_hash(const Encoder& encoder, std::span<const TextUnit> units) {
  Sha256Builder h;
  for (const auto& u : units) {
    const auto seq = encoder.encode_tokens(u);
    h.add_u64(static_cast<std::uint64_t>(seq.states.size()));
    h.add_raw(seq.states.data(), sizeof(double) * static_cast<std::size_t>(seq.states.size()));
    const auto s = encoder.sentence_embedding(u);
    h.add_raw(s.values.data(), sizeof(double) * static_cast<std::size_t>(s.values.size()));
  }
  return h.hex();
}

}  // namespace cbr
