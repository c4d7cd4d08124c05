#include "fixtures.hpp"

#include <fstream>
#include <mutex>
#include <random>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include "cbr/hashing.hpp"
#include "cbr/rng.hpp"

namespace cbr::testing {

namespace {

const std::vector<std::vector<std::string>> kVocab = {
    {"apple", "banana", "cherry", "grape", "lemon", "mango", "peach", "plum"},
    {"river", "ocean", "lake", "stream", "pond", "creek", "harbor", "delta"},
    {"iron", "copper", "silver", "gold", "zinc", "tin", "nickel", "cobalt"},
};
const std::vector<std::string> kFiller = {"the", "a", "this", "that", "is", "was", "very", "quite"};

}  // namespace

EncodedSequence random_sequence(Rng& rng, Eigen::Index rows, int dim, double mask_prob) {
  EncodedSequence s;
  s.states.resize(rows, dim);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (int c = 0; c < dim; ++c) s.states(r, c) = rng.uniform(-1.0, 1.0);
  }
  s.mask.assign(static_cast<std::size_t>(rows), true);
  for (std::size_t i = 0; i < s.mask.size(); ++i) s.mask[i] = rng.uniform01() >= mask_prob;
  s.mask[rng.uniform_index(s.mask.size())] = true;
  return s;
}

CaseDatabase vector_database(const std::vector<Eigen::VectorXd>& vectors, std::vector<std::string> ids) {
  auto store = std::make_shared<EmbeddingStore>();
  store->dim = static_cast<std::uint32_t>(vectors.front().size());
  std::vector<Case> cases;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const std::string id = ids.empty() ? "c" + std::to_string(i) : ids[i];
    StoredEmbedding e;
    e.tokens = vectors[i].transpose().cast<float>();
    e.sentence = vectors[i].cast<float>();
    store->records.emplace(id + "#text", e);
    cases.emplace_back(id, "text " + id, label_at(i % kNumLabels));
  }
  CaseDatabase db(cases);
  db.build_index(RepresentationKind::Text, Encoder::file_backed(store));
  return db;
}

std::vector<Case> toy_corpus(std::size_t per_class, std::uint64_t seed, std::string_view id_prefix) {
  Rng rng(seed);
  std::vector<Case> out;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      std::vector<std::string> words;
      for (int w = 0; w < 5; ++w) words.push_back(kVocab[c][rng.uniform_index(kVocab[c].size())]);
      for (int w = 0; w < 2; ++w) words.push_back(kFiller[rng.uniform_index(kFiller.size())]);
      rng.shuffle(std::span(words));
      std::string text;
      for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
      out.emplace_back(std::string(id_prefix) + "-" + std::to_string(c) + "-" + std::to_string(i), text,
                       kToyLabels[c]);
    }
  }
  return out;
}

EncoderPair hashed_encoders(int dim, double position_scale) {
  EncoderSpec spec;
  spec.dim = dim;
  spec.position_scale = position_scale;
  return EncoderPair{Encoder::hashed(spec), Encoder::hashed(spec)};
}

LabelCounts logic_train_counts() { return {185, 144, 109, 110, 32, 89, 80, 101, 102, 132, 87, 281, 92}; }
LabelCounts logic_test_counts() { return {39, 31, 23, 23, 7, 19, 18, 22, 22, 28, 19, 60, 20}; }

std::vector<FallacyLabel> expand_counts(const LabelCounts& counts) {
  std::vector<FallacyLabel> out;
  for (std::size_t c = 0; c < kNumLabels; ++c) out.insert(out.end(), counts[c], label_at(c));
  return out;
}

TempDir::TempDir() {
  static std::atomic<unsigned> counter{0};
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() /
          ("cbr-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
}

std::string stub_response(const std::string& prompt) { return "stub " + sha256_hex(prompt).substr(0, 12); }

struct StubServer::Impl {
  httplib::Server server;
  int port = 0;
  mutable std::mutex mutex;
  std::string authorization;
};

StubServer::StubServer(Responder responder, int fail_first) : impl_(std::make_unique<Impl>()) {
  if (!responder) responder = stub_response;
  auto remaining_failures = std::make_shared<std::atomic<int>>(fail_first);
  impl_->server.Post("/v1/completions", [this, responder, remaining_failures](const httplib::Request& req,
                                                                              httplib::Response& res) {
    ++requests_;
    {
      std::lock_guard lock(impl_->mutex);
      impl_->authorization = req.get_header_value("Authorization");
    }
    if (remaining_failures->fetch_sub(1) > 0) {
      res.status = 503;
      return;
    }
    const auto body = nlohmann::json::parse(req.body);
    const nlohmann::json reply{{"text", responder(body.at("prompt").get<std::string>())}};
    res.set_content(reply.dump(), "application/json");
  });
  impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

StubServer::~StubServer() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

std::string StubServer::endpoint() const {
  return "http://127.0.0.1:" + std::to_string(impl_->port) + "/v1/completions";
}

std::string StubServer::last_authorization() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->authorization;
}

}  // namespace cbr::testing
