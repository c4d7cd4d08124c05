#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "cbr/corpus.hpp"
#include "cbr/encoders.hpp"
#include "cbr/labels.hpp"
#include "cbr/rng.hpp"
#include "cbr/training.hpp"

namespace cbr::testing {

/// The three classes of the toy corpus.
inline constexpr FallacyLabel kToyLabels[3] = {FallacyLabel::AdHominem, FallacyLabel::FalseDilemma,
                                               FallacyLabel::Equivocation};

/// Three classes, each drawing its content words from its own vocabulary,
/// plus shared filler words. Ids are "toy-<class>-<i>".
std::vector<Case> toy_corpus(std::size_t per_class, std::uint64_t seed, std::string_view id_prefix = "toy");

/// Uniform [-1, 1] states; each row is masked with probability mask_prob,
/// keeping at least one row active.
EncodedSequence random_sequence(Rng& rng, Eigen::Index rows, int dim, double mask_prob = 0.0);

/// Database whose Text index holds exactly the given vectors, through a
/// file-backed encoder with one sentence vector per case. Ids default to
/// "c<i>"; labels cycle through the 13 classes.
CaseDatabase vector_database(const std::vector<Eigen::VectorXd>& vectors, std::vector<std::string> ids = {});

/// Hashed encoder pair sharing one spec.
EncoderPair hashed_encoders(int dim, double position_scale = 0.1);

/// LOGIC class counts, canonical label order.
LabelCounts logic_train_counts();
LabelCounts logic_test_counts();

/// One gold label per test case, grouped by class.
std::vector<FallacyLabel> expand_counts(const LabelCounts& counts);

/// Fresh directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

void write_text(const std::filesystem::path& path, const std::string& content);

/// Local completion endpoint speaking {"prompt"} -> {"text"}. The default
/// responder returns a fixed function of the prompt.
class StubServer {
 public:
  using Responder = std::function<std::string(const std::string& prompt)>;

  explicit StubServer(Responder responder = {}, int fail_first = 0);
  ~StubServer();
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  std::string endpoint() const;
  std::size_t requests() const { return requests_.load(); }
  std::string last_authorization() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::atomic<std::size_t> requests_{0};
  std::thread thread_;
};

/// Response used by the default stub responder.
std::string stub_response(const std::string& prompt);

}  // namespace cbr::testing
