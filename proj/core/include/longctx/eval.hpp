#pragma once

// Evaluation mechanics: perplexity versus sequence length, a passkey
// retrieval task over raw token ids, and report serialization.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "longctx/model.hpp"

namespace longctx {

// Anything that maps a token sequence to per-position next-token logits.
class LogitSource {
 public:
  virtual ~LogitSource() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual Matrix<float> logits(std::span<const TokenId> tokens) const = 0;
};

class ModelLogits final : public LogitSource {
 public:
  ModelLogits(const ModelBundle& model, RunMode mode)
      : model_(model), mode_(std::move(mode)) {}
  std::size_t vocab_size() const override { return model_.config.vocab_size; }
  Matrix<float> logits(std::span<const TokenId> tokens) const override {
    return forward(model_, tokens, mode_);
  }

 private:
  const ModelBundle& model_;
  RunMode mode_;
};

// -log softmax(logits)[target], natural log, evaluated in double.
double cross_entropy(std::span<const float> logits, TokenId target);

struct PerplexityPoint {
  std::size_t length = 0;
  double mean_cross_entropy = 0.0;
  double perplexity = 0.0;
  std::size_t token_count = 0;
};

struct PerplexityReport {
  std::string mode;
  std::vector<PerplexityPoint> points;
};

// For each S, the stream is cut into floor(n / S) non-overlapping windows;
// every window is scored with full context, targets at positions 1..S-1.
PerplexityReport perplexity(const LogitSource& source,
                            std::span<const TokenId> stream,
                            std::span<const std::size_t> lengths,
                            const std::string& mode);

struct PasskeyConfig {
  std::size_t length = 0;
  std::size_t key_length = 0;
  TokenId key_begin_marker = 0;
  TokenId key_end_marker = 1;
  TokenId query_marker = 2;
  TokenId key_lo = 3, key_hi = 4;        // key ids, [lo, hi)
  TokenId filler_lo = 4, filler_hi = 5;  // filler ids, [lo, hi)

  // Markers 0..2, key ids from the next quarter of the vocabulary, filler
  // from the rest.
  static PasskeyConfig for_vocab(std::size_t vocab_size, std::size_t length,
                                 std::size_t key_length);
  // Fixed scaffolding around the filler: markers, key and query.
  std::size_t scaffold_length() const noexcept { return key_length + 4; }
  void validate() const;
};

// Layout: filler, KEY_BEGIN, key, KEY_END, filler, QUERY, KEY_BEGIN.
struct PasskeyInstance {
  std::vector<TokenId> tokens;
  std::size_t key_begin = 0;  // [key_begin, key_end) holds the answer
  std::size_t key_end = 0;
  std::vector<TokenId> answer;
  std::uint64_t seed = 0;
};

PasskeyInstance gen_passkey(const PasskeyConfig& config, std::uint64_t seed);

struct PasskeyScore {
  bool exact = false;
  double token_overlap = 0.0;  // longest common prefix / answer length
};

PasskeyScore score_passkey(std::span<const TokenId> generated,
                           const PasskeyInstance& instance);

std::size_t count_occurrences(std::span<const TokenId> haystack,
                              std::span<const TokenId> needle);

struct ReportRow {
  std::string mode;
  std::size_t length = 0;
  std::string metric;
  double value = 0.0;
  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  std::string provenance = "{}";  // JSON object text, emitted in JSON only
};

// Rows "mean_ce", "perplexity", "tokens" per length.
EvalReport to_report(const PerplexityReport& report);

enum class ReportFormat { kCsv, kJson };

ReportFormat parse_report_format(const std::string& name);
std::string report_to_csv(const EvalReport& report);
std::string report_to_json(const EvalReport& report);
EvalReport report_from_csv(const std::string& text);
EvalReport report_from_json(const std::string& text);

void emit_report(const EvalReport& report, const std::filesystem::path& path,
                 ReportFormat format);
EvalReport read_report(const std::filesystem::path& path, ReportFormat format);

}  // namespace longctx
