#include "longctx/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "longctx/parallel.hpp"
#include "longctx/rng.hpp"

namespace longctx {

double cross_entropy(std::span<const float> logits, TokenId target) {
  if (target >= logits.size()) {
    throw DataError("target " + std::to_string(target) + " outside vocab of " +
                    std::to_string(logits.size()));
  }
  double hi = -std::numeric_limits<double>::infinity();
  for (float v : logits) hi = std::max(hi, static_cast<double>(v));
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - hi);
  return hi + std::log(sum) - static_cast<double>(logits[target]);
}

PerplexityReport perplexity(const LogitSource& source,
                            std::span<const TokenId> stream,
                            std::span<const std::size_t> lengths,
                            const std::string& mode) {
  PerplexityReport report{mode, {}};
  for (std::size_t length : lengths) {
    if (length < 2) throw ConfigError("perplexity lengths must be at least 2");
    if (stream.size() < length) {
      throw DataError("stream has " + std::to_string(stream.size()) +
                      " tokens, shorter than length " + std::to_string(length));
    }
    // Windows run in parallel; their sums are combined in window order.
    const std::size_t n_windows = stream.size() / length;
    std::vector<double> sums(n_windows, 0.0);
    parallel_for(n_windows, [&](std::size_t w) {
      const auto window = stream.subspan(w * length, length);
      const auto logits = source.logits(window);
      for (std::size_t t = 1; t < length; ++t) {
        sums[w] += cross_entropy(logits.row(t - 1), window[t]);
      }
    });
    double total = 0.0;
    for (double s : sums) total += s;
    const std::size_t count = n_windows * (length - 1);
    const double mean = total / static_cast<double>(count);
    report.points.push_back({length, mean, std::exp(mean), count});
  }
  return report;
}

PasskeyConfig PasskeyConfig::for_vocab(std::size_t vocab_size,
                                       std::size_t length,
                                       std::size_t key_length) {
  if (vocab_size < 5) {
    throw ConfigError("passkey task needs a vocabulary of at least 5 ids");
  }
  PasskeyConfig cfg;
  cfg.length = length;
  cfg.key_length = key_length;
  const std::size_t usable = vocab_size - 3;
  const std::size_t n_key = std::max<std::size_t>(1, usable / 4);
  cfg.key_lo = 3;
  cfg.key_hi = static_cast<TokenId>(3 + n_key);
  cfg.filler_lo = cfg.key_hi;
  cfg.filler_hi = static_cast<TokenId>(vocab_size);
  return cfg;
}

void PasskeyConfig::validate() const {
  if (key_length == 0) throw ConfigError("passkey key length must be positive");
  if (key_lo >= key_hi || filler_lo >= filler_hi) {
    throw ConfigError("passkey key and filler id ranges must be non-empty");
  }
  const bool overlap = key_lo < filler_hi && filler_lo < key_hi;
  auto in_range = [](TokenId v, TokenId lo, TokenId hi) { return v >= lo && v < hi; };
  const TokenId markers[] = {key_begin_marker, key_end_marker, query_marker};
  for (TokenId m : markers) {
    if (in_range(m, key_lo, key_hi) || in_range(m, filler_lo, filler_hi)) {
      throw ConfigError("passkey markers must lie outside the key and filler ranges");
    }
  }
  if (overlap) throw ConfigError("passkey key and filler ranges overlap");
  if (length <= scaffold_length()) {
    throw ConfigError("passkey length " + std::to_string(length) +
                      " leaves no room for filler around " +
                      std::to_string(scaffold_length()) + " scaffold tokens");
  }
}

PasskeyInstance gen_passkey(const PasskeyConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  PasskeyInstance inst;
  inst.seed = seed;
  for (std::size_t i = 0; i < config.key_length; ++i) {
    inst.answer.push_back(
        static_cast<TokenId>(config.key_lo + rng.below(config.key_hi - config.key_lo)));
  }
  const std::size_t filler = config.length - config.scaffold_length();
  const std::size_t before = rng.below(filler + 1);
  auto push_filler = [&](std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      inst.tokens.push_back(static_cast<TokenId>(
          config.filler_lo + rng.below(config.filler_hi - config.filler_lo)));
    }
  };
  push_filler(before);
  inst.tokens.push_back(config.key_begin_marker);
  inst.key_begin = inst.tokens.size();
  inst.tokens.insert(inst.tokens.end(), inst.answer.begin(), inst.answer.end());
  inst.key_end = inst.tokens.size();
  inst.tokens.push_back(config.key_end_marker);
  push_filler(filler - before);
  inst.tokens.push_back(config.query_marker);
  inst.tokens.push_back(config.key_begin_marker);
  return inst;
}

PasskeyScore score_passkey(std::span<const TokenId> generated,
                           const PasskeyInstance& instance) {
  const auto& answer = instance.answer;
  std::size_t prefix = 0;
  while (prefix < answer.size() && prefix < generated.size() &&
         generated[prefix] == answer[prefix]) {
    ++prefix;
  }
  PasskeyScore score;
  score.exact = !answer.empty() && prefix == answer.size();
  score.token_overlap =
      answer.empty() ? 0.0
                     : static_cast<double>(prefix) / static_cast<double>(answer.size());
  return score;
}

std::size_t count_occurrences(std::span<const TokenId> haystack,
                              std::span<const TokenId> needle) {
  if (needle.empty() || needle.size() > haystack.size()) return 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), haystack.begin() + i)) ++count;
  }
  return count;
}

}  // namespace longctx
