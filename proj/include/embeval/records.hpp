#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace embeval {

enum class AdaptMode { ZeroShot, LinearProbe, FineTuneProjection, FineTuneAdaptor };

std::string_view to_string(AdaptMode mode);
AdaptMode parse_adapt_mode(std::string_view text);  // zeroshot | lp | ft-proj | ft-adaptor

/// One evaluated run. Strings hold the canonical CLI spellings.
struct RunRecord {
  std::string archive;  // archive path as given; part of the run key
  std::string dataset;
  std::string mode;
  std::string init;
  std::string knowledge;
  std::string shots;  // "0", "5", ..., "full"
  std::uint64_t seed = 0;

  std::string optimizer;
  std::string control;
  std::string metric_kind;
  std::optional<double> chosen_lr;
  std::optional<double> chosen_wd;
  std::optional<double> search_score;
  std::vector<double> val_trace;    // chosen cell, search stage
  std::vector<double> final_trace;  // final run, plateau control only
  std::size_t epochs_run = 0;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  bool final_on_train_val = false;  // final run trained on train + val

  std::string status = "ok";  // ok | failed
  std::string diagnostic;
  double test_metric = 0.0;
  double wall_clock_s = 0.0;

  bool operator==(const RunRecord&) const = default;

  /// archive|mode|init|knowledge|shots|seed
  std::string key() const;
  /// mode|init|knowledge|shots, the report column grouping.
  std::string setting() const;
};

/// One JSON object per line; keys sorted, numbers in shortest round-trip form.
std::string to_json_line(const RunRecord& record);
RunRecord parse_json_line(std::string_view line);  // throws std::invalid_argument

}  // namespace embeval
