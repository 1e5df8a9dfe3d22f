#include "embeval/records.hpp"

#include <stdexcept>

#include "json.hpp"

namespace embeval {

using nlohmann::json;

std::string_view to_string(AdaptMode mode) {
  switch (mode) {
    case AdaptMode::ZeroShot: return "zeroshot";
    case AdaptMode::LinearProbe: return "lp";
    case AdaptMode::FineTuneProjection: return "ft-proj";
    case AdaptMode::FineTuneAdaptor: return "ft-adaptor";
  }
  return "?";
}

AdaptMode parse_adapt_mode(std::string_view text) {
  if (text == "zeroshot") return AdaptMode::ZeroShot;
  if (text == "lp") return AdaptMode::LinearProbe;
  if (text == "ft-proj") return AdaptMode::FineTuneProjection;
  if (text == "ft-adaptor") return AdaptMode::FineTuneAdaptor;
  throw std::invalid_argument("unknown adaptation mode '" + std::string(text) + "'");
}

std::string RunRecord::key() const {
  return archive + "|" + mode + "|" + init + "|" + knowledge + "|" + shots + "|" + std::to_string(seed);
}

std::string RunRecord::setting() const { return mode + "|" + init + "|" + knowledge + "|" + shots; }

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_optional(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

}  // namespace

std::string to_json_line(const RunRecord& r) {
  json j = {
      {"archive", r.archive},
      {"dataset", r.dataset},
      {"mode", r.mode},
      {"init", r.init},
      {"knowledge", r.knowledge},
      {"shots", r.shots},
      {"seed", r.seed},
      {"optimizer", r.optimizer},
      {"control", r.control},
      {"metric_kind", r.metric_kind},
      {"chosen_lr", optional_number(r.chosen_lr)},
      {"chosen_wd", optional_number(r.chosen_wd)},
      {"search_score", optional_number(r.search_score)},
      {"val_trace", r.val_trace},
      {"final_trace", r.final_trace},
      {"epochs_run", r.epochs_run},
      {"train_size", r.train_size},
      {"val_size", r.val_size},
      {"final_on_train_val", r.final_on_train_val},
      {"status", r.status},
      {"diagnostic", r.diagnostic},
      {"test_metric", r.test_metric},
      {"wall_clock_s", r.wall_clock_s},
  };
  return j.dump();
}

RunRecord parse_json_line(std::string_view line) {
  try {
    const auto j = json::parse(line);
    RunRecord r;
    r.archive = j.at("archive").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.init = j.at("init").get<std::string>();
    r.knowledge = j.at("knowledge").get<std::string>();
    r.shots = j.at("shots").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.optimizer = j.at("optimizer").get<std::string>();
    r.control = j.at("control").get<std::string>();
    r.metric_kind = j.at("metric_kind").get<std::string>();
    r.chosen_lr = read_optional(j, "chosen_lr");
    r.chosen_wd = read_optional(j, "chosen_wd");
    r.search_score = read_optional(j, "search_score");
    r.val_trace = j.at("val_trace").get<std::vector<double>>();
    r.final_trace = j.at("final_trace").get<std::vector<double>>();
    r.epochs_run = j.at("epochs_run").get<std::size_t>();
    r.train_size = j.at("train_size").get<std::size_t>();
    r.val_size = j.at("val_size").get<std::size_t>();
    r.final_on_train_val = j.at("final_on_train_val").get<bool>();
    r.status = j.at("status").get<std::string>();
    r.diagnostic = j.at("diagnostic").get<std::string>();
    r.test_metric = j.at("test_metric").get<double>();
    r.wall_clock_s = j.at("wall_clock_s").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw std::invalid_argument(e.what());
  }
}

}  // namespace embeval
