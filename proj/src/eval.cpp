#include "man/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "man/errors.hpp"

namespace man {

namespace {

void require_valid(const Interval& i, const char* what) {
  if (!(i.start_seconds < i.end_seconds) || !std::isfinite(i.start_seconds) ||
      !std::isfinite(i.end_seconds)) {
    throw InputError(fmt::format("{}: invalid interval [{}, {})", what, i.start_seconds, i.end_seconds));
  }
}

void require_paired(std::span<const RankedPrediction> preds, std::span<const Interval> gts) {
  if (preds.empty()) throw InputError("no queries");
  if (preds.size() != gts.size()) {
    throw InputError(fmt::format("{} predictions for {} ground truths", preds.size(), gts.size()));
  }
}

bool near(double a, double b) { return std::abs(a - b) <= 1e-6; }

std::string percent(double rate) { return fmt::format("{:.2f}", 100.0 * rate); }

}  // namespace

double temporal_iou(const Interval& a, const Interval& b) {
  require_valid(a, "temporal_iou");
  require_valid(b, "temporal_iou");
  const double inter = std::max(0.0, std::min(a.end_seconds, b.end_seconds) -
                                         std::max(a.start_seconds, b.start_seconds));
  const double uni = a.length() + b.length() - inter;
  return inter / uni;
}

RankedPrediction rank_moments(std::string query_id, std::span<const CandidateMoment> moments,
                              std::span<const double> scores) {
  if (moments.size() != scores.size()) {
    throw DimensionError(fmt::format("rank_moments: {} moments, {} scores", moments.size(), scores.size()));
  }
  std::vector<std::size_t> order(moments.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RankedPrediction out{std::move(query_id), {}};
  out.ranked.reserve(order.size());
  for (std::size_t i : order) {
    out.ranked.push_back({{moments[i].start_seconds, moments[i].end_seconds}, scores[i]});
  }
  return out;
}

double RetrievalReport::metric(const std::string& name) const {
  for (const auto& [key, value] : metrics) {
    if (key == name) return value;
  }
  throw InputError("report has no metric '" + name + "'");
}

RetrievalReport eval_didemo(std::span<const RankedPrediction> preds, std::span<const Interval> gts,
                            double segment_seconds, std::size_t segments) {
  require_paired(preds, gts);
  auto canonical = [&](const Interval& i) {
    const double a = i.start_seconds / segment_seconds;
    const double b = i.end_seconds / segment_seconds;
    return near(a, std::round(a)) && near(b, std::round(b)) && std::round(a) >= 0.0 &&
           std::round(a) < std::round(b) && std::round(b) <= static_cast<double>(segments);
  };
  double hits1 = 0.0, hits5 = 0.0, iou_total = 0.0;
  for (std::size_t q = 0; q < preds.size(); ++q) {
    const auto& ranked = preds[q].ranked;
    if (ranked.empty()) throw InputError("query " + preds[q].query_id + " has no ranked moments");
    if (!canonical(gts[q])) {
      throw InputError(fmt::format("ground truth [{}, {}) of query {} is not a canonical span",
                                   gts[q].start_seconds, gts[q].end_seconds, preds[q].query_id));
    }
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      const Interval& i = ranked[r].interval;
      if (!canonical(i)) {
        throw InputError(fmt::format("prediction [{}, {}) of query {} is not a canonical span",
                                     i.start_seconds, i.end_seconds, preds[q].query_id));
      }
      const bool match = near(i.start_seconds, gts[q].start_seconds) && near(i.end_seconds, gts[q].end_seconds);
      if (match && r < 1) hits1 += 1.0;
      if (match && r < 5) hits5 += 1.0;
    }
    iou_total += temporal_iou(ranked.front().interval, gts[q]);
  }
  const double n = static_cast<double>(preds.size());
  return RetrievalReport{"didemo", {{"Rank@1", hits1 / n}, {"Rank@5", hits5 / n}, {"mIoU", iou_total / n}},
                         preds.size()};
}

RetrievalReport eval_r_at_n(std::span<const RankedPrediction> preds, std::span<const Interval> gts,
                            std::span<const std::size_t> n_list, std::span<const double> m_list) {
  require_paired(preds, gts);
  RetrievalReport report{"r_at_n", {}, preds.size()};
  for (std::size_t n : n_list) {
    for (double m : m_list) {
      std::size_t hits = 0;
      for (std::size_t q = 0; q < preds.size(); ++q) {
        const auto& ranked = preds[q].ranked;
        const std::size_t top = std::min(n, ranked.size());
        for (std::size_t r = 0; r < top; ++r) {
          if (temporal_iou(ranked[r].interval, gts[q]) > m) {
            ++hits;
            break;
          }
        }
      }
      report.metrics.emplace_back(fmt::format("R@{},IoU={}", n, m),
                                  static_cast<double>(hits) / static_cast<double>(preds.size()));
    }
  }
  return report;
}

std::string format_report(const RetrievalReport& report, const std::string& method) {
  if (report.query_count == 0) throw InputError("no queries");
  std::size_t method_width = std::max<std::size_t>(method.size(), 6);
  std::ostringstream os;
  os << fmt::format("{:<{}}", "Method", method_width);
  for (const auto& [name, value] : report.metrics) os << " | " << fmt::format("{:>8}", name);
  os << '\n' << std::string(method_width, '-');
  for (const auto& [name, value] : report.metrics) os << "-+-" << std::string(std::max<std::size_t>(8, name.size()), '-');
  os << '\n' << fmt::format("{:<{}}", method, method_width);
  for (const auto& [name, value] : report.metrics) {
    os << " | " << fmt::format("{:>{}}", percent(value), std::max<std::size_t>(8, name.size()));
  }
  os << '\n' << fmt::format("({} queries, protocol {})\n", report.query_count, report.protocol);
  return os.str();
}

json report_to_json(const RetrievalReport& report) {
  json metrics = json::array();
  for (const auto& [name, value] : report.metrics) {
    metrics.push_back({{"name", name}, {"value", value}, {"percent", percent(value)}});
  }
  return {{"protocol", report.protocol}, {"query_count", report.query_count}, {"metrics", metrics}};
}

RetrievalReport report_from_json(const json& j) {
  const std::string ctx = "report";
  RetrievalReport r;
  r.protocol = require_field<std::string>(j, "protocol", ctx);
  r.query_count = require_field<std::size_t>(j, "query_count", ctx);
  for (const auto& m : require_field<json>(j, "metrics", ctx)) {
    r.metrics.emplace_back(require_field<std::string>(m, "name", ctx), require_field<double>(m, "value", ctx));
  }
  return r;
}

void save_predictions(const std::filesystem::path& path, std::span<const RankedPrediction> preds) {
  std::ostringstream os;
  for (const auto& p : preds) {
    json ranked = json::array();
    for (const auto& m : p.ranked) {
      ranked.push_back({{"start_seconds", m.interval.start_seconds},
                        {"end_seconds", m.interval.end_seconds},
                        {"score", m.score}});
    }
    os << json{{"query_id", p.query_id}, {"ranked", ranked}}.dump() << '\n';
  }
  write_file_atomic(path, os.str());
}

std::vector<RankedPrediction> load_predictions(const std::filesystem::path& path) {
  std::vector<RankedPrediction> out;
  for (const json& row : read_jsonl(path)) {
    const std::string ctx = path.string();
    RankedPrediction p;
    p.query_id = require_field<std::string>(row, "query_id", ctx);
    for (const auto& m : require_field<json>(row, "ranked", ctx)) {
      p.ranked.push_back({{require_field<double>(m, "start_seconds", ctx), require_field<double>(m, "end_seconds", ctx)},
                          require_field<double>(m, "score", ctx)});
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace man
