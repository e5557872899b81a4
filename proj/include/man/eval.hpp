#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "man/io.hpp"
#include "man/video.hpp"

namespace man {

struct Interval {
  double start_seconds = 0.0;
  double end_seconds = 0.0;

  double length() const { return end_seconds - start_seconds; }
  bool operator==(const Interval&) const = default;
};

// |a ∩ b| / |a ∪ b|; both intervals must satisfy start < end.
double temporal_iou(const Interval& a, const Interval& b);

struct ScoredMoment {
  Interval interval;
  double score = 0.0;
};

// Moments sorted by score, highest first; ties keep enumeration order.
struct RankedPrediction {
  std::string query_id;
  std::vector<ScoredMoment> ranked;
};

RankedPrediction rank_moments(std::string query_id, std::span<const CandidateMoment> moments,
                              std::span<const double> scores);

struct RetrievalReport {
  std::string protocol;
  std::vector<std::pair<std::string, double>> metrics;  // rates in [0, 1]
  std::size_t query_count = 0;

  double metric(const std::string& name) const;
};

// Rank@1, Rank@5 (exact span match against the 21 canonical spans) and mIoU
// of the top-1 prediction. `gts[i]` belongs to `preds[i]`.
RetrievalReport eval_didemo(std::span<const RankedPrediction> preds, std::span<const Interval> gts,
                            double segment_seconds = 5.0, std::size_t segments = 6);

inline constexpr std::size_t kDefaultN[] = {1, 5};
inline constexpr double kDefaultM[] = {0.5, 0.7};

// R@n,IoU@m: share of queries with a top-n prediction of IoU > m.
RetrievalReport eval_r_at_n(std::span<const RankedPrediction> preds, std::span<const Interval> gts,
                            std::span<const std::size_t> n_list = kDefaultN,
                            std::span<const double> m_list = kDefaultM);

// Table layout with percentages at two decimals.
std::string format_report(const RetrievalReport& report, const std::string& method = "MAN");
json report_to_json(const RetrievalReport& report);
RetrievalReport report_from_json(const json& j);

// Predictions file: one {query_id, ranked: [{start_seconds, end_seconds, score}]} per line.
void save_predictions(const std::filesystem::path& path, std::span<const RankedPrediction> preds);
std::vector<RankedPrediction> load_predictions(const std::filesystem::path& path);

}  // namespace man
