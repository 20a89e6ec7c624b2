#include "fsd/metrics.hpp"

#include "fsd/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fsd {

int class_index(Label label) {
  switch (label) {
    case Label::kBonafide: return 0;
    case Label::kSpoof: return 1;
    default: throw std::invalid_argument("unknown label has no class index");
  }
}

std::string to_string(Label label) {
  switch (label) {
    case Label::kBonafide: return "bonafide";
    case Label::kSpoof: return "spoof";
    default: return "-";
  }
}

Label parse_label(const std::string& text) {
  if (text == "bonafide") return Label::kBonafide;
  if (text == "spoof") return Label::kSpoof;
  if (text == "-") return Label::kUnknown;
  throw DataError("unknown label '" + text + "'");
}

std::vector<RocPoint> roc_sweep(const std::vector<ScoreRecord>& records) {
  std::vector<double> bonafide;
  std::vector<double> spoof;
  for (const auto& r : records) {
    if (!std::isfinite(r.score)) throw DataError("non-finite score for trial " + r.trial_id);
    if (r.label == Label::kBonafide) bonafide.push_back(r.score);
    if (r.label == Label::kSpoof) spoof.push_back(r.score);
  }
  if (bonafide.empty() || spoof.empty()) {
    throw DataError("scoring needs at least one bonafide and one spoof record");
  }
  std::sort(bonafide.begin(), bonafide.end());
  std::sort(spoof.begin(), spoof.end());
  std::vector<double> thresholds;
  thresholds.reserve(bonafide.size() + spoof.size());
  std::merge(bonafide.begin(), bonafide.end(), spoof.begin(), spoof.end(),
             std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double n_bona = static_cast<double>(bonafide.size());
  const double n_spoof = static_cast<double>(spoof.size());
  std::vector<RocPoint> points;
  points.reserve(thresholds.size() + 1);
  std::size_t bona_below = 0;
  std::size_t spoof_below = 0;
  for (double t : thresholds) {
    while (bona_below < bonafide.size() && bonafide[bona_below] < t) ++bona_below;
    while (spoof_below < spoof.size() && spoof[spoof_below] < t) ++spoof_below;
    points.push_back({t, static_cast<double>(bona_below) / n_bona,
                      static_cast<double>(spoof.size() - spoof_below) / n_spoof});
  }
  points.push_back({std::numeric_limits<double>::infinity(), 1.0, 0.0});
  return points;
}

double interpolate_eer(const RocPoint& lo, const RocPoint& hi) {
  const double d_lo = lo.p_miss - lo.p_fa;
  const double d_hi = hi.p_miss - hi.p_fa;
  const double t = -d_lo / (d_hi - d_lo);
  return lo.p_miss + t * (hi.p_miss - lo.p_miss);
}

EerResult compute_eer(const std::vector<ScoreRecord>& records) {
  const std::vector<RocPoint> points = roc_sweep(records);
  // points[0] has p_miss = 0 and p_fa = 1, so the crossing index is >= 1.
  std::size_t j = 0;
  while (points[j].p_miss < points[j].p_fa) ++j;
  EerResult result;
  result.threshold = std::isfinite(points[j].threshold) ? points[j].threshold
                                                        : points[points.size() - 2].threshold;
  if (points[j].p_miss == points[j].p_fa) {
    result.eer = points[j].p_miss;
  } else {
    result.eer = interpolate_eer(points[j - 1], points[j]);
  }
  return result;
}

void TDcfCostModel::validate() const {
  for (double p : {p_target, p_nontarget, p_spoof}) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("t-DCF priors must lie in (0, 1)");
  }
  if (std::abs(p_target + p_nontarget + p_spoof - 1.0) > 1e-9) {
    throw ConfigError("t-DCF priors must sum to 1");
  }
  for (double c : {c_miss_asv, c_fa_asv, c_miss_cm, c_fa_cm}) {
    if (!(c > 0.0)) throw ConfigError("t-DCF costs must be positive");
  }
  for (double e : {p_miss_asv, p_fa_asv, p_miss_spoof_asv}) {
    if (!(e >= 0.0 && e <= 1.0)) throw ConfigError("ASV error rates must lie in [0, 1]");
  }
  if (!(c1() > 0.0) || !(c2() > 0.0)) {
    throw ConfigError("degenerate t-DCF cost model (C1 = " + std::to_string(c1()) +
                      ", C2 = " + std::to_string(c2()) + ")");
  }
}

double TDcfCostModel::c1() const {
  return p_target * (c_miss_cm - c_miss_asv * p_miss_asv) - p_nontarget * c_fa_asv * p_fa_asv;
}

double TDcfCostModel::c2() const { return c_fa_cm * p_spoof * (1.0 - p_miss_spoof_asv); }

double TDcfCostModel::default_cost() const { return std::min(c1(), c2()); }

TDcfResult compute_min_tdcf(const std::vector<ScoreRecord>& records, const TDcfCostModel& cost) {
  cost.validate();
  const double c1 = cost.c1();
  const double c2 = cost.c2();
  const double norm = cost.default_cost();
  TDcfResult best{std::numeric_limits<double>::infinity(), 0.0};
  const std::vector<RocPoint> points = roc_sweep(records);
  for (const auto& p : points) {
    const double value = (c1 * p.p_miss + c2 * p.p_fa) / norm;
    if (value < best.min_tdcf) best = {value, p.threshold};
  }
  return best;
}

void set_asv_operating_point(TDcfCostModel& cost, const std::filesystem::path& asv_scores) {
  std::ifstream in(asv_scores);
  if (!in) throw DataError("cannot open ASV score file " + asv_scores.string());
  std::vector<ScoreRecord> target_vs_non;
  std::vector<double> target;
  std::vector<double> nontarget;
  std::vector<double> spoof;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::string source;
    std::string key;
    std::string score_text;
    if (!(fields >> source)) continue;
    if (!(fields >> key >> score_text)) {
      throw DataError(asv_scores.string() + ":" + std::to_string(line_no) +
                      ": expected 'source key score'");
    }
    double score = 0.0;
    const auto [ptr, ec] =
        std::from_chars(score_text.data(), score_text.data() + score_text.size(), score);
    if (ec != std::errc() || ptr != score_text.data() + score_text.size()) {
      throw DataError(asv_scores.string() + ":" + std::to_string(line_no) + ": bad score");
    }
    if (key == "target") {
      target.push_back(score);
      target_vs_non.push_back({source, Label::kBonafide, score});
    } else if (key == "nontarget") {
      nontarget.push_back(score);
      target_vs_non.push_back({source, Label::kSpoof, score});
    } else if (key == "spoof") {
      spoof.push_back(score);
    } else {
      throw DataError(asv_scores.string() + ":" + std::to_string(line_no) + ": unknown key '" +
                      key + "'");
    }
  }
  if (spoof.empty()) throw DataError("ASV score file has no spoof trials");
  const double threshold = compute_eer(target_vs_non).threshold;
  auto fraction = [](const std::vector<double>& v, auto pred) {
    return static_cast<double>(std::count_if(v.begin(), v.end(), pred)) /
           static_cast<double>(v.size());
  };
  cost.p_fa_asv = fraction(nontarget, [&](double s) { return s >= threshold; });
  cost.p_miss_asv = fraction(target, [&](double s) { return s < threshold; });
  cost.p_miss_spoof_asv = fraction(spoof, [&](double s) { return s < threshold; });
}

namespace {

std::string format_score(double score) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), score);
  return std::string(buf, ptr);
}

}  // namespace

void write_score_file(const std::filesystem::path& path, std::vector<ScoreRecord> records) {
  std::stable_sort(records.begin(), records.end(), [](const ScoreRecord& a, const ScoreRecord& b) {
    return a.trial_id < b.trial_id;
  });
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write score file " + path.string());
  out << "# trial_id\tlabel\tscore (higher = bonafide)\n";
  out << "# EER: ROC crossing interpolated between consecutive thresholds; "
         "accept when score >= threshold\n";
  for (const auto& r : records) {
    out << r.trial_id << '\t' << to_string(r.label) << '\t' << format_score(r.score) << '\n';
  }
  if (!out) throw DataError("failed writing score file " + path.string());
}

std::vector<ScoreRecord> parse_score_text(const std::string& text) {
  std::vector<ScoreRecord> records;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos || line.find('\t', tab2 + 1) != std::string::npos) {
      throw DataError("line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    ScoreRecord r;
    r.trial_id = line.substr(0, tab1);
    if (r.trial_id.empty()) throw DataError("line " + std::to_string(line_no) + ": empty trial id");
    try {
      r.label = parse_label(line.substr(tab1 + 1, tab2 - tab1 - 1));
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    const std::string score_text = line.substr(tab2 + 1);
    const auto [ptr, ec] =
        std::from_chars(score_text.data(), score_text.data() + score_text.size(), r.score);
    if (ec != std::errc() || ptr != score_text.data() + score_text.size() || score_text.empty() ||
        !std::isfinite(r.score)) {
      throw DataError("line " + std::to_string(line_no) + ": invalid score '" + score_text + "'");
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<ScoreRecord> read_score_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open score file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_score_text(buffer.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace fsd
