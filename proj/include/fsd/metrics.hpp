#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace fsd {

enum class Label { kBonafide, kSpoof, kUnknown };

// Class index on the network output: bonafide 0, spoof 1.
int class_index(Label label);
std::string to_string(Label label);
Label parse_label(const std::string& text);  // "bonafide", "spoof" or "-"

// Countermeasure output for one trial; higher scores mean more bonafide.
struct ScoreRecord {
  std::string trial_id;
  Label label = Label::kUnknown;
  double score = 0.0;

  bool operator==(const ScoreRecord&) const = default;
};

// Countermeasure error rates at threshold t: bonafide scored below t are
// misses, spoofs scored at or above t are false alarms.
struct RocPoint {
  double threshold;
  double p_miss;
  double p_fa;
};

// One point per distinct score (ascending) plus a final point above every
// score (p_miss = 1, p_fa = 0, threshold = +inf). Unknown labels are ignored.
std::vector<RocPoint> roc_sweep(const std::vector<ScoreRecord>& records);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Equal error rate from the first sweep point with p_miss >= p_fa, linearly
// interpolated with its predecessor along the ROC. Reported threshold is the
// score at that first point (the largest finite score when it is the final
// point).
EerResult compute_eer(const std::vector<ScoreRecord>& records);

// Interpolated crossing of two consecutive ROC points (lo has p_miss < p_fa).
double interpolate_eer(const RocPoint& lo, const RocPoint& hi);

// Tandem detection cost model. Defaults are the ASVspoof 2019 evaluation
// constants with an error-free ASV operating point.
struct TDcfCostModel {
  double p_target = 0.95 * 0.99;
  double p_nontarget = 0.95 * 0.01;
  double p_spoof = 0.05;
  double c_miss_asv = 1.0;
  double c_fa_asv = 10.0;
  double c_miss_cm = 1.0;
  double c_fa_cm = 10.0;
  double p_miss_asv = 0.0;
  double p_fa_asv = 0.0;
  double p_miss_spoof_asv = 0.0;

  void validate() const;
  // C1 weighs CM misses, C2 CM false alarms.
  double c1() const;
  double c2() const;
  // Cost of the better trivial countermeasure (accept all or reject all).
  double default_cost() const;

  bool operator==(const TDcfCostModel&) const = default;
};

struct TDcfResult {
  double min_tdcf = 0.0;
  double threshold = 0.0;
};

// min over CM thresholds of (C1 p_miss + C2 p_fa) / min(C1, C2).
TDcfResult compute_min_tdcf(const std::vector<ScoreRecord>& records, const TDcfCostModel& cost);

// ASV score file ("source key score" per line, key in target/nontarget/spoof):
// sets the ASV error rates at the target/nontarget EER threshold.
void set_asv_operating_point(TDcfCostModel& cost, const std::filesystem::path& asv_scores);

// Tab-separated `trial_id<TAB>label<TAB>score`, '#' header lines, sorted by
// trial id on write. Scores use the shortest round-trip decimal form.
void write_score_file(const std::filesystem::path& path, std::vector<ScoreRecord> records);
std::vector<ScoreRecord> read_score_file(const std::filesystem::path& path);
std::vector<ScoreRecord> parse_score_text(const std::string& text);

}  // namespace fsd
