#pragma once

#include "deepbv/nets.hpp"
#include "deepbv/phantom.hpp"
#include "deepbv/pipeline.hpp"
#include "deepbv/training.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace deepbv {

enum class Profile { Full, Desk };

/// Every tunable constant of a run. The full profile holds the published
/// values; the desk profile rescales sizes for a single CPU core.
struct RunConfig {
  Profile profile = Profile::Full;
  std::uint64_t seed = 1;
  int threads = 1;

  PhantomConfig phantom;
  LocalizationPlan loc_plan;
  SegmentationPlan seg_plan;
  LocalizationLabeling labeling;
  SgdConfig loc_sgd;
  SgdConfig seg_sgd;
  std::size_t loc_max_examples = 0;     // 0 keeps every balanced window
  std::size_t seg_per_epoch = 22000;
  double seg_min_fraction = 0.97;
  int loc_ensemble = 3;
  int seg_ensemble = 2;
  PipelineConfig pipeline;

  static RunConfig full();
  static RunConfig desk();
  static RunConfig for_profile(Profile p) { return p == Profile::Full ? full() : desk(); }

  /// Applies `key = value` lines ('#' starts a comment). Unknown keys and
  /// malformed values throw std::invalid_argument naming the line.
  void apply_text(const std::string& text);
  void apply_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  /// Every key with its current value, in a stable order.
  std::map<std::string, std::string> entries() const;
  /// Cross-field consistency (window = box / 2, net sides match, ...).
  void validate() const;
};

Profile parse_profile(const std::string& s);
std::string to_string(Profile p);

}  // namespace deepbv
