#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mlso/matching.hpp"
#include "mlso/reldesc.hpp"
#include "mlso/sop.hpp"

namespace mlso {

/// Full run configuration. File format: UTF-8 text, one `key = value` per
/// line, `#` starts a comment; command-line `--key value` flags override file
/// values. `seed` is mandatory.
struct RunConfig {
  std::string dataset = "synthetic";  // synthetic | omniglot
  std::string dataset_root;           // omniglot root; env MLSO_DATA_ROOT overrides
  int way = 5;
  int shot = 1;
  int queries_train = 5;
  int queries_test = 3;
  int levels = 2;                     // D
  int scales = 2;                     // S
  std::vector<int> channels{8, 8, 8};  // encoder conv blocks; levels tap the last D
  int sn_channels = 8;
  int sn_hidden = 8;
  int input_size = 32;
  std::string pn = "maxexp";          // maxexp | maxexp_pm | sigme | none
  double eta = 0.0;                   // 0 = use N of each pooled map
  double rho = 0.5;
  double alpha_factor = 20.0;
  double eta_prime = 0.0;
  std::string descriptor = "otimes";  // otimes | otimes_r | otimes_f
  std::string matching = "gm";        // none | cm | gm | ot | gr
  std::string matching_mode = "intra";  // intra | inter
  bool valsd = false;
  double valsd_weight = 0.1;
  bool unsupervised = false;
  int m_aug = 4;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  long episodes = 1000;
  long eval_episodes = 600;
  int log_interval = 50;
  long seed = -1;                     // mandatory; negative means unset
  std::string out = "run_out";
  int synth_classes = 20;
  int synth_test_classes = 5;
  int samples_per_class = 20;
  int train_class_count = 1200;       // omniglot class split point
  bool omniglot_rotations = false;

  PnKind pn_kind() const;
  DescriptorKind descriptor_kind() const;
  MatchStrategy match_strategy() const;
  MatchMode match_mode() const;
  PnParams pn_params() const;

  /// Throws ConfigError on any invalid or inconsistent field.
  void validate() const;
};

/// Parses `key = value` text; unknown keys raise ConfigError.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::filesystem::path& path);

/// Applies one `--key value` override.
void apply_override(RunConfig& config, const std::string& key, const std::string& value);

/// Serializes every field in a fixed order; parse(serialize(c)) == c.
std::string serialize_config(const RunConfig& config);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace mlso
