#include "mlso/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mlso/errors.hpp"

namespace mlso {

PnKind RunConfig::pn_kind() const {
  if (pn == "maxexp") return PnKind::MaxExp;
  if (pn == "maxexp_pm") return PnKind::MaxExpPM;
  if (pn == "sigme") return PnKind::SigmE;
  if (pn == "none") return PnKind::None;
  throw ConfigError("unknown pn '" + pn + "' (expected maxexp|maxexp_pm|sigme|none)");
}

DescriptorKind RunConfig::descriptor_kind() const {
  if (descriptor == "otimes") return DescriptorKind::Otimes;
  if (descriptor == "otimes_r") return DescriptorKind::OtimesR;
  if (descriptor == "otimes_f") return DescriptorKind::OtimesF;
  throw ConfigError("unknown descriptor '" + descriptor +
                    "' (expected otimes|otimes_r|otimes_f)");
}

MatchStrategy RunConfig::match_strategy() const {
  if (matching == "none") return MatchStrategy::None;
  if (matching == "cm") return MatchStrategy::CM;
  if (matching == "gm") return MatchStrategy::GM;
  if (matching == "ot") return MatchStrategy::OT;
  if (matching == "gr") return MatchStrategy::GR;
  throw ConfigError("unknown matching '" + matching + "' (expected none|cm|gm|ot|gr)");
}

MatchMode RunConfig::match_mode() const {
  if (matching_mode == "intra") return MatchMode::Intra;
  if (matching_mode == "inter") return MatchMode::Inter;
  throw ConfigError("unknown matching_mode '" + matching_mode + "' (expected intra|inter)");
}

PnParams RunConfig::pn_params() const {
  PnParams p;
  p.eta = eta;
  p.rho = rho;
  p.alpha_factor = alpha_factor;
  p.eta_prime = eta_prime;
  return p;
}

void RunConfig::validate() const {
  if (dataset != "synthetic" && dataset != "omniglot") {
    throw ConfigError("unknown dataset '" + dataset + "' (expected synthetic|omniglot)");
  }
  pn_kind();
  descriptor_kind();
  match_strategy();
  match_mode();
  if (seed < 0) throw ConfigError("seed is mandatory (reproducibility contract)");
  if (way < 2) throw ConfigError("way must be >= 2");
  if (shot < 1) throw ConfigError("shot must be >= 1");
  if (queries_train < 1 || queries_test < 1) throw ConfigError("query counts must be >= 1");
  if (levels < 1) throw ConfigError("levels must be >= 1");
  if (scales < 1) throw ConfigError("scales must be >= 1");
  if (channels.empty()) throw ConfigError("channels must list at least one block");
  if (levels > static_cast<int>(channels.size())) {
    throw ConfigError("levels exceeds the number of encoder blocks");
  }
  if (episodes < 0) throw ConfigError("episodes must be >= 0");
  if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
  if (log_interval < 1) throw ConfigError("log_interval must be >= 1");
  if (valsd_weight < 0.0) throw ConfigError("valsd_weight must be >= 0");
  if (rho < 0.0 || rho > 1.0) throw ConfigError("rho must be in [0,1]");
  if (m_aug < 2) throw ConfigError("m_aug must be >= 2");
  if (descriptor_kind() == DescriptorKind::OtimesF) {
    if (shot > 2) throw ConfigError("otimes_f is limited to shot <= 2 (descriptor size)");
    if (scales > 1) throw ConfigError("otimes_f requires scales = 1 (maps must share N)");
  }
  if (match_strategy() == MatchStrategy::OT) {
    const int side = match_mode() == MatchMode::Intra ? scales : scales * levels;
    if (side > 5) throw ConfigError("ot matching supports at most 5 reps per side");
  }
  if (valsd && levels * scales < 2) {
    throw ConfigError("valsd needs at least two (level, scale) labels");
  }
  if (valsd) {
    const int first_tap = static_cast<int>(channels.size()) - levels;
    const int k = channels[static_cast<std::size_t>(first_tap)];
    for (int d = first_tap; d < static_cast<int>(channels.size()); ++d) {
      if (channels[static_cast<std::size_t>(d)] != k) {
        throw ConfigError("valsd requires equal channel widths across tapped levels");
      }
    }
  }
  if (dataset == "synthetic") {
    if (synth_classes < way || synth_test_classes < way) {
      throw ConfigError("synthetic class counts must be >= way");
    }
    if (samples_per_class < shot + std::max(queries_train, queries_test)) {
      throw ConfigError("samples_per_class too small for shot + queries");
    }
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<int> parse_int_list(const std::string& value) {
  std::vector<int> out;
  std::string token;
  std::istringstream is(value);
  while (std::getline(is, token, ',')) {
    token = trim(token);
    if (token.empty()) continue;
    out.push_back(std::stoi(token));
  }
  if (out.empty()) throw ConfigError("expected a comma-separated integer list");
  return out;
}

std::string format_int_list(const std::vector<int>& values) {
  std::ostringstream os;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) os << ",";
    os << values[i];
  }
  return os.str();
}

bool parse_bool(const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw ConfigError("expected a boolean (on/off), got '" + value + "'");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
  const char* key;
  Setter set;
  Getter get;
};

const std::vector<Field>& fields() {
  auto int_field = [](int RunConfig::* member) {
    return Field{nullptr,
                 [member](RunConfig& c, const std::string& v) { c.*member = std::stoi(v); },
                 [member](const RunConfig& c) { return std::to_string(c.*member); }};
  };
  auto long_field = [](long RunConfig::* member) {
    return Field{nullptr,
                 [member](RunConfig& c, const std::string& v) { c.*member = std::stol(v); },
                 [member](const RunConfig& c) { return std::to_string(c.*member); }};
  };
  auto double_field = [](double RunConfig::* member) {
    return Field{nullptr,
                 [member](RunConfig& c, const std::string& v) { c.*member = std::stod(v); },
                 [member](const RunConfig& c) { return format_double(c.*member); }};
  };
  auto string_field = [](std::string RunConfig::* member) {
    return Field{nullptr, [member](RunConfig& c, const std::string& v) { c.*member = v; },
                 [member](const RunConfig& c) { return c.*member; }};
  };
  auto bool_field = [](bool RunConfig::* member) {
    return Field{nullptr,
                 [member](RunConfig& c, const std::string& v) { c.*member = parse_bool(v); },
                 [member](const RunConfig& c) { return (c.*member) ? "on" : "off"; }};
  };
  auto named = [](const char* key, Field f) {
    f.key = key;
    return f;
  };

  static const std::vector<Field> kFields = {
      named("dataset", string_field(&RunConfig::dataset)),
      named("dataset_root", string_field(&RunConfig::dataset_root)),
      named("way", int_field(&RunConfig::way)),
      named("shot", int_field(&RunConfig::shot)),
      named("queries_train", int_field(&RunConfig::queries_train)),
      named("queries_test", int_field(&RunConfig::queries_test)),
      named("levels", int_field(&RunConfig::levels)),
      named("scales", int_field(&RunConfig::scales)),
      named("channels",
            Field{nullptr,
                  [](RunConfig& c, const std::string& v) { c.channels = parse_int_list(v); },
                  [](const RunConfig& c) { return format_int_list(c.channels); }}),
      named("sn_channels", int_field(&RunConfig::sn_channels)),
      named("sn_hidden", int_field(&RunConfig::sn_hidden)),
      named("input_size", int_field(&RunConfig::input_size)),
      named("pn", string_field(&RunConfig::pn)),
      named("eta", double_field(&RunConfig::eta)),
      named("rho", double_field(&RunConfig::rho)),
      named("alpha_factor", double_field(&RunConfig::alpha_factor)),
      named("eta_prime", double_field(&RunConfig::eta_prime)),
      named("descriptor", string_field(&RunConfig::descriptor)),
      named("matching", string_field(&RunConfig::matching)),
      named("matching_mode", string_field(&RunConfig::matching_mode)),
      named("valsd", bool_field(&RunConfig::valsd)),
      named("valsd_weight", double_field(&RunConfig::valsd_weight)),
      named("unsupervised", bool_field(&RunConfig::unsupervised)),
      named("m_aug", int_field(&RunConfig::m_aug)),
      named("lr", double_field(&RunConfig::lr)),
      named("beta1", double_field(&RunConfig::beta1)),
      named("beta2", double_field(&RunConfig::beta2)),
      named("episodes", long_field(&RunConfig::episodes)),
      named("eval_episodes", long_field(&RunConfig::eval_episodes)),
      named("log_interval", int_field(&RunConfig::log_interval)),
      named("seed", long_field(&RunConfig::seed)),
      named("out", string_field(&RunConfig::out)),
      named("synth_classes", int_field(&RunConfig::synth_classes)),
      named("synth_test_classes", int_field(&RunConfig::synth_test_classes)),
      named("samples_per_class", int_field(&RunConfig::samples_per_class)),
      named("train_class_count", int_field(&RunConfig::train_class_count)),
      named("omniglot_rotations", bool_field(&RunConfig::omniglot_rotations)),
  };
  return kFields;
}

const Field& find_field(const std::string& key) {
  for (const auto& field : fields()) {
    if (key == field.key) return field;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
  try {
    find_field(key).set(config, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("invalid value '" + value + "' for key '" + key + "'");
  }
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig config;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + " is not 'key = value'");
    }
    apply_override(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return config;
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

std::string serialize_config(const RunConfig& config) {
  std::ostringstream os;
  for (const auto& field : fields()) {
    os << field.key << " = " << field.get(config) << "\n";
  }
  return os.str();
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  for (const auto& field : fields()) {
    if (field.get(a) != field.get(b)) return false;
  }
  return true;
}

}  // namespace mlso
