#include "mlso/cli.hpp"

#include <cstdio>
#include <map>

#include "mlso/checkpoint.hpp"
#include "mlso/config.hpp"
#include "mlso/errors.hpp"
#include "mlso/pipeline.hpp"
#include "mlso/verify.hpp"

namespace mlso {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitCheckpoint = 3;

void print_usage(std::ostream& out) {
  out << "usage: mlso <command> [--config FILE] [--key value ...]\n"
         "commands:\n"
         "  train    run the episodic training loop; writes checkpoint.bin and\n"
         "           metrics.txt under --out\n"
         "  eval     evaluate a checkpoint: --checkpoint FILE plus the training\n"
         "           configuration flags\n"
         "  verify   run the property suites; exit 0 iff all pass\n"
         "exit codes: 0 ok, 1 verification or runtime failure, 2 config error,\n"
         "3 checkpoint error\n";
}

/// Builds the RunConfig from --config plus per-flag overrides.
RunConfig config_from_args(const std::vector<std::string>& args, std::size_t start,
                           std::string* checkpoint_path) {
  RunConfig config;
  // First pass: locate --config so flags override the file.
  for (std::size_t i = start; i + 1 < args.size(); i += 2) {
    if (args[i] == "--config") config = parse_config_file(args[i + 1]);
  }
  for (std::size_t i = start; i < args.size(); i += 2) {
    const std::string& flag = args[i];
    if (flag.rfind("--", 0) != 0) throw ConfigError("expected a --flag, got '" + flag + "'");
    if (i + 1 >= args.size()) throw ConfigError("flag " + flag + " is missing a value");
    const std::string key = flag.substr(2);
    const std::string& value = args[i + 1];
    if (key == "config") continue;
    if (key == "checkpoint") {
      if (checkpoint_path) *checkpoint_path = value;
      continue;
    }
    apply_override(config, key, value);
  }
  return config;
}

int cmd_train(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig config = config_from_args(args, 1, nullptr);
  config.validate();
  TrainResult result = train_run(config, err);
  out << "checkpoint " << result.checkpoint_path.string() << "\n";
  out << "metrics " << result.metrics_path.string() << "\n";
  return kExitOk;
}

int cmd_eval(const std::vector<std::string>& args, std::ostream& out, std::ostream&) {
  std::string checkpoint_path;
  RunConfig config = config_from_args(args, 1, &checkpoint_path);
  config.validate();
  if (checkpoint_path.empty()) throw ConfigError("eval requires --checkpoint FILE");
  auto model = load_model(config, checkpoint_path);
  DataBundle data = load_data(config);
  EvalResult result = evaluate_model(*model, data.test, config);
  char line[128];
  std::snprintf(line, sizeof(line), "accuracy %.6f ci95 %.6f episodes %ld\n", result.accuracy,
                result.ci_half_width, result.episodes);
  out << line;
  return kExitOk;
}

int cmd_verify(const std::vector<std::string>& args, std::ostream& out, std::ostream&) {
  long seed = 20240 ;
  for (std::size_t i = 1; i + 1 < args.size(); i += 2) {
    if (args[i] == "--seed") seed = std::stol(args[i + 1]);
  }
  const auto checks = run_verification(static_cast<std::uint64_t>(seed));
  std::map<std::string, std::pair<int, int>> suites;  // suite -> (passed, total)
  bool all_passed = true;
  for (const auto& check : checks) {
    auto& [passed, total] = suites[check.suite];
    ++total;
    if (check.passed) {
      ++passed;
    } else {
      all_passed = false;
      out << "FAIL " << check.suite << ": " << check.name;
      if (!check.detail.empty()) out << " (" << check.detail << ")";
      out << "\n";
    }
  }
  for (const auto& [suite, counts] : suites) {
    out << (counts.first == counts.second ? "pass" : "FAIL") << " " << suite << " "
        << counts.first << "/" << counts.second << "\n";
  }
  return all_passed ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    print_usage(err);
    return kExitConfig;
  }
  try {
    const std::string& command = args[0];
    if (command == "train") return cmd_train(args, out, err);
    if (command == "eval") return cmd_eval(args, out, err);
    if (command == "verify") return cmd_verify(args, out, err);
    if (command == "--help" || command == "help") {
      print_usage(out);
      return kExitOk;
    }
    err << "unknown command '" << command << "'\n";
    print_usage(err);
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace mlso
