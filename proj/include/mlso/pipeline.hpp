#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mlso/config.hpp"
#include "mlso/encoder.hpp"
#include "mlso/episodes.hpp"
#include "mlso/matching.hpp"
#include "mlso/objectives.hpp"
#include "mlso/params.hpp"
#include "mlso/simnet.hpp"
#include "mlso/sop.hpp"

namespace mlso {

/// Relation scores of one episode, shaped for the loss that applies to the
/// configured strategy, plus the pretext logits when VALSD is enabled.
struct EpisodeScores {
  // populated for matching = none, scales = 1
  std::vector<std::vector<std::vector<Tensor>>> plain;  // [q][l][d]
  // populated for matching = none, scales > 1
  std::vector<std::vector<std::vector<std::vector<std::vector<Tensor>>>>> scalewise;
  // populated for cm/gm/ot/gr (inter mode collapses the level axis to one)
  std::vector<std::vector<std::vector<std::vector<Tensor>>>> matched;  // [q][l][n][d]
  std::vector<int> query_class;

  std::vector<Tensor> valsd_logits;
  std::vector<int> valsd_labels;

  long pair_evaluations = 0;  // support/query rep pairs scored (introspection)

  Tensor relation_loss() const;
  /// Per-query predicted episode-local class via the vote rule.
  std::vector<int> predictions() const;
};

/// Pairwise relation matrices of one unsupervised episode.
struct UnsupervisedScores {
  std::vector<std::vector<std::vector<Tensor>>> zeta_x;      // [d][m][m]
  std::vector<std::vector<std::vector<Tensor>>> zeta_y;      // [d][m][m]
  std::vector<std::vector<std::vector<Tensor>>> zeta_cross;  // [d][m][m]

  Tensor loss() const;
  /// Fraction of (positive, negative) score pairs ranked correctly.
  double ordering_accuracy() const;
  double mean_positive() const;
  double mean_negative() const;
};

/// The full trainable bundle: encoder, base learner(s), optional gate /
/// graph matcher / pretext head, with one deterministic parameter order.
class FewShotModel {
 public:
  FewShotModel(const RunConfig& config, std::uint64_t init_seed);

  EpisodeScores score_episode(const Episode& episode) const;
  UnsupervisedScores score_unsupervised(const std::vector<Image>& aug_x,
                                        const std::vector<Image>& aug_y) const;

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const RunConfig& config() const { return config_; }
  const FeatureEncoder& encoder() const { return *fen_; }
  const SimilarityNet& simnet() const { return *sn_; }
  const GateModule* gate() const { return gate_ ? &*gate_ : nullptr; }
  const GraphMatcher* graph_matcher() const { return gr_ ? &*gr_ : nullptr; }

  /// Pooled reps of one image for every (level, scale); [K,K] tensors.
  std::vector<std::vector<Tensor>> pooled_reps(const Image& image) const;
  /// VALSD logits for a vectorized pooled rep of level d (1-based).
  Tensor valsd_logits(const Tensor& psi, int level) const;

 private:
  struct ImageEncoding {
    // maps[d][s], psis[d][s]
    std::vector<std::vector<Tensor>> maps;
    std::vector<std::vector<Tensor>> psis;
  };
  ImageEncoding encode_image(const Image& image, bool need_psis) const;
  Tensor pair_descriptor(const Tensor& psi_support, const Tensor& psi_query) const;
  int sn_set(int level_index) const;  // intra: level index; inter: 0

  RunConfig config_;
  ParamSet params_;
  std::unique_ptr<FeatureEncoder> fen_;
  std::unique_ptr<SimilarityNet> sn_;
  std::optional<GateModule> gate_;
  std::optional<GraphMatcher> gr_;
  Tensor valsd_w_, valsd_b_;
};

/// assemble_episode_scores over the configured strategy and mode.
inline EpisodeScores assemble_episode_scores(const FewShotModel& model, const Episode& episode) {
  return model.score_episode(episode);
}

struct EvalResult {
  double accuracy = 0.0;
  double ci_half_width = 0.0;  // 1.96 * stddev / sqrt(episodes)
  long episodes = 0;
};

/// Mean and 95% CI half-width (1.96 * sample stddev / sqrt(n)) of
/// per-episode accuracies.
EvalResult summarize_accuracies(const std::vector<double>& per_episode);

struct TrainResult {
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_path;
  double final_loss = 0.0;
};

/// Builds the dataset named by the config (synthetic or omniglot) and its
/// train/test class split.
struct DataBundle {
  std::unique_ptr<Dataset> dataset;  // stable address; the views point into it
  SplitView train;
  SplitView test;
};
DataBundle load_data(const RunConfig& config);

/// Episode loop: sample, encode, pool, describe, match, score, loss, Adam
/// step; writes the checkpoint and line-delimited metrics under config.out.
TrainResult train_run(const RunConfig& config, std::ostream& log);

/// Accuracy with a 95% CI over config.eval_episodes test episodes.
EvalResult evaluate_model(const FewShotModel& model, const SplitView& test,
                          const RunConfig& config);

/// Loads the checkpoint into a freshly built model (exit-code-3 mismatch is
/// reported as CheckpointError).
std::unique_ptr<FewShotModel> load_model(const RunConfig& config,
                                         const std::filesystem::path& checkpoint);

/// Held-out accuracy of the VALSD pretext head over (level, scale) labels.
double eval_valsd_accuracy(const FewShotModel& model, const SplitView& view, int episodes,
                           std::uint64_t seed);

/// Mean positive-pair and negative-pair relation scores on fresh augmented
/// pairs, for the unsupervised objective.
std::pair<double, double> eval_unsupervised_gap(const FewShotModel& model, const SplitView& view,
                                                int pair_count, std::uint64_t seed);

// Deterministic sub-seed derivation from the run seed.
std::uint64_t seed_for_dataset(long run_seed);
std::uint64_t seed_for_init(long run_seed);
std::uint64_t seed_for_train_sampler(long run_seed);
std::uint64_t seed_for_eval_sampler(long run_seed);

}  // namespace mlso
