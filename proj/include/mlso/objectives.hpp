#pragma once

#include <vector>

#include "mlso/tensor.hpp"

namespace mlso {

/// One scoring vote for a (class, query) pair: a relation score plus the
/// weight it carries in the loss and in inference (1 unless scale-weighted).
struct ScoreVote {
  Tensor score;
  double weight = 1.0;
};

/// MSE relation loss over per-level class scores: mean over queries of
/// sum_l sum_d (score - delta(l == class))^2. `scores[q][l][d]`.
Tensor loss_supervised(const std::vector<std::vector<std::vector<Tensor>>>& scores,
                       const std::vector<int>& query_class);

/// Scale-pair weighted MSE: weights 1/(s*s') over 1-based scale indexes.
/// `scores[q][l][d][s][s']`.
Tensor loss_scalewise(
    const std::vector<std::vector<std::vector<std::vector<std::vector<Tensor>>>>>& scores,
    const std::vector<int>& query_class);

/// Matched-score MSE over individual supports: mean over queries of
/// sum_l sum_n sum_d (score' - delta)^2. `scores[q][l][n][d]`.
Tensor loss_matched(const std::vector<std::vector<std::vector<std::vector<Tensor>>>>& scores,
                    const std::vector<int>& query_class);

/// Generic weighted-vote MSE; the three losses above reduce to this form.
/// `votes[q][l]` lists every (score, weight) vote for class l of query q.
Tensor loss_votes(const std::vector<std::vector<std::vector<ScoreVote>>>& votes,
                  const std::vector<int>& query_class);

/// Softmax cross-entropy of one logit vector against a class index.
Tensor cross_entropy(const Tensor& logits, int label);

/// Mean cross-entropy of the abstraction/scale pretext task over all reps.
Tensor loss_valsd(const std::vector<Tensor>& logit_rows, const std::vector<int>& labels);

/// Contrastive objective: sum over levels of ||zeta_x - 1||_F^2 +
/// ||zeta_y - 1||_F^2 + ||zeta_cross||_F^2, where each matrix is given as
/// [m][m] scalar scores.
Tensor loss_unsupervised(const std::vector<std::vector<std::vector<Tensor>>>& zeta_x,
                         const std::vector<std::vector<std::vector<Tensor>>>& zeta_y,
                         const std::vector<std::vector<std::vector<Tensor>>>& zeta_cross);

/// Inference rule: picks argmin over classes of the weighted squared
/// deviation of the class's votes from 1; ties break to the lowest index.
int infer_class(const std::vector<std::vector<std::pair<double, double>>>& votes_per_class);

}  // namespace mlso
