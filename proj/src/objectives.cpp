#include "mlso/objectives.hpp"

#include <cmath>

namespace mlso {

namespace {

void check_query_class(int cls, std::size_t way) {
  if (cls < 0 || static_cast<std::size_t>(cls) >= way) {
    throw ContractError("objectives: query labels must name one of the episode's classes");
  }
}

Tensor squared_deviation(const Tensor& score, double target) {
  Tensor diff = add_scalar(score, -target);
  return mul(diff, diff);
}

}  // namespace

Tensor loss_supervised(const std::vector<std::vector<std::vector<Tensor>>>& scores,
                       const std::vector<int>& query_class) {
  if (scores.empty()) throw ContractError("loss_supervised: no queries");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t q = 0; q < scores.size(); ++q) {
    check_query_class(query_class[q], scores[q].size());
    for (std::size_t l = 0; l < scores[q].size(); ++l) {
      const double target = static_cast<int>(l) == query_class[q] ? 1.0 : 0.0;
      for (const Tensor& score : scores[q][l]) {
        total = add(total, squared_deviation(score, target));
      }
    }
  }
  return mul_scalar(total, 1.0 / static_cast<double>(scores.size()));
}

Tensor loss_scalewise(
    const std::vector<std::vector<std::vector<std::vector<std::vector<Tensor>>>>>& scores,
    const std::vector<int>& query_class) {
  if (scores.empty()) throw ContractError("loss_scalewise: no queries");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t q = 0; q < scores.size(); ++q) {
    check_query_class(query_class[q], scores[q].size());
    for (std::size_t l = 0; l < scores[q].size(); ++l) {
      const double target = static_cast<int>(l) == query_class[q] ? 1.0 : 0.0;
      for (const auto& per_level : scores[q][l]) {
        for (std::size_t si = 0; si < per_level.size(); ++si) {
          for (std::size_t sj = 0; sj < per_level[si].size(); ++sj) {
            const double weight = 1.0 / (static_cast<double>(si + 1) * static_cast<double>(sj + 1));
            total = add(total, mul_scalar(squared_deviation(per_level[si][sj], target), weight));
          }
        }
      }
    }
  }
  return mul_scalar(total, 1.0 / static_cast<double>(scores.size()));
}

Tensor loss_matched(const std::vector<std::vector<std::vector<std::vector<Tensor>>>>& scores,
                    const std::vector<int>& query_class) {
  if (scores.empty()) throw ContractError("loss_matched: no queries");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t q = 0; q < scores.size(); ++q) {
    check_query_class(query_class[q], scores[q].size());
    for (std::size_t l = 0; l < scores[q].size(); ++l) {
      const double target = static_cast<int>(l) == query_class[q] ? 1.0 : 0.0;
      for (const auto& per_support : scores[q][l]) {
        for (const Tensor& score : per_support) {
          total = add(total, squared_deviation(score, target));
        }
      }
    }
  }
  return mul_scalar(total, 1.0 / static_cast<double>(scores.size()));
}

Tensor loss_votes(const std::vector<std::vector<std::vector<ScoreVote>>>& votes,
                  const std::vector<int>& query_class) {
  if (votes.empty()) throw ContractError("loss_votes: no queries");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t q = 0; q < votes.size(); ++q) {
    check_query_class(query_class[q], votes[q].size());
    for (std::size_t l = 0; l < votes[q].size(); ++l) {
      const double target = static_cast<int>(l) == query_class[q] ? 1.0 : 0.0;
      for (const ScoreVote& vote : votes[q][l]) {
        total = add(total, mul_scalar(squared_deviation(vote.score, target), vote.weight));
      }
    }
  }
  return mul_scalar(total, 1.0 / static_cast<double>(votes.size()));
}

Tensor cross_entropy(const Tensor& logits, int label) {
  if (logits.rank() != 1) throw ShapeError("cross_entropy expects a logit vector");
  if (label < 0 || label >= logits.dim(0)) throw ContractError("cross_entropy: label out of range");
  std::vector<double> onehot(static_cast<std::size_t>(logits.dim(0)), 0.0);
  onehot[static_cast<std::size_t>(label)] = 1.0;
  Tensor picked = dot(logits, Tensor::from({logits.dim(0)}, std::move(onehot)));
  return sub(logsumexp(logits), picked);
}

Tensor loss_valsd(const std::vector<Tensor>& logit_rows, const std::vector<int>& labels) {
  if (logit_rows.empty()) throw ContractError("loss_valsd: no representations");
  if (logit_rows.size() != labels.size()) throw ContractError("loss_valsd: label count mismatch");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < logit_rows.size(); ++i) {
    total = add(total, cross_entropy(logit_rows[i], labels[i]));
  }
  return mul_scalar(total, 1.0 / static_cast<double>(logit_rows.size()));
}

namespace {

Tensor frobenius_against(const std::vector<std::vector<std::vector<Tensor>>>& mats,
                         double target) {
  Tensor total = Tensor::scalar(0.0);
  for (const auto& mat : mats) {
    for (const auto& row : mat) {
      for (const Tensor& entry : row) {
        total = add(total, squared_deviation(entry, target));
      }
    }
  }
  return total;
}

}  // namespace

Tensor loss_unsupervised(const std::vector<std::vector<std::vector<Tensor>>>& zeta_x,
                         const std::vector<std::vector<std::vector<Tensor>>>& zeta_y,
                         const std::vector<std::vector<std::vector<Tensor>>>& zeta_cross) {
  if (zeta_x.size() != zeta_y.size() || zeta_x.size() != zeta_cross.size()) {
    throw ContractError("loss_unsupervised: per-level matrix counts must agree");
  }
  Tensor total = frobenius_against(zeta_x, 1.0);
  total = add(total, frobenius_against(zeta_y, 1.0));
  total = add(total, frobenius_against(zeta_cross, 0.0));
  return total;
}

int infer_class(const std::vector<std::vector<std::pair<double, double>>>& votes_per_class) {
  if (votes_per_class.empty()) throw ContractError("infer_class: no classes");
  int best = 0;
  double best_deviation = 0.0;
  for (std::size_t l = 0; l < votes_per_class.size(); ++l) {
    double deviation = 0.0;
    for (const auto& [weight, value] : votes_per_class[l]) {
      deviation += weight * (value - 1.0) * (value - 1.0);
    }
    if (l == 0 || deviation < best_deviation) {
      best = static_cast<int>(l);
      best_deviation = deviation;
    }
  }
  return best;
}

}  // namespace mlso
