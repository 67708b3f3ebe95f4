#include "mlso/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "mlso/checkpoint.hpp"
#include "mlso/optim.hpp"
#include "mlso/reldesc.hpp"

namespace mlso {

std::uint64_t seed_for_dataset(long run_seed) {
  return splitmix64(static_cast<std::uint64_t>(run_seed) ^ 0xDA7A5E7ULL);
}
std::uint64_t seed_for_init(long run_seed) {
  return splitmix64(static_cast<std::uint64_t>(run_seed) ^ 0x1217AB1EULL);
}
std::uint64_t seed_for_train_sampler(long run_seed) {
  return splitmix64(static_cast<std::uint64_t>(run_seed) ^ 0x5A3B7E9ULL);
}
std::uint64_t seed_for_eval_sampler(long run_seed) {
  return splitmix64(static_cast<std::uint64_t>(run_seed) ^ 0xE7A1C0DEULL);
}

// --- model -------------------------------------------------------------------

FewShotModel::FewShotModel(const RunConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  const auto strategy = config_.match_strategy();
  const auto mode = config_.match_mode();
  const auto kind = config_.descriptor_kind();
  const int levels = config_.levels;
  const int scales = config_.scales;

  Rng rng(init_seed);

  EncoderConfig ec;
  ec.channels = config_.channels;
  ec.levels = levels;
  ec.scales = scales;
  ec.input_size = config_.input_size;
  fen_ = std::make_unique<FeatureEncoder>(ec, params_, rng);

  // The descriptor spatial extent must survive the base learner's two pools.
  int min_extent = fen_->level_channels(1);
  for (int d = 1; d <= levels; ++d) min_extent = std::min(min_extent, fen_->level_channels(d));
  if (kind == DescriptorKind::OtimesF) min_extent *= config_.shot + 1;
  if (min_extent < 4) {
    throw ConfigError("descriptor extent " + std::to_string(min_extent) +
                      " is too small for the base learner's pooling stages");
  }

  if (mode == MatchMode::Inter && strategy != MatchStrategy::None) {
    for (int d = 2; d <= levels; ++d) {
      if (fen_->level_channels(d) != fen_->level_channels(1)) {
        throw ConfigError("inter-level matching requires equal channel widths across levels");
      }
    }
  }

  SimNetConfig sc;
  sc.in_channels = descriptor_channels(kind);
  sc.conv_channels = config_.sn_channels;
  sc.fc_hidden = config_.sn_hidden;
  const int set_count = mode == MatchMode::Intra ? levels : 1;
  sn_ = std::make_unique<SimilarityNet>(sc, set_count, params_, rng);

  if (strategy == MatchStrategy::GM) gate_.emplace(params_, rng);
  if (strategy == MatchStrategy::GR) {
    std::vector<int> dims;
    int num_nodes = 0;
    if (mode == MatchMode::Intra) {
      for (int d = 1; d <= levels; ++d) {
        const int k = fen_->level_channels(d);
        dims.push_back(k * k);
      }
      num_nodes = 2 * scales;
    } else {
      const int k = fen_->level_channels(1);
      dims.push_back(k * k);
      num_nodes = 2 * levels * scales;
    }
    gr_.emplace(std::move(dims), num_nodes, params_, rng);
  }

  if (config_.valsd) {
    const int k = fen_->level_channels(1);  // equal widths enforced by validate()
    const int label_count = levels * scales;
    valsd_w_ = params_.kaiming("valsd.w", {label_count, k * k}, k * k, rng);
    valsd_b_ = params_.zeros("valsd.b", {label_count});
  }
}

int FewShotModel::sn_set(int level_index) const {
  return config_.match_mode() == MatchMode::Intra ? level_index : 0;
}

FewShotModel::ImageEncoding FewShotModel::encode_image(const Image& image,
                                                       bool need_psis) const {
  if (image.height != config_.input_size || image.width != config_.input_size) {
    throw ConfigError("image extent does not match the configured input_size");
  }
  const int levels = config_.levels;
  const int scales = config_.scales;
  ImageEncoding enc;
  enc.maps.assign(static_cast<std::size_t>(levels), {});
  enc.psis.assign(static_cast<std::size_t>(levels), {});
  Tensor img = image.to_tensor();
  const PnParams pn = config_.pn_params();
  for (int s = 1; s <= scales; ++s) {
    auto maps = fen_->encode_levels(img, s);
    for (int d = 0; d < levels; ++d) {
      enc.maps[static_cast<std::size_t>(d)].push_back(maps[static_cast<std::size_t>(d)].values);
      if (need_psis) {
        enc.psis[static_cast<std::size_t>(d)].push_back(
            pooled_rep(maps[static_cast<std::size_t>(d)].values, config_.pn_kind(), pn));
      }
    }
  }
  return enc;
}

std::vector<std::vector<Tensor>> FewShotModel::pooled_reps(const Image& image) const {
  return encode_image(image, true).psis;
}

Tensor FewShotModel::valsd_logits(const Tensor& psi, int level) const {
  if (!config_.valsd) throw ConfigError("valsd head is not enabled in this configuration");
  (void)level;  // one shared head; the level is part of the target label only
  Tensor flat = reshape(psi, {static_cast<int>(psi.size())});
  return linear(valsd_w_, flat, valsd_b_);
}

Tensor FewShotModel::pair_descriptor(const Tensor& psi_support, const Tensor& psi_query) const {
  return concat({reshape(psi_support, {1, psi_support.dim(0), psi_support.dim(1)}),
                 reshape(psi_query, {1, psi_query.dim(0), psi_query.dim(1)})},
                0);
}

namespace {

std::vector<std::vector<double>> detached_rows(const std::vector<Tensor>& reps) {
  std::vector<std::vector<double>> rows;
  rows.reserve(reps.size());
  for (const auto& r : reps) rows.push_back(r.data());
  return rows;
}

}  // namespace

EpisodeScores FewShotModel::score_episode(const Episode& episode) const {
  const int way = episode.way;
  const int shot = episode.shot;
  const int levels = config_.levels;
  const int scales = config_.scales;
  const auto strategy = config_.match_strategy();
  const auto mode = config_.match_mode();
  const auto kind = config_.descriptor_kind();
  const PnParams pn = config_.pn_params();
  const int num_queries = static_cast<int>(episode.queries.size());

  const bool need_support_psis = strategy != MatchStrategy::None || config_.valsd;

  std::vector<std::vector<ImageEncoding>> sup(static_cast<std::size_t>(way));
  for (int l = 0; l < way; ++l) {
    for (int z = 0; z < shot; ++z) {
      sup[static_cast<std::size_t>(l)].push_back(
          encode_image(*episode.support[static_cast<std::size_t>(l)][static_cast<std::size_t>(z)],
                       need_support_psis));
    }
  }
  std::vector<ImageEncoding> qry;
  qry.reserve(static_cast<std::size_t>(num_queries));
  for (int q = 0; q < num_queries; ++q) {
    qry.push_back(encode_image(*episode.queries[static_cast<std::size_t>(q)], true));
  }

  EpisodeScores out;
  out.query_class = episode.query_class;

  if (config_.valsd) {
    auto push_logits = [&](const ImageEncoding& enc) {
      for (int d = 0; d < levels; ++d) {
        for (int s = 0; s < scales; ++s) {
          out.valsd_logits.push_back(
              valsd_logits(enc.psis[static_cast<std::size_t>(d)][static_cast<std::size_t>(s)],
                           d + 1));
          out.valsd_labels.push_back(d * scales + s);
        }
      }
    };
    for (const auto& per_class : sup) {
      for (const auto& enc : per_class) push_logits(enc);
    }
    for (const auto& enc : qry) push_logits(enc);
  }

  // Gate values are per-rep, cached across pairs.
  std::vector<std::vector<std::vector<Tensor>>> gate_sup;  // [l*Z][d][s]
  std::vector<std::vector<std::vector<Tensor>>> gate_qry;  // [q][d][s]
  if (strategy == MatchStrategy::GM) {
    auto gates_of = [&](const ImageEncoding& enc) {
      std::vector<std::vector<Tensor>> g(static_cast<std::size_t>(levels));
      for (int d = 0; d < levels; ++d) {
        for (int s = 0; s < scales; ++s) {
          g[static_cast<std::size_t>(d)].push_back(
              gate_->gate(enc.psis[static_cast<std::size_t>(d)][static_cast<std::size_t>(s)]));
        }
      }
      return g;
    };
    for (const auto& per_class : sup) {
      for (const auto& enc : per_class) gate_sup.push_back(gates_of(enc));
    }
    for (const auto& enc : qry) gate_qry.push_back(gates_of(enc));
  }

  if (strategy == MatchStrategy::None) {
    // Class prototype reps per (l, d, s).
    std::vector<std::vector<std::vector<Tensor>>> proto(static_cast<std::size_t>(way));
    if (kind != DescriptorKind::OtimesF) {
      for (int l = 0; l < way; ++l) {
        auto& per_level = proto[static_cast<std::size_t>(l)];
        per_level.assign(static_cast<std::size_t>(levels), {});
        for (int d = 0; d < levels; ++d) {
          for (int s = 0; s < scales; ++s) {
            std::vector<Tensor> maps;
            for (int z = 0; z < shot; ++z) {
              maps.push_back(sup[static_cast<std::size_t>(l)][static_cast<std::size_t>(z)]
                                 .maps[static_cast<std::size_t>(d)][static_cast<std::size_t>(s)]);
            }
            Tensor pooled_map;
            if (kind == DescriptorKind::Otimes) {
              pooled_map = maps.front();
              for (std::size_t z = 1; z < maps.size(); ++z) pooled_map = add(pooled_map, maps[z]);
            } else {  // OtimesR
              pooled_map = maps.size() == 1 ? maps.front() : concat(maps, 1);
            }
            per_level[static_cast<std::size_t>(d)].push_back(
                pooled_rep(pooled_map, config_.pn_kind(), pn));
          }
        }
      }
    }

    const bool single_scale = scales == 1;
    if (single_scale) {
      out.plain.assign(static_cast<std::size_t>(num_queries), {});
    } else {
      out.scalewise.assign(static_cast<std::size_t>(num_queries), {});
    }
    for (int q = 0; q < num_queries; ++q) {
      auto& plain_q = out.plain;
      auto& scale_q = out.scalewise;
      if (single_scale) {
        plain_q[static_cast<std::size_t>(q)].assign(static_cast<std::size_t>(way), {});
      } else {
        scale_q[static_cast<std::size_t>(q)].assign(static_cast<std::size_t>(way), {});
      }
      for (int l = 0; l < way; ++l) {
        for (int d = 0; d < levels; ++d) {
          if (kind == DescriptorKind::OtimesF) {
            std::vector<Tensor> maps;
            for (int z = 0; z < shot; ++z) {
              maps.push_back(
                  sup[static_cast<std::size_t>(l)][static_cast<std::size_t>(z)].maps
                      [static_cast<std::size_t>(d)][0]);
            }
            Tensor desc = theta_full(maps, qry[static_cast<std::size_t>(q)]
                                               .maps[static_cast<std::size_t>(d)][0],
                                     config_.pn_kind(), pn);
            Tensor score = sn_->relate(desc, sn_set(d));
            ++out.pair_evaluations;
            plain_q[static_cast<std::size_t>(q)][static_cast<std::size_t>(l)].push_back(score);
            continue;
          }
          if (single_scale) {
            Tensor desc = pair_descriptor(
                proto[static_cast<std::size_t>(l)][static_cast<std::size_t>(d)][0],
                qry[static_cast<std::size_t>(q)].psis[static_cast<std::size_t>(d)][0]);
            Tensor score = sn_->relate(desc, sn_set(d));
            ++out.pair_evaluations;
            plain_q[static_cast<std::size_t>(q)][static_cast<std::size_t>(l)].push_back(score);
          } else {
            if (scale_q[static_cast<std::size_t>(q)][static_cast<std::size_t>(l)].size() <=
                static_cast<std::size_t>(d)) {
              scale_q[static_cast<std::size_t>(q)][static_cast<std::size_t>(l)].resize(
                  static_cast<std::size_t>(levels));
            }
            auto& per_level =
                scale_q[static_cast<std::size_t>(q)][static_cast<std::size_t>(l)]
                       [static_cast<std::size_t>(d)];
            per_level.assign(static_cast<std::size_t>(scales), {});
            for (int si = 0; si < scales; ++si) {
              for (int sj = 0; sj < scales; ++sj) {
                Tensor desc = pair_descriptor(
                    proto[static_cast<std::size_t>(l)][static_cast<std::size_t>(d)]
                         [static_cast<std::size_t>(si)],
                    qry[static_cast<std::size_t>(q)].psis[static_cast<std::size_t>(d)]
                       [static_cast<std::size_t>(sj)]);
                Tensor score = sn_->relate(desc, sn_set(d));
                ++out.pair_evaluations;
                per_level[static_cast<std::size_t>(si)].push_back(score);
              }
            }
          }
        }
      }
    }
    return out;
  }

  // Matched strategies score individual supports.
  out.matched.assign(static_cast<std::size_t>(num_queries), {});
  for (int q = 0; q < num_queries; ++q) {
    out.matched[static_cast<std::size_t>(q)].assign(static_cast<std::size_t>(way), {});
    for (int l = 0; l < way; ++l) {
      auto& per_support = out.matched[static_cast<std::size_t>(q)][static_cast<std::size_t>(l)];
      per_support.assign(static_cast<std::size_t>(shot), {});
      for (int z = 0; z < shot; ++z) {
        const auto& enc_n = sup[static_cast<std::size_t>(l)][static_cast<std::size_t>(z)];
        const auto& enc_q = qry[static_cast<std::size_t>(q)];
        const int flat_support = l * shot + z;
        auto& scores_nd = per_support[static_cast<std::size_t>(z)];

        auto pair_score = [&](int d_sup, int s_sup, int d_qry, int s_qry,
                              int set_index) -> Tensor {
          Tensor desc;
          if (kind == DescriptorKind::OtimesF) {
            desc = theta_full({enc_n.maps[static_cast<std::size_t>(d_sup)]
                                         [static_cast<std::size_t>(s_sup)]},
                              enc_q.maps[static_cast<std::size_t>(d_qry)]
                                        [static_cast<std::size_t>(s_qry)],
                              config_.pn_kind(), pn);
          } else {
            desc = pair_descriptor(enc_n.psis[static_cast<std::size_t>(d_sup)]
                                             [static_cast<std::size_t>(s_sup)],
                                   enc_q.psis[static_cast<std::size_t>(d_qry)]
                                             [static_cast<std::size_t>(s_qry)]);
          }
          return sn_->relate(desc, set_index);
        };

        if (mode == MatchMode::Intra) {
          for (int d = 0; d < levels; ++d) {
            Tensor zeta_prime;
            if (strategy == MatchStrategy::CM || strategy == MatchStrategy::GM) {
              Tensor acc = Tensor::scalar(0.0);
              for (int si = 0; si < scales; ++si) {
                for (int sj = 0; sj < scales; ++sj) {
                  Tensor alpha;
                  if (strategy == MatchStrategy::CM) {
                    alpha = cosine_match(
                        enc_n.psis[static_cast<std::size_t>(d)][static_cast<std::size_t>(si)],
                        enc_q.psis[static_cast<std::size_t>(d)][static_cast<std::size_t>(sj)]);
                  } else {
                    alpha = mul(gate_sup[static_cast<std::size_t>(flat_support)]
                                        [static_cast<std::size_t>(d)][static_cast<std::size_t>(si)],
                                gate_qry[static_cast<std::size_t>(q)][static_cast<std::size_t>(d)]
                                        [static_cast<std::size_t>(sj)]);
                  }
                  acc = add(acc, weighted_score(alpha, pair_score(d, si, d, sj, sn_set(d))));
                  ++out.pair_evaluations;
                }
              }
              zeta_prime = mul_scalar(acc, 1.0 / static_cast<double>(scales * scales));
            } else if (strategy == MatchStrategy::OT) {
              std::vector<Tensor> affinities;
              std::vector<double> cost;
              affinities.reserve(static_cast<std::size_t>(scales) * scales);
              for (int si = 0; si < scales; ++si) {
                for (int sj = 0; sj < scales; ++sj) {
                  Tensor a = cosine_match(
                      enc_n.psis[static_cast<std::size_t>(d)][static_cast<std::size_t>(si)],
                      enc_q.psis[static_cast<std::size_t>(d)][static_cast<std::size_t>(sj)]);
                  cost.push_back(a.value());
                  affinities.push_back(std::move(a));
                  ++out.pair_evaluations;
                }
              }
              const auto rows = detached_rows(enc_n.psis[static_cast<std::size_t>(d)]);
              const auto cols = detached_rows(enc_q.psis[static_cast<std::size_t>(d)]);
              TransportPlan plan = solve_transport(cost, scales, scales,
                                                   transport_marginals(rows, cols),
                                                   transport_marginals(cols, rows));
              Tensor acc = Tensor::scalar(0.0);
              for (std::size_t i = 0; i < affinities.size(); ++i) {
                if (plan.flow[i] == 0.0) continue;
                acc = add(acc, mul_scalar(affinities[i], plan.flow[i]));
              }
              zeta_prime = add_scalar(neg(acc), 1.0);
            } else {  // GR
              std::vector<int> node_scales;
              for (int s = 1; s <= scales; ++s) node_scales.push_back(s);
              for (int s = 1; s <= scales; ++s) node_scales.push_back(s);
              zeta_prime = gr_->score(enc_n.psis[static_cast<std::size_t>(d)],
                                      enc_q.psis[static_cast<std::size_t>(d)], node_scales,
                                      scales, sn_set(d));
              out.pair_evaluations += static_cast<long>(scales) * scales;
            }
            scores_nd.push_back(zeta_prime);
          }
        } else {  // inter-level: one score over all (d,s) reps through shared learners
          std::vector<Tensor> reps_n, reps_q;
          std::vector<int> rep_scales;
          for (int d = 0; d < levels; ++d) {
            for (int s = 0; s < scales; ++s) {
              reps_n.push_back(
                  enc_n.psis[static_cast<std::size_t>(d)][static_cast<std::size_t>(s)]);
              reps_q.push_back(
                  enc_q.psis[static_cast<std::size_t>(d)][static_cast<std::size_t>(s)]);
              rep_scales.push_back(s + 1);
            }
          }
          const int rep_count = static_cast<int>(reps_n.size());
          Tensor zeta_prime;
          if (strategy == MatchStrategy::CM || strategy == MatchStrategy::GM) {
            Tensor acc = Tensor::scalar(0.0);
            for (int i = 0; i < rep_count; ++i) {
              for (int j = 0; j < rep_count; ++j) {
                Tensor alpha;
                if (strategy == MatchStrategy::CM) {
                  alpha = cosine_match(reps_n[static_cast<std::size_t>(i)],
                                       reps_q[static_cast<std::size_t>(j)]);
                } else {
                  const int di = i / scales, si = i % scales;
                  const int dj = j / scales, sj = j % scales;
                  alpha = mul(gate_sup[static_cast<std::size_t>(flat_support)]
                                      [static_cast<std::size_t>(di)][static_cast<std::size_t>(si)],
                              gate_qry[static_cast<std::size_t>(q)][static_cast<std::size_t>(dj)]
                                      [static_cast<std::size_t>(sj)]);
                }
                Tensor desc = pair_descriptor(reps_n[static_cast<std::size_t>(i)],
                                              reps_q[static_cast<std::size_t>(j)]);
                acc = add(acc, weighted_score(alpha, sn_->relate(desc, 0)));
                ++out.pair_evaluations;
              }
            }
            zeta_prime = mul_scalar(acc, 1.0 / static_cast<double>(rep_count * rep_count));
          } else if (strategy == MatchStrategy::OT) {
            std::vector<Tensor> affinities;
            std::vector<double> cost;
            for (int i = 0; i < rep_count; ++i) {
              for (int j = 0; j < rep_count; ++j) {
                Tensor a = cosine_match(reps_n[static_cast<std::size_t>(i)],
                                        reps_q[static_cast<std::size_t>(j)]);
                cost.push_back(a.value());
                affinities.push_back(std::move(a));
                ++out.pair_evaluations;
              }
            }
            const auto rows = detached_rows(reps_n);
            const auto cols = detached_rows(reps_q);
            TransportPlan plan =
                solve_transport(cost, rep_count, rep_count, transport_marginals(rows, cols),
                                transport_marginals(cols, rows));
            Tensor acc = Tensor::scalar(0.0);
            for (std::size_t i = 0; i < affinities.size(); ++i) {
              if (plan.flow[i] == 0.0) continue;
              acc = add(acc, mul_scalar(affinities[i], plan.flow[i]));
            }
            zeta_prime = add_scalar(neg(acc), 1.0);
          } else {  // GR, shared set over all reps
            std::vector<int> node_scales = rep_scales;
            node_scales.insert(node_scales.end(), rep_scales.begin(), rep_scales.end());
            zeta_prime = gr_->score(reps_n, reps_q, node_scales, scales, 0);
            out.pair_evaluations += static_cast<long>(rep_count) * rep_count;
          }
          scores_nd.push_back(zeta_prime);
        }
      }
    }
  }
  return out;
}

UnsupervisedScores FewShotModel::score_unsupervised(const std::vector<Image>& aug_x,
                                                    const std::vector<Image>& aug_y) const {
  if (aug_x.size() != aug_y.size() || aug_x.size() < 2) {
    throw ContractError("unsupervised scoring expects equal augmentation counts >= 2");
  }
  const int m = static_cast<int>(aug_x.size());
  const int levels = config_.levels;
  const PnParams pn = config_.pn_params();
  const auto kind = config_.descriptor_kind();

  // Scale 1 only; the unsupervised objective is defined over levels.
  std::vector<ImageEncoding> enc_x, enc_y;
  for (const auto& img : aug_x) enc_x.push_back(encode_image(img, true));
  for (const auto& img : aug_y) enc_y.push_back(encode_image(img, true));

  auto relation = [&](const ImageEncoding& a, const ImageEncoding& b, int d) {
    Tensor desc;
    if (kind == DescriptorKind::OtimesF) {
      desc = theta_full({a.maps[static_cast<std::size_t>(d)][0]},
                        b.maps[static_cast<std::size_t>(d)][0], config_.pn_kind(), pn);
    } else {
      desc = pair_descriptor(a.psis[static_cast<std::size_t>(d)][0],
                             b.psis[static_cast<std::size_t>(d)][0]);
    }
    return sn_->relate(desc, sn_set(d));
  };

  UnsupervisedScores out;
  out.zeta_x.assign(static_cast<std::size_t>(levels), {});
  out.zeta_y.assign(static_cast<std::size_t>(levels), {});
  out.zeta_cross.assign(static_cast<std::size_t>(levels), {});
  for (int d = 0; d < levels; ++d) {
    auto& zx = out.zeta_x[static_cast<std::size_t>(d)];
    auto& zy = out.zeta_y[static_cast<std::size_t>(d)];
    auto& zc = out.zeta_cross[static_cast<std::size_t>(d)];
    zx.assign(static_cast<std::size_t>(m), {});
    zy.assign(static_cast<std::size_t>(m), {});
    zc.assign(static_cast<std::size_t>(m), {});
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        zx[static_cast<std::size_t>(i)].push_back(
            relation(enc_x[static_cast<std::size_t>(i)], enc_x[static_cast<std::size_t>(j)], d));
        zy[static_cast<std::size_t>(i)].push_back(
            relation(enc_y[static_cast<std::size_t>(i)], enc_y[static_cast<std::size_t>(j)], d));
        zc[static_cast<std::size_t>(i)].push_back(
            relation(enc_x[static_cast<std::size_t>(i)], enc_y[static_cast<std::size_t>(j)], d));
      }
    }
  }
  return out;
}

// --- episode score containers --------------------------------------------------

Tensor EpisodeScores::relation_loss() const {
  if (!plain.empty()) return loss_supervised(plain, query_class);
  if (!scalewise.empty()) return loss_scalewise(scalewise, query_class);
  if (!matched.empty()) return loss_matched(matched, query_class);
  throw ContractError("episode scores are empty");
}

std::vector<int> EpisodeScores::predictions() const {
  std::vector<int> preds;
  const std::size_t num_queries =
      !plain.empty() ? plain.size() : (!scalewise.empty() ? scalewise.size() : matched.size());
  preds.reserve(num_queries);
  for (std::size_t q = 0; q < num_queries; ++q) {
    std::vector<std::vector<std::pair<double, double>>> votes;
    if (!plain.empty()) {
      for (const auto& per_class : plain[q]) {
        std::vector<std::pair<double, double>> v;
        for (const auto& score : per_class) v.emplace_back(1.0, score.value());
        votes.push_back(std::move(v));
      }
    } else if (!scalewise.empty()) {
      for (const auto& per_class : scalewise[q]) {
        std::vector<std::pair<double, double>> v;
        for (const auto& per_level : per_class) {
          for (std::size_t si = 0; si < per_level.size(); ++si) {
            for (std::size_t sj = 0; sj < per_level[si].size(); ++sj) {
              v.emplace_back(1.0 / (static_cast<double>(si + 1) * static_cast<double>(sj + 1)),
                             per_level[si][sj].value());
            }
          }
        }
        votes.push_back(std::move(v));
      }
    } else {
      for (const auto& per_class : matched[q]) {
        std::vector<std::pair<double, double>> v;
        for (const auto& per_support : per_class) {
          for (const auto& score : per_support) v.emplace_back(1.0, score.value());
        }
        votes.push_back(std::move(v));
      }
    }
    preds.push_back(infer_class(votes));
  }
  return preds;
}

Tensor UnsupervisedScores::loss() const { return loss_unsupervised(zeta_x, zeta_y, zeta_cross); }

double UnsupervisedScores::mean_positive() const {
  double acc = 0.0;
  long count = 0;
  for (const auto* mats : {&zeta_x, &zeta_y}) {
    for (const auto& mat : *mats) {
      for (const auto& row : mat) {
        for (const auto& entry : row) {
          acc += entry.value();
          ++count;
        }
      }
    }
  }
  return acc / static_cast<double>(count);
}

double UnsupervisedScores::mean_negative() const {
  double acc = 0.0;
  long count = 0;
  for (const auto& mat : zeta_cross) {
    for (const auto& row : mat) {
      for (const auto& entry : row) {
        acc += entry.value();
        ++count;
      }
    }
  }
  return acc / static_cast<double>(count);
}

double UnsupervisedScores::ordering_accuracy() const {
  std::vector<double> pos, neg;
  for (const auto* mats : {&zeta_x, &zeta_y}) {
    for (const auto& mat : *mats) {
      for (const auto& row : mat) {
        for (const auto& entry : row) pos.push_back(entry.value());
      }
    }
  }
  for (const auto& mat : zeta_cross) {
    for (const auto& row : mat) {
      for (const auto& entry : row) neg.push_back(entry.value());
    }
  }
  long correct = 0;
  for (double p : pos) {
    for (double n : neg) {
      if (p > n) ++correct;
    }
  }
  return static_cast<double>(correct) / (static_cast<double>(pos.size()) * neg.size());
}

// --- data -----------------------------------------------------------------------

DataBundle load_data(const RunConfig& config) {
  DataBundle bundle;
  if (config.dataset == "synthetic") {
    bundle.dataset = std::make_unique<Dataset>(
        gen_synthetic(config.synth_classes + config.synth_test_classes, config.samples_per_class,
                      seed_for_dataset(config.seed)));
    auto [train, test] = split_dataset(*bundle.dataset, config.synth_classes);
    bundle.train = train;
    bundle.test = test;
    return bundle;
  }
  std::string root = config.dataset_root;
  if (const char* env = std::getenv("MLSO_DATA_ROOT")) root = env;
  if (root.empty()) throw ConfigError("omniglot requires dataset_root or MLSO_DATA_ROOT");
  Dataset ds = load_omniglot(root);
  if (config.omniglot_rotations) {
    Dataset expanded;
    expanded.height = ds.height;
    expanded.width = ds.width;
    for (int c = 0; c < ds.num_classes(); ++c) {
      for (int quarter = 0; quarter < 4; ++quarter) {
        std::string id = ds.class_ids[static_cast<std::size_t>(c)];
        if (quarter > 0) id += "_rot" + std::to_string(quarter * 90);
        std::vector<Image> samples;
        for (const auto& img : ds.samples[static_cast<std::size_t>(c)]) {
          samples.push_back(rotate_image_quarters(img, quarter));
        }
        expanded.class_ids.push_back(std::move(id));
        expanded.samples.push_back(std::move(samples));
      }
    }
    ds = std::move(expanded);
  }
  bundle.dataset = std::make_unique<Dataset>(std::move(ds));
  auto [train, test] = split_dataset(*bundle.dataset, config.train_class_count);
  bundle.train = train;
  bundle.test = test;
  return bundle;
}

// --- training loop -----------------------------------------------------------

namespace {

struct MetricsWriter {
  std::FILE* file = nullptr;

  explicit MetricsWriter(const std::filesystem::path& path) {
    file = std::fopen(path.c_str(), "wb");
    if (!file) throw ContractError("cannot open metrics file " + path.string());
  }
  ~MetricsWriter() {
    if (file) std::fclose(file);
  }
  void write(long episode, double loss_r, double loss_aux, double acc) {
    std::fprintf(file, "%ld %.6f %.6f %.6f\n", episode, loss_r, loss_aux, acc);
  }
};

std::pair<const Image*, const Image*> sample_unsupervised_pair(const SplitView& view, Rng& rng) {
  const int c1 = rng.uniform_int(0, view.num_classes() - 1);
  const int i1 = rng.uniform_int(0, static_cast<int>(view.class_samples(c1).size()) - 1);
  int c2 = c1, i2 = i1;
  while (c2 == c1 && i2 == i1) {
    c2 = rng.uniform_int(0, view.num_classes() - 1);
    i2 = rng.uniform_int(0, static_cast<int>(view.class_samples(c2).size()) - 1);
  }
  return {&view.class_samples(c1)[static_cast<std::size_t>(i1)],
          &view.class_samples(c2)[static_cast<std::size_t>(i2)]};
}

}  // namespace

TrainResult train_run(const RunConfig& config, std::ostream& log) {
  config.validate();
  std::filesystem::create_directories(config.out);
  DataBundle data = load_data(config);
  FewShotModel model(config, seed_for_init(config.seed));
  Adam adam(model.params(), AdamConfig{config.lr, config.beta1, config.beta2, 1e-8});

  TrainResult result;
  result.checkpoint_path = std::filesystem::path(config.out) / "checkpoint.bin";
  result.metrics_path = std::filesystem::path(config.out) / "metrics.txt";

  MetricsWriter metrics(result.metrics_path);
  const std::uint64_t train_seed = seed_for_train_sampler(config.seed);
  const AugmentationSpec aug_spec{};

  double interval_loss = 0.0, interval_aux = 0.0;
  long interval_correct = 0, interval_total = 0;
  double interval_order = 0.0;
  long interval_count = 0;

  for (long ep = 1; ep <= config.episodes; ++ep) {
    const std::uint64_t episode_seed = splitmix64(train_seed + static_cast<std::uint64_t>(ep));
    Rng ep_rng(episode_seed);
    Tape tape;
    TapeScope scope(tape);
    Tensor total;
    double loss_r_value = 0.0, aux_value = 0.0;

    if (!config.unsupervised) {
      Episode episode =
          sample_episode(data.train, config.way, config.shot, config.queries_train, ep_rng);
      EpisodeScores scores = model.score_episode(episode);
      Tensor loss_r = scores.relation_loss();
      loss_r_value = loss_r.value();
      total = loss_r;
      if (config.valsd) {
        Tensor aux = loss_valsd(scores.valsd_logits, scores.valsd_labels);
        aux_value = aux.value();
        total = add(total, mul_scalar(aux, config.valsd_weight));
      }
      const auto preds = scores.predictions();
      for (std::size_t q = 0; q < preds.size(); ++q) {
        if (preds[q] == scores.query_class[q]) ++interval_correct;
        ++interval_total;
      }
    } else {
      auto [img_x, img_y] = sample_unsupervised_pair(data.train, ep_rng);
      std::vector<Image> aug_x, aug_y;
      for (int i = 0; i < config.m_aug; ++i) aug_x.push_back(augment(*img_x, aug_spec, ep_rng));
      for (int i = 0; i < config.m_aug; ++i) aug_y.push_back(augment(*img_y, aug_spec, ep_rng));
      UnsupervisedScores scores = model.score_unsupervised(aug_x, aug_y);
      Tensor loss_r = scores.loss();
      loss_r_value = loss_r.value();
      total = loss_r;
      interval_order += scores.ordering_accuracy();
    }

    if (!std::isfinite(total.value())) {
      log << "non-finite loss at episode " << ep << " (episode seed " << episode_seed
          << "); aborting\n";
      throw ContractError("training aborted: non-finite loss at episode " + std::to_string(ep));
    }

    GradientMap grads = tape.backward(total);
    adam.step(grads);

    interval_loss += loss_r_value;
    interval_aux += aux_value;
    ++interval_count;
    result.final_loss = loss_r_value;

    if (ep % config.log_interval == 0) {
      const double denom = static_cast<double>(interval_count);
      const double acc = config.unsupervised
                             ? interval_order / denom
                             : (interval_total > 0 ? static_cast<double>(interval_correct) /
                                                         static_cast<double>(interval_total)
                                                   : 0.0);
      metrics.write(ep, interval_loss / denom, interval_aux / denom, acc);
      interval_loss = interval_aux = interval_order = 0.0;
      interval_correct = interval_total = 0;
      interval_count = 0;
    }
  }

  save_checkpoint(result.checkpoint_path, model.params());
  return result;
}

EvalResult evaluate_model(const FewShotModel& model, const SplitView& test,
                          const RunConfig& config) {
  const std::uint64_t eval_seed = seed_for_eval_sampler(config.seed);
  std::vector<double> per_episode;
  per_episode.reserve(static_cast<std::size_t>(config.eval_episodes));
  for (long e = 1; e <= config.eval_episodes; ++e) {
    Rng rng(splitmix64(eval_seed + static_cast<std::uint64_t>(e)));
    Episode episode = sample_episode(test, config.way, config.shot, config.queries_test, rng);
    EpisodeScores scores = model.score_episode(episode);
    const auto preds = scores.predictions();
    long correct = 0;
    for (std::size_t q = 0; q < preds.size(); ++q) {
      if (preds[q] == scores.query_class[q]) ++correct;
    }
    per_episode.push_back(static_cast<double>(correct) / static_cast<double>(preds.size()));
  }
  return summarize_accuracies(per_episode);
}

EvalResult summarize_accuracies(const std::vector<double>& per_episode) {
  if (per_episode.empty()) throw ContractError("summarize_accuracies: no episodes");
  EvalResult out;
  out.episodes = static_cast<long>(per_episode.size());
  double mean = 0.0;
  for (double a : per_episode) mean += a;
  mean /= static_cast<double>(per_episode.size());
  double var = 0.0;
  for (double a : per_episode) var += (a - mean) * (a - mean);
  const double stddev =
      per_episode.size() > 1 ? std::sqrt(var / static_cast<double>(per_episode.size() - 1)) : 0.0;
  out.accuracy = mean;
  out.ci_half_width = 1.96 * stddev / std::sqrt(static_cast<double>(per_episode.size()));
  return out;
}

std::unique_ptr<FewShotModel> load_model(const RunConfig& config,
                                         const std::filesystem::path& checkpoint) {
  auto model = std::make_unique<FewShotModel>(config, seed_for_init(config.seed));
  load_checkpoint(checkpoint, model->params());
  return model;
}

double eval_valsd_accuracy(const FewShotModel& model, const SplitView& view, int episodes,
                           std::uint64_t seed) {
  const RunConfig& config = model.config();
  long correct = 0, total = 0;
  for (int e = 1; e <= episodes; ++e) {
    Rng rng(splitmix64(seed + static_cast<std::uint64_t>(e)));
    Episode episode = sample_episode(view, config.way, config.shot, config.queries_test, rng);
    auto score_image = [&](const Image& img) {
      auto reps = model.pooled_reps(img);
      for (int d = 0; d < config.levels; ++d) {
        for (int s = 0; s < config.scales; ++s) {
          Tensor logits = model.valsd_logits(
              reps[static_cast<std::size_t>(d)][static_cast<std::size_t>(s)], d + 1);
          int argmax = 0;
          for (int i = 1; i < logits.dim(0); ++i) {
            if (logits.data()[static_cast<std::size_t>(i)] >
                logits.data()[static_cast<std::size_t>(argmax)]) {
              argmax = i;
            }
          }
          if (argmax == d * config.scales + s) ++correct;
          ++total;
        }
      }
    };
    for (const auto& per_class : episode.support) {
      for (const Image* img : per_class) score_image(*img);
    }
    for (const Image* img : episode.queries) score_image(*img);
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::pair<double, double> eval_unsupervised_gap(const FewShotModel& model, const SplitView& view,
                                                int pair_count, std::uint64_t seed) {
  const RunConfig& config = model.config();
  const AugmentationSpec aug_spec{};
  double pos = 0.0, neg = 0.0;
  for (int e = 1; e <= pair_count; ++e) {
    Rng rng(splitmix64(seed + static_cast<std::uint64_t>(e)));
    auto [img_x, img_y] = sample_unsupervised_pair(view, rng);
    std::vector<Image> aug_x, aug_y;
    for (int i = 0; i < config.m_aug; ++i) aug_x.push_back(augment(*img_x, aug_spec, rng));
    for (int i = 0; i < config.m_aug; ++i) aug_y.push_back(augment(*img_y, aug_spec, rng));
    UnsupervisedScores scores = model.score_unsupervised(aug_x, aug_y);
    pos += scores.mean_positive();
    neg += scores.mean_negative();
  }
  return {pos / pair_count, neg / pair_count};
}

}  // namespace mlso
