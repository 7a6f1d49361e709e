// Online instance matching memory (identity lookup table + circular queue of
// unlabeled features) and the OIM / triplet / TOIM loss family.
#pragma once

#include <random>

#include "alignps/ops.hpp"
#include "alignps/synth_data.hpp"

namespace alignps {

struct ReidMemoryConfig {
  int num_ids = 0;        // L, fixed at dataset load
  int d = 256;
  int queue_size = 64;    // Q
  double temperature = 0.1;
  double momentum = 0.5;  // LUT update rate
};

class ReidMemory {
 public:
  ReidMemory() = default;
  ReidMemory(const ReidMemoryConfig& cfg, std::mt19937_64& rng);

  const ReidMemoryConfig& config() const { return cfg_; }
  int num_ids() const { return cfg_.num_ids; }
  int queue_count() const { return static_cast<int>(queue_.size()); }

  const Tensord& lut() const { return lut_; }
  // Queue rows, oldest first.
  Tensord queue_matrix() const;
  // (L + |U|) x D similarity targets: LUT rows first, then queue rows.
  Tensord combined_matrix() const;

  // LUT rows move toward the mean embedding of their identity and are
  // renormalized; unlabeled embeddings enter the FIFO queue. Exactly one call
  // per optimizer step, after the backward pass.
  void update(const Tensord& embeddings, const std::vector<int>& identities);

  // Checkpoint access.
  void set_state(Tensord lut, Tensord queue, int queue_len);
  const std::vector<Eigen::VectorXd>& queue_rows() const { return queue_; }

 private:
  ReidMemoryConfig cfg_;
  Tensord lut_;  // L x D, unit rows
  std::vector<Eigen::VectorXd> queue_;  // FIFO, front = oldest
};

// p_i = exp(v_i . x / tau) / (sum_j exp(v_j . x / tau) + sum_k exp(u_k . x / tau))
// x: (B,D) unit rows -> (B, L+|U|) rows summing to one.
Var oim_probabilities(const Var& embeddings, const ReidMemory& mem);

// Probabilities renormalized over the labeled entries only -> (B, L).
Var oim_labeled_posteriors(const Var& embeddings, const ReidMemory& mem);

// Mean focal-weighted negative log-likelihood over the labeled samples of the
// batch; unlabeled samples are excluded (they only feed the queue). The
// memory is a constant: no gradient reaches V or U.
Var oim_loss(const Var& embeddings, const std::vector<int>& identities, const ReidMemory& mem,
             bool focal = false, double gamma_f = 2.0);

struct TripletConfig {
  double margin = 0.3;       // M
  int samples_per_id = 4;    // S, enforced upstream when sampling locations
  bool use_lut_anchors = true;
};

// Hinge triplet loss over candidate sets X_m = {batch embeddings of identity
// m} (+ v_m with LUT anchors): positives are within-set pairs, negatives are
// cross-set pairs, mean of [M + D_pos - D_neg]_+ over all combinations.
Var toim_triplet_loss(const Var& embeddings, const std::vector<int>& identities,
                      const ReidMemory& mem, const TripletConfig& cfg);

// Triplet + OIM.
Var toim_loss(const Var& embeddings, const std::vector<int>& identities, const ReidMemory& mem,
              const TripletConfig& cfg, bool focal = false, double gamma_f = 2.0);

}  // namespace alignps
