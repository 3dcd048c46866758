#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "affseg/model.hpp"
#include "affseg/optim.hpp"

namespace affseg {

/// Training protocol: Adam at a fixed learning rate, batch-averaged
/// gradients, and the two-phase loss-weight schedule that favours action
/// recognition early and balances both losses late.
struct TrainConfig {
  int epochs = 200;
  int switch_epoch = 150;  // first epoch using the second lambda pair
  std::pair<double, double> lambda_first{0.2, 0.8};
  std::pair<double, double> lambda_second{0.5, 0.5};
  double learning_rate = 2e-5;
  int batch_size = 2;
  uint64_t seed = 1;
  bool parallel_batch = true;  // run batch members on separate threads

  int checkpoint_every = 0;              // epochs between periodic saves; 0 = final only
  std::filesystem::path checkpoint_path; // empty: never write checkpoints

  void validate() const;  // throws ConfigError
  /// Switch epoch preserving the reference 150/200 ratio for any budget.
  static int scaled_switch_epoch(int epochs) { return epochs * 3 / 4; }
};

/// (lambda1, lambda2) in effect at a 0-based epoch index.
std::pair<double, double> lambda_schedule(int epoch, const TrainConfig& config);

struct EpochStats {
  int epoch = 0;
  double lambda1 = 0.0, lambda2 = 0.0;
  double l_total = 0.0, l_seg = 0.0, l_action = 0.0;
};

/// Serializable optimizer/loop state; checkpoints restore training
/// bit-exactly from it.
struct TrainState {
  int next_epoch = 0;
  long adam_t = 0;
  std::string rng_state;            // mt19937_64 stream state
  std::vector<AdamMoments> moments; // registry order
};

struct TrainHooks {
  std::function<void(const EpochStats&)> on_epoch;
};

/// Runs the training loop over preprocessed sequences: seeded shuffling
/// per epoch, gradients averaged over each batch, one Adam step per
/// batch, loss recorded at the last frame only (the batch type carries
/// no other labels). A non-finite loss aborts with DivergenceError.
/// Pass a TrainState loaded from a checkpoint to resume.
std::vector<EpochStats> train(AffordanceModel& model, const std::vector<SequenceBatch>& dataset,
                              const TrainConfig& config, TrainState* state = nullptr,
                              const TrainHooks& hooks = {});

// --- checkpoints -----------------------------------------------------------
// Binary layout: magic "AFSG", u32 version, JSON model config, loop
// counters, RNG stream, then named tensors (u32 name length, name, u32
// rank, u32 extents, f64 little-endian values) for every parameter and
// its Adam moments.

struct Checkpoint {
  ModelConfig config;
  TrainState state;
  struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;
  };
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const AffordanceModel& model,
                     const TrainState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Copies parameters (and moments into `state` when given) into a model
/// whose config must match the checkpoint header.
void apply_checkpoint(const Checkpoint& checkpoint, AffordanceModel& model,
                      TrainState* state = nullptr);

/// history CSV: epoch, lambda1, lambda2, l_total, l_seg, l_action.
void write_history_csv(const std::filesystem::path& path, const std::vector<EpochStats>& history,
                       bool append = false);

}  // namespace affseg
