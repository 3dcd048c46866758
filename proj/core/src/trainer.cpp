#include "affseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include "affseg/errors.hpp"

namespace affseg {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be positive");
  if (switch_epoch < 0 || switch_epoch >= epochs) {
    throw ConfigError("train: switch epoch " + std::to_string(switch_epoch) +
                      " must lie in [0, epochs)");
  }
  auto check_pair = [](const std::pair<double, double>& p, const char* which) {
    if (p.first < 0.0 || p.first > 1.0 || p.second < 0.0 || p.second > 1.0) {
      throw ConfigError(std::string("train: ") + which + " lambda pair (" +
                        std::to_string(p.first) + ", " + std::to_string(p.second) +
                        ") must lie in [0,1]");
    }
    if (std::abs(p.first + p.second - 1.0) > 1e-9) {
      throw ConfigError(std::string("train: ") + which + " lambda pair (" +
                        std::to_string(p.first) + ", " + std::to_string(p.second) +
                        ") does not sum to 1");
    }
  };
  check_pair(lambda_first, "first");
  check_pair(lambda_second, "second");
  if (learning_rate <= 0.0) throw ConfigError("train: learning rate must be positive");
  if (batch_size < 1) throw ConfigError("train: batch size must be positive");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint interval must be >= 0");
}

std::pair<double, double> lambda_schedule(int epoch, const TrainConfig& config) {
  if (epoch < 0 || epoch >= config.epochs) {
    throw ConfigError("lambda_schedule: epoch " + std::to_string(epoch) + " outside [0," +
                      std::to_string(config.epochs) + ")");
  }
  return epoch < config.switch_epoch ? config.lambda_first : config.lambda_second;
}

namespace {

std::string serialize_rng(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void restore_rng(std::mt19937_64& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (is.fail()) throw DataError("checkpoint: malformed RNG state");
}

struct MemberResult {
  double l_total = 0.0, l_seg = 0.0, l_action = 0.0;
  GradSink sink;
  std::exception_ptr error;
};

void run_member(const AffordanceModel& model, const SequenceBatch& batch, double lambda1,
                double lambda2, int epoch, size_t seq_index, MemberResult* result) {
  try {
    AffordanceModel::Output out = model.forward_sequence(batch);
    LossBreakdown loss = compute_loss(out.seg_logits, out.action_logits, batch.mask,
                                      batch.action_label, lambda1, lambda2);
    result->l_total = loss.total->value();
    result->l_seg = loss.seg->value();
    result->l_action = loss.action->value();
    if (!std::isfinite(result->l_total)) {
      throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) +
                            ", sequence " + std::to_string(seq_index));
    }
    backward(loss.total, &result->sink);
  } catch (...) {
    result->error = std::current_exception();
  }
}

}  // namespace

std::vector<EpochStats> train(AffordanceModel& model, const std::vector<SequenceBatch>& dataset,
                              const TrainConfig& config, TrainState* state,
                              const TrainHooks& hooks) {
  config.validate();
  if (dataset.empty()) throw DataError("train: empty dataset");

  const auto& entries = model.params().entries();

  TrainState local;
  std::mt19937_64 rng(config.seed);
  if (state && !state->rng_state.empty()) {
    local = *state;
    restore_rng(rng, local.rng_state);
    if (local.moments.size() != entries.size()) {
      throw DataError("train: resumed moment count does not match model parameters");
    }
  } else {
    local.moments.resize(entries.size());
  }

  const AdamConfig adam{config.learning_rate};
  std::vector<size_t> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<EpochStats> history;
  auto maybe_checkpoint = [&](bool force) {
    if (config.checkpoint_path.empty()) return;
    if (!force && config.checkpoint_every <= 0) return;
    local.rng_state = serialize_rng(rng);
    save_checkpoint(config.checkpoint_path, model, local);
  };

  for (int epoch = local.next_epoch; epoch < config.epochs; ++epoch) {
    const auto [lambda1, lambda2] = lambda_schedule(epoch, config);
    std::shuffle(order.begin(), order.end(), rng);

    double sum_total = 0.0, sum_seg = 0.0, sum_action = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      const size_t count =
          std::min<size_t>(static_cast<size_t>(config.batch_size), order.size() - start);
      std::vector<MemberResult> results(count);

      if (config.parallel_batch && count > 1) {
        std::vector<std::thread> pool;
        pool.reserve(count);
        for (size_t m = 0; m < count; ++m) {
          pool.emplace_back(run_member, std::cref(model), std::cref(dataset[order[start + m]]),
                            lambda1, lambda2, epoch, order[start + m], &results[m]);
        }
        for (auto& t : pool) t.join();
      } else {
        for (size_t m = 0; m < count; ++m) {
          run_member(model, dataset[order[start + m]], lambda1, lambda2, epoch,
                     order[start + m], &results[m]);
        }
      }
      for (auto& r : results) {
        if (r.error) std::rethrow_exception(r.error);
      }

      // Average member gradients, then one Adam step.
      model.params().zero_grad();
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& r : results) r.sink.merge_scaled(inv);

      ++local.adam_t;
      for (size_t i = 0; i < entries.size(); ++i) {
        adam_step(entries[i].tensor->data(), entries[i].tensor->grad(), local.moments[i], adam,
                  local.adam_t);
      }

      for (const auto& r : results) {
        sum_total += r.l_total;
        sum_seg += r.l_seg;
        sum_action += r.l_action;
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lambda1 = lambda1;
    stats.lambda2 = lambda2;
    const double inv_n = 1.0 / static_cast<double>(dataset.size());
    stats.l_total = sum_total * inv_n;
    stats.l_seg = sum_seg * inv_n;
    stats.l_action = sum_action * inv_n;
    history.push_back(stats);
    if (hooks.on_epoch) hooks.on_epoch(stats);

    local.next_epoch = epoch + 1;
    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 &&
        epoch + 1 < config.epochs) {
      maybe_checkpoint(false);
    }
  }

  local.rng_state = serialize_rng(rng);
  if (!config.checkpoint_path.empty()) {
    save_checkpoint(config.checkpoint_path, model, local);
  }
  if (state) *state = std::move(local);
  return history;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'A', 'F', 'S', 'G'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void write_doubles(std::ostream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

struct Reader {
  std::ifstream in;
  std::string path;

  void read_raw(void* dst, size_t n) {
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n) {
      throw DataError("checkpoint " + path + ": truncated file");
    }
  }
  uint32_t read_u32() {
    uint32_t v;
    read_raw(&v, sizeof(v));
    return v;
  }
  uint64_t read_u64() {
    uint64_t v;
    read_raw(&v, sizeof(v));
    return v;
  }
  std::string read_string() {
    const uint32_t n = read_u32();
    std::string s(n, '\0');
    if (n) read_raw(s.data(), n);
    return s;
  }
  std::vector<double> read_doubles(size_t n) {
    std::vector<double> v(n);
    if (n) read_raw(v.data(), n * sizeof(double));
    return v;
  }
};

void write_named_tensor(std::ostream& os, const std::string& name, const std::vector<int>& shape,
                        const std::vector<double>& values) {
  write_string(os, name);
  write_u32(os, static_cast<uint32_t>(shape.size()));
  for (int d : shape) write_u32(os, static_cast<uint32_t>(d));
  write_doubles(os, values);
}

}  // namespace

const Checkpoint::NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const AffordanceModel& model,
                     const TrainState& state) {
  const auto& entries = model.params().entries();
  if (!state.moments.empty() && state.moments.size() != entries.size()) {
    throw std::invalid_argument("save_checkpoint: moment count does not match parameters");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("checkpoint " + path.string() + ": cannot open for write");

  os.write(kMagic, sizeof(kMagic));
  write_u32(os, kVersion);
  write_string(os, nlohmann::json(model.config()).dump());
  write_u32(os, static_cast<uint32_t>(state.next_epoch));
  write_u64(os, static_cast<uint64_t>(state.adam_t));
  write_string(os, state.rng_state);

  write_u32(os, static_cast<uint32_t>(entries.size()));
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    write_named_tensor(os, e.name, e.tensor->shape(), e.tensor->data());
    const int n = static_cast<int>(e.tensor->numel());
    static const std::vector<double> empty;
    const std::vector<double>& m =
        state.moments.empty() || state.moments[i].m.empty() ? empty : state.moments[i].m;
    const std::vector<double>& v =
        state.moments.empty() || state.moments[i].v.empty() ? empty : state.moments[i].v;
    std::vector<double> m_full = m.empty() ? std::vector<double>(static_cast<size_t>(n), 0.0) : m;
    std::vector<double> v_full = v.empty() ? std::vector<double>(static_cast<size_t>(n), 0.0) : v;
    write_named_tensor(os, e.name + ".adam_m", {n}, m_full);
    write_named_tensor(os, e.name + ".adam_v", {n}, v_full);
  }
  if (!os) throw DataError("checkpoint " + path.string() + ": write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r;
  r.path = path.string();
  r.in.open(path, std::ios::binary);
  if (!r.in) throw DataError("checkpoint " + path.string() + ": cannot open");

  char magic[4];
  r.read_raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("checkpoint " + path.string() + ": bad magic, not a checkpoint file");
  }
  const uint32_t version = r.read_u32();
  if (version != kVersion) {
    throw DataError("checkpoint " + path.string() + ": version mismatch (file " +
                    std::to_string(version) + ", supported " + std::to_string(kVersion) + ")");
  }

  Checkpoint ckpt;
  ckpt.config = nlohmann::json::parse(r.read_string()).get<ModelConfig>();
  ckpt.state.next_epoch = static_cast<int>(r.read_u32());
  ckpt.state.adam_t = static_cast<long>(r.read_u64());
  ckpt.state.rng_state = r.read_string();

  const uint32_t params = r.read_u32();
  ckpt.tensors.reserve(params * 3);
  for (uint32_t i = 0; i < params * 3; ++i) {
    Checkpoint::NamedTensor t;
    t.name = r.read_string();
    const uint32_t rank = r.read_u32();
    long numel = 1;
    for (uint32_t k = 0; k < rank; ++k) {
      t.shape.push_back(static_cast<int>(r.read_u32()));
      numel *= t.shape.back();
    }
    t.values = r.read_doubles(static_cast<size_t>(numel));
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void apply_checkpoint(const Checkpoint& checkpoint, AffordanceModel& model, TrainState* state) {
  if (!(checkpoint.config == model.config())) {
    throw ConfigError("checkpoint model config does not match the constructed model");
  }
  const auto& entries = model.params().entries();
  std::vector<AdamMoments> moments(entries.size());
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const Checkpoint::NamedTensor* t = checkpoint.find(e.name);
    if (!t) throw DataError("checkpoint: missing parameter " + e.name);
    if (t->shape != e.tensor->shape()) {
      throw DataError("checkpoint: parameter " + e.name + " has shape " +
                      shape_string(t->shape) + ", model expects " +
                      shape_string(e.tensor->shape()));
    }
    e.tensor->data() = t->values;
    const Checkpoint::NamedTensor* m = checkpoint.find(e.name + ".adam_m");
    const Checkpoint::NamedTensor* v = checkpoint.find(e.name + ".adam_v");
    if (!m || !v) throw DataError("checkpoint: missing moments for " + e.name);
    moments[i].m = m->values;
    moments[i].v = v->values;
  }
  if (state) {
    *state = checkpoint.state;
    state->moments = std::move(moments);
  }
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochStats>& history,
                       bool append) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const bool write_header = !append || !std::filesystem::exists(path);
  std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
  if (!os) throw DataError("history " + path.string() + ": cannot open for write");
  if (write_header) os << "epoch,lambda1,lambda2,l_total,l_seg,l_action\n";
  char buf[128];
  for (const auto& s : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.epoch, s.lambda1,
                  s.lambda2, s.l_total, s.l_seg, s.l_action);
    os << buf;
  }
}

}  // namespace affseg
