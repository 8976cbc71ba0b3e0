#pragma once

#include <cstdlib>
#include <thread>

#include "herbs/augment.hpp"
#include "herbs/checkpoint.hpp"
#include "herbs/net.hpp"
#include "herbs/synthetic.hpp"

namespace herbs {

// cosine decay from lr0 to 0 over total_steps
inline double lr_at(int64_t step, int64_t total_steps, double lr0) {
  if (total_steps <= 0) throw std::invalid_argument("lr_at: total_steps must be positive");
  if (step < 0 || step > total_steps) throw std::invalid_argument("lr_at: step out of range");
  return 0.5 * lr0 * (1.0 + std::cos(3.141592653589793 * double(step) / double(total_steps)));
}

// SGD with momentum and coupled weight decay. Gradients arrive summed over
// the micro-batches of an accumulation window; step() averages them over
// the actual window size before the update.
class Sgd {
public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ParamStore& params, double lr, int64_t window) {
    if (window < 1) throw std::invalid_argument("Sgd::step: empty window");
    if (velocity_.empty())
      for (size_t i = 0; i < params.size(); ++i)
        velocity_.push_back(Tensor::zeros(params.var(i).val().shape()));
    const double inv_window = 1.0 / double(window);
    for (size_t i = 0; i < params.size(); ++i) {
      Var& p = params.var(i);
      Tensor& v = velocity_[i];
      const Tensor* g = p.has_grad() ? &p.grad_raw() : nullptr;
      Tensor& value = p.mutable_val();
      for (int64_t j = 0; j < value.numel(); ++j) {
        const double grad = (g ? (*g)[j] * inv_window : 0.0) + weight_decay_ * value[j];
        v[j] = momentum_ * v[j] + grad;
        value[j] -= lr * v[j];
      }
    }
    params.zero_grads();
  }

  std::vector<Tensor>& velocity() { return velocity_; }
  const std::vector<Tensor>& velocity() const { return velocity_; }

private:
  double momentum_, weight_decay_;
  std::vector<Tensor> velocity_;
};

struct EpochRecord {
  int64_t epoch = 0;
  LossBreakdown losses;  // means over the epoch's micro-batches
  double temperature = 0.0;
  double lr = 0.0;  // at the first optimizer step of the epoch
  int64_t optimizer_steps = 0;
};

inline int64_t micro_batches_per_epoch(int64_t n_samples, int64_t batch_size) {
  return (n_samples + batch_size - 1) / batch_size;
}

inline int64_t optimizer_steps_per_epoch(int64_t n_samples, const TrainConfig& cfg) {
  const int64_t micro = micro_batches_per_epoch(n_samples, cfg.batch_size);
  return (micro + cfg.accum_steps - 1) / cfg.accum_steps;
}

inline int64_t env_worker_cap() {
  const char* env = std::getenv("HERBS_NUM_WORKERS");
  if (!env) return 1;
  const long v = std::strtol(env, nullptr, 10);
  if (v < 1) return 1;
  const long hw = long(std::thread::hardware_concurrency());
  return std::min<long>(v, hw > 0 ? hw : 1);
}

// Assemble a normalized batch. Augmentation draws are a pure function of
// (seed, epoch, dataset index), so the worker count never changes results.
inline ImageBatch assemble_batch(const std::vector<Sample>& samples,
                                 const std::vector<int64_t>& indices, Phase phase,
                                 const TrainConfig& cfg, int64_t epoch) {
  const int64_t b = int64_t(indices.size());
  ImageBatch batch;
  const int64_t s = cfg.input_size;
  batch.pixels = Tensor({b, 3, s, s});
  batch.ids.resize(size_t(b));
  std::vector<int> labels(static_cast<size_t>(b));

  const int64_t workers = std::min<int64_t>(env_worker_cap(), b);
  auto job = [&](int64_t begin, int64_t end) {
    for (int64_t i = begin; i < end; ++i) {
      const Sample& sample = samples[size_t(indices[size_t(i)])];
      Rng rng = Rng::stream(cfg.seed, kTagAugment, uint64_t(epoch), uint64_t(indices[size_t(i)]));
      Tensor img = augment(sample.image, phase, cfg, rng);
      std::copy(img.data(), img.data() + img.numel(), batch.pixels.data() + i * img.numel());
      batch.ids[size_t(i)] = sample.id;
      labels[size_t(i)] = sample.fine;
    }
  };
  if (workers <= 1) {
    job(0, b);
  } else {
    std::vector<std::thread> pool;
    const int64_t chunk = (b + workers - 1) / workers;
    for (int64_t w = 0; w < workers; ++w) {
      const int64_t lo = w * chunk, hi = std::min(b, lo + chunk);
      if (lo < hi) pool.emplace_back(job, lo, hi);
    }
    for (auto& t : pool) t.join();
  }
  batch.labels = std::move(labels);
  return batch;
}

// Epoch-granular training driver. All shuffling and augmentation is derived
// from (seed, epoch, index), so a run is reproducible from its config and a
// checkpoint resume continues the exact stream.
class Trainer {
public:
  Trainer(HerbsNet& net, TrainConfig cfg)
      : net_(net), cfg_(std::move(cfg)), opt_(cfg_.momentum, cfg_.weight_decay) {
    cfg_.validate();
  }

  const TrainConfig& config() const { return cfg_; }
  int64_t epoch_next() const { return epoch_next_; }
  int64_t global_step() const { return global_step_; }
  Sgd& optimizer() { return opt_; }

  int64_t total_steps(int64_t n_samples) const {
    return cfg_.epochs * optimizer_steps_per_epoch(n_samples, cfg_);
  }

  // trains up to `epoch_limit` (default: the configured epoch count); the
  // cosine horizon always spans the full configured run
  std::vector<EpochRecord> run(const std::vector<Sample>& trainset, int64_t epoch_limit = -1) {
    if (trainset.empty()) throw std::invalid_argument("train: empty dataset");
    if (epoch_limit < 0 || epoch_limit > cfg_.epochs) epoch_limit = cfg_.epochs;
    std::vector<EpochRecord> records;
    const int64_t total = total_steps(int64_t(trainset.size()));
    for (; epoch_next_ < epoch_limit; ++epoch_next_) {
      records.push_back(run_epoch(trainset, epoch_next_, total));
    }
    return records;
  }

  EpochRecord run_epoch(const std::vector<Sample>& trainset, int64_t epoch, int64_t total) {
    std::vector<int64_t> order(trainset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng srng = Rng::stream(cfg_.seed, kTagShuffle, uint64_t(epoch));
    srng.shuffle(order);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.temperature = net_.temperature_for_epoch(epoch);
    int64_t window = 0, micro_count = 0;
    bool first_step = true;
    LossBreakdown sums;
    for (int64_t pos = 0; pos < int64_t(order.size()); pos += cfg_.batch_size) {
      const int64_t end = std::min<int64_t>(pos + cfg_.batch_size, int64_t(order.size()));
      std::vector<int64_t> indices(order.begin() + pos, order.begin() + end);
      ImageBatch batch = assemble_batch(trainset, indices, Phase::train, cfg_, epoch);
      ForwardOutput out;
      try {
        out = net_.forward(batch, epoch, true);
      } catch (const NonFiniteLossError& e) {
        throw NonFiniteLossError(e.component() + " (epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(global_step_) + ")");
      }
      backward(out.loss_herbs);
      ++window;
      ++micro_count;
      LossBreakdown b = out.breakdown();
      sums.loss_m += b.loss_m;
      sums.loss_d += b.loss_d;
      sums.loss_l += b.loss_l;
      sums.loss_r += b.loss_r;
      sums.loss_bs += b.loss_bs;
      sums.loss_herbs += b.loss_herbs;

      const bool last_micro = end == int64_t(order.size());
      if (window == cfg_.accum_steps || last_micro) {
        const double lr = lr_at(global_step_, total, cfg_.lr);
        if (first_step) {
          rec.lr = lr;
          first_step = false;
        }
        opt_.step(net_.params(), lr, window);
        ++global_step_;
        ++rec.optimizer_steps;
        window = 0;
      }
    }
    const double inv = 1.0 / double(micro_count);
    rec.losses.loss_m = sums.loss_m * inv;
    rec.losses.loss_d = sums.loss_d * inv;
    rec.losses.loss_l = sums.loss_l * inv;
    rec.losses.loss_r = sums.loss_r * inv;
    rec.losses.loss_bs = sums.loss_bs * inv;
    rec.losses.loss_herbs = sums.loss_herbs * inv;
    rec.losses.lambda_r = net_.config().lambda_r;
    return rec;
  }

  Checkpoint make_checkpoint(const std::string& config_echo) const {
    Checkpoint ckpt;
    ckpt.config_echo = config_echo;
    ckpt.epoch_next = epoch_next_;
    ckpt.global_step = global_step_;
    ckpt.seed = cfg_.seed;
    const ParamStore& ps = net_.params();
    for (size_t i = 0; i < ps.size(); ++i)
      ckpt.tensors.emplace_back(ps.name(i), ps.var(i).val());
    for (size_t i = 0; i < opt_.velocity().size(); ++i)
      ckpt.tensors.emplace_back("optim/velocity/" + ps.name(i), opt_.velocity()[i]);
    return ckpt;
  }

  void restore(const Checkpoint& ckpt) {
    apply_parameters(ckpt, net_.params());
    epoch_next_ = ckpt.epoch_next;
    global_step_ = ckpt.global_step;
    auto& vel = opt_.velocity();
    vel.clear();
    const ParamStore& ps = net_.params();
    for (size_t i = 0; i < ps.size(); ++i) {
      const Tensor* t = ckpt.find("optim/velocity/" + ps.name(i));
      vel.push_back(t ? *t : Tensor::zeros(ps.var(i).val().shape()));
    }
  }

private:
  HerbsNet& net_;
  TrainConfig cfg_;
  Sgd opt_;
  int64_t epoch_next_ = 0;
  int64_t global_step_ = 0;
};

}  // namespace herbs
