#pragma once

// Co-teaching of two stereo networks: each network's photometric and
// augmentation terms are weighted by the other network's occlusion
// estimates, pixels above a shrinking threshold R are omitted, and both
// networks take independent Adam steps.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "cot/augment.hpp"
#include "cot/data.hpp"
#include "cot/losses.hpp"
#include "cot/metrics.hpp"
#include "cot/occlusion.hpp"
#include "cot/stereo_net.hpp"

namespace cot {

struct CoTeachConfig {
    // 1e-4 barely moves the network in the 1000 steps of a desk-scale run.
    double eta = 1e-3;
    double tau = 0.7;
    int t_k = 0;  // 0 = derive as round(0.2 * t_max), at least 1
    int t_max = 40;
    int n_max = 25;
    LossWeights weights;
    double decay = 0.97;
    int batch = 2;
    std::uint64_t seed_a = 1;
    std::uint64_t seed_b = 2;
    std::uint64_t data_seed = 0;  // shuffling and augmentation
    bool swap = true;
    bool dynamic_threshold = true;
    bool use_smoothness = true;
    bool use_augmentation = true;
    int threads = 1;  // 1 or 2; 1 is the determinism reference
    ArchConfig arch;
    OcclusionParams occlusion;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    int effective_t_k() const;
};

// Throws InvalidConfig.
void validate(const CoTeachConfig& c);

// Flat key=value text, one per line, '#' comments. Unknown keys throw
// InvalidConfig. to_text output parses back to the same config.
CoTeachConfig parse_config(const std::string& text, CoTeachConfig base = {});
CoTeachConfig load_config(const std::filesystem::path& path, CoTeachConfig base = {});
std::string to_text(const CoTeachConfig& c);

// Ablation presets: a (no swap, no DT), b (swap), c (DT), d (ph only),
// e (ph + sm), f (ph + da), g (full). Throws InvalidConfig for other letters.
CoTeachConfig apply_ablation(CoTeachConfig c, char preset);

// R(T) = 1 - tau min(T / t_k, 1).
double schedule_r(int t, double tau, int t_k);

struct AdamState {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    std::uint64_t step = 0;
};

AdamState make_adam_state(const NetworkParams<float>& params);

// One Adam update from the gradients stored on params (missing gradients
// count as zero). Throws ShapeMismatch when moments do not fit the params.
void adam_step(NetworkParams<float>& params, AdamState& state, double eta_t, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

// Learning rate for 0-based epoch index t: eta * decay^t.
double learning_rate(const CoTeachConfig& c, int epoch_index);

struct TrainState {
    NetworkParams<float> params_a, params_b;
    AdamState adam_a, adam_b;
    int epoch = 0;   // completed epochs
    double r = 1.0;  // threshold used by the next epoch
};

TrainState init_train_state(const CoTeachConfig& c);

// Everything one network produces in an iteration.
template <typename T>
struct NetOutputs {
    Tensor<T> d;             // left disparity, tracks gradients
    Tensor<T> o_raw;         // occlusion estimate
    Tensor<T> o;             // after apply_dynamic_threshold
    AugmentedSample<T> aug;  // transformed teacher outputs and images
    Tensor<T> d_student;     // prediction on the augmented pair, tracks gradients
};

template <typename T>
NetOutputs<T> forward_outputs(const NetworkParams<T>& params, const Tensor<T>& left, const Tensor<T>& right,
                              const AugmentationSpec* spec, double r, const CoTeachConfig& c);

// Loss of `self`: occlusion terms come from `other` when c.swap, else from self.
template <typename T>
LossBreakdown<T> co_teaching_loss(const NetOutputs<T>& self, const NetOutputs<T>& other, const Tensor<T>& left,
                                  const Tensor<T>& right, const CoTeachConfig& c);

struct NetLog {
    double ph = 0, sm = 0, da = 0, total = 0;
    bool stepped = true;  // false when the loss was not finite
};

struct IterationResult {
    NetLog a, b;
};

// Forwards both networks, swaps, backpropagates and steps both optimizers.
IterationResult train_iteration(TrainState& state, const Tensor<float>& left, const Tensor<float>& right,
                                const CoTeachConfig& c, int epoch_index, int iteration);

// Spec used at (epoch, iteration); shared by both networks.
AugmentationSpec iteration_spec(const CoTeachConfig& c, int epoch_index, int iteration, int height, int width);

struct TrainOptions {
    std::filesystem::path out_dir;  // checkpoints/ and train_log.csv; empty = no files
    std::function<void(const std::string&)> warn;
    std::function<void(const TrainState&)> on_epoch_end;
};

// Runs epochs state.epoch .. t_max-1. Checkpoints go to
// out_dir/checkpoints/epoch_NNNN.ckpt; the log is appended to when resuming.
TrainState train(const std::vector<StereoSample>& dataset, const CoTeachConfig& c, const TrainOptions& options,
                 TrainState state);
TrainState train(const std::vector<StereoSample>& dataset, const CoTeachConfig& c, const TrainOptions& options = {});

std::string train_log_header();

// Little-endian: "COTCKPT1" | u32 epoch | f64 r | params A | params B |
// Adam A | Adam B, each Adam block u64 step, u32 count, per tensor u32 n,
// f32 m[n], f32 v[n].
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

// Network-A style evaluation of one parameter set against ground truth;
// samples without gt are skipped, Noc uses gt_occlusion when present.
EvalReport evaluate(const NetworkParams<float>& params, const std::vector<StereoSample>& samples);

// Prediction for a single sample as an H x W map.
std::vector<float> predict(const NetworkParams<float>& params, const StereoSample& sample);

}  // namespace cot
