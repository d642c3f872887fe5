#include "cot/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <thread>

#include "binary_io.hpp"
#include "cot/ops.hpp"

namespace cot {

int CoTeachConfig::effective_t_k() const {
    if (t_k > 0) return t_k;
    return std::max(1, static_cast<int>(std::lround(0.2 * t_max)));
}

void validate(const CoTeachConfig& c) {
    auto fail = [](const std::string& m) { throw Error(Errc::InvalidConfig, m); };
    if (!(c.eta > 0.0)) fail("eta must be > 0");
    if (!(c.tau >= 0.0 && c.tau <= 1.0)) fail("tau must lie in [0, 1]");
    if (c.t_max < 1) fail("t_max must be >= 1");
    if (c.t_k < 0 || c.effective_t_k() > c.t_max) fail("t_k must lie in [1, t_max]");
    if (c.n_max < 1) fail("n_max must be >= 1");
    if (!(c.decay > 0.0 && c.decay <= 1.0)) fail("decay must lie in (0, 1]");
    if (c.batch < 1) fail("batch must be >= 1");
    if (c.threads != 1 && c.threads != 2) fail("threads must be 1 or 2");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0) || !(c.adam_eps > 0.0)) {
        fail("invalid Adam constants");
    }
    if (!(c.occlusion.gamma1 >= 0.0) || !(c.occlusion.gamma2 > 0.0)) fail("occlusion gammas must be >= 0 and > 0");
    validate(c.weights);
    try {
        validate(c.arch);
    } catch (const Error& e) {
        fail(e.what());
    }
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename V>
V parse_number(const std::string& key, const std::string& v) {
    std::istringstream is(v);
    V out{};
    is >> out;
    if (!is || !is.eof()) throw Error(Errc::InvalidConfig, "bad value for " + key + ": '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error(Errc::InvalidConfig, "bad boolean for " + key + ": '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

CoTeachConfig parse_config(const std::string& text, CoTeachConfig c) {
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error(Errc::InvalidConfig, "line " + std::to_string(lineno) + ": expected key=value");
        const std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
        if (k == "eta") c.eta = parse_number<double>(k, v);
        else if (k == "tau") c.tau = parse_number<double>(k, v);
        else if (k == "t_k") c.t_k = parse_number<int>(k, v);
        else if (k == "t_max") c.t_max = parse_number<int>(k, v);
        else if (k == "n_max") c.n_max = parse_number<int>(k, v);
        else if (k == "alpha") c.weights.alpha = parse_number<double>(k, v);
        else if (k == "lambda1") c.weights.lambda1 = parse_number<double>(k, v);
        else if (k == "lambda2") c.weights.lambda2 = parse_number<double>(k, v);
        else if (k == "decay") c.decay = parse_number<double>(k, v);
        else if (k == "batch") c.batch = parse_number<int>(k, v);
        else if (k == "seed_a") c.seed_a = parse_number<std::uint64_t>(k, v);
        else if (k == "seed_b") c.seed_b = parse_number<std::uint64_t>(k, v);
        else if (k == "data_seed") c.data_seed = parse_number<std::uint64_t>(k, v);
        else if (k == "swap") c.swap = parse_bool(k, v);
        else if (k == "dynamic_threshold") c.dynamic_threshold = parse_bool(k, v);
        else if (k == "use_smoothness") c.use_smoothness = parse_bool(k, v);
        else if (k == "use_augmentation") c.use_augmentation = parse_bool(k, v);
        else if (k == "threads") c.threads = parse_number<int>(k, v);
        else if (k == "feature_channels") c.arch.feature_channels = parse_number<int>(k, v);
        else if (k == "max_disparity") c.arch.max_disparity = parse_number<int>(k, v);
        else if (k == "aggregation_channels") c.arch.aggregation_channels = parse_number<int>(k, v);
        else if (k == "refine_channels") c.arch.refine_channels = parse_number<int>(k, v);
        else if (k == "gamma1") c.occlusion.gamma1 = parse_number<double>(k, v);
        else if (k == "gamma2") c.occlusion.gamma2 = parse_number<double>(k, v);
        else if (k == "beta1") c.beta1 = parse_number<double>(k, v);
        else if (k == "beta2") c.beta2 = parse_number<double>(k, v);
        else if (k == "adam_eps") c.adam_eps = parse_number<double>(k, v);
        else throw Error(Errc::InvalidConfig, "unknown key '" + k + "'");
    }
    validate(c);
    return c;
}

CoTeachConfig load_config(const std::filesystem::path& path, CoTeachConfig base) {
    std::ifstream is(path);
    if (!is) throw Error(Errc::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

std::string to_text(const CoTeachConfig& c) {
    std::ostringstream os;
    auto b = [](bool v) { return v ? "true" : "false"; };
    os << "eta=" << fmt(c.eta) << "\n"
       << "tau=" << fmt(c.tau) << "\n"
       << "t_k=" << c.t_k << "\n"
       << "t_max=" << c.t_max << "\n"
       << "n_max=" << c.n_max << "\n"
       << "alpha=" << fmt(c.weights.alpha) << "\n"
       << "lambda1=" << fmt(c.weights.lambda1) << "\n"
       << "lambda2=" << fmt(c.weights.lambda2) << "\n"
       << "decay=" << fmt(c.decay) << "\n"
       << "batch=" << c.batch << "\n"
       << "seed_a=" << c.seed_a << "\n"
       << "seed_b=" << c.seed_b << "\n"
       << "data_seed=" << c.data_seed << "\n"
       << "swap=" << b(c.swap) << "\n"
       << "dynamic_threshold=" << b(c.dynamic_threshold) << "\n"
       << "use_smoothness=" << b(c.use_smoothness) << "\n"
       << "use_augmentation=" << b(c.use_augmentation) << "\n"
       << "threads=" << c.threads << "\n"
       << "feature_channels=" << c.arch.feature_channels << "\n"
       << "max_disparity=" << c.arch.max_disparity << "\n"
       << "aggregation_channels=" << c.arch.aggregation_channels << "\n"
       << "refine_channels=" << c.arch.refine_channels << "\n"
       << "gamma1=" << fmt(c.occlusion.gamma1) << "\n"
       << "gamma2=" << fmt(c.occlusion.gamma2) << "\n"
       << "beta1=" << fmt(c.beta1) << "\n"
       << "beta2=" << fmt(c.beta2) << "\n"
       << "adam_eps=" << fmt(c.adam_eps) << "\n";
    return os.str();
}

CoTeachConfig apply_ablation(CoTeachConfig c, char preset) {
    struct Row {
        bool swap, dt, sm, da;
    };
    static const std::map<char, Row> rows{
        {'a', {false, false, true, true}}, {'b', {true, false, true, true}}, {'c', {false, true, true, true}},
        {'d', {true, true, false, false}}, {'e', {true, true, true, false}}, {'f', {true, true, false, true}},
        {'g', {true, true, true, true}},
    };
    const auto it = rows.find(preset);
    if (it == rows.end()) throw Error(Errc::InvalidConfig, std::string("unknown ablation preset '") + preset + "'");
    c.swap = it->second.swap;
    c.dynamic_threshold = it->second.dt;
    c.use_smoothness = it->second.sm;
    c.use_augmentation = it->second.da;
    return c;
}

double schedule_r(int t, double tau, int t_k) {
    return 1.0 - tau * std::min(static_cast<double>(t) / static_cast<double>(t_k), 1.0);
}

// ---------------------------------------------------------------------------
// Adam

AdamState make_adam_state(const NetworkParams<float>& params) {
    AdamState s;
    for (const auto& [name, t] : params.tensors) {
        s.m.emplace_back(t.numel(), 0.0f);
        s.v.emplace_back(t.numel(), 0.0f);
    }
    return s;
}

void adam_step(NetworkParams<float>& params, AdamState& s, double eta_t, double beta1, double beta2, double eps) {
    if (s.m.size() != params.tensors.size() || s.v.size() != params.tensors.size()) {
        throw Error(Errc::ShapeMismatch, "adam_step: moment count does not match parameters");
    }
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
        if (s.m[k].size() != params.tensors[k].second.numel() || s.v[k].size() != s.m[k].size()) {
            throw Error(Errc::ShapeMismatch, "adam_step: moment shape mismatch for " + params.tensors[k].first);
        }
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(s.step));
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
        auto& t = params.tensors[k].second;
        if (!t.has_grad()) {
            // A zero gradient still decays the moments.
            for (auto& m : s.m[k]) m = static_cast<float>(beta1 * m);
            for (auto& v : s.v[k]) v = static_cast<float>(beta2 * v);
        }
        auto g = t.has_grad() ? t.grad() : std::span<const float>{};
        auto p = t.mutable_values();
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (!g.empty()) {
                const double gi = g[i];
                s.m[k][i] = static_cast<float>(beta1 * s.m[k][i] + (1.0 - beta1) * gi);
                s.v[k][i] = static_cast<float>(beta2 * s.v[k][i] + (1.0 - beta2) * gi * gi);
            }
            const double mhat = s.m[k][i] / c1, vhat = s.v[k][i] / c2;
            p[i] = static_cast<float>(p[i] - eta_t * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

double learning_rate(const CoTeachConfig& c, int epoch_index) { return c.eta * std::pow(c.decay, epoch_index); }

TrainState init_train_state(const CoTeachConfig& c) {
    validate(c);
    TrainState s{init_params<float>(c.seed_a, c.arch), init_params<float>(c.seed_b, c.arch), {}, {}, 0, 1.0};
    s.adam_a = make_adam_state(s.params_a);
    s.adam_b = make_adam_state(s.params_b);
    return s;
}

// ---------------------------------------------------------------------------
// One iteration

template <typename T>
NetOutputs<T> forward_outputs(const NetworkParams<T>& params, const Tensor<T>& left, const Tensor<T>& right,
                              const AugmentationSpec* spec, double r, const CoTeachConfig& c) {
    NetOutputs<T> out;
    out.d = forward(params, left, right);
    {
        NoGradGuard no_grad;
        auto d_right = forward_right(params, left, right);
        out.o_raw = estimate_occlusion(stop_gradient(out.d), d_right, c.occlusion);
    }
    out.o = apply_dynamic_threshold(out.o_raw, r);
    if (spec) {
        out.aug = apply(*spec, left, right, out.d, out.o_raw);
        out.d_student = forward(params, out.aug.i_left, out.aug.i_right);
    }
    return out;
}

template <typename T>
LossBreakdown<T> co_teaching_loss(const NetOutputs<T>& self, const NetOutputs<T>& other, const Tensor<T>& left,
                                  const Tensor<T>& right, const CoTeachConfig& c) {
    const NetOutputs<T>& occ = c.swap ? other : self;
    LossWeights w = c.weights;
    if (!c.use_smoothness) w.lambda1 = 0.0;
    const bool with_aug = c.use_augmentation && self.d_student.defined();
    if (!with_aug) w.lambda2 = 0.0;
    AugmentedTerms<T> terms;
    if (with_aug) terms = {self.aug.d_teacher, self.d_student, occ.aug.o_tilde};
    return hybrid_loss(left, right, self.d, occ.o, with_aug ? &terms : nullptr, w);
}

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Runs fa and fb, concurrently when asked to.
template <typename Fa, typename Fb>
void run_pair(bool parallel, Fa&& fa, Fb&& fb) {
    if (!parallel) {
        fa();
        fb();
        return;
    }
    std::exception_ptr err;
    std::thread worker([&] {
        try {
            fb();
        } catch (...) {
            err = std::current_exception();
        }
    });
    try {
        fa();
    } catch (...) {
        worker.join();
        throw;
    }
    worker.join();
    if (err) std::rethrow_exception(err);
}

NetLog backward_and_step(LossBreakdown<float>& loss, NetworkParams<float>& params, AdamState& adam,
                         const CoTeachConfig& c, double eta_t) {
    NetLog log{loss.ph.item(), loss.sm.item(), loss.da.item(), loss.total.item(), true};
    params.zero_grad();
    if (!std::isfinite(log.total)) {
        log.stepped = false;
        return log;
    }
    backward(loss.total);
    adam_step(params, adam, eta_t, c.beta1, c.beta2, c.adam_eps);
    return log;
}

}  // namespace

AugmentationSpec iteration_spec(const CoTeachConfig& c, int epoch_index, int iteration, int height, int width) {
    std::mt19937_64 rng(mix(mix(c.data_seed ^ 0xa5a5ull) + static_cast<std::uint64_t>(epoch_index)) ^
                        mix(static_cast<std::uint64_t>(iteration) + 0x1234567ull));
    AugmentBounds b;
    b.height = height;
    b.width = width;
    return sample_spec(rng, b);
}

IterationResult train_iteration(TrainState& state, const Tensor<float>& left, const Tensor<float>& right,
                                const CoTeachConfig& c, int epoch_index, int iteration) {
    const bool parallel = c.threads == 2;
    AugmentationSpec spec;
    const AugmentationSpec* spec_ptr = nullptr;
    if (c.use_augmentation) {
        spec = iteration_spec(c, epoch_index, iteration, left.dim(2), left.dim(3));
        spec_ptr = &spec;
    }
    NetOutputs<float> out_a, out_b;
    try {
        run_pair(
            parallel, [&] { out_a = forward_outputs(state.params_a, left, right, spec_ptr, state.r, c); },
            [&] { out_b = forward_outputs(state.params_b, left, right, spec_ptr, state.r, c); });
    } catch (const Error& e) {
        // A non-finite prediction poisons both losses through the swap.
        if (e.code() != Errc::NonFiniteDisparity) throw;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        const NetLog skipped{nan, nan, nan, nan, false};
        return {skipped, skipped};
    }

    const double eta_t = learning_rate(c, epoch_index);
    IterationResult res;
    run_pair(
        parallel,
        [&] {
            auto loss = co_teaching_loss(out_a, out_b, left, right, c);
            res.a = backward_and_step(loss, state.params_a, state.adam_a, c, eta_t);
        },
        [&] {
            auto loss = co_teaching_loss(out_b, out_a, left, right, c);
            res.b = backward_and_step(loss, state.params_b, state.adam_b, c, eta_t);
        });
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCkptMagic = "COTCKPT1";

void write_adam(std::ostream& os, const AdamState& s) {
    binio::put_u64(os, s.step);
    binio::put_u32(os, static_cast<std::uint32_t>(s.m.size()));
    for (std::size_t k = 0; k < s.m.size(); ++k) {
        binio::put_u32(os, static_cast<std::uint32_t>(s.m[k].size()));
        for (float v : s.m[k]) binio::put_f32(os, v);
        for (float v : s.v[k]) binio::put_f32(os, v);
    }
}

AdamState read_adam(std::istream& is, const NetworkParams<float>& params) {
    AdamState s = make_adam_state(params);
    s.step = binio::get_u64(is);
    if (binio::get_u32(is) != s.m.size()) throw Error(Errc::MalformedHeader, "checkpoint: Adam tensor count");
    for (std::size_t k = 0; k < s.m.size(); ++k) {
        if (binio::get_u32(is) != s.m[k].size()) throw Error(Errc::MalformedHeader, "checkpoint: Adam tensor size");
        for (float& v : s.m[k]) v = binio::get_f32(is);
        for (float& v : s.v[k]) v = binio::get_f32(is);
    }
    return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(Errc::Io, "cannot open " + path.string());
    os.write(kCkptMagic, 8);
    binio::put_u32(os, static_cast<std::uint32_t>(state.epoch));
    binio::put_f64(os, state.r);
    write_params(os, state.params_a);
    write_params(os, state.params_b);
    write_adam(os, state.adam_a);
    write_adam(os, state.adam_b);
    if (!os) throw Error(Errc::Io, "failed writing " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(Errc::Io, "cannot open " + path.string());
    binio::expect_magic(is, kCkptMagic);
    TrainState s;
    s.epoch = static_cast<int>(binio::get_u32(is));
    s.r = binio::get_f64(is);
    s.params_a = read_params(is);
    s.params_b = read_params(is);
    s.adam_a = read_adam(is, s.params_a);
    s.adam_b = read_adam(is, s.params_b);
    return s;
}

// ---------------------------------------------------------------------------
// Outer loop

std::string train_log_header() { return "epoch,iter,net,ph,sm,da,total,R"; }

TrainState train(const std::vector<StereoSample>& dataset, const CoTeachConfig& c, const TrainOptions& opt) {
    return train(dataset, c, opt, init_train_state(c));
}

TrainState train(const std::vector<StereoSample>& dataset, const CoTeachConfig& c, const TrainOptions& opt,
                 TrainState state) {
    validate(c);
    if (dataset.empty()) throw Error(Errc::InvalidConfig, "training set is empty");
    for (const auto& s : dataset) validate(s);
    auto warn = opt.warn ? opt.warn : [](const std::string& m) { std::cerr << "warning: " << m << "\n"; };

    std::ofstream log;
    if (!opt.out_dir.empty()) {
        std::filesystem::create_directories(opt.out_dir / "checkpoints");
        const auto log_path = opt.out_dir / "train_log.csv";
        const bool fresh = state.epoch == 0 || !std::filesystem::exists(log_path);
        log.open(log_path, fresh ? std::ios::trunc : std::ios::app);
        if (!log) throw Error(Errc::Io, "cannot open " + log_path.string());
        if (fresh) log << train_log_header() << "\n";
    }

    const int t_k = c.effective_t_k();
    for (int epoch = state.epoch; epoch < c.t_max; ++epoch) {
        const auto order = shuffle_dataset(dataset.size(), c.data_seed, static_cast<std::uint64_t>(epoch));
        for (int it = 0; it < c.n_max; ++it) {
            std::vector<const Image*> lefts, rights;
            for (int k = 0; k < c.batch; ++k) {
                const auto& s = dataset[order[(static_cast<std::size_t>(it) * c.batch + k) % dataset.size()]];
                lefts.push_back(&s.left);
                rights.push_back(&s.right);
            }
            const auto left = to_tensor<float>(lefts);
            const auto right = to_tensor<float>(rights);
            const auto res = train_iteration(state, left, right, c, epoch, it);
            for (const auto& [net, nl] : {std::pair{'A', res.a}, std::pair{'B', res.b}}) {
                if (!nl.stepped) {
                    warn("non-finite loss for network " + std::string(1, net) + " at epoch " + std::to_string(epoch + 1) +
                         " iteration " + std::to_string(it + 1) + "; step skipped");
                }
                if (log) {
                    char row[256];
                    std::snprintf(row, sizeof row, "%d,%d,%c,%.9g,%.9g,%.9g,%.9g,%.9g", epoch + 1, it + 1, net, nl.ph,
                                  nl.sm, nl.da, nl.total, state.r);
                    log << row << "\n";
                }
            }
        }
        state.epoch = epoch + 1;
        if (c.dynamic_threshold) state.r = schedule_r(state.epoch, c.tau, t_k);
        if (log) log.flush();
        if (!opt.out_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%04d.ckpt", state.epoch);
            save_checkpoint(opt.out_dir / "checkpoints" / name, state);
        }
        if (opt.on_epoch_end) opt.on_epoch_end(state);
    }
    return state;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<float> predict(const NetworkParams<float>& params, const StereoSample& sample) {
    validate(sample);
    const int h = sample.height(), w = sample.width();
    const int ph = (h + kDownsample - 1) / kDownsample * kDownsample;
    const int pw = (w + kDownsample - 1) / kDownsample * kDownsample;
    // Replicate-pad to a multiple of 4, predict, crop back.
    auto pad = [&](const Image& img) {
        if (ph == h && pw == w) return img;
        Image out(img.channels, ph, pw);
        for (int c = 0; c < img.channels; ++c)
            for (int y = 0; y < ph; ++y)
                for (int x = 0; x < pw; ++x) out.at(c, y, x) = img.at(c, std::min(y, h - 1), std::min(x, w - 1));
        return out;
    };
    const Image l = pad(sample.left), r = pad(sample.right);
    NoGradGuard no_grad;
    const auto d = forward(params, to_tensor<float>({&l}), to_tensor<float>({&r}));
    std::vector<float> out(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out[static_cast<std::size_t>(y) * w + x] = d.at(static_cast<std::size_t>(y) * pw + x);
    return out;
}

EvalReport evaluate(const NetworkParams<float>& params, const std::vector<StereoSample>& samples) {
    EvalAccumulator acc;
    for (const auto& s : samples) {
        if (!s.gt_disparity) continue;
        const auto pred = predict(params, s);
        const auto valid = gt_validity(*s.gt_disparity);
        acc.add(pred, *s.gt_disparity, valid,
                s.gt_occlusion ? std::span<const std::uint8_t>(*s.gt_occlusion) : std::span<const std::uint8_t>{});
    }
    return acc.report();
}

template NetOutputs<float> forward_outputs(const NetworkParams<float>&, const Tensor<float>&, const Tensor<float>&,
                                           const AugmentationSpec*, double, const CoTeachConfig&);
template NetOutputs<double> forward_outputs(const NetworkParams<double>&, const Tensor<double>&, const Tensor<double>&,
                                            const AugmentationSpec*, double, const CoTeachConfig&);
template LossBreakdown<float> co_teaching_loss(const NetOutputs<float>&, const NetOutputs<float>&,
                                               const Tensor<float>&, const Tensor<float>&, const CoTeachConfig&);
template LossBreakdown<double> co_teaching_loss(const NetOutputs<double>&, const NetOutputs<double>&,
                                                const Tensor<double>&, const Tensor<double>&, const CoTeachConfig&);

}  // namespace cot
