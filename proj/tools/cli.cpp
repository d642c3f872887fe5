#include "cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "cot/data.hpp"
#include "cot/error.hpp"
#include "cot/image.hpp"
#include "cot/metrics.hpp"

namespace fs = std::filesystem;

namespace cot::cli {

std::string git_blob_hash(const std::string& text) {
    const std::string blob = "blob " + std::to_string(text.size()) + '\0' + text;
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr)) {
        throw Error(Errc::Io, "SHA-1 digest failed");
    }
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

nlohmann::json to_json(const RunManifest& m) {
    return {
        {"config", m.config_text},
        {"config_hash", m.config_hash},
        {"seeds", {{"seed_a", m.seed_a}, {"seed_b", m.seed_b}, {"data_seed", m.data_seed}}},
        {"ablation", m.ablation},
        {"data_dir", m.data_dir},
        {"out_dir", m.out_dir},
        {"started_at", m.started_at},
        {"finished_at", m.finished_at},
        {"checkpoints", m.checkpoints},
        {"train_log", m.train_log},
    };
}

RunManifest manifest_from_json(const nlohmann::json& j) {
    RunManifest m;
    try {
        m.config_text = j.at("config").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        const auto& s = j.at("seeds");
        m.seed_a = s.at("seed_a").get<std::uint64_t>();
        m.seed_b = s.at("seed_b").get<std::uint64_t>();
        m.data_seed = s.at("data_seed").get<std::uint64_t>();
        m.ablation = j.value("ablation", "");
        m.data_dir = j.at("data_dir").get<std::string>();
        m.out_dir = j.value("out_dir", "");
        m.started_at = j.value("started_at", "");
        m.finished_at = j.value("finished_at", "");
        m.checkpoints = j.value("checkpoints", std::vector<std::string>{});
        m.train_log = j.value("train_log", "");
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::MalformedHeader, std::string("manifest: ") + e.what());
    }
    if (git_blob_hash(m.config_text) != m.config_hash) {
        throw Error(Errc::InvalidConfig, "manifest: config hash does not match config text");
    }
    return m;
}

CoTeachConfig resolve_config(const std::string& config_path, const std::string& ablation, int epochs) {
    CoTeachConfig c;
    if (!config_path.empty()) c = load_config(config_path);
    if (!ablation.empty()) {
        if (ablation.size() != 1) throw Error(Errc::InvalidConfig, "--ablation takes one letter a..g");
        c = apply_ablation(c, ablation[0]);
    }
    if (epochs > 0) {
        c.t_max = epochs;
        if (c.t_k > c.t_max) c.t_k = 0;
    }
    validate(c);
    return c;
}

namespace {

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

bool has_entries(const fs::path& dir) { return fs::exists(dir) && !fs::is_empty(dir); }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(Errc::Io, "cannot open " + path.string());
    os << text;
    if (!os) throw Error(Errc::Io, "failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(Errc::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// generate ------------------------------------------------------------------

struct GenerateArgs {
    std::size_t count = 50;
    std::string out;
    std::uint64_t seed = 0;
    SceneRanges ranges;
    bool force = false;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
    if (has_entries(a.out) && !a.force) {
        throw Error(Errc::AlreadyExists, a.out + " is not empty (use --force)");
    }
    if (a.force) {
        for (const char* sub : {"left", "right", "disp", "occ"}) fs::remove_all(fs::path(a.out) / sub);
    }
    const auto samples = generate_dataset(a.count, a.seed, a.ranges);
    save_dataset(a.out, samples);
    out << "wrote " << samples.size() << " scenes to " << a.out << "\n";
    return 0;
}

// train ---------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string out;
    std::string config;
    std::string ablation;
    std::string manifest;
    int epochs = 0;
    int threads = 0;
    bool force = false;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    RunManifest m;
    CoTeachConfig c;
    if (!a.manifest.empty()) {
        if (!a.config.empty() || !a.ablation.empty() || a.epochs > 0) {
            throw Error(Errc::InvalidConfig, "--manifest replays a run; it cannot be combined with config flags");
        }
        auto j = nlohmann::json::parse(read_text(a.manifest), nullptr, false);
        if (j.is_discarded()) throw Error(Errc::MalformedHeader, a.manifest + ": not valid JSON");
        const RunManifest old = manifest_from_json(j);
        c = parse_config(old.config_text);
        m.ablation = old.ablation;
        m.data_dir = a.data.empty() ? old.data_dir : a.data;
    } else {
        if (a.data.empty()) throw Error(Errc::InvalidConfig, "--data is required");
        c = resolve_config(a.config, a.ablation, a.epochs);
        m.ablation = a.ablation;
        m.data_dir = a.data;
    }
    if (a.threads > 0) {
        c.threads = a.threads;
        validate(c);
    }

    const fs::path dir = a.out;
    const fs::path manifest_path = dir / "manifest.json";
    const fs::path log_path = dir / "train_log.csv";
    if ((fs::exists(manifest_path) || fs::exists(log_path) || has_entries(dir / "checkpoints")) && !a.force) {
        throw Error(Errc::AlreadyExists, dir.string() + " already holds a run (use --force)");
    }
    fs::create_directories(dir);
    fs::remove(log_path);
    fs::remove(manifest_path);
    fs::remove_all(dir / "checkpoints");

    const auto dataset = load_dataset(m.data_dir);
    m.config_text = to_text(c);
    m.config_hash = git_blob_hash(m.config_text);
    m.seed_a = c.seed_a;
    m.seed_b = c.seed_b;
    m.data_seed = c.data_seed;
    m.out_dir = dir.string();
    m.train_log = log_path.string();
    m.started_at = utc_now();
    write_text(dir / "config.txt", m.config_text);

    TrainOptions opt;
    opt.out_dir = dir;
    opt.warn = [&](const std::string& w) { err << "warning: " << w << "\n"; };
    const bool quiet = a.quiet;
    opt.on_epoch_end = [&](const TrainState& s) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "epoch_%04d.ckpt", s.epoch);
        m.checkpoints.push_back((dir / "checkpoints" / buf).string());
        if (!quiet) out << "epoch " << s.epoch << "/" << c.t_max << " done, next R=" << s.r << "\n";
    };
    train(dataset, c, opt);
    m.finished_at = utc_now();
    write_text(manifest_path, to_json(m).dump(2) + "\n");
    out << "run written to " << dir.string() << " (config " << m.config_hash.substr(0, 12) << ")\n";
    return 0;
}

// eval ----------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string predictions;
    std::string data;
    std::string net = "a";
    bool csv_only = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    if (a.checkpoint.empty() == a.predictions.empty()) {
        throw Error(Errc::InvalidConfig, "eval needs exactly one of --checkpoint or --predictions");
    }
    const auto samples = load_dataset(a.data);
    EvalReport report;
    if (!a.checkpoint.empty()) {
        const TrainState state = load_checkpoint(a.checkpoint);
        report = evaluate(a.net == "b" ? state.params_b : state.params_a, samples);
    } else {
        // Precomputed disparities, one predictions/<id>.pfm per sample.
        EvalAccumulator acc;
        for (const auto& s : samples) {
            if (!s.gt_disparity) continue;
            const DisparityMap pred = load_pfm(fs::path(a.predictions) / (s.id + ".pfm"));
            const auto valid = gt_validity(*s.gt_disparity);
            acc.add(pred.values, *s.gt_disparity, valid,
                    s.gt_occlusion ? std::span<const std::uint8_t>(*s.gt_occlusion) : std::span<const std::uint8_t>{});
        }
        report = acc.report();
    }
    if (!a.csv_only) out << eval_summary(report);
    out << eval_csv_header() << "\n" << eval_csv_row(report) << "\n";
    return 0;
}

// plot ----------------------------------------------------------------------

struct PlotArgs {
    std::string log;
    std::string out;
    std::string checkpoint;
    std::string data;
    int max_samples = 4;
    bool force = false;
};

struct LossSeries {
    std::vector<double> total_a, total_b;
};

LossSeries read_loss_log(const fs::path& path) {
    std::istringstream is(read_text(path));
    std::string line;
    if (!std::getline(is, line) || line != train_log_header()) {
        throw Error(Errc::MalformedHeader, path.string() + ": unexpected log header");
    }
    LossSeries s;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        if (f.size() != 8) throw Error(Errc::MalformedHeader, path.string() + ": bad row '" + line + "'");
        double total = 0;
        try {
            total = std::stod(f[6]);
        } catch (const std::exception&) {
            total = std::nan("");
        }
        (f[2] == "A" ? s.total_a : s.total_b).push_back(total);
    }
    if (s.total_a.empty()) throw Error(Errc::TruncatedData, path.string() + ": no rows");
    return s;
}

std::string loss_svg(const LossSeries& s) {
    const double w = 640, h = 360, pad = 48;
    double lo = 1e300, hi = -1e300;
    for (const auto* v : {&s.total_a, &s.total_b})
        for (double x : *v)
            if (std::isfinite(x)) lo = std::min(lo, x), hi = std::max(hi, x);
    if (!(hi > lo)) hi = lo + 1.0;
    const std::size_t n = std::max(s.total_a.size(), s.total_b.size());
    auto px = [&](std::size_t i) { return pad + (w - 2 * pad) * (n > 1 ? double(i) / double(n - 1) : 0.0); };
    auto py = [&](double v) { return h - pad - (h - 2 * pad) * (v - lo) / (hi - lo); };
    auto polyline = [&](const std::vector<double>& v, const char* color) {
        std::ostringstream os;
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < v.size(); ++i)
            if (std::isfinite(v[i])) os << px(i) << "," << py(v[i]) << " ";
        os << "\"/>\n";
        return os.str();
    };
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\"" << h - pad
       << "\" stroke=\"black\"/>\n"
       << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad
       << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << w / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\" font-size=\"12\">iteration</text>\n"
       << "<text x=\"4\" y=\"" << pad - 8 << "\" font-size=\"12\">total loss " << hi << "</text>\n"
       << "<text x=\"4\" y=\"" << h - pad + 16 << "\" font-size=\"12\">" << lo << "</text>\n"
       << polyline(s.total_a, "#1f77b4") << polyline(s.total_b, "#d62728")
       << "<text x=\"" << w - pad - 90 << "\" y=\"" << pad << "\" font-size=\"12\" fill=\"#1f77b4\">network A</text>\n"
       << "<text x=\"" << w - pad - 90 << "\" y=\"" << pad + 16
       << "\" font-size=\"12\" fill=\"#d62728\">network B</text>\n"
       << "</svg>\n";
    return os.str();
}

int cmd_plot(const PlotArgs& a, std::ostream& out) {
    const fs::path dir = a.out;
    const fs::path svg = dir / "loss_curve.svg";
    if (fs::exists(svg) && !a.force) throw Error(Errc::AlreadyExists, svg.string() + " exists (use --force)");
    const LossSeries series = read_loss_log(a.log);
    fs::create_directories(dir);
    write_text(svg, loss_svg(series));
    out << "wrote " << svg.string() << "\n";
    if (a.checkpoint.empty()) return 0;
    if (a.data.empty()) throw Error(Errc::InvalidConfig, "--checkpoint needs --data");

    const TrainState state = load_checkpoint(a.checkpoint);
    const auto samples = load_dataset(a.data);
    const double limit = state.params_a.arch.disparity_limit();
    int written = 0;
    for (const auto& s : samples) {
        if (written >= a.max_samples) break;
        const auto pred = predict(state.params_a, s);
        Image disp(1, s.height(), s.width());
        for (std::size_t i = 0; i < pred.size(); ++i) disp.data[i] = static_cast<float>(pred[i] / limit);
        write_png(dir / (s.id + "_disp.png"), disp);
        if (s.gt_disparity) {
            Image error(1, s.height(), s.width());
            const auto valid = gt_validity(*s.gt_disparity);
            for (std::size_t i = 0; i < pred.size(); ++i)
                error.data[i] = valid[i] ? std::min(std::abs(pred[i] - (*s.gt_disparity)[i]) / 8.0f, 1.0f) : 0.0f;
            write_png(dir / (s.id + "_error.png"), error);
        }
        ++written;
    }
    out << "wrote disparity and error maps for " << written << " samples\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Co-teaching unsupervised stereo matching on synthetic scenes", "cot_stereo"};
    app.require_subcommand(1);

    GenerateArgs ga;
    auto* gen = app.add_subcommand("generate", "write a synthetic stereo dataset");
    gen->add_option("--count", ga.count, "number of scenes")->capture_default_str();
    gen->add_option("--out", ga.out, "output directory")->required();
    gen->add_option("--seed", ga.seed, "scene seed")->capture_default_str();
    gen->add_option("--width", ga.ranges.width)->capture_default_str();
    gen->add_option("--height", ga.ranges.height)->capture_default_str();
    gen->add_option("--min-disparity", ga.ranges.min_disparity)->capture_default_str();
    gen->add_option("--max-disparity", ga.ranges.max_disparity)->capture_default_str();
    gen->add_option("--min-foreground", ga.ranges.min_foreground)->capture_default_str();
    gen->add_option("--max-foreground", ga.ranges.max_foreground)->capture_default_str();
    gen->add_option("--noise", ga.ranges.noise_sigma, "Gaussian noise sigma")->capture_default_str();
    gen->add_flag("--force", ga.force, "write into a non-empty directory");

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "co-teach two networks");
    tr->add_option("--data", ta.data, "dataset directory");
    tr->add_option("--out", ta.out, "run directory")->required();
    tr->add_option("--config", ta.config, "key=value config file");
    tr->add_option("--ablation", ta.ablation, "preset a..g")->check(CLI::IsMember({"a", "b", "c", "d", "e", "f", "g"}));
    tr->add_option("--epochs", ta.epochs, "override t_max");
    tr->add_option("--threads", ta.threads, "1 or 2");
    tr->add_option("--manifest", ta.manifest, "replay the run described by a manifest.json");
    tr->add_flag("--force", ta.force, "replace an existing run");
    tr->add_flag("--quiet", ta.quiet, "no per-epoch progress");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "evaluate network A against ground truth");
    ev->add_option("--checkpoint", ea.checkpoint, "checkpoint file");
    ev->add_option("--predictions", ea.predictions, "directory of <id>.pfm predictions");
    ev->add_option("--data", ea.data, "dataset directory")->required();
    ev->add_option("--net", ea.net, "network to evaluate")->check(CLI::IsMember({"a", "b"}))->capture_default_str();
    ev->add_flag("--csv", ea.csv_only, "print only the CSV row");

    PlotArgs pa;
    auto* pl = app.add_subcommand("plot", "loss curve SVG and disparity/error PNGs");
    pl->add_option("--log", pa.log, "train_log.csv")->required();
    pl->add_option("--out", pa.out, "output directory")->required();
    pl->add_option("--checkpoint", pa.checkpoint, "checkpoint for disparity maps");
    pl->add_option("--data", pa.data, "dataset directory for disparity maps");
    pl->add_option("--max-samples", pa.max_samples)->capture_default_str();
    pl->add_flag("--force", pa.force, "overwrite existing plots");

    std::vector<const char*> argv{"cot_stereo"};
    for (const auto& s : args) argv.push_back(s.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*gen) return cmd_generate(ga, out);
        if (*tr) return cmd_train(ta, out, err);
        if (*ev) return cmd_eval(ea, out);
        if (*pl) return cmd_plot(pa, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        err << "error: Io: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace cot::cli
