#include "cot/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace cot {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

double hash_unit(std::uint64_t seed, std::int64_t a, std::int64_t b, std::uint64_t c) {
    std::uint64_t h = splitmix(seed);
    h = splitmix(h ^ static_cast<std::uint64_t>(a));
    h = splitmix(h ^ static_cast<std::uint64_t>(b));
    h = splitmix(h ^ c);
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(std::uint64_t seed, double u, double v, double period, std::uint64_t channel) {
    const double x = u / period, y = v / period;
    const double fx = std::floor(x), fy = std::floor(y);
    const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
    const double sx = smoothstep(x - fx), sy = smoothstep(y - fy);
    const double v00 = hash_unit(seed, ix, iy, channel), v10 = hash_unit(seed, ix + 1, iy, channel);
    const double v01 = hash_unit(seed, ix, iy + 1, channel), v11 = hash_unit(seed, ix + 1, iy + 1, channel);
    const double top = v00 + (v10 - v00) * sx;
    const double bot = v01 + (v11 - v01) * sx;
    return top + (bot - top) * sy;
}

struct Octave {
    double period;
    double weight;
};
constexpr Octave kOctaves[] = {{24.0, 0.45}, {12.0, 0.35}, {6.0, 0.20}};

bool covers_left(const SceneLayer& l, int x, int y) {
    return x >= l.x && x < l.x + l.width && y >= l.y && y < l.y + l.height;
}

// Right-view pixel at (xr, y) shows layer l at left coordinate xr + d.
bool covers_right(const SceneLayer& l, double xr, int y) {
    const double xl = xr + l.disparity;
    return xl >= l.x && xl < l.x + l.width && y >= l.y && y < l.y + l.height;
}

std::size_t front_left(const SyntheticSceneSpec& spec, int x, int y) {
    for (std::size_t k = spec.layers.size(); k-- > 1;)
        if (covers_left(spec.layers[k], x, y)) return k;
    return 0;
}

std::size_t front_right(const SyntheticSceneSpec& spec, double xr, int y) {
    for (std::size_t k = spec.layers.size(); k-- > 1;)
        if (covers_right(spec.layers[k], xr, y)) return k;
    return 0;
}

}  // namespace

void layer_texture(std::uint64_t seed, double u, double v, float rgb[3]) {
    for (std::uint64_t c = 0; c < 3; ++c) {
        double n = 0;
        for (const auto& o : kOctaves) n += o.weight * value_noise(seed, u, v, o.period, c);
        const double base = 0.25 + 0.5 * hash_unit(seed, -1, -1, 100 + c);
        rgb[c] = static_cast<float>(std::clamp(base + 1.4 * (n - 0.5), 0.0, 1.0));
    }
}

void validate(const SyntheticSceneSpec& spec) {
    if (spec.width < 4 || spec.height < 4) throw Error(Errc::InvalidSpec, "scene must be at least 4x4");
    if (spec.layers.empty()) throw Error(Errc::InvalidSpec, "scene needs a background layer");
    if (!(spec.noise_sigma >= 0.0)) throw Error(Errc::InvalidSpec, "noise sigma must be >= 0");
    for (std::size_t k = 0; k < spec.layers.size(); ++k) {
        const auto& l = spec.layers[k];
        if (!std::isfinite(l.disparity) || l.disparity < 0) throw Error(Errc::InvalidSpec, "layer disparity must be finite and >= 0");
        if (k > 0) {
            if (!(l.disparity > spec.layers[k - 1].disparity)) {
                throw Error(Errc::InvalidSpec, "nearer layers need strictly larger disparity");
            }
            if (l.width <= 0 || l.height <= 0) throw Error(Errc::InvalidSpec, "empty layer rectangle");
        }
    }
}

void validate(const StereoSample& s) {
    if (s.left.channels != 3 || s.right.channels != 3) throw Error(Errc::ShapeMismatch, s.id + ": images must be RGB");
    if (s.left.height != s.right.height || s.left.width != s.right.width) {
        throw Error(Errc::ShapeMismatch, s.id + ": left/right shapes differ");
    }
    const std::size_t n = s.left.plane();
    if (s.gt_disparity && s.gt_disparity->size() != n) throw Error(Errc::ShapeMismatch, s.id + ": gt disparity size");
    if (s.gt_occlusion && s.gt_occlusion->size() != n) throw Error(Errc::ShapeMismatch, s.id + ": gt occlusion size");
}

SyntheticSceneSpec random_scene_spec(std::mt19937_64& rng, const SceneRanges& r) {
    if (r.max_disparity - r.min_disparity < r.max_foreground + 1.0 || r.min_foreground < 0 ||
        r.max_foreground < r.min_foreground) {
        throw Error(Errc::InvalidSpec, "scene ranges too narrow");
    }
    SyntheticSceneSpec spec;
    spec.width = r.width;
    spec.height = r.height;
    spec.noise_sigma = r.noise_sigma;
    spec.noise_seed = rng();
    std::uniform_int_distribution<int> count(r.min_foreground, r.max_foreground);
    const int fg = count(rng);
    std::uniform_real_distribution<double> disp(r.min_disparity, r.max_disparity);
    std::vector<double> d(static_cast<std::size_t>(fg) + 1);
    // Rejection keeps layers at least 1 px apart in disparity.
    for (bool ok = false; !ok;) {
        for (auto& v : d) v = disp(rng);
        std::sort(d.begin(), d.end());
        ok = true;
        for (std::size_t i = 1; i < d.size(); ++i) ok = ok && d[i] - d[i - 1] >= 1.0;
    }
    SceneLayer bg;
    bg.disparity = d[0];
    bg.width = r.width;
    bg.height = r.height;
    bg.texture_seed = rng();
    spec.layers.push_back(bg);
    for (int k = 1; k <= fg; ++k) {
        SceneLayer l;
        l.disparity = d[static_cast<std::size_t>(k)];
        l.width = std::uniform_int_distribution<int>(std::max(2, r.width / 6), std::max(2, r.width / 2))(rng);
        l.height = std::uniform_int_distribution<int>(std::max(2, r.height / 5), std::max(2, r.height / 2))(rng);
        l.x = std::uniform_int_distribution<int>(0, r.width - l.width)(rng);
        l.y = std::uniform_int_distribution<int>(0, r.height - l.height)(rng);
        l.texture_seed = rng();
        spec.layers.push_back(l);
    }
    return spec;
}

StereoSample generate_scene(const SyntheticSceneSpec& spec, std::string id) {
    validate(spec);
    const int w = spec.width, h = spec.height;
    StereoSample s;
    s.id = std::move(id);
    s.left = Image(3, h, w);
    s.right = Image(3, h, w);
    std::vector<float> disp(static_cast<std::size_t>(h) * w);
    std::vector<std::uint8_t> occ(disp.size(), 0);
    float rgb[3];
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t kl = front_left(spec, x, y);
            const SceneLayer& L = spec.layers[kl];
            layer_texture(L.texture_seed, x - (kl ? L.x : 0), y - (kl ? L.y : 0), rgb);
            for (int c = 0; c < 3; ++c) s.left.at(c, y, x) = rgb[c];

            const std::size_t kr = front_right(spec, x, y);
            const SceneLayer& R = spec.layers[kr];
            layer_texture(R.texture_seed, x + R.disparity - (kr ? R.x : 0), y - (kr ? R.y : 0), rgb);
            for (int c = 0; c < 3; ++c) s.right.at(c, y, x) = rgb[c];

            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            disp[p] = static_cast<float>(L.disparity);
            const double xr = x - L.disparity;
            // Out-of-view correspondences are not occlusions by a nearer layer.
            if (xr >= 0 && spec.layers[front_right(spec, xr, y)].disparity > L.disparity) occ[p] = 1;
        }
    if (spec.noise_sigma > 0) {
        std::mt19937_64 rng(spec.noise_seed);
        std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.noise_sigma));
        for (Image* img : {&s.left, &s.right})
            for (float& v : img->data) v = std::clamp(v + noise(rng), 0.0f, 1.0f);
    }
    s.gt_disparity = std::move(disp);
    s.gt_occlusion = std::move(occ);
    return s;
}

std::vector<StereoSample> generate_dataset(std::size_t count, std::uint64_t seed, const SceneRanges& ranges) {
    std::mt19937_64 rng(seed);
    std::vector<StereoSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::ostringstream id;
        id << "scene_" << std::setw(4) << std::setfill('0') << i;
        out.push_back(generate_scene(random_scene_spec(rng, ranges), id.str()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// PFM

DisparityMap parse_pfm(const std::string& bytes) {
    std::istringstream is(bytes);
    std::string magic;
    if (!(is >> magic)) throw Error(Errc::MalformedHeader, "pfm: empty file");
    if (magic == "PF") throw Error(Errc::UnsupportedFormat, "pfm: color PFM not supported");
    if (magic != "Pf") throw Error(Errc::MalformedHeader, "pfm: bad magic '" + magic.substr(0, 8) + "'");
    long long width = 0, height = 0;
    double scale = 0;
    if (!(is >> width >> height)) throw Error(Errc::MalformedHeader, "pfm: bad dimensions");
    if (width <= 0 || height <= 0 || width > (1 << 15) || height > (1 << 15)) {
        throw Error(Errc::MalformedHeader, "pfm: dimensions out of range");
    }
    if (!(is >> scale) || !std::isfinite(scale) || scale == 0.0) throw Error(Errc::MalformedHeader, "pfm: bad scale");
    const int sep = is.get();
    if (sep == EOF || !std::isspace(sep)) throw Error(Errc::MalformedHeader, "pfm: missing header terminator");
    const auto offset = static_cast<std::size_t>(is.tellg());
    const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    if (bytes.size() < offset || bytes.size() - offset < n * 4) throw Error(Errc::TruncatedData, "pfm: payload too short");
    const bool little = scale < 0;
    DisparityMap map(static_cast<int>(height), static_cast<int>(width));
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
    for (int row = 0; row < map.height; ++row) {
        const int y = map.height - 1 - row;  // stored bottom-to-top
        for (int x = 0; x < map.width; ++x, p += 4) {
            std::uint32_t u = little ? (p[0] | p[1] << 8 | p[2] << 16 | static_cast<std::uint32_t>(p[3]) << 24)
                                     : (p[3] | p[2] << 8 | p[1] << 16 | static_cast<std::uint32_t>(p[0]) << 24);
            const float v = std::bit_cast<float>(u);
            const std::size_t i = static_cast<std::size_t>(y) * map.width + x;
            map.values[i] = v;
            map.valid[i] = std::isfinite(v) ? 1 : 0;
        }
    }
    return map;
}

std::string encode_pfm(const DisparityMap& map) {
    if (map.values.size() != static_cast<std::size_t>(map.height) * map.width) {
        throw Error(Errc::ShapeMismatch, "pfm: value count does not match dimensions");
    }
    std::ostringstream os;
    os << "Pf\n" << map.width << ' ' << map.height << "\n-1\n";
    std::string out = os.str();
    out.reserve(out.size() + map.values.size() * 4);
    for (int row = 0; row < map.height; ++row) {
        const int y = map.height - 1 - row;
        for (int x = 0; x < map.width; ++x) {
            const auto u = std::bit_cast<std::uint32_t>(map.values[static_cast<std::size_t>(y) * map.width + x]);
            for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xffu));
        }
    }
    return out;
}

DisparityMap load_pfm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(Errc::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_pfm(ss.str());
}

void save_pfm(const std::filesystem::path& path, const DisparityMap& map) {
    const std::string bytes = encode_pfm(map);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(Errc::Io, "cannot open " + path.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw Error(Errc::Io, "failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// KITTI

DisparityMap load_kitti_png(const std::filesystem::path& path) {
    int h = 0, w = 0;
    const auto raw = read_png16(path, h, w);
    DisparityMap map(h, w);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        map.values[i] = static_cast<float>(raw[i]) / 256.0f;
        map.valid[i] = raw[i] > 0 ? 1 : 0;
    }
    return map;
}

void save_kitti_png(const std::filesystem::path& path, const DisparityMap& map) {
    std::vector<std::uint16_t> raw(map.values.size(), 0);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const bool valid = map.valid.empty() || map.valid[i];
        const float v = map.values[i];
        if (!valid || !std::isfinite(v) || v <= 0.0f) continue;
        raw[i] = static_cast<std::uint16_t>(std::clamp<long>(std::lround(v * 256.0f), 0, 65535));
    }
    write_png16(path, raw, map.height, map.width);
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> shuffle_dataset(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(splitmix(seed) ^ splitmix(epoch + 0x51ed27ull));
    for (std::size_t i = n; i-- > 1;) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i)(rng);
        std::swap(order[i], order[j]);
    }
    return order;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<StereoSample>& samples) {
    namespace fs = std::filesystem;
    for (const char* sub : {"left", "right", "disp", "occ"}) fs::create_directories(dir / sub);
    for (const auto& s : samples) {
        validate(s);
        write_png(dir / "left" / (s.id + ".png"), s.left);
        write_png(dir / "right" / (s.id + ".png"), s.right);
        if (s.gt_disparity) {
            DisparityMap m(s.height(), s.width());
            m.values = *s.gt_disparity;
            save_pfm(dir / "disp" / (s.id + ".pfm"), m);
        }
        if (s.gt_occlusion) {
            Image occ(1, s.height(), s.width());
            for (std::size_t i = 0; i < occ.data.size(); ++i) occ.data[i] = (*s.gt_occlusion)[i] ? 1.0f : 0.0f;
            write_png(dir / "occ" / (s.id + ".png"), occ);
        }
    }
}

std::vector<StereoSample> load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir / "left") || !fs::is_directory(dir / "right")) {
        throw Error(Errc::Io, dir.string() + ": expected left/ and right/ subdirectories");
    }
    std::vector<fs::path> lefts;
    for (const auto& e : fs::directory_iterator(dir / "left"))
        if (e.path().extension() == ".png") lefts.push_back(e.path());
    std::sort(lefts.begin(), lefts.end());
    std::vector<StereoSample> out;
    for (const auto& lp : lefts) {
        StereoSample s;
        s.id = lp.stem().string();
        s.left = read_png(lp);
        s.right = read_png(dir / "right" / lp.filename());
        if (const auto pfm = dir / "disp" / (s.id + ".pfm"); fs::exists(pfm)) {
            s.gt_disparity = load_pfm(pfm).values;
        } else if (const auto kitti = dir / "disp" / (s.id + ".png"); fs::exists(kitti)) {
            // Invalid KITTI pixels load as 0; evaluation only scores gt > 0.
            s.gt_disparity = load_kitti_png(kitti).values;
        }
        if (const auto occ = dir / "occ" / (s.id + ".png"); fs::exists(occ)) {
            const Image o = read_png(occ);
            std::vector<std::uint8_t> m(o.data.size());
            for (std::size_t i = 0; i < m.size(); ++i) m[i] = o.data[i] > 0.5f ? 1 : 0;
            s.gt_occlusion = std::move(m);
        }
        validate(s);
        out.push_back(std::move(s));
    }
    if (out.empty()) throw Error(Errc::Io, dir.string() + ": no samples found");
    return out;
}

}  // namespace cot
