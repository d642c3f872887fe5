#include "cot/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace cot {

template <typename T>
Tensor<T> to_tensor(const std::vector<const Image*>& images) {
    if (images.empty()) throw Error(Errc::ShapeMismatch, "to_tensor: empty batch");
    const Image& first = *images.front();
    std::vector<T> v;
    v.reserve(images.size() * first.data.size());
    for (const Image* img : images) {
        if (img->channels != first.channels || img->height != first.height || img->width != first.width) {
            throw Error(Errc::ShapeMismatch, "to_tensor: images differ in shape");
        }
        v.insert(v.end(), img->data.begin(), img->data.end());
    }
    return Tensor<T>::from({static_cast<int>(images.size()), first.channels, first.height, first.width}, std::move(v));
}

template <typename T>
Image from_tensor(const Tensor<T>& t, int n) {
    if (!t.defined() || t.rank() != 4 || n < 0 || n >= t.dim(0)) {
        throw Error(Errc::ShapeMismatch, "from_tensor: expected NCHW tensor");
    }
    Image img(t.dim(1), t.dim(2), t.dim(3));
    const auto src = t.values().subspan(static_cast<std::size_t>(n) * img.data.size(), img.data.size());
    std::transform(src.begin(), src.end(), img.data.begin(), [](T x) { return static_cast<float>(x); });
    return img;
}

template Tensor<float> to_tensor<float>(const std::vector<const Image*>&);
template Tensor<double> to_tensor<double>(const std::vector<const Image*>&);
template Image from_tensor(const Tensor<float>&, int);
template Image from_tensor(const Tensor<double>&, int);

namespace {

// png_image owns libpng state until png_image_free; this keeps it paired.
struct PngImage {
    png_image image;
    PngImage() {
        std::memset(&image, 0, sizeof(image));
        image.version = PNG_IMAGE_VERSION;
    }
    ~PngImage() { png_image_free(&image); }
    PngImage(const PngImage&) = delete;
    PngImage& operator=(const PngImage&) = delete;
};

void begin_read(PngImage& png, const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error(Errc::Io, "no such file: " + path.string());
    if (!png_image_begin_read_from_file(&png.image, path.string().c_str())) {
        throw Error(Errc::MalformedHeader, path.string() + ": " + png.image.message);
    }
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
    PngImage png;
    begin_read(png, path);
    const bool gray = (png.image.format & PNG_FORMAT_FLAG_COLOR) == 0;
    png.image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    const int channels = gray ? 1 : 3;
    const int h = static_cast<int>(png.image.height), w = static_cast<int>(png.image.width);
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(png.image));
    if (!png_image_finish_read(&png.image, nullptr, buf.data(), 0, nullptr)) {
        throw Error(Errc::TruncatedData, path.string() + ": " + png.image.message);
    }
    Image img(channels, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c)
                img.at(c, y, x) = static_cast<float>(buf[(static_cast<std::size_t>(y) * w + x) * channels + c]) / 255.0f;
    return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw Error(Errc::UnsupportedFormat, "write_png: need 1 or 3 channels");
    PngImage png;
    png.image.width = static_cast<png_uint_32>(img.width);
    png.image.height = static_cast<png_uint_32>(img.height);
    png.image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<png_byte> buf(static_cast<std::size_t>(img.width) * img.height * img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
                buf[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c] =
                    static_cast<png_byte>(std::lround(v * 255.0f));
            }
    if (!png_image_write_to_file(&png.image, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
        throw Error(Errc::Io, path.string() + ": " + png.image.message);
    }
}

std::vector<std::uint16_t> read_png16(const std::filesystem::path& path, int& height, int& width) {
    PngImage png;
    begin_read(png, path);
    if ((png.image.format & PNG_FORMAT_FLAG_LINEAR) == 0) {
        throw Error(Errc::WrongBitDepth, path.string() + ": expected a 16-bit PNG");
    }
    if (PNG_IMAGE_SAMPLE_CHANNELS(png.image.format) != 1) {
        throw Error(Errc::UnsupportedFormat, path.string() + ": expected a single-channel PNG");
    }
    png.image.format = PNG_FORMAT_LINEAR_Y;
    height = static_cast<int>(png.image.height);
    width = static_cast<int>(png.image.width);
    std::vector<std::uint16_t> out(static_cast<std::size_t>(height) * width);
    if (!png_image_finish_read(&png.image, nullptr, out.data(), 0, nullptr)) {
        throw Error(Errc::TruncatedData, path.string() + ": " + png.image.message);
    }
    return out;
}

void write_png16(const std::filesystem::path& path, const std::vector<std::uint16_t>& values, int height, int width) {
    if (values.size() != static_cast<std::size_t>(height) * width) {
        throw Error(Errc::ShapeMismatch, "write_png16: value count does not match dimensions");
    }
    PngImage png;
    png.image.width = static_cast<png_uint_32>(width);
    png.image.height = static_cast<png_uint_32>(height);
    png.image.format = PNG_FORMAT_LINEAR_Y;
    if (!png_image_write_to_file(&png.image, path.string().c_str(), 0, values.data(), 0, nullptr)) {
        throw Error(Errc::Io, path.string() + ": " + png.image.message);
    }
}

}  // namespace cot
