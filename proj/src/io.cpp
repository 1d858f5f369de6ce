#include "thor/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>

namespace thor::io {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open " + path);
    return f;
}

// rows: height x (width * channels * bytes_per_sample), big-endian samples
void write_png_rows(const std::string& path, int width, int height, int bit_depth, int color_type,
                    const std::vector<std::vector<png_byte>>& rows) {
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing PNG " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (const auto& row : rows) png_write_row(png, row.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::uint16_t quantize16(double v) {
    return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
}

std::uint8_t quantize8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

} // namespace

void write_png16(const Image& img, const std::string& path) {
    std::vector<std::vector<png_byte>> rows(img.rows(), std::vector<png_byte>(2 * img.cols()));
    for (Index y = 0; y < img.rows(); ++y) {
        for (Index x = 0; x < img.cols(); ++x) {
            const std::uint16_t q = quantize16(img(y, x));
            rows[y][2 * x] = static_cast<png_byte>(q >> 8);
            rows[y][2 * x + 1] = static_cast<png_byte>(q & 0xff);
        }
    }
    write_png_rows(path, static_cast<int>(img.cols()), static_cast<int>(img.rows()), 16, PNG_COLOR_TYPE_GRAY, rows);
}

void write_png8(const Image& img, const std::string& path) {
    std::vector<std::vector<png_byte>> rows(img.rows(), std::vector<png_byte>(img.cols()));
    for (Index y = 0; y < img.rows(); ++y)
        for (Index x = 0; x < img.cols(); ++x) rows[y][x] = quantize8(img(y, x));
    write_png_rows(path, static_cast<int>(img.cols()), static_cast<int>(img.rows()), 8, PNG_COLOR_TYPE_GRAY, rows);
}

void write_mask_png(const Mask& mask, const std::string& path) {
    std::vector<std::vector<png_byte>> rows(mask.rows(), std::vector<png_byte>(mask.cols()));
    for (Index y = 0; y < mask.rows(); ++y)
        for (Index x = 0; x < mask.cols(); ++x) rows[y][x] = mask(y, x) ? 255 : 0;
    write_png_rows(path, static_cast<int>(mask.cols()), static_cast<int>(mask.rows()), 8, PNG_COLOR_TYPE_GRAY, rows);
}

Image read_png(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed reading PNG " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    }
    png_read_update_info(png, info);
    depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<std::vector<png_byte>> rows(height, std::vector<png_byte>(rowbytes));
    std::vector<png_bytep> ptrs(height);
    for (int y = 0; y < height; ++y) ptrs[y] = rows[y].data();
    png_read_image(png, ptrs.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            if (depth == 16) {
                img(y, x) = ((rows[y][2 * x] << 8) | rows[y][2 * x + 1]) / 65535.0;
            } else {
                img(y, x) = rows[y][x] / 255.0;
            }
        }
    }
    return img;
}

Mask read_mask_png(const std::string& path) {
    const Image img = read_png(path);
    return (img.array() > 0.0).cast<std::uint8_t>();
}

void write_float_grid(const Image& img, const std::string& path, const nlohmann::json& extra) {
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path);
        std::vector<float> data(img.size());
        for (Index k = 0; k < img.size(); ++k) data[k] = static_cast<float>(img.data()[k]);
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    }
    nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
    meta["height"] = img.rows();
    meta["width"] = img.cols();
    meta["dtype"] = "float32";
    meta["order"] = "row-major";
    write_json(meta, path + ".json");
}

Image read_float_grid(const std::string& path) {
    const nlohmann::json meta = read_json(path + ".json");
    const Index h = meta.at("height").get<Index>();
    const Index w = meta.at("width").get<Index>();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<float> data(static_cast<std::size_t>(h * w));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) throw IoError("short float grid " + path);
    Image img(h, w);
    for (Index k = 0; k < img.size(); ++k) img.data()[k] = data[k];
    return img;
}

Image read_image(const std::string& path) {
    const auto ext = std::filesystem::path(path).extension().string();
    if (ext == ".png" || ext == ".PNG") return read_png(path);
    return read_float_grid(path);
}

Rgb heat_color(double v) {
    // piecewise-linear black -> purple -> red -> yellow -> white
    static constexpr std::array<std::array<double, 3>, 5> stops = {{
        {0.0, 0.0, 0.0}, {0.35, 0.0, 0.55}, {0.85, 0.15, 0.1}, {1.0, 0.8, 0.0}, {1.0, 1.0, 1.0},
    }};
    v = std::clamp(v, 0.0, 1.0) * (stops.size() - 1);
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(v), stops.size() - 2);
    const double f = v - static_cast<double>(i);
    auto channel = [&](int c) { return quantize8(stops[i][c] * (1.0 - f) + stops[i + 1][c] * f); };
    return {channel(0), channel(1), channel(2)};
}

RgbImage heatmap(const Image& values, double lo, double hi) {
    const double span = hi > lo ? hi - lo : 1.0;
    RgbImage out(values.rows(), std::vector<Rgb>(values.cols()));
    for (Index y = 0; y < values.rows(); ++y)
        for (Index x = 0; x < values.cols(); ++x) out[y][x] = heat_color((values(y, x) - lo) / span);
    return out;
}

RgbImage grayscale(const Image& values) {
    RgbImage out(values.rows(), std::vector<Rgb>(values.cols()));
    for (Index y = 0; y < values.rows(); ++y) {
        for (Index x = 0; x < values.cols(); ++x) {
            const auto q = quantize8(values(y, x));
            out[y][x] = {q, q, q};
        }
    }
    return out;
}

RgbImage side_by_side(const std::vector<RgbImage>& panels, int gap) {
    if (panels.empty()) return {};
    std::size_t height = 0;
    std::size_t width = 0;
    for (const auto& p : panels) {
        height = std::max(height, p.size());
        width += (p.empty() ? 0 : p.front().size());
    }
    width += static_cast<std::size_t>(gap) * (panels.size() - 1);
    RgbImage out(height, std::vector<Rgb>(width, Rgb{255, 255, 255}));
    std::size_t x0 = 0;
    for (const auto& p : panels) {
        for (std::size_t y = 0; y < p.size(); ++y)
            for (std::size_t x = 0; x < p[y].size(); ++x) out[y][x0 + x] = p[y][x];
        x0 += (p.empty() ? 0 : p.front().size()) + static_cast<std::size_t>(gap);
    }
    return out;
}

void write_rgb_png(const RgbImage& img, const std::string& path) {
    if (img.empty()) throw IoError("write_rgb_png: empty image");
    std::vector<std::vector<png_byte>> rows(img.size(), std::vector<png_byte>(3 * img.front().size()));
    for (std::size_t y = 0; y < img.size(); ++y) {
        for (std::size_t x = 0; x < img[y].size(); ++x) {
            rows[y][3 * x] = img[y][x].r;
            rows[y][3 * x + 1] = img[y][x].g;
            rows[y][3 * x + 2] = img[y][x].b;
        }
    }
    write_png_rows(path, static_cast<int>(img.front().size()), static_cast<int>(img.size()), 8, PNG_COLOR_TYPE_RGB,
                   rows);
}

void write_json(const nlohmann::json& doc, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << doc.dump(2) << "\n";
    if (!out) throw IoError("short write " + path);
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed JSON in " + path + ": " + e.what());
    }
}

void ensure_directory(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

} // namespace thor::io
