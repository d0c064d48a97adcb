#include "idcompose/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>

#include "idcompose/attention.hpp"
#include "idcompose/errors.hpp"

namespace idc {

namespace {

// Reads one whitespace-delimited token, skipping '#' comments, as PPM allows.
std::string next_token(std::istream& in) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n')
                c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    return tok;
}

std::size_t parse_dim(const std::string& tok, const char* what) {
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
        throw validation_error(std::string("ppm: malformed ") + what + " field '" + tok + "'");
    const unsigned long long v = std::stoull(tok);
    if (v == 0)
        throw validation_error(std::string("ppm: ") + what + " must be positive");
    return static_cast<std::size_t>(v);
}

}  // namespace

RealArray read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw validation_error("ppm: cannot open " + path.string());
    if (next_token(in) != "P6")
        throw validation_error("ppm: " + path.string() + " is not a binary P6 file");
    const std::size_t w = parse_dim(next_token(in), "width");
    const std::size_t h = parse_dim(next_token(in), "height");
    const std::size_t maxval = parse_dim(next_token(in), "maxval");
    if (maxval != 255)
        throw validation_error("ppm: only maxval 255 is supported, got " + std::to_string(maxval));

    std::vector<unsigned char> raw(w * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw validation_error("ppm: " + path.string() + " truncated pixel data");

    RealArray image = RealArray::zeros({3, h, w});
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
            for (std::size_t ch = 0; ch < 3; ++ch)
                image.at(ch, r, c) = static_cast<double>(raw[(r * w + c) * 3 + ch]) / 255.0;
    return image;
}

void write_ppm(const std::filesystem::path& path, const RealArray& image) {
    if (image.rank() != 3 || image.extent(0) != 3)
        throw shape_error("ppm: image must be (3 x H x W), got " + image.shape_string());
    const std::size_t h = image.extent(1), w = image.extent(2);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw validation_error("ppm: cannot open " + path.string() + " for writing");
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> raw(w * h * 3);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(image.at(ch, r, c), 0.0, 1.0);
                raw[(r * w + c) * 3 + ch] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out)
        throw validation_error("ppm: failed writing " + path.string());
}

PixelRect to_pixel_rect(const BBox& box, std::size_t height, std::size_t width) {
    if (height == 0 || width == 0)
        throw validation_error("pixel rect: image extents must be positive");
    const auto lo = [](double v, std::size_t n) {
        auto i = static_cast<long long>(std::floor(v * static_cast<double>(n)));
        return static_cast<std::size_t>(std::clamp(i, 0ll, static_cast<long long>(n) - 1));
    };
    const auto hi = [](double v, std::size_t n) {
        auto i = static_cast<long long>(std::ceil(v * static_cast<double>(n)));
        return static_cast<std::size_t>(std::clamp(i, 1ll, static_cast<long long>(n)));
    };
    PixelRect r{lo(box.x0, width), lo(box.y0, height), hi(box.x1, width), hi(box.y1, height)};
    if (r.x1 <= r.x0)
        r.x1 = r.x0 + 1;
    if (r.y1 <= r.y0)
        r.y1 = r.y0 + 1;
    return r;
}

RealArray crop_image(const RealArray& image, const BBox& box) {
    if (image.rank() != 3 || image.extent(0) != 3)
        throw shape_error("crop: image must be (3 x H x W), got " + image.shape_string());
    const std::size_t h = image.extent(1), w = image.extent(2);
    const PixelRect r = to_pixel_rect(box, h, w);
    RealArray out = RealArray::zeros({3, r.y1 - r.y0, r.x1 - r.x0});
    for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t y = r.y0; y < r.y1; ++y)
            for (std::size_t x = r.x0; x < r.x1; ++x)
                out.at(ch, y - r.y0, x - r.x0) = image.at(ch, y, x);
    return out;
}

RealArray resize_bilinear(const RealArray& map, std::size_t out_h, std::size_t out_w) {
    if (map.rank() != 2)
        throw shape_error("resize: expected 2D map, got " + map.shape_string());
    if (out_h == 0 || out_w == 0)
        throw validation_error("resize: output extents must be positive");
    const std::size_t in_h = map.rows(), in_w = map.cols();
    RealArray out = RealArray::zeros({out_h, out_w});
    const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
    for (std::size_t r = 0; r < out_h; ++r) {
        const double fy = std::max(0.0, (static_cast<double>(r) + 0.5) * sy - 0.5);
        const std::size_t y0 = std::min(static_cast<std::size_t>(fy), in_h - 1);
        const std::size_t y1 = std::min(y0 + 1, in_h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t c = 0; c < out_w; ++c) {
            const double fx = std::max(0.0, (static_cast<double>(c) + 0.5) * sx - 0.5);
            const std::size_t x0 = std::min(static_cast<std::size_t>(fx), in_w - 1);
            const std::size_t x1 = std::min(x0 + 1, in_w - 1);
            const double wx = fx - static_cast<double>(x0);
            out.at(r, c) = (1.0 - wy) * ((1.0 - wx) * map.at(y0, x0) + wx * map.at(y0, x1)) +
                           wy * ((1.0 - wx) * map.at(y1, x0) + wx * map.at(y1, x1));
        }
    }
    return out;
}

RealArray luminance(const RealArray& image) {
    if (image.rank() != 3 || image.extent(0) != 3)
        throw shape_error("luminance: image must be (3 x H x W), got " + image.shape_string());
    const std::size_t h = image.extent(1), w = image.extent(2);
    RealArray out = RealArray::zeros({h, w});
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
            out.at(r, c) = (image.at(0, r, c) + image.at(1, r, c) + image.at(2, r, c)) / 3.0;
    return out;
}

}  // namespace idc
