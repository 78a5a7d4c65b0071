#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cogmap {

// 8-bit RGB image, row-major interleaved.
struct Image8 {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<uint8_t> pixels;

    static Image8 blank(int64_t h, int64_t w) {
        return Image8{h, w, std::vector<uint8_t>(static_cast<size_t>(h * w * 3), 0)};
    }
    uint8_t* row(int64_t y) { return pixels.data() + y * width * 3; }
    const uint8_t* row(int64_t y) const { return pixels.data() + y * width * 3; }
    bool operator==(const Image8&) const = default;
};

void write_png(const std::string& path, const Image8& img);
Image8 read_png(const std::string& path);

// Training-time pixel scaling: u8 -> [-1, 1] and back.
inline float pixel_to_float(uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }
inline uint8_t float_to_pixel(float v) {
    float x = (v + 1.0f) * 127.5f;
    if (x < 0.0f) x = 0.0f;
    if (x > 255.0f) x = 255.0f;
    return static_cast<uint8_t>(x + 0.5f);
}

}  // namespace cogmap
