#pragma once

#include <string>
#include <vector>

namespace clipnet {

// 8-bit RGB, row-major, no padding.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<unsigned char> rgb;

    std::size_t index(int y, int x) const {
        return (static_cast<std::size_t>(y) * width + x) * 3;
    }
};

Image read_png_rgb(const std::string& path);
void write_png_rgb(const std::string& path, const Image& img);

}  // namespace clipnet
