#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace protosolo {

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct Image8 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 3;
    std::vector<std::uint8_t> pixels;
};

/// Decodes any PNG into the requested channel count (1 or 3). Throws std::runtime_error
/// naming the file when it cannot be decoded.
Image8 read_png(const std::filesystem::path& path, std::size_t channels);
void write_png(const std::filesystem::path& path, const Image8& image);

} // namespace protosolo
