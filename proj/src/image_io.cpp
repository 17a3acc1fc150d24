#include "protosolo/image_io.hpp"

#include <png.h>

#include <cstring>
#include <stdexcept>
#include <string>

namespace protosolo {

Image8 read_png(const std::filesystem::path& path, std::size_t channels)
{
    if (channels != 1 && channels != 3) {
        throw std::invalid_argument("read_png: channels must be 1 or 3");
    }
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&img, path.c_str()) == 0) {
        throw std::runtime_error("cannot decode PNG '" + path.string() + "': " + img.message);
    }
    img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    Image8 out;
    out.width = img.width;
    out.height = img.height;
    out.channels = channels;
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    if (png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr) == 0) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw std::runtime_error("cannot decode PNG '" + path.string() + "': " + msg);
    }
    return out;
}

void write_png(const std::filesystem::path& path, const Image8& image)
{
    if (image.pixels.size() != image.width * image.height * image.channels) {
        throw std::invalid_argument("write_png: pixel buffer does not match dimensions");
    }
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr) == 0) {
        throw std::runtime_error("cannot write PNG '" + path.string() + "': " + img.message);
    }
}

} // namespace protosolo
