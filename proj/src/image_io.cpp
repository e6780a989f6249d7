// SPDX-License-Identifier: Apache-2.0

#include "chirploc/image_io.hpp"

#include <png.h>

#include <cstring>
#include <string>

#include "chirploc/errors.hpp"

namespace chirploc {

void write_png(const std::filesystem::path& path, const GrayImage& image) {
    if (image.empty() || (image.channels != 1 && image.channels != 3) ||
        image.pixels.size() != image.width * image.height * image.channels) {
        throw UsageError("write_png: malformed image buffer for " + path.string());
    }
    png_image desc;
    std::memset(&desc, 0, sizeof(desc));
    desc.version = PNG_IMAGE_VERSION;
    desc.width = static_cast<png_uint_32>(image.width);
    desc.height = static_cast<png_uint_32>(image.height);
    desc.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (png_image_write_to_file(&desc, path.c_str(), 0, image.pixels.data(), 0, nullptr) == 0) {
        const std::string msg = desc.message;
        png_image_free(&desc);
        throw IoError("cannot write PNG " + path.string() + ": " + msg);
    }
}

GrayImage read_png(const std::filesystem::path& path) {
    png_image desc;
    std::memset(&desc, 0, sizeof(desc));
    desc.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&desc, path.c_str()) == 0) {
        throw IoError("cannot read PNG " + path.string() + ": " + desc.message);
    }
    const bool color = (desc.format & PNG_FORMAT_FLAG_COLOR) != 0;
    desc.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;

    GrayImage out;
    out.width = desc.width;
    out.height = desc.height;
    out.channels = color ? 3 : 1;
    out.pixels.resize(PNG_IMAGE_SIZE(desc));
    if (png_image_finish_read(&desc, nullptr, out.pixels.data(), 0, nullptr) == 0) {
        const std::string msg = desc.message;
        png_image_free(&desc);
        throw IoError("cannot decode PNG " + path.string() + ": " + msg);
    }
    return out;
}

}  // namespace chirploc
