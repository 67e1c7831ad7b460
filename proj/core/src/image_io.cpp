#include "pointseg/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "pointseg/common.hpp"

namespace pointseg {

namespace {

bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

// ---------------------------------------------------------------------------
// PNG

ImageU8 read_png(const std::string& path, bool keep_palette_indices) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open: " + path);

  uint8_t sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError("not a PNG file: " + path);
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed: " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng init failed: " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("PNG decode error: " + path);
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);

  if (bit_depth == 16) png_set_strip_16(png);
  if (keep_palette_indices && color_type == PNG_COLOR_TYPE_PALETTE) {
    if (bit_depth < 8) png_set_packing(png);
  } else {
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) {
      png_set_strip_alpha(png);
    }
    if (!keep_palette_indices &&
        (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)) {
      png_set_gray_to_rgb(png);
    }
  }
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  ImageU8 out;
  out.height = static_cast<int>(h);
  out.width = static_cast<int>(w);
  out.channels = channels;
  out.data.resize(static_cast<size_t>(h) * w * channels);

  std::vector<png_bytep> rows(h);
  const size_t stride = static_cast<size_t>(w) * channels;
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = out.data.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::string& path, const ImageU8& img, bool palette) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot open for write: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed: " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng init failed: " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encode error: " + path);
  }

  png_init_io(png, fp.get());
  const int color_type = palette ? PNG_COLOR_TYPE_PALETTE
                                 : (img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);

  std::vector<png_color> pal;
  if (palette) {
    const std::vector<uint8_t> cmap = voc_colormap();
    pal.resize(256);
    for (int i = 0; i < 256; ++i) {
      pal[i].red = cmap[3 * i + 0];
      pal[i].green = cmap[3 * i + 1];
      pal[i].blue = cmap[3 * i + 2];
    }
    png_set_PLTE(png, info, pal.data(), 256);
  }
  png_write_info(png, info);

  const size_t stride = static_cast<size_t>(img.width) * img.channels;
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) {
    rows[y] = const_cast<png_bytep>(img.data.data() + static_cast<size_t>(y) * stride);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// PPM / PGM (binary)

ImageU8 read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6" && magic != "P5") throw DataError("unsupported PNM magic in " + path);
  auto next_int = [&is, &path]() {
    // skip whitespace and '#' comments
    for (;;) {
      int c = is.peek();
      if (c == '#') {
        std::string line;
        std::getline(is, line);
      } else if (c != EOF && std::isspace(static_cast<unsigned char>(c))) {
        is.get();
      } else {
        break;
      }
    }
    int v;
    if (!(is >> v)) throw DataError("malformed PNM header: " + path);
    return v;
  };
  ImageU8 out;
  out.width = next_int();
  out.height = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw DataError("PNM maxval must be 255: " + path);
  is.get();  // single whitespace before payload
  out.channels = (magic == "P6") ? 3 : 1;
  out.data.resize(static_cast<size_t>(out.width) * out.height * out.channels);
  is.read(reinterpret_cast<char*>(out.data.data()),
          static_cast<std::streamsize>(out.data.size()));
  if (!is) throw DataError("PNM payload truncated: " + path);
  return out;
}

void write_pnm(const std::string& path, const ImageU8& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for write: " + path);
  os << (img.channels == 3 ? "P6" : "P5") << "\n"
     << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data.data()),
           static_cast<std::streamsize>(img.data.size()));
  if (!os) throw DataError("write failed: " + path);
}

ImageU8 to_rgb(ImageU8 img) {
  if (img.channels == 3) return img;
  ImageU8 out;
  out.height = img.height;
  out.width = img.width;
  out.channels = 3;
  out.data.resize(static_cast<size_t>(img.height) * img.width * 3);
  for (size_t i = 0; i < img.data.size(); ++i) {
    out.data[3 * i] = out.data[3 * i + 1] = out.data[3 * i + 2] = img.data[i];
  }
  return out;
}

}  // namespace

std::vector<uint8_t> voc_colormap() {
  std::vector<uint8_t> cmap(256 * 3, 0);
  for (int i = 0; i < 256; ++i) {
    int id = i;
    uint8_t r = 0, g = 0, b = 0;
    for (int j = 0; j < 8; ++j) {
      r = static_cast<uint8_t>(r | ((id >> 0) & 1) << (7 - j));
      g = static_cast<uint8_t>(g | ((id >> 1) & 1) << (7 - j));
      b = static_cast<uint8_t>(b | ((id >> 2) & 1) << (7 - j));
      id >>= 3;
    }
    cmap[3 * i + 0] = r;
    cmap[3 * i + 1] = g;
    cmap[3 * i + 2] = b;
  }
  return cmap;
}

ImageU8 read_image_file(const std::string& path) {
  ImageU8 img = (has_suffix(path, ".ppm") || has_suffix(path, ".pgm"))
                    ? read_pnm(path)
                    : read_png(path, /*keep_palette_indices=*/false);
  return to_rgb(std::move(img));
}

void write_image_file(const std::string& path, const ImageU8& img) {
  if (img.channels != 3) throw DataError("write_image_file expects RGB: " + path);
  if (has_suffix(path, ".ppm")) {
    write_pnm(path, img);
  } else {
    write_png(path, img, /*palette=*/false);
  }
}

ImageU8 read_mask_file(const std::string& path) {
  ImageU8 img =
      has_suffix(path, ".pgm") ? read_pnm(path) : read_png(path, /*keep_palette_indices=*/true);
  if (img.channels != 1) {
    throw DataError("mask is not single-channel (got " + std::to_string(img.channels) +
                    " channels): " + path);
  }
  return img;
}

void write_mask_file(const std::string& path, const ImageU8& mask) {
  if (mask.channels != 1) throw DataError("write_mask_file expects 1 channel: " + path);
  if (has_suffix(path, ".pgm")) {
    write_pnm(path, mask);
  } else {
    write_png(path, mask, /*palette=*/true);
  }
}

}  // namespace pointseg
