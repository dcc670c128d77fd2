/* Copyright 2026 The FuseMOD Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#include "png_codec.hpp"

#include <png.h>

#include <csetjmp>
#include <cstring>
#include <string>

#include "fusemod/error.hpp"

namespace fusemod::kitti::png {

namespace {

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void read_callback(png_structp png_ptr, png_bytep out, png_size_t length)
{
  auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png_ptr));
  if (cursor->offset + length > cursor->bytes.size()) {
    png_error(png_ptr, "unexpected end of PNG data");
  }
  std::memcpy(out, cursor->bytes.data() + cursor->offset, length);
  cursor->offset += length;
}

void write_callback(png_structp png_ptr, png_bytep in, png_size_t length)
{
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png_ptr));
  out->insert(out->end(), in, in + length);
}

void flush_callback(png_structp) {}

// libpng reports through longjmp; the message is stashed here and rethrown
// as a fusemod::Error once control is back in C++ land.
struct ErrorSink {
  std::string message;
};

void error_callback(png_structp png_ptr, png_const_charp msg)
{
  auto* sink = static_cast<ErrorSink*>(png_get_error_ptr(png_ptr));
  sink->message = msg;
  png_longjmp(png_ptr, 1);
}

void warning_callback(png_structp, png_const_charp) {}

}  // namespace

bool has_signature(std::span<const std::uint8_t> bytes)
{
  return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

Image decode(std::span<const std::uint8_t> bytes)
{
  if (!has_signature(bytes)) {
    throw Error(ErrorCode::IoFailure, "not a PNG stream");
  }
  ErrorSink sink;
  png_structp png_ptr =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &sink, error_callback, warning_callback);
  png_infop info_ptr = png_create_info_struct(png_ptr);
  ReadCursor cursor{bytes, 0};
  Image image;
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> raw;

  if (setjmp(png_jmpbuf(png_ptr))) {
    png_destroy_read_struct(&png_ptr, &info_ptr, nullptr);
    throw Error(ErrorCode::IoFailure, "PNG decode: " + sink.message);
  }

  png_set_read_fn(png_ptr, &cursor, read_callback);
  png_read_info(png_ptr, info_ptr);

  const auto color_type = png_get_color_type(png_ptr, info_ptr);
  const int depth = png_get_bit_depth(png_ptr, info_ptr);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png_ptr);
  if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png_ptr);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png_ptr);
  if (png_get_valid(png_ptr, info_ptr, PNG_INFO_tRNS)) png_set_strip_alpha(png_ptr);
  png_read_update_info(png_ptr, info_ptr);

  image.width = static_cast<int>(png_get_image_width(png_ptr, info_ptr));
  image.height = static_cast<int>(png_get_image_height(png_ptr, info_ptr));
  image.channels = png_get_channels(png_ptr, info_ptr);
  image.bit_depth = png_get_bit_depth(png_ptr, info_ptr);

  const std::size_t row_bytes = png_get_rowbytes(png_ptr, info_ptr);
  raw.resize(row_bytes * static_cast<std::size_t>(image.height));
  rows.resize(static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y) rows[y] = raw.data() + row_bytes * y;
  png_read_image(png_ptr, rows.data());
  png_read_end(png_ptr, nullptr);
  png_destroy_read_struct(&png_ptr, &info_ptr, nullptr);

  const std::size_t count =
      static_cast<std::size_t>(image.width) * image.height * image.channels;
  image.samples.resize(count);
  if (image.bit_depth == 16) {
    for (std::size_t i = 0; i < count; ++i) {
      image.samples[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) image.samples[i] = raw[i];
  }
  return image;
}

std::vector<std::uint8_t> encode(const Image& image)
{
  if (image.channels != 1 && image.channels != 3) {
    throw Error(ErrorCode::IoFailure, "PNG encode supports 1 or 3 channels");
  }
  if (image.bit_depth != 8 && image.bit_depth != 16) {
    throw Error(ErrorCode::IoFailure, "PNG encode supports 8 or 16 bit samples");
  }
  const std::size_t per_row = static_cast<std::size_t>(image.width) * image.channels;
  const std::size_t bytes_per_sample = image.bit_depth == 16 ? 2 : 1;
  std::vector<std::uint8_t> raw(per_row * bytes_per_sample * image.height);
  for (std::size_t i = 0; i < image.samples.size(); ++i) {
    if (bytes_per_sample == 2) {
      raw[2 * i] = static_cast<std::uint8_t>(image.samples[i] >> 8);
      raw[2 * i + 1] = static_cast<std::uint8_t>(image.samples[i] & 0xff);
    } else {
      raw[i] = static_cast<std::uint8_t>(image.samples[i]);
    }
  }

  ErrorSink sink;
  std::vector<std::uint8_t> out;
  png_structp png_ptr =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &sink, error_callback, warning_callback);
  png_infop info_ptr = png_create_info_struct(png_ptr);
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));

  if (setjmp(png_jmpbuf(png_ptr))) {
    png_destroy_write_struct(&png_ptr, &info_ptr);
    throw Error(ErrorCode::IoFailure, "PNG encode: " + sink.message);
  }

  png_set_write_fn(png_ptr, &out, write_callback, flush_callback);
  png_set_IHDR(png_ptr, info_ptr, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), image.bit_depth,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png_ptr, 6);
  png_write_info(png_ptr, info_ptr);
  for (int y = 0; y < image.height; ++y) {
    rows[y] = raw.data() + per_row * bytes_per_sample * y;
  }
  png_write_image(png_ptr, rows.data());
  png_write_end(png_ptr, nullptr);
  png_destroy_write_struct(&png_ptr, &info_ptr);
  return out;
}

}  // namespace fusemod::kitti::png
