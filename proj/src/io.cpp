#include "handteleop/io.hpp"

#include <png.h>

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "handteleop/errors.hpp"

namespace handteleop::io {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) {
    if (mode[0] == 'r') throw IntegrityError("cannot open " + path.string());
    throw Error("cannot write " + path.string());
  }
  return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

// bit_depth 16 with one channel or 8 with three.
void write_png(const fs::path& path, int width, int height, int bit_depth, int color_type,
               const std::vector<png_bytep>& rows) {
  auto file = open_file(path, "wb");
  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("writing " + path.string() + ": " + error);
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);  // rows are host (little-endian) order
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct ReadResult {
  int width = 0;
  int height = 0;
  int bit_depth = 0;
  int color_type = 0;
  std::vector<std::uint8_t> bytes;
};

ReadResult read_png(const fs::path& path) {
  auto file = open_file(path, "rb");
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng initialisation failed");
  }
  ReadResult out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("reading " + path.string() + ": " + error);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.bit_depth = png_get_bit_depth(png, info);
  out.color_type = png_get_color_type(png, info);
  if (out.bit_depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  const auto stride = png_get_rowbytes(png, info);
  out.bytes.resize(stride * static_cast<std::size_t>(out.height));
  rows.resize(static_cast<std::size_t>(out.height));
  for (int r = 0; r < out.height; ++r) rows[r] = out.bytes.data() + stride * r;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

void write_png16(const fs::path& path, const Gray16& image) {
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height)
    throw ContractError("png pixel buffer does not match its size");
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  for (int r = 0; r < image.height; ++r)
    rows[r] = reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(image.pixels.data()) +
                                          static_cast<std::size_t>(r) * image.width);
  write_png(path, image.width, image.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

Gray16 read_png16(const fs::path& path) {
  auto raw = read_png(path);
  if (raw.bit_depth != 16 || raw.color_type != PNG_COLOR_TYPE_GRAY)
    throw FormatError(path.string() + " is not a 16-bit grayscale PNG");
  Gray16 out{raw.width, raw.height, std::vector<std::uint16_t>(static_cast<std::size_t>(raw.width) * raw.height)};
  std::memcpy(out.pixels.data(), raw.bytes.data(), out.pixels.size() * sizeof(std::uint16_t));
  return out;
}

void write_png_rgb(const fs::path& path, const Rgb8& image) {
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3)
    throw ContractError("png pixel buffer does not match its size");
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  for (int r = 0; r < image.height; ++r)
    rows[r] = const_cast<png_bytep>(image.pixels.data() + static_cast<std::size_t>(r) * image.width * 3);
  write_png(path, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, rows);
}

Rgb8 read_png_rgb(const fs::path& path) {
  auto raw = read_png(path);
  if (raw.bit_depth != 8 || raw.color_type != PNG_COLOR_TYPE_RGB) throw FormatError(path.string() + " is not RGB8");
  return {raw.width, raw.height, std::move(raw.bytes)};
}

std::string format_angle(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  return buf;
}

double quantize_angle(double value) { return std::strtod(format_angle(value).c_str(), nullptr); }

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw FormatError("missing CSV column " + name);
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IntegrityError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find('"') != std::string::npos) throw FormatError(path.string() + ": quoted CSV fields are not supported");
    if (first) {
      t.header = split_line(line);
      first = false;
      continue;
    }
    if (line.empty()) continue;
    t.rows.push_back(split_line(line));
  }
  if (first) throw FormatError(path.string() + " has no header row");
  return t;
}

void write_csv(const fs::path& path, const CsvTable& table) {
  std::ostringstream os;
  const auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << '\n';
  };
  emit(table.header);
  for (const auto& r : table.rows) emit(r);
  write_text(path, os.str());
}

double parse_double(const std::string& text, const std::string& what) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE)
    throw FormatError("cannot parse " + what + " from '" + text + "'");
  return v;
}

long long parse_int(const std::string& text, const std::string& what) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw FormatError("cannot parse " + what + " from '" + text + "'");
  return v;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace handteleop::io
