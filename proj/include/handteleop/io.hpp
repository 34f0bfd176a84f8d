#pragma once

// File helpers shared by the dataset, checkpoint, report and teleop formats.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace handteleop::io {

struct Gray16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> pixels;
};

struct Rgb8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major
};

/// 16-bit grayscale PNG. Output bytes depend only on the pixel data.
void write_png16(const std::filesystem::path& path, const Gray16& image);
/// Throws IntegrityError if the file is missing, FormatError if it is not a 16-bit grayscale PNG.
Gray16 read_png16(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, const Rgb8& image);
Rgb8 read_png_rgb(const std::filesystem::path& path);

/// %.9g rendering used for every angle written to CSV.
std::string format_angle(double value);
/// Value after a write/read through format_angle.
double quantize_angle(double value);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by header name; throws FormatError.
  std::size_t column(const std::string& name) const;
};

/// Comma-separated, first line is the header. Quoted fields are not produced by
/// any writer here and are rejected by the reader.
CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

double parse_double(const std::string& text, const std::string& what);
long long parse_int(const std::string& text, const std::string& what);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace handteleop::io
