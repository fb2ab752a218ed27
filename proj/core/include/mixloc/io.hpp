#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mixloc/array.hpp"

namespace mixloc::io {

// Binary array container, little-endian throughout:
//
//   bytes 0..7   magic "MIXLOC1\0"
//   u32          array count
//   per array:   u32 ndim, then ndim x u64 dims, then prod(dims) x f64
//                (row-major IEEE-754)
//
// Used for dataset exports, checkpoint tensors and raw localization maps.
inline constexpr char kMagic[8] = {'M', 'I', 'X', 'L', 'O', 'C', '1', '\0'};

void write_arrays(const std::filesystem::path& path, const std::vector<Array>& arrays);
std::vector<Array> read_arrays(const std::filesystem::path& path);

// 8-bit binary PGM ("P5"). Values are min-max normalized before quantization;
// a constant map writes all zeros.
void write_pgm(const std::filesystem::path& path, const Array& map);

// One row per (name, value) pair, '.' decimal separator regardless of locale.
void write_csv(const std::filesystem::path& path,
               const std::vector<std::pair<std::string, double>>& rows);

std::string format_double(double v);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace mixloc::io
