#include "mixloc/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mixloc::io {

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(buf, bits);
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  void expect_magic() {
    need(8);
    if (std::memcmp(bytes_.data() + pos_, kMagic, 8) != 0) {
      throw std::runtime_error(path_ + ": bad magic, not a MIXLOC1 file");
    }
    pos_ += 8;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  unsigned char byte() { return static_cast<unsigned char>(bytes_[pos_++]); }
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw std::runtime_error(path_ + ": truncated MIXLOC1 file");
  }
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_arrays(const std::filesystem::path& path, const std::vector<Array>& arrays) {
  std::string buf;
  buf.append(kMagic, 8);
  put_u32(buf, static_cast<std::uint32_t>(arrays.size()));
  for (const Array& a : arrays) {
    put_u32(buf, static_cast<std::uint32_t>(a.rank()));
    for (std::size_t d : a.shape()) put_u64(buf, d);
    for (double v : a.data()) put_f64(buf, v);
  }
  write_text_file(path, buf);
}

std::vector<Array> read_arrays(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  Reader r(bytes, path.string());
  r.expect_magic();
  const std::uint32_t count = r.u32();
  std::vector<Array> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t ndim = r.u32();
    std::vector<std::size_t> shape(ndim);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape[d] = static_cast<std::size_t>(r.u64());
      numel *= shape[d];
    }
    std::vector<double> data(numel);
    for (std::size_t j = 0; j < numel; ++j) data[j] = r.f64();
    out.emplace_back(std::move(shape), std::move(data));
  }
  if (!r.at_end()) throw std::runtime_error(path.string() + ": trailing bytes after arrays");
  return out;
}

void write_pgm(const std::filesystem::path& path, const Array& map) {
  const std::size_t h = map.rows(), w = map.cols();
  double lo = map.numel() ? map[0] : 0.0, hi = lo;
  for (double v : map.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;
  std::string buf = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (double v : map.data()) {
    const double norm = span > 0.0 ? (v - lo) / span : 0.0;
    buf.push_back(static_cast<char>(std::lround(norm * 255.0)));
  }
  write_text_file(path, buf);
}

std::string format_double(double v) {
  char tmp[64];
  const auto res = std::to_chars(tmp, tmp + sizeof(tmp), v);
  return std::string(tmp, res.ptr);
}

void write_csv(const std::filesystem::path& path,
               const std::vector<std::pair<std::string, double>>& rows) {
  std::string buf = "metric,value\n";
  for (const auto& [name, value] : rows) {
    buf += name;
    buf += ",";
    buf += format_double(value);
    buf += "\n";
  }
  write_text_file(path, buf);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace mixloc::io
