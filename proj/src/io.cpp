#include "reconkit/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "reconkit/errors.hpp"

namespace reconkit {

namespace {

static_assert(std::endian::native == std::endian::little, "TNSR writer assumes little-endian");

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};
constexpr std::uint8_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > s_.size()) throw DataError("TNSR: truncated data");
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_tnsr(const std::vector<TnsrEntry>& entries) {
  std::string out(kMagic, 4);
  put<std::uint8_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.value.rank() < 1 || e.value.rank() > 4)
      throw ShapeError("TNSR: entry '" + e.name + "' must have 1 to 4 axes");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.value.rank()));
    for (auto ext : e.value.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(ext));
    if (e.dtype == DType::f64) {
      for (double v : e.value.data()) put<double>(out, v);
    } else {
      for (double v : e.value.data()) put<float>(out, static_cast<float>(v));
    }
  }
  return out;
}

std::vector<TnsrEntry> decode_tnsr(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(4) != std::string(kMagic, 4)) throw DataError("TNSR: bad magic");
  const auto version = r.get<std::uint8_t>();
  if (version != kVersion) throw DataError("TNSR: unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  std::vector<TnsrEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    TnsrEntry e;
    e.name = r.bytes(r.get<std::uint32_t>());
    const auto dtype = r.get<std::uint8_t>();
    if (dtype > 1) throw DataError("TNSR: unknown dtype " + std::to_string(dtype));
    e.dtype = static_cast<DType>(dtype);
    const auto ndim = r.get<std::uint8_t>();
    if (ndim < 1 || ndim > 4) throw DataError("TNSR: bad rank for '" + e.name + "'");
    Shape shape(ndim);
    for (auto& ext : shape) ext = r.get<std::uint32_t>();
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = e.dtype == DType::f64 ? r.get<double>() : r.get<float>();
    e.value = Tensor(shape, std::move(data));
    entries.push_back(std::move(e));
  }
  if (!r.done()) throw DataError("TNSR: trailing bytes");
  return entries;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

void write_tnsr(const std::filesystem::path& path, const std::vector<TnsrEntry>& entries) {
  write_file(path, encode_tnsr(entries));
}

std::vector<TnsrEntry> read_tnsr(const std::filesystem::path& path) {
  return decode_tnsr(read_file(path));
}

const TnsrEntry& find_entry(const std::vector<TnsrEntry>& entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw DataError("TNSR: no entry named '" + name + "'");
}

void export_pnm(const Tensor& image, const std::filesystem::path& path) {
  if (image.rank() != 3) throw ShapeError("export_pnm: expected (C, H, W)");
  const std::size_t c = image.extent(0), h = image.extent(1), w = image.extent(2);
  if (c != 1 && c != 3)
    throw ShapeError("export_pnm: only 1 or 3 channels (convert complex images to magnitude)");
  std::string out = (c == 1 ? "P5\n" : "P6\n") + std::to_string(w) + " " + std::to_string(h) +
                    "\n255\n";
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = std::clamp(image.at(ch, i, j), 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
  write_file(path, out);
}

Tensor import_pnm(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::istringstream in(bytes);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if ((magic != "P5" && magic != "P6") || maxval != 255 || w == 0 || h == 0)
    throw DataError("import_pnm: unsupported header in " + path.string());
  in.get();
  const std::size_t c = magic == "P5" ? 1 : 3;
  const auto offset = static_cast<std::size_t>(in.tellg());
  if (bytes.size() < offset + c * w * h) throw DataError("import_pnm: truncated " + path.string());
  Tensor t({c, h, w});
  std::size_t k = offset;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t ch = 0; ch < c; ++ch)
        t.at(ch, i, j) = static_cast<unsigned char>(bytes[k++]) / 255.0;
  return t;
}

}  // namespace reconkit
