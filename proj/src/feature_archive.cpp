#include "hyperagg/feature_archive.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace hyperagg::archive {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string out(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return out;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void need(std::size_t n) const {
    if (remaining() < n) throw Error(ErrorCode::CorruptArchive, "archive truncated");
  }

 private:
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::map<std::string, std::string> decode_meta(const std::string& text) {
  std::map<std::string, std::string> meta;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::CorruptArchive, "meta line without '='");
      meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    start = end + 1;
  }
  return meta;
}

}  // namespace

std::string encode_meta(const std::map<std::string, std::string>& meta) {
  std::string out;
  for (const auto& [key, value] : meta) {
    if (key.empty() || key.find_first_of("=\n") != std::string::npos ||
        value.find('\n') != std::string::npos) {
      throw Error(ErrorCode::InvalidInput, "meta keys must be non-empty without '=' or newlines");
    }
    out += key + "=" + value + "\n";
  }
  return out;
}

std::vector<std::uint8_t> encode(const FeatureStack& stack) {
  stack.validate();
  Writer w;
  w.raw("DHFA");
  w.u32(kVersion);
  w.u8(static_cast<std::uint8_t>(stack.direction));
  w.u8(stack.conditional ? 1 : 0);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(stack.layers));
  w.u32(static_cast<std::uint32_t>(stack.slots));
  for (std::uint32_t t : stack.slot_timesteps) w.u32(t);
  for (std::size_t l = 0; l < stack.layers; ++l) {
    for (std::size_t s = 0; s < stack.slots; ++s) {
      const Tensor& m = stack.map(l, s);
      w.u16(static_cast<std::uint16_t>(l));
      w.u16(static_cast<std::uint16_t>(s));
      w.u32(static_cast<std::uint32_t>(m.dim(0)));
      w.u32(static_cast<std::uint32_t>(m.dim(1)));
      w.u32(static_cast<std::uint32_t>(m.dim(2)));
      for (double v : m.values()) w.f32(static_cast<float>(v));
    }
  }
  const std::string meta = encode_meta(stack.meta);
  w.u32(static_cast<std::uint32_t>(meta.size()));
  w.raw(meta);
  return w.take();
}

FeatureStack decode(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || r.raw(4) != "DHFA") throw Error(ErrorCode::UnsupportedFormat, "bad magic");
  if (r.remaining() < 4) throw Error(ErrorCode::CorruptArchive, "archive truncated");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw Error(ErrorCode::UnsupportedFormat, "unsupported version " + std::to_string(version));
  }
  FeatureStack stack;
  const std::uint8_t direction = r.u8();
  if (direction > 1) throw Error(ErrorCode::CorruptArchive, "bad direction byte");
  stack.direction = static_cast<Direction>(direction);
  const std::uint8_t conditional = r.u8();
  if (conditional > 1) throw Error(ErrorCode::CorruptArchive, "bad conditional byte");
  stack.conditional = conditional == 1;
  if (r.u16() != 0) throw Error(ErrorCode::CorruptArchive, "reserved field is not zero");
  stack.layers = r.u32();
  stack.slots = r.u32();
  if (stack.layers == 0 || stack.slots == 0) throw Error(ErrorCode::CorruptArchive, "empty grid");
  r.need(4 * stack.slots);
  stack.slot_timesteps.resize(stack.slots);
  for (auto& t : stack.slot_timesteps) t = r.u32();
  stack.maps.resize(stack.layers * stack.slots);
  for (std::size_t l = 0; l < stack.layers; ++l) {
    for (std::size_t s = 0; s < stack.slots; ++s) {
      if (r.u16() != l || r.u16() != s) throw Error(ErrorCode::CorruptArchive, "record out of order");
      const std::size_t c = r.u32(), h = r.u32(), w = r.u32();
      if (c == 0 || h == 0 || w == 0) throw Error(ErrorCode::CorruptArchive, "zero-sized record");
      const std::size_t n = c * h * w;
      if (n / c / h != w || n > r.remaining() / 4) throw Error(ErrorCode::CorruptArchive, "archive truncated");
      std::vector<double> data(n);
      for (auto& v : data) {
        v = static_cast<double>(r.f32());
        if (!std::isfinite(v)) throw Error(ErrorCode::CorruptArchive, "non-finite payload value");
      }
      stack.map(l, s) = Tensor({c, h, w}, std::move(data));
    }
  }
  const std::uint32_t meta_len = r.u32();
  stack.meta = decode_meta(r.raw(meta_len));
  if (r.remaining() != 0) throw Error(ErrorCode::CorruptArchive, "trailing bytes after meta block");
  try {
    stack.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::CorruptArchive, e.what());
  }
  return stack;
}

void write_archive(const FeatureStack& stack, const std::filesystem::path& path) {
  const auto bytes = encode(stack);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

FeatureStack read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

void quantize_to_storage(FeatureStack& stack) {
  for (Tensor& m : stack.maps) {
    for (double& v : m.values()) v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace hyperagg::archive
