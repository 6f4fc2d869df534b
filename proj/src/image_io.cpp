#include "hyperagg/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace hyperagg::image_io {

namespace {

std::string read_token(std::istream& in) {
  std::string token;
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (std::isspace(ch)) {
      if (!token.empty()) break;
    } else {
      token.push_back(static_cast<char>(ch));
    }
    ch = in.get();
  }
  return token;
}

std::size_t parse_dim(const std::string& token, const std::filesystem::path& path) {
  try {
    const long v = std::stol(token);
    if (v <= 0) throw std::invalid_argument("non-positive");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw Error(ErrorCode::UnsupportedFormat, "bad netpbm header in " + path.string());
  }
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return in;
}

Tensor read_payload(std::istream& in, std::size_t channels, std::size_t h, std::size_t w,
                    const std::filesystem::path& path) {
  std::vector<unsigned char> bytes(channels * h * w);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw Error(ErrorCode::IoError, "truncated image " + path.string());
  }
  Tensor out({channels, h, w});
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t c = 0; c < channels; ++c) {
      out[c * h * w + p] = static_cast<double>(bytes[p * channels + c]) / 255.0;
    }
  }
  return out;
}

void write_payload(const std::filesystem::path& path, const std::string& header,
                   const Tensor& img, std::size_t channels) {
  if (img.rank() != 3 || img.dim(0) != channels) {
    throw Error(ErrorCode::InvalidShape, "image must have " + std::to_string(channels) + " channels");
  }
  const std::size_t plane = img.dim(1) * img.dim(2);
  std::vector<unsigned char> bytes(channels * plane);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double v = std::clamp(img[c * plane + p], 0.0, 1.0);
      bytes[p * channels + c] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << header;
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

Tensor read_pnm(const std::filesystem::path& path, const std::string& magic, std::size_t channels) {
  auto in = open_in(path);
  if (read_token(in) != magic) throw Error(ErrorCode::UnsupportedFormat, path.string() + " is not " + magic);
  const std::size_t w = parse_dim(read_token(in), path);
  const std::size_t h = parse_dim(read_token(in), path);
  if (read_token(in) != "255") throw Error(ErrorCode::UnsupportedFormat, "only maxval 255 is supported");
  return read_payload(in, channels, h, w, path);
}

std::string pnm_header(const std::string& magic, const Tensor& img) {
  return magic + "\n" + std::to_string(img.dim(2)) + " " + std::to_string(img.dim(1)) + "\n255\n";
}

}  // namespace

Tensor read_ppm(const std::filesystem::path& path) { return read_pnm(path, "P6", 3); }

void write_ppm(const std::filesystem::path& path, const Tensor& rgb) {
  if (rgb.rank() != 3) throw Error(ErrorCode::InvalidShape, "image must be 3×H×W");
  write_payload(path, pnm_header("P6", rgb), rgb, 3);
}

Tensor read_pgm(const std::filesystem::path& path) { return read_pnm(path, "P5", 1); }

void write_pgm(const std::filesystem::path& path, const Tensor& gray) {
  if (gray.rank() != 3) throw Error(ErrorCode::InvalidShape, "image must be 1×H×W");
  write_payload(path, pnm_header("P5", gray), gray, 1);
}

Tensor read_pam(const std::filesystem::path& path) {
  auto in = open_in(path);
  if (read_token(in) != "P7") throw Error(ErrorCode::UnsupportedFormat, path.string() + " is not P7");
  std::map<std::string, std::string> fields;
  for (;;) {
    const std::string key = read_token(in);
    if (key.empty()) throw Error(ErrorCode::UnsupportedFormat, "unterminated PAM header");
    if (key == "ENDHDR") break;
    fields[key] = read_token(in);
  }
  if (fields["DEPTH"] != "4" || fields["MAXVAL"] != "255") {
    throw Error(ErrorCode::UnsupportedFormat, "only RGB_ALPHA PAM with maxval 255 is supported");
  }
  const std::size_t w = parse_dim(fields["WIDTH"], path);
  const std::size_t h = parse_dim(fields["HEIGHT"], path);
  return read_payload(in, 4, h, w, path);
}

void write_pam(const std::filesystem::path& path, const Tensor& rgba) {
  if (rgba.rank() != 3) throw Error(ErrorCode::InvalidShape, "overlay must be 4×H×W");
  const std::string header = "P7\nWIDTH " + std::to_string(rgba.dim(2)) + "\nHEIGHT " +
                             std::to_string(rgba.dim(1)) +
                             "\nDEPTH 4\nMAXVAL 255\nTUPLTYPE RGB_ALPHA\nENDHDR\n";
  write_payload(path, header, rgba, 4);
}

}  // namespace hyperagg::image_io
