#include "latplan/common/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "latplan/common/error.hpp"

namespace latplan {

namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Reads the next whitespace-delimited token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

int parse_int(const std::string& tok, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("pnm '" + path.string() + "': bad header token '" + tok + "'");
  }
}

}  // namespace

void write_pnm(const std::filesystem::path& path, const RasterImage& image) {
  const auto& s = image.shape;
  if (s.channels != 1 && s.channels != 3) throw ConfigError("write_pnm: channels must be 1 or 3");
  if (static_cast<int>(image.pixels.size()) != s.size()) throw ConfigError("write_pnm: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << (s.channels == 1 ? "P5" : "P6") << "\n" << s.width << " " << s.height << "\n255\n";
  const int plane = s.height * s.width;
  std::vector<unsigned char> bytes(static_cast<std::size_t>(s.size()));
  for (int p = 0; p < plane; ++p) {
    for (int c = 0; c < s.channels; ++c) bytes[p * s.channels + c] = to_byte(image.pixels[c * plane + p]);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

RasterImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  const std::string magic = next_token(in);
  int channels = 0;
  bool binary = false;
  if (magic == "P2") channels = 1;
  else if (magic == "P5") channels = 1, binary = true;
  else if (magic == "P3") channels = 3;
  else if (magic == "P6") channels = 3, binary = true;
  else throw ConfigError("pnm '" + path.string() + "': unsupported magic '" + magic + "'");
  const int width = parse_int(next_token(in), path);
  const int height = parse_int(next_token(in), path);
  const int maxval = parse_int(next_token(in), path);
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw ConfigError("pnm '" + path.string() + "': unsupported dimensions or maxval");
  }
  RasterImage img{{channels, height, width}, std::vector<double>(static_cast<std::size_t>(channels * height * width))};
  const int plane = height * width;
  for (int p = 0; p < plane; ++p) {
    for (int c = 0; c < channels; ++c) {
      int v;
      if (binary) {
        v = in.get();
        if (v == EOF) throw ConfigError("pnm '" + path.string() + "': truncated pixel data");
      } else {
        const std::string tok = next_token(in);
        if (tok.empty()) throw ConfigError("pnm '" + path.string() + "': truncated pixel data");
        v = parse_int(tok, path);
      }
      img.pixels[c * plane + p] = std::clamp(static_cast<double>(v) / maxval, 0.0, 1.0);
    }
  }
  return img;
}

RasterImage contact_sheet(const std::vector<RasterImage>& images, int columns, double background) {
  if (images.empty()) throw ConfigError("contact_sheet: no images");
  if (columns <= 0) throw ConfigError("contact_sheet: columns must be positive");
  const nn::Shape s = images.front().shape;
  for (const auto& im : images) {
    if (!(im.shape == s)) throw ConfigError("contact_sheet: images differ in shape");
  }
  const int n = static_cast<int>(images.size());
  const int cols = std::min(columns, n);
  const int rows = (n + cols - 1) / cols;
  const nn::Shape out_shape{s.channels, rows * (s.height + 1) + 1, cols * (s.width + 1) + 1};
  RasterImage out{out_shape, std::vector<double>(static_cast<std::size_t>(out_shape.size()), background)};
  const int in_plane = s.height * s.width;
  const int out_plane = out_shape.height * out_shape.width;
  for (int i = 0; i < n; ++i) {
    const int oy = 1 + (i / cols) * (s.height + 1);
    const int ox = 1 + (i % cols) * (s.width + 1);
    for (int c = 0; c < s.channels; ++c) {
      for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
          out.pixels[c * out_plane + (oy + y) * out_shape.width + ox + x] =
              images[i].pixels[c * in_plane + y * s.width + x];
        }
      }
    }
  }
  return out;
}

RasterImage upscale(const RasterImage& image, int factor) {
  if (factor <= 0) throw ConfigError("upscale: factor must be positive");
  const nn::Shape s = image.shape;
  const nn::Shape o{s.channels, s.height * factor, s.width * factor};
  RasterImage out{o, std::vector<double>(static_cast<std::size_t>(o.size()))};
  for (int c = 0; c < s.channels; ++c) {
    for (int y = 0; y < o.height; ++y) {
      for (int x = 0; x < o.width; ++x) {
        out.pixels[(c * o.height + y) * o.width + x] =
            image.pixels[(c * s.height + y / factor) * s.width + x / factor];
      }
    }
  }
  return out;
}

}  // namespace latplan
