#include "polyloop/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "polyloop/errors.hpp"

namespace polyloop {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  while (in) {
    int c = in.peek();
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  in >> tok;
  return tok;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image " + path.string());
  if (header_token(in) != "P6") throw Error("not a binary PPM: " + path.string());
  const int w = std::stoi(header_token(in));
  const int h = std::stoi(header_token(in));
  const int maxval = std::stoi(header_token(in));
  if (w <= 0 || h <= 0 || maxval != 255) throw Error("unsupported PPM header: " + path.string());
  in.get();  // single whitespace before the raster
  Image img(w, h);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!in) throw Error("truncated PPM raster: " + path.string());
  return img;
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write image " + path.string());
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()),
            static_cast<std::streamsize>(image.rgb.size()));
}

Image crop_resize(const Image& image, const geometry::BBox& box, int out_size) {
  Image out(out_size, out_size);
  const double sx = box.width() / out_size;
  const double sy = box.height() / out_size;
  auto sample = [&](int x, int y, int c) -> double {
    return image.at(std::clamp(x, 0, image.width - 1), std::clamp(y, 0, image.height - 1), c);
  };
  for (int oy = 0; oy < out_size; ++oy) {
    // Pixel centres map to pixel centres.
    const double fy = box.y0 + (oy + 0.5) * sy - 0.5;
    const int y0 = static_cast<int>(std::floor(fy));
    const double ty = fy - y0;
    for (int ox = 0; ox < out_size; ++ox) {
      const double fx = box.x0 + (ox + 0.5) * sx - 0.5;
      const int x0 = static_cast<int>(std::floor(fx));
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - ty) * ((1 - tx) * sample(x0, y0, c) + tx * sample(x0 + 1, y0, c)) +
                         ty * ((1 - tx) * sample(x0, y0 + 1, c) + tx * sample(x0 + 1, y0 + 1, c));
        out.at(ox, oy, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

}  // namespace polyloop
