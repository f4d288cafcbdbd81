#pragma once

#include <filesystem>
#include <vector>

#include "latplan/networks.hpp"

namespace latplan {

struct RasterImage {
  nn::Shape shape;             ///< channels 1 (gray) or 3 (RGB)
  std::vector<double> pixels;  ///< channel-major, values in [0, 1]
};

/// Writes binary PGM (1 channel) or PPM (3 channels). Values are clipped to [0, 1].
void write_pnm(const std::filesystem::path& path, const RasterImage& image);
/// Reads binary or ASCII PGM/PPM (P2, P3, P5, P6) with maxval <= 255.
RasterImage read_pnm(const std::filesystem::path& path);

/// Places images on a grid with a one-pixel gap; all must share one shape.
RasterImage contact_sheet(const std::vector<RasterImage>& images, int columns, double background = 0.5);

/// Nearest-neighbour upscaling by an integer factor.
RasterImage upscale(const RasterImage& image, int factor);

}  // namespace latplan
