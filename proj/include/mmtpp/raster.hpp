#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

namespace mmtpp {

// 8-bit grayscale image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0);
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

// Any PNG (gray, RGB, palette, 16-bit) is converted to 8-bit gray on read.
GrayImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const GrayImage& image);

struct BoundingBox {
  double min_lon = 0.0;
  double min_lat = 0.0;
  double max_lon = 0.0;
  double max_lat = 0.0;

  bool contains(double lat, double lon) const {
    return lat >= min_lat && lat <= max_lat && lon >= min_lon && lon <= max_lon;
  }
  void validate() const;  // throws InvalidArgument
};

// Sidecar keys: min_lon, min_lat, max_lon, max_lat.
nlohmann::json bbox_to_json(const BoundingBox& b);
BoundingBox bbox_from_json(const nlohmann::json& j);
BoundingBox load_bbox(const std::filesystem::path& path);

struct PixelPoint {
  double x = 0.0;
  double y = 0.0;
};

// px = c0 + c1*lon + c2*lat, py = c3 + c4*lon + c5*lat. Pixel centres sit at
// integer coordinates; the bbox edges map to the outer pixel edges.
struct GeoAffine {
  int width = 0;
  int height = 0;
  BoundingBox bbox;
  double coef[6] = {0, 0, 0, 0, 0, 0};

  static GeoAffine from_bbox(int width, int height, const BoundingBox& bbox);
  PixelPoint to_pixel(double lat, double lon) const;
  void to_geo(double x, double y, double& lat, double& lon) const;  // throws if singular
  double determinant() const { return coef[1] * coef[5] - coef[2] * coef[4]; }
};

inline constexpr int kPatchSize = 224;
inline constexpr std::uint8_t kPadGray = 128;

// Patch centred on the mapped pixel (top-left = round(centre) - size / 2).
// Area outside the raster is gray. Throws OutOfCoverage when the centre lies
// more than `margin_px` outside the raster.
GrayImage crop_patch(const GrayImage& raster, const GeoAffine& affine, double lat, double lon,
                     int size = kPatchSize, double margin_px = 0.0);

// Procedural street map: a grid of avenues and streets laid out in
// geographic coordinates (rotated like Manhattan's grid), a river mask
// outside a simple island outline, and light block texture.
GrayImage synthetic_street_raster(int width, int height, const BoundingBox& bbox);

// Box covering Manhattan used by the defaults.
BoundingBox manhattan_bbox();

}  // namespace mmtpp
