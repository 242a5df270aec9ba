#include "mmtpp/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <png.h>

#include "mmtpp/error.hpp"

namespace mmtpp {

GrayImage::GrayImage(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {
  if (w < 0 || h < 0) throw Error(ErrorCode::InvalidArgument, "negative image size");
}

GrayImage read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw Error(ErrorCode::IoError, fmt::format("cannot read PNG {}: {}", path.string(), img.message));
  }
  img.format = PNG_FORMAT_GRAY;
  GrayImage out(static_cast<int>(img.width), static_cast<int>(img.height));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorCode::IoError, fmt::format("cannot decode PNG {}: {}", path.string(), img.message));
  }
  return out;
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw Error(ErrorCode::IoError, fmt::format("cannot write PNG {}: {}", path.string(), img.message));
  }
}

void BoundingBox::validate() const {
  if (!std::isfinite(min_lon) || !std::isfinite(min_lat) || !std::isfinite(max_lon) ||
      !std::isfinite(max_lat) || !(max_lon > min_lon) || !(max_lat > min_lat)) {
    throw Error(ErrorCode::InvalidArgument, "bounding box must have finite, increasing bounds");
  }
}

nlohmann::json bbox_to_json(const BoundingBox& b) {
  return {{"min_lon", b.min_lon}, {"min_lat", b.min_lat}, {"max_lon", b.max_lon}, {"max_lat", b.max_lat}};
}

BoundingBox bbox_from_json(const nlohmann::json& j) {
  BoundingBox b;
  try {
    b.min_lon = j.at("min_lon").get<double>();
    b.min_lat = j.at("min_lat").get<double>();
    b.max_lon = j.at("max_lon").get<double>();
    b.max_lat = j.at("max_lat").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("bounding box: ") + e.what());
  }
  b.validate();
  return b;
}

BoundingBox load_bbox(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return bbox_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

GeoAffine GeoAffine::from_bbox(int width, int height, const BoundingBox& bbox) {
  bbox.validate();
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "raster size must be positive");
  GeoAffine a;
  a.width = width;
  a.height = height;
  a.bbox = bbox;
  const double sx = width / (bbox.max_lon - bbox.min_lon);
  const double sy = height / (bbox.max_lat - bbox.min_lat);
  // x grows with longitude, y grows southwards.
  a.coef[0] = -0.5 - sx * bbox.min_lon;
  a.coef[1] = sx;
  a.coef[2] = 0.0;
  a.coef[3] = -0.5 + sy * bbox.max_lat;
  a.coef[4] = 0.0;
  a.coef[5] = -sy;
  return a;
}

PixelPoint GeoAffine::to_pixel(double lat, double lon) const {
  return {coef[0] + coef[1] * lon + coef[2] * lat, coef[3] + coef[4] * lon + coef[5] * lat};
}

void GeoAffine::to_geo(double x, double y, double& lat, double& lon) const {
  const double det = determinant();
  if (det == 0.0 || !std::isfinite(det)) throw Error(ErrorCode::InvalidArgument, "affine is singular");
  const double dx = x - coef[0];
  const double dy = y - coef[3];
  lon = (coef[5] * dx - coef[2] * dy) / det;
  lat = (coef[1] * dy - coef[4] * dx) / det;
}

GrayImage crop_patch(const GrayImage& raster, const GeoAffine& affine, double lat, double lon,
                     int size, double margin_px) {
  if (!std::isfinite(lat) || !std::isfinite(lon)) {
    throw Error(ErrorCode::OutOfCoverage, "non-finite coordinate");
  }
  if (size <= 0) throw Error(ErrorCode::InvalidArgument, "patch size must be positive");
  const PixelPoint c = affine.to_pixel(lat, lon);
  // The slack keeps points on the bbox edge inside despite rounding.
  const double slack = margin_px + 1e-6;
  if (c.x < -0.5 - slack || c.y < -0.5 - slack || c.x > raster.width - 0.5 + slack ||
      c.y > raster.height - 0.5 + slack) {
    throw Error(ErrorCode::OutOfCoverage,
                fmt::format("({:.6f}, {:.6f}) maps to pixel ({:.1f}, {:.1f}) outside the {}x{} raster",
                            lat, lon, c.x, c.y, raster.width, raster.height));
  }
  const long x0 = std::lround(c.x) - size / 2;
  const long y0 = std::lround(c.y) - size / 2;
  GrayImage out(size, size, kPadGray);
  for (int y = 0; y < size; ++y) {
    const long sy = y0 + y;
    if (sy < 0 || sy >= raster.height) continue;
    for (int x = 0; x < size; ++x) {
      const long sx = x0 + x;
      if (sx < 0 || sx >= raster.width) continue;
      out.at(x, y) = raster.at(static_cast<int>(sx), static_cast<int>(sy));
    }
  }
  return out;
}

BoundingBox manhattan_bbox() { return {-74.0300, 40.6950, -73.9050, 40.8800}; }

GrayImage synthetic_street_raster(int width, int height, const BoundingBox& bbox) {
  const GeoAffine a = GeoAffine::from_bbox(width, height, bbox);
  GrayImage img(width, height);
  // Manhattan's grid is rotated about 29 degrees east of true north.
  const double theta = 29.0 * 3.14159265358979323846 / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double lat0 = 0.5 * (bbox.min_lat + bbox.max_lat);
  const double m_lat = 111'320.0;
  const double m_lon = 111'320.0 * std::cos(lat0 * 3.14159265358979323846 / 180.0);
  const double ref_lon = -73.9855, ref_lat = 40.7580;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double lat = 0, lon = 0;
      a.to_geo(x, y, lat, lon);
      const double ex = (lon - ref_lon) * m_lon;  // metres east
      const double ny = (lat - ref_lat) * m_lat;  // metres north
      const double along = ex * st + ny * ct;     // up the avenues
      const double across = ex * ct - ny * st;
      // Island outline: a band about 3.5 km wide around the grid axis,
      // narrowing at the southern tip.
      const double half_width = std::clamp(1'700.0 + 0.05 * along, 600.0, 2'100.0);
      const bool land = std::abs(across + 150.0) < half_width && along > -6'500.0 && along < 14'500.0;
      if (!land) {
        img.at(x, y) = 70;  // water
        continue;
      }
      const double street = std::fmod(std::abs(along), 80.0);     // ~80 m per block
      const double avenue = std::fmod(std::abs(across), 270.0);  // ~270 m between avenues
      std::uint8_t v = 215;
      if (street < 12.0) v = 245;
      if (avenue < 22.0) v = 255;
      if (street >= 12.0 && avenue >= 22.0) {
        // Deterministic block texture from the block index.
        const auto bi = static_cast<long>(std::floor(along / 80.0));
        const auto bj = static_cast<long>(std::floor(across / 270.0));
        v = static_cast<std::uint8_t>(190 + ((bi * 73856093L) ^ (bj * 19349663L)) % 30 + 15);
      }
      img.at(x, y) = v;
    }
  }
  return img;
}

}  // namespace mmtpp
