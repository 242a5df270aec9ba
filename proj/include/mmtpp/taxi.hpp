#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "mmtpp/events.hpp"
#include "mmtpp/raster.hpp"

namespace mmtpp {

// One row of a NYC TLC trip_data file. Times are seconds since the Unix
// epoch, read as naive local wall-clock time.
struct TripRecord {
  std::string medallion;
  std::string hack_license;
  std::int64_t pickup_time = 0;
  std::int64_t dropoff_time = 0;
  int passenger_count = 1;
  double trip_distance = 0.0;  // miles
  double pickup_lat = 0.0, pickup_lon = 0.0;
  double dropoff_lat = 0.0, dropoff_lon = 0.0;

  bool operator==(const TripRecord&) const = default;
};

// "YYYY-MM-DD HH:MM:SS" <-> epoch seconds (no time zone).
std::int64_t parse_timestamp(std::string_view s);  // throws ParseError
std::string format_timestamp(std::int64_t t);

struct TripParseReport {
  std::vector<TripRecord> trips;
  std::size_t rows = 0;
  std::size_t skipped = 0;  // rows failing the record invariants
};

// Columns are matched by name (leading/trailing spaces ignored). Rows with
// unparseable fields or broken invariants are skipped and counted.
TripParseReport parse_trips_csv(std::istream& in);
TripParseReport load_trips_csv(const std::filesystem::path& path);
void write_trips_csv(std::ostream& out, const std::vector<TripRecord>& trips);

enum class TripKind : std::uint8_t { Pickup = 0, Dropoff = 1 };

// Three latitude bands (lower < lower_max <= midtown < midtown_max <= upper)
// inside a covered box. Boundaries belong to the band above them.
struct RegionScheme {
  double lower_max = 40.725;
  double midtown_max = 40.775;
  BoundingBox coverage = manhattan_bbox();

  int region(double lat, double lon) const;  // 0 lower, 1 midtown, 2 upper
  void validate() const;
};

// type_id = 2 * region + kind. This is the layout under which the sample
// taxi rendering is consistent (Tribeca pickup = 0, Times Square dropoff = 3,
// Upper West Side pickup = 4, Tribeca dropoff = 1).
int classify_event(double lat, double lon, TripKind kind, const RegionScheme& scheme);
inline constexpr int kTaxiTypeCount = 6;

struct Landmark {
  std::string name;
  double lat = 0.0;
  double lon = 0.0;
};

class Gazetteer {
 public:
  explicit Gazetteer(std::vector<Landmark> entries);
  static Gazetteer builtin();  // Manhattan neighbourhoods and landmarks
  static Gazetteer load_csv(const std::filesystem::path& path);  // name,lat,lon

  // Nearest entry by haversine distance; ties go to the earlier entry.
  // Throws MissingLandmark when the gazetteer is empty.
  const Landmark& nearest(double lat, double lon) const;
  const std::vector<Landmark>& entries() const { return entries_; }

 private:
  std::vector<Landmark> entries_;
};

double haversine_km(double lat1, double lon1, double lat2, double lon2);

struct PlaceRef {
  std::string landmark;
  double lat = 0.0;
  double lon = 0.0;
};

// Throws MissingLandmark when a landmark name is empty.
std::string render_pickup_text(const PlaceRef& at, int passengers);
std::string render_dropoff_text(const PlaceRef& from, const PlaceRef& to, int passengers,
                                double miles);

struct TaxiBuildOptions {
  double shift_gap_hours = 4.0;  // a longer idle gap starts a new shift
  std::size_t min_trips = 2;     // shorter shifts are not candidates
  std::size_t max_trips = 0;     // 0 = no cap; longer shifts are truncated
  std::size_t target_count = 2000;
  std::optional<std::filesystem::path> patch_dir;  // write PNG patches here
  double patch_margin_px = 0.0;
  unsigned threads = 0;
};

// One shift of one medallion, already turned into events.
struct TaxiCandidate {
  EventSequence sequence;
  std::array<std::size_t, kTaxiTypeCount> type_counts{};
  std::string medallion;
  std::int64_t start_time = 0;
  std::vector<std::size_t> trip_indices;
};

// Groups trips per medallion and shift and emits two events per trip
// (pickup, dropoff) with times in hours from the first pickup. Trips that
// start before the previous kept trip ended are dropped; an event that
// would tie its predecessor is moved one second later.
std::vector<TaxiCandidate> build_candidates(const std::vector<TripRecord>& trips,
                                            const RegionScheme& scheme, const Gazetteer& gazetteer,
                                            const TaxiBuildOptions& options = {});

// Population variance of a type histogram.
double histogram_variance(const std::array<std::size_t, kTaxiTypeCount>& h);

// Greedy pick: each step adds the candidate that minimises the variance of
// the running histogram; ties go to the lowest index. Throws
// InsufficientCandidates when fewer than target_count exist.
std::vector<std::size_t> select_balanced(
    const std::vector<std::array<std::size_t, kTaxiTypeCount>>& candidates, std::size_t target_count);

struct TaxiBuildResult {
  std::vector<EventSequence> sequences;
  std::size_t candidates = 0;
  std::size_t trips_used = 0;
  std::size_t patches_written = 0;
  std::array<std::size_t, kTaxiTypeCount> type_counts{};
};

// Full pipeline: candidates, balanced selection, and (when a raster and
// patch_dir are given) one patch per event, referenced by file name.
TaxiBuildResult build_sequences(const std::vector<TripRecord>& trips, const RegionScheme& scheme,
                                const Gazetteer& gazetteer, const GrayImage* raster,
                                const GeoAffine* affine, const TaxiBuildOptions& options);

// Synthetic trip table shaped like TLC data: medallions working shifts of
// back-to-back trips between Manhattan landmarks.
std::vector<TripRecord> synthetic_trips(std::size_t n_trips, std::uint64_t seed);

}  // namespace mmtpp
