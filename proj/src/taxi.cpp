#include "mmtpp/taxi.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <fmt/format.h>

namespace mmtpp {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '"' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

constexpr double kPi = 3.14159265358979323846;

}  // namespace

std::int64_t parse_timestamp(std::string_view s) {
  s = trim(s);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, se = 0;
  char tail = 0;
  const std::string buf(s);
  if (std::sscanf(buf.c_str(), "%4d-%2d-%2d %2d:%2d:%2d%c", &y, &mo, &d, &h, &mi, &se, &tail) != 6) {
    throw Error(ErrorCode::ParseError, "bad timestamp '" + buf + "'");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || se < 0 || se > 60) {
    throw Error(ErrorCode::ParseError, "bad timestamp '" + buf + "'");
  }
  return sys_days(ymd).time_since_epoch().count() * 86400LL + h * 3600LL + mi * 60LL + se;
}

std::string format_timestamp(std::int64_t t) {
  using namespace std::chrono;
  const std::int64_t days_part = t >= 0 ? t / 86400 : (t - 86399) / 86400;
  const std::int64_t rem = t - days_part * 86400;
  const year_month_day ymd{sys_days{days{days_part}}};
  return fmt::format("{:04d}-{:02d}-{:02d} {:02d}:{:02d}:{:02d}", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), rem / 3600,
                     (rem / 60) % 60, rem % 60);
}

TripParseReport parse_trips_csv(std::istream& in) {
  TripParseReport rep;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::SchemaError, "trip CSV is empty");
  const auto header = split_csv(line);
  auto col = [&](std::string_view name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw Error(ErrorCode::SchemaError, fmt::format("trip CSV lacks column '{}'", name));
  };
  const std::size_t c_med = col("medallion"), c_hack = col("hack_license"),
                    c_pt = col("pickup_datetime"), c_dt = col("dropoff_datetime"),
                    c_pc = col("passenger_count"), c_dist = col("trip_distance"),
                    c_plon = col("pickup_longitude"), c_plat = col("pickup_latitude"),
                    c_dlon = col("dropoff_longitude"), c_dlat = col("dropoff_latitude");
  const std::size_t need = std::max({c_med, c_hack, c_pt, c_dt, c_pc, c_dist, c_plon, c_plat, c_dlon, c_dlat});
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++rep.rows;
    const auto f = split_csv(line);
    TripRecord r;
    bool ok = f.size() > need;
    if (ok) {
      try {
        r.pickup_time = parse_timestamp(f[c_pt]);
        r.dropoff_time = parse_timestamp(f[c_dt]);
      } catch (const Error&) {
        ok = false;
      }
    }
    ok = ok && parse_number(f[c_pc], r.passenger_count) && parse_number(f[c_dist], r.trip_distance) &&
         parse_number(f[c_plon], r.pickup_lon) && parse_number(f[c_plat], r.pickup_lat) &&
         parse_number(f[c_dlon], r.dropoff_lon) && parse_number(f[c_dlat], r.dropoff_lat);
    ok = ok && r.dropoff_time >= r.pickup_time && r.passenger_count >= 1 && r.trip_distance >= 0.0 &&
         std::isfinite(r.trip_distance) && std::isfinite(r.pickup_lat) && std::isfinite(r.pickup_lon) &&
         std::isfinite(r.dropoff_lat) && std::isfinite(r.dropoff_lon);
    if (!ok) {
      ++rep.skipped;
      continue;
    }
    r.medallion = std::string(f[c_med]);
    r.hack_license = std::string(f[c_hack]);
    rep.trips.push_back(std::move(r));
  }
  return rep;
}

TripParseReport load_trips_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return parse_trips_csv(in);
}

void write_trips_csv(std::ostream& out, const std::vector<TripRecord>& trips) {
  out << "medallion,hack_license,vendor_id,rate_code,store_and_fwd_flag,pickup_datetime,"
         "dropoff_datetime,passenger_count,trip_time_in_secs,trip_distance,pickup_longitude,"
         "pickup_latitude,dropoff_longitude,dropoff_latitude\n";
  for (const auto& t : trips) {
    out << fmt::format("{},{},VTS,1,,{},{},{},{},{:.2f},{:.6f},{:.6f},{:.6f},{:.6f}\n", t.medallion,
                       t.hack_license, format_timestamp(t.pickup_time), format_timestamp(t.dropoff_time),
                       t.passenger_count, t.dropoff_time - t.pickup_time, t.trip_distance, t.pickup_lon,
                       t.pickup_lat, t.dropoff_lon, t.dropoff_lat);
  }
}

void RegionScheme::validate() const {
  coverage.validate();
  if (!(lower_max < midtown_max) || !(lower_max > coverage.min_lat) || !(midtown_max < coverage.max_lat)) {
    throw Error(ErrorCode::InvalidArgument, "region bands must split the covered latitude range");
  }
}

int RegionScheme::region(double lat, double lon) const {
  if (!std::isfinite(lat) || !std::isfinite(lon) || !coverage.contains(lat, lon)) {
    throw Error(ErrorCode::OutOfCoverage, fmt::format("({}, {}) is outside the covered box", lat, lon));
  }
  if (lat < lower_max) return 0;
  if (lat < midtown_max) return 1;
  return 2;
}

int classify_event(double lat, double lon, TripKind kind, const RegionScheme& scheme) {
  return 2 * scheme.region(lat, lon) + static_cast<int>(kind);
}

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  const double r = 6371.0088;
  const double p1 = lat1 * kPi / 180.0, p2 = lat2 * kPi / 180.0;
  const double dp = p2 - p1, dl = (lon2 - lon1) * kPi / 180.0;
  const double a = std::sin(dp / 2) * std::sin(dp / 2) + std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 2.0 * r * std::asin(std::min(1.0, std::sqrt(a)));
}

Gazetteer::Gazetteer(std::vector<Landmark> entries) : entries_(std::move(entries)) {
  for (const auto& e : entries_) {
    if (e.name.empty() || !std::isfinite(e.lat) || !std::isfinite(e.lon)) {
      throw Error(ErrorCode::MissingLandmark, "gazetteer entry without a name or coordinates");
    }
  }
}

Gazetteer Gazetteer::builtin() {
  return Gazetteer({
      {"Battery Park", 40.7033, -74.0170},
      {"South Street Seaport", 40.7069, -74.0036},
      {"Tribeca", 40.7163, -74.0086},
      {"Chinatown", 40.7158, -73.9970},
      {"Lower East Side", 40.7150, -73.9843},
      {"SoHo", 40.7233, -74.0030},
      {"Greenwich Village", 40.7336, -74.0027},
      {"East Village", 40.7265, -73.9815},
      {"Union Square", 40.7359, -73.9911},
      {"Flatiron District", 40.7411, -73.9897},
      {"Chelsea", 40.7465, -74.0014},
      {"Murray Hill", 40.7479, -73.9757},
      {"Penn Station", 40.7506, -73.9935},
      {"Grand Central", 40.7527, -73.9772},
      {"Times Square", 40.7580, -73.9855},
      {"Hell's Kitchen", 40.7638, -73.9918},
      {"Midtown East", 40.7549, -73.9680},
      {"Columbus Circle", 40.7681, -73.9819},
      {"Lincoln Center", 40.7725, -73.9835},
      {"Upper East Side", 40.7736, -73.9566},
      {"Yorkville", 40.7762, -73.9492},
      {"Central Park", 40.7829, -73.9654},
      {"Upper West Side", 40.7870, -73.9754},
      {"East Harlem", 40.7957, -73.9389},
      {"Harlem", 40.8116, -73.9465},
      {"Washington Heights", 40.8417, -73.9394},
      {"Inwood", 40.8677, -73.9212},
  });
}

Gazetteer Gazetteer::load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<Landmark> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    // The name may contain commas; latitude and longitude are the last two fields.
    const auto f = split_csv(line);
    if (f.size() < 3) throw Error(ErrorCode::ParseError, "gazetteer row needs name,lat,lon", lineno);
    Landmark l;
    const bool ok = parse_number(f[f.size() - 2], l.lat) && parse_number(f[f.size() - 1], l.lon);
    if (!ok) {
      if (lineno == 1) continue;  // header
      throw Error(ErrorCode::ParseError, "bad gazetteer coordinates", lineno);
    }
    const auto name_end = line.rfind(',', line.rfind(',') - 1);
    l.name = std::string(trim(std::string_view(line).substr(0, name_end)));
    out.push_back(std::move(l));
  }
  return Gazetteer(std::move(out));
}

const Landmark& Gazetteer::nearest(double lat, double lon) const {
  if (entries_.empty()) throw Error(ErrorCode::MissingLandmark, "gazetteer is empty");
  std::size_t best = 0;
  double best_d = haversine_km(lat, lon, entries_[0].lat, entries_[0].lon);
  for (std::size_t i = 1; i < entries_.size(); ++i) {
    const double d = haversine_km(lat, lon, entries_[i].lat, entries_[i].lon);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return entries_[best];
}

std::string render_pickup_text(const PlaceRef& at, int passengers) {
  if (at.landmark.empty()) throw Error(ErrorCode::MissingLandmark, "pickup landmark is empty");
  return fmt::format("Picked up at {} ({:.6f}, {:.6f}), {} passengers.", at.landmark, at.lat, at.lon,
                     passengers);
}

std::string render_dropoff_text(const PlaceRef& from, const PlaceRef& to, int passengers, double miles) {
  if (from.landmark.empty() || to.landmark.empty()) {
    throw Error(ErrorCode::MissingLandmark, "dropoff landmark is empty");
  }
  return fmt::format("Dropped off from {} ({:.6f}, {:.6f}) to {} ({:.6f}, {:.6f}), {} passengers, {:.2f} miles trip.",
                     from.landmark, from.lat, from.lon, to.landmark, to.lat, to.lon, passengers, miles);
}

std::vector<TaxiCandidate> build_candidates(const std::vector<TripRecord>& trips, const RegionScheme& scheme,
                                            const Gazetteer& gazetteer, const TaxiBuildOptions& options) {
  scheme.validate();
  if (!(options.shift_gap_hours > 0.0)) throw Error(ErrorCode::InvalidArgument, "shift gap must be positive");
  std::map<std::string, std::vector<std::size_t>> by_medallion;
  for (std::size_t i = 0; i < trips.size(); ++i) by_medallion[trips[i].medallion].push_back(i);

  const auto gap = static_cast<std::int64_t>(std::llround(options.shift_gap_hours * 3600.0));
  const std::size_t min_trips = std::max<std::size_t>(1, options.min_trips);
  std::vector<TaxiCandidate> out;

  auto in_box = [&](const TripRecord& t) {
    return scheme.coverage.contains(t.pickup_lat, t.pickup_lon) &&
           scheme.coverage.contains(t.dropoff_lat, t.dropoff_lon);
  };

  for (auto& [medallion, idx] : by_medallion) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return trips[a].pickup_time < trips[b].pickup_time; });
    std::vector<std::vector<std::size_t>> shifts;
    std::int64_t last_drop = 0;
    for (std::size_t i : idx) {
      const TripRecord& t = trips[i];
      if (!in_box(t)) continue;
      if (shifts.empty() || t.pickup_time - last_drop > gap) {
        shifts.emplace_back();
      } else if (t.pickup_time < last_drop) {
        continue;  // overlaps the previous trip
      }
      shifts.back().push_back(i);
      last_drop = t.dropoff_time;
    }
    for (auto& shift : shifts) {
      if (options.max_trips && shift.size() > options.max_trips) shift.resize(options.max_trips);
      if (shift.size() < min_trips) continue;
      TaxiCandidate c;
      c.medallion = medallion;
      c.start_time = trips[shift.front()].pickup_time;
      c.trip_indices = shift;
      EventSequence& seq = c.sequence;
      seq.type_count = kTaxiTypeCount;
      seq.time_unit = "hours";
      double prev = -1.0;
      auto push = [&](std::int64_t when, int type, std::string text) {
        double t = static_cast<double>(when - c.start_time) / 3600.0;
        if (t <= prev) t = prev + 1.0 / 3600.0;
        prev = t;
        seq.events.push_back({t, type, std::move(text), std::nullopt});
        ++c.type_counts[static_cast<std::size_t>(type)];
      };
      for (std::size_t i : shift) {
        const TripRecord& t = trips[i];
        const PlaceRef from{gazetteer.nearest(t.pickup_lat, t.pickup_lon).name, t.pickup_lat, t.pickup_lon};
        const PlaceRef to{gazetteer.nearest(t.dropoff_lat, t.dropoff_lon).name, t.dropoff_lat, t.dropoff_lon};
        push(t.pickup_time, classify_event(t.pickup_lat, t.pickup_lon, TripKind::Pickup, scheme),
             render_pickup_text(from, t.passenger_count));
        push(t.dropoff_time, classify_event(t.dropoff_lat, t.dropoff_lon, TripKind::Dropoff, scheme),
             render_dropoff_text(from, to, t.passenger_count, t.trip_distance));
      }
      seq.horizon = seq.events.back().time;
      out.push_back(std::move(c));
    }
  }
  return out;
}

double histogram_variance(const std::array<std::size_t, kTaxiTypeCount>& h) {
  double mean = 0.0;
  for (auto v : h) mean += static_cast<double>(v);
  mean /= kTaxiTypeCount;
  double var = 0.0;
  for (auto v : h) var += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
  return var / kTaxiTypeCount;
}

std::vector<std::size_t> select_balanced(const std::vector<std::array<std::size_t, kTaxiTypeCount>>& candidates,
                                         std::size_t target_count) {
  if (candidates.size() < target_count) {
    throw Error(ErrorCode::InsufficientCandidates,
                fmt::format("{} candidate sequences for a target of {}", candidates.size(), target_count));
  }
  std::vector<bool> used(candidates.size(), false);
  std::array<std::size_t, kTaxiTypeCount> running{};
  std::vector<std::size_t> picked;
  picked.reserve(target_count);
  for (std::size_t step = 0; step < target_count; ++step) {
    std::size_t best = candidates.size();
    double best_v = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (used[i]) continue;
      auto h = running;
      for (int k = 0; k < kTaxiTypeCount; ++k) h[k] += candidates[i][k];
      const double v = histogram_variance(h);
      if (best == candidates.size() || v < best_v) {
        best = i;
        best_v = v;
      }
    }
    used[best] = true;
    for (int k = 0; k < kTaxiTypeCount; ++k) running[k] += candidates[best][k];
    picked.push_back(best);
  }
  return picked;
}

TaxiBuildResult build_sequences(const std::vector<TripRecord>& trips, const RegionScheme& scheme,
                                const Gazetteer& gazetteer, const GrayImage* raster, const GeoAffine* affine,
                                const TaxiBuildOptions& options) {
  auto candidates = build_candidates(trips, scheme, gazetteer, options);
  std::vector<std::array<std::size_t, kTaxiTypeCount>> hist;
  hist.reserve(candidates.size());
  for (const auto& c : candidates) hist.push_back(c.type_counts);
  const auto picked = select_balanced(hist, options.target_count);

  TaxiBuildResult res;
  res.candidates = candidates.size();
  for (std::size_t p : picked) {
    for (int k = 0; k < kTaxiTypeCount; ++k) res.type_counts[k] += candidates[p].type_counts[k];
    res.trips_used += candidates[p].trip_indices.size();
    res.sequences.push_back(std::move(candidates[p].sequence));
  }

  if (raster && affine && options.patch_dir) {
    std::filesystem::create_directories(*options.patch_dir);
    // Flat list of (sequence, event) jobs; each writes its own file.
    struct Job {
      std::size_t seq, ev;
      double lat, lon;
    };
    std::vector<Job> jobs;
    for (std::size_t s = 0; s < picked.size(); ++s) {
      const auto& c = candidates[picked[s]];
      for (std::size_t k = 0; k < c.trip_indices.size(); ++k) {
        const TripRecord& t = trips[c.trip_indices[k]];
        jobs.push_back({s, 2 * k, t.pickup_lat, t.pickup_lon});
        jobs.push_back({s, 2 * k + 1, t.dropoff_lat, t.dropoff_lon});
      }
    }
    for (const auto& j : jobs) {
      res.sequences[j.seq].events[j.ev].image = fmt::format("seq{:05d}_ev{:03d}.png", j.seq, j.ev);
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(jobs.size());
    auto worker = [&] {
      for (std::size_t i = next++; i < jobs.size(); i = next++) {
        try {
          const Job& j = jobs[i];
          const GrayImage patch = crop_patch(*raster, *affine, j.lat, j.lon, kPatchSize, options.patch_margin_px);
          write_png(*options.patch_dir / *res.sequences[j.seq].events[j.ev].image, patch);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    const unsigned n = std::max(1u, options.threads ? options.threads : std::thread::hardware_concurrency());
    {
      std::vector<std::jthread> pool;
      for (unsigned k = 1; k < n; ++k) pool.emplace_back(worker);
      worker();
    }
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
    res.patches_written = jobs.size();
  }
  for (const auto& s : res.sequences) require_valid(s);
  return res;
}

std::vector<TripRecord> synthetic_trips(std::size_t n_trips, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x7A3C5E1F2B4D6089ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::exponential_distribution<double> idle(1.0 / 600.0);  // seconds
  std::normal_distribution<double> jitter(0.0, 0.004);
  std::discrete_distribution<int> passengers({60, 20, 8, 7, 3, 2});
  std::uniform_int_distribution<int> shift_len(12, 24);

  // A point along the island's spine, latitude-weighted towards a home band.
  auto place = [&](int home) {
    double lat;
    const double u = unit(rng);
    if (u < 0.55) {
      static const double lo[3] = {40.703, 40.725, 40.775};
      static const double hi[3] = {40.725, 40.775, 40.865};
      lat = lo[home] + (hi[home] - lo[home]) * unit(rng);
    } else {
      lat = 40.703 + (40.865 - 40.703) * unit(rng);
    }
    const double lon = std::clamp(-74.012 + (lat - 40.703) * 0.62 + jitter(rng), -74.025, -73.91);
    return std::pair{lat, lon};
  };

  std::vector<TripRecord> out;
  out.reserve(n_trips);
  const std::int64_t t0 = parse_timestamp("2013-01-07 00:00:00");
  std::size_t medallion = 0;
  while (out.size() < n_trips) {
    const int home = static_cast<int>(medallion % 3);
    const std::string med = fmt::format("M{:06d}", medallion);
    const std::string hack = fmt::format("H{:06d}", medallion);
    std::int64_t clock = t0 + static_cast<std::int64_t>(unit(rng) * 86400.0);
    const int n_shifts = 1 + static_cast<int>(rng() % 3);
    for (int s = 0; s < n_shifts && out.size() < n_trips; ++s) {
      auto [lat, lon] = place(home);
      const int len = shift_len(rng);
      for (int k = 0; k < len && out.size() < n_trips; ++k) {
        TripRecord r;
        r.medallion = med;
        r.hack_license = hack;
        r.pickup_time = clock + static_cast<std::int64_t>(idle(rng)) + (k == 0 ? 0 : 30);
        r.pickup_lat = lat;
        r.pickup_lon = lon;
        std::tie(r.dropoff_lat, r.dropoff_lon) = place(home);
        const double km = haversine_km(r.pickup_lat, r.pickup_lon, r.dropoff_lat, r.dropoff_lon) * 1.3;
        r.trip_distance = std::round(km / 1.609344 * 100.0) / 100.0;
        const double hours = 0.05 + km / (18.0 + 6.0 * unit(rng));
        r.dropoff_time = r.pickup_time + static_cast<std::int64_t>(hours * 3600.0);
        r.passenger_count = 1 + passengers(rng);
        clock = r.dropoff_time;
        lat = r.dropoff_lat;
        lon = r.dropoff_lon;
        out.push_back(std::move(r));
      }
      clock += 8 * 3600 + static_cast<std::int64_t>(unit(rng) * 8 * 3600);
    }
    ++medallion;
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const TripRecord& a, const TripRecord& b) { return a.pickup_time < b.pickup_time; });
  return out;
}

}  // namespace mmtpp
