#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "mmtpp/taxi.hpp"

using namespace mmtpp;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an mmtpp::Error");
  return ErrorCode::InvalidArgument;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mmtpp_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("render_text reproduces the sample taxi strings") {
  const auto golden = testing::golden_taxi_sequence();
  const PlaceRef tribeca{"Tribeca", 40.711086, -74.016106};
  const PlaceRef times_sq{"Times Square", 40.757698, -73.982124};
  const PlaceRef uws{"Upper West Side", 40.799252, -73.970146};
  const PlaceRef tribeca2{"Tribeca", 40.714455, -74.014008};
  CHECK(render_pickup_text(tribeca, 1) == golden.events[0].text);
  CHECK(render_dropoff_text(tribeca, times_sq, 1, 2.87) == golden.events[1].text);
  CHECK(render_pickup_text(uws, 1) == golden.events[2].text);
  CHECK(render_dropoff_text(uws, tribeca2, 1, 4.37) == golden.events[3].text);
  CHECK(render_dropoff_text(tribeca, tribeca, 2, 0.0).ends_with(", 2 passengers, 0.00 miles trip."));
  CHECK(code_of([] { render_pickup_text({"", 40.7, -74.0}, 1); }) == ErrorCode::MissingLandmark);
}

TEST_CASE("the builtin gazetteer names the sample points") {
  const auto g = Gazetteer::builtin();
  CHECK(g.nearest(40.711086, -74.016106).name == "Tribeca");
  CHECK(g.nearest(40.757698, -73.982124).name == "Times Square");
  CHECK(g.nearest(40.799252, -73.970146).name == "Upper West Side");
  CHECK(g.nearest(40.714455, -74.014008).name == "Tribeca");
  CHECK(code_of([] { Gazetteer({}).nearest(40.7, -74.0); }) == ErrorCode::MissingLandmark);
  CHECK(haversine_km(40.0, -74.0, 41.0, -74.0) == doctest::Approx(111.195).epsilon(1e-3));
}

TEST_CASE("gazetteer CSV loading") {
  const auto dir = scratch_dir("gaz");
  {
    std::ofstream out(dir / "g.csv");
    out << "name,lat,lon\nTimes Square,40.7580,-73.9855\n\"Hell's Kitchen, west\",40.7638,-73.9918\n";
  }
  const auto g = Gazetteer::load_csv(dir / "g.csv");
  REQUIRE(g.entries().size() == 2);
  CHECK(g.entries()[1].name == "Hell's Kitchen, west");
  CHECK(g.nearest(40.7639, -73.99).name == "Hell's Kitchen, west");
  std::filesystem::remove_all(dir);

  // The bundled CSV is the builtin table.
  const auto bundled = Gazetteer::load_csv(testing::data_path("../../data/gazetteer.csv"));
  const auto builtin = Gazetteer::builtin();
  REQUIRE(bundled.entries().size() == builtin.entries().size());
  for (std::size_t i = 0; i < builtin.entries().size(); ++i) {
    CHECK(bundled.entries()[i].name == builtin.entries()[i].name);
    CHECK(bundled.entries()[i].lat == builtin.entries()[i].lat);
    CHECK(bundled.entries()[i].lon == builtin.entries()[i].lon);
  }
}

TEST_CASE("classify_event: bands, kinds and the sample type ids") {
  const RegionScheme s;
  CHECK(classify_event(40.7580, -73.9855, TripKind::Pickup, s) == 2);
  CHECK(classify_event(40.7111, -74.0161, TripKind::Pickup, s) == 0);
  CHECK(classify_event(40.725, -74.0, TripKind::Pickup, s) == 2);  // boundary goes up
  CHECK(classify_event(40.775, -73.97, TripKind::Dropoff, s) == 5);
  CHECK(classify_event(40.7249999, -74.0, TripKind::Dropoff, s) == 1);
  CHECK(code_of([&] { classify_event(40.60, -74.0, TripKind::Pickup, s); }) == ErrorCode::OutOfCoverage);
  CHECK(code_of([&] { classify_event(NAN, -74.0, TripKind::Pickup, s); }) == ErrorCode::OutOfCoverage);

  const auto golden = testing::golden_taxi_sequence();
  const double pts[4][2] = {{40.711086, -74.016106}, {40.757698, -73.982124},
                            {40.799252, -73.970146}, {40.714455, -74.014008}};
  const TripKind kinds[4] = {TripKind::Pickup, TripKind::Dropoff, TripKind::Pickup, TripKind::Dropoff};
  for (int i = 0; i < 4; ++i) {
    CHECK(classify_event(pts[i][0], pts[i][1], kinds[i], s) == golden.events[i].type_id);
  }
  std::set<int> ids;
  for (double lat : {40.70, 40.75, 40.80})
    for (auto k : {TripKind::Pickup, TripKind::Dropoff}) ids.insert(classify_event(lat, -73.98, k, s));
  CHECK(ids.size() == 6);
}

TEST_CASE("affine round trip stays well under half a pixel") {
  const auto bb = manhattan_bbox();
  const auto a = GeoAffine::from_bbox(6071, 6307, bb);
  CHECK(a.determinant() != 0.0);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ux(0, 6071), uy(0, 6307);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double x = ux(rng), y = uy(rng);
    double lat, lon;
    a.to_geo(x, y, lat, lon);
    CHECK(bb.contains(lat, lon));
    const auto p = a.to_pixel(lat, lon);
    worst = std::max({worst, std::abs(p.x - x), std::abs(p.y - y)});
  }
  CHECK(worst < 0.5);
  CHECK(worst < 1e-6);
  // Corners of the box land on the outer pixel edges.
  const auto nw = a.to_pixel(bb.max_lat, bb.min_lon);
  CHECK(nw.x == doctest::Approx(-0.5));
  CHECK(nw.y == doctest::Approx(-0.5));
}

TEST_CASE("crop_patch: interior crops, corner padding, fixed size") {
  const BoundingBox bb{-74.0, 40.0, -73.0, 41.0};
  GrayImage raster(400, 300);
  for (int y = 0; y < 300; ++y)
    for (int x = 0; x < 400; ++x) raster.at(x, y) = static_cast<std::uint8_t>((x * 7 + y * 13) % 120);
  const auto a = GeoAffine::from_bbox(400, 300, bb);

  auto geo_of = [&](double x, double y) {
    double lat, lon;
    a.to_geo(x, y, lat, lon);
    return std::pair{lat, lon};
  };

  auto [lat, lon] = geo_of(200, 150);
  const auto inner = crop_patch(raster, a, lat, lon);
  CHECK(inner.width == 224);
  CHECK(inner.height == 224);
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x) REQUIRE(inner.at(x, y) == raster.at(88 + x, 38 + y));

  std::tie(lat, lon) = geo_of(0, 0);
  const auto corner = crop_patch(raster, a, lat, lon);
  CHECK(corner.width == 224);
  for (int y = 0; y < 224; ++y) {
    for (int x = 0; x < 224; ++x) {
      if (x < 112 || y < 112) {
        REQUIRE(corner.at(x, y) == kPadGray);
      } else {
        REQUIRE(corner.at(x, y) == raster.at(x - 112, y - 112));
      }
    }
  }

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ux(-0.4, 399.4), uy(-0.4, 299.4);
  for (int i = 0; i < 50; ++i) {
    std::tie(lat, lon) = geo_of(ux(rng), uy(rng));
    const auto p = crop_patch(raster, a, lat, lon);
    REQUIRE(p.pixels.size() == 224u * 224u);
  }

  std::tie(lat, lon) = geo_of(-30, 10);
  CHECK(code_of([&] { crop_patch(raster, a, lat, lon); }) == ErrorCode::OutOfCoverage);
  CHECK(crop_patch(raster, a, lat, lon, kPatchSize, 40.0).width == 224);
}

TEST_CASE("PNG round trip") {
  const auto dir = scratch_dir("png");
  GrayImage img(37, 21);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 31);
  write_png(dir / "a.png", img);
  CHECK(read_png(dir / "a.png") == img);
  CHECK(code_of([&] { read_png(dir / "missing.png"); }) == ErrorCode::IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("timestamps and TLC CSV parsing") {
  CHECK(parse_timestamp("1970-01-01 00:00:00") == 0);
  CHECK(parse_timestamp("2013-01-01 15:11:48") == 1357053108);
  CHECK(format_timestamp(1357053108) == "2013-01-01 15:11:48");
  CHECK(code_of([] { parse_timestamp("2013-02-30 00:00:00"); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_timestamp("yesterday"); }) == ErrorCode::ParseError);

  std::istringstream in(
      "medallion, hack_license, vendor_id, rate_code, store_and_fwd_flag, pickup_datetime, "
      "dropoff_datetime, passenger_count, trip_time_in_secs, trip_distance, pickup_longitude, "
      "pickup_latitude, dropoff_longitude, dropoff_latitude\n"
      "M1,H1,VTS,1,,2013-01-01 15:11:48,2013-01-01 15:18:10,4,382,1.00,-73.978165,40.757977,-73.989838,40.751171\n"
      "M1,H1,VTS,1,,2013-01-01 15:30:00,2013-01-01 15:20:00,1,0,1.00,-73.97,40.75,-73.98,40.76\n"
      "M1,H1,VTS,1,,2013-01-01 16:00:00,2013-01-01 16:10:00,1,600,x,-73.97,40.75,-73.98,40.76\n"
      "\n");
  const auto rep = parse_trips_csv(in);
  CHECK(rep.rows == 3);
  CHECK(rep.skipped == 2);
  REQUIRE(rep.trips.size() == 1);
  CHECK(rep.trips[0].passenger_count == 4);
  CHECK(rep.trips[0].pickup_lat == doctest::Approx(40.757977));

  std::istringstream bad("medallion,pickup_datetime\n");
  CHECK(code_of([&] { parse_trips_csv(bad); }) == ErrorCode::SchemaError);

  const auto trips = synthetic_trips(50, 3);
  std::stringstream round;
  write_trips_csv(round, trips);
  const auto back = parse_trips_csv(round);
  REQUIRE(back.trips.size() == trips.size());
  CHECK(back.trips[7].pickup_time == trips[7].pickup_time);
  CHECK(back.trips[7].medallion == trips[7].medallion);
}

TEST_CASE("candidates: shifts, relative hours, tie nudging") {
  auto trip = [](const char* pu, const char* dr, double plat, double dlat) {
    TripRecord t;
    t.medallion = "A";
    t.hack_license = "H";
    t.pickup_time = parse_timestamp(pu);
    t.dropoff_time = parse_timestamp(dr);
    t.pickup_lat = plat;
    t.pickup_lon = -73.99;
    t.dropoff_lat = dlat;
    t.dropoff_lon = -73.98;
    t.trip_distance = 1.5;
    return t;
  };
  const std::vector<TripRecord> trips = {
      trip("2013-01-01 10:00:00", "2013-01-01 10:30:00", 40.71, 40.76),
      trip("2013-01-01 10:30:00", "2013-01-01 10:30:00", 40.76, 40.80),  // ties on both ends
      trip("2013-01-01 10:20:00", "2013-01-01 10:25:00", 40.76, 40.80),  // overlaps, dropped
      trip("2013-01-01 11:00:00", "2013-01-01 11:15:00", 40.80, 40.72),
      trip("2013-01-01 20:00:00", "2013-01-01 20:15:00", 40.72, 40.73),  // new shift, too short
  };
  const auto c = build_candidates(trips, RegionScheme{}, Gazetteer::builtin());
  REQUIRE(c.size() == 1);
  const auto& seq = c[0].sequence;
  CHECK_FALSE(validate_sequence(seq).has_value());
  CHECK(seq.time_unit == "hours");
  REQUIRE(seq.size() == 6);
  CHECK(seq.events[0].time == 0.0);
  CHECK(seq.events[1].time == doctest::Approx(0.5));
  CHECK(seq.events[2].time == doctest::Approx(0.5 + 1.0 / 3600));
  CHECK(seq.events[3].time == doctest::Approx(0.5 + 2.0 / 3600));
  CHECK(seq.events[4].time == doctest::Approx(1.0));
  CHECK(seq.events[0].type_id == 0);
  CHECK(seq.events[1].type_id == 3);
  CHECK(c[0].type_counts == std::array<std::size_t, 6>{1, 1, 1, 1, 1, 1});
  CHECK(seq.events[1].text.starts_with("Dropped off from "));
}

TEST_CASE("greedy selection") {
  using H = std::array<std::size_t, kTaxiTypeCount>;
  CHECK(select_balanced({H{6, 0, 0, 0, 0, 0}, H{1, 1, 1, 1, 1, 1}}, 1) == std::vector<std::size_t>{1});
  CHECK(select_balanced({H{1, 1, 1, 1, 1, 1}, H{1, 1, 1, 1, 1, 1}}, 1) == std::vector<std::size_t>{0});
  CHECK(select_balanced({H{3, 0, 0, 0, 0, 0}, H{0, 3, 0, 0, 0, 0}, H{3, 0, 0, 0, 0, 0}}, 2) ==
        std::vector<std::size_t>{0, 1});
  CHECK(code_of([] { select_balanced({H{}}, 2); }) == ErrorCode::InsufficientCandidates);

  std::mt19937_64 rng(12);
  int wins = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<H> pool(60);
    for (auto& h : pool) {
      const std::size_t favourite = rng() % 6;
      for (std::size_t k = 0; k < 6; ++k) h[k] = rng() % 4 + (k == favourite ? 8 : 0);
    }
    H greedy{}, random{};
    for (std::size_t i : select_balanced(pool, 15))
      for (int k = 0; k < 6; ++k) greedy[k] += pool[i][k];
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t j = 0; j < 15; ++j)
      for (int k = 0; k < 6; ++k) random[k] += pool[idx[j]][k];
    wins += histogram_variance(greedy) <= histogram_variance(random);
  }
  CHECK(wins == 20);
}

TEST_CASE("pipeline on synthetic trips writes valid sequences and patches") {
  const auto trips = synthetic_trips(400, 2);
  const auto bb = manhattan_bbox();
  const auto raster = synthetic_street_raster(500, 740, bb);
  const auto affine = GeoAffine::from_bbox(500, 740, bb);
  const auto dir = scratch_dir("taxi");
  TaxiBuildOptions o;
  o.target_count = 5;
  o.patch_dir = dir;
  const auto r = build_sequences(trips, RegionScheme{}, Gazetteer::builtin(), &raster, &affine, o);
  REQUIRE(r.sequences.size() == 5);
  std::size_t events = 0;
  for (const auto& s : r.sequences) {
    CHECK_FALSE(validate_sequence(s).has_value());
    for (const auto& e : s.events) {
      REQUIRE(e.image.has_value());
      CHECK(std::filesystem::exists(dir / *e.image));
    }
    events += s.size();
  }
  CHECK(r.patches_written == events);
  const auto patch = read_png(dir / *r.sequences[0].events[0].image);
  CHECK(patch.width == 224);
  CHECK(patch.height == 224);

  // Same input, same output.
  TaxiBuildOptions o2 = o;
  o2.patch_dir.reset();
  const auto again = build_sequences(trips, RegionScheme{}, Gazetteer::builtin(), nullptr, nullptr, o2);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(again.sequences[i].events.size() == r.sequences[i].events.size());
    CHECK(again.sequences[i].events[0].text == r.sequences[i].events[0].text);
  }
  std::filesystem::remove_all(dir);
}
