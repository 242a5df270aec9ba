// mmtpp: command-line front end over the library.
//
// Exit codes: 0 ok, 1 domain error, 2 usage error. Errors are written to
// stderr as one JSON object. Every run that writes files also writes a
// manifest (config, config hash, seed, versions) next to them.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "mmtpp/compression.hpp"
#include "mmtpp/evalharness.hpp"
#include "mmtpp/events.hpp"
#include "mmtpp/raster.hpp"
#include "mmtpp/synthetic.hpp"
#include "mmtpp/taxi.hpp"
#include "mmtpp/templating.hpp"
#include "mmtpp/toylm.hpp"
#include "mmtpp/tpp_models.hpp"
#include "mmtpp/vocab.hpp"

#ifndef MMTPP_VERSION
#define MMTPP_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmtpp;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

json versions() {
  return {{"mmtpp", MMTPP_VERSION},
          {"compiler", __VERSION__},
          {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION,
                                EIGEN_MINOR_VERSION)},
          {"fmt", FMT_VERSION},
          {"json", fmt::format("{}.{}.{}", NLOHMANN_JSON_VERSION_MAJOR, NLOHMANN_JSON_VERSION_MINOR,
                               NLOHMANN_JSON_VERSION_PATCH)}};
}

// Config echo plus bookkeeping for the manifest of one run.
struct Run {
  std::string subcommand;
  json config = json::object();
  std::optional<std::uint64_t> seed;
  std::vector<std::string> outputs;

  void write_manifest(const fs::path& path) const {
    json m;
    m["tool"] = "mmtpp";
    m["subcommand"] = subcommand;
    m["config"] = config;
    m["config_hash"] = "fnv1a64:" + fnv1a64(config.dump());
    m["seed"] = seed ? json(*seed) : json(nullptr);
    m["versions"] = versions();
    m["outputs"] = outputs;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << m.dump(2) << '\n';
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

// stdout, or a file plus "<file>.manifest.json".
void emit(Run& run, const std::optional<fs::path>& out, const std::string& text) {
  if (!out) {
    std::cout << text;
    return;
  }
  write_text(*out, text);
  run.outputs.push_back(out->filename().string());
  run.write_manifest(fs::path(out->string() + ".manifest.json"));
}

std::vector<EventSequence> load_valid(const fs::path& path) {
  auto seqs = load_jsonl(path);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (auto issue = validate_sequence(seqs[i])) {
      throw Error(issue->code,
                  fmt::format("{} line {}, event {}: {}", path.string(), i + 1, issue->index,
                              issue->message),
                  i + 1);
    }
  }
  return seqs;
}

int max_type_count(std::span<const EventSequence> seqs) {
  int k = 1;
  for (const auto& s : seqs) k = std::max(k, s.type_count);
  return k;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// "none", "adaptive:0.2" (or "delta:0.2"), "random_drop:0.25".
CompressionPolicy parse_policy(const std::string& spec, std::optional<std::uint64_t> seed) {
  const auto colon = spec.find(':');
  const std::string name = spec.substr(0, colon);
  auto arg = [&]() -> double {
    if (colon == std::string::npos) throw UsageError("policy '" + spec + "' needs a value");
    try {
      std::size_t used = 0;
      const double v = std::stod(spec.substr(colon + 1), &used);
      if (used != spec.size() - colon - 1) throw std::invalid_argument(spec);
      return v;
    } catch (const std::logic_error&) {
      throw UsageError("bad number in policy '" + spec + "'");
    }
  };
  CompressionPolicy p;
  if (name == "none" && colon == std::string::npos) {
    p = CompressionPolicy::none();
  } else if (name == "adaptive" || name == "delta") {
    p = CompressionPolicy::adaptive(arg());
  } else if (name == "random_drop" || name == "random-drop") {
    if (!seed) throw UsageError("random_drop needs --seed");
    p = CompressionPolicy::random_drop(arg(), *seed);
  } else {
    throw UsageError("unknown policy '" + spec + "'");
  }
  p.validate();
  return p;
}

std::optional<std::string> read_system_prompt(const std::optional<fs::path>& path) {
  if (!path) return std::nullopt;
  std::ifstream in(*path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path->string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string s = ss.str();
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

// Model config from an optional JSON file, with flag overrides. The seed must
// come from one of the two.
struct ModelFlags {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<int> dim, layers, heads, context, epochs;
  std::optional<double> lr;

  void add(CLI::App* app, bool with_file = true) {
    if (with_file) app->add_option("--config", config, "Model config JSON")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "Seed (overrides the config)");
    app->add_option("--dim", dim, "Embedding width");
    app->add_option("--layers", layers, "Transformer blocks");
    app->add_option("--heads", heads, "Attention heads");
    app->add_option("--context", context, "Context length in tokens");
    app->add_option("--epochs", epochs, "Epochs for the stage being run");
    app->add_option("--lr", lr, "Learning rate for the stage being run");
  }

  ToyLMConfig resolve(int stage) const {
    json j = config ? load_json_file(*config) : json::object();
    if (!seed && !j.contains("seed")) throw UsageError("a seed is required (--seed or \"seed\" in --config)");
    ToyLMConfig c = config_from_json(j);
    if (seed) c.seed = *seed;
    if (dim) c.embed_dim = *dim;
    if (layers) c.n_layers = *layers;
    if (heads) c.n_heads = *heads;
    if (context) c.context_len = *context;
    if (epochs) (stage == 2 ? c.stage2_epochs : c.stage1_epochs) = *epochs;
    if (lr) (stage == 2 ? c.stage2_lr : c.stage1_lr) = *lr;
    return c;
  }
};

fs::path vocab_path(const fs::path& stem) { return fs::path(stem.string() + ".vocab.json"); }

std::string fmt_num(double v) { return fmt::format("{:.6g}", v); }

// ---------------------------------------------------------------------------

int cmd_validate(Run& run, const fs::path& file, const std::optional<fs::path>& out) {
  run.config["input"] = file.string();
  const auto seqs = load_valid(file);
  std::size_t events = 0;
  for (const auto& s : seqs) events += s.size();
  json r = {{"file", file.string()},
            {"sequences", seqs.size()},
            {"events", events},
            {"type_count", max_type_count(seqs)},
            {"valid", true}};
  emit(run, out, r.dump() + "\n");
  return 0;
}

int cmd_stats(Run& run, const fs::path& file, const std::optional<fs::path>& out) {
  run.config["input"] = file.string();
  const auto seqs = load_valid(file);
  std::vector<double> taus;
  std::size_t events = 0;
  for (const auto& s : seqs) {
    const auto iv = intervals(s);
    taus.insert(taus.end(), iv.intervals.begin(), iv.intervals.end());
    events += s.size();
  }
  if (taus.empty()) throw Error(ErrorCode::EmptySeries, "no intervals in " + file.string());
  std::string csv = "percentile,interval\n";
  static constexpr std::array<double, 11> kPct = {0.0,  0.05, 0.10, 0.20, 0.25, 0.50,
                                                 0.75, 0.90, 0.95, 0.99, 1.00};
  for (const auto& row : quantile_table(taus, kPct)) {
    csv += fmt::format("{:.3f},{:.6g}\n", row.percentile, row.value);
  }
  emit(run, out, csv);
  return 0;
}

int cmd_quantiles(Run& run, const fs::path& file, int precision, const std::optional<fs::path>& out) {
  run.config["input"] = file.string();
  run.config["precision"] = precision;
  const auto seqs = load_valid(file);
  std::string csv = "percentile,value\n";
  for (const auto& row : interval_diff_quantiles(seqs)) {
    csv += fmt::format("{:.3f},{:.{}f}\n", row.percentile, row.value, precision);
  }
  emit(run, out, csv);
  return 0;
}

struct EncodeArgs {
  fs::path input;
  std::optional<fs::path> vocab;
  std::optional<double> delta;
  std::optional<double> drop;
  std::optional<std::uint64_t> seed;
  std::size_t budget = 0;
  std::string format = "text";
  std::optional<fs::path> system_prompt;
  fs::path out;
};

CompressionPolicy policy_from_flags(const std::optional<double>& delta, const std::optional<double>& drop,
                                    const std::optional<std::uint64_t>& seed) {
  if (delta && drop) throw UsageError("--compress/--delta and --random-drop are exclusive");
  if (drop && !seed) throw UsageError("--random-drop needs --seed");
  CompressionPolicy p = CompressionPolicy::none();
  if (delta) p = CompressionPolicy::adaptive(*delta);
  if (drop) p = CompressionPolicy::random_drop(*drop, *seed);
  p.validate();
  return p;
}

int cmd_encode(Run& run, const EncodeArgs& a) {
  const auto policy = policy_from_flags(a.delta, a.drop, a.seed);
  run.seed = a.drop ? a.seed : std::nullopt;
  run.config = {{"input", a.input.string()}, {"policy", policy.label()},
                {"budget", a.budget},        {"format", a.format},
                {"vocab", a.vocab ? json(a.vocab->string()) : json(nullptr)},
                {"system_prompt", a.system_prompt ? json(a.system_prompt->string()) : json(nullptr)}};
  const auto seqs = load_valid(a.input);
  fs::create_directories(a.out);
  const Vocabulary vocab = a.vocab ? Vocabulary::load(*a.vocab) : Vocabulary(max_type_count(seqs));
  if (!a.vocab) {
    vocab.save(a.out / "vocab.json");
    run.outputs.push_back("vocab.json");
  }
  TemplateOptions templ;
  templ.system_prompt = read_system_prompt(a.system_prompt);
  const std::size_t budget = a.budget ? a.budget : kNoBudget;

  std::string stats = "sequence,events,events_in_window,tokens\n";
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const CompressionMask mask = make_mask(seqs[i], policy, sequence_salt(i));
    const EncodedWindow win = encode_window(seqs[i], vocab, mask, budget, templ);
    stats += fmt::format("{},{},{},{}\n", i, seqs[i].size(), win.events_in_window, win.stream.size());
    if (a.format == "text") {
      const auto name = fmt::format("seq{:05d}.tok", i);
      write_text(a.out / name, to_token_text(win.stream.ids, vocab) + "\n");
      run.outputs.push_back(name);
    } else {
      const auto name = fmt::format("seq{:05d}.bin", i);
      write_ids(a.out / name, win.stream.ids);
      run.outputs.push_back(name);
    }
  }
  write_text(a.out / "encode_stats.csv", stats);
  run.outputs.push_back("encode_stats.csv");
  run.write_manifest(a.out / "manifest.json");
  return 0;
}

int cmd_compress(Run& run, const fs::path& file, const std::optional<double>& delta,
                 const std::optional<double>& drop, const std::optional<std::uint64_t>& seed,
                 std::vector<std::size_t> budgets, const std::optional<fs::path>& system_prompt,
                 const std::optional<fs::path>& out) {
  if (!delta && !drop) throw UsageError("compress needs --delta or --random-drop");
  const auto policy = policy_from_flags(delta, drop, seed);
  run.seed = drop ? seed : std::nullopt;
  run.config = {{"input", file.string()}, {"policy", policy.label()}, {"budgets", budgets},
                {"system_prompt", system_prompt ? json(system_prompt->string()) : json(nullptr)}};
  const auto seqs = load_valid(file);
  const Vocabulary vocab(max_type_count(seqs));
  TemplateOptions templ;
  templ.system_prompt = read_system_prompt(system_prompt);
  std::string csv = "policy,budget,mean_events,max_events,compression_ratio\n";
  for (std::size_t b : budgets) {
    const auto r = compression_report(seqs, policy, vocab, b, templ);
    csv += fmt::format("none,{},{},{},{}\n", b, fmt_num(r.uncompressed.mean_events),
                       r.uncompressed.max_events, fmt_num(r.uncompressed.compression_ratio));
    csv += fmt::format("{},{},{},{},{}\n", csv_field(policy.label()), b,
                       fmt_num(r.compressed.mean_events), r.compressed.max_events,
                       fmt_num(r.compressed.compression_ratio));
  }
  emit(run, out, csv);
  return 0;
}

struct TaxiArgs {
  std::optional<fs::path> trips;
  std::optional<std::size_t> synthetic_trips;
  std::optional<fs::path> raster;
  std::optional<fs::path> bbox;
  std::optional<std::string> synthetic_raster;  // WxH
  std::optional<fs::path> gazetteer;
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> target;
  fs::path out;
};

int cmd_build_taxi(Run& run, const TaxiArgs& a) {
  if (a.trips.has_value() == a.synthetic_trips.has_value()) {
    throw UsageError("give exactly one of --trips and --synthetic-trips");
  }
  if (a.synthetic_trips && !a.seed) throw UsageError("--synthetic-trips needs --seed");
  if (a.raster && a.synthetic_raster) throw UsageError("--raster and --synthetic-raster are exclusive");
  if (a.raster && !a.bbox) throw UsageError("--raster needs --bbox");

  // Structured config: band edges, target count, shift gap, patch margin.
  RegionScheme scheme;
  TaxiBuildOptions opt;
  json cfg = a.config ? load_json_file(*a.config) : json::object();
  try {
    scheme.lower_max = cfg.value("lower_max", scheme.lower_max);
    scheme.midtown_max = cfg.value("midtown_max", scheme.midtown_max);
    if (cfg.contains("coverage")) scheme.coverage = bbox_from_json(cfg["coverage"]);
    opt.target_count = cfg.value("target_count", opt.target_count);
    opt.shift_gap_hours = cfg.value("shift_gap_hours", opt.shift_gap_hours);
    opt.min_trips = cfg.value("min_trips", opt.min_trips);
    opt.max_trips = cfg.value("max_trips", opt.max_trips);
    opt.patch_margin_px = cfg.value("patch_margin_px", opt.patch_margin_px);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("taxi config: ") + e.what());
  }
  if (a.target) opt.target_count = *a.target;
  scheme.validate();

  BoundingBox bb = a.bbox ? load_bbox(*a.bbox) : manhattan_bbox();
  run.seed = a.seed;
  run.config = {{"trips", a.trips ? json(a.trips->string()) : json(nullptr)},
                {"synthetic_trips", a.synthetic_trips ? json(*a.synthetic_trips) : json(nullptr)},
                {"raster", a.raster ? json(a.raster->string()) : json(nullptr)},
                {"synthetic_raster", a.synthetic_raster ? json(*a.synthetic_raster) : json(nullptr)},
                {"bbox", bbox_to_json(bb)},
                {"gazetteer", a.gazetteer ? json(a.gazetteer->string()) : json("builtin")},
                {"lower_max", scheme.lower_max},
                {"midtown_max", scheme.midtown_max},
                {"coverage", bbox_to_json(scheme.coverage)},
                {"target_count", opt.target_count},
                {"shift_gap_hours", opt.shift_gap_hours},
                {"min_trips", opt.min_trips},
                {"max_trips", opt.max_trips},
                {"patch_margin_px", opt.patch_margin_px}};

  fs::create_directories(a.out);
  std::vector<TripRecord> trips;
  std::size_t skipped = 0;
  if (a.trips) {
    auto rep = load_trips_csv(*a.trips);
    trips = std::move(rep.trips);
    skipped = rep.skipped;
  } else {
    trips = synthetic_trips(*a.synthetic_trips, *a.seed);
    std::ofstream tout(a.out / "trips.csv", std::ios::binary);
    write_trips_csv(tout, trips);
    run.outputs.push_back("trips.csv");
  }
  const Gazetteer gaz = a.gazetteer ? Gazetteer::load_csv(*a.gazetteer) : Gazetteer::builtin();

  std::optional<GrayImage> raster;
  if (a.raster) {
    raster = read_png(*a.raster);
  } else if (a.synthetic_raster) {
    int w = 0, h = 0;
    char x = 0;
    std::istringstream ss(*a.synthetic_raster);
    if (!(ss >> w >> x >> h) || x != 'x' || w <= 0 || h <= 0) {
      throw UsageError("--synthetic-raster expects WxH, e.g. 1200x1800");
    }
    raster = synthetic_street_raster(w, h, bb);
  }
  std::optional<GeoAffine> affine;
  if (raster) {
    affine = GeoAffine::from_bbox(raster->width, raster->height, bb);
    opt.patch_dir = a.out / "patches";
    fs::create_directories(*opt.patch_dir);
  }
  const auto r = build_sequences(trips, scheme, gaz, raster ? &*raster : nullptr,
                                 affine ? &*affine : nullptr, opt);
  save_jsonl(r.sequences, a.out / "sequences.jsonl");
  run.outputs.push_back("sequences.jsonl");
  if (raster) run.outputs.push_back("patches/");

  std::size_t events = 0;
  for (const auto& s : r.sequences) events += s.size();
  json report = {{"trips", trips.size()},
                 {"skipped_rows", skipped},
                 {"candidates", r.candidates},
                 {"sequences", r.sequences.size()},
                 {"events", events},
                 {"mean_length", r.sequences.empty() ? 0.0 : double(events) / r.sequences.size()},
                 {"trips_used", r.trips_used},
                 {"patches_written", r.patches_written},
                 {"type_counts", r.type_counts},
                 {"type_variance", histogram_variance(r.type_counts)}};
  write_text(a.out / "report.json", report.dump(2) + "\n");
  run.outputs.push_back("report.json");
  run.write_manifest(a.out / "manifest.json");
  std::cout << report.dump() << "\n";
  return 0;
}

int cmd_fit(Run& run, const fs::path& file, const std::string& model_name, int max_iters,
            double tol, const fs::path& out) {
  const ModelVariant v = model_variant_from_string(model_name);
  run.config = {{"input", file.string()}, {"model", to_string(v)},
                {"max_iters", max_iters}, {"grad_tol", tol}};
  const auto seqs = load_valid(file);
  FitConfig fc;
  fc.max_iters = max_iters;
  fc.grad_tol = tol;
  fc.threads = 1;  // fixed reduction order
  const FitResult fit = fit_mle(seqs, v, nullptr, fc);
  save_model(fit.model, out);
  run.outputs.push_back(out.filename().string());
  std::string trace = "iteration,loglik\n";
  for (std::size_t i = 0; i < fit.trace.loglik.size(); ++i) {
    trace += fmt::format("{},{:.17g}\n", i, fit.trace.loglik[i]);
  }
  const fs::path trace_path = fs::path(out.string() + ".trace.csv");
  write_text(trace_path, trace);
  run.outputs.push_back(trace_path.filename().string());
  run.write_manifest(fs::path(out.string() + ".manifest.json"));
  json summary = {{"model", model_to_json(fit.model)},
                  {"loglik", fit.trace.loglik.empty() ? json(nullptr) : json(fit.trace.loglik.back())},
                  {"iterations", fit.trace.iterations},
                  {"grad_norm", fit.trace.grad_norm},
                  {"converged", fit.trace.converged},
                  {"branching_ratio", fit.model.branching_ratio()}};
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_loglik(Run& run, const fs::path& file, const fs::path& model_path,
               const std::optional<fs::path>& out) {
  run.config = {{"input", file.string()}, {"model", model_path.string()}};
  const auto seqs = load_valid(file);
  const IntensityModel model = load_model(model_path);
  std::string csv = "sequence,events,loglik,time_terms,type_terms,survival,unstable\n";
  double total = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto r = loglik(model, seqs[i]);
    double t = 0, y = 0;
    for (double v : r.time_terms) t += v;
    for (double v : r.type_terms) y += v;
    csv += fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{}\n", i, seqs[i].size(), r.total, t, y,
                       r.survival_term, r.unstable ? 1 : 0);
    total += r.total;
  }
  csv += fmt::format("total,,{:.17g},,,,\n", total);
  emit(run, out, csv);
  return 0;
}

struct TrainArgs {
  int stage = 1;
  ModelFlags model;
  fs::path corpus;
  std::optional<fs::path> init;
  std::string policy = "none";
  std::optional<std::size_t> budget;
  std::vector<std::string> tasks = {"time", "type"};
  std::size_t split_stride = 1;
  std::size_t min_history = 1;
  std::optional<fs::path> system_prompt;
  fs::path out;
};

int cmd_train(Run& run, TrainArgs a) {
  if (a.stage != 1 && a.stage != 2) throw UsageError("--stage must be 1 or 2");
  if (a.stage == 2 && !a.init) throw UsageError("stage 2 needs --init <checkpoint>");
  const auto seqs = load_valid(a.corpus);

  ModelParams init;
  Vocabulary vocab(max_type_count(seqs));
  ToyLMConfig cfg;
  if (a.init) {
    init = load_checkpoint(*a.init);
    vocab = Vocabulary::load(vocab_path(*a.init));
    cfg = init.config;
    // Stage-specific flags still apply to the loaded config.
    ModelFlags f = a.model;
    if (f.seed) cfg.seed = *f.seed;
    if (f.epochs) (a.stage == 2 ? cfg.stage2_epochs : cfg.stage1_epochs) = *f.epochs;
    if (f.lr) (a.stage == 2 ? cfg.stage2_lr : cfg.stage1_lr) = *f.lr;
    if (f.dim || f.layers || f.heads || f.context) {
      throw UsageError("architecture flags cannot change a loaded checkpoint");
    }
    init.config = cfg;
  } else {
    cfg = a.model.resolve(a.stage);
    cfg.vocab_size = static_cast<int>(vocab.size());
    if (cfg.image_pad_token < 0) cfg.image_pad_token = vocab.special(Special::ImagePad);
  }
  cfg.validate();
  if (max_type_count(seqs) > vocab.type_count()) {
    throw Error(ErrorCode::UnknownType, "corpus has more event types than the checkpoint vocabulary");
  }
  const auto policy = parse_policy(a.policy, cfg.seed);
  const std::size_t budget = a.budget.value_or(static_cast<std::size_t>(cfg.context_len));

  run.seed = cfg.seed;
  run.config = {{"stage", a.stage},
                {"corpus", a.corpus.string()},
                {"init", a.init ? json(a.init->string()) : json(nullptr)},
                {"policy", policy.label()},
                {"budget", budget},
                {"model", config_to_json(cfg)},
                {"system_prompt", a.system_prompt ? json(a.system_prompt->string()) : json(nullptr)}};
  TemplateOptions templ;
  templ.system_prompt = read_system_prompt(a.system_prompt);

  std::vector<double> losses;
  ModelParams result;
  if (a.stage == 1) {
    const auto corpus = build_stage1_corpus(seqs, vocab, policy, budget, templ);
    if (corpus.empty()) throw Error(ErrorCode::EmptySeries, "no training windows");
    TrainResult tr = train_stage1(cfg, corpus, a.init ? &init : nullptr);
    losses = tr.epoch_loss;
    result = std::move(tr.params);
  } else {
    run.config["tasks"] = a.tasks;
    run.config["split_stride"] = a.split_stride;
    run.config["min_history"] = a.min_history;
    Stage2Options s2;
    s2.templ = templ;
    s2.split_stride = a.split_stride;
    s2.min_history = a.min_history;
    std::vector<PromptResponsePair> pairs;
    for (const auto& t : a.tasks) {
      auto p = build_stage2_pairs(seqs, vocab, policy, budget, task_kind_from_string(t), s2);
      pairs.insert(pairs.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
    }
    if (pairs.empty()) throw Error(ErrorCode::EmptySeries, "no prompt-response pairs");
    TrainResult tr = train_stage2(init, pairs);
    losses = tr.epoch_loss;
    result = std::move(tr.params);
  }

  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  save_checkpoint(result, a.out);
  vocab.save(vocab_path(a.out));
  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) csv += fmt::format("{},{:.9g}\n", e + 1, losses[e]);
  const fs::path loss_path = fs::path(a.out.string() + ".loss.csv");
  write_text(loss_path, csv);
  const std::string stem = a.out.filename().string();
  run.outputs = {stem + ".bin", stem + ".json", stem + ".vocab.json", stem + ".loss.csv"};
  run.write_manifest(fs::path(a.out.string() + ".manifest.json"));
  std::cout << json({{"checkpoint", a.out.string()},
                     {"epochs", losses.size()},
                     {"final_loss", losses.empty() ? json(nullptr) : json(losses.back())}})
                   .dump()
            << "\n";
  return 0;
}

struct GenerateArgs {
  std::string task;
  fs::path checkpoint;
  fs::path input;
  std::optional<std::size_t> prefix;
  double temperature = 0.0;
  std::optional<std::uint64_t> seed;
  std::size_t max_new = 64;
  std::string policy = "none";
  std::optional<std::size_t> budget;
  std::optional<fs::path> system_prompt;
  std::optional<fs::path> out;
};

int cmd_generate(Run& run, const GenerateArgs& a) {
  if (a.temperature > 0.0 && !a.seed) throw UsageError("sampling with --temperature > 0 needs --seed");
  const TaskKind task = task_kind_from_string(a.task);
  const ModelParams params = load_checkpoint(a.checkpoint);
  const Vocabulary vocab = Vocabulary::load(vocab_path(a.checkpoint));
  const auto seqs = load_valid(a.input);
  const auto policy = parse_policy(a.policy, a.seed);
  const std::size_t budget = a.budget.value_or(static_cast<std::size_t>(params.config.context_len));
  run.seed = a.seed;
  run.config = {{"task", to_string(task)},
                {"checkpoint", a.checkpoint.string()},
                {"input", a.input.string()},
                {"prefix", a.prefix ? json(*a.prefix) : json("last")},
                {"temperature", a.temperature},
                {"max_new", a.max_new},
                {"policy", policy.label()},
                {"budget", budget}};

  // One split per sequence: the history ends at event `prefix` (default: all
  // but the last event).
  std::string csv = "sequence,split,task,prediction,truth\n";
  GenerateOptions gen;
  gen.temperature = a.temperature;
  gen.seed = a.seed.value_or(0);
  gen.max_new = a.max_new;
  Stage2Options s2;
  s2.templ.system_prompt = read_system_prompt(a.system_prompt);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const std::size_t k = a.prefix.value_or(seqs[i].size() - 1);
    if (k < 1 || k >= seqs[i].size()) {
      throw Error(ErrorCode::TooShortSequence,
                  fmt::format("sequence {} has {} events, cannot split after {}", i, seqs[i].size(), k),
                  i + 1);
    }
    s2.min_history = k;
    s2.split_stride = seqs[i].size();
    const std::span<const EventSequence> one(&seqs[i], 1);
    auto pairs = build_stage2_pairs(one, vocab, policy, budget, task, s2);
    if (pairs.empty()) {
      csv += fmt::format("{},{},{},,\n", i, k, to_string(task));  // history end was dropped
      continue;
    }
    const auto& p = pairs.front();
    const TokenStream outp = generate(params, p.prompt, task, vocab, gen);
    std::string pred, truth;
    switch (task) {
      case TaskKind::Time: {
        const auto d = decode_time_response(outp.ids, vocab);
        pred = d ? fmt::format("{:.9g}", d->value) : "";
        truth = fmt::format("{:.9g}", decode_time_response(p.response.ids, vocab)->value);
        break;
      }
      case TaskKind::Type: {
        const auto d = decode_type_response(outp.ids, vocab);
        pred = d ? std::to_string(*d) : "";
        truth = std::to_string(*decode_type_response(p.response.ids, vocab));
        break;
      }
      case TaskKind::Text:
        pred = decode_text_response(outp.ids, vocab).value_or("");
        truth = decode_text_response(p.response.ids, vocab).value_or("");
        break;
    }
    csv += fmt::format("{},{},{},{},{}\n", i, k, to_string(task), csv_field(pred), csv_field(truth));
  }
  emit(run, a.out, csv);
  return 0;
}

std::vector<double> parse_edges(const std::vector<std::string>& raw) {
  if (raw.empty()) return kDefaultLengthEdges;
  std::vector<double> edges;
  for (const auto& s : raw) {
    if (s == "inf") {
      edges.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    try {
      edges.push_back(std::stod(s));
    } catch (const std::logic_error&) {
      throw UsageError("bad length edge '" + s + "'");
    }
  }
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end()) ||
      std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
    throw UsageError("length edges must be at least two increasing values");
  }
  return edges;
}

json edges_json(const std::vector<double>& edges) {
  json j = json::array();
  for (double e : edges) j.push_back(std::isinf(e) ? json("inf") : json(e));
  return j;
}

struct EvalArgs {
  fs::path checkpoint;
  fs::path test;
  std::string policy = "none";
  std::optional<std::uint64_t> seed;
  std::size_t stride = 0;
  std::vector<std::string> edges;
  unsigned threads = 0;
  fs::path out;
};

int cmd_eval(Run& run, const EvalArgs& a) {
  const ModelParams params = load_checkpoint(a.checkpoint);
  const Vocabulary vocab = Vocabulary::load(vocab_path(a.checkpoint));
  const auto seqs = load_valid(a.test);
  const auto policy = parse_policy(a.policy, a.seed);
  const auto edges = parse_edges(a.edges);
  run.seed = policy.mode == CompressionMode::RandomDrop ? a.seed : std::nullopt;
  run.config = {{"checkpoint", a.checkpoint.string()}, {"test", a.test.string()},
                {"policy", policy.label()},            {"stride", a.stride},
                {"length_edges", edges_json(edges)}};

  PplOptions po;
  po.stride = a.stride;
  po.threads = a.threads;
  std::vector<LengthTaggedStream> tagged;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const CompressionMask mask = make_mask(seqs[i], policy, sequence_salt(i));
    tagged.push_back({encode_window(seqs[i], vocab, mask, kNoBudget).stream, seqs[i].size()});
  }
  PolicyResult res;
  res.label = policy.label();
  res.policy = policy;
  res.seed = params.config.seed;
  res.bins = ppl_by_length(params, tagged, edges, po);
  NllSum total;
  for (const auto& b : res.bins) total.add(b.sum);
  res.ppl = total.ppl();

  fs::create_directories(a.out);
  std::ostringstream summary, lengths;
  summary << "policy,seed,streams,tokens,nll,ppl\n";
  fmt::print(summary, "{},{},{},{},{:.9g},{:.9g}\n", csv_field(res.label), res.seed, seqs.size(),
             total.tokens, total.nll, res.ppl);
  write_text(a.out / "eval.csv", summary.str());
  const std::vector<PolicyResult> one{res};
  write_length_csv(lengths, one);
  write_text(a.out / "length.csv", lengths.str());
  const std::vector<PlotSeries> series{{res.label, res.bins}};
  write_ppl_svg(a.out / "ppl_vs_length.svg", series);
  run.outputs = {"eval.csv", "length.csv", "ppl_vs_length.svg"};
  run.write_manifest(a.out / "manifest.json");
  std::cout << summary.str();
  return 0;
}

struct CompareArgs {
  fs::path train;
  fs::path test;
  ModelFlags model;
  std::vector<std::string> policies = {"adaptive:0.2", "none", "random_drop:0.25"};
  std::vector<std::uint64_t> seeds;
  std::size_t budget = 1024;
  std::size_t max_train_windows = 0;
  bool stage2 = false;
  std::size_t max_eval_pairs = 200;
  std::vector<std::string> edges;
  std::size_t stride = 0;
  unsigned threads = 0;
  fs::path out;
};

int cmd_compare(Run& run, const CompareArgs& a) {
  const auto train = load_valid(a.train);
  const auto test = load_valid(a.test);
  ModelFlags flags = a.model;
  if (!flags.seed && !a.seeds.empty()) flags.seed = a.seeds.front();
  ToyLMConfig base = flags.resolve(1);
  std::vector<std::uint64_t> seeds = a.seeds;
  if (seeds.empty()) seeds = {base.seed};
  CompareOptions co;
  co.budget = a.budget;
  co.max_train_windows = a.max_train_windows;
  co.stage2 = a.stage2;
  co.max_eval_pairs = a.max_eval_pairs;
  co.length_edges = parse_edges(a.edges);
  co.ppl.stride = a.stride;
  co.ppl.threads = a.threads;

  run.seed = seeds.front();
  run.config = {{"train", a.train.string()},
                {"test", a.test.string()},
                {"policies", a.policies},
                {"seeds", seeds},
                {"budget", a.budget},
                {"max_train_windows", a.max_train_windows},
                {"stage2", a.stage2},
                {"max_eval_pairs", a.max_eval_pairs},
                {"stride", a.stride},
                {"length_edges", edges_json(co.length_edges)},
                {"model", config_to_json(base)}};

  std::vector<PolicyResult> all;
  for (std::uint64_t seed : seeds) {
    ToyLMConfig cfg = base;
    cfg.seed = seed;
    std::vector<CompressionPolicy> policies;
    for (const auto& p : a.policies) policies.push_back(parse_policy(p, seed));
    auto r = compare_policies(train, test, policies, cfg, co);
    for (const auto& x : r) std::cerr << fmt::format("seed {} {} ppl {:.6g}\n", seed, x.label, x.ppl);
    all.insert(all.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  }

  fs::create_directories(a.out);
  std::ostringstream cmp, len;
  write_compare_csv(cmp, all);
  write_length_csv(len, all);
  write_text(a.out / "compare.csv", cmp.str());
  write_text(a.out / "length.csv", len.str());

  // Mean PPL per policy over seeds, and the plot of seed-pooled bins.
  std::map<std::string, std::pair<double, int>> mean;
  std::vector<std::string> order;
  std::map<std::string, std::vector<LengthBin>> pooled;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const std::string key = a.policies[i % a.policies.size()];
    if (!mean.count(key)) order.push_back(key);
    mean[key].first += all[i].ppl;
    mean[key].second += 1;
    auto& bins = pooled[key];
    if (bins.empty()) {
      bins = all[i].bins;
    } else {
      for (std::size_t b = 0; b < bins.size(); ++b) {
        bins[b].streams += all[i].bins[b].streams;
        bins[b].sum.add(all[i].bins[b].sum);
      }
    }
  }
  std::string summary = "policy,seeds,mean_ppl\n";
  std::vector<PlotSeries> series;
  for (const auto& key : order) {
    summary += fmt::format("{},{},{:.6g}\n", csv_field(key), mean[key].second,
                           mean[key].first / mean[key].second);
    series.push_back({key, pooled[key]});
  }
  write_text(a.out / "summary.csv", summary);
  write_ppl_svg(a.out / "ppl_vs_length.svg", series);
  run.outputs = {"compare.csv", "length.csv", "summary.csv", "ppl_vs_length.svg"};
  run.write_manifest(a.out / "manifest.json");
  std::cout << summary;
  return 0;
}

struct SynthArgs {
  std::string kind;
  std::size_t n = 0;
  std::size_t events = 0;
  int types = 0;
  std::optional<std::uint64_t> seed;
  fs::path out;
};

int cmd_synth(Run& run, const SynthArgs& a) {
  std::vector<EventSequence> seqs;
  run.config = {{"kind", a.kind}};
  if (a.kind == "danmaku") {
    if (!a.seed) throw UsageError("danmaku corpora need --seed");
    DanmakuConfig c;
    if (a.n) c.n_sequences = a.n;
    if (a.events) c.events_per_sequence = a.events;
    if (a.types) c.type_count = a.types;
    c.seed = *a.seed;
    run.seed = c.seed;
    run.config.update({{"n_sequences", c.n_sequences},
                       {"events_per_sequence", c.events_per_sequence},
                       {"type_count", c.type_count},
                       {"burst_share_shape", c.burst_share_shape},
                       {"mean_regime_run", c.mean_regime_run},
                       {"level", c.level}});
    seqs = danmaku_corpus(c);
  } else if (a.kind == "grammar") {
    GrammarConfig c;
    if (a.n) c.n_sequences = a.n;
    if (a.events) c.events_per_sequence = a.events;
    if (a.types) c.type_count = a.types;
    run.config.update({{"n_sequences", c.n_sequences},
                       {"events_per_sequence", c.events_per_sequence},
                       {"type_count", c.type_count},
                       {"intervals", c.intervals}});
    seqs = grammar_corpus(c);
  } else {
    throw UsageError("synth kind must be danmaku or grammar");
  }
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  save_jsonl(seqs, a.out);
  run.outputs = {a.out.filename().string()};
  run.write_manifest(fs::path(a.out.string() + ".manifest.json"));
  return 0;
}

void print_error(std::string_view code, const std::string& message,
                 std::optional<std::size_t> index = std::nullopt) {
  json j = {{"error", code}, {"message", message}};
  if (index) j["index"] = *index;
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal temporal point process toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MMTPP_VERSION);

  Run run;
  std::function<int()> action;

  // validate / stats / quantiles
  fs::path in_file;
  std::optional<fs::path> out_file;
  int precision = 3;
  auto* validate = app.add_subcommand("validate", "Check every sequence of a JSONL file");
  validate->add_option("file", in_file)->required()->check(CLI::ExistingFile);
  validate->add_option("--out", out_file, "Write the report here instead of stdout");
  validate->callback([&] { action = [&] { return cmd_validate(run, in_file, out_file); }; });

  auto* stats = app.add_subcommand("stats", "Interval quantiles as CSV");
  stats->add_option("file", in_file)->required()->check(CLI::ExistingFile);
  stats->add_option("--out", out_file, "Write the CSV here instead of stdout");
  stats->callback([&] { action = [&] { return cmd_stats(run, in_file, out_file); }; });

  auto* quant = app.add_subcommand("quantiles", "Quantiles of adjacent-interval differences");
  quant->add_option("file", in_file)->required()->check(CLI::ExistingFile);
  quant->add_option("--precision", precision, "Decimals in the value column")->check(CLI::Range(0, 17));
  quant->add_option("--out", out_file, "Write the CSV here instead of stdout");
  quant->callback([&] { action = [&] { return cmd_quantiles(run, in_file, precision, out_file); }; });

  // encode
  EncodeArgs enc;
  auto* encode = app.add_subcommand("encode", "Encode sequences into token streams");
  encode->add_option("--input", enc.input)->required()->check(CLI::ExistingFile);
  encode->add_option("--vocab", enc.vocab, "Vocabulary JSON (default: built and written to --out)")
      ->check(CLI::ExistingFile);
  encode->add_option("--compress,--delta", enc.delta, "Adaptive compression threshold");
  encode->add_option("--random-drop", enc.drop, "Random-drop probability");
  encode->add_option("--seed", enc.seed, "Seed for random drop");
  encode->add_option("--budget", enc.budget, "Token budget (newest events kept; 0 = whole sequence)");
  encode->add_option("--format", enc.format)->check(CLI::IsMember({"text", "binary"}));
  encode->add_option("--system-prompt", enc.system_prompt)->check(CLI::ExistingFile);
  encode->add_option("--out", enc.out)->required();
  encode->callback([&] { action = [&] { return cmd_encode(run, enc); }; });

  // compress
  std::optional<double> c_delta, c_drop;
  std::optional<std::uint64_t> c_seed;
  std::vector<std::size_t> c_budgets = {4096};
  std::optional<fs::path> c_sys;
  auto* compress = app.add_subcommand("compress", "Events per token window with and without compression");
  compress->add_option("file", in_file)->required()->check(CLI::ExistingFile);
  compress->add_option("--delta", c_delta, "Adaptive threshold");
  compress->add_option("--random-drop", c_drop, "Random-drop probability");
  compress->add_option("--seed", c_seed, "Seed for random drop");
  compress->add_option("--budget", c_budgets, "Token budgets")->delimiter(',');
  compress->add_option("--system-prompt", c_sys)->check(CLI::ExistingFile);
  compress->add_option("--out", out_file, "Write the CSV here instead of stdout");
  compress->callback([&] {
    action = [&] { return cmd_compress(run, in_file, c_delta, c_drop, c_seed, c_budgets, c_sys, out_file); };
  });

  // build-taxi
  TaxiArgs tx;
  auto* taxi = app.add_subcommand("build-taxi", "Build taxi event sequences and map patches");
  taxi->add_option("--trips", tx.trips, "TLC trip_data CSV")->check(CLI::ExistingFile);
  taxi->add_option("--synthetic-trips", tx.synthetic_trips, "Generate this many trips instead");
  taxi->add_option("--raster", tx.raster, "Georeferenced map PNG")->check(CLI::ExistingFile);
  taxi->add_option("--bbox", tx.bbox, "Bounding-box sidecar JSON")->check(CLI::ExistingFile);
  taxi->add_option("--synthetic-raster", tx.synthetic_raster, "Procedural map of size WxH");
  taxi->add_option("--gazetteer", tx.gazetteer, "Landmark CSV (name,lat,lon)")->check(CLI::ExistingFile);
  taxi->add_option("--config", tx.config, "Taxi config JSON")->check(CLI::ExistingFile);
  taxi->add_option("--target", tx.target, "Number of sequences to select");
  taxi->add_option("--seed", tx.seed, "Seed for synthetic trips");
  taxi->add_option("--out", tx.out)->required();
  taxi->callback([&] { action = [&] { return cmd_build_taxi(run, tx); }; });

  // fit / loglik
  std::string fit_model = "hawkes";
  int fit_iters = 5000;
  double fit_tol = 1e-7;
  fs::path model_out;
  auto* fit = app.add_subcommand("fit", "Maximum-likelihood fit of a Poisson or Hawkes model");
  fit->add_option("file", in_file)->required()->check(CLI::ExistingFile);
  fit->add_option("--model", fit_model)->check(CLI::IsMember({"poisson", "hawkes"}));
  fit->add_option("--max-iters", fit_iters);
  fit->add_option("--tol", fit_tol);
  fit->add_option("--out", model_out, "Model JSON")->required();
  fit->callback([&] {
    action = [&] {
      return cmd_fit(run, in_file, fit_model, fit_iters, fit_tol, model_out);
    };
  });

  fs::path model_in;
  auto* ll = app.add_subcommand("loglik", "Per-sequence log-likelihood under a model");
  ll->add_option("file", in_file)->required()->check(CLI::ExistingFile);
  ll->add_option("--model", model_in, "Model JSON")->required()->check(CLI::ExistingFile);
  ll->add_option("--out", out_file, "Write the CSV here instead of stdout");
  ll->callback([&] { action = [&] { return cmd_loglik(run, in_file, model_in, out_file); }; });

  // train
  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train the toy LM (stage 1 or 2)");
  train->add_option("--stage", tr.stage)->required()->check(CLI::IsMember({1, 2}));
  tr.model.add(train);
  train->add_option("--corpus", tr.corpus)->required()->check(CLI::ExistingFile);
  train->add_option("--init", tr.init, "Checkpoint stem to start from");
  train->add_option("--policy", tr.policy, "none | adaptive:D | random_drop:P");
  train->add_option("--budget", tr.budget, "Token budget per window (default: context length)");
  train->add_option("--tasks", tr.tasks, "Stage-2 tasks")->delimiter(',')->check(
      CLI::IsMember({"time", "type", "text"}));
  train->add_option("--split-stride", tr.split_stride)->check(CLI::PositiveNumber);
  train->add_option("--min-history", tr.min_history)->check(CLI::PositiveNumber);
  train->add_option("--system-prompt", tr.system_prompt)->check(CLI::ExistingFile);
  train->add_option("--out", tr.out, "Checkpoint stem")->required();
  train->callback([&] { action = [&] { return cmd_train(run, tr); }; });

  // generate
  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Predict the next event of each sequence");
  gen->add_option("--task", ga.task)->required()->check(CLI::IsMember({"time", "type", "text"}));
  gen->add_option("--checkpoint", ga.checkpoint, "Checkpoint stem")->required();
  gen->add_option("--input", ga.input)->required()->check(CLI::ExistingFile);
  gen->add_option("--prefix", ga.prefix, "History length (default: all but the last event)");
  gen->add_option("--temperature", ga.temperature)->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", ga.seed);
  gen->add_option("--max-new", ga.max_new);
  gen->add_option("--policy", ga.policy);
  gen->add_option("--budget", ga.budget);
  gen->add_option("--system-prompt", ga.system_prompt)->check(CLI::ExistingFile);
  gen->add_option("--out", ga.out, "Write the CSV here instead of stdout");
  gen->callback([&] { action = [&] { return cmd_generate(run, ga); }; });

  // eval
  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Held-out perplexity, overall and by sequence length");
  ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint stem")->required();
  ev->add_option("--test", ea.test)->required()->check(CLI::ExistingFile);
  ev->add_option("--policy", ea.policy);
  ev->add_option("--seed", ea.seed, "Seed for random drop");
  ev->add_option("--stride", ea.stride, "Window stride (0 = half the context)");
  ev->add_option("--edges", ea.edges, "Length-bin edges, 'inf' allowed")->delimiter(',');
  ev->add_option("--threads", ea.threads);
  ev->add_option("--out", ea.out)->required();
  ev->callback([&] { action = [&] { return cmd_eval(run, ea); }; });

  // compare
  CompareArgs ca;
  auto* cmp = app.add_subcommand("compare", "Train and score one toy LM per compression policy");
  cmp->add_option("--train", ca.train)->required()->check(CLI::ExistingFile);
  cmp->add_option("--test", ca.test)->required()->check(CLI::ExistingFile);
  ca.model.add(cmp);
  cmp->add_option("--policies", ca.policies)->delimiter(',');
  cmp->add_option("--seeds", ca.seeds, "One run per seed (default: the config seed)")->delimiter(',');
  cmp->add_option("--budget", ca.budget);
  cmp->add_option("--max-train-windows", ca.max_train_windows);
  cmp->add_flag("--stage2", ca.stage2, "Also fine-tune and score RMSE / ACC");
  cmp->add_option("--max-eval-pairs", ca.max_eval_pairs);
  cmp->add_option("--edges", ca.edges)->delimiter(',');
  cmp->add_option("--stride", ca.stride);
  cmp->add_option("--threads", ca.threads);
  cmp->add_option("--out", ca.out)->required();
  cmp->callback([&] { action = [&] { return cmd_compare(run, ca); }; });

  // synth
  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus");
  synth->add_option("kind", sa.kind)->required()->check(CLI::IsMember({"danmaku", "grammar"}));
  synth->add_option("--sequences", sa.n);
  synth->add_option("--events", sa.events);
  synth->add_option("--types", sa.types);
  synth->add_option("--seed", sa.seed);
  synth->add_option("--out", sa.out)->required();
  synth->callback([&] { action = [&] { return cmd_synth(run, sa); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("UsageError", e.what());
    return 2;
  }
  run.subcommand = app.get_subcommands().front()->get_name();

  try {
    return action();
  } catch (const UsageError& e) {
    print_error("UsageError", e.what());
    return 2;
  } catch (const Error& e) {
    print_error(to_string(e.code()), e.what(), e.index());
    return 1;
  } catch (const json::exception& e) {
    print_error("SchemaError", e.what());
    return 1;
  } catch (const fs::filesystem_error& e) {
    print_error("IoError", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("InternalError", e.what());
    return 1;
  }
}
