#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mmtpp/compression.hpp"
#include "mmtpp/evalharness.hpp"
#include "mmtpp/events.hpp"
#include "mmtpp/raster.hpp"
#include "mmtpp/synthetic.hpp"
#include "mmtpp/taxi.hpp"
#include "mmtpp/templating.hpp"
#include "mmtpp/timecodec.hpp"
#include "mmtpp/toylm.hpp"
#include "mmtpp/tpp_models.hpp"
#include "mmtpp/vocab.hpp"

namespace py = pybind11;
using namespace mmtpp;

namespace {

using Gray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

GrayImage to_image(const Gray& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::InvalidArgument, "expected a 2-D uint8 array");
  GrayImage img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

Gray to_array(const GrayImage& img) {
  Gray out({img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

BoundingBox to_bbox(const std::array<double, 4>& b) {
  BoundingBox bb{b[0], b[1], b[2], b[3]};
  bb.validate();
  return bb;
}

const char* action_name(EventAction a) {
  switch (a) {
    case EventAction::Full: return "full";
    case EventAction::Similar: return "similar";
    case EventAction::Dropped: return "dropped";
  }
  return "?";
}

std::vector<std::string> mask_names(const CompressionMask& m) {
  std::vector<std::string> out;
  for (auto a : m.actions) out.emplace_back(action_name(a));
  return out;
}

py::list quantile_rows(const std::vector<QuantileRow>& rows) {
  py::list out;
  for (const auto& r : rows) out.append(py::make_tuple(r.percentile, r.value));
  return out;
}

py::dict loglik_dict(const LogLikReport& r) {
  py::dict d;
  d["total"] = r.total;
  d["time_terms"] = r.time_terms;
  d["type_terms"] = r.type_terms;
  d["survival_term"] = r.survival_term;
  d["unstable"] = r.unstable;
  return d;
}

TemplateOptions template_options(const std::optional<std::string>& system_prompt) {
  TemplateOptions t;
  t.system_prompt = system_prompt;
  return t;
}

std::vector<TokenStream> to_streams(const std::vector<std::vector<TokenId>>& ids) {
  std::vector<TokenStream> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out[i].ids = ids[i];
    out[i].provenance.assign(ids[i].size(), Provenance::Structural);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_mmtpp, m) {
  m.doc() = "Multimodal temporal point process toolkit";

  // Carries .code (error name) and .index (1-based element, or None).
  static PyObject* error_type = PyErr_NewException("mmtpp.MmtppError", PyExc_RuntimeError, nullptr);
  m.add_object("MmtppError", py::handle(error_type));
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::reinterpret_borrow<py::object>(error_type)(e.what());
      inst.attr("code") = std::string(to_string(e.code()));
      inst.attr("index") = e.index() ? py::cast(*e.index()) : py::none();
      PyErr_SetObject(error_type, inst.ptr());
    }
  });

  // --- events ---
  py::class_<Event>(m, "Event")
      .def(py::init([](double time, int type_id, std::string text, std::optional<std::string> image) {
             return Event{time, type_id, std::move(text), std::move(image)};
           }),
           py::arg("time"), py::arg("type_id"), py::arg("text") = "", py::arg("image") = py::none())
      .def_readwrite("time", &Event::time)
      .def_readwrite("type_id", &Event::type_id)
      .def_readwrite("text", &Event::text)
      .def_readwrite("image", &Event::image)
      .def(py::self == py::self)
      .def("__repr__", [](const Event& e) {
        return "Event(time=" + std::to_string(e.time) + ", type_id=" + std::to_string(e.type_id) + ")";
      });

  py::class_<EventSequence>(m, "EventSequence")
      .def(py::init([](std::vector<Event> events, double horizon, int type_count, std::string unit) {
             return EventSequence{std::move(events), horizon, type_count, std::move(unit)};
           }),
           py::arg("events"), py::arg("horizon"), py::arg("type_count"), py::arg("time_unit") = "")
      .def_readwrite("events", &EventSequence::events)
      .def_readwrite("horizon", &EventSequence::horizon)
      .def_readwrite("type_count", &EventSequence::type_count)
      .def_readwrite("time_unit", &EventSequence::time_unit)
      .def("__len__", &EventSequence::size)
      .def(py::self == py::self)
      .def("to_json", [](const EventSequence& s) { return sequence_to_json(s).dump(); })
      .def_static("from_json", [](const std::string& s) {
        return sequence_from_json(nlohmann::json::parse(s));
      });

  m.def("validate_sequence", [](const EventSequence& s) -> py::object {
    auto issue = validate_sequence(s);
    if (!issue) return py::none();
    py::dict d;
    d["code"] = std::string(to_string(issue->code));
    d["index"] = issue->index;
    d["message"] = issue->message;
    return d;
  });
  m.def("require_valid", &require_valid);
  m.def("intervals", [](const EventSequence& s) {
    auto iv = intervals(s);
    return py::make_tuple(iv.intervals, iv.adjacent_diffs);
  });
  m.def("load_jsonl", &load_jsonl);
  m.def("save_jsonl", [](const std::vector<EventSequence>& seqs, const std::filesystem::path& p) {
    save_jsonl(seqs, p);
  });

  // --- time codec ---
  m.def("narrow_interval", &narrow_interval);
  m.def("encode_time", &encode_time, "Interval -> four big-endian bytes of its binary32 pattern");
  m.def("decode_time", [](const std::array<std::uint8_t, 4>& b) {
    auto d = decode_time(b);
    return py::make_tuple(d.value, d.finite);
  });
  m.def("float_to_bytes", &float_to_bytes);
  m.def("bytes_to_float", &bytes_to_float);

  // --- vocabulary / templating ---
  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<int>(), py::arg("type_count"))
      .def_static("load", &Vocabulary::load)
      .def("save", &Vocabulary::save)
      .def("__len__", &Vocabulary::size)
      .def_property_readonly("type_count", &Vocabulary::type_count)
      .def("token_string", &Vocabulary::token_string)
      .def("find", &Vocabulary::find)
      .def("type_token", &Vocabulary::type_token)
      .def("to_json", [](const Vocabulary& v) { return v.to_json().dump(); })
      .def(py::self == py::self);

  py::class_<CompressionPolicy>(m, "CompressionPolicy")
      .def_static("none", &CompressionPolicy::none)
      .def_static("adaptive", &CompressionPolicy::adaptive, py::arg("delta") = kDefaultDelta)
      .def_static("random_drop", &CompressionPolicy::random_drop, py::arg("p"), py::arg("seed"))
      .def_readonly("delta", &CompressionPolicy::delta)
      .def_readonly("drop_prob", &CompressionPolicy::drop_prob)
      .def_readonly("seed", &CompressionPolicy::seed)
      .def_property_readonly("label", &CompressionPolicy::label)
      .def("__repr__", &CompressionPolicy::label);

  m.def(
      "encode_sequence",
      [](const EventSequence& s, const Vocabulary& v, std::optional<CompressionPolicy> policy,
         std::optional<std::size_t> budget, std::optional<std::string> system_prompt) {
        return encode_sequence(s, v, policy ? &*policy : nullptr, budget.value_or(kNoBudget),
                               template_options(system_prompt))
            .ids;
      },
      py::arg("sequence"), py::arg("vocab"), py::arg("policy") = py::none(), py::arg("budget") = py::none(),
      py::arg("system_prompt") = py::none());
  m.def("render", [](const std::vector<TokenId>& ids, const Vocabulary& v) { return render(ids, v); });
  m.def("tokenize_rendered", &tokenize_rendered);
  m.def("to_token_text", [](const std::vector<TokenId>& ids, const Vocabulary& v) {
    return to_token_text(ids, v);
  });
  m.def("from_token_text", &from_token_text);
  m.def("is_balanced", [](const std::vector<TokenId>& ids, const Vocabulary& v) { return is_balanced(ids, v); });
  m.def("parse_stream", [](const std::vector<TokenId>& ids, const Vocabulary& v) {
    const ParsedStream ps = parse_stream(std::span<const TokenId>(ids), v);
    py::list items;
    for (const auto& it : ps.items) {
      if (std::holds_alternative<SimilarEventMarker>(it)) {
        items.append(py::str("similar"));
        continue;
      }
      const auto& e = std::get<ParsedEvent>(it);
      py::dict d;
      d["interval"] = e.interval;
      d["type_id"] = e.type_id;
      d["text"] = e.text;
      d["has_image"] = e.has_image;
      items.append(d);
    }
    return items;
  });

  // --- compression ---
  m.def("adaptive_mask", [](const std::vector<double>& taus, double delta) {
    IntervalSeries s;
    s.intervals = taus;
    return mask_names(adaptive_mask(s, delta));
  });
  m.def("random_drop_mask", [](std::size_t n, double p, std::uint64_t seed) {
    return mask_names(random_drop_mask(n, p, seed));
  });
  m.def(
      "make_mask",
      [](const EventSequence& s, const CompressionPolicy& p, std::uint64_t salt) {
        return mask_names(make_mask(s, p, salt));
      },
      py::arg("sequence"), py::arg("policy"), py::arg("salt") = 0);
  m.def("quantile_table", [](std::vector<double> values, std::vector<double> percentiles) {
    return quantile_rows(quantile_table(std::move(values), percentiles));
  });
  m.def("interval_diff_quantiles", [](const std::vector<EventSequence>& seqs) {
    return quantile_rows(interval_diff_quantiles(std::span<const EventSequence>(seqs)));
  });
  m.def(
      "compression_report",
      [](const std::vector<EventSequence>& seqs, const CompressionPolicy& p, std::size_t budget,
         std::optional<std::string> system_prompt) {
        int k = 1;
        for (const auto& s : seqs) k = std::max(k, s.type_count);
        const auto r = compression_report(seqs, p, Vocabulary(k), budget, template_options(system_prompt));
        auto stats = [](const WindowStats& w) {
          py::dict d;
          d["mean_events"] = w.mean_events;
          d["max_events"] = w.max_events;
          d["compression_ratio"] = w.compression_ratio;
          return d;
        };
        py::dict d;
        d["budget"] = r.budget;
        d["uncompressed"] = stats(r.uncompressed);
        d["compressed"] = stats(r.compressed);
        return d;
      },
      py::arg("sequences"), py::arg("policy"), py::arg("budget") = 4096, py::arg("system_prompt") = py::none());

  // --- point process models ---
  py::class_<IntensityModel>(m, "IntensityModel")
      .def_static("poisson", &IntensityModel::poisson)
      .def_static("hawkes", &IntensityModel::hawkes, py::arg("mu"), py::arg("alpha"), py::arg("beta"))
      .def_property_readonly("variant", [](const IntensityModel& im) { return to_string(im.variant); })
      .def_readonly("type_count", &IntensityModel::type_count)
      .def_readonly("base", &IntensityModel::base)
      .def_readonly("excitation", &IntensityModel::excitation)
      .def_readonly("decay", &IntensityModel::decay)
      .def("parameters", &IntensityModel::parameters)
      .def("branching_ratio", &IntensityModel::branching_ratio)
      .def("to_json", [](const IntensityModel& im) { return model_to_json(im).dump(); })
      .def_static("from_json", [](const std::string& s) { return model_from_json(nlohmann::json::parse(s)); });

  m.def("loglik", [](const IntensityModel& im, const EventSequence& s) { return loglik_dict(loglik(im, s)); });
  m.def("loglik_gradient", [](const IntensityModel& im, const EventSequence& s) {
    auto g = loglik_gradient(im, s);
    return py::make_tuple(g.value, g.gradient);
  });
  m.def(
      "fit_mle",
      [](const std::vector<EventSequence>& seqs, const std::string& variant, int max_iters, double grad_tol) {
        FitConfig c;
        c.max_iters = max_iters;
        c.grad_tol = grad_tol;
        FitResult r = fit_mle(seqs, model_variant_from_string(variant), nullptr, c);
        py::dict trace;
        trace["loglik"] = r.trace.loglik;
        trace["iterations"] = r.trace.iterations;
        trace["grad_norm"] = r.trace.grad_norm;
        trace["converged"] = r.trace.converged;
        return py::make_tuple(r.model, trace);
      },
      py::arg("sequences"), py::arg("variant") = "hawkes", py::arg("max_iters") = 5000,
      py::arg("grad_tol") = 1e-7);
  m.def("simulate", &simulate, py::arg("model"), py::arg("horizon"), py::arg("seed"));
  m.def("next_event_predict", [](const IntensityModel& im, const EventSequence& s, std::size_t prefix) {
    auto p = next_event_predict(im, s, prefix);
    return py::make_tuple(p.interval, p.type_id);
  });

  // --- synthetic corpora ---
  m.def(
      "danmaku_corpus",
      [](std::size_t n, std::size_t events, int types, std::uint64_t seed) {
        DanmakuConfig c;
        c.n_sequences = n;
        c.events_per_sequence = events;
        c.type_count = types;
        c.seed = seed;
        return danmaku_corpus(c);
      },
      py::arg("n_sequences"), py::arg("events_per_sequence"), py::arg("type_count") = 8, py::arg("seed"));
  m.def(
      "grammar_corpus",
      [](std::size_t n, std::size_t events, int types) {
        GrammarConfig c;
        c.n_sequences = n;
        c.events_per_sequence = events;
        c.type_count = types;
        return grammar_corpus(c);
      },
      py::arg("n_sequences") = 40, py::arg("events_per_sequence") = 24, py::arg("type_count") = 4);

  // --- taxi ---
  m.def(
      "classify_event",
      [](double lat, double lon, const std::string& kind) {
        if (kind != "pickup" && kind != "dropoff") {
          throw Error(ErrorCode::InvalidArgument, "kind must be 'pickup' or 'dropoff'");
        }
        return classify_event(lat, lon, kind == "pickup" ? TripKind::Pickup : TripKind::Dropoff, RegionScheme{});
      },
      py::arg("lat"), py::arg("lon"), py::arg("kind"));
  m.def("nearest_landmark", [](double lat, double lon) {
    static const Gazetteer g = Gazetteer::builtin();
    const Landmark& l = g.nearest(lat, lon);
    return py::make_tuple(l.name, l.lat, l.lon);
  });
  m.def("render_pickup_text", [](const std::string& name, double lat, double lon, int passengers) {
    return render_pickup_text({name, lat, lon}, passengers);
  });
  m.def("render_dropoff_text", [](const std::string& from, double flat, double flon, const std::string& to,
                                  double tlat, double tlon, int passengers, double miles) {
    return render_dropoff_text({from, flat, flon}, {to, tlat, tlon}, passengers, miles);
  });
  m.def(
      "synthetic_street_raster",
      [](int w, int h, std::array<double, 4> bbox) { return to_array(synthetic_street_raster(w, h, to_bbox(bbox))); },
      py::arg("width"), py::arg("height"), py::arg("bbox") = std::array<double, 4>{-74.03, 40.695, -73.905, 40.88});
  m.def(
      "crop_patch",
      [](const Gray& raster, std::array<double, 4> bbox, double lat, double lon, int size) {
        const GrayImage img = to_image(raster);
        const GeoAffine a = GeoAffine::from_bbox(img.width, img.height, to_bbox(bbox));
        return to_array(crop_patch(img, a, lat, lon, size));
      },
      py::arg("raster"), py::arg("bbox"), py::arg("lat"), py::arg("lon"), py::arg("size") = kPatchSize);
  m.def("histogram_variance", &histogram_variance);
  m.def("select_balanced", &select_balanced, py::arg("histograms"), py::arg("target_count"));
  m.def(
      "build_taxi_sequences",
      [](std::size_t n_trips, std::uint64_t seed, std::size_t target) {
        TaxiBuildOptions o;
        o.target_count = target;
        return build_sequences(synthetic_trips(n_trips, seed), RegionScheme{}, Gazetteer::builtin(), nullptr,
                               nullptr, o)
            .sequences;
      },
      "Synthetic trips through the full pipeline (no patches)", py::arg("n_trips"), py::arg("seed"),
      py::arg("target_count"));

  // --- toy LM and evaluation ---
  py::class_<ToyLMConfig>(m, "ToyLMConfig")
      .def(py::init<>())
      .def_readwrite("vocab_size", &ToyLMConfig::vocab_size)
      .def_readwrite("embed_dim", &ToyLMConfig::embed_dim)
      .def_readwrite("n_layers", &ToyLMConfig::n_layers)
      .def_readwrite("n_heads", &ToyLMConfig::n_heads)
      .def_readwrite("context_len", &ToyLMConfig::context_len)
      .def_readwrite("feature_dim", &ToyLMConfig::feature_dim)
      .def_readwrite("image_pad_token", &ToyLMConfig::image_pad_token)
      .def_readwrite("stage1_lr", &ToyLMConfig::stage1_lr)
      .def_readwrite("stage1_epochs", &ToyLMConfig::stage1_epochs)
      .def_readwrite("stage2_lr", &ToyLMConfig::stage2_lr)
      .def_readwrite("stage2_epochs", &ToyLMConfig::stage2_epochs)
      .def_readwrite("seed", &ToyLMConfig::seed);

  py::class_<ModelParams>(m, "ModelParams")
      .def_static("init", &ModelParams::init)
      .def_readonly("config", &ModelParams::config)
      .def("__len__", [](const ModelParams& p) { return p.values.size(); })
      .def("save", [](const ModelParams& p, const std::filesystem::path& stem) { save_checkpoint(p, stem); })
      .def_static("load", &load_checkpoint);

  m.def("train_stage1", [](const ToyLMConfig& c, const std::vector<std::vector<TokenId>>& corpus) {
    const auto streams = to_streams(corpus);
    TrainResult r = train_stage1(c, streams);
    return py::make_tuple(std::move(r.params), r.epoch_loss);
  });
  m.def(
      "ppl",
      [](const ModelParams& p, const std::vector<std::vector<TokenId>>& streams, std::size_t stride) {
        PplOptions o;
        o.stride = stride;
        return ppl(p, to_streams(streams), o);
      },
      py::arg("params"), py::arg("streams"), py::arg("stride") = 0);
  m.def("rmse", [](const std::vector<double>& pred, const std::vector<double>& truth) {
    auto r = rmse(pred, truth);
    return py::make_tuple(r.rmse, r.n_used, r.n_failed);
  });
  m.def("acc", [](const std::vector<int>& pred, const std::vector<int>& truth) { return acc(pred, truth); });
}
