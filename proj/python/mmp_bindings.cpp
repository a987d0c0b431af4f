// Thin Python surface over the core. Structured values cross as JSON text;
// the package __init__ turns them into dicts.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mmp/config.hpp"
#include "mmp/peer.hpp"
#include "mmp/sim.hpp"
#include "mmp/wire.hpp"

namespace py = pybind11;
using json = nlohmann::json;

namespace {

mmp::FieldTexts texts_from(const std::map<std::string, std::string>& fields) {
  mmp::FieldTexts out;
  for (const auto& [name, text] : fields) {
    auto f = mmp::parse_field_name(name);
    if (!f) throw mmp::Error(mmp::ErrorCode::InvalidArgument, "not a CAT7 field", name);
    out[*f] = text;
  }
  return out;
}

mmp::Timestamp now_or(std::optional<mmp::Timestamp> now) { return now ? *now : mmp::wall_clock_ms(); }

class PyStore {
 public:
  PyStore(const std::string& node_id, const std::string& path, const std::string& profile_json,
          const std::string& role, double beta)
      : mem_(mmp::MeshMem::load(make_config(node_id, path, profile_json, role, beta))) {}

  std::string observe(const std::map<std::string, std::string>& fields, double valence, double arousal,
                      const std::string& body_json, std::optional<mmp::Timestamp> now) {
    mmp::Body body;
    if (!body_json.empty()) body = json::parse(body_json);
    return mmp::encode_entry(mem_.observe(texts_from(fields), {valence, arousal}, std::move(body), now_or(now)));
  }

  std::string receive(const std::string& frame, std::optional<mmp::Timestamp> now) {
    const auto f = mmp::decode_frame(frame, mmp::WireOptions{.dim = mem_.config().dim});
    const auto r = mem_.receive(f.cmb, now_or(now));
    json out{{"outcome", std::string(mmp::to_string(r.kind))}};
    if (r.svaf) {
      out["decision"] = std::string(mmp::to_string(r.svaf->decision));
      out["totalDrift"] = r.svaf->total_drift;
    }
    if (r.entry) out["key"] = r.entry->key();
    if (r.echo_of) out["echoOf"] = *r.echo_of;
    return out.dump();
  }

  std::vector<std::string> recall(std::size_t limit, const std::map<std::string, std::string>& query) const {
    std::vector<std::string> out;
    for (const auto& e : mem_.recall(texts_from(query), limit)) out.push_back(mmp::encode_entry(e));
    return out;
  }

  std::string fetch(const std::string& key) const { return mmp::encode_entry(mem_.fetch(key)); }
  std::string frame(const std::string& key, std::optional<mmp::Timestamp> now) const {
    return mmp::encode_frame(mem_.fetch(key).cmb, now_or(now));
  }
  std::size_t size() const { return mem_.size(); }
  std::string digest() const { return mem_.digest(); }
  std::string node_id() const { return mem_.node_id(); }

 private:
  static mmp::StoreConfig make_config(const std::string& node_id, const std::string& path,
                                      const std::string& profile_json, const std::string& role, double beta) {
    mmp::StoreConfig c;
    c.node_id = node_id;
    c.persistence_path = path;
    if (!profile_json.empty()) c.profile = mmp::profile_from_json(json::parse(profile_json));
    c.role_name = role;
    c.beta = beta;
    return c;
  }

  mmp::MeshMem mem_;
};

std::string run_scenario(const std::string& name_or_json) {
  mmp::sim::Scenario s;
  if (name_or_json == "echo_loop") s = mmp::sim::scenario_echo_loop();
  else if (name_or_json == "restart_recall") s = mmp::sim::scenario_restart_recall();
  else if (name_or_json == "role_divergence") s = mmp::sim::scenario_role_divergence();
  else if (name_or_json == "write_filter") s = mmp::sim::scenario_write_filter();
  else s = mmp::sim::Scenario::from_json(json::parse(name_or_json));
  return mmp::sim::run(s).serialize();
}

}  // namespace

PYBIND11_MODULE(_mmp, m) {
  static py::exception<mmp::Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const mmp::Error& e) {
      py::object inst = py::handle(error.ptr())(std::string(e.what()), std::string(mmp::to_string(e.code())), e.detail());
      PyErr_SetObject(error.ptr(), inst.ptr());
    } catch (const json::exception& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def("embed_text", &mmp::embed_text, py::arg("text"), py::arg("dim") = mmp::kDefaultDim);
  m.def("cosine", &mmp::cosine);
  m.def("derive_key", [](const std::map<std::string, std::string>& fields, double valence, double arousal) {
    return mmp::derive_key(mmp::embed_header(texts_from(fields), {valence, arousal}), std::nullopt);
  });
  m.def("classify", [](const std::map<std::string, double>& drifts, const std::map<std::string, double>& alpha,
                       double redundant, double aligned, double guarded) {
    mmp::PerField<double> d{};
    d.fill(-1);
    for (const auto& [name, v] : drifts) {
      auto f = mmp::parse_field_name(name);
      if (!f) throw mmp::Error(mmp::ErrorCode::InvalidArgument, "not a CAT7 field", name);
      d[mmp::index_of(*f)] = v;
    }
    for (double v : d) {
      if (v < 0) throw mmp::Error(mmp::ErrorCode::MissingField, "every field needs a drift");
    }
    auto profile = mmp::RoleProfile::uniform();
    for (const auto& [name, v] : alpha) {
      auto f = mmp::parse_field_name(name);
      if (!f) throw mmp::Error(mmp::ErrorCode::InvalidArgument, "not a CAT7 field", name);
      profile.alpha[mmp::index_of(*f)] = v;
    }
    auto c = mmp::classify(d, profile, mmp::Thresholds{redundant, aligned, guarded});
    return py::make_tuple(std::string(mmp::to_string(c.decision)), c.total_drift);
  }, py::arg("drifts"), py::arg("alpha") = std::map<std::string, double>{}, py::arg("redundant") = 0.10,
     py::arg("aligned") = 0.25, py::arg("guarded") = 0.50);
  m.def("canonical_entry", [](const std::string& text) { return mmp::encode_entry(mmp::decode_entry(text)); });
  m.def("canonical_frame", [](const std::string& text) { return mmp::encode_frame(mmp::decode_frame(text)); });
  m.def("run_scenario", &run_scenario, py::arg("scenario"));

  py::class_<PyStore>(m, "Store")
      .def(py::init<const std::string&, const std::string&, const std::string&, const std::string&, double>(),
           py::arg("node_id"), py::arg("path") = "", py::arg("profile_json") = "", py::arg("role") = "",
           py::arg("beta") = 0.5)
      .def("observe", &PyStore::observe, py::arg("fields"), py::arg("valence") = 0.0, py::arg("arousal") = 0.0,
           py::arg("body_json") = "", py::arg("now") = std::nullopt)
      .def("receive", &PyStore::receive, py::arg("frame"), py::arg("now") = std::nullopt)
      .def("recall", &PyStore::recall, py::arg("limit") = 10,
           py::arg("query") = std::map<std::string, std::string>{})
      .def("fetch", &PyStore::fetch)
      .def("frame", &PyStore::frame, py::arg("key"), py::arg("now") = std::nullopt)
      .def("digest", &PyStore::digest)
      .def_property_readonly("node_id", &PyStore::node_id)
      .def("__len__", &PyStore::size);
}
