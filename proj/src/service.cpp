#include "mmp/service.hpp"

#include "mmp/error.hpp"

namespace mmp {
namespace {

using json = nlohmann::json;

FieldTexts texts_from_json(const json& j, const char* field) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "expected an object of field texts", field);
  FieldTexts texts;
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto f = parse_field_name(it.key());
    if (!f) throw Error(ErrorCode::InvalidArgument, "not a CAT7 field", it.key());
    if (!it->is_string()) throw Error(ErrorCode::InvalidArgument, "field text must be a string", it.key());
    texts[*f] = it->get<std::string>();
  }
  return texts;
}

json records(const std::vector<StoredEntry>& entries) {
  json out = json::array();
  for (const auto& e : entries) out.push_back(encode_entry(e));
  return out;
}

}  // namespace

json to_json(const DeliveryReport& report) {
  json out = json::array();
  for (const auto& d : report) {
    json item{{"peer", d.peer}, {"ok", d.ok}};
    if (!d.ok) item["error"] = d.error;
    out.push_back(std::move(item));
  }
  return out;
}

json error_json(ErrorCode code, const std::string& message, const std::string& detail) {
  json err{{"code", std::string(to_string(code))}, {"message", message}};
  if (!detail.empty()) err["detail"] = detail;
  return {{"ok", false}, {"error", std::move(err)}};
}

json handle_request(MeshService& service, const json& request) {
  try {
    if (!request.is_object() || !request.contains("cmd") || !request["cmd"].is_string()) {
      throw Error(ErrorCode::InvalidArgument, "request must be an object with a string cmd", "cmd");
    }
    const auto cmd = request["cmd"].get<std::string>();
    if (cmd == "observe") {
      const auto texts = texts_from_json(request.value("fields", json::object()), "fields");
      Mood mood;
      if (auto it = request.find("mood"); it != request.end()) {
        if (!it->is_object()) throw Error(ErrorCode::InvalidArgument, "mood must be an object", "mood");
        mood.valence = it->value("valence", 0.0);
        mood.arousal = it->value("arousal", 0.0);
      }
      Body body;
      if (auto it = request.find("body"); it != request.end() && !it->is_null()) body = *it;
      std::optional<NodeId> to;
      if (auto it = request.find("to"); it != request.end() && it->is_string()) to = it->get<std::string>();
      auto r = service.observe(texts, mood, std::move(body), to);
      return {{"ok", true}, {"key", r.entry.key()}, {"delivery", to_json(r.delivery)}};
    }
    if (cmd == "recall") {
      const auto limit = request.value("limit", 10);
      if (limit < 1) throw Error(ErrorCode::InvalidArgument, "limit must be at least 1", "limit");
      FieldTexts query;
      if (auto it = request.find("query"); it != request.end()) query = texts_from_json(*it, "query");
      return {{"ok", true}, {"records", records(service.recall(query, static_cast<std::size_t>(limit)))}};
    }
    if (cmd == "fetch") {
      if (!request.contains("key") || !request["key"].is_string()) {
        throw Error(ErrorCode::InvalidArgument, "fetch needs a key", "key");
      }
      return {{"ok", true}, {"record", encode_entry(service.fetch(request["key"].get<std::string>()))}};
    }
    if (cmd == "peers") {
      json table = json::array();
      for (const auto& p : service.peers()) table.push_back(to_json(p));
      return {{"ok", true}, {"peers", std::move(table)}};
    }
    if (cmd == "status") {
      auto s = service.status();
      s["ok"] = true;
      return s;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown command", cmd);
  } catch (const Error& e) {
    return error_json(e.code(), e.what(), e.detail());
  } catch (const std::exception& e) {
    return error_json(ErrorCode::InvalidArgument, e.what());
  }
}

}  // namespace mmp
