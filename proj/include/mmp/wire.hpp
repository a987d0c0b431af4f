#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "mmp/cat7.hpp"
#include "mmp/entry.hpp"

namespace mmp {

inline constexpr std::string_view kFrameType = "cmb";

struct WireFrame {
  std::string type{kFrameType};
  Timestamp timestamp = 0;
  Cmb cmb;
  nlohmann::ordered_json extensions = nlohmann::ordered_json::object();

  bool operator==(const WireFrame&) const = default;
};

struct WireOptions {
  std::size_t dim = kDefaultDim;
  // Decoded vectors must be unit length within this tolerance; they are
  // re-normalized when off by more than 1e-9.
  double unit_tolerance = 1e-3;
};

nlohmann::ordered_json cmb_to_json(const Cmb& cmb);
Cmb cmb_from_json(const nlohmann::ordered_json& j, const WireOptions& opts = {});

// One line of text, no trailing newline.
std::string encode_frame(const Cmb& cmb, Timestamp now);
std::string encode_frame(const WireFrame& frame);
// Throws MalformedFrame or SchemaViolation (detail names the field).
WireFrame decode_frame(std::string_view bytes, const WireOptions& opts = {});

std::string encode_entry(const StoredEntry& e);
// Throws MalformedEntry.
StoredEntry decode_entry(std::string_view bytes, const WireOptions& opts = {});

}  // namespace mmp
