#include <string_view>

#include "mmp/sim.hpp"

namespace mmp::sim {
namespace embedded {
extern const std::string_view echo_loop;
extern const std::string_view restart_recall;
extern const std::string_view role_divergence;
extern const std::string_view write_filter;
}  // namespace embedded

namespace {
Scenario parse(std::string_view text) { return Scenario::from_json(nlohmann::json::parse(text)); }
}  // namespace

Scenario scenario_echo_loop() { return parse(embedded::echo_loop); }
Scenario scenario_restart_recall() { return parse(embedded::restart_recall); }
Scenario scenario_role_divergence() { return parse(embedded::role_divergence); }
Scenario scenario_write_filter() { return parse(embedded::write_filter); }

}  // namespace mmp::sim
