#include "sbcq/drivesim/env.hpp"

#include <stdexcept>

#include "sbcq/drivesim/highway.hpp"
#include "sbcq/drivesim/parking.hpp"

namespace sbcq::drivesim {

void Env::check_steppable() const {
  if (!started_) throw std::logic_error(std::string(id()) + ": step before reset");
  if (done_) throw std::logic_error(std::string(id()) + ": step after episode end");
}

const std::vector<std::string>& env_ids() {
  static const std::vector<std::string> ids{"highway", "parking"};
  return ids;
}

std::unique_ptr<Env> make_env(std::string_view id, const nlohmann::json& config) {
  if (id == "highway") {
    nlohmann::json merged = HighwayConfig{};
    merged.update(config.is_null() ? nlohmann::json::object() : config);
    return std::make_unique<HighwayEnv>(merged.get<HighwayConfig>());
  }
  if (id == "parking") {
    nlohmann::json merged = ParkingConfig::defaults();
    merged.update(config.is_null() ? nlohmann::json::object() : config);
    return std::make_unique<ParkingEnv>(merged.get<ParkingConfig>());
  }
  throw std::invalid_argument("unknown env '" + std::string(id) + "' (expected highway or parking)");
}

}  // namespace sbcq::drivesim
