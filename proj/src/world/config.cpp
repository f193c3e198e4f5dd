// SPDX-License-Identifier: Apache-2.0
#include "mssm/world/config.hpp"

#include <sstream>

#include "mssm/common/digest.hpp"

namespace mssm::world {

void WorldConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("world config: " + what); };
    if (H < 8 || W < 8) fail("H and W must be >= 8");
    if (Z < 1) fail("Z must be >= 1");
    if (C != kClassCount) fail("C must be 3 (free, static, dynamic)");
    if (T < 1) fail("T must be >= 1");
    if (!(noise >= 0.0 && noise < 0.5)) fail("noise must lie in [0, 0.5)");
    if (!(ego_speed_min >= 0.0 && ego_speed_min <= ego_speed_max)) fail("need 0 <= ego_speed_min <= ego_speed_max");
    if (!(steer_max >= 0.0)) fail("steer_max must be >= 0");
    if (!(turn_prob >= 0.0 && turn_prob <= 1.0)) fail("turn_prob must lie in [0, 1]");
    if (!(occlusion_radius >= 0.0)) fail("occlusion_radius must be >= 0");
}

std::string WorldConfig::canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "H=" << H << "\nW=" << W << "\nZ=" << Z << "\nC=" << C << "\nn_agents=" << n_agents
       << "\nn_obstacles=" << n_obstacles << "\nego_speed_min=" << ego_speed_min << "\nego_speed_max=" << ego_speed_max
       << "\nsteer_max=" << steer_max << "\nturn_prob=" << turn_prob << "\nocclusion_radius=" << occlusion_radius
       << "\nnoise=" << noise << "\nT=" << T << "\nL=" << L << "\n";
    return os.str();
}

std::string WorldConfig::fingerprint() const { return common::sha256_hex(canonical()); }

}  // namespace mssm::world
