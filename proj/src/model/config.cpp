// SPDX-License-Identifier: Apache-2.0
#include "mssm/model/config.hpp"

#include <sstream>

namespace mssm::model {

std::string ModelFlags::label() const {
    if (is_rssm()) return "rssm";
    std::string out = "mssm";
    if (ssp) out += "+ssp";
    if (dmb) out += "+dmb";
    if (mln) out += "+mln";
    if (prompt) out += "+prompt";
    if (combine == Combine::kAdd) out += "(add)";
    return out;
}

void ModelConfig::validate(const world::WorldConfig& world) const {
    auto fail = [](const std::string& what) { throw world::ConfigError("model config: " + what); };
    for (std::size_t d : {D_h, D_s, D_x, C_e, C_b, C_m, C_f, C_u, hidden, prompt_dim, bank_capacity}) {
        if (d < 1) fail("all dimensions must be >= 1");
    }
    if (world.H % 4 != 0 || world.W % 4 != 0) fail("H and W must be multiples of 4");
    if (!(sigma_floor > 0.0)) fail("sigma_floor must be > 0");
    if (flags.ssp && flags.combine == Combine::kAdd && C_m != C_b) fail("additive combine needs C_m == C_b");
}

std::string ModelConfig::canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "D_h=" << D_h << "\nD_s=" << D_s << "\nD_x=" << D_x << "\nC_e=" << C_e << "\nC_b=" << C_b << "\nC_m=" << C_m
       << "\nC_f=" << C_f << "\nC_u=" << C_u << "\nhidden=" << hidden << "\nprompt_dim=" << prompt_dim
       << "\nbank_capacity=" << bank_capacity << "\nsigma_floor=" << sigma_floor << "\nssp=" << flags.ssp
       << "\ndmb=" << flags.dmb << "\nmln=" << flags.mln << "\nprompt=" << flags.prompt
       << "\ncombine=" << (flags.combine == Combine::kAdd ? "add" : "concat") << "\n";
    return os.str();
}

}  // namespace mssm::model
