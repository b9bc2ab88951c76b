#pragma once

#include "mpcsim/netlist.hpp"
#include "mpcsim/pwm.hpp"

#include <string>

namespace mpcsim {

/// Renders the netlist as SPICE-compatible text. Switches become
/// voltage-controlled switches driven by pulse sources that encode the
/// sequential gate schedule (switch i low during its off window, extended by
/// dead_time when set). Output is a pure function of the inputs: equal
/// inputs produce identical bytes.
std::string export_netlist(const Netlist& netlist, const DutyVector& duties, double f_sw,
                           double dead_time = 0.0);

} // namespace mpcsim
