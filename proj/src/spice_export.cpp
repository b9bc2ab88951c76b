#include "mpcsim/spice_export.hpp"

#include "mpcsim/errors.hpp"

#include <cstdio>
#include <sstream>

namespace mpcsim {

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string spice_node(const Netlist& net, NodeId n) {
    return n.is_ground() ? "0" : net.node_name(n);
}

} // namespace

std::string export_netlist(const Netlist& netlist, const DutyVector& duties, double f_sw,
                           double dead_time) {
    netlist.validate();
    if (duties.size() != netlist.n_switches && netlist.n_switches > 0)
        throw ValidationError("duty vector size does not match the switch count");
    if (!(f_sw > 0.0)) throw ValidationError("switching frequency must be positive");
    const double period = 1.0 / f_sw;

    std::ostringstream os;
    os << "* " << netlist.n_switches << "-switch multiport converter\n";

    bool any_switch = false, any_diode = false;
    for (const auto& e : netlist.elements) {
        const std::string a = spice_node(netlist, e.a);
        const std::string b = spice_node(netlist, e.b);
        switch (e.kind) {
            case ElementKind::Resistor:
                os << e.id << ' ' << a << ' ' << b << ' ' << num(e.value) << '\n';
                break;
            case ElementKind::Inductor:
                os << e.id << ' ' << a << ' ' << b << ' ' << num(e.value) << '\n';
                break;
            case ElementKind::Capacitor:
                os << e.id << ' ' << a << ' ' << b << ' ' << num(e.value) << '\n';
                break;
            case ElementKind::VoltageSource:
                os << e.id << ' ' << a << ' ' << b << " DC " << num(e.value) << '\n';
                break;
            case ElementKind::CurrentSource:
                os << e.id << ' ' << a << ' ' << b << " DC " << num(e.value) << '\n';
                break;
            case ElementKind::Switch:
                os << e.id << ' ' << a << ' ' << b << " G" << e.switch_index
                   << " 0 SWMOD\n";
                any_switch = true;
                break;
            case ElementKind::Diode:
                os << e.id << ' ' << a << ' ' << b << " DMOD\n";
                any_diode = true;
                break;
        }
    }

    // Gate drives: switch i is held low (off) during its sequential window
    // [t_{i-1}, t_i), extended by the dead time when one is configured.
    if (any_switch) {
        double t_begin = 0.0;
        for (int i = 1; i <= netlist.n_switches; ++i) {
            const double width = duties.of(i) * period;
            if (netlist.find("S" + std::to_string(i)) != nullptr) {
                os << "VG" << i << " G" << i << " 0 PULSE(1 0 " << num(t_begin)
                   << " 1n 1n " << num(width + dead_time) << ' ' << num(period) << ")\n";
            }
            t_begin += width;
        }
        os << ".model SWMOD SW(RON=1m ROFF=1MEG VON=0.6 VOFF=0.4)\n";
    }
    if (any_diode) os << ".model DMOD D(N=0.01)\n";

    os << "* suggested transient: .tran " << num(period / 1000.0) << ' '
       << num(period * 200.0) << '\n';
    os << ".end\n";
    return os.str();
}

} // namespace mpcsim
