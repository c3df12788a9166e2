#include "cste/error.hpp"

#include <sstream>

namespace cste {

namespace {
std::string overflow_message(const std::string& module, double eta) {
    std::ostringstream os;
    os.precision(17);
    os << module << ": linear predictor " << eta << " overflows exp() or diverges";
    return os.str();
}
}  // namespace

NumericOverflow::NumericOverflow(const std::string& module, double eta)
    : NumericError(module + ".numeric_overflow", overflow_message(module, eta)), eta_(eta) {}

}  // namespace cste
