#include "prefopt/csv.hpp"

#include <fmt/format.h>

namespace prefopt::csv {

std::string format_double(double v) { return fmt::format("{}", v); }

}  // namespace prefopt::csv
