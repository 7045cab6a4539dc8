#include "softdiamond/version.hpp"

namespace softdiamond {

std::string version_string() { return std::string(SOFTDIAMOND_PROJECT_VERSION) + "+" + SOFTDIAMOND_VERSION; }

}  // namespace softdiamond
