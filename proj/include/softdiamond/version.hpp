#pragma once

#include <string>

namespace softdiamond {

/// "<project version>+<git describe>", recorded in run manifests.
std::string version_string();

}  // namespace softdiamond
