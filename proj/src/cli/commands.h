#pragma once

#include <functional>
#include <iosfwd>

#include "hitmdp/cli/cli.h"

namespace hitmdp::cli {

// Validated workflow ready to execute; writes into the resolved out dir.
using Job = std::function<void(std::ostream&)>;

// Reads and range-checks every key. Throws ValidationError.
Job make_job(Subcommand cmd, const nlohmann::json& cfg);

}  // namespace hitmdp::cli
