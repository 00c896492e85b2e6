#pragma once

#include <string>
#include <vector>

namespace fpbench::cli {

/// Entry point behind the fpbench binary. Exit codes: 0 success,
/// 1 usage error, 2 data/integrity error, 3 upstream/model error.
/// Every run writes a machine-readable summary JSON whose digest covers
/// only result content (never paths), so equal-seed runs are comparable.
int dispatch(const std::vector<std::string>& args);

int dispatch(int argc, const char* const* argv);

}  // namespace fpbench::cli
