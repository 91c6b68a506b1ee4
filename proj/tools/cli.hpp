#pragma once

// The `linecon` command line: validate, synth, build-graph, train, eval,
// predict, gradcheck. Exit codes: 0 success, 1 validation/runtime failure,
// 2 usage error.

#include <string>
#include <vector>

namespace linecon::cli {

inline constexpr const char* kToolVersion = "0.1.0";

int run(const std::vector<std::string>& args);

}  // namespace linecon::cli
