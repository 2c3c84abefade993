// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT
#pragma once

namespace flexc::cli {

// Entry point behind the flexc binary. Exit codes: 0 success, 1 domain
// findings (validation errors, rejected builds, runtime faults), 2 usage,
// I/O or malformed-state problems.
int run(int argc, const char* const* argv);

} // namespace flexc::cli
