// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT
#include "flexc/cli.hpp"

int main(int argc, char** argv) { return flexc::cli::run(argc, argv); }
