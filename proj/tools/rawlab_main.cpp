// SPDX-License-Identifier: Apache-2.0
#include "rawlab/cli.hpp"

int main(int argc, char** argv) { return rawlab::cli::run(argc, argv); }
