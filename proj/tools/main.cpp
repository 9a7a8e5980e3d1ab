// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "log3d/commands.hpp"

int main(int argc, char** argv) { return log3d::run_cli(argc, argv, std::cout, std::cerr); }
