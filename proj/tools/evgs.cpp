// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

#include "evgs/cli.hpp"

int main(int argc, char **argv) { return evgs::runCli(argc, argv); }
